use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_stein-bridge");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn data_rows(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(String::from)
        .collect()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn make_data(dir: &Path, seed: &str) -> PathBuf {
    let out = dir.join(format!("data-{seed}"));
    let r = run(&[
        "data",
        "--seed",
        seed,
        "--out",
        p(&out),
        "--set",
        "dataset.kind=two_circle",
        "--set",
        "dataset.n=300",
        "--set",
        "dataset.heldout=400",
    ]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    out
}

fn train_config(dir: &Path, data: &Path, extra: &str) -> PathBuf {
    let path = dir.join("train.toml");
    let text = format!(
        "dataset = {:?}\nout_dir = {:?}\n{extra}\n[train]\nvariant = \"w_ksd\"\niterations = 12\neval_every = 6\n\
         checkpoint_every = 6\nseed = 9\nbatch_size = 32\nn_d = 2\nn_c = 2\nlog_wall_clock = false\n\
         [eval]\nn_generated = 300\nhsr_multiplier = 1.0\ngrid = {{ x_range = [-11.0, 11.0], y_range = [-11.0, 11.0], resolution = 40 }}\n\
         auc = {{ negatives_per_center = 5, radius = 1.3 }}\n",
        p(data),
        p(&dir.join("run")),
    );
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn data_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let a = make_data(&dir.path().join("a"), "4");
    let b = make_data(&dir.path().join("b"), "4");
    let c = make_data(dir.path(), "5");
    for f in ["train.csv", "heldout.csv"] {
        assert_eq!(data_rows(&a.join(f)), data_rows(&b.join(f)));
        assert_ne!(data_rows(&a.join(f)), data_rows(&c.join(f)));
    }
    let text = std::fs::read_to_string(a.join("train.csv")).unwrap();
    let first = text.lines().next().unwrap();
    assert!(first.starts_with("# stein-bridge ") && first.contains("command=data") && first.ends_with("seed=4"));
    assert_eq!(data_rows(&a.join("train.csv")).len(), 301);
    assert_eq!(json(&a.join("dataset.json"))["meta"]["seed"], 4);
}

#[test]
fn train_resume_and_eval() {
    let dir = tempfile::tempdir().unwrap();
    let data = make_data(dir.path(), "1");
    let cfg = train_config(dir.path(), &data, "");
    let r = run(&["train", "-c", p(&cfg)]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let run_dir = dir.path().join("run");
    let log = data_rows(&run_dir.join("log.csv"));
    assert_eq!(log[0], "iteration,l_dis,l_critic,l_est,l_gen,lambda2,wall_clock_s");
    assert_eq!(log.len(), 13);
    assert!(log[1].starts_with("1,") && log[1].ends_with(','));
    let metrics = data_rows(&run_dir.join("metrics.csv"));
    let its: Vec<&str> = metrics[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(its, ["0", "6", "12"]);

    // Resuming from the midpoint reproduces the second half exactly.
    let resumed = dir.path().join("resumed");
    let mid = run_dir.join("checkpoints").join("state-00000006.json");
    let r = run(&["train", "-c", p(&cfg), "--out", p(&resumed), "--resume", p(&mid)]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let log2 = data_rows(&resumed.join("log.csv"));
    assert_eq!(log2[1..], log[7..]);
    assert_eq!(json(&resumed.join("state.json"))["state"], json(&run_dir.join("state.json"))["state"]);
    assert_eq!(data_rows(&resumed.join("metrics.csv"))[1..], metrics[3..]);

    // A resumed run must keep its configuration.
    let r = run(&["train", "-c", p(&cfg), "--out", p(&resumed), "--resume", p(&mid), "--set", "train.lambda1=0.5"]);
    assert_eq!(code(&r), 2);

    // Scoring the final state reproduces the last metrics row.
    let out = dir.path().join("eval.csv");
    let state = run_dir.join("state.json");
    let args = ["eval", "--dataset", p(&data), "--checkpoint", p(&state), "--seed", "9", "--out", p(&out)];
    let r = run(&args);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let row = data_rows(&out);
    assert_eq!(row.len(), 2);
    assert_eq!(row[1].split(',').next(), Some("12"));
    let first = std::fs::read(&out).unwrap();
    run(&args);
    assert_eq!(std::fs::read(&out).unwrap(), first);
}

#[test]
fn zero_bridge_joint_log_matches_gan_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let data = make_data(dir.path(), "2");
    let cfg = train_config(dir.path(), &data, "");
    let zero = ["--set", "train.lambda1=0.0", "--set", "train.lambda2={start=0.0,end=0.0}"];
    let joint = dir.path().join("joint");
    let gan = dir.path().join("gan");
    let mut a = vec!["train", "-c", p(&cfg), "--out", p(&joint)];
    a.extend(zero);
    assert_eq!(code(&run(&a)), 0);
    let mut b = vec!["train", "-c", p(&cfg), "--out", p(&gan), "--set", "mode=gan"];
    b.extend(zero);
    assert_eq!(code(&run(&b)), 0);
    let lj = data_rows(&joint.join("log.csv"));
    assert_eq!(lj, data_rows(&gan.join("log.csv")));
    assert!(lj[1..].iter().all(|l| l.split(',').nth(2) == Some("0.0000000000000000e0")));

    let mj = data_rows(&joint.join("metrics.csv"));
    let mg = data_rows(&gan.join("metrics.csv"));
    for (j, g) in mj[1..].iter().zip(&mg[1..]) {
        let (jf, gf): (Vec<&str>, Vec<&str>) = (j.split(',').collect(), g.split(',').collect());
        assert_eq!(jf[..3], gf[..3]);
        assert!(gf[3..].iter().all(|f| f.is_empty()));
    }
}

#[test]
fn ksd_dem_baseline_logs_estimator_only() {
    let dir = tempfile::tempdir().unwrap();
    let data = make_data(dir.path(), "3");
    let cfg = train_config(dir.path(), &data, "mode = \"ksd_dem\"");
    let r = run(&["train", "-c", p(&cfg), "--set", "train.iterations=4"]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let run_dir = dir.path().join("run");
    for row in &data_rows(&run_dir.join("log.csv"))[1..] {
        let f: Vec<&str> = row.split(',').collect();
        assert_eq!(f[1], "0.0000000000000000e0");
        assert_ne!(f[3], "0.0000000000000000e0");
    }
    let m = data_rows(&run_dir.join("metrics.csv"));
    assert!(m[1].starts_with("0,,,"));
    assert!(run_dir.join("energy.json").exists());
    let r = run(&["train", "-c", p(&cfg), "--resume", p(&run_dir.join("energy.json"))]);
    assert_eq!(code(&r), 2);
}

#[test]
fn oracle_scores_the_truth() {
    let dir = tempfile::tempdir().unwrap();
    let data = make_data(dir.path(), "6");
    let out = dir.path().join("oracle.csv");
    let r = run(&["eval", "--dataset", p(&data), "--oracle", "--seed", "1", "--out", p(&out)]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let row = data_rows(&out);
    let f: Vec<f64> = row[1].split(',').map(|v| v.parse().unwrap()).collect();
    assert!(f[3].abs() < 1e-9 && f[4].abs() < 1e-9, "{f:?}");
    assert!(f[5] > 0.99);
    let r = run(&["eval", "--dataset", p(&data), "--seed", "1", "--out", p(&out)]);
    assert_eq!(code(&r), 2);
}

#[test]
fn numerical_abort_writes_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let data = make_data(dir.path(), "7");
    let cfg = train_config(dir.path(), &data, "");
    let adam = "{lr=1e300,beta1=0.5,beta2=0.999,eps=1e-8}";
    let r = run(&[
        "train",
        "-c",
        p(&cfg),
        "--set",
        &format!("train.adam_implicit={adam}"),
        "--set",
        &format!("train.adam_explicit={adam}"),
    ]);
    assert_eq!(code(&r), 3, "{}", String::from_utf8_lossy(&r.stderr));
    let abort = json(&dir.path().join("run").join("abort.json"));
    assert!(abort["error"].as_str().unwrap().contains("non-finite"));
    assert!(abort["state"]["iteration"].is_u64());
}

#[test]
fn convlab_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let ok = dir.path().join("ok");
    let r = run(&["convlab", "--seed", "1", "--out", p(&ok), "--set", "checks=[\"zoo\",\"thm3\"]"]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let s = json(&ok.join("summary.json"));
    assert_eq!(s["passed"], true);
    assert_eq!(s["checks"].as_array().unwrap().len(), 2);
    for f in ["thm3.csv", "trajectory_wgan.csv", "trajectory_anneal.csv", "trajectory_thm3.csv"] {
        assert!(ok.join(f).exists(), "{f}");
    }
    let traj = data_rows(&ok.join("trajectory_wgan.csv"));
    assert_eq!(traj[0], "iteration,psi,theta,dist2,ratio");
    assert!(traj[1].ends_with(','));

    // With no regularization the likelihood-regularized run is plain WGAN and never settles.
    let bad = dir.path().join("bad");
    let r = run(&["convlab", "--seed", "1", "--out", p(&bad), "--set", "checks=[\"zoo\"]", "--set", "zoo.lambda=0.0"]);
    assert_eq!(code(&r), 4);
    assert_eq!(json(&bad.join("summary.json"))["passed"], false);

    let r = run(&["convlab", "--seed", "1", "--out", p(&bad), "--set", "zoo.typo=1"]);
    assert_eq!(code(&r), 2);
    let r = run(&["convlab", "--seed", "1", "--out", p(&bad), "--set", "prop1.etas=[1.5]", "--set", "checks=[\"prop1\"]"]);
    assert_eq!(code(&r), 2);
    let r = run(&["convlab", "--config", p(&dir.path().join("missing.toml"))]);
    assert_eq!(code(&r), 2);
    let r = run(&["frobnicate"]);
    assert_eq!(code(&r), 2);
}
