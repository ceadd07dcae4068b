//! One test per acceptance criterion. Each writes a single `criterion N ... PASS|FAIL`
//! line straight to stderr so the verdicts show even when output is captured.

use std::io::Write;
use std::time::{Duration, Instant};

use stein_bridge::autodiff::{grad_params, Activation, Graph, MlpSpec, OutputActivation, ParamStore, Smoothness, Var};
use stein_bridge::convlab::{
    run_zoo, svd_reduction_gap, verify_prop1, verify_thm3, verify_thm4, BilinearState, BilinearSystem, BridgeOrder,
    QuadGame, ZooSpec,
};
use stein_bridge::discrepancy::{
    divergence_graph, interpolate, js_disc_objective_graph, js_gen_loss_graph, ksd_graph, ksd_u_stat,
    stein_operator_graph, wasserstein_objective_graph, GpConfig, KsdForm,
};
use stein_bridge::metrics::{density_auc, grid_divergences, hsr, mmd, AucSpec, GridSpec, LogDensity};
use stein_bridge::models::{CriticMode, EnergyModel, Generator, NoiseKind, SteinCriticNet, WassersteinCritic};
use stein_bridge::numkit::matrix::sq_dist;
use stein_bridge::numkit::{Matrix, RbfKernel, RngStream};
use stein_bridge::synthdata::two_circle_mixture;
use stein_bridge::trainer::{EvalSpec, Evaluator, GanBaseline, KsdDemBaseline, Lambda2Schedule, TrainConfig, Trainer, Variant};
use stein_bridge::Result;

fn report(n: u32, name: &str, passed: bool, details: &str) {
    let verdict = if passed { "PASS" } else { "FAIL" };
    let line = format!("criterion {n} ({name}): {verdict} | {details}\n");
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t = Instant::now();
    let v = f();
    (v, t.elapsed())
}

#[test]
fn criterion_1_bridge_rate() {
    let etas: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
    let (r, dt) = timed(|| verify_prop1(&etas, 10, 10_000, BridgeOrder::CriticFirst, 1).unwrap());
    let worst = r
        .rows
        .iter()
        .map(|row| row.max_ratio - row.bound)
        .fold(f64::NEG_INFINITY, f64::max);
    let max_final = r.rows.iter().map(|row| row.max_final_distance).fold(0.0, f64::max);
    let ok = r.passed() && dt < Duration::from_secs(1);
    let violating: Vec<String> = r.rows.iter().filter(|row| !row.bound_holds).map(|row| format!("{}", row.eta)).collect();
    let violating = violating.join(" ");
    report(
        1,
        "bridge per-step rate",
        ok,
        &format!(
            "bound holds {} (violated at eta [{}], worst excess {worst:.3e}); converged {} (max final distance {max_final:.2e}); {:.3}s",
            r.bound_holds(),
            violating,
            r.converged(),
            dt.as_secs_f64()
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_2_dynamics_zoo() {
    let (r, dt) = timed(|| run_zoo(&ZooSpec::default()).0);
    let ok = r.as_expected() && dt < Duration::from_secs(1);
    report(
        2,
        "1-D dynamics zoo",
        ok,
        &format!(
            "wgan min fraction {:.3}; reg(-0.5) error {:.2e}; reg(+0.5) blow-up at step {:?}; annealed window fraction {:.3}, final distance {:.3}; {:.3}s",
            r.wgan_min_fraction,
            r.reg_likelihood_error,
            r.reg_entropy_blowup_step,
            r.anneal_window_fraction,
            r.anneal_final_distance,
            dt.as_secs_f64()
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_3_affiliated_bilinear() {
    let (results, dt) = timed(|| {
        let mut rows = Vec::new();
        for i in 0..20 {
            let r = 1 + i % 5;
            let mut rng = RngStream::derive_from(3, &format!("acceptance/thm4/{i}"));
            let sys = BilinearSystem::random(r, 0.5, 2.0, 1.0, &mut rng).unwrap();
            let start = BilinearState::random(r, 2.0, &mut rng);
            let sigma_max = sys.svd().unwrap().singular_values[0];
            let eta = 0.5 / sigma_max;
            let rep = verify_thm4(&sys, &start, eta, 100_000).unwrap();
            let gap = svd_reduction_gap(&sys, &start, eta, 1000).unwrap();
            rows.push((rep, gap));
        }
        rows
    });
    let max_final = results.iter().map(|(r, _)| r.final_distance).fold(0.0, f64::max);
    let max_gap = results.iter().map(|(_, g)| *g).fold(0.0, f64::max);
    let rate_ok = results.iter().all(|(r, _)| r.passed());
    let tight = results.iter().filter(|(r, _)| r.min_max_holds && r.max_min_holds).count();
    let ok = max_final < 1e-6 && max_gap < 1e-10 && rate_ok && dt < Duration::from_secs(5);
    report(
        3,
        "affiliated bilinear convergence",
        ok,
        &format!(
            "max final distance {max_final:.2e}; max reduction gap {max_gap:.2e}; rate within the better reading {rate_ok} (both readings {tight}/20); {:.3}s",
            dt.as_secs_f64()
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_4_projected_contraction() {
    let (reports, dt) = timed(|| {
        (0..10)
            .map(|i| {
                let mut rng = RngStream::derive_from(4, &format!("acceptance/thm3/{i}"));
                let mu = rng.uniform_range(0.2, 5.0);
                let game = QuadGame::random(3, mu, &mut rng).unwrap();
                let start: Vec<f64> = (0..9).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
                verify_thm3(&game, &start, 200).unwrap()
            })
            .collect::<Vec<_>>()
    });
    let max_ratio = reports.iter().map(|r| r.max_ratio).fold(0.0, f64::max);
    let ok = reports.iter().all(|r| r.passed() && (r.factor - 0.5).abs() < 1e-12) && dt < Duration::from_secs(1);
    report(
        4,
        "projected alternating contraction",
        ok,
        &format!("10 games, max per-step ratio {max_ratio:.4} vs factor 0.5; {:.3}s", dt.as_secs_f64()),
    );
    assert!(ok);
}

/// `‖analytic − central difference‖∞ / ‖central difference‖∞` over all parameters.
fn fd_error<F>(params: &ParamStore, smoothness: Smoothness, build: F) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let (_, analytic) = grad_params(params, smoothness, &build).unwrap();
    let value = |p: &ParamStore| {
        let mut g = Graph::with_smoothness(smoothness);
        let vars = p.to_graph(&mut g);
        let out = build(&mut g, &vars).unwrap();
        g.value(out).item()
    };
    let h = 1e-5;
    let mut fd = Vec::with_capacity(params.len());
    for k in 0..params.len() {
        let mut p = params.clone();
        p.values_mut()[k] += h;
        let up = value(&p);
        p.values_mut()[k] -= 2.0 * h;
        let down = value(&p);
        fd.push((up - down) / (2.0 * h));
    }
    let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-8);
    analytic.iter().zip(&fd).map(|(a, f)| (a - f).abs()).fold(0.0, f64::max) / scale
}

fn spec(widths: Vec<usize>, act: Activation) -> MlpSpec {
    MlpSpec::uniform(widths, act, OutputActivation::Identity).unwrap()
}

#[test]
fn criterion_5_gradient_correctness() {
    let (errors, dt) = timed(|| {
        let mut errors: Vec<(&str, f64)> = Vec::new();
        for seed in 0..8u64 {
            let mut rng = RngStream::derive_from(seed, "acceptance/gradients");
            let x = rng.normal_matrix(6, 2).scale(2.0);
            let y = rng.normal_matrix(6, 2).scale(2.0);
            let z = rng.normal_matrix(6, 3);
            let kernel = RbfKernel::median_heuristic(&x).unwrap();
            let leaky = Activation::LeakyRelu(0.2);
            let critic = WassersteinCritic::init(spec(vec![2, 6, 6, 1], leaky), CriticMode::Wasserstein, &mut rng).unwrap();
            let disc = WassersteinCritic::init(spec(vec![2, 6, 1], Activation::Tanh), CriticMode::Js, &mut rng).unwrap();
            let energy = EnergyModel::init(spec(vec![2, 6, 6, 3], Activation::Tanh), 3, &mut rng).unwrap();
            let f = SteinCriticNet::init(spec(vec![2, 6, 2], Activation::Softplus), &mut rng).unwrap();
            let gen = Generator::init(spec(vec![3, 6, 6, 2], Activation::Tanh), NoiseKind::StandardNormal, &mut rng);
            let x_hat = interpolate(&x, &y, &mut rng).unwrap();
            let gp = GpConfig::new(10.0).unwrap();

            errors.push((
                "critic with gradient penalty",
                fd_error(&critic.params, Smoothness::PiecewiseConstant, |g, v| {
                    let (xr, xf, xh) = (g.leaf(x.clone()), g.leaf(y.clone()), g.leaf(x_hat.clone()));
                    wasserstein_objective_graph(g, &critic, v, xr, xf, xh, gp)
                }),
            ));
            errors.push((
                "js discriminator",
                fd_error(&disc.params, Smoothness::Strict, |g, v| {
                    let (xr, xf) = (g.leaf(x.clone()), g.leaf(y.clone()));
                    let dr = disc.forward_graph(g, v, xr)?;
                    let df = disc.forward_graph(g, v, xf)?;
                    js_disc_objective_graph(g, dr, df)
                }),
            ));
            let f_vals = f.value(&x).unwrap();
            errors.push((
                "energy through its score (KSD)",
                fd_error(&energy.params, Smoothness::Strict, |g, v| {
                    let xv = g.leaf(x.clone());
                    let s = energy.score_graph(g, v, xv)?;
                    ksd_graph(g, s, xv, &kernel, KsdForm::U)
                }),
            ));
            errors.push((
                "energy through its score (neural Stein)",
                fd_error(&energy.params, Smoothness::Strict, |g, v| {
                    let xv = g.leaf(x.clone());
                    let s = energy.score_graph(g, v, xv)?;
                    let fv = g.leaf(f_vals.clone());
                    let fx = g.leaf(x.clone());
                    let fo = {
                        let fvars = f.params.to_graph(g);
                        f.forward_graph(g, &fvars, fx)?
                    };
                    let div = divergence_graph(g, fo, fx)?;
                    let op = stein_operator_graph(g, s, fv, div)?;
                    Ok(g.mean(op))
                }),
            ));
            let score = energy.score(&x).unwrap();
            errors.push((
                "stein critic through its divergence",
                fd_error(&f.params, Smoothness::Strict, |g, v| {
                    let xv = g.leaf(x.clone());
                    let sv = g.leaf(score.clone());
                    let fo = f.forward_graph(g, v, xv)?;
                    let div = divergence_graph(g, fo, xv)?;
                    let op = stein_operator_graph(g, sv, fo, div)?;
                    Ok(g.mean(op))
                }),
            ));
            let gen_kernel = RbfKernel::median_heuristic(&gen.forward(&z).unwrap()).unwrap();
            errors.push((
                "generator through critic and KSD",
                fd_error(&gen.params, Smoothness::PiecewiseConstant, |g, v| {
                    let zv = g.leaf(z.clone());
                    let xg = gen.forward_graph(g, v, zv)?;
                    let cv = critic.params.to_graph(g);
                    let d = critic.forward_graph(g, &cv, xg)?;
                    let m = g.mean(d);
                    let base = g.neg(m);
                    let ev = energy.params.to_graph(g);
                    let s = energy.score_graph(g, &ev, xg)?;
                    let k = ksd_graph(g, s, xg, &gen_kernel, KsdForm::U)?;
                    let k = g.scale(k, 0.7);
                    g.add(base, k)
                }),
            ));
            errors.push((
                "generator through neural Stein term",
                fd_error(&gen.params, Smoothness::Strict, |g, v| {
                    let zv = g.leaf(z.clone());
                    let xg = gen.forward_graph(g, v, zv)?;
                    let ev = energy.params.to_graph(g);
                    let s = energy.score_graph(g, &ev, xg)?;
                    let fvars = f.params.to_graph(g);
                    let fo = f.forward_graph(g, &fvars, xg)?;
                    let div = divergence_graph(g, fo, xg)?;
                    let op = stein_operator_graph(g, s, fo, div)?;
                    Ok(g.mean(op))
                }),
            ));
            errors.push((
                "generator through js discriminator",
                fd_error(&gen.params, Smoothness::Strict, |g, v| {
                    let zv = g.leaf(z.clone());
                    let xg = gen.forward_graph(g, v, zv)?;
                    let dv = disc.params.to_graph(g);
                    let d = disc.forward_graph(g, &dv, xg)?;
                    Ok(js_gen_loss_graph(g, d))
                }),
            ));
        }
        errors
    });
    let worst = errors.iter().cloned().fold(("", 0.0), |w, e| if e.1 > w.1 { e } else { w });
    let ok = errors.len() >= 50 && worst.1 < 1e-4 && dt < Duration::from_secs(30);
    report(
        5,
        "gradient correctness",
        ok,
        &format!(
            "{} instances over 8 loss paths, worst relative error {:.2e} ({}); {:.2}s",
            errors.len(),
            worst.1,
            worst.0,
            dt.as_secs_f64()
        ),
    );
    assert!(ok);
}

/// Distinct-pair double loop with the Gaussian Stein kernel written out by hand.
fn ksd_double_loop(score: &Matrix, x: &Matrix, h: f64) -> f64 {
    let (n, d) = x.shape();
    let h2 = h * h;
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let mut r2 = 0.0;
            let mut ss = 0.0;
            let mut cross = 0.0;
            for c in 0..d {
                let diff = x.get(i, c) - x.get(j, c);
                r2 += diff * diff;
                ss += score.get(i, c) * score.get(j, c);
                cross += (score.get(i, c) - score.get(j, c)) * diff;
            }
            let k = (-r2 / (2.0 * h2)).exp();
            total += k * (ss + cross / h2 + d as f64 / h2 - r2 / (h2 * h2));
        }
    }
    total / (n * (n - 1)) as f64
}

#[test]
fn criterion_6_ksd_oracle() {
    let mut max_err = 0.0f64;
    for (i, n) in [2usize, 5, 17, 40, 64].into_iter().enumerate() {
        let mut rng = RngStream::derive_from(6, &format!("acceptance/ksd/{i}"));
        let x = rng.normal_matrix(n, 2).scale(1.5);
        let s = rng.normal_matrix(n, 2);
        let h = rng.uniform_range(0.3, 2.0);
        let fast = ksd_u_stat(&s, &x, &RbfKernel::new(h).unwrap()).unwrap();
        max_err = max_err.max((fast - ksd_double_loop(&s, &x, h)).abs());
    }
    let estimates: Vec<f64> = (0..20u64)
        .map(|seed| {
            let mut rng = RngStream::derive_from(seed, "acceptance/ksd/normal");
            let x = rng.normal_matrix(500, 1);
            let score = x.scale(-1.0);
            ksd_u_stat(&score, &x, &RbfKernel::median_heuristic(&x).unwrap()).unwrap()
        })
        .collect();
    let mean = estimates.iter().sum::<f64>() / 20.0;
    let var = estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / 19.0;
    let se = (var / 20.0).sqrt();
    let ok = max_err < 1e-12 && mean.abs() <= 3.0 * se;
    report(
        6,
        "KSD oracle equivalence",
        ok,
        &format!("max |fast - double loop| {max_err:.2e}; normal self-test mean {mean:.3e}, 3 SE {:.3e}", 3.0 * se),
    );
    assert!(ok);
}

struct Offset<'a>(&'a EnergyModel, f64);

impl LogDensity for Offset<'_> {
    fn log_density_unnormalized(&self, x: &Matrix) -> Result<Vec<f64>> {
        Ok(self.0.energy(x)?.into_iter().map(|e| -(e + self.1)).collect())
    }
}

#[test]
fn criterion_7_metric_identities() {
    let truth = two_circle_mixture();
    let mut rng = RngStream::derive_from(7, "acceptance/metrics");
    let x = truth.sample(300, &mut rng).unwrap();
    let self_mmd = mmd(&x, &x, &RbfKernel::median_heuristic(&x).unwrap()).unwrap();

    let energy = EnergyModel::init(EnergyModel::default_spec(), 4, &mut rng).unwrap();
    let grid = GridSpec::two_circle();
    let (k0, j0) = grid_divergences(&truth, &energy, &grid).unwrap();
    let (k1, j1) = grid_divergences(&truth, &Offset(&energy, 7.0), &grid).unwrap();
    let shift = (k0 - k1).abs().max((j0 - j1).abs());

    let auc = density_auc(&truth, &truth, &AucSpec::for_mixture(&truth), &mut rng).unwrap();
    let at_means = hsr(truth.means(), &truth, 0.2).unwrap();

    let ok = self_mmd == 0.0 && shift < 1e-10 && auc >= 0.95 && at_means == 1.0;
    report(
        7,
        "metric identities",
        ok,
        &format!("mmd(X,X) {self_mmd:e}; KLD/JSD change under E+7 {shift:.2e}; oracle AUC {auc:.4}; hsr at means {at_means}"),
    );
    assert!(ok);
}

#[test]
fn criterion_8_end_to_end_training() {
    let truth = two_circle_mixture();
    let seed = 8;
    let data = truth.sample(2000, &mut RngStream::derive_from(seed, "data/train")).unwrap();
    let heldout = truth.sample(2000, &mut RngStream::derive_from(seed, "data/heldout")).unwrap();
    let config = TrainConfig::new(Variant::WKsd, 5000, seed);
    let eval = Evaluator::new(truth.clone(), heldout, EvalSpec::two_circle(&truth), seed).unwrap();

    let t0 = Instant::now();
    let mut trainer = Trainer::new(config, data).unwrap();
    let (mmd0, _) = eval.sample_metrics(&trainer.models.generator, 0).unwrap();
    let (kld0, _, _) = eval.density_metrics(&trainer.models.energy, 0).unwrap();
    trainer.run(|_, _| Ok(())).unwrap();
    let it = trainer.iteration();
    let (mmd1, _) = eval.sample_metrics(&trainer.models.generator, it).unwrap();
    let (kld1, _, _) = eval.density_metrics(&trainer.models.energy, it).unwrap();

    let draws = trainer
        .models
        .generator
        .generate(2000, &mut RngStream::derive_from(seed, "acceptance/coverage"))
        .unwrap();
    let radius2 = 9.0 * truth.variance();
    let covered = truth
        .means()
        .row_iter()
        .filter(|mu| draws.row_iter().any(|x| sq_dist(x, mu) < radius2))
        .count();
    let dt = t0.elapsed();

    let mmd_ok = mmd1 * 10.0 <= mmd0;
    let cover_ok = covered == truth.n_components();
    let kld_ok = kld1 * 5.0 <= kld0;
    let ok = mmd_ok && cover_ok && kld_ok && dt < Duration::from_secs(1800);
    report(
        8,
        "end-to-end W+KSD training",
        ok,
        &format!(
            "(a) MMD {mmd0:.4} -> {mmd1:.4}, ratio {:.2} [{}]; (b) modes covered {covered}/{} [{}]; (c) KLD {kld0:.3} -> {kld1:.3}, ratio {:.2} [{}]; {:.0}s",
            mmd0 / mmd1,
            if mmd_ok { "pass" } else { "fail" },
            truth.n_components(),
            if cover_ok { "pass" } else { "fail" },
            kld0 / kld1,
            if kld_ok { "pass" } else { "fail" },
            dt.as_secs_f64()
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_9_ablation_reductions() {
    let truth = two_circle_mixture();
    let data = truth.sample(2000, &mut RngStream::derive_from(9, "data/train")).unwrap();
    let steps = 5;

    let mut gan_identical = true;
    for variant in [Variant::WSteinNet, Variant::WKsd, Variant::JsKsd, Variant::JsSteinNet] {
        let mut c = TrainConfig::new(variant, steps, 9);
        c.lambda1 = 0.0;
        c.lambda2 = Lambda2Schedule::constant(0.0);
        let mut joint = Trainer::new(c.clone(), data.clone()).unwrap();
        let mut base = GanBaseline::new(&c, data.clone()).unwrap();
        for _ in 0..steps {
            let rec = joint.step().unwrap();
            let (l_dis, l_gen) = base.step().unwrap();
            gan_identical &= rec.losses.l_dis.to_bits() == l_dis.to_bits()
                && rec.losses.l_gen.to_bits() == l_gen.to_bits()
                && joint.models.generator.params == base.generator.params
                && joint.models.critic.params == base.critic.params;
        }
    }

    let mut est_identical = true;
    for variant in [Variant::WKsd, Variant::JsKsd] {
        let mut c = TrainConfig::new(variant, steps, 9);
        c.lambda2 = Lambda2Schedule::constant(0.0);
        let mut joint = Trainer::new(c.clone(), data.clone()).unwrap();
        let mut base = KsdDemBaseline::new(&c, data.clone()).unwrap();
        for _ in 0..steps {
            let rec = joint.step().unwrap();
            let l = base.step().unwrap();
            est_identical &= rec.losses.l_est.to_bits() == l.to_bits() && joint.models.energy.params == base.energy.params;
        }
    }

    let ok = gan_identical && est_identical;
    report(
        9,
        "ablation reductions",
        ok,
        &format!(
            "zero weights vs GAN baseline bit-identical {gan_identical} (4 variants); zero bridge estimator vs KSD-DEM bit-identical {est_identical} ({steps} steps)"
        ),
    );
    assert!(ok);
}
