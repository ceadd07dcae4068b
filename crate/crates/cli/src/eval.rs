//! `eval`: scores a saved train state, or the true mixture, against a dataset
//! directory and writes a one-row metrics CSV.

use stein_bridge::models::{EnergyModel, Generator};
use stein_bridge::numkit::RngStream;
use stein_bridge::trainer::Evaluator;

use crate::config::{config_hash, EvalRunConfig};
use crate::data::load;
use crate::output::{fmt_f64, CsvOut, Meta};
use crate::train::{eval_spec, read_state, METRICS_HEADER};
use crate::CliError;

pub fn cmd_eval(config: &EvalRunConfig) -> Result<(), CliError> {
    let meta = Meta::new("eval", config_hash(config), config.seed);
    let dataset = load(&config.dataset)?;
    let spec = eval_spec(&dataset, config.eval.as_ref());
    let evaluator = Evaluator::new(dataset.truth.clone(), dataset.heldout.clone(), spec, config.seed)?;

    let (iteration, (mmd, hsr), (kld, jsd, auc)) = match (&config.checkpoint, config.oracle) {
        (Some(_), true) => return Err(CliError::Config("give either a checkpoint or oracle, not both".into())),
        (None, false) => return Err(CliError::Config("a checkpoint is required unless oracle is set".into())),
        (None, true) => {
            let mut rng = RngStream::derive_from(config.seed, "eval/0/samples");
            let x = dataset.truth.sample(evaluator.spec().n_generated, &mut rng)?;
            (0, evaluator.metrics_of_samples(&x)?, evaluator.density_metrics(&dataset.truth, 0)?)
        }
        (Some(path), false) => {
            let ck = read_state(path)?;
            let generator = Generator::from_checkpoint(&ck.generator)?;
            let energy = EnergyModel::from_checkpoint(&ck.energy)?;
            let it = ck.iteration;
            (
                it,
                evaluator.sample_metrics(&generator, it)?,
                evaluator.density_metrics(&energy, it)?,
            )
        }
    };

    if let Some(parent) = config.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    let mut out = CsvOut::create(&config.out, &meta, &METRICS_HEADER)?;
    out.row([
        iteration.to_string(),
        fmt_f64(mmd),
        fmt_f64(hsr),
        fmt_f64(kld),
        fmt_f64(jsd),
        fmt_f64(auc),
    ])?;
    out.finish()?;
    eprintln!("mmd {mmd:.4} hsr {hsr:.4} kld {kld:.4} jsd {jsd:.4} auc {auc:.4}");
    Ok(())
}
