//! Distances between a sample and a model: kernel and neural Stein
//! discrepancies, the Wasserstein dual with gradient penalty, and GAN losses.
//!
//! Each estimator has a graph builder (used by the trainer, differentiable in
//! whatever produced its inputs) and a plain evaluator built on it.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Smoothness, Var};
use crate::error::{Error, Result};
use crate::models::{SteinCriticNet, WassersteinCritic};
use crate::numkit::{Matrix, RbfKernel, RngStream};

/// Probabilities fed to a logarithm are clamped to `[JS_CLAMP, 1 − JS_CLAMP]`.
pub const JS_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KsdForm {
    /// Mean over ordered pairs `i ≠ j`.
    #[default]
    U,
    /// Mean over all `n²` pairs, diagonal included.
    V,
}

fn require_same_shape(a: (usize, usize), b: (usize, usize), context: &'static str) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch {
            context,
            expected: if a.0 != b.0 { a.0 } else { a.1 },
            found: if a.0 != b.0 { b.0 } else { b.1 },
        });
    }
    Ok(())
}

/// KSD estimate as a 1×1 node, from scores `S` (n×d) at points `X` (n×d).
///
/// Uses the pair function in matrix form:
/// `U = K ∘ [S Sᵀ + (aᵢ + aⱼ − S Xᵀ − X Sᵀ)/h² + d/h² − D/h⁴]`
/// with `aᵢ = sᵢ·xᵢ` and `D` the squared-distance matrix.
pub fn ksd_graph(g: &mut Graph, score: Var, x: Var, kernel: &RbfKernel, form: KsdForm) -> Result<Var> {
    require_same_shape(g.shape(score), g.shape(x), "ksd scores vs points")?;
    let (n, d) = g.shape(x);
    if n < 2 {
        return Err(Error::InvalidArgument(format!("KSD needs at least 2 points, got {n}")));
    }
    let h2 = kernel.h2();

    let gram = g.matmul_t(x, x, false, true)?;
    let xx = g.square(x);
    let norms = g.sum_cols(xx);
    let nc = g.broadcast_cols(norms, n)?;
    let nt = g.transpose(norms);
    let nr = g.broadcast_rows(nt, n)?;
    let two_gram = g.scale(gram, 2.0);
    let dist = g.add(nc, nr)?;
    let dist = g.sub(dist, two_gram)?;
    let k = g.scale(dist, -1.0 / (2.0 * h2));
    let k = g.exp(k);

    let ss = g.matmul_t(score, score, false, true)?;
    let sx = g.matmul_t(score, x, false, true)?;
    let xs = g.transpose(sx);
    let sxd = g.mul(score, x)?;
    let a = g.sum_cols(sxd);
    let ac = g.broadcast_cols(a, n)?;
    let at = g.transpose(a);
    let ar = g.broadcast_rows(at, n)?;
    let cross = g.add(ac, ar)?;
    let cross = g.sub(cross, sx)?;
    let cross = g.sub(cross, xs)?;
    let cross = g.scale(cross, 1.0 / h2);
    let dist_term = g.scale(dist, -1.0 / (h2 * h2));

    let inner = g.add(ss, cross)?;
    let inner = g.add(inner, dist_term)?;
    let inner = g.add_scalar(inner, d as f64 / h2);
    let u = g.mul(k, inner)?;

    Ok(match form {
        KsdForm::U => {
            let mut mask = Matrix::filled(n, n, 1.0);
            for i in 0..n {
                mask.set(i, i, 0.0);
            }
            let mask = g.leaf(mask);
            let off = g.mul(u, mask)?;
            let total = g.sum(off);
            g.scale(total, 1.0 / (n * (n - 1)) as f64)
        }
        KsdForm::V => {
            let total = g.sum(u);
            g.scale(total, 1.0 / (n * n) as f64)
        }
    })
}

pub fn ksd_stat(score: &Matrix, x: &Matrix, kernel: &RbfKernel, form: KsdForm) -> Result<f64> {
    let mut g = Graph::new();
    let s = g.leaf(score.clone());
    let xv = g.leaf(x.clone());
    let out = ksd_graph(&mut g, s, xv, kernel, form)?;
    g.check_finite(out, "KSD")?;
    Ok(g.value(out).item())
}

/// Unbiased KSD estimate over distinct ordered pairs.
pub fn ksd_u_stat(score: &Matrix, x: &Matrix, kernel: &RbfKernel) -> Result<f64> {
    ksd_stat(score, x, kernel, KsdForm::U)
}

/// Per-row Stein operator `sᵢ·fᵢ + div f(xᵢ)` as an n×1 node.
pub fn stein_operator_graph(g: &mut Graph, score: Var, f: Var, div: Var) -> Result<Var> {
    require_same_shape(g.shape(score), g.shape(f), "Stein operator scores vs critic")?;
    let n = g.shape(score).0;
    require_same_shape(g.shape(div), (n, 1), "Stein operator divergence")?;
    let sf = g.mul(score, f)?;
    let dot = g.sum_cols(sf);
    g.add(dot, div)
}

/// Mean Stein operator value over the batch.
pub fn neural_stein_obj(score: &Matrix, f_values: &Matrix, f_divergence: &[f64]) -> Result<f64> {
    let mut g = Graph::new();
    let s = g.leaf(score.clone());
    let f = g.leaf(f_values.clone());
    let div = g.leaf(Matrix::column(f_divergence));
    let op = stein_operator_graph(&mut g, s, f, div)?;
    let m = g.mean(op);
    Ok(g.value(m).item())
}

/// `Σⱼ ∂fⱼ/∂xⱼ` per row as an n×1 node, from one input-gradient pass per output coordinate.
pub fn divergence_graph(g: &mut Graph, f_out: Var, x: Var) -> Result<Var> {
    require_same_shape(g.shape(f_out), g.shape(x), "divergence needs a square Jacobian")?;
    let d = g.shape(x).1;
    let mut div: Option<Var> = None;
    for j in 0..d {
        let fj = g.column(f_out, j)?;
        let total = g.sum(fj);
        let gx = g.grad(total, &[x])?[0];
        let dj = g.column(gx, j)?;
        div = Some(match div {
            None => dj,
            Some(acc) => g.add(acc, dj)?,
        });
    }
    div.ok_or_else(|| Error::InvalidArgument("divergence of a zero-width map".into()))
}

pub fn divergence_of_critic(f: &SteinCriticNet, x: &Matrix) -> Result<Vec<f64>> {
    let mut g = Graph::with_smoothness(Smoothness::PiecewiseConstant);
    let vars = f.params.to_graph(&mut g);
    let xv = g.leaf(x.clone());
    let out = f.forward_graph(&mut g, &vars, xv)?;
    let div = divergence_graph(&mut g, out, xv)?;
    g.check_finite(div, "divergence")?;
    Ok(g.value(div).data().to_vec())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpConfig {
    pub weight: f64,
}

impl Default for GpConfig {
    fn default() -> Self {
        GpConfig { weight: 10.0 }
    }
}

impl GpConfig {
    pub fn new(weight: f64) -> Result<Self> {
        if !(weight >= 0.0 && weight.is_finite()) {
            return Err(Error::InvalidArgument(format!("gradient-penalty weight must be ≥ 0, got {weight}")));
        }
        Ok(GpConfig { weight })
    }
}

/// Row-wise interpolates `εᵢ xᵢ + (1 − εᵢ) x̃ᵢ` with fresh `εᵢ ~ U(0, 1)`.
pub fn interpolate(x_real: &Matrix, x_fake: &Matrix, rng: &mut RngStream) -> Result<Matrix> {
    require_same_shape(x_real.shape(), x_fake.shape(), "interpolation batches")?;
    let mut out = x_real.clone();
    for i in 0..x_real.rows() {
        let eps = rng.uniform();
        for (o, f) in out.row_mut(i).iter_mut().zip(x_fake.row(i)) {
            *o = eps * *o + (1.0 - eps) * f;
        }
    }
    Ok(out)
}

/// `mean d(x) − mean d(x̃) − λ mean (‖∇d(x̂)‖ − 1)²`, to be maximized.
///
/// The penalty differentiates the critic's input-gradient, so `g` should hold
/// leaky-relu masks constant ([`Smoothness::PiecewiseConstant`]).
pub fn wasserstein_objective_graph(
    g: &mut Graph,
    critic: &WassersteinCritic,
    vars: &[Var],
    x_real: Var,
    x_fake: Var,
    x_hat: Var,
    gp: GpConfig,
) -> Result<Var> {
    let d_real = critic.forward_graph(g, vars, x_real)?;
    let d_fake = critic.forward_graph(g, vars, x_fake)?;
    let m_real = g.mean(d_real);
    let m_fake = g.mean(d_fake);
    let obj = g.sub(m_real, m_fake)?;
    if gp.weight == 0.0 {
        return Ok(obj);
    }
    let d_hat = critic.forward_graph(g, vars, x_hat)?;
    let total = g.sum(d_hat);
    let grad = g.grad(total, &[x_hat])?[0];
    let sq = g.square(grad);
    let norm2 = g.sum_cols(sq);
    let norm2 = g.add_scalar(norm2, 1e-16);
    let norm = g.sqrt(norm2);
    let dev = g.add_scalar(norm, -1.0);
    let pen = g.square(dev);
    let pen = g.mean(pen);
    let pen = g.scale(pen, gp.weight);
    g.sub(obj, pen)
}

/// `(critic_loss, generator_term)`: the penalized dual objective and `−mean d(x̃)`.
pub fn wasserstein_losses(
    critic: &WassersteinCritic,
    x_real: &Matrix,
    x_fake: &Matrix,
    gp: GpConfig,
    rng: &mut RngStream,
) -> Result<(f64, f64)> {
    if x_real.is_empty() || x_fake.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if x_real.cols() != x_fake.cols() {
        return Err(Error::DimensionMismatch {
            context: "wasserstein batches",
            expected: x_real.cols(),
            found: x_fake.cols(),
        });
    }
    let x_hat = if gp.weight > 0.0 {
        interpolate(x_real, x_fake, rng)?
    } else {
        x_real.clone()
    };
    let mut g = Graph::with_smoothness(Smoothness::PiecewiseConstant);
    let vars = critic.params.to_graph(&mut g);
    let xr = g.leaf(x_real.clone());
    let xf = g.leaf(x_fake.clone());
    let xh = g.leaf(x_hat);
    let obj = wasserstein_objective_graph(&mut g, critic, &vars, xr, xf, xh, gp)?;
    g.check_finite(obj, "critic loss")?;
    let d_fake = critic.value(x_fake)?;
    let gen = -d_fake.iter().sum::<f64>() / d_fake.len() as f64;
    Ok((g.value(obj).item(), gen))
}

fn clamped_log(g: &mut Graph, p: Var) -> Var {
    let c = g.clamp(p, JS_CLAMP, 1.0 - JS_CLAMP);
    g.log(c)
}

/// `mean log D(x) + mean log(1 − D(x̃))`, to be maximized.
pub fn js_disc_objective_graph(g: &mut Graph, d_real: Var, d_fake: Var) -> Result<Var> {
    let lr = clamped_log(g, d_real);
    let neg = g.neg(d_fake);
    let one_minus = g.add_scalar(neg, 1.0);
    let lf = clamped_log(g, one_minus);
    let a = g.mean(lr);
    let b = g.mean(lf);
    g.add(a, b)
}

/// Non-saturating generator loss `−mean log D(x̃)`.
pub fn js_gen_loss_graph(g: &mut Graph, d_fake: Var) -> Var {
    let l = clamped_log(g, d_fake);
    let m = g.mean(l);
    g.neg(m)
}

/// `(disc_loss, gen_loss)` for a discriminator in JS mode.
pub fn js_losses(disc: &WassersteinCritic, x_real: &Matrix, x_fake: &Matrix) -> Result<(f64, f64)> {
    if disc.mode != crate::models::CriticMode::Js {
        return Err(Error::InvalidArgument("JS losses need a discriminator in js mode".into()));
    }
    js_losses_from_probs(&disc.value(x_real)?, &disc.value(x_fake)?)
}

/// JS losses from discriminator outputs directly.
pub fn js_losses_from_probs(d_real: &[f64], d_fake: &[f64]) -> Result<(f64, f64)> {
    if d_real.is_empty() || d_fake.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let mut g = Graph::new();
    let r = g.leaf(Matrix::column(d_real));
    let f = g.leaf(Matrix::column(d_fake));
    let disc = js_disc_objective_graph(&mut g, r, f)?;
    let gen = js_gen_loss_graph(&mut g, f);
    Ok((g.value(disc).item(), g.value(gen).item()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{MlpSpec, OutputActivation, ParamStore};
    use crate::models::CriticMode;

    #[test]
    fn ksd_two_point_example() {
        let x = Matrix::column(&[-1.0, 1.0]);
        let s = x.scale(-1.0);
        let k = RbfKernel::new(1.0).unwrap();
        let v = ksd_u_stat(&s, &x, &k).unwrap();
        assert!((v + 8.0 * (-2f64).exp()).abs() < 1e-15);
        assert!((v + 1.08268).abs() < 1e-5);
        assert!(ksd_u_stat(&Matrix::column(&[1.0]), &Matrix::column(&[1.0]), &k).is_err());
    }

    #[test]
    fn ksd_v_form_includes_diagonal() {
        let x = Matrix::column(&[-1.0, 1.0]);
        let s = x.scale(-1.0);
        let k = RbfKernel::new(1.0).unwrap();
        // diagonal terms sᵢ² + d/h² = 2 each
        let v = ksd_stat(&s, &x, &k, KsdForm::V).unwrap();
        let expected = (2.0 * -8.0 * (-2f64).exp() + 4.0) / 4.0;
        assert!((v - expected).abs() < 1e-15);
    }

    #[test]
    fn neural_stein_examples() {
        let s = Matrix::column(&[-1.0, 1.0]);
        let zero = Matrix::zeros(2, 1);
        assert_eq!(neural_stein_obj(&s, &zero, &[0.0, 0.0]).unwrap(), 0.0);
        // f = 1 at x = {1, −1}
        let ones = Matrix::filled(2, 1, 1.0);
        assert_eq!(neural_stein_obj(&s, &ones, &[0.0, 0.0]).unwrap(), 0.0);
        // f(x) = x at x = 1
        let v = neural_stein_obj(&Matrix::scalar(-1.0), &Matrix::scalar(1.0), &[1.0]).unwrap();
        assert_eq!(v, 0.0);
        assert!(neural_stein_obj(&s, &Matrix::zeros(3, 1), &[0.0; 3]).is_err());
    }

    fn linear_stein_critic(a: &Matrix) -> SteinCriticNet {
        let spec = MlpSpec::new(vec![a.cols(), a.rows()], vec![], OutputActivation::Identity).unwrap();
        let mut p = ParamStore::zeros(&spec);
        p.set_segment(0, a).unwrap();
        SteinCriticNet::new(spec, p).unwrap()
    }

    #[test]
    fn divergence_of_linear_maps() {
        let a = Matrix::from_rows(&[vec![1.5, -2.0], vec![0.3, 4.0]]).unwrap();
        let f = linear_stein_critic(&a);
        let x = RngStream::new(1).normal_matrix(5, 2);
        for v in divergence_of_critic(&f, &x).unwrap() {
            assert!((v - 5.5).abs() < 1e-14);
        }
        let id = linear_stein_critic(&Matrix::identity(3));
        let x = RngStream::new(2).normal_matrix(4, 3);
        assert!(divergence_of_critic(&id, &x).unwrap().iter().all(|&v| v == 3.0));
    }

    fn linear_critic(psi: f64) -> WassersteinCritic {
        let spec = MlpSpec::new(vec![1, 1], vec![], OutputActivation::Identity).unwrap();
        let mut p = ParamStore::zeros(&spec);
        p.set_segment(0, &Matrix::scalar(psi)).unwrap();
        WassersteinCritic::new(spec, CriticMode::Wasserstein, p).unwrap()
    }

    #[test]
    fn wasserstein_examples() {
        let mut rng = RngStream::new(3);
        let c = WassersteinCritic::init(WassersteinCritic::default_spec(), CriticMode::Wasserstein, &mut rng).unwrap();
        let x = rng.normal_matrix(10, 2);
        let (loss, _) = wasserstein_losses(&c, &x, &x, GpConfig::new(0.0).unwrap(), &mut rng).unwrap();
        assert_eq!(loss, 0.0);

        // linear critic: ψ·mean(x) − ψ·mean(x̃) with mean(x) = 1, mean(x̃) = θ
        let (psi, theta) = (0.7, -0.4);
        let c = linear_critic(psi);
        let xr = Matrix::column(&[0.5, 1.5, 1.0]);
        let xf = Matrix::column(&[theta - 1.0, theta, theta + 1.0]);
        let (loss, gen) = wasserstein_losses(&c, &xr, &xf, GpConfig::new(0.0).unwrap(), &mut rng).unwrap();
        assert!((loss - (psi - psi * theta)).abs() < 1e-15);
        assert!((gen + psi * theta).abs() < 1e-15);

        // unit-slope critic has zero penalty
        let c = linear_critic(1.0);
        let (with_gp, _) = wasserstein_losses(&c, &xr, &xf, GpConfig::default(), &mut rng).unwrap();
        let (no_gp, _) = wasserstein_losses(&c, &xr, &xf, GpConfig::new(0.0).unwrap(), &mut rng).unwrap();
        assert!((with_gp - no_gp).abs() < 1e-15);

        // slope 3: penalty 10·(3 − 1)² = 40
        let c = linear_critic(3.0);
        let (with_gp, _) = wasserstein_losses(&c, &xr, &xf, GpConfig::default(), &mut rng).unwrap();
        let (no_gp, _) = wasserstein_losses(&c, &xr, &xf, GpConfig::new(0.0).unwrap(), &mut rng).unwrap();
        assert!((no_gp - with_gp - 40.0).abs() < 1e-12);
        assert!(wasserstein_losses(&c, &Matrix::zeros(0, 1), &xf, GpConfig::default(), &mut rng).is_err());
    }

    #[test]
    fn js_examples() {
        let (disc, _) = js_losses_from_probs(&[0.5; 4], &[0.5; 3]).unwrap();
        assert!((disc - 2.0 * 0.5f64.ln()).abs() < 1e-15);
        let (disc, _) = js_losses_from_probs(&[1.0, 1.0], &[0.0]).unwrap();
        assert!((disc - 2.0 * (1.0 - JS_CLAMP).ln()).abs() < 1e-15);
        assert!(disc.abs() < 1e-6);
        let (_, g_low) = js_losses_from_probs(&[0.5], &[0.3]).unwrap();
        let (_, g_high) = js_losses_from_probs(&[0.5], &[0.6]).unwrap();
        assert!(g_high < g_low);
        let (d, g) = js_losses_from_probs(&[0.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!(d.is_finite() && g.is_finite());

        let spec = WassersteinCritic::default_spec();
        let w = WassersteinCritic::new(spec.clone(), CriticMode::Wasserstein, ParamStore::zeros(&spec)).unwrap();
        assert!(js_losses(&w, &Matrix::zeros(1, 2), &Matrix::zeros(1, 2)).is_err());
    }
}
