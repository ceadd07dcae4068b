//! The bilinear game `F(ψ, θ) = θᵀAψ − bᵀθ − cᵀψ` with an affiliated
//! variable φ and `H(φ, θ) = ½(θ+φ)ᵀB(θ+φ)`, `B = (AAᵀ)^{1/2}`.
//!
//! With the SVD `A = U diag(σ) Vᵀ` the alternating step decouples into `r`
//! scalar systems, the i-th one running with step `ησᵢ`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::linalg::{condition_number, random_orthogonal, solve, svd, Svd};
use crate::numkit::matrix::dot;
use crate::numkit::{psd_sqrt, Matrix, RngStream};

/// Largest accepted condition number of `A`.
pub const MAX_CONDITION: f64 = 1e8;

/// Curvature of the affiliated variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiCurvature {
    /// `L = F + αH`; per coordinate `θψ + ½(θ+φ)²`.
    #[default]
    Half,
    /// `L = F + αH + α/2 (φ−φ*)ᵀB(φ−φ*)`; per coordinate `θψ + ½(θ+φ)² + ½φ²`,
    /// which for `A = 1` is the shifted scalar bridged game.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BilinearSystem {
    a: Matrix,
    b: Vec<f64>,
    c: Vec<f64>,
    b_mat: Matrix,
    alpha: f64,
    curvature: PhiCurvature,
    optimum: BilinearState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BilinearState {
    pub psi: Vec<f64>,
    pub theta: Vec<f64>,
    pub phi: Vec<f64>,
}

impl BilinearState {
    pub fn zeros(r: usize) -> Self {
        BilinearState {
            psi: vec![0.0; r],
            theta: vec![0.0; r],
            phi: vec![0.0; r],
        }
    }

    pub fn random(r: usize, scale: f64, rng: &mut RngStream) -> Self {
        let mut v = || (0..r).map(|_| rng.uniform_range(-scale, scale)).collect::<Vec<_>>();
        BilinearState {
            psi: v(),
            theta: v(),
            phi: v(),
        }
    }

    /// `[ψ, θ, φ]` concatenated.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = self.psi.clone();
        out.extend_from_slice(&self.theta);
        out.extend_from_slice(&self.phi);
        out
    }

    pub fn dist2(&self, other: &BilinearState) -> f64 {
        self.flatten()
            .iter()
            .zip(other.flatten())
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.flatten().iter().all(|v| v.is_finite())
    }
}

fn axpy(y: &[f64], a: f64, x: &[f64]) -> Vec<f64> {
    y.iter().zip(x).map(|(y, x)| y + a * x).collect()
}

fn sub(x: &[f64], y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(x, y)| x - y).collect()
}

fn add(x: &[f64], y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(x, y)| x + y).collect()
}

impl BilinearSystem {
    pub fn new(a: Matrix, b: Vec<f64>, c: Vec<f64>, alpha: f64) -> Result<Self> {
        let r = a.rows();
        if a.cols() != r {
            return Err(Error::DimensionMismatch {
                context: "bilinear A must be square",
                expected: r,
                found: a.cols(),
            });
        }
        for (v, context) in [(&b, "bilinear b"), (&c, "bilinear c")] {
            if v.len() != r {
                return Err(Error::DimensionMismatch {
                    context,
                    expected: r,
                    found: v.len(),
                });
            }
        }
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!("α must be a finite nonnegative number, got {alpha}")));
        }
        if !a.all_finite() || b.iter().chain(&c).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("bilinear system".into()));
        }
        let cond = condition_number(&a)?;
        if !(cond < MAX_CONDITION) {
            return Err(Error::Singular);
        }
        let aat = a.matmul_t(&a, false, true)?;
        let b_mat = psd_sqrt(&aat)?;
        if b_mat.matmul(&b_mat)?.sub(&aat).max_abs() > 1e-8 * aat.max_abs().max(1.0) {
            return Err(Error::InvalidArgument("square root of AAᵀ is inaccurate".into()));
        }
        let psi = solve(&a, &b)?;
        let theta = solve(&a.transpose(), &c)?;
        let phi = theta.iter().map(|v| -v).collect();
        Ok(BilinearSystem {
            a,
            b,
            c,
            b_mat,
            alpha,
            curvature: PhiCurvature::Half,
            optimum: BilinearState { psi, theta, phi },
        })
    }

    pub fn with_curvature(mut self, curvature: PhiCurvature) -> Self {
        self.curvature = curvature;
        self
    }

    /// `A = U diag(s) Vᵀ` with Haar `U`, `V`, `s` uniform in `[s_min, s_max]`,
    /// and standard normal `b`, `c`.
    pub fn random(r: usize, s_min: f64, s_max: f64, alpha: f64, rng: &mut RngStream) -> Result<Self> {
        if !(0.0 < s_min && s_min <= s_max) {
            return Err(Error::InvalidArgument(format!("singular value range [{s_min}, {s_max}]")));
        }
        let u = random_orthogonal(r, rng);
        let v = random_orthogonal(r, rng);
        let mut us = u.clone();
        for j in 0..r {
            let s = rng.uniform_range(s_min, s_max);
            for i in 0..r {
                us.set(i, j, u.get(i, j) * s);
            }
        }
        let a = us.matmul_t(&v, false, true)?;
        let b = (0..r).map(|_| rng.normal()).collect();
        let c = (0..r).map(|_| rng.normal()).collect();
        Self::new(a, b, c, alpha)
    }

    pub fn dim(&self) -> usize {
        self.a.rows()
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn c(&self) -> &[f64] {
        &self.c
    }

    /// `(AAᵀ)^{1/2}`.
    pub fn b_matrix(&self) -> &Matrix {
        &self.b_mat
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn curvature(&self) -> PhiCurvature {
        self.curvature
    }

    pub fn optimum(&self) -> &BilinearState {
        &self.optimum
    }

    pub fn svd(&self) -> Result<Svd> {
        svd(&self.a)
    }

    /// `∇_ψ L = Aᵀθ − c`.
    pub fn grad_psi(&self, s: &BilinearState) -> Vec<f64> {
        let at_theta = self.a.transpose().mul_vec(&s.theta).expect("square system");
        sub(&at_theta, &self.c)
    }

    /// `∇_φ L = αB(θ+φ)`, plus `αB(φ−φ*)` under full curvature.
    pub fn grad_phi(&self, s: &BilinearState) -> Vec<f64> {
        let mut v = add(&s.theta, &s.phi);
        if self.curvature == PhiCurvature::Full {
            v = add(&v, &sub(&s.phi, &self.optimum.phi));
        }
        let g = self.b_mat.mul_vec(&v).expect("square system");
        g.iter().map(|x| self.alpha * x).collect()
    }

    /// `∇_θ L = Aψ − b + αB(θ+φ)`.
    pub fn grad_theta(&self, s: &BilinearState) -> Vec<f64> {
        let a_psi = self.a.mul_vec(&s.psi).expect("square system");
        let h = self.b_mat.mul_vec(&add(&s.theta, &s.phi)).expect("square system");
        axpy(&sub(&a_psi, &self.b), self.alpha, &h)
    }

    /// Value of the full objective `L`.
    pub fn objective(&self, s: &BilinearState) -> f64 {
        let a_psi = self.a.mul_vec(&s.psi).expect("square system");
        let f = dot(&s.theta, &a_psi) - dot(&self.b, &s.theta) - dot(&self.c, &s.psi);
        let quad = |v: &[f64]| 0.5 * dot(v, &self.b_mat.mul_vec(v).expect("square system"));
        let mut h = quad(&add(&s.theta, &s.phi));
        if self.curvature == PhiCurvature::Full {
            h += quad(&sub(&s.phi, &self.optimum.phi));
        }
        f + self.alpha * h
    }
}

/// `(ψ*, θ*, φ*) = (A⁻¹b, A⁻ᵀc, −A⁻ᵀc)`.
pub fn bilinear_optimum(sys: &BilinearSystem) -> BilinearState {
    sys.optimum.clone()
}

/// ψ ascends with the old values, φ descends with the new ψ, θ descends with
/// the new ψ and φ.
pub fn bilinear_affiliated_step(sys: &BilinearSystem, s: &BilinearState, eta: f64) -> BilinearState {
    let mut n = s.clone();
    n.psi = axpy(&n.psi, eta, &sys.grad_psi(&n));
    n.phi = axpy(&n.phi, -eta, &sys.grad_phi(&n));
    n.theta = axpy(&n.theta, -eta, &sys.grad_theta(&n));
    n
}

/// One step of the scalar system on `[ψ̃, φ̃, θ̃]` with step `step = ησᵢ`.
pub fn reduced_1d_step(x: [f64; 3], step: f64, alpha: f64, curvature: PhiCurvature) -> [f64; 3] {
    let [mut psi, mut phi, mut theta] = x;
    psi += step * theta;
    let extra = match curvature {
        PhiCurvature::Half => 0.0,
        PhiCurvature::Full => phi,
    };
    phi -= step * alpha * (theta + phi + extra);
    theta -= step * (psi + alpha * (theta + phi));
    [psi, phi, theta]
}

/// `[ψ̃, φ̃, θ̃]` for every coordinate: `Vᵀ(ψ−ψ*)`, `Uᵀ(φ−φ*)`, `Uᵀ(θ−θ*)`.
pub fn reduced_coordinates(sys: &BilinearSystem, svd: &Svd, s: &BilinearState) -> Vec<[f64; 3]> {
    let o = &sys.optimum;
    let psi = svd.v.transpose().mul_vec(&sub(&s.psi, &o.psi)).expect("square system");
    let phi = svd.u.transpose().mul_vec(&sub(&s.phi, &o.phi)).expect("square system");
    let theta = svd.u.transpose().mul_vec(&sub(&s.theta, &o.theta)).expect("square system");
    (0..sys.dim()).map(|i| [psi[i], phi[i], theta[i]]).collect()
}

/// Largest per-step gap between the reduced coordinates of a direct run and
/// `r` independent scalar runs started from the same point.
pub fn svd_reduction_gap(sys: &BilinearSystem, start: &BilinearState, eta: f64, steps: usize) -> Result<f64> {
    let dec = sys.svd()?;
    let mut direct = start.clone();
    let mut reduced = reduced_coordinates(sys, &dec, start);
    let mut gap = 0.0f64;
    for _ in 0..steps {
        direct = bilinear_affiliated_step(sys, &direct, eta);
        for (x, &sigma) in reduced.iter_mut().zip(&dec.singular_values) {
            *x = reduced_1d_step(*x, eta * sigma, sys.alpha, sys.curvature);
        }
        for (a, b) in reduced_coordinates(sys, &dec, &direct).iter().zip(&reduced) {
            for k in 0..3 {
                gap = gap.max((a[k] - b[k]).abs());
            }
        }
    }
    Ok(gap)
}

/// `(1 − η₁ + η₂²)(1 + η₂ − η₁²)`.
pub fn thm4_rate(eta1: f64, eta2: f64) -> f64 {
    (1.0 - eta1 + eta2 * eta2) * (1.0 + eta2 - eta1 * eta1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thm4Report {
    pub eta: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// `η₁ = ησ_min`, `η₂ = ησ_max`.
    pub rate_min_max: f64,
    /// `η₁ = ησ_max`, `η₂ = ησ_min`.
    pub rate_max_min: f64,
    /// Geometric mean of the per-step ratios of the squared distance.
    pub measured_rate: f64,
    /// Steps the measured rate is taken over.
    pub measured_steps: usize,
    pub final_distance: f64,
    pub min_max_holds: bool,
    pub max_min_holds: bool,
}

impl Thm4Report {
    pub fn better_rate(&self) -> f64 {
        self.rate_min_max.min(self.rate_max_min)
    }

    /// The measured rate respects at least one reading.
    pub fn passed(&self) -> bool {
        self.min_max_holds || self.max_min_holds
    }
}

/// Slack on the rate comparison.
pub const THM4_TOL: f64 = 1e-9;

/// Runs up to `steps` alternating steps and compares the measured contraction
/// of `‖state − optimum‖²` with both readings of the rate.
pub fn verify_thm4(sys: &BilinearSystem, start: &BilinearState, eta: f64, steps: usize) -> Result<Thm4Report> {
    let dec = sys.svd()?;
    let sigma_max = dec.singular_values[0];
    let sigma_min = *dec.singular_values.last().expect("nonempty system");
    if !(eta >= 0.0 && eta * sigma_max < 1.0) {
        return Err(Error::InvalidArgument(format!("need 0 ≤ ησ_max < 1, got η = {eta}, σ_max = {sigma_max}")));
    }
    let opt = &sys.optimum;
    let d0 = start.dist2(opt);
    // stop measuring once rounding in the optimum itself dominates
    let floor = 1e-24 * opt.flatten().iter().map(|v| v * v).sum::<f64>().max(1.0);
    let mut s = start.clone();
    let mut d = d0;
    let mut measured_steps = 0;
    for _ in 0..steps {
        if d <= floor {
            break;
        }
        s = bilinear_affiliated_step(sys, &s, eta);
        d = s.dist2(opt);
        if !s.is_finite() || d > 1e12 * d0.max(1e-300) {
            return Err(Error::Diverged(format!("bilinear run at η = {eta}")));
        }
        measured_steps += 1;
    }
    let measured_rate = if d0 == 0.0 || measured_steps == 0 {
        if d0 == 0.0 { 0.0 } else { 1.0 }
    } else {
        (d / d0).powf(1.0 / measured_steps as f64)
    };
    let rate_min_max = thm4_rate(eta * sigma_min, eta * sigma_max);
    let rate_max_min = thm4_rate(eta * sigma_max, eta * sigma_min);
    Ok(Thm4Report {
        eta,
        sigma_min,
        sigma_max,
        rate_min_max,
        rate_max_min,
        measured_rate,
        measured_steps,
        final_distance: d.sqrt(),
        min_max_holds: measured_rate <= rate_min_max + THM4_TOL,
        max_min_holds: measured_rate <= rate_max_min + THM4_TOL,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convlab::toy1d::{bridge_1d_step, prop1_rate, BridgeOrder, Toy1DState};

    fn identity_system(b: Vec<f64>, c: Vec<f64>) -> BilinearSystem {
        let r = b.len();
        BilinearSystem::new(Matrix::identity(r), b, c, 1.0).unwrap()
    }

    #[test]
    fn optimum_examples() {
        let o = bilinear_optimum(&identity_system(vec![0.0; 2], vec![0.0; 2]));
        assert_eq!(o, BilinearState::zeros(2));
        let o = bilinear_optimum(&identity_system(vec![1.0, 2.0], vec![3.0, 4.0]));
        assert_eq!(o.psi, vec![1.0, 2.0]);
        assert_eq!(o.theta, vec![3.0, 4.0]);
        assert_eq!(o.phi, vec![-3.0, -4.0]);
    }

    #[test]
    fn gradients_vanish_at_random_optimum() {
        let mut rng = RngStream::new(21);
        for curvature in [PhiCurvature::Half, PhiCurvature::Full] {
            for r in 1..=5 {
                let sys = BilinearSystem::random(r, 0.5, 2.0, 1.0, &mut rng).unwrap().with_curvature(curvature);
                let o = bilinear_optimum(&sys);
                let ra = sys.a().mul_vec(&o.psi).unwrap();
                assert!(sub(&ra, sys.b()).iter().all(|v| v.abs() < 1e-8));
                for g in [sys.grad_psi(&o), sys.grad_phi(&o), sys.grad_theta(&o)] {
                    assert!(g.iter().all(|v| v.abs() < 1e-10), "{g:?}");
                }
                let back = sys.b_matrix().matmul(sys.b_matrix()).unwrap();
                assert!(back.sub(&sys.a().matmul_t(sys.a(), false, true).unwrap()).max_abs() < 1e-8);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = RngStream::new(2);
        let sys = BilinearSystem::random(3, 0.5, 2.0, 0.7, &mut rng).unwrap().with_curvature(PhiCurvature::Full);
        let s = BilinearState::random(3, 1.0, &mut rng);
        let h = 1e-6;
        let grads = [sys.grad_psi(&s), sys.grad_theta(&s), sys.grad_phi(&s)];
        for (block, g) in grads.iter().enumerate() {
            for i in 0..3 {
                let mut p = s.clone();
                let mut m = s.clone();
                let (pv, mv) = match block {
                    0 => (&mut p.psi, &mut m.psi),
                    1 => (&mut p.theta, &mut m.theta),
                    _ => (&mut p.phi, &mut m.phi),
                };
                pv[i] += h;
                mv[i] -= h;
                let fd = (sys.objective(&p) - sys.objective(&m)) / (2.0 * h);
                assert!((fd - g[i]).abs() < 1e-6, "block {block} coord {i}");
            }
        }
    }

    #[test]
    fn rejects_singular_and_bad_shapes() {
        let sing = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap();
        assert!(BilinearSystem::new(sing, vec![0.0; 2], vec![0.0; 2], 1.0).is_err());
        assert!(BilinearSystem::new(Matrix::identity(2), vec![0.0; 3], vec![0.0; 2], 1.0).is_err());
        assert!(BilinearSystem::new(Matrix::identity(2), vec![0.0; 2], vec![0.0; 2], -1.0).is_err());
    }

    #[test]
    fn optimum_is_fixed() {
        let mut rng = RngStream::new(5);
        let sys = BilinearSystem::random(4, 0.5, 2.0, 1.0, &mut rng).unwrap();
        let o = bilinear_optimum(&sys);
        let n = bilinear_affiliated_step(&sys, &o, 0.3);
        assert!(n.dist2(&o) < 1e-24);
    }

    #[test]
    fn scalar_full_curvature_is_the_shifted_bridge() {
        // ψ ↔ ψ, θ ↔ 1 − θ_bridge, φ ↔ −1 − φ_bridge
        let sys = identity_system(vec![0.0], vec![0.0]).with_curvature(PhiCurvature::Full);
        let eta = 0.4;
        let mut s = BilinearState {
            psi: vec![0.7],
            theta: vec![-0.3],
            phi: vec![1.1],
        };
        let mut t = Toy1DState::new(0.7, 1.3, -2.1, eta);
        for _ in 0..50 {
            s = bilinear_affiliated_step(&sys, &s, eta);
            t = bridge_1d_step(&t, BridgeOrder::CriticFirst);
            assert!((s.psi[0] - t.psi).abs() < 1e-12);
            assert!((s.theta[0] - (1.0 - t.theta)).abs() < 1e-12);
            assert!((s.phi[0] - (-1.0 - t.phi)).abs() < 1e-12);
        }
    }

    #[test]
    fn svd_reduction_matches_direct_run() {
        let mut rng = RngStream::new(8);
        for curvature in [PhiCurvature::Half, PhiCurvature::Full] {
            let sys = BilinearSystem::random(3, 0.5, 2.0, 1.0, &mut rng).unwrap().with_curvature(curvature);
            let start = BilinearState::random(3, 2.0, &mut rng);
            assert!(svd_reduction_gap(&sys, &start, 0.2, 300).unwrap() < 1e-10);
        }
    }

    #[test]
    fn random_system_contracts_geometrically() {
        let mut rng = RngStream::new(13);
        let sys = BilinearSystem::random(3, 0.5, 2.0, 1.0, &mut rng).unwrap();
        let start = BilinearState::random(3, 2.0, &mut rng);
        let r = verify_thm4(&sys, &start, 0.05, 20_000).unwrap();
        assert!(r.measured_rate < 1.0);
        assert!(r.final_distance < 1e-6);
    }

    #[test]
    fn thm4_identity_reduces_to_scalar_rate() {
        assert!((thm4_rate(0.3, 0.3) - prop1_rate(0.3)).abs() < 1e-15);
        let sys = identity_system(vec![1.0, -1.0], vec![0.5, 2.0]).with_curvature(PhiCurvature::Full);
        let start = BilinearState::zeros(2);
        let r = verify_thm4(&sys, &start, 0.5, 5000).unwrap();
        assert_eq!(r.rate_min_max, r.rate_max_min);
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn thm4_diagonal_example_and_zero_step() {
        let a = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0]]).unwrap();
        let sys = BilinearSystem::new(a, vec![1.0, 1.0], vec![-1.0, 0.5], 1.0).unwrap();
        let start = BilinearState::zeros(2);
        let r = verify_thm4(&sys, &start, 0.2, 5000).unwrap();
        assert!(r.measured_rate < 1.0);
        assert!(r.measured_rate <= r.rate_min_max.max(r.rate_max_min));
        let r0 = verify_thm4(&sys, &start, 0.0, 10).unwrap();
        assert_eq!(r0.measured_rate, 1.0);
        assert!(verify_thm4(&sys, &start, 0.6, 10).is_err());
    }
}
