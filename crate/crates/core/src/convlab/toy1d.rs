//! One-dimensional dynamics: the WGAN bilinear game `ψ − ψθ`, its ±λ
//! regularized versions, annealed regularization, and the bridged objective
//! `ψ − ψθ + λ₁/2 (1+φ)² + λ₂/2 (θ+φ)²`.
//!
//! The critic ψ ascends, the generator θ and the estimator φ descend. The toy
//! estimator only enters through its score `x + φ`. Every step is alternating:
//! later blocks see the values already updated in the same step.

use serde::{Deserialize, Serialize};

use super::Trajectory;
use crate::error::{Error, Result};
use crate::numkit::linalg::{spectral_norm, spectral_radius};
use crate::numkit::{Matrix, RngStream};

/// Optimum `[ψ, θ]` of the unregularized game.
pub const WGAN_OPTIMUM: [f64; 2] = [0.0, 1.0];
/// Optimum `[ψ, θ, φ]` of the bridged game.
pub const BRIDGE_OPTIMUM: [f64; 3] = [0.0, 1.0, -1.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Toy1DState {
    pub psi: f64,
    pub theta: f64,
    /// Estimator parameter; ignored by the non-bridged systems.
    pub phi: f64,
    pub eta: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Toy1DState {
    /// `λ₁ = λ₂ = 1`.
    pub fn new(psi: f64, theta: f64, phi: f64, eta: f64) -> Self {
        Toy1DState {
            psi,
            theta,
            phi,
            eta,
            lambda1: 1.0,
            lambda2: 1.0,
        }
    }

    pub fn with_lambdas(mut self, lambda1: f64, lambda2: f64) -> Self {
        self.lambda1 = lambda1;
        self.lambda2 = lambda2;
        self
    }

    pub fn is_finite(&self) -> bool {
        [self.psi, self.theta, self.phi, self.eta, self.lambda1, self.lambda2]
            .iter()
            .all(|v| v.is_finite())
    }

    pub fn psi_theta(&self) -> [f64; 2] {
        [self.psi, self.theta]
    }

    pub fn psi_theta_phi(&self) -> [f64; 3] {
        [self.psi, self.theta, self.phi]
    }

    /// `N = ψ² + (θ−1)² + (φ+1)²`, the squared distance to the bridged optimum.
    pub fn bridge_potential(&self) -> f64 {
        self.psi * self.psi + (self.theta - 1.0).powi(2) + (self.phi + 1.0).powi(2)
    }

    pub fn norm(&self) -> f64 {
        (self.psi * self.psi + self.theta * self.theta + self.phi * self.phi).sqrt()
    }
}

/// θ descends `ψ − ψθ` (gradient −ψ), then ψ ascends with the new θ.
///
/// In the shifted coordinate `θ' = 1 − θ` this is the textbook pair
/// `θ' ← θ' − ηψ`, `ψ ← ψ + ηθ'`.
pub fn wgan_1d_step(s: &Toy1DState) -> Toy1DState {
    reg_1d_step(s, 0.0)
}

/// Alternating step on `ψ − ψθ − λ(θ² − θ)`: θ first, ψ second.
/// `λ < 0` pulls towards the biased point `[−λ, 1]`, `λ > 0` diverges.
pub fn reg_1d_step(s: &Toy1DState, lambda: f64) -> Toy1DState {
    let eta = s.eta;
    let theta = s.theta - eta * (-s.psi - lambda * (2.0 * s.theta - 1.0));
    let psi = s.psi + eta * (1.0 - theta);
    Toy1DState { psi, theta, ..*s }
}

/// Block order of one bridged step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BridgeOrder {
    /// ψ, then φ, then θ; the order the contraction rate is proven for.
    #[default]
    CriticFirst,
    /// φ, then θ, then ψ.
    EstimatorFirst,
}

fn grad_psi(s: &Toy1DState) -> f64 {
    1.0 - s.theta
}

fn grad_phi(s: &Toy1DState) -> f64 {
    s.lambda1 * (1.0 + s.phi) + s.lambda2 * (s.theta + s.phi)
}

fn grad_theta(s: &Toy1DState) -> f64 {
    -s.psi + s.lambda2 * (s.theta + s.phi)
}

pub fn bridge_1d_step(s: &Toy1DState, order: BridgeOrder) -> Toy1DState {
    let eta = s.eta;
    let mut n = *s;
    match order {
        BridgeOrder::CriticFirst => {
            n.psi += eta * grad_psi(&n);
            n.phi -= eta * grad_phi(&n);
            n.theta -= eta * grad_theta(&n);
        }
        BridgeOrder::EstimatorFirst => {
            n.phi -= eta * grad_phi(&n);
            n.theta -= eta * grad_theta(&n);
            n.psi += eta * grad_psi(&n);
        }
    }
    n
}

/// Gradient of the bridged objective in `[ψ, θ, φ]` order.
pub fn bridge_gradient(s: &Toy1DState) -> [f64; 3] {
    [grad_psi(s), grad_theta(s), grad_phi(s)]
}

/// `λ_t = λ₀ · factor^⌊t / every⌋`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VaSchedule {
    pub lambda0: f64,
    pub factor: f64,
    pub every: u64,
}

impl VaSchedule {
    /// `λ₀ = −0.5`, halved every 500 steps.
    pub fn halving() -> Self {
        VaSchedule {
            lambda0: -0.5,
            factor: 0.5,
            every: 500,
        }
    }

    pub fn constant(lambda: f64) -> Self {
        VaSchedule {
            lambda0: lambda,
            factor: 1.0,
            every: 1,
        }
    }

    pub fn with_lambda0(mut self, lambda0: f64) -> Self {
        self.lambda0 = lambda0;
        self
    }

    pub fn lambda_at(&self, t: u64) -> f64 {
        let k = (t / self.every.max(1)).min(i32::MAX as u64) as i32;
        self.lambda0 * self.factor.powi(k)
    }
}

/// Regularized steps with a decaying λ; distances are measured to `[0, 1]`.
pub fn va_anneal_1d(start: &Toy1DState, schedule: &VaSchedule, steps: u64) -> Trajectory {
    let mut traj = Trajectory::new(&["psi", "theta"], WGAN_OPTIMUM.to_vec());
    let mut s = *start;
    traj.push(s.psi_theta().to_vec());
    for t in 0..steps {
        s = reg_1d_step(&s, schedule.lambda_at(t));
        traj.push(s.psi_theta().to_vec());
    }
    traj.finish()
}

/// The last `window` steps make no real progress: the distance never drops
/// below half its value at the start of the window, and does not vanish.
pub fn stalls_in_window(traj: &Trajectory, window: usize) -> bool {
    let d = traj.distances();
    if d.len() <= window {
        return false;
    }
    let tail = &d[d.len() - window - 1..];
    let min = tail.iter().copied().fold(f64::INFINITY, f64::min);
    min >= 0.5 * tail[0] && traj.final_distance() > 1e-6
}

/// Settings for the four scalar behaviours: plain, λ < 0, λ > 0 and annealed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ZooSpec {
    pub eta: f64,
    pub steps: u64,
    /// `|λ|` of the fixed regularized runs.
    pub lambda: f64,
    /// Starting `[ψ, θ]`.
    pub start: [f64; 2],
    pub anneal: VaSchedule,
    /// Late window inspected for the annealed run.
    pub window: usize,
}

impl Default for ZooSpec {
    fn default() -> Self {
        ZooSpec {
            eta: 0.1,
            steps: 10_000,
            lambda: 0.5,
            start: [1.0, 0.0],
            anneal: VaSchedule::halving(),
            window: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZooReport {
    /// Smallest distance to `[0, 1]` over the plain run, relative to the initial one.
    pub wgan_min_fraction: f64,
    /// Distance of the `λ < 0` run to `[−λ, 1]` at the end.
    pub reg_likelihood_error: f64,
    /// Largest norm reached by the `λ > 0` run and the step it crossed 1e6 (if it did).
    pub reg_entropy_max_norm: f64,
    pub reg_entropy_blowup_step: Option<u64>,
    /// Smallest distance in the annealed run's late window relative to the window start.
    pub anneal_window_fraction: f64,
    pub anneal_final_distance: f64,
    pub wgan_oscillates: bool,
    pub reg_likelihood_biased: bool,
    pub reg_entropy_diverges: bool,
    pub anneal_stalls: bool,
}

impl ZooReport {
    /// Every run shows its expected behaviour.
    pub fn as_expected(&self) -> bool {
        self.wgan_oscillates && self.reg_likelihood_biased && self.reg_entropy_diverges && self.anneal_stalls
    }
}

/// Norm beyond which a run counts as diverged.
pub const DIVERGENCE_NORM: f64 = 1e6;

pub struct ZooTrajectories {
    pub wgan: Trajectory,
    pub reg_likelihood: Trajectory,
    pub reg_entropy: Trajectory,
    pub anneal: Trajectory,
}

pub fn run_zoo(spec: &ZooSpec) -> (ZooReport, ZooTrajectories) {
    let start = Toy1DState::new(spec.start[0], spec.start[1], 0.0, spec.eta);
    let lambda = spec.lambda.abs();

    let wgan = va_anneal_1d(&start, &VaSchedule::constant(0.0), spec.steps);
    let d = wgan.distances();
    let wgan_min_fraction = d.iter().copied().fold(f64::INFINITY, f64::min) / d[0];

    let reg_likelihood = {
        let mut b = Trajectory::new(&["psi", "theta"], vec![lambda, 1.0]);
        let mut s = start;
        b.push(s.psi_theta().to_vec());
        for _ in 0..spec.steps {
            s = reg_1d_step(&s, -lambda);
            b.push(s.psi_theta().to_vec());
        }
        b.finish()
    };

    let (reg_entropy, blowup) = {
        let mut b = Trajectory::new(&["psi", "theta"], WGAN_OPTIMUM.to_vec());
        let mut s = start;
        let mut blowup = None;
        b.push(s.psi_theta().to_vec());
        for t in 0..spec.steps {
            s = reg_1d_step(&s, lambda);
            b.push(s.psi_theta().to_vec());
            if s.norm() > DIVERGENCE_NORM || !s.is_finite() {
                blowup = Some(t + 1);
                break;
            }
        }
        (b.finish(), blowup)
    };

    let anneal = va_anneal_1d(&start, &spec.anneal, spec.steps);
    let ad = anneal.distances();
    let window = spec.window.min(ad.len().saturating_sub(1));
    let tail = &ad[ad.len() - window - 1..];
    let anneal_window_fraction = tail.iter().copied().fold(f64::INFINITY, f64::min) / tail[0];

    let report = ZooReport {
        wgan_min_fraction,
        reg_likelihood_error: reg_likelihood.final_distance(),
        reg_entropy_max_norm: reg_entropy.max_norm(),
        reg_entropy_blowup_step: blowup,
        anneal_window_fraction,
        anneal_final_distance: anneal.final_distance(),
        wgan_oscillates: wgan_min_fraction >= 0.5,
        reg_likelihood_biased: reg_likelihood.final_distance() < 1e-6,
        reg_entropy_diverges: blowup.is_some(),
        anneal_stalls: stalls_in_window(&anneal, spec.window),
    };
    (
        report,
        ZooTrajectories {
            wgan,
            reg_likelihood,
            reg_entropy,
            anneal,
        },
    )
}

/// Runs any 1-D step map and records `[ψ, θ, φ]` against `reference`.
pub fn run_1d(
    start: &Toy1DState,
    steps: u64,
    reference: [f64; 3],
    step: impl Fn(&Toy1DState) -> Toy1DState,
) -> Trajectory {
    let mut traj = Trajectory::new(&["psi", "theta", "phi"], reference.to_vec());
    let mut s = *start;
    traj.push(s.psi_theta_phi().to_vec());
    for _ in 0..steps {
        s = step(&s);
        traj.push(s.psi_theta_phi().to_vec());
        if !s.is_finite() {
            break;
        }
    }
    traj.finish()
}

/// Linear part of the bridged step around the optimum, acting on
/// `[ψ, θ, φ] − [0, 1, −1]`.
pub fn bridge_iteration_matrix(eta: f64, lambda1: f64, lambda2: f64, order: BridgeOrder) -> Matrix {
    let mut m = Matrix::zeros(3, 3);
    for j in 0..3 {
        let mut p = BRIDGE_OPTIMUM;
        p[j] += 1.0;
        let s = Toy1DState::new(p[0], p[1], p[2], eta).with_lambdas(lambda1, lambda2);
        let n = bridge_1d_step(&s, order).psi_theta_phi();
        for i in 0..3 {
            m.set(i, j, n[i] - BRIDGE_OPTIMUM[i]);
        }
    }
    m
}

/// `1 − η²(1−η)²`.
pub fn prop1_rate(eta: f64) -> f64 {
    1.0 - eta * eta * (1.0 - eta) * (1.0 - eta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prop1Row {
    pub eta: f64,
    pub bound: f64,
    /// Largest `N_{t+1}/N_t` over all starts and steps.
    pub max_ratio: f64,
    /// `(start index, step)` of `max_ratio`.
    pub worst: (usize, usize),
    /// Largest final distance to `[0, 1, −1]` over the starts.
    pub max_final_distance: f64,
    /// Squared spectral radius of the iteration matrix: the asymptotic ratio.
    pub asymptotic_ratio: f64,
    /// Squared largest singular value: the worst possible one-step ratio.
    pub worst_case_ratio: f64,
    pub bound_holds: bool,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prop1Report {
    pub order: BridgeOrder,
    pub steps: usize,
    pub starts: Vec<[f64; 3]>,
    pub rows: Vec<Prop1Row>,
}

impl Prop1Report {
    pub fn bound_holds(&self) -> bool {
        self.rows.iter().all(|r| r.bound_holds)
    }

    pub fn converged(&self) -> bool {
        self.rows.iter().all(|r| r.converged)
    }

    pub fn passed(&self) -> bool {
        self.bound_holds() && self.converged()
    }
}

/// Slack on the per-step bound.
pub const PROP1_TOL: f64 = 1e-9;
/// Final distance counted as converged.
pub const PROP1_CONVERGED: f64 = 1e-8;
/// Below this `N_t` (distance 1e-12) ratios are dominated by rounding and are not scored.
const RATIO_FLOOR: f64 = 1e-24;

/// Bridged runs with `λ₁ = λ₂ = 1` from `n_starts` points uniform in
/// `[−2, 2]³`, one row per step size.
pub fn verify_prop1(etas: &[f64], n_starts: usize, steps: usize, order: BridgeOrder, seed: u64) -> Result<Prop1Report> {
    if let Some(&eta) = etas.iter().find(|&&e| !(e > 0.0 && e < 1.0)) {
        return Err(Error::InvalidArgument(format!("step size {eta} outside (0, 1)")));
    }
    let mut rng = RngStream::derive_from(seed, "convlab/prop1/starts");
    let starts: Vec<[f64; 3]> = (0..n_starts)
        .map(|_| {
            [
                rng.uniform_range(-2.0, 2.0),
                rng.uniform_range(-2.0, 2.0),
                rng.uniform_range(-2.0, 2.0),
            ]
        })
        .collect();
    let mut rows = Vec::with_capacity(etas.len());
    for &eta in etas {
        let bound = prop1_rate(eta);
        let mut max_ratio = 0.0f64;
        let mut worst = (0, 0);
        let mut max_final = 0.0f64;
        for (k, p) in starts.iter().enumerate() {
            let mut s = Toy1DState::new(p[0], p[1], p[2], eta);
            let mut n = s.bridge_potential();
            for t in 0..steps {
                s = bridge_1d_step(&s, order);
                let next = s.bridge_potential();
                if !next.is_finite() {
                    return Err(Error::NonFinite(format!("bridged run at η = {eta}")));
                }
                if n > RATIO_FLOOR {
                    let ratio = next / n;
                    if ratio > max_ratio {
                        max_ratio = ratio;
                        worst = (k, t);
                    }
                }
                n = next;
            }
            max_final = max_final.max(n.sqrt());
        }
        let m = bridge_iteration_matrix(eta, 1.0, 1.0, order);
        rows.push(Prop1Row {
            eta,
            bound,
            max_ratio,
            worst,
            max_final_distance: max_final,
            asymptotic_ratio: spectral_radius(&m)?.powi(2),
            worst_case_ratio: spectral_norm(&m)?.powi(2),
            bound_holds: max_ratio <= bound + PROP1_TOL,
            converged: max_final < PROP1_CONVERGED,
        });
    }
    Ok(Prop1Report {
        order,
        steps,
        starts,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn wgan_fixed_point_and_first_step() {
        let s = Toy1DState::new(0.0, 1.0, 0.0, 0.1);
        assert_eq!(wgan_1d_step(&s), s);
        // θ ← 0 + 0.1·1, ψ ← 1 + 0.1·(1 − 0.1)
        let n = wgan_1d_step(&Toy1DState::new(1.0, 0.0, 0.0, 0.1));
        assert!(close(n.theta, 0.1) && close(n.psi, 1.09));
        // same map as θ' ← θ' − ηψ, ψ ← ψ + ηθ' with θ' = 1 − θ
        let theta_shifted = 1.0 - 0.1 * 1.0;
        assert!(close(1.0 - n.theta, theta_shifted));
        assert!(close(n.psi, 1.0 + 0.1 * theta_shifted));
    }

    #[test]
    fn wgan_orbits_without_converging() {
        let traj = run_1d(&Toy1DState::new(1.0, 0.0, 0.0, 0.1), 10_000, [0.0, 1.0, 0.0], wgan_1d_step);
        let d = traj.distances();
        let min = d.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(min > 0.5 * d[0]);
        assert!(traj.max_norm() < 10.0);
    }

    #[test]
    fn regularized_fixed_points() {
        let lambda = -0.5;
        let s = Toy1DState::new(-lambda, 1.0, 0.0, 0.1);
        let n = reg_1d_step(&s, lambda);
        assert!(close(n.psi, s.psi) && close(n.theta, s.theta));

        let mut s = Toy1DState::new(1.0, 0.0, 0.0, 0.1);
        for _ in 0..10_000 {
            s = reg_1d_step(&s, lambda);
        }
        assert!((s.psi - 0.5).abs() < 1e-6 && (s.theta - 1.0).abs() < 1e-6);

        let mut s = Toy1DState::new(1.0, 0.0, 0.0, 0.1);
        let mut steps = 0;
        while s.norm() <= 1e6 && steps < 10_000 {
            s = reg_1d_step(&s, 0.5);
            steps += 1;
        }
        assert!(s.norm() > 1e6);
    }

    #[test]
    fn zero_lambda_is_wgan() {
        let mut a = Toy1DState::new(0.3, -0.7, 0.0, 0.2);
        let mut b = a;
        for _ in 0..100 {
            a = reg_1d_step(&a, 0.0);
            b = wgan_1d_step(&b);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn annealing_schedules() {
        let start = Toy1DState::new(1.0, 0.0, 0.0, 0.1);
        let fixed = va_anneal_1d(&start, &VaSchedule::constant(-0.3), 200);
        let mut s = start;
        for st in &fixed.states[1..] {
            s = reg_1d_step(&s, -0.3);
            assert_eq!(st, &s.psi_theta().to_vec());
        }
        let zero = va_anneal_1d(&start, &VaSchedule::halving().with_lambda0(0.0), 200);
        let mut s = start;
        for st in &zero.states[1..] {
            s = wgan_1d_step(&s);
            assert_eq!(st, &s.psi_theta().to_vec());
        }
        let sched = VaSchedule::halving();
        assert_eq!(sched.lambda_at(499), -0.5);
        assert_eq!(sched.lambda_at(500), -0.25);
        assert_eq!(sched.lambda_at(1500), -0.0625);
    }

    #[test]
    fn annealing_stalls_late() {
        let traj = va_anneal_1d(&Toy1DState::new(1.0, 0.0, 0.0, 0.1), &VaSchedule::halving(), 10_000);
        assert!(stalls_in_window(&traj, 1000));
    }

    #[test]
    fn zoo_behaves_as_described() {
        let (r, t) = run_zoo(&ZooSpec::default());
        assert!(r.as_expected(), "{r:?}");
        assert_eq!(t.wgan.len(), 10_001);
        assert!(t.reg_entropy.len() < 10_001);
    }

    #[test]
    fn bridge_optimum_is_stationary() {
        let s = Toy1DState::new(0.0, 1.0, -1.0, 0.5);
        assert_eq!(bridge_gradient(&s), [0.0, 0.0, 0.0]);
        for order in [BridgeOrder::CriticFirst, BridgeOrder::EstimatorFirst] {
            assert_eq!(bridge_1d_step(&s, order), s);
        }
    }

    #[test]
    fn bridge_matches_shifted_recurrence() {
        // θ' = 1 − θ, φ' = −1 − φ: ψ ← ψ + ηθ', φ' ← (1−2η)φ' − ηθ', θ' ← θ' − η(ψ + θ' + φ')
        let eta = 0.3;
        let s = Toy1DState::new(0.4, -0.2, 0.9, eta);
        let n = bridge_1d_step(&s, BridgeOrder::CriticFirst);
        let (tp, fp) = (1.0 - s.theta, -1.0 - s.phi);
        let psi = s.psi + eta * tp;
        let fp2 = (1.0 - 2.0 * eta) * fp - eta * tp;
        let tp2 = tp - eta * (psi + tp + fp2);
        assert!(close(n.psi, psi));
        assert!(close(-1.0 - n.phi, fp2));
        assert!(close(1.0 - n.theta, tp2));
    }

    #[test]
    fn bridge_converges_from_random_starts() {
        let mut rng = RngStream::new(12);
        for order in [BridgeOrder::CriticFirst, BridgeOrder::EstimatorFirst] {
            for _ in 0..100 {
                let p: Vec<f64> = (0..3).map(|_| rng.uniform_range(-2.0, 2.0)).collect();
                let traj = run_1d(&Toy1DState::new(p[0], p[1], p[2], 0.5), 2000, BRIDGE_OPTIMUM, |s| {
                    bridge_1d_step(s, order)
                });
                assert!(traj.final_distance() < 1e-8);
            }
        }
    }

    #[test]
    fn iteration_matrix_is_contracting_but_not_normal() {
        let m = bridge_iteration_matrix(0.5, 1.0, 1.0, BridgeOrder::CriticFirst);
        let rho2 = spectral_radius(&m).unwrap().powi(2);
        assert!(rho2 < prop1_rate(0.5));
        assert!(spectral_norm(&m).unwrap().powi(2) > rho2);
    }

    #[test]
    fn prop1_report_shape() {
        let r = verify_prop1(&[0.25, 0.5], 3, 500, BridgeOrder::CriticFirst, 1).unwrap();
        assert_eq!(r.rows.len(), 2);
        assert_eq!(r.starts.len(), 3);
        assert!(r.converged());
        for row in &r.rows {
            assert_eq!(row.bound, prop1_rate(row.eta));
            assert!(row.max_ratio <= row.worst_case_ratio + 1e-12);
        }
        assert!(verify_prop1(&[1.0], 1, 10, BridgeOrder::CriticFirst, 1).is_err());
    }
}
