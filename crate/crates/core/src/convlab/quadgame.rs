//! Projected alternating updates on quadratic games
//!
//! `F(θ, ψ) = ½θᵀPθ + θᵀCψ − ½ψᵀQψ + pᵀθ − qᵀψ` (convex in θ, concave in ψ)
//! and `H(θ, φ) = ½ωᵀRω + rᵀω`, `ω = [θ; φ]`, over boxes.
//!
//! Each step first moves `[θ, φ]` along `h = ∇H` and projects, then moves
//! `[θ, ψ]` along `f = [∇_θF; −∇_ψF]` and projects. States are flat vectors
//! `[θ, ψ, φ]`.

use serde::{Deserialize, Serialize};

use super::Trajectory;
use crate::error::{Error, Result};
use crate::numkit::linalg::{random_orthogonal, spectral_norm, symmetric_eigen_range};
use crate::numkit::{Matrix, RngStream};

/// Axis-aligned box `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSet {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl BoxSet {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch {
                context: "box bounds",
                expected: lo.len(),
                found: hi.len(),
            });
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l <= h)) {
            return Err(Error::InvalidArgument("empty box".into()));
        }
        Ok(BoxSet { lo, hi })
    }

    /// `[−radius, radius]ⁿ`.
    pub fn cube(n: usize, radius: f64) -> Result<Self> {
        Self::new(vec![-radius; n], vec![radius; n])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (l, h))| *l <= *v && *v <= *h)
    }

    /// Euclidean projection: a componentwise clamp.
    pub fn project(&self, x: &mut [f64]) {
        for (v, (l, h)) in x.iter_mut().zip(self.lo.iter().zip(&self.hi)) {
            *v = v.clamp(*l, *h);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadGame {
    p: Matrix,
    c: Matrix,
    q: Matrix,
    r: Matrix,
    p_lin: Vec<f64>,
    q_lin: Vec<f64>,
    r_lin: Vec<f64>,
    theta_box: BoxSet,
    psi_box: BoxSet,
    phi_box: BoxSet,
    eta: f64,
    mu: f64,
    optimum: Vec<f64>,
}

fn check_symmetric(m: &Matrix, n: usize, context: &'static str) -> Result<()> {
    if m.rows() != n || m.cols() != n {
        return Err(Error::DimensionMismatch {
            context,
            expected: n,
            found: if m.rows() != n { m.rows() } else { m.cols() },
        });
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if (m.get(i, j) - m.get(j, i)).abs() > 1e-12 {
                return Err(Error::NotSymmetric { row: i, col: j });
            }
        }
    }
    Ok(())
}

fn neg(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(|x| -x).collect()
}

impl QuadGame {
    /// Builds the game whose unconstrained saddle point is `(θ*, ψ*, φ*)`;
    /// the linear terms are chosen so `f` and `h` vanish there. The optimum
    /// must lie in the boxes, and `μ = min(λ_min P, λ_min Q, λ_min R)` must be
    /// positive.
    #[allow(clippy::too_many_arguments)]
    pub fn with_optimum(
        p: Matrix,
        c: Matrix,
        q: Matrix,
        r: Matrix,
        optimum: (&[f64], &[f64], &[f64]),
        boxes: (BoxSet, BoxSet, BoxSet),
        eta: f64,
    ) -> Result<Self> {
        let (theta, psi, phi) = optimum;
        let (nt, np, nf) = (theta.len(), psi.len(), phi.len());
        check_symmetric(&p, nt, "P")?;
        check_symmetric(&q, np, "Q")?;
        check_symmetric(&r, nt + nf, "R")?;
        if c.rows() != nt || c.cols() != np {
            return Err(Error::DimensionMismatch {
                context: "C",
                expected: nt * np,
                found: c.len(),
            });
        }
        let (theta_box, psi_box, phi_box) = boxes;
        if !(theta_box.contains(theta) && psi_box.contains(psi) && phi_box.contains(phi)) {
            return Err(Error::InvalidArgument("optimum lies outside the boxes".into()));
        }
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::InvalidArgument(format!("step size must be positive, got {eta}")));
        }
        let mu = [&p, &q, &r]
            .into_iter()
            .map(|m| symmetric_eigen_range(m).map(|(lo, _)| lo))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        if !(mu > 0.0) {
            return Err(Error::InvalidArgument(format!("game is not strongly monotone (μ = {mu})")));
        }
        let pt = p.mul_vec(theta)?;
        let cp = c.mul_vec(psi)?;
        let p_lin = neg(pt.iter().zip(&cp).map(|(a, b)| a + b).collect());
        let qp = q.mul_vec(psi)?;
        let ct = c.transpose().mul_vec(theta)?;
        let q_lin = neg(qp.iter().zip(&ct).map(|(a, b)| a - b).collect());
        let mut w = theta.to_vec();
        w.extend_from_slice(phi);
        let r_lin = neg(r.mul_vec(&w)?);
        let mut opt = theta.to_vec();
        opt.extend_from_slice(psi);
        opt.extend_from_slice(phi);
        Ok(QuadGame {
            p,
            c,
            q,
            r,
            p_lin,
            q_lin,
            r_lin,
            theta_box,
            psi_box,
            phi_box,
            eta,
            mu,
            optimum: opt,
        })
    }

    /// `n`-dimensional blocks with `P`, `Q`, `R` eigenvalues in `[μ, 2μ]`,
    /// `‖C‖ = μ/4`, boxes `[−1, 1]`, optimum uniform in `[−½, ½]` and `η = 0.75/μ`.
    /// Every step then contracts the squared distance by at most
    /// `(½ + 3/16)² < ½`.
    pub fn random(n: usize, mu: f64, rng: &mut RngStream) -> Result<Self> {
        if !(mu > 0.0) {
            return Err(Error::InvalidArgument(format!("μ must be positive, got {mu}")));
        }
        let mut spd = |k: usize| -> Result<Matrix> {
            let o = random_orthogonal(k, rng);
            let mut od = o.clone();
            for j in 0..k {
                let e = if j == 0 { mu } else { rng.uniform_range(mu, 2.0 * mu) };
                for i in 0..k {
                    od.set(i, j, o.get(i, j) * e);
                }
            }
            let m = od.matmul_t(&o, false, true)?;
            Ok(m.add(&m.transpose()).scale(0.5))
        };
        let p = spd(n)?;
        let q = spd(n)?;
        let r = spd(2 * n)?;
        let c0 = rng.normal_matrix(n, n);
        let c = c0.scale(0.25 * mu / spectral_norm(&c0)?);
        let mut point = || (0..n).map(|_| rng.uniform_range(-0.5, 0.5)).collect::<Vec<_>>();
        let (theta, psi, phi) = (point(), point(), point());
        let cube = || BoxSet::cube(n, 1.0);
        Self::with_optimum(p, c, q, r, (&theta, &psi, &phi), (cube()?, cube()?, cube()?), 0.75 / mu)
    }

    /// `F = μ/2‖θ‖² − μ/2‖ψ‖² + θᵀψ`, `H = μ/2‖θ+φ‖² + μ/2‖φ‖²` on `[−1, 1]`
    /// boxes with `η = 0.75/μ`. The coupled `H` is only `(3−√5)/2·μ` strongly
    /// convex, which the verified modulus reports.
    pub fn coupled_example(n: usize, mu: f64) -> Result<Self> {
        let id = Matrix::identity(n);
        let mut r = Matrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            r.set(i, i, mu);
            r.set(i, n + i, mu);
            r.set(n + i, i, mu);
            r.set(n + i, n + i, 2.0 * mu);
        }
        let zero = vec![0.0; n];
        let cube = || BoxSet::cube(n, 1.0);
        Self::with_optimum(
            id.scale(mu),
            id.clone(),
            id.scale(mu),
            r,
            (&zero, &zero, &zero),
            (cube()?, cube()?, cube()?),
            0.75 / mu,
        )
    }

    pub fn with_eta(mut self, eta: f64) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::InvalidArgument(format!("step size must be positive, got {eta}")));
        }
        self.eta = eta;
        Ok(self)
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.theta_box.dim(), self.psi_box.dim(), self.phi_box.dim())
    }

    /// Strong-monotonicity modulus verified from the coefficient matrices.
    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// `[θ*, ψ*, φ*]`.
    pub fn optimum(&self) -> &[f64] {
        &self.optimum
    }

    /// `1/(2μ) < η < 1/μ`.
    pub fn eta_in_guarantee_range(&self) -> bool {
        0.5 / self.mu < self.eta && self.eta < 1.0 / self.mu
    }

    /// `2 − 2ημ`.
    pub fn contraction_factor(&self) -> f64 {
        2.0 - 2.0 * self.eta * self.mu
    }

    fn split<'a>(&self, w: &'a [f64]) -> (&'a [f64], &'a [f64], &'a [f64]) {
        let (nt, np, _) = self.dims();
        (&w[..nt], &w[nt..nt + np], &w[nt + np..])
    }

    /// `f(θ, ψ) = [Pθ + Cψ + p; Qψ − Cᵀθ + q]`.
    pub fn f(&self, theta: &[f64], psi: &[f64]) -> Vec<f64> {
        let pt = self.p.mul_vec(theta).expect("checked shape");
        let cp = self.c.mul_vec(psi).expect("checked shape");
        let qp = self.q.mul_vec(psi).expect("checked shape");
        let ct = self.c.transpose().mul_vec(theta).expect("checked shape");
        let mut out: Vec<f64> = (0..theta.len()).map(|i| pt[i] + cp[i] + self.p_lin[i]).collect();
        out.extend((0..psi.len()).map(|i| qp[i] - ct[i] + self.q_lin[i]));
        out
    }

    /// `h(θ, φ) = R[θ; φ] + r`.
    pub fn h(&self, theta: &[f64], phi: &[f64]) -> Vec<f64> {
        let mut w = theta.to_vec();
        w.extend_from_slice(phi);
        let rw = self.r.mul_vec(&w).expect("checked shape");
        rw.iter().zip(&self.r_lin).map(|(a, b)| a + b).collect()
    }

    /// One projected alternating step on a flat `[θ, ψ, φ]` state.
    pub fn step(&self, w: &[f64]) -> Vec<f64> {
        let (nt, _, _) = self.dims();
        let (theta, psi, phi) = self.split(w);
        let h = self.h(theta, phi);
        let mut theta_half: Vec<f64> = theta.iter().zip(&h[..nt]).map(|(x, g)| x - self.eta * g).collect();
        let mut phi_new: Vec<f64> = phi.iter().zip(&h[nt..]).map(|(x, g)| x - self.eta * g).collect();
        self.theta_box.project(&mut theta_half);
        self.phi_box.project(&mut phi_new);

        let f = self.f(&theta_half, psi);
        let mut theta_new: Vec<f64> = theta_half.iter().zip(&f[..nt]).map(|(x, g)| x - self.eta * g).collect();
        let mut psi_new: Vec<f64> = psi.iter().zip(&f[nt..]).map(|(x, g)| x - self.eta * g).collect();
        self.theta_box.project(&mut theta_new);
        self.psi_box.project(&mut psi_new);

        let mut out = theta_new;
        out.extend(psi_new);
        out.extend(phi_new);
        out
    }

    fn component_names(&self) -> Vec<String> {
        let (nt, np, nf) = self.dims();
        let names = |prefix: &str, n: usize| (0..n).map(move |i| format!("{prefix}{i}")).collect::<Vec<_>>();
        let mut out = names("theta", nt);
        out.extend(names("psi", np));
        out.extend(names("phi", nf));
        out
    }
}

/// `iterations` projected alternating steps from `start`.
pub fn projected_alt_sgd(game: &QuadGame, start: &[f64], iterations: usize) -> Result<Trajectory> {
    let (nt, np, nf) = game.dims();
    if start.len() != nt + np + nf {
        return Err(Error::DimensionMismatch {
            context: "quadratic game state",
            expected: nt + np + nf,
            found: start.len(),
        });
    }
    let names = game.component_names();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let mut traj = Trajectory::new(&refs, game.optimum.clone());
    let mut w = start.to_vec();
    traj.push(w.clone());
    for _ in 0..iterations {
        w = game.step(&w);
        traj.push(w.clone());
    }
    Ok(traj.finish())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thm3Report {
    pub mu: f64,
    pub eta: f64,
    /// `2 − 2ημ`.
    pub factor: f64,
    pub eta_in_range: bool,
    /// Largest one-step ratio of the squared distance.
    pub max_ratio: f64,
    /// First step `t` with `‖ω_t − ω*‖² > factorᵗ‖ω₀ − ω*‖²`, if any. Steps
    /// already within 1e-12 of the optimum are not scored.
    pub first_violation: Option<usize>,
    pub final_distance: f64,
}

impl Thm3Report {
    pub fn passed(&self) -> bool {
        self.first_violation.is_none()
    }
}

/// Squared distances below this are rounding noise; ratios are not scored there.
const RATIO_FLOOR: f64 = 1e-24;

/// Relative slack on the envelope.
pub const THM3_TOL: f64 = 1e-9;

pub fn verify_thm3(game: &QuadGame, start: &[f64], iterations: usize) -> Result<Thm3Report> {
    let traj = projected_alt_sgd(game, start, iterations)?;
    let factor = game.contraction_factor();
    let d0 = traj.dist2[0];
    let mut first_violation = None;
    let mut max_ratio = 0.0f64;
    for (t, w) in traj.dist2.windows(2).enumerate() {
        if w[0] > RATIO_FLOOR {
            max_ratio = max_ratio.max(w[1] / w[0]);
        }
        let envelope = factor.powi(t as i32 + 1) * d0;
        if first_violation.is_none() && w[1] > RATIO_FLOOR && w[1] > envelope * (1.0 + THM3_TOL) {
            first_violation = Some(t + 1);
        }
    }
    Ok(Thm3Report {
        mu: game.mu,
        eta: game.eta,
        factor,
        eta_in_range: game.eta_in_guarantee_range(),
        max_ratio,
        first_violation,
        final_distance: traj.final_distance(),
    })
}
