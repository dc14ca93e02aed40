//! A-optimal allocation of shots over probe states.
//!
//! Minimizes `f(eta) = sum_i Tr(A_i(eta)^{-1})`, `A_i = sum_j eta_j w_ij phi_j phi_j^T`,
//! over the probability simplex. Spectral projected gradient does the bulk of
//! the work; a Newton phase on the current support finishes it.

use serde::{Deserialize, Serialize};

use crate::error::{QdtError, Result};
use crate::linalg::{RMat, RVec};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const MAX_ITER: usize = 100_000;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResourceDistribution {
    pub eta: Vec<f64>,
    pub objective: f64,
    /// Relative equivalence-theorem gap `(max_j -g_j - f) / f`.
    pub certificate: f64,
    pub iterations: usize,
}

/// Objective and gradient evaluator.
pub struct DesignProblem {
    phi: RMat,
    /// n x M, all positive.
    w: RMat,
}

impl DesignProblem {
    /// `weights` is n x M; `None` means a single outcome with unit weights.
    pub fn new(phi: &RMat, weights: Option<&RMat>) -> Result<Self> {
        let m = phi.nrows();
        if m == 0 {
            return Err(QdtError::InvalidConfig("no probes to allocate".into()));
        }
        let w = match weights {
            Some(w) => {
                if w.ncols() != m || w.nrows() == 0 {
                    return Err(QdtError::Shape(format!(
                        "weights are {}x{}, expected n x {m}",
                        w.nrows(),
                        w.ncols()
                    )));
                }
                if w.iter().any(|&x| !(x.is_finite() && x > 0.0)) {
                    return Err(QdtError::InvalidConfig("design weights must be positive".into()));
                }
                w.clone()
            }
            None => RMat::from_element(1, m, 1.0),
        };
        Ok(Self { phi: phi.clone(), w })
    }

    pub fn m(&self) -> usize {
        self.phi.nrows()
    }

    fn info(&self, eta: &[f64], i: usize) -> RMat {
        let mut scaled = self.phi.clone();
        for (j, mut row) in scaled.row_iter_mut().enumerate() {
            row *= eta[j] * self.w[(i, j)];
        }
        self.phi.transpose() * scaled
    }

    /// Inverse information matrices, or `None` when one is singular.
    fn inverses(&self, eta: &[f64]) -> Option<Vec<RMat>> {
        (0..self.w.nrows())
            .map(|i| {
                let a = self.info(eta, i);
                let chol = a.cholesky()?;
                // cheap singularity guard from the Cholesky diagonal
                let l = chol.l_dirty().diagonal();
                let (lo, hi) = l.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
                if !(lo > 0.0) || (hi / lo).powi(2) > 1e14 {
                    return None;
                }
                Some(chol.inverse())
            })
            .collect()
    }

    pub fn objective(&self, eta: &[f64]) -> f64 {
        match self.inverses(eta) {
            Some(invs) => invs.iter().map(|a| a.trace()).sum(),
            None => f64::INFINITY,
        }
    }

    fn eval(&self, eta: &[f64]) -> Option<(f64, RVec, Vec<RMat>)> {
        let invs = self.inverses(eta)?;
        let f = invs.iter().map(|a| a.trace()).sum();
        let m = self.m();
        let mut g = RVec::zeros(m);
        for (i, inv) in invs.iter().enumerate() {
            let g_i = &self.phi * inv;
            for j in 0..m {
                g[j] -= self.w[(i, j)] * g_i.row(j).norm_squared();
            }
        }
        Some((f, g, invs))
    }

    /// Gradient `df/deta_j = -sum_i w_ij |A_i^{-1} phi_j|^2`.
    pub fn gradient(&self, eta: &[f64]) -> Option<RVec> {
        self.eval(eta).map(|(_, g, _)| g)
    }

    /// Relative gap `(max_j -g_j - f) / f`; zero at the optimum.
    pub fn certificate(&self, eta: &[f64]) -> f64 {
        match self.eval(eta) {
            Some((f, g, _)) => cert(f, &g),
            None => f64::INFINITY,
        }
    }

    fn hessian(&self, invs: &[RMat], support: &[usize]) -> RMat {
        let s = support.len();
        let sub = self.phi.select_rows(support);
        let mut h = RMat::zeros(s, s);
        for (i, inv) in invs.iter().enumerate() {
            let g1 = &sub * inv;
            let p = &g1 * sub.transpose();
            let q = &g1 * g1.transpose();
            for a in 0..s {
                for b in 0..s {
                    h[(a, b)] += 2.0
                        * self.w[(i, support[a])]
                        * self.w[(i, support[b])]
                        * p[(a, b)]
                        * q[(a, b)];
                }
            }
        }
        h
    }
}

fn cert(f: f64, g: &RVec) -> f64 {
    let worst = g.iter().map(|x| -x).fold(f64::NEG_INFINITY, f64::max);
    (worst - f) / f
}

/// Euclidean projection onto the probability simplex.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u: Vec<f64> = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut tau = 0.0;
    for (k, x) in u.iter().enumerate() {
        cum += x;
        let t = (cum - 1.0) / (k + 1) as f64;
        if x - t > 0.0 {
            tau = t;
        }
    }
    v.iter().map(|x| (x - tau).max(0.0)).collect()
}

/// A-optimal distribution with certificate at most `tol`.
pub fn optimize_distribution(phi: &RMat, weights: Option<&RMat>, tol: f64) -> Result<ResourceDistribution> {
    let prob = DesignProblem::new(phi, weights)?;
    let m = prob.m();
    let uniform = vec![1.0 / m as f64; m];
    let Some((f_uni, g0, _)) = prob.eval(&uniform) else {
        return Err(QdtError::NotIdentifiable(
            "information matrix is singular for every allocation".into(),
        ));
    };

    let mut x = uniform.clone();
    let mut f = f_uni;
    let mut g = g0;
    let mut gap = cert(f, &g);
    let mut iters = 0;
    let mut alpha = 1.0 / g.amax().max(1e-300);

    while gap > tol && iters < MAX_ITER {
        let f_start = f;
        // projected-gradient sweep
        let sweep_end = (iters + 500).min(MAX_ITER);
        while gap > tol && iters < sweep_end {
            iters += 1;
            let trial: Vec<f64> = x.iter().zip(g.iter()).map(|(a, b)| a - alpha * b).collect();
            let p = project_simplex(&trial);
            let d: Vec<f64> = p.iter().zip(&x).map(|(a, b)| a - b).collect();
            let slope: f64 = d.iter().zip(g.iter()).map(|(a, b)| a * b).sum();
            if slope >= 0.0 {
                break;
            }
            let mut lam = 1.0;
            let mut accepted = None;
            for _ in 0..60 {
                let cand: Vec<f64> = x.iter().zip(&d).map(|(a, b)| (a + lam * b).max(0.0)).collect();
                if let Some((fc, gc, _)) = prob.eval(&cand) {
                    if fc <= f + 1e-4 * lam * slope {
                        accepted = Some((cand, fc, gc));
                        break;
                    }
                }
                lam *= 0.5;
            }
            let Some((cand, fc, gc)) = accepted else { break };
            let s: Vec<f64> = cand.iter().zip(&x).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = gc.iter().zip(g.iter()).map(|(a, b)| a - b).collect();
            let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
            let ss: f64 = s.iter().map(|a| a * a).sum();
            alpha = if sy > 0.0 { (ss / sy).clamp(1e-12, 1e12) } else { alpha * 2.0 };
            x = cand;
            f = fc;
            g = gc;
            gap = cert(f, &g);
        }
        if gap <= tol {
            break;
        }
        // Newton polish on the support
        for _ in 0..50 {
            if gap <= tol || iters >= MAX_ITER {
                break;
            }
            iters += 1;
            match newton_step(&prob, &x, f, &g) {
                Some((nx, nf, ng)) if nf <= f => {
                    x = nx;
                    f = nf;
                    g = ng;
                    gap = cert(f, &g);
                }
                _ => break,
            }
        }
        if f >= f_start {
            break;
        }
    }

    let total: f64 = x.iter().sum();
    x.iter_mut().for_each(|v| *v /= total);
    f = prob.objective(&x);
    if f > f_uni {
        x = uniform;
        f = f_uni;
    }
    gap = prob.certificate(&x);
    if gap > tol {
        return Err(QdtError::ConvergenceFailure {
            iterations: iters,
            gap,
            best: x,
        });
    }
    Ok(ResourceDistribution {
        eta: x,
        objective: f,
        certificate: gap,
        iterations: iters,
    })
}

/// Equality-constrained Newton step on `{j : eta_j > 0}` with a
/// feasibility-preserving Armijo search.
fn newton_step(prob: &DesignProblem, x: &[f64], f: f64, g: &RVec) -> Option<(Vec<f64>, f64, RVec)> {
    let m = x.len();
    let support: Vec<usize> = (0..m).filter(|&j| x[j] > 0.0).collect();
    let s = support.len();
    if s < 2 {
        return None;
    }
    let invs = prob.inverses(x)?;
    let h = prob.hessian(&invs, &support);
    let mut kkt = RMat::zeros(s + 1, s + 1);
    kkt.view_mut((0, 0), (s, s)).copy_from(&h);
    for a in 0..s {
        kkt[(a, s)] = 1.0;
        kkt[(s, a)] = 1.0;
    }
    let mut rhs = RVec::zeros(s + 1);
    for (a, &j) in support.iter().enumerate() {
        rhs[a] = -g[j];
    }
    let sol = kkt.lu().solve(&rhs)?;
    let mut d = vec![0.0; m];
    for (a, &j) in support.iter().enumerate() {
        d[j] = sol[a];
    }
    let slope: f64 = d.iter().zip(g.iter()).map(|(a, b)| a * b).sum();
    if !(slope < 0.0) {
        return None;
    }
    let mut lam_max: f64 = 1.0;
    for j in 0..m {
        if d[j] < 0.0 {
            lam_max = lam_max.min(-x[j] / d[j]);
        }
    }
    let mut lam = lam_max;
    for _ in 0..40 {
        let cand: Vec<f64> = x
            .iter()
            .zip(&d)
            .map(|(a, b)| {
                let v = a + lam * b;
                if v < 1e-15 {
                    0.0
                } else {
                    v
                }
            })
            .collect();
        if let Some((fc, gc, _)) = prob.eval(&cand) {
            if fc <= f + 1e-4 * lam * slope {
                return Some((cand, fc, gc));
            }
        }
        lam *= 0.5;
    }
    None
}

/// Largest-remainder rounding of `eta * total` to integers summing to `total`.
pub fn round_shots(eta: &[f64], total: u64) -> Vec<u64> {
    let sum: f64 = eta.iter().sum();
    let exact: Vec<f64> = eta.iter().map(|e| e / sum * total as f64).collect();
    let mut out: Vec<u64> = exact.iter().map(|x| x.floor() as u64).collect();
    let assigned: u64 = out.iter().sum();
    let mut order: Vec<usize> = (0..eta.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &j in order.iter().take(total.saturating_sub(assigned) as usize) {
        out[j] += 1;
    }
    out
}
