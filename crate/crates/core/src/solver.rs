//! Solvers for the simplex-constrained quadratic program `min w^T S w` over
//! the unit simplex, the relaxed sum-to-one-only problem, the closed-form
//! lower bound chain and the covariance-perturbation diagnostic.
//!
//! Two iterative solvers are provided. `solve_fw` is conditional gradient:
//! its vertex oracle picks `argmin_i (S w)_i` and by default it takes away
//! steps with exact line search, which converges linearly on strictly convex
//! instances; the classic open-loop `2/(t+2)` schedule is available as
//! `FwStep::OpenLoop`. `solve_pg` is projected gradient with exact Euclidean
//! simplex projection and serves as the independent reference solver.

use crate::covariance::CovMatrix;
use crate::error::{Error, Result};
use crate::image::{combine_estimates, mse_between, EstimateSet, Image, WeightVector};
use crate::linalg;

/// Frank-Wolfe gap threshold certifying optimality for convex objectives
/// over the simplex.
const FW_GAP_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverId {
    FrankWolfe,
    ProjectedGradient,
    ClosedFormRelaxed,
    ClosedForm2Way,
}

impl SolverId {
    pub fn name(&self) -> &'static str {
        match self {
            SolverId::FrankWolfe => "frank_wolfe",
            SolverId::ProjectedGradient => "projected_gradient",
            SolverId::ClosedFormRelaxed => "closed_form_relaxed",
            SolverId::ClosedForm2Way => "closed_form_2way",
        }
    }
}

/// Step rule for `solve_fw`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FwStep {
    /// Open-loop `alpha = 2/(t+2)` toward the vertex, exactly as in the
    /// classic conditional-gradient recursion. Converges O(1/t).
    OpenLoop,
    /// Away-step conditional gradient with exact line search. Same vertex
    /// oracle, much faster convergence; the default.
    #[default]
    AwayStep,
}

/// Solver trajectory and diagnostics.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub weights: WeightVector,
    pub objective: f64,
    /// Objective value after each iteration, starting with the initial point.
    pub trajectory: Vec<f64>,
    pub iterations: usize,
    pub solver_id: SolverId,
    /// `1 / (1^T pinv(S) 1)`, the relaxed-problem optimum.
    pub lower_bound: f64,
    /// Diagonal of S: the individual per-denoiser MSEs.
    pub per_denoiser_mse: Vec<f64>,
}

/// Covariance-perturbation diagnostic.
#[derive(Debug, Clone)]
pub struct PerturbationReport {
    /// Spectral norm of `S Stilde^-1 - S^-1 Stilde` (the direction the proof
    /// derivation supports).
    pub delta: f64,
    /// Spectral norm of `Stilde S^-1 - Stilde^-1 S` (the direction the
    /// statement prints); reported alongside for comparison.
    pub delta_statement: f64,
    /// Per-pixel `||ztilde - zhat||^2 / N`.
    pub lhs: f64,
    /// Per-pixel `||zhat - z||^2 / N * (2 delta + delta^2)`.
    pub rhs: f64,
    pub bound_holds: bool,
}

fn validate_sigma(sigma: &CovMatrix) -> Result<()> {
    if sigma.entries().iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("non-finite covariance entry".into()));
    }
    Ok(())
}

/// Vertex oracle: the basis vector minimizing `gradient^T u` over the
/// simplex. Ties break to the lowest index.
pub fn fw_vertex(gradient: &[f64]) -> Result<WeightVector> {
    if gradient.is_empty() {
        return Err(Error::InvalidParameter("empty gradient".into()));
    }
    if gradient.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numerical("non-finite gradient entry".into()));
    }
    let mut best = 0;
    for (i, &g) in gradient.iter().enumerate() {
        if g < gradient[best] {
            best = i;
        }
    }
    Ok(WeightVector::basis(gradient.len(), best))
}

fn argmin_idx(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x < v[best] {
            best = i;
        }
    }
    best
}

/// `1 / (1^T pinv(S) 1)`; returns 0 for the fully degenerate zero matrix.
pub fn lower_bound(sigma: &CovMatrix) -> Result<f64> {
    let k = sigma.k();
    let pinv = linalg::pseudo_inverse(sigma.entries(), k)?;
    let denom: f64 = pinv.iter().sum();
    if denom > 0.0 {
        Ok(1.0 / denom)
    } else {
        Ok(0.0)
    }
}

pub fn solve_fw(sigma: &CovMatrix, max_iter: usize) -> Result<SolveReport> {
    solve_fw_with(sigma, max_iter, FwStep::default())
}

pub fn solve_fw_with(sigma: &CovMatrix, max_iter: usize, step: FwStep) -> Result<SolveReport> {
    validate_sigma(sigma)?;
    if max_iter == 0 {
        return Err(Error::InvalidParameter("max_iter must be >= 1".into()));
    }
    let k = sigma.k();
    let s = sigma.entries();
    let mut w = vec![0.0; k];
    w[0] = 1.0;

    let mut trajectory = Vec::with_capacity(max_iter + 1);
    trajectory.push(linalg::quad_form(s, k, &w));
    let mut iterations = 0;

    for t in 0..max_iter {
        let sw = linalg::mat_vec(s, k, &w);
        let f: f64 = w.iter().zip(&sw).map(|(a, b)| a * b).sum();
        let i_star = argmin_idx(&sw);
        // gradient of w^T S w is 2 S w; the factor 2 never changes the argmin
        let fw_gap = 2.0 * (f - sw[i_star]);
        if fw_gap <= FW_GAP_TOL {
            break;
        }
        iterations = t + 1;

        match step {
            FwStep::OpenLoop => {
                let alpha = 2.0 / (t as f64 + 2.0);
                for (j, wj) in w.iter_mut().enumerate() {
                    let e = if j == i_star { 1.0 } else { 0.0 };
                    *wj += alpha * (e - *wj);
                }
            }
            FwStep::AwayStep => {
                // away vertex: worst coordinate of the current support
                let mut j_away = usize::MAX;
                for j in 0..k {
                    if w[j] > 0.0 && (j_away == usize::MAX || sw[j] > sw[j_away]) {
                        j_away = j;
                    }
                }
                let away_gap = 2.0 * (sw[j_away] - f);
                let (d, alpha_max): (Vec<f64>, f64) = if fw_gap >= away_gap {
                    let mut d: Vec<f64> = w.iter().map(|x| -x).collect();
                    d[i_star] += 1.0;
                    (d, 1.0)
                } else {
                    let mut d = w.clone();
                    d[j_away] -= 1.0;
                    let amax = if w[j_away] < 1.0 { w[j_away] / (1.0 - w[j_away]) } else { 0.0 };
                    (d, amax)
                };
                let d_s_d = linalg::quad_form(s, k, &d);
                let d_s_w: f64 = d.iter().zip(&sw).map(|(a, b)| a * b).sum();
                let alpha = if d_s_d > 0.0 {
                    (-d_s_w / d_s_d).clamp(0.0, alpha_max)
                } else {
                    alpha_max
                };
                for (wj, dj) in w.iter_mut().zip(&d) {
                    *wj += alpha * dj;
                }
                // keep the iterate exactly on the simplex
                for wj in w.iter_mut() {
                    if *wj < 0.0 {
                        *wj = 0.0;
                    }
                }
                let sum: f64 = w.iter().sum();
                for wj in w.iter_mut() {
                    *wj /= sum;
                }
            }
        }
        trajectory.push(linalg::quad_form(s, k, &w));
    }

    let objective = *trajectory.last().expect("trajectory never empty");
    Ok(SolveReport {
        weights: WeightVector::simplex(w)?,
        objective,
        trajectory,
        iterations,
        solver_id: SolverId::FrankWolfe,
        lower_bound: lower_bound(sigma)?,
        per_denoiser_mse: sigma.diag(),
    })
}

/// Exact Euclidean projection onto the unit simplex (sort-based).
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut css = 0.0;
    let mut tau = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        css += ui;
        let candidate = (css - 1.0) / (i as f64 + 1.0);
        if ui > candidate {
            tau = candidate;
        }
    }
    let mut w = vec![0.0; n];
    for i in 0..n {
        w[i] = (v[i] - tau).max(0.0);
    }
    w
}

/// Projected gradient with exact simplex projection; the reference solver.
///
/// `step = None` auto-selects `1 / (2 lambda_max)`, which guarantees a
/// non-increasing trajectory.
pub fn solve_pg(sigma: &CovMatrix, max_iter: usize, step: Option<f64>) -> Result<SolveReport> {
    validate_sigma(sigma)?;
    if max_iter == 0 {
        return Err(Error::InvalidParameter("max_iter must be >= 1".into()));
    }
    let k = sigma.k();
    let s = sigma.entries();
    let step = match step {
        Some(v) if v > 0.0 && v.is_finite() => v,
        Some(v) => return Err(Error::InvalidParameter(format!("bad step size {v}"))),
        None => {
            let lmax = sigma.max_eigenvalue()?.max(1e-300);
            1.0 / (2.0 * lmax)
        }
    };

    let mut w = vec![1.0 / k as f64; k];
    let mut trajectory = Vec::with_capacity(max_iter + 1);
    trajectory.push(linalg::quad_form(s, k, &w));
    let mut iterations = 0;
    for _ in 0..max_iter {
        let sw = linalg::mat_vec(s, k, &w);
        let f: f64 = w.iter().zip(&sw).map(|(a, b)| a * b).sum();
        let gap = 2.0 * (f - sw[argmin_idx(&sw)]);
        if gap <= 1e-13 {
            break;
        }
        iterations += 1;
        let moved: Vec<f64> = w.iter().zip(&sw).map(|(wi, g)| wi - step * 2.0 * g).collect();
        w = project_simplex(&moved);
        trajectory.push(linalg::quad_form(s, k, &w));
    }

    let objective = *trajectory.last().expect("trajectory never empty");
    Ok(SolveReport {
        weights: WeightVector::simplex(w)?,
        objective,
        trajectory,
        iterations,
        solver_id: SolverId::ProjectedGradient,
        lower_bound: lower_bound(sigma)?,
        per_denoiser_mse: sigma.diag(),
    })
}

/// Closed-form solution of the relaxed problem (sum-to-one only):
/// `w* = pinv(S) 1 / (1^T pinv(S) 1)`, objective `1 / (1^T pinv(S) 1)`.
/// Weights may be negative.
pub fn closed_form_relaxed(sigma: &CovMatrix) -> Result<SolveReport> {
    validate_sigma(sigma)?;
    let k = sigma.k();
    let pinv = linalg::pseudo_inverse(sigma.entries(), k)?;
    let ones = vec![1.0; k];
    let q = linalg::mat_vec(&pinv, k, &ones);
    let denom: f64 = q.iter().sum();
    if !(denom > 0.0) {
        return Err(Error::Singular(format!("1^T pinv(S) 1 = {denom}, relaxed problem degenerate")));
    }
    let w: Vec<f64> = q.iter().map(|x| x / denom).collect();
    let objective = 1.0 / denom;
    Ok(SolveReport {
        weights: WeightVector::affine(w)?,
        objective,
        trajectory: vec![objective],
        iterations: 0,
        solver_id: SolverId::ClosedFormRelaxed,
        lower_bound: objective,
        per_denoiser_mse: sigma.diag(),
    })
}

/// K=2 closed form for the relaxed problem:
/// `w1* = (S_22 - S_12) / (S_11 + S_22 - 2 S_12)`.
///
/// This solves the sum-to-one-only problem; `w1*` can leave `[0,1]` when
/// `S_12 > min(S_11, S_22)`, in which case the simplex solution sits at a
/// vertex instead.
pub fn closed_form_2way(sigma: &CovMatrix) -> Result<SolveReport> {
    validate_sigma(sigma)?;
    if sigma.k() != 2 {
        return Err(Error::ShapeMismatch(format!("closed_form_2way needs K=2, got {}", sigma.k())));
    }
    let s11 = sigma.get(0, 0);
    let s12 = sigma.get(0, 1);
    let s22 = sigma.get(1, 1);
    let denom = s11 + s22 - 2.0 * s12;
    if !(denom > 0.0) {
        return Err(Error::Singular(format!(
            "S_11 + S_22 - 2 S_12 = {denom}; estimators indistinguishable"
        )));
    }
    let w1 = (s22 - s12) / denom;
    let w = vec![w1, 1.0 - w1];
    let objective = linalg::quad_form(sigma.entries(), 2, &w);
    Ok(SolveReport {
        weights: WeightVector::affine(w)?,
        objective,
        trajectory: vec![objective],
        iterations: 0,
        solver_id: SolverId::ClosedForm2Way,
        lower_bound: lower_bound(sigma)?,
        per_denoiser_mse: sigma.diag(),
    })
}

/// The objective chain `min_k S_kk >= w^T S w >= 1/(1^T pinv(S) 1)`:
/// returns `(diag(S), w^T S w, bound)`; the caller asserts the ordering.
pub fn lower_bound_chain(
    sigma: &CovMatrix,
    w_hat: &WeightVector,
) -> Result<(Vec<f64>, f64, f64)> {
    validate_sigma(sigma)?;
    if w_hat.len() != sigma.k() {
        return Err(Error::ShapeMismatch("weight length != covariance dimension".into()));
    }
    let combined = linalg::quad_form(sigma.entries(), sigma.k(), w_hat.as_slice());
    Ok((sigma.diag(), combined, lower_bound(sigma)?))
}

fn inverse_pd(sigma: &CovMatrix) -> Result<Vec<f64>> {
    // strictly PD inputs only; pseudo-inverse coincides with the inverse
    linalg::pseudo_inverse(sigma.entries(), sigma.k())
}

/// Spectral-norm mismatch between two strictly PD matrices:
/// `||A B^-1 - A^-1 B||_2`.
fn delta_norm(a: &CovMatrix, b_inv: &[f64], a_inv: &[f64], b: &CovMatrix) -> Result<f64> {
    let k = a.k();
    let left = linalg::mat_mul(a.entries(), b_inv, k);
    let right = linalg::mat_mul(a_inv, b.entries(), k);
    let diff: Vec<f64> = left.iter().zip(&right).map(|(x, y)| x - y).collect();
    linalg::spectral_norm(&diff, k)
}

/// Solves the simplex problem under the true and the estimated covariance,
/// combines the estimates with both weight vectors, and checks the excess
/// error against the `(2 delta + delta^2)` perturbation bound.
pub fn perturbation_check(
    sigma_true: &CovMatrix,
    sigma_est: &CovMatrix,
    set: &EstimateSet,
    clean: &Image,
) -> Result<PerturbationReport> {
    if sigma_true.k() != sigma_est.k() || sigma_true.k() != set.k() {
        return Err(Error::ShapeMismatch("covariance/estimate-set dimension mismatch".into()));
    }
    for (name, m) in [("true", sigma_true), ("estimated", sigma_est)] {
        if m.min_eigenvalue()? <= 1e-10 {
            return Err(Error::Singular(format!("{name} covariance is not strictly PD")));
        }
    }

    let w_true = solve_fw(sigma_true, 10_000)?.weights;
    let w_est = solve_fw(sigma_est, 10_000)?.weights;
    let z_hat = combine_estimates(set, &w_true)?;
    let z_tilde = combine_estimates(set, &w_est)?;

    let inv_true = inverse_pd(sigma_true)?;
    let inv_est = inverse_pd(sigma_est)?;
    let delta = delta_norm(sigma_true, &inv_est, &inv_true, sigma_est)?;
    let delta_statement = delta_norm(sigma_est, &inv_true, &inv_est, sigma_true)?;

    let lhs = mse_between(&z_tilde, &z_hat)?;
    let rhs = mse_between(&z_hat, clean)? * (2.0 * delta + delta * delta);
    Ok(PerturbationReport {
        delta,
        delta_statement,
        lhs,
        rhs,
        bound_holds: lhs <= rhs + 1e-9,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::Provenance;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cov(k: usize, entries: &[f64]) -> CovMatrix {
        CovMatrix::from_entries(k, entries.to_vec(), Provenance::Oracle).unwrap()
    }

    fn random_simplex(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
        let mut u: Vec<f64> = (0..k).map(|_| -(rng.gen_range(1e-12f64..1.0)).ln()).collect();
        let s: f64 = u.iter().sum();
        u.iter_mut().for_each(|x| *x /= s);
        u
    }

    #[test]
    fn fw_vertex_argmin_and_ties() {
        let v = fw_vertex(&[3.0, 1.0, 2.0]).unwrap();
        assert_eq!(v.as_slice(), &[0.0, 1.0, 0.0]);
        let v = fw_vertex(&[1.0, 1.0]).unwrap();
        assert_eq!(v.as_slice(), &[1.0, 0.0]);
        assert!(fw_vertex(&[]).is_err());
    }

    #[test]
    fn fw_vertex_minimizes_over_random_simplex_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let g: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let v = fw_vertex(&g).unwrap();
        let gv: f64 = g.iter().zip(v.as_slice()).map(|(a, b)| a * b).sum();
        for _ in 0..10_000 {
            let u = random_simplex(&mut rng, 6);
            let gu: f64 = g.iter().zip(&u).map(|(a, b)| a * b).sum();
            assert!(gv <= gu + 1e-12);
        }
    }

    #[test]
    fn solve_fw_identity_gives_uniform() {
        let s = cov(3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        // open-loop steps converge O(1/t): the objective gets close but the
        // weights keep circulating around the optimum
        let r = solve_fw_with(&s, 500, FwStep::OpenLoop).unwrap();
        assert!((r.objective - 1.0 / 3.0).abs() < 5e-3);
        // line-searched away steps land on the uniform point exactly
        let r = solve_fw_with(&s, 500, FwStep::AwayStep).unwrap();
        for w in r.weights.as_slice() {
            assert!((w - 1.0 / 3.0).abs() < 1e-10);
        }
        assert!((r.objective - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn solve_fw_diag_case_matches_grid_value() {
        // grid search over the simplex at step 1e-4 puts the optimum of
        // diag(4,1) at w = (0.2, 0.8) with objective 0.8
        let s = cov(2, &[4.0, 0.0, 0.0, 1.0]);
        let r = solve_fw(&s, 500).unwrap();
        assert!((r.weights.as_slice()[0] - 0.2).abs() < 1e-4);
        assert!((r.weights.as_slice()[1] - 0.8).abs() < 1e-4);
        assert!((r.objective - 0.8).abs() < 1e-6);
    }

    #[test]
    fn solve_fw_interior_matches_2way_closed_form() {
        let s = cov(2, &[1.0, 0.9, 0.9, 4.0]);
        let r = solve_fw(&s, 500).unwrap();
        let cf = closed_form_2way(&s).unwrap();
        assert!((cf.weights.as_slice()[0] - 3.1 / 3.2).abs() < 1e-12);
        assert!((r.weights.as_slice()[0] - 3.1 / 3.2).abs() < 1e-5);
        assert!((r.objective - cf.objective).abs() < 1e-8);
    }

    #[test]
    fn solve_fw_iterates_stay_on_simplex() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let k = rng.gen_range(2..8);
            let g: Vec<f64> = (0..k * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut e = vec![0.0; k * k];
            for i in 0..k {
                for j in 0..k {
                    let mut s = 0.0;
                    for l in 0..k {
                        s += g[l * k + i] * g[l * k + j];
                    }
                    e[i * k + j] = s + if i == j { 0.05 } else { 0.0 };
                }
            }
            let sigma = cov(k, &e);
            let r = solve_fw(&sigma, 500).unwrap();
            let sum: f64 = r.weights.as_slice().iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(r.weights.as_slice().iter().all(|&w| w >= 0.0));
            assert!(r.objective >= r.lower_bound - 1e-9);
        }
    }

    #[test]
    fn solve_pg_identity_and_monotone() {
        let s = cov(2, &[1.0, 0.0, 0.0, 1.0]);
        let r = solve_pg(&s, 500, None).unwrap();
        assert!((r.weights.as_slice()[0] - 0.5).abs() < 1e-9);
        for w in r.trajectory.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn pg_agrees_with_fw_on_random_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..200 {
            let k = rng.gen_range(2..=10);
            let g: Vec<f64> = (0..k * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut e = vec![0.0; k * k];
            for i in 0..k {
                for j in 0..k {
                    let mut s = 0.0;
                    for l in 0..k {
                        s += g[l * k + i] * g[l * k + j];
                    }
                    e[i * k + j] = s + if i == j { 0.05 } else { 0.0 };
                }
            }
            let sigma = cov(k, &e);
            let f_fw = solve_fw(&sigma, 500).unwrap().objective;
            let f_pg = solve_pg(&sigma, 5000, None).unwrap().objective;
            assert!(
                (f_fw - f_pg).abs() <= 1e-4 * f_pg.abs().max(1e-12),
                "fw {f_fw} vs pg {f_pg}"
            );
        }
    }

    #[test]
    fn simplex_projection_kkt_cases() {
        let w = project_simplex(&[1.2, -0.2]);
        assert!((w[0] - 1.0).abs() < 1e-15 && w[1] == 0.0);
        let w = project_simplex(&[0.6, 0.6]);
        assert!((w[0] - 0.5).abs() < 1e-15 && (w[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn closed_form_relaxed_isotropic_and_diag() {
        let s = cov(3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let r = closed_form_relaxed(&s).unwrap();
        for w in r.weights.as_slice() {
            assert!((w - 1.0 / 3.0).abs() < 1e-12);
        }
        assert!((r.objective - 1.0 / 3.0).abs() < 1e-12);

        let s = cov(2, &[4.0, 0.0, 0.0, 1.0]);
        let r = closed_form_relaxed(&s).unwrap();
        assert!((r.weights.as_slice()[0] - 0.2).abs() < 1e-12);
        assert!((r.objective - 0.8).abs() < 1e-12);
        let fw = solve_fw(&s, 500).unwrap();
        assert!((fw.objective - r.objective).abs() < 1e-6);
    }

    #[test]
    fn closed_form_relaxed_rank_one_ones() {
        // pinv of the all-ones 2x2 is ones/4 (checked by S pinv S = S in
        // linalg tests); bound is 1 and every simplex w attains it
        let s = cov(2, &[1.0, 1.0, 1.0, 1.0]);
        let r = closed_form_relaxed(&s).unwrap();
        assert!((r.weights.as_slice()[0] - 0.5).abs() < 1e-12);
        assert!((r.objective - 1.0).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let w = random_simplex(&mut rng, 2);
            let f = linalg::quad_form(s.entries(), 2, &w);
            assert!((f - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn closed_form_2way_cases() {
        let s = cov(2, &[2.0, 1.0, 1.0, 2.0]);
        let r = closed_form_2way(&s).unwrap();
        assert!((r.weights.as_slice()[0] - 0.5).abs() < 1e-15);

        let s = cov(2, &[1.0, 0.9, 0.9, 4.0]);
        let r = closed_form_2way(&s).unwrap();
        assert!((r.weights.as_slice()[0] - 0.96875).abs() < 1e-15);
        let rel = closed_form_relaxed(&s).unwrap();
        assert!((r.weights.as_slice()[0] - rel.weights.as_slice()[0]).abs() < 1e-12);

        // relaxed solution outside [0,1]; the simplex optimum is the vertex e1
        let s = cov(2, &[1.0, 1.5, 1.5, 4.0]);
        let r = closed_form_2way(&s).unwrap();
        assert!((r.weights.as_slice()[0] - 1.25).abs() < 1e-15);
        let fw = solve_fw(&s, 500).unwrap();
        assert!((fw.weights.as_slice()[0] - 1.0).abs() < 1e-9);
        assert!((fw.objective - 1.0).abs() < 1e-9);

        // identical estimators: zero denominator
        let s = cov(2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(closed_form_2way(&s).is_err());
    }

    #[test]
    fn lower_bound_chain_cases() {
        let s = cov(3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let w = WeightVector::uniform(3);
        let (diag, combined, bound) = lower_bound_chain(&s, &w).unwrap();
        assert_eq!(diag, vec![1.0, 1.0, 1.0]);
        assert!((combined - 1.0 / 3.0).abs() < 1e-12);
        assert!((bound - 1.0 / 3.0).abs() < 1e-12);

        let s = cov(2, &[4.0, 0.0, 0.0, 1.0]);
        let w = solve_fw(&s, 500).unwrap().weights;
        let (diag, combined, bound) = lower_bound_chain(&s, &w).unwrap();
        assert_eq!(diag, vec![4.0, 1.0]);
        assert!((combined - 0.8).abs() < 1e-6);
        assert!((bound - 0.8).abs() < 1e-12);
        let min_diag = diag.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(min_diag >= combined - 1e-9 && combined >= bound - 1e-9);
    }

    #[test]
    fn positive_scaling_leaves_weights_unchanged() {
        let base = cov(3, &[2.0, 0.3, 0.1, 0.3, 1.5, 0.2, 0.1, 0.2, 1.0]);
        let w0 = solve_fw(&base, 500).unwrap().weights;
        for c in [0.1, 10.0] {
            let scaled: Vec<f64> = base.entries().iter().map(|x| c * x).collect();
            let s = cov(3, &scaled);
            let w = solve_fw(&s, 500).unwrap().weights;
            for (a, b) in w.as_slice().iter().zip(w0.as_slice()) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn solution_set_convexity_on_rank_one() {
        // all-ones rank-1: e1 and e2 are both optimal, and so is every
        // convex combination
        let s = cov(2, &[1.0, 1.0, 1.0, 1.0]);
        let f1 = linalg::quad_form(s.entries(), 2, &[1.0, 0.0]);
        for t in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let w = [t, 1.0 - t];
            let f = linalg::quad_form(s.entries(), 2, &w);
            assert!((f - f1).abs() < 1e-10);
        }
    }

    #[test]
    fn perturbation_identity_and_scaling() {
        use crate::image::{EstimateSet, Image};
        let s = cov(2, &[2.0, 0.3, 0.3, 1.0]);
        let clean = Image::constant(4, 4, 0.5).unwrap();
        let e1 = Image::constant(4, 4, 0.6).unwrap();
        let e2 = Image::constant(4, 4, 0.45).unwrap();
        let set = EstimateSet::new(
            vec![e1, e2],
            vec!["a".into(), "b".into()],
            clean.clone(),
        )
        .unwrap();
        let r = perturbation_check(&s, &s, &set, &clean).unwrap();
        assert!(r.delta.abs() < 1e-10);
        assert!(r.lhs.abs() < 1e-18);
        assert!(r.bound_holds);

        // positive scaling leaves the argmin unchanged: lhs = 0
        let scaled = cov(2, &s.entries().iter().map(|x| 3.0 * x).collect::<Vec<_>>());
        let r = perturbation_check(&s, &scaled, &set, &clean).unwrap();
        assert!(r.lhs.abs() < 1e-14);
        assert!(r.bound_holds);
    }
}
