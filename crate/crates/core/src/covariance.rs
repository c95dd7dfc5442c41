//! The K x K error covariance matrix: construction from per-denoiser MSEs
//! and pairwise distances, PSD repair by eigenvalue truncation, and the 2x2
//! eigen-geometry used to reason about sparsity of the optimal weights.
//!
//! "Covariance" here is the second-moment matrix of denoiser errors, not the
//! mean-centered covariance: denoisers are biased estimators.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{mse_between, EstimateSet, Image};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    /// Built from ground-truth MSEs.
    Oracle,
    /// Built from estimated MSEs; may be indefinite.
    Estimated,
    /// Result of PSD projection.
    Repaired,
}

/// Symmetric K x K matrix of cross-denoiser error second moments, in the
/// per-pixel (divide-by-N) convention.
#[derive(Debug, Clone, PartialEq)]
pub struct CovMatrix {
    k: usize,
    entries: Vec<f64>,
    provenance: Provenance,
}

impl CovMatrix {
    /// Builds from a row-major buffer. Entries are mirrored from the upper
    /// triangle so storage is exactly symmetric; asymmetry beyond 1e-9
    /// relative is rejected.
    pub fn from_entries(k: usize, entries: Vec<f64>, provenance: Provenance) -> Result<CovMatrix> {
        if k == 0 {
            return Err(Error::InvalidParameter("covariance dimension must be >= 1".into()));
        }
        if entries.len() != k * k {
            return Err(Error::ShapeMismatch(format!(
                "entry buffer length {} != {k}x{k}",
                entries.len()
            )));
        }
        if entries.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerical("non-finite covariance entry".into()));
        }
        let scale = entries.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-300);
        let mut m = entries;
        for i in 0..k {
            for j in (i + 1)..k {
                let a = m[i * k + j];
                let b = m[j * k + i];
                if (a - b).abs() > 1e-9 * scale {
                    return Err(Error::InvalidParameter(format!(
                        "asymmetric covariance: ({i},{j})={a} vs ({j},{i})={b}"
                    )));
                }
                m[j * k + i] = a;
            }
        }
        Ok(CovMatrix { k, entries: m, provenance })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.k + j]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.k).map(|i| self.get(i, i)).collect()
    }

    pub fn trace(&self) -> f64 {
        self.diag().iter().sum()
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        let (vals, _) = linalg::jacobi_eigen(&self.entries, self.k)?;
        Ok(vals[0])
    }

    pub fn max_eigenvalue(&self) -> Result<f64> {
        let (vals, _) = linalg::jacobi_eigen(&self.entries, self.k)?;
        Ok(*vals.last().expect("k >= 1"))
    }

    /// Plain-text serialization: first line `K`, then K rows of K
    /// space-separated decimals with 17 significant digits.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{}", self.k).expect("write to String");
        for i in 0..self.k {
            let row: Vec<String> = (0..self.k).map(|j| format!("{:.16e}", self.get(i, j))).collect();
            writeln!(s, "{}", row.join(" ")).expect("write to String");
        }
        s
    }

    pub fn write_text(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())
            .map_err(|e| Error::Io { path: path.display().to_string(), source: e })
    }

    pub fn from_text(text: &str, provenance: Provenance) -> Result<CovMatrix> {
        let mut tokens = text.split_whitespace();
        let k: usize = tokens
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::Config("covariance file: missing dimension".into()))?;
        let mut entries = Vec::with_capacity(k * k);
        for t in tokens {
            let v: f64 = t
                .parse()
                .map_err(|_| Error::Config(format!("covariance file: bad entry '{t}'")))?;
            entries.push(v);
        }
        if entries.len() != k * k {
            return Err(Error::Config(format!(
                "covariance file: expected {} entries, found {}",
                k * k,
                entries.len()
            )));
        }
        CovMatrix::from_entries(k, entries, provenance)
    }
}

/// Builds the covariance from per-denoiser MSEs and pairwise mean squared
/// distances: `S_ii = mse_i`, `S_ij = (mse_i + mse_j - dist_ij) / 2`.
///
/// Off-diagonals are computed once and mirrored, so the result is exactly
/// symmetric regardless of where the MSEs came from.
pub fn build_covariance(
    mse: &[f64],
    pairwise_sq_dist: &[f64],
    provenance: Provenance,
) -> Result<CovMatrix> {
    let k = mse.len();
    if k == 0 {
        return Err(Error::InvalidParameter("empty MSE list".into()));
    }
    if provenance != Provenance::Estimated {
        // oracle diagonals are true MSEs and cannot be negative
        if let Some(bad) = mse.iter().find(|&&m| m < 0.0) {
            return Err(Error::InvalidParameter(format!("negative MSE entry {bad}")));
        }
    }
    if mse.iter().any(|m| !m.is_finite()) {
        return Err(Error::InvalidParameter("non-finite MSE entry".into()));
    }
    if pairwise_sq_dist.len() != k * k {
        return Err(Error::ShapeMismatch(format!(
            "distance matrix length {} != {k}x{k}",
            pairwise_sq_dist.len()
        )));
    }
    let scale = pairwise_sq_dist.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-300);
    for i in 0..k {
        if pairwise_sq_dist[i * k + i].abs() > 1e-12 * scale {
            return Err(Error::InvalidParameter("distance matrix has nonzero diagonal".into()));
        }
        for j in (i + 1)..k {
            let a = pairwise_sq_dist[i * k + j];
            let b = pairwise_sq_dist[j * k + i];
            if a < 0.0 || b < 0.0 {
                return Err(Error::InvalidParameter("negative pairwise distance".into()));
            }
            if (a - b).abs() > 1e-9 * scale {
                return Err(Error::InvalidParameter(format!(
                    "asymmetric distance matrix at ({i},{j})"
                )));
            }
        }
    }
    let mut entries = vec![0.0; k * k];
    for i in 0..k {
        entries[i * k + i] = mse[i];
        for j in (i + 1)..k {
            let s = (mse[i] + mse[j] - pairwise_sq_dist[i * k + j]) / 2.0;
            entries[i * k + j] = s;
            entries[j * k + i] = s;
        }
    }
    CovMatrix::from_entries(k, entries, provenance)
}

/// Pairwise per-pixel squared distances `||zhat_i - zhat_j||^2 / N` between
/// the estimates; symmetric with zero diagonal. Needs no ground truth.
pub fn pairwise_sq_dist(set: &EstimateSet) -> Vec<f64> {
    let k = set.k();
    let mut d = vec![0.0; k * k];
    for i in 0..k {
        for j in (i + 1)..k {
            let dist = mse_between(&set.estimates()[i], &set.estimates()[j])
                .expect("estimates share shape by EstimateSet invariant");
            d[i * k + j] = dist;
            d[j * k + i] = dist;
        }
    }
    d
}

/// Direct oracle covariance `(zhat_i - z)^T (zhat_j - z) / N` for a single
/// realization; the independent route the Sigma_ij identity is checked
/// against.
pub fn oracle_covariance(set: &EstimateSet, clean: &Image) -> Result<CovMatrix> {
    let k = set.k();
    if !clean.same_shape(set.source_noisy()) {
        return Err(Error::ShapeMismatch("clean image shape differs from estimates".into()));
    }
    let n = clean.len() as f64;
    let errors: Vec<Vec<f64>> = set
        .estimates()
        .iter()
        .map(|e| e.pixels().iter().zip(clean.pixels()).map(|(a, z)| a - z).collect())
        .collect();
    let mut entries = vec![0.0; k * k];
    for i in 0..k {
        for j in i..k {
            let s: f64 = errors[i].iter().zip(&errors[j]).map(|(a, b)| a * b).sum::<f64>() / n;
            entries[i * k + j] = s;
            entries[j * k + i] = s;
        }
    }
    CovMatrix::from_entries(k, entries, Provenance::Oracle)
}

/// Frobenius-nearest PSD matrix: eigendecompose, zero out negative
/// eigenvalues, reconstruct.
pub fn psd_project(sigma_tilde: &CovMatrix) -> Result<CovMatrix> {
    let k = sigma_tilde.k;
    let (vals, vecs) = linalg::jacobi_eigen(&sigma_tilde.entries, k)?;
    let clamped: Vec<f64> = vals.iter().map(|&l| l.max(0.0)).collect();
    let entries = linalg::reconstruct(&clamped, &vecs, k);
    CovMatrix::from_entries(k, entries, Provenance::Repaired)
}

/// Eigen-structure of a 2x2 covariance.
///
/// `minor_value <= major_value` are the eigenvalues. `minor_axis` is the
/// minor axis of the level-set ellipse of `w^T S w`, which belongs to the
/// *major* eigenvalue; `major_axis` belongs to the minor eigenvalue. When
/// `S_12 > 0` the minor axis points northeast (both components positive) and
/// the major axis northwest.
#[derive(Debug, Clone, PartialEq)]
pub struct Eigen2x2 {
    pub minor_value: f64,
    pub major_value: f64,
    pub minor_axis: [f64; 2],
    pub major_axis: [f64; 2],
}

impl Eigen2x2 {
    /// Genuine eigenpairs: `(minor_value, major_axis)` and
    /// `(major_value, minor_axis)`.
    pub fn eigenpairs(&self) -> [(f64, [f64; 2]); 2] {
        [(self.minor_value, self.major_axis), (self.major_value, self.minor_axis)]
    }
}

/// Closed-form eigendecomposition of a 2x2 covariance with the discriminant
/// `sqrt((S_11 - S_22)^2 + 4 S_12^2)`.
pub fn eigen_2x2(sigma: &CovMatrix) -> Result<Eigen2x2> {
    if sigma.k != 2 {
        return Err(Error::ShapeMismatch(format!("eigen_2x2 needs K=2, got K={}", sigma.k)));
    }
    let a = sigma.get(0, 0);
    let b = sigma.get(0, 1);
    let c = sigma.get(1, 1);
    let lambda = ((a - c) * (a - c) + 4.0 * b * b).sqrt();
    let minor_value = 0.5 * (a + c - lambda);
    let major_value = 0.5 * (a + c + lambda);

    // Eigenvector of the major eigenvalue; (a - c + lambda) >= 0 always, so
    // for b > 0 both components are positive (northeast).
    let mut v = if b != 0.0 {
        [a - c + lambda, 2.0 * b]
    } else if a >= c {
        [1.0, 0.0]
    } else {
        [0.0, 1.0]
    };
    let norm = (v[0] * v[0] + v[1] * v[1]).sqrt();
    if norm == 0.0 {
        // a == c and b == 0: isotropic, any basis works
        v = [1.0, 0.0];
    } else {
        v = [v[0] / norm, v[1] / norm];
    }
    // canonical sign: larger-magnitude component positive
    if (v[0].abs() >= v[1].abs() && v[0] < 0.0) || (v[1].abs() > v[0].abs() && v[1] < 0.0) {
        v = [-v[0], -v[1]];
    }
    // orthogonal complement: northeast minor axis gives a northwest major axis
    let u = [-v[1], v[0]];
    Ok(Eigen2x2 { minor_value, major_value, minor_axis: v, major_axis: u })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{add_noise, synthetic_image, NoiseModel};

    fn cov(k: usize, entries: &[f64]) -> CovMatrix {
        CovMatrix::from_entries(k, entries.to_vec(), Provenance::Oracle).unwrap()
    }

    #[test]
    fn build_covariance_hand_case() {
        // mse=(4,1), dist=5 -> off-diagonal (4+1-5)/2 = 0
        let dist = vec![0.0, 5.0, 5.0, 0.0];
        let s = build_covariance(&[4.0, 1.0], &dist, Provenance::Oracle).unwrap();
        assert_eq!(s.entries(), &[4.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn build_covariance_identical_estimates_rank_one() {
        let dist = vec![0.0, 0.0, 0.0, 0.0];
        let m = 0.7;
        let s = build_covariance(&[m, m], &dist, Provenance::Oracle).unwrap();
        assert_eq!(s.entries(), &[m, m, m, m]);
        assert!(s.min_eigenvalue().unwrap().abs() <= 1e-10 * s.trace());
    }

    #[test]
    fn build_covariance_rejections() {
        let dist = vec![0.0, 1.0, 1.0, 0.0];
        assert!(build_covariance(&[-1.0, 1.0], &dist, Provenance::Oracle).is_err());
        let asym = vec![0.0, 1.0, 2.0, 0.0];
        assert!(build_covariance(&[1.0, 1.0], &asym, Provenance::Oracle).is_err());
        let baddiag = vec![0.5, 1.0, 1.0, 0.0];
        assert!(build_covariance(&[1.0, 1.0], &baddiag, Provenance::Oracle).is_err());
    }

    #[test]
    fn sigma_ij_identity_matches_direct_inner_product() {
        // the construction is an algebraic identity per realization
        let clean = synthetic_image(16, 16);
        let noisy = add_noise(&clean, &NoiseModel { sigma255: 25.0, clipped: false, seed: 7 }).unwrap();
        let e1 = add_noise(&clean, &NoiseModel { sigma255: 10.0, clipped: false, seed: 8 }).unwrap();
        let e2 = add_noise(&clean, &NoiseModel { sigma255: 18.0, clipped: false, seed: 9 }).unwrap();
        let e3 = add_noise(&clean, &NoiseModel { sigma255: 5.0, clipped: false, seed: 10 }).unwrap();
        let set = EstimateSet::new(
            vec![e1, e2, e3],
            vec!["a".into(), "b".into(), "c".into()],
            noisy,
        )
        .unwrap();
        let direct = oracle_covariance(&set, &clean).unwrap();
        let mse: Vec<f64> = set
            .estimates()
            .iter()
            .map(|e| mse_between(e, &clean).unwrap())
            .collect();
        let via_identity =
            build_covariance(&mse, &pairwise_sq_dist(&set), Provenance::Oracle).unwrap();
        for (a, b) in direct.entries().iter().zip(via_identity.entries()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn psd_project_worked_case() {
        // [[1,2],[2,1]] has eigenvalues 3 and -1
        let s = cov(2, &[1.0, 2.0, 2.0, 1.0]);
        let p = psd_project(&s).unwrap();
        for (x, want) in p.entries().iter().zip(&[1.5, 1.5, 1.5, 1.5]) {
            assert!((x - want).abs() < 1e-10);
        }
        assert_eq!(p.provenance(), Provenance::Repaired);
        assert!(p.min_eigenvalue().unwrap() >= -1e-10);
    }

    #[test]
    fn psd_project_idempotent_on_psd() {
        let s = cov(2, &[2.0, 0.5, 0.5, 1.0]);
        let p = psd_project(&s).unwrap();
        for (a, b) in p.entries().iter().zip(s.entries()) {
            assert!((a - b).abs() < 1e-10);
        }
        let z = cov(3, &[0.0; 9]);
        let pz = psd_project(&z).unwrap();
        assert!(pz.entries().iter().all(|&x| x.abs() < 1e-14));
    }

    #[test]
    fn psd_project_is_frobenius_nearest_on_random_sample() {
        use rand::{Rng, SeedableRng};
        let s = cov(2, &[1.0, 2.0, 2.0, 1.0]);
        let p = psd_project(&s).unwrap();
        let dist_p: f64 = p
            .entries()
            .iter()
            .zip(s.entries())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        // truncating the eigenvalue -1 moves the matrix by |-1| in Frobenius
        assert!((dist_p - 1.0).abs() < 1e-10);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for _ in 0..1000 {
            // random PSD of matching scale: G^T G normalized
            let g: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.5..1.5)).collect();
            let cand = [
                g[0] * g[0] + g[2] * g[2],
                g[0] * g[1] + g[2] * g[3],
                g[0] * g[1] + g[2] * g[3],
                g[1] * g[1] + g[3] * g[3],
            ];
            let d: f64 = cand
                .iter()
                .zip(s.entries())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            assert!(d >= dist_p - 1e-12);
        }
    }

    #[test]
    fn eigen_2x2_hand_case() {
        // [[2,1],[1,2]]: eigenvalues 1 and 3 from the characteristic
        // polynomial; northeast minor axis, northwest major axis
        let s = cov(2, &[2.0, 1.0, 1.0, 2.0]);
        let e = eigen_2x2(&s).unwrap();
        assert!((e.minor_value - 1.0).abs() < 1e-12);
        assert!((e.major_value - 3.0).abs() < 1e-12);
        let inv_sqrt2 = 1.0 / 2.0f64.sqrt();
        assert!((e.minor_axis[0] - inv_sqrt2).abs() < 1e-12);
        assert!((e.minor_axis[1] - inv_sqrt2).abs() < 1e-12);
        assert!((e.major_axis[0] + inv_sqrt2).abs() < 1e-12);
        assert!((e.major_axis[1] - inv_sqrt2).abs() < 1e-12);
    }

    #[test]
    fn eigen_2x2_diagonal() {
        let s = cov(2, &[1.0, 0.0, 0.0, 4.0]);
        let e = eigen_2x2(&s).unwrap();
        assert_eq!(e.minor_value, 1.0);
        assert_eq!(e.major_value, 4.0);
        assert_eq!(e.minor_axis, [0.0, 1.0]);
    }

    #[test]
    fn eigen_2x2_rejects_other_sizes() {
        let s = cov(3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        assert!(eigen_2x2(&s).is_err());
    }

    #[test]
    fn eigen_2x2_property_sweep_against_jacobi() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        for _ in 0..1000 {
            // random PD with positive off-diagonal
            let b: f64 = rng.gen_range(0.01..1.0);
            let a: f64 = rng.gen_range(0.0..2.0) + b;
            let c: f64 = rng.gen_range(0.0..2.0) + b;
            let s = cov(2, &[a, b, b, c]);
            let e = eigen_2x2(&s).unwrap();
            // sign pattern
            assert!(e.minor_axis[0] > 0.0 && e.minor_axis[1] > 0.0);
            assert!(e.major_axis[0] * e.major_axis[1] < 0.0);
            // eigenpairs agree with the general solver
            let (vals, _) = linalg::jacobi_eigen(s.entries(), 2).unwrap();
            assert!((vals[0] - e.minor_value).abs() < 1e-8);
            assert!((vals[1] - e.major_value).abs() < 1e-8);
            for (val, vec) in e.eigenpairs() {
                let sv = [
                    s.get(0, 0) * vec[0] + s.get(0, 1) * vec[1],
                    s.get(1, 0) * vec[0] + s.get(1, 1) * vec[1],
                ];
                assert!((sv[0] - val * vec[0]).abs() < 1e-8);
                assert!((sv[1] - val * vec[1]).abs() < 1e-8);
            }
            // orthonormal within 1e-9
            let dot = e.minor_axis[0] * e.major_axis[0] + e.minor_axis[1] * e.major_axis[1];
            assert!(dot.abs() < 1e-9);
            // reconstruction
            let r00 = e.major_value * e.minor_axis[0] * e.minor_axis[0]
                + e.minor_value * e.major_axis[0] * e.major_axis[0];
            let r01 = e.major_value * e.minor_axis[0] * e.minor_axis[1]
                + e.minor_value * e.major_axis[0] * e.major_axis[1];
            let r11 = e.major_value * e.minor_axis[1] * e.minor_axis[1]
                + e.minor_value * e.major_axis[1] * e.major_axis[1];
            assert!((r00 - a).abs() < 1e-8 && (r01 - b).abs() < 1e-8 && (r11 - c).abs() < 1e-8);
        }
    }

    #[test]
    fn text_roundtrip() {
        let s = cov(2, &[0.123456789012345, 0.01, 0.01, 0.9]);
        let t = s.to_text();
        let back = CovMatrix::from_text(&t, Provenance::Oracle).unwrap();
        assert_eq!(s.entries(), back.entries());
    }
}
