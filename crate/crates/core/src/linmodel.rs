//! Deterministic linear algebra: least squares via pivoted Householder QR,
//! annihilator application, the two-step partitioned fit, and the closed-form
//! expected prediction errors for the (generalized) random-coefficients
//! setting.
//!
//! Everything here is exact given the inputs; no randomness. Traces are
//! computed from k-by-k Gram matrices of annihilated designs, never from
//! n-by-n projectors.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative pivot tolerance: a pivot below `RANK_TOL` times the largest pivot
/// marks the design as rank deficient.
pub const RANK_TOL: f64 = 1e-10;

/// Packed Householder QR with column pivoting of a tall matrix.
///
/// Reflectors are stored below the diagonal of `a`, the triangular factor on
/// and above it. `perm[i]` is the original column index of pivot column `i`.
pub(crate) struct QrFactor {
    a: DMatrix<f64>,
    tau: Vec<f64>,
    perm: Vec<usize>,
}

impl QrFactor {
    /// Factor `x`, failing with the index of the first dependent column when
    /// a pivot falls below `RANK_TOL` times the largest pivot.
    pub fn factor(x: &DMatrix<f64>) -> Result<Self> {
        let (n, d) = (x.nrows(), x.ncols());
        if d > n {
            return Err(Error::InvalidInput(format!(
                "design has more columns ({d}) than rows ({n})"
            )));
        }
        let mut a = x.clone();
        let mut tau = vec![0.0; d];
        let mut perm: Vec<usize> = (0..d).collect();
        let mut max_pivot = 0.0f64;

        for k in 0..d {
            // Pivot on the largest remaining column norm.
            let mut best = k;
            let mut best_norm = 0.0;
            for j in k..d {
                let norm = a.view((k, j), (n - k, 1)).norm();
                if norm > best_norm {
                    best_norm = norm;
                    best = j;
                }
            }
            if k == 0 {
                max_pivot = best_norm;
            }
            if best_norm <= RANK_TOL * max_pivot {
                return Err(Error::RankDeficient { column: perm[best] });
            }
            if best != k {
                a.swap_columns(k, best);
                perm.swap(k, best);
            }

            // Householder reflector for column k.
            let alpha = a[(k, k)];
            let norm = best_norm;
            let beta = -alpha.signum() * norm;
            let mut v = DVector::zeros(n - k);
            for i in 0..(n - k) {
                v[i] = a[(k + i, k)];
            }
            v[0] -= beta;
            let vnorm_sq = v.norm_squared();
            if vnorm_sq == 0.0 {
                tau[k] = 0.0;
                continue;
            }
            // Apply I - 2vv'/v'v to the trailing columns.
            for j in k..d {
                let mut dot = 0.0;
                for i in 0..(n - k) {
                    dot += v[i] * a[(k + i, j)];
                }
                let scale = 2.0 * dot / vnorm_sq;
                for i in 0..(n - k) {
                    a[(k + i, j)] -= scale * v[i];
                }
            }
            a[(k, k)] = beta;
            // Store the reflector (normalized so v[0] = 1) below the diagonal.
            let v0 = v[0];
            for i in 1..(n - k) {
                a[(k + i, k)] = v[i] / v0;
            }
            tau[k] = 2.0 * v0 * v0 / vnorm_sq;
        }
        Ok(Self { a, tau, perm })
    }

    fn dims(&self) -> (usize, usize) {
        (self.a.nrows(), self.a.ncols())
    }

    /// Apply Q' in place.
    fn apply_qt(&self, v: &mut DVector<f64>) {
        let (n, d) = self.dims();
        for k in 0..d {
            let mut dot = v[k];
            for i in 1..(n - k) {
                dot += self.a[(k + i, k)] * v[k + i];
            }
            let s = self.tau[k] * dot;
            v[k] -= s;
            for i in 1..(n - k) {
                v[k + i] -= s * self.a[(k + i, k)];
            }
        }
    }

    /// Apply Q in place.
    fn apply_q(&self, v: &mut DVector<f64>) {
        let (n, d) = self.dims();
        for k in (0..d).rev() {
            let mut dot = v[k];
            for i in 1..(n - k) {
                dot += self.a[(k + i, k)] * v[k + i];
            }
            let s = self.tau[k] * dot;
            v[k] -= s;
            for i in 1..(n - k) {
                v[k + i] -= s * self.a[(k + i, k)];
            }
        }
    }

    /// Least-squares solution in the original column order.
    pub fn solve_ls(&self, y: &DVector<f64>) -> DVector<f64> {
        let (_, d) = self.dims();
        let mut w = y.clone();
        self.apply_qt(&mut w);
        // Back substitution on the top d-by-d triangle.
        let mut z = DVector::zeros(d);
        for i in (0..d).rev() {
            let mut s = w[i];
            for j in (i + 1)..d {
                s -= self.a[(i, j)] * z[j];
            }
            z[i] = s / self.a[(i, i)];
        }
        let mut b = DVector::zeros(d);
        for i in 0..d {
            b[self.perm[i]] = z[i];
        }
        b
    }

    /// Residual of projecting `v` on the column span: `(I - Q1 Q1') v`.
    pub fn residualize(&self, v: &DVector<f64>) -> DVector<f64> {
        let (_, d) = self.dims();
        let mut w = v.clone();
        self.apply_qt(&mut w);
        for i in 0..d {
            w[i] = 0.0;
        }
        self.apply_q(&mut w);
        w
    }
}

/// Ordinary least squares. The design must have full column rank under the
/// pivoted-QR tolerance; the error names the first dependent column.
pub fn ols(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    if x.nrows() != y.len() {
        return Err(Error::InvalidInput(format!(
            "design has {} rows but response has {}",
            x.nrows(),
            y.len()
        )));
    }
    if x.ncols() == 0 {
        return Ok(DVector::zeros(0));
    }
    Ok(QrFactor::factor(x)?.solve_ls(y))
}

/// Apply the annihilator of `z` to every column of `a`, i.e. compute
/// `a - z (z'z)^-1 z' a` as column-wise least-squares residuals.
pub fn annihilate(z: &DMatrix<f64>, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if z.ncols() == 0 {
        return Ok(a.clone());
    }
    if z.nrows() != a.nrows() {
        return Err(Error::InvalidInput(format!(
            "annihilator rows {} do not match target rows {}",
            z.nrows(),
            a.nrows()
        )));
    }
    let qr = QrFactor::factor(z)?;
    let mut out = DMatrix::zeros(a.nrows(), a.ncols());
    for j in 0..a.ncols() {
        let col = DVector::from_column_slice(a.column(j).as_slice());
        out.set_column(j, &qr.residualize(&col));
    }
    Ok(out)
}

/// Two-step partitioned least squares: fit the common block on the
/// annihilated design, then the specific block on what is left. Equals the
/// joint least-squares fit on `[z x]`.
pub fn fw_fit(
    z: &DMatrix<f64>,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    if z.ncols() == 0 {
        return Ok((DVector::zeros(0), ols(x, y)?));
    }
    if x.ncols() == 0 {
        return Ok((ols(z, y)?, DVector::zeros(0)));
    }
    let zqr = QrFactor::factor(z)?;
    let x_tilde = annihilate(z, x)?;
    let beta = ols(&x_tilde, y)?;
    let alpha = zqr.solve_ls(&(y - x * &beta));
    Ok((alpha, beta))
}

/// Prepend a column of ones.
pub fn with_intercept(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let mut out = DMatrix::zeros(n, x.ncols() + 1);
    for i in 0..n {
        out[(i, 0)] = 1.0;
    }
    out.view_mut((0, 1), (n, x.ncols())).copy_from(x);
    out
}

/// Prediction direction: which dataset is being predicted (target) from a
/// model trained on the other (source).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    /// Predict dataset 0 from a model trained on dataset 1.
    ZeroFromOne,
    /// Predict dataset 1 from a model trained on dataset 0.
    OneFromZero,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::OneFromZero, Direction::ZeroFromOne];

    pub fn target(self) -> u8 {
        match self {
            Direction::ZeroFromOne => 0,
            Direction::OneFromZero => 1,
        }
    }

    pub fn source(self) -> u8 {
        1 - self.target()
    }

    pub fn flip(self) -> Self {
        match self {
            Direction::ZeroFromOne => Direction::OneFromZero,
            Direction::OneFromZero => Direction::ZeroFromOne,
        }
    }
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Direction::ZeroFromOne => write!(f, "S0|S1"),
            Direction::OneFromZero => write!(f, "S1|S0"),
        }
    }
}

/// The three variance parameters entering the error formulas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceEstimates {
    pub sigma0_sq: f64,
    pub sigma1_sq: f64,
    pub sigma_eta_sq: f64,
}

impl VarianceEstimates {
    pub fn new(sigma0_sq: f64, sigma1_sq: f64, sigma_eta_sq: f64) -> Result<Self> {
        for (name, v) in [
            ("sigma0_sq", sigma0_sq),
            ("sigma1_sq", sigma1_sq),
            ("sigma_eta_sq", sigma_eta_sq),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidInput(format!(
                    "{name} must be a nonnegative finite number, got {v}"
                )));
            }
        }
        Ok(Self {
            sigma0_sq,
            sigma1_sq,
            sigma_eta_sq,
        })
    }

    /// Error variance of dataset `j`.
    pub fn sigma_sq(&self, j: u8) -> f64 {
        if j == 0 {
            self.sigma0_sq
        } else {
            self.sigma1_sq
        }
    }
}

/// The three additive components of an expected squared prediction error.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ErrorBreakdown {
    pub direction: Direction,
    /// Irreducible target noise.
    pub term1: f64,
    /// Coefficient-variation penalty.
    pub term2: f64,
    /// Source estimation noise propagated through the designs.
    pub term3: f64,
    pub total: f64,
}

impl ErrorBreakdown {
    fn from_terms(direction: Direction, term1: f64, term2: f64, term3: f64) -> Self {
        Self {
            direction,
            term1,
            term2,
            term3,
            total: term1 + term2 + term3,
        }
    }
}

/// A choice of common predictors plus per-dataset specific predictors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelPair {
    common: Vec<usize>,
    specific0: Vec<usize>,
    specific1: Vec<usize>,
    pub intercept_in_common: bool,
    pub intercept_random: bool,
}

impl ModelPair {
    /// Build a pair, sorting the index sets. The common set must be disjoint
    /// from each specific set; the two specific sets may overlap.
    pub fn new(common: Vec<usize>, specific0: Vec<usize>, specific1: Vec<usize>) -> Result<Self> {
        let mut sets = [common, specific0, specific1];
        for set in &mut sets {
            set.sort_unstable();
            if set.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::InvalidInput("duplicate predictor index".into()));
            }
        }
        let [common, specific0, specific1] = sets;
        for spec in [&specific0, &specific1] {
            if spec.iter().any(|i| common.binary_search(i).is_ok()) {
                return Err(Error::InvalidInput(
                    "common and specific predictor sets must be disjoint".into(),
                ));
            }
        }
        Ok(Self {
            common,
            specific0,
            specific1,
            intercept_in_common: true,
            intercept_random: false,
        })
    }

    /// A pair with no specific predictors.
    pub fn common_only(common: Vec<usize>) -> Result<Self> {
        Self::new(common, Vec::new(), Vec::new())
    }

    pub fn with_intercept_random(mut self, value: bool) -> Self {
        self.intercept_random = value;
        self
    }

    pub fn with_intercept_in_common(mut self, value: bool) -> Self {
        self.intercept_in_common = value;
        self
    }

    pub fn common(&self) -> &[usize] {
        &self.common
    }

    pub fn specific(&self, j: u8) -> &[usize] {
        if j == 0 {
            &self.specific0
        } else {
            &self.specific1
        }
    }

    /// All predictors used by dataset `j`, sorted.
    pub fn union(&self, j: u8) -> Vec<usize> {
        let mut u: Vec<usize> = self.common.iter().chain(self.specific(j)).copied().collect();
        u.sort_unstable();
        u
    }

    pub fn validate_for(&self, n_predictors: usize) -> Result<()> {
        let all = self
            .common
            .iter()
            .chain(&self.specific0)
            .chain(&self.specific1);
        for &i in all {
            if i >= n_predictors {
                return Err(Error::InvalidInput(format!(
                    "predictor index {i} out of range (have {n_predictors})"
                )));
            }
        }
        Ok(())
    }
}

fn gram(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.tr_mul(m)
}

fn trace_solve(gram_s: &DMatrix<f64>, gram_t: &DMatrix<f64>, context: &str) -> Result<f64> {
    let k = gram_s.nrows();
    if k == 0 {
        return Ok(0.0);
    }
    let chol: Cholesky<f64, Dyn> = Cholesky::new(gram_s.clone()).ok_or_else(|| Error::Singular {
        context: context.to_string(),
    })?;
    Ok(chol.solve(gram_t).trace())
}

/// Precomputed linear coefficients of an error breakdown in the three
/// variances: `term1 = t1 * sigma_target^2`, `term2 = t2 * sigma_eta^2`,
/// `term3 = t3 * sigma_source^2`. Useful when the same model is evaluated at
/// many variance draws.
#[derive(Debug, Clone, Copy)]
pub struct PeTerms {
    pub direction: Direction,
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
}

impl PeTerms {
    /// Coefficients for the common-predictors-only setting. `x0` and `x1` are
    /// the full per-dataset designs including the constant column; `k` counts
    /// the non-constant common predictors (it enters only term 2).
    pub fn rcm(x0: &DMatrix<f64>, x1: &DMatrix<f64>, k: usize, direction: Direction) -> Result<Self> {
        let (xs, xt) = match direction.target() {
            0 => (x1, x0),
            _ => (x0, x1),
        };
        let n_t = xt.nrows() as f64;
        let tr = trace_solve(&gram(xs), &gram(xt), "source Gram matrix")?;
        Ok(Self {
            direction,
            t1: 1.0,
            t2: k as f64,
            t3: tr / n_t,
        })
    }

    /// Coefficients for the generalized setting. Designs are the standardized
    /// non-constant blocks; the constant regressor in the common block is
    /// accounted for through the `intercept_*` flags on the pair.
    pub fn grcm(
        pair: &ModelPair,
        data: &crate::dataio::StandardizedData,
        direction: Direction,
    ) -> Result<Self> {
        pair.validate_for(data.n_predictors())?;
        let t = direction.target();
        let s = direction.source();
        let (counts0, counts1) = data.counts();
        let n_of = |j: u8| if j == 0 { counts0 } else { counts1 };
        let n_t = n_of(t) as f64;
        let n_s = n_of(s) as f64;

        let c_t = data.design(t, pair.common());
        let c_s = data.design(s, pair.common());
        let w_t = data.design(t, pair.specific(t));
        let z_s = data.design(s, pair.specific(s));
        let xt_tilde = annihilate(&w_t, &c_t)?;
        let xs_tilde = annihilate(&z_s, &c_s)?;

        let k_t = pair.specific(t).len() as f64;
        let gram_t = gram(&xt_tilde);
        let mut t2 = gram_t.trace();
        if pair.intercept_random {
            t2 += n_t;
        }
        let mut t3 = trace_solve(&gram(&xs_tilde), &gram_t, "annihilated source Gram")?;
        if pair.intercept_in_common {
            t3 += n_t / n_s;
        }
        Ok(Self {
            direction,
            t1: (n_t - k_t) / n_t,
            t2: t2 / n_t,
            t3: t3 / n_t,
        })
    }

    /// Evaluate the breakdown at a set of variances.
    pub fn breakdown(&self, v: &VarianceEstimates) -> ErrorBreakdown {
        ErrorBreakdown::from_terms(
            self.direction,
            self.t1 * v.sigma_sq(self.direction.target()),
            self.t2 * v.sigma_eta_sq,
            self.t3 * v.sigma_sq(self.direction.source()),
        )
    }
}

/// Expected average squared prediction error when both datasets share the
/// same predictors and the whole coefficient vector is fit by least squares
/// on the source dataset.
pub fn pe_rcm(
    v: &VarianceEstimates,
    x0: &DMatrix<f64>,
    x1: &DMatrix<f64>,
    k: usize,
    direction: Direction,
) -> Result<ErrorBreakdown> {
    Ok(PeTerms::rcm(x0, x1, k, direction)?.breakdown(v))
}

/// Expected average squared prediction error for a model pair with specific
/// predictor blocks, fit by the two-step estimator (common block on the
/// annihilated source design, target-specific block refit on the target).
pub fn pe_grcm(
    v: &VarianceEstimates,
    pair: &ModelPair,
    data: &crate::dataio::StandardizedData,
    direction: Direction,
) -> Result<ErrorBreakdown> {
    Ok(PeTerms::grcm(pair, data, direction)?.breakdown(v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{standardize, TwoSetData};
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut impl Rng, n: usize, d: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal))
    }

    #[test]
    fn ols_intercept_is_mean() {
        let x = DMatrix::from_element(3, 1, 1.0);
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let b = ols(&x, &y).unwrap();
        assert_relative_eq!(b[0], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn ols_orthonormal_design() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let y = DVector::from_vec(vec![3.0, -2.0, 1.0, 4.0]);
        let b = ols(&x, &y).unwrap();
        assert_relative_eq!(b[0], 3.0, epsilon = 1e-12);
        assert_relative_eq!(b[1], -2.0, epsilon = 1e-12);
    }

    #[test]
    fn ols_matches_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_matrix(&mut rng, 20, 3);
        let y = DVector::from_fn(20, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        let b = ols(&x, &y).unwrap();
        let oracle = gram(&x)
            .cholesky()
            .unwrap()
            .solve(&x.tr_mul(&y.clone()));
        for i in 0..3 {
            assert_relative_eq!(b[i], oracle[(i, 0)], max_relative = 1e-8);
        }
        // residual orthogonality
        let resid = &y - &x * &b;
        let xr = x.tr_mul(&resid);
        assert!(xr.norm() / (x.norm() * y.norm()) < 1e-8);
    }

    #[test]
    fn ols_names_dependent_column() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut x = random_matrix(&mut rng, 12, 3);
        let dup = x.column(0).into_owned();
        x.set_column(2, &(dup * 2.0)); // column 2 = 2 * column 0
        let y = DVector::from_fn(12, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        match ols(&x, &y).unwrap_err() {
            Error::RankDeficient { column } => assert!(column == 0 || column == 2),
            e => panic!("unexpected error {e:?}"),
        }
    }

    #[test]
    fn annihilate_by_ones_demeans() {
        let z = DMatrix::from_element(2, 1, 1.0);
        let a = DMatrix::from_column_slice(2, 1, &[1.0, 3.0]);
        let out = annihilate(&z, &a).unwrap();
        assert_relative_eq!(out[(0, 0)], -1.0, epsilon = 1e-12);
        assert_relative_eq!(out[(1, 0)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn annihilate_kills_own_span_and_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z = random_matrix(&mut rng, 15, 3);
        let killed = annihilate(&z, &z).unwrap();
        assert!(killed.norm() < 1e-10 * z.norm());
        let a = random_matrix(&mut rng, 15, 2);
        let once = annihilate(&z, &a).unwrap();
        let twice = annihilate(&z, &once).unwrap();
        assert!((&twice - &once).norm() < 1e-10 * once.norm().max(1.0));
    }

    #[test]
    fn fw_fit_degenerate_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_matrix(&mut rng, 10, 2);
        let y = DVector::from_fn(10, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        let empty = DMatrix::zeros(10, 0);
        let (alpha, beta) = fw_fit(&empty, &x, &y).unwrap();
        assert_eq!(alpha.len(), 0);
        let direct = ols(&x, &y).unwrap();
        assert_relative_eq!((beta - direct).norm(), 0.0, epsilon = 1e-12);

        let (alpha, beta) = fw_fit(&x, &empty, &y).unwrap();
        assert_eq!(beta.len(), 0);
        let direct = ols(&x, &y).unwrap();
        assert_relative_eq!((alpha - direct).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn fw_fit_matches_joint_ols() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z = random_matrix(&mut rng, 30, 2);
        let x = random_matrix(&mut rng, 30, 3);
        let y = DVector::from_fn(30, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        let (alpha, beta) = fw_fit(&z, &x, &y).unwrap();
        let mut joint = DMatrix::zeros(30, 5);
        joint.view_mut((0, 0), (30, 2)).copy_from(&z);
        joint.view_mut((0, 2), (30, 3)).copy_from(&x);
        let b = ols(&joint, &y).unwrap();
        for i in 0..2 {
            assert_relative_eq!(alpha[i], b[i], max_relative = 1e-8);
        }
        for i in 0..3 {
            assert_relative_eq!(beta[i], b[2 + i], max_relative = 1e-8);
        }
    }

    fn var(s0: f64, s1: f64, eta: f64) -> VarianceEstimates {
        VarianceEstimates::new(s0, s1, eta).unwrap()
    }

    #[test]
    fn pe_rcm_intercept_only_geyser_sizes() {
        // Intercept-only designs with the bundled dataset sizes and the
        // published variance estimates.
        let x0 = DMatrix::from_element(77, 1, 1.0);
        let x1 = DMatrix::from_element(221, 1, 1.0);
        let v = var(0.032, 0.046, 0.0);
        let b = pe_rcm(&v, &x0, &x1, 0, Direction::ZeroFromOne).unwrap();
        assert_relative_eq!(b.term1, 0.032, epsilon = 1e-12);
        assert_relative_eq!(b.term2, 0.0, epsilon = 1e-15);
        assert_relative_eq!(b.term3, 0.046 / 221.0, epsilon = 1e-12);
        assert!((b.total - 0.032).abs() < 3e-4);
    }

    #[test]
    fn pe_rcm_identical_designs() {
        // sigma_eta = 0 and X_s = X_t with equal sizes: total =
        // sigma_t^2 + sigma_s^2 (k+1)/n.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 40;
        let k = 3;
        let raw = random_matrix(&mut rng, n, k);
        let mut both = DMatrix::zeros(2 * n, k);
        both.view_mut((0, 0), (n, k)).copy_from(&raw);
        both.view_mut((n, 0), (n, k)).copy_from(&raw);
        let data = TwoSetData::new(
            DVector::zeros(2 * n),
            both,
            (0..k).map(|i| format!("x{}", i + 1)).collect(),
            [vec![0u8; n], vec![1u8; n]].concat(),
        )
        .unwrap();
        let s = standardize(&data).unwrap();
        let x0 = with_intercept(&s.design(0, &[0, 1, 2]));
        let x1 = with_intercept(&s.design(1, &[0, 1, 2]));
        let v = var(0.8, 1.1, 0.0);
        let b = pe_rcm(&v, &x0, &x1, k, Direction::OneFromZero).unwrap();
        let expect = 1.1 + 0.8 * (k as f64 + 1.0) / n as f64;
        assert_relative_eq!(b.total, expect, max_relative = 1e-10);
    }

    #[test]
    fn pe_rcm_orthogonal_reduces_to_count_over_n() {
        // Orthogonal standardized predictors: term3 = k sigma_s^2 / n_s plus
        // the intercept share sigma_s^2 / n_s.
        let n0 = 32;
        let n1 = 48;
        let k = 2;
        // Build exactly orthogonal columns with mean 0 and mean square 1.
        let mut x0 = DMatrix::zeros(n0, k);
        let mut x1 = DMatrix::zeros(n1, k);
        for i in 0..n0 {
            x0[(i, 0)] = if i % 2 == 0 { 1.0 } else { -1.0 };
            x0[(i, 1)] = if (i / 2) % 2 == 0 { 1.0 } else { -1.0 };
        }
        for i in 0..n1 {
            x1[(i, 0)] = if i % 2 == 0 { 1.0 } else { -1.0 };
            x1[(i, 1)] = if (i / 2) % 2 == 0 { 1.0 } else { -1.0 };
        }
        let v = var(0.9, 0.4, 0.1);
        let b = pe_rcm(
            &v,
            &with_intercept(&x0),
            &with_intercept(&x1),
            k,
            Direction::OneFromZero,
        )
        .unwrap();
        let expect = (k as f64) * 0.9 / n0 as f64 + 0.9 / n0 as f64;
        assert_relative_eq!(b.term3, expect, max_relative = 1e-10);
    }

    fn random_standardized(
        rng: &mut impl Rng,
        n0: usize,
        n1: usize,
        p: usize,
    ) -> crate::dataio::StandardizedData {
        let n = n0 + n1;
        let x = random_matrix(rng, n, p);
        let y = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        let label = [vec![0u8; n0], vec![1u8; n1]].concat();
        let data =
            TwoSetData::new(y, x, (1..=p).map(|i| format!("x{i}")).collect(), label).unwrap();
        standardize(&data).unwrap()
    }

    #[test]
    fn pe_grcm_reduces_to_pe_rcm() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let s = random_standardized(&mut rng, 25, 35, 3);
            let v = var(
                0.1 + rng.gen::<f64>(),
                0.1 + rng.gen::<f64>(),
                rng.gen::<f64>(),
            );
            let pair = ModelPair::common_only(vec![0, 1, 2]).unwrap();
            for direction in Direction::BOTH {
                let g = pe_grcm(&v, &pair, &s, direction).unwrap();
                let x0 = with_intercept(&s.design(0, &[0, 1, 2]));
                let x1 = with_intercept(&s.design(1, &[0, 1, 2]));
                let r = pe_rcm(&v, &x0, &x1, 3, direction).unwrap();
                assert_relative_eq!(g.term1, r.term1, max_relative = 1e-12);
                assert_relative_eq!(g.term2, r.term2, max_relative = 1e-12);
                assert_relative_eq!(g.term3, r.term3, max_relative = 1e-12);
                assert_relative_eq!(g.total, r.total, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn pe_grcm_only_target_noise_survives() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s = random_standardized(&mut rng, 30, 30, 4);
        let pair = ModelPair::new(vec![0, 1], vec![2], vec![3]).unwrap();
        let v = var(0.0, 0.7, 0.0);
        let b = pe_grcm(&v, &pair, &s, Direction::OneFromZero).unwrap();
        let n_t = 30.0;
        assert_relative_eq!(b.total, (n_t - 1.0) / n_t * 0.7, max_relative = 1e-12);
    }

    #[test]
    fn pe_terms_direction_involution() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = random_standardized(&mut rng, 28, 22, 3);
        let pair = ModelPair::new(vec![0], vec![1], vec![2]).unwrap();
        let v = var(0.5, 0.9, 0.2);
        let d = Direction::OneFromZero;
        let b1 = pe_grcm(&v, &pair, &s, d).unwrap();
        let b2 = pe_grcm(&v, &pair, &s, d.flip().flip()).unwrap();
        assert_eq!(b1.term3, b2.term3);
        assert!(b1.term1 >= 0.0 && b1.term2 >= 0.0 && b1.term3 >= 0.0);
        assert_relative_eq!(b1.total, b1.term1 + b1.term2 + b1.term3, max_relative = 1e-12);
    }

    #[test]
    fn model_pair_rejects_overlap_with_common() {
        assert!(ModelPair::new(vec![0, 1], vec![1], vec![]).is_err());
        // the two specific sets may share predictors
        assert!(ModelPair::new(vec![0], vec![1], vec![1]).is_ok());
    }
}
