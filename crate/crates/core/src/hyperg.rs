//! Closed-form Bayesian linear regression summaries under a hyper-g prior on
//! the coefficient scale (hyperparameter a = 3), a flat prior on the
//! intercept, and a scale-invariant prior on the error variance.
//!
//! With the response and predictors centered, everything conditional on the
//! g-prior scale is available in closed form, and the scale itself has a
//! one-dimensional posterior on (0, 1) after the substitution t = g/(1+g):
//!
//! ```text
//! p(t | y) ∝ (1-t)^((k+a-4)/2) (1 - t R²)^(-(n-1)/2),   t in (0, 1)
//! ```
//!
//! Posterior summaries are one-dimensional integrals of smooth functions of
//! t, evaluated by panelled Gauss-Legendre quadrature in log space with
//! adaptive refinement. The posterior mean of the coefficients is the
//! shrinkage mean E[t | y] times the least-squares fit, the error-variance
//! mean is linear in E[t | y], and the marginal likelihood is the normalizer.

use std::hash::{Hash, Hasher};
use std::sync::OnceLock;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::linmodel::{QrFactor, VarianceEstimates};

/// Hyper-g hyperparameter.
pub const HYPER_G_A: f64 = 3.0;

/// Convergence tolerance between successive quadrature refinements.
const QUAD_TOL: f64 = 1e-8;

/// Nodes per panel.
const QUAD_NODES: usize = 401;

/// Maximum number of panel doublings.
const QUAD_MAX_LEVEL: usize = 6;

/// Prior mean of g/(1+g) under the hyper-g prior with a = 3.
pub const PRIOR_SHRINKAGE_MEAN: f64 = 2.0 / 3.0;

/// Gauss-Legendre nodes and weights on [-1, 1], by Newton iteration on the
/// Legendre polynomial.
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Evaluate P_n and its derivative by recurrence.
            let mut p0 = 1.0;
            let mut p1 = x;
            for j in 2..=n {
                let jf = j as f64;
                let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn base_rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(QUAD_NODES))
}

/// Summaries of the one-dimensional posterior of t = g/(1+g).
#[derive(Debug, Clone, Copy)]
pub struct GPosterior {
    /// Log of the integral of the kernel times the prior constant (a-2)/2;
    /// this is the log Bayes factor of the model against the empty model.
    pub log_norm: f64,
    /// E[t | y].
    pub shrinkage_mean: f64,
}

/// Panel edges on (0, 1), geometrically refined toward t = 1 so the mesh
/// resolves the boundary layer the likelihood factor creates there. The
/// layer width is roughly `2 (1 - R^2) / ((n-1) R^2)`.
fn mesh_edges(n: usize, r2: f64) -> Vec<f64> {
    let scale = if r2 > 0.0 {
        (2.0 * (1.0 - r2).max(1e-18) / ((n as f64 - 1.0) * r2)).clamp(1e-15, 0.25)
    } else {
        0.25
    };
    let mut edges = vec![1.0];
    let mut width = scale;
    loop {
        let next = 1.0 - width;
        if next <= 0.25 {
            break;
        }
        edges.push(next);
        width *= 2.0;
    }
    edges.push(0.25);
    edges.push(0.0);
    edges.reverse();
    edges
}

/// Integrate the posterior kernel of t over a graded mesh, splitting each
/// base panel into `splits` equal parts, in log space.
fn panel_pass(n: usize, k: usize, r2: f64, edges: &[f64], splits: usize) -> GPosterior {
    let (nodes, weights) = base_rule();
    let c1 = (k as f64 + HYPER_G_A - 4.0) / 2.0;
    let c2 = -(n as f64 - 1.0) / 2.0;
    let mut max_log = f64::NEG_INFINITY;
    let mut logs: Vec<f64> = Vec::with_capacity(edges.len() * splits * QUAD_NODES);
    let mut ts: Vec<f64> = Vec::with_capacity(logs.capacity());
    for pair in edges.windows(2) {
        let h = (pair[1] - pair[0]) / splits as f64;
        for s in 0..splits {
            let lo = pair[0] + s as f64 * h;
            for (x, w) in nodes.iter().zip(weights) {
                let t = lo + 0.5 * h * (x + 1.0);
                let lf = c1 * (-t).ln_1p() + c2 * (-t * r2).ln_1p() + (0.5 * h * w).ln();
                if lf > max_log {
                    max_log = lf;
                }
                logs.push(lf);
                ts.push(t);
            }
        }
    }
    let mut z = 0.0;
    let mut tz = 0.0;
    for (lf, t) in logs.iter().zip(&ts) {
        let e = (lf - max_log).exp();
        z += e;
        tz += t * e;
    }
    GPosterior {
        log_norm: max_log + z.ln() + ((HYPER_G_A - 2.0) / 2.0).ln(),
        shrinkage_mean: tz / z,
    }
}

/// Evaluate the g-posterior summaries, doubling the mesh density until two
/// successive passes agree to within the tolerance.
/// Requires at least one predictor; the k = 0 case is analytic.
pub fn g_posterior(n: usize, k: usize, r2: f64) -> Result<GPosterior> {
    assert!(k >= 1, "the empty model has no g to integrate");
    let edges = mesh_edges(n, r2);
    let mut prev = panel_pass(n, k, r2, &edges, 1);
    let mut change = f64::INFINITY;
    for level in 1..=QUAD_MAX_LEVEL {
        let cur = panel_pass(n, k, r2, &edges, 1 << level);
        change = (cur.log_norm - prev.log_norm)
            .abs()
            .max((cur.shrinkage_mean - prev.shrinkage_mean).abs() / cur.shrinkage_mean.abs());
        if change <= QUAD_TOL {
            return Ok(cur);
        }
        prev = cur;
    }
    Err(Error::QuadratureNonConvergence { change })
}

/// Fixed-resolution evaluation (each base panel split `splits` times), for
/// use as a high-precision reference.
pub fn g_posterior_at_resolution(n: usize, k: usize, r2: f64, splits: usize) -> GPosterior {
    assert!(k >= 1);
    let edges = mesh_edges(n, r2);
    panel_pass(n, k, r2, &edges, splits)
}

/// Posterior summaries of one dataset's regression under the hyper-g prior.
#[derive(Debug, Clone)]
pub struct HyperGFit {
    /// Posterior means of the (standardized-scale) coefficients.
    pub beta_mean: DVector<f64>,
    pub intercept_mean: f64,
    /// Posterior mean of the error variance.
    pub sigma_sq_mean: f64,
    /// E[g/(1+g) | y], strictly inside (0, 1).
    pub shrinkage_mean: f64,
    /// Log marginal likelihood of the model.
    pub log_marginal: f64,
    pub n: usize,
    pub k: usize,
    pub r_squared: f64,
    /// Hash of the response this fit was computed on; marginal-likelihood
    /// comparisons are meaningful only between equal fingerprints.
    pub fingerprint: u64,
}

/// Log marginal likelihood of the intercept-only model.
pub(crate) fn null_log_marginal(n: usize, ycc: f64) -> f64 {
    let nf = n as f64;
    ln_gamma((nf - 1.0) / 2.0)
        - (nf - 1.0) / 2.0 * std::f64::consts::PI.ln()
        - 0.5 * nf.ln()
        - (nf - 1.0) / 2.0 * ycc.ln()
}

pub(crate) fn fingerprint_response(y: &DVector<f64>) -> u64 {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    y.len().hash(&mut h);
    for v in y.iter() {
        v.to_bits().hash(&mut h);
    }
    h.finish()
}

/// Fit summaries computed from sufficient statistics: the centered Gram
/// matrix, the centered cross-moment x'y, the centered response sum of
/// squares, and n. Returns posterior means and the log Bayes factor against
/// the intercept-only model (add [`null_log_marginal`] for the full value).
pub(crate) struct CoreFit {
    pub beta_mean: DVector<f64>,
    pub shrinkage_mean: f64,
    pub sigma_sq_mean: f64,
    pub log_bf: f64,
    pub r_squared: f64,
}

pub(crate) fn fit_from_moments(
    gram: &DMatrix<f64>,
    xy: &DVector<f64>,
    ycc: f64,
    n: usize,
) -> Result<CoreFit> {
    let k = gram.nrows();
    if n <= (k + 1).max(3) {
        return Err(Error::InvalidInput(format!(
            "need n > max(k+1, 3) observations, got n = {n}, k = {k}"
        )));
    }
    if ycc <= 0.0 {
        return Err(Error::InvalidInput("response is constant".into()));
    }
    let nf = n as f64;
    if k == 0 {
        return Ok(CoreFit {
            beta_mean: DVector::zeros(0),
            shrinkage_mean: PRIOR_SHRINKAGE_MEAN,
            sigma_sq_mean: ycc / (nf - 3.0),
            log_bf: 0.0,
            r_squared: 0.0,
        });
    }
    let chol: Cholesky<f64, Dyn> =
        Cholesky::new(gram.clone()).ok_or_else(|| Error::Singular {
            context: "centered Gram matrix (model may be rank deficient)".to_string(),
        })?;
    let bhat = chol.solve(xy);
    let r2 = (bhat.dot(xy) / ycc).clamp(0.0, 1.0);
    let post = g_posterior(n, k, r2)?;
    let shrink = post.shrinkage_mean;
    Ok(CoreFit {
        beta_mean: bhat * shrink,
        shrinkage_mean: shrink,
        sigma_sq_mean: ycc * (1.0 - r2 * shrink) / (nf - 3.0),
        log_bf: post.log_norm,
        r_squared: r2,
    })
}

/// Fit one dataset's regression. `x` holds the model's predictors without a
/// constant column (standardized within the dataset in the usual pipeline);
/// the intercept is handled by centering and integrates out flat.
pub fn hyperg_fit(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<HyperGFit> {
    let n = y.len();
    let k = x.ncols();
    if x.nrows() != n {
        return Err(Error::InvalidInput(format!(
            "design has {} rows but response has {n}",
            x.nrows()
        )));
    }
    let ybar = y.mean();
    let yc = y.add_scalar(-ybar);
    let ycc = yc.dot(&yc);

    // Center columns; already-centered input is unchanged.
    let mut xc = x.clone();
    for j in 0..k {
        let m = xc.column(j).mean();
        for i in 0..n {
            xc[(i, j)] -= m;
        }
    }
    let gram = xc.tr_mul(&xc);
    let xy = xc.tr_mul(&yc);
    let core = match fit_from_moments(&gram, &DVector::from_column_slice(xy.as_slice()), ycc, n) {
        Ok(core) => core,
        // Rerun the rank check through the pivoted factorization so the
        // error names the dependent column.
        Err(Error::Singular { context }) => {
            return Err(QrFactor::factor(&xc)
                .err()
                .unwrap_or(Error::Singular { context }))
        }
        Err(e) => return Err(e),
    };
    Ok(HyperGFit {
        beta_mean: core.beta_mean,
        intercept_mean: ybar,
        sigma_sq_mean: core.sigma_sq_mean,
        shrinkage_mean: core.shrinkage_mean,
        log_marginal: null_log_marginal(n, ycc) + core.log_bf,
        n,
        k,
        r_squared: core.r_squared,
        fingerprint: fingerprint_response(y),
    })
}

/// Plug-in variance estimates from two per-dataset fits.
///
/// The per-dataset error variances are the posterior means. The
/// coefficient-variation variance is the two-point sample variance of each
/// common coefficient's posterior means (divisor 2, no degrees-of-freedom
/// correction), averaged over the common coefficients:
/// `(1/k) Σ_l (b1_l - b0_l)^2 / 4`, and 0 when there are none.
///
/// `common` aligns the coefficients: each entry is (index into fit0's
/// coefficients, index into fit1's coefficients) for one common predictor.
pub fn estimate_variances(
    fit0: &HyperGFit,
    fit1: &HyperGFit,
    common: &[(usize, usize)],
) -> Result<VarianceEstimates> {
    let k = common.len();
    let mut eta = 0.0;
    for &(i0, i1) in common {
        if i0 >= fit0.beta_mean.len() || i1 >= fit1.beta_mean.len() {
            return Err(Error::InvalidInput(
                "common coefficient index out of range".into(),
            ));
        }
        let d = fit1.beta_mean[i1] - fit0.beta_mean[i0];
        eta += d * d / 4.0;
    }
    if k > 0 {
        eta /= k as f64;
    }
    VarianceEstimates::new(fit0.sigma_sq_mean, fit1.sigma_sq_mean, eta)
}

/// Difference of log marginal likelihoods of two models fit to the same
/// response. Only within-dataset differences are meaningful.
pub fn log_marginal_diff(fit_a: &HyperGFit, fit_b: &HyperGFit) -> Result<f64> {
    if fit_a.fingerprint != fit_b.fingerprint {
        return Err(Error::FingerprintMismatch);
    }
    Ok(fit_a.log_marginal - fit_b.log_marginal)
}
