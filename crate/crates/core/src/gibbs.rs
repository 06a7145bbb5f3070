//! Markov chain Monte Carlo for the generalized random-coefficients model
//! with a half standard Cauchy prior on the coefficient-variation scale.
//!
//! The model couples the two datasets through the random-coefficients
//! structure on the intercept and the common block:
//!
//! ```text
//! y_j = Z_j a_j + xi_j 1 + X_j b_j + e_j,    e_j ~ N(0, s_j^2 I)
//! (xi_1, b_1) = (xi_0, b_0) + eta,           eta ~ N(0, s_eta^2 I)
//! ```
//!
//! Priors: a joint g-prior with scale g_j on (a_j, b_j), hyper-g (a = 3) on
//! each g_j, flat intercepts, s_j^-2 on the error variances, and half
//! standard Cauchy on s_eta via the inverse-gamma mixture with an auxiliary
//! variable: U ~ IG(1/2, 1), s_eta^2 | U ~ IG(1/2, 1/U).
//!
//! The chain is a systematic scan: coefficients of dataset 0, coefficients
//! of dataset 1, the two error variances, the two g scales (Metropolis-
//! Hastings with an inverse-gamma proposal), then s_eta^2 and U. Designs are
//! expected to be standardized (centered) within each dataset.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::dataio::StandardizedData;
use crate::error::{Error, Result};
use crate::hyperg::HYPER_G_A;
use crate::linmodel::{with_intercept, Direction, ModelPair, PeTerms, QrFactor, VarianceEstimates};
use crate::rng::rng_from_seed;

/// Guard for an exactly-zero residual sum of squares, which only occurs with
/// degenerate fixtures.
const SCALE_FLOOR: f64 = 1e-300;

/// One state of the chain.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub xi: [f64; 2],
    pub alpha: [DVector<f64>; 2],
    pub beta: [DVector<f64>; 2],
    pub sigma_sq: [f64; 2],
    pub g: [f64; 2],
    pub sigma_eta_sq: f64,
    pub u: f64,
}

impl ChainState {
    /// Coefficient-variation sum of squares across the intercepts and the
    /// common blocks.
    fn s_eta(&self) -> f64 {
        let dxi = self.xi[1] - self.xi[0];
        dxi * dxi + (&self.beta[1] - &self.beta[0]).norm_squared()
    }
}

/// Retained draws plus run metadata.
#[derive(Debug, Clone)]
pub struct PosteriorDraws {
    pub states: Vec<ChainState>,
    pub iters: usize,
    pub burnin: usize,
    pub seed: u64,
    pub accepted_g: [usize; 2],
    pub attempted_g: [usize; 2],
    pub warnings: Vec<String>,
}

impl PosteriorDraws {
    /// Metropolis-Hastings acceptance rate for the scale of dataset `j`,
    /// when that step ran at all.
    pub fn acceptance_rate(&self, j: usize) -> Option<f64> {
        (self.attempted_g[j] > 0).then(|| self.accepted_g[j] as f64 / self.attempted_g[j] as f64)
    }

    /// Dump retained draws as CSV, one row per iteration, columns named
    /// after the state fields.
    pub fn write_csv<W: std::io::Write>(&self, out: &mut W) -> std::io::Result<()> {
        let (q0, q1, k) = match self.states.first() {
            Some(s) => (s.alpha[0].len(), s.alpha[1].len(), s.beta[0].len()),
            None => return Ok(()),
        };
        let mut header = vec!["xi0".to_string(), "xi1".to_string()];
        header.extend((1..=q0).map(|i| format!("alpha0_{i}")));
        header.extend((1..=q1).map(|i| format!("alpha1_{i}")));
        header.extend((1..=k).map(|i| format!("beta0_{i}")));
        header.extend((1..=k).map(|i| format!("beta1_{i}")));
        header.extend(
            ["sigma0_sq", "sigma1_sq", "g0", "g1", "sigma_eta_sq", "u"]
                .iter()
                .map(|s| s.to_string()),
        );
        writeln!(out, "{}", header.join(","))?;
        for s in &self.states {
            let mut fields = vec![format!("{:.17e}", s.xi[0]), format!("{:.17e}", s.xi[1])];
            for j in 0..2 {
                fields.extend(s.alpha[j].iter().map(|v| format!("{v:.17e}")));
            }
            for j in 0..2 {
                fields.extend(s.beta[j].iter().map(|v| format!("{v:.17e}")));
            }
            for v in [
                s.sigma_sq[0],
                s.sigma_sq[1],
                s.g[0],
                s.g[1],
                s.sigma_eta_sq,
                s.u,
            ] {
                fields.push(format!("{v:.17e}"));
            }
            writeln!(out, "{}", fields.join(","))?;
        }
        Ok(())
    }
}

/// Per-model sufficient statistics, fixed for the whole run.
#[derive(Debug, Clone)]
pub struct GibbsModel {
    pub n: [usize; 2],
    q: [usize; 2],
    k: usize,
    /// Gram matrix of the stacked design `[Z_j X_j]`.
    lambda_inv: [DMatrix<f64>; 2],
    /// Gram matrix of the common block alone.
    common_gram: [DMatrix<f64>; 2],
    /// `[Z_j X_j]' y_j`.
    dy: [DVector<f64>; 2],
    /// Column sums of `[Z_j X_j]` (zero for centered designs; kept so the
    /// residual identity stays exact for arbitrary inputs).
    colsum: [DVector<f64>; 2],
    ybar: [f64; 2],
    yy: [f64; 2],
}

impl GibbsModel {
    pub fn new(pair: &ModelPair, data: &StandardizedData) -> Result<Self> {
        pair.validate_for(data.n_predictors())?;
        let build = |j: u8| -> Result<_> {
            let z = data.design(j, pair.specific(j));
            let x = data.design(j, pair.common());
            let y = data.response(j);
            let n = y.len();
            let q = z.ncols();
            let k = x.ncols();
            let mut d = DMatrix::zeros(n, q + k);
            d.view_mut((0, 0), (n, q)).copy_from(&z);
            d.view_mut((0, q), (n, k)).copy_from(&x);
            // identifiability check on [1 Z X]
            QrFactor::factor(&with_intercept(&d))?;
            let lambda_inv = d.tr_mul(&d);
            let common_gram = x.tr_mul(&x);
            let dy = d.tr_mul(&y);
            let ones = DVector::from_element(n, 1.0);
            let colsum = d.tr_mul(&ones);
            Ok((n, q, lambda_inv, common_gram, dy, colsum, y.mean(), y.dot(&y)))
        };
        let (n0, q0, l0, g0, dy0, cs0, yb0, yy0) = build(0)?;
        let (n1, q1, l1, g1, dy1, cs1, yb1, yy1) = build(1)?;
        Ok(Self {
            n: [n0, n1],
            q: [q0, q1],
            k: pair.common().len(),
            lambda_inv: [l0, l1],
            common_gram: [g0, g1],
            dy: [dy0, dy1],
            colsum: [cs0, cs1],
            ybar: [yb0, yb1],
            yy: [yy0, yy1],
        })
    }

    pub fn k_common(&self) -> usize {
        self.k
    }

    /// Residual sum of squares of dataset `j` at a state, from the Gram
    /// identity (no pass over the observations).
    fn resid_ss(&self, state: &ChainState, j: usize) -> f64 {
        let n = self.n[j] as f64;
        let theta_alpha = &state.alpha[j];
        let theta_beta = &state.beta[j];
        let mut theta = DVector::zeros(self.q[j] + self.k);
        theta.rows_mut(0, self.q[j]).copy_from(theta_alpha);
        theta.rows_mut(self.q[j], self.k).copy_from(theta_beta);
        let xi = state.xi[j];
        let quad = theta.dot(&(&self.lambda_inv[j] * &theta));
        self.yy[j] - 2.0 * xi * n * self.ybar[j] + n * xi * xi - 2.0 * theta.dot(&self.dy[j])
            + 2.0 * xi * theta.dot(&self.colsum[j])
            + quad
    }
}

/// Parameters of the Gaussian full conditional of `(xi_j, alpha_j, beta_j)`
/// given the other dataset's intercept and common coefficients: the mean
/// vector and the covariance matrix, intercept coordinate first.
pub fn fc_coef_params(
    model: &GibbsModel,
    state: &ChainState,
    j: usize,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (mean, chol) = coef_conditional(model, state, j)?;
    let d = mean.len() - 1;
    let mut cov = DMatrix::zeros(d + 1, d + 1);
    let prec_xi = 1.0 / state.sigma_eta_sq + model.n[j] as f64 / state.sigma_sq[j];
    cov[(0, 0)] = 1.0 / prec_xi;
    let inner = chol.inverse();
    cov.view_mut((1, 1), (d, d)).copy_from(&inner);
    Ok((mean, cov))
}

/// Mean and the Cholesky factor of the (alpha, beta)-block precision. The
/// intercept block is scalar and carried in the mean's first coordinate.
fn coef_conditional(
    model: &GibbsModel,
    state: &ChainState,
    j: usize,
) -> Result<(DVector<f64>, Cholesky<f64, Dyn>)> {
    let n = model.n[j] as f64;
    let q = model.q[j];
    let k = model.k;
    let d = q + k;
    let sig = state.sigma_sq[j];
    let eta = state.sigma_eta_sq;
    let other = 1 - j;

    let prec_xi = 1.0 / eta + n / sig;
    let mean_xi = (state.xi[other] / eta + n * model.ybar[j] / sig) / prec_xi;

    // (1 + 1/g) / sigma^2 * D'D  +  blockdiag(0, I/eta)
    let mut prec = &model.lambda_inv[j] * ((1.0 + 1.0 / state.g[j]) / sig);
    for i in 0..k {
        prec[(q + i, q + i)] += 1.0 / eta;
    }
    let chol = Cholesky::new(prec).ok_or_else(|| Error::Singular {
        context: format!("coefficient conditional precision for dataset {j}"),
    })?;
    let mut rhs = &model.dy[j] / sig;
    for i in 0..k {
        rhs[q + i] += state.beta[other][i] / eta;
    }
    let inner_mean = chol.solve(&rhs);

    let mut mean = DVector::zeros(d + 1);
    mean[0] = mean_xi;
    mean.rows_mut(1, d).copy_from(&inner_mean);
    Ok((mean, chol))
}

/// Shape and scale of the inverse-gamma full conditional of `sigma_j^2`:
/// `(n_j / 2, e_j' e_j / 2)` with `e_j` the current residual vector.
pub fn fc_sigma2_params(model: &GibbsModel, state: &ChainState, j: usize) -> (f64, f64) {
    let ss = model.resid_ss(state, j).max(0.0);
    (model.n[j] as f64 / 2.0, ss / 2.0)
}

/// Shape and scale of the inverse-gamma full conditional of `sigma_eta^2`:
/// `((k+2)/2, S_eta/2 + 1/U)` where `S_eta` sums the squared intercept and
/// common-coefficient differences.
pub fn fc_sigma_eta2_params(state: &ChainState) -> (f64, f64) {
    let k = state.beta[0].len() as f64;
    ((k + 2.0) / 2.0, state.s_eta() / 2.0 + 1.0 / state.u)
}

/// Shape and scale of the inverse-gamma full conditional of the auxiliary
/// variable: `(1, 1 + sigma_eta^-2)`.
pub fn fc_u_params(state: &ChainState) -> (f64, f64) {
    (1.0, 1.0 + 1.0 / state.sigma_eta_sq)
}

fn sample_inv_gamma(rng: &mut ChaCha8Rng, shape: f64, scale: f64) -> f64 {
    let scale = scale.max(SCALE_FLOOR);
    let gamma = Gamma::new(shape, 1.0 / scale).expect("valid gamma parameters");
    1.0 / gamma.sample(rng)
}

/// One Metropolis-Hastings update of `g_j`.
///
/// The target is the g-prior full conditional
/// `g^(-k/2) (1+g)^(-a/2) exp(-c/g)` with `c = b' X'X b / (2 s^2)`; the
/// proposal is the independence draw `IG(k/2, c)`. The acceptance ratio is
/// `(g*/g) ((1+g*)/(1+g))^(-a/2)`. Skipped when the common block is empty.
pub fn mh_step_g(
    model: &GibbsModel,
    state: &ChainState,
    j: usize,
    rng: &mut ChaCha8Rng,
) -> (f64, bool) {
    let k = model.k;
    if k == 0 {
        return (state.g[j], false);
    }
    let beta = &state.beta[j];
    let c = beta.dot(&(&model.common_gram[j] * beta)) / (2.0 * state.sigma_sq[j]);
    let proposal = sample_inv_gamma(rng, k as f64 / 2.0, c);
    let log_ratio = proposal.ln() - state.g[j].ln()
        - (HYPER_G_A / 2.0) * ((1.0 + proposal).ln() - (1.0 + state.g[j]).ln());
    if rng.gen::<f64>().ln() < log_ratio.min(0.0) {
        (proposal, true)
    } else {
        (state.g[j], false)
    }
}

fn ols_init(model: &GibbsModel, data: &StandardizedData, pair: &ModelPair, j: u8) -> Result<(f64, DVector<f64>, DVector<f64>, f64)> {
    let z = data.design(j, pair.specific(j));
    let x = data.design(j, pair.common());
    let y = data.response(j);
    let n = y.len();
    let q = z.ncols();
    let k = x.ncols();
    let mut full = DMatrix::zeros(n, 1 + q + k);
    for i in 0..n {
        full[(i, 0)] = 1.0;
    }
    full.view_mut((0, 1), (n, q)).copy_from(&z);
    full.view_mut((0, 1 + q), (n, k)).copy_from(&x);
    let sol = crate::linmodel::ols(&full, &y)?;
    let resid = &y - &full * &sol;
    let dof = n.saturating_sub(1 + q + k).max(1);
    let sigma_sq = (resid.norm_squared() / dof as f64).max(1e-10);
    let _ = model;
    Ok((
        sol[0],
        DVector::from_fn(q, |i, _| sol[1 + i]),
        DVector::from_fn(k, |i, _| sol[1 + q + i]),
        sigma_sq,
    ))
}

/// Run the systematic-scan chain. Deterministic given the seed; returns the
/// retained states, acceptance counts, and any warnings.
pub fn gibbs_run(
    pair: &ModelPair,
    data: &StandardizedData,
    iters: usize,
    burnin: usize,
    seed: u64,
) -> Result<PosteriorDraws> {
    if iters <= burnin {
        return Err(Error::InvalidInput(format!(
            "iters ({iters}) must exceed burnin ({burnin})"
        )));
    }
    let model = GibbsModel::new(pair, data)?;
    let mut warnings = Vec::new();
    if model.k == 0 {
        warnings.push(
            "no common predictors: the sigma_eta^2 conditional has no mean; report medians alongside means".to_string(),
        );
    }

    let (xi0, a0, b0, s0) = ols_init(&model, data, pair, 0)?;
    let (xi1, a1, b1, s1) = ols_init(&model, data, pair, 1)?;
    let mut state = ChainState {
        xi: [xi0, xi1],
        alpha: [a0, a1],
        beta: [b0, b1],
        sigma_sq: [s0, s1],
        g: [model.n[0] as f64, model.n[1] as f64],
        sigma_eta_sq: 1.0,
        u: 1.0,
    };

    let mut rng = rng_from_seed(seed);
    let mut draws = Vec::with_capacity(iters - burnin);
    let mut accepted = [0usize; 2];
    let mut attempted = [0usize; 2];

    for it in 0..iters {
        for j in 0..2 {
            let (mean, chol) = coef_conditional(&model, &state, j).map_err(|e| Error::Mcmc {
                iteration: it,
                context: e.to_string(),
            })?;
            let d = mean.len() - 1;
            let prec_xi = 1.0 / state.sigma_eta_sq + model.n[j] as f64 / state.sigma_sq[j];
            state.xi[j] = mean[0] + rng.sample::<f64, _>(StandardNormal) / prec_xi.sqrt();
            // theta = mean + L^-T z draws from N(mean, P^-1)
            let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
            let mut theta = chol.l().tr_solve_lower_triangular(&z).ok_or(Error::Mcmc {
                iteration: it,
                context: "triangular solve failed in coefficient draw".into(),
            })?;
            for i in 0..d {
                theta[i] += mean[1 + i];
            }
            state.alpha[j] = theta.rows(0, model.q[j]).into_owned();
            state.beta[j] = theta.rows(model.q[j], model.k).into_owned();
        }
        for j in 0..2 {
            let (shape, scale) = fc_sigma2_params(&model, &state, j);
            state.sigma_sq[j] = sample_inv_gamma(&mut rng, shape, scale);
        }
        for j in 0..2 {
            if model.k > 0 {
                let (g_new, acc) = mh_step_g(&model, &state, j, &mut rng);
                state.g[j] = g_new;
                attempted[j] += 1;
                accepted[j] += usize::from(acc);
            }
        }
        let (shape, scale) = fc_sigma_eta2_params(&state);
        state.sigma_eta_sq = sample_inv_gamma(&mut rng, shape, scale);
        let (shape, scale) = fc_u_params(&state);
        state.u = sample_inv_gamma(&mut rng, shape, scale);

        if it >= burnin {
            draws.push(state.clone());
        }
    }

    Ok(PosteriorDraws {
        states: draws,
        iters,
        burnin,
        seed,
        accepted_g: accepted,
        attempted_g: attempted,
        warnings,
    })
}

/// The prediction-error posterior induced by mapping each retained draw's
/// variance parameters through the closed-form breakdown, summed over both
/// directions.
#[derive(Debug, Clone)]
pub struct PePosterior {
    pub samples: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
    /// True when fewer than two draws were available, in which case `sd` is
    /// reported as 0.
    pub degenerate: bool,
}

/// Map retained draws through the error formulas.
pub fn pe_posterior(
    draws: &PosteriorDraws,
    pair: &ModelPair,
    data: &StandardizedData,
) -> Result<PePosterior> {
    if draws.states.is_empty() {
        return Err(Error::InvalidInput("no retained draws".into()));
    }
    let terms: Vec<PeTerms> = Direction::BOTH
        .iter()
        .map(|&d| PeTerms::grcm(pair, data, d))
        .collect::<Result<_>>()?;
    let samples: Vec<f64> = draws
        .states
        .iter()
        .map(|s| {
            let v = VarianceEstimates {
                sigma0_sq: s.sigma_sq[0],
                sigma1_sq: s.sigma_sq[1],
                sigma_eta_sq: s.sigma_eta_sq,
            };
            terms.iter().map(|t| t.breakdown(&v).total).sum()
        })
        .collect();
    let m = samples.len();
    let mean = samples.iter().sum::<f64>() / m as f64;
    let degenerate = m < 2;
    let sd = if degenerate {
        0.0
    } else {
        (samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m as f64 - 1.0)).sqrt()
    };
    Ok(PePosterior {
        samples,
        mean,
        sd,
        degenerate,
    })
}
