//! Model-space machinery: internal-compatibility tables, the model-averaged
//! similarity search for common predictors, exhaustive marginal-likelihood
//! selection, and the comparison between the closed-form and MCMC estimation
//! routes.
//!
//! The combinatorial work units all run off two per-dataset caches holding
//! the full predictor Gram matrix and per-union fit summaries keyed by
//! bitmask, so evaluating one (common set, specific set) pair touches only
//! k-by-k matrices.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::StandardizedData;
use crate::error::{Error, Result};
use crate::gibbs::{gibbs_run, pe_posterior};
use crate::hyperg::{estimate_variances, fit_from_moments, hyperg_fit, null_log_marginal};
use crate::linmodel::{pe_rcm, with_intercept, Direction, ErrorBreakdown, ModelPair, PeTerms, VarianceEstimates};
use crate::rng::{derive_seed, rng_from_seed};

/// Hard cap on the number of joint specific-set pairs per common set.
pub const PAIR_GUARD: u64 = 1 << 20;

/// Largest predictor count accepted by the exhaustive routines.
pub const MAX_PREDICTORS: usize = 20;

fn bits_of(mask: u32, p: usize) -> Vec<usize> {
    (0..p).filter(|i| mask >> i & 1 == 1).collect()
}

fn mask_of(cols: &[usize]) -> u32 {
    cols.iter().fold(0u32, |m, &i| m | (1 << i))
}

/// Per-union fit summaries for one dataset.
struct UnionFit {
    log_marginal: f64,
    sigma_sq_mean: f64,
    /// Posterior coefficient means, aligned with the union's bits ascending.
    beta: Vec<f64>,
}

/// Sufficient statistics and per-union fits for one dataset.
pub(crate) struct DatasetCache {
    n: usize,
    p: usize,
    gram: DMatrix<f64>,
    fits: Vec<UnionFit>,
}

impl DatasetCache {
    fn build(data: &StandardizedData, j: u8) -> Result<Self> {
        let p = data.n_predictors();
        if p > MAX_PREDICTORS {
            return Err(Error::InvalidInput(format!(
                "exhaustive enumeration is capped at {MAX_PREDICTORS} predictors, got {p}"
            )));
        }
        let x = data.design(j, &(0..p).collect::<Vec<_>>());
        let y = data.response(j);
        let n = y.len();
        let ybar = y.mean();
        let yc = y.add_scalar(-ybar);
        let ycc = yc.dot(&yc);
        let gram = x.tr_mul(&x);
        let xy = x.tr_mul(&yc);
        let null_const = null_log_marginal(n, ycc);

        let fits: Vec<UnionFit> = (0u32..(1 << p))
            .into_par_iter()
            .map(|mask| -> Result<UnionFit> {
                let cols = bits_of(mask, p);
                let u = cols.len();
                let sub_gram = DMatrix::from_fn(u, u, |r, c| gram[(cols[r], cols[c])]);
                let sub_xy = DVector::from_fn(u, |r, _| xy[cols[r]]);
                let core = fit_from_moments(&sub_gram, &sub_xy, ycc, n)?;
                Ok(UnionFit {
                    log_marginal: null_const + core.log_bf,
                    sigma_sq_mean: core.sigma_sq_mean,
                    beta: core.beta_mean.iter().copied().collect(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { n, p, gram, fits })
    }

    fn fit(&self, mask: u32) -> &UnionFit {
        &self.fits[mask as usize]
    }

    /// Gram matrix of the common block after annihilating the specific
    /// block, assembled from the master Gram:
    /// `C'C - (Z'C)' (Z'Z)^-1 (Z'C)`.
    fn annihilated_common_gram(&self, common: &[usize], specific: &[usize]) -> Result<DMatrix<f64>> {
        let k = common.len();
        let q = specific.len();
        let mut out = DMatrix::from_fn(k, k, |r, c| self.gram[(common[r], common[c])]);
        if q == 0 || k == 0 {
            return Ok(out);
        }
        let zz = DMatrix::from_fn(q, q, |r, c| self.gram[(specific[r], specific[c])]);
        let zc = DMatrix::from_fn(q, k, |r, c| self.gram[(specific[r], common[c])]);
        let chol: Cholesky<f64, Dyn> = Cholesky::new(zz).ok_or_else(|| Error::Singular {
            context: "specific-block Gram matrix".to_string(),
        })?;
        let solved = chol.solve(&zc);
        out -= zc.tr_mul(&solved);
        Ok(out)
    }
}

/// Entry of a per-(dataset, common set) side table: everything a weighted
/// pair evaluation needs about one specific-set choice.
struct SideEntry {
    weight: f64,
    k_specific: usize,
    sigma_sq: f64,
    /// Common-block posterior means under this model.
    beta_common: Vec<f64>,
    /// Annihilated common Gram and its trace; the inverse Cholesky is formed
    /// on demand for the source role.
    gram: DMatrix<f64>,
    gram_chol: Option<Cholesky<f64, Dyn>>,
    trace: f64,
}

fn side_table(cache: &DatasetCache, common: &[usize]) -> Result<Vec<SideEntry>> {
    let p = cache.p;
    let cmask = mask_of(common);
    let rest: Vec<usize> = (0..p).filter(|i| cmask >> i & 1 == 0).collect();
    let m = rest.len();
    let k = common.len();
    let mut entries = Vec::with_capacity(1 << m);
    let mut log_weights = Vec::with_capacity(1 << m);
    for code in 0u32..(1 << m) {
        let specific: Vec<usize> = (0..m).filter(|b| code >> b & 1 == 1).map(|b| rest[b]).collect();
        let umask = cmask | mask_of(&specific);
        let fit = cache.fit(umask);
        // positions of the common columns inside the union (bits ascending)
        let ucols = bits_of(umask, p);
        let beta_common: Vec<f64> = common
            .iter()
            .map(|c| fit.beta[ucols.binary_search(c).expect("common subset of union")])
            .collect();
        let gram = cache.annihilated_common_gram(common, &specific)?;
        let trace = gram.trace();
        let gram_chol = if k > 0 {
            Some(Cholesky::new(gram.clone()).ok_or_else(|| Error::Singular {
                context: "annihilated common Gram".to_string(),
            })?)
        } else {
            None
        };
        log_weights.push(fit.log_marginal);
        entries.push(SideEntry {
            weight: 0.0,
            k_specific: specific.len(),
            sigma_sq: fit.sigma_sq_mean,
            beta_common,
            gram,
            gram_chol,
            trace,
        });
    }
    // normalize the model weights within this dataset's enumeration
    let max = log_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for lw in &mut log_weights {
        *lw = (*lw - max).exp();
        total += *lw;
    }
    for (e, w) in entries.iter_mut().zip(&log_weights) {
        e.weight = w / total;
    }
    Ok(entries)
}

/// Frobenius inner product of `inv(gram_s)` with `gram_t` via the cached
/// Cholesky factor.
fn trace_inv_times(src: &SideEntry, gram_t: &DMatrix<f64>) -> f64 {
    match &src.gram_chol {
        Some(chol) => chol.solve(gram_t).trace(),
        None => 0.0,
    }
}

/// Model-averaged breakdowns for one common set, both directions at once.
///
/// Specific sets for the two datasets range independently over all subsets
/// of the non-common predictors; per-dataset weights are proportional to the
/// marginal likelihood and the joint weight is their product.
fn bma_pair(
    caches: &[DatasetCache; 2],
    common: &[usize],
) -> Result<(ErrorBreakdown, ErrorBreakdown)> {
    let p = caches[0].p;
    let m = (p - common.len()) as u32;
    let pairs = 1u64 << (2 * m);
    if pairs > PAIR_GUARD {
        return Err(Error::EnumerationGuard {
            pairs,
            limit: PAIR_GUARD,
        });
    }
    let k = common.len();
    let n0 = caches[0].n as f64;
    let n1 = caches[1].n as f64;
    let t0 = side_table(&caches[0], common)?;
    let t1 = side_table(&caches[1], common)?;

    // accumulate termwise: fwd predicts dataset 1 from 0, bwd the reverse
    let mut fwd = [0.0f64; 3];
    let mut bwd = [0.0f64; 3];
    for a in &t0 {
        for b in &t1 {
            let w = a.weight * b.weight;
            if w == 0.0 {
                continue;
            }
            let eta2 = if k > 0 {
                let mut s = 0.0;
                for l in 0..k {
                    let d = b.beta_common[l] - a.beta_common[l];
                    s += d * d / 4.0;
                }
                s / k as f64
            } else {
                0.0
            };
            fwd[0] += w * ((n1 - b.k_specific as f64) / n1) * b.sigma_sq;
            fwd[1] += w * eta2 * b.trace / n1;
            fwd[2] += w * a.sigma_sq * (trace_inv_times(a, &b.gram) + n1 / n0) / n1;
            bwd[0] += w * ((n0 - a.k_specific as f64) / n0) * a.sigma_sq;
            bwd[1] += w * eta2 * a.trace / n0;
            bwd[2] += w * b.sigma_sq * (trace_inv_times(b, &a.gram) + n0 / n1) / n0;
        }
    }
    let build = |t: [f64; 3], direction| ErrorBreakdown {
        direction,
        term1: t[0],
        term2: t[1],
        term3: t[2],
        total: t[0] + t[1] + t[2],
    };
    Ok((
        build(fwd, Direction::OneFromZero),
        build(bwd, Direction::ZeroFromOne),
    ))
}

/// Model-averaged prediction error for one common set and direction.
pub fn bma_error(
    data: &StandardizedData,
    common: &[usize],
    direction: Direction,
) -> Result<ErrorBreakdown> {
    let caches = [DatasetCache::build(data, 0)?, DatasetCache::build(data, 1)?];
    let mut sorted = common.to_vec();
    sorted.sort_unstable();
    let (fwd, bwd) = bma_pair(&caches, &sorted)?;
    Ok(match direction {
        Direction::OneFromZero => fwd,
        Direction::ZeroFromOne => bwd,
    })
}

/// One row of the internal-compatibility table.
#[derive(Debug, Clone, Serialize)]
pub struct CompatRow {
    pub predictors: Vec<usize>,
    pub names: Vec<String>,
    pub direction: Direction,
    pub breakdown: ErrorBreakdown,
    pub variances: VarianceEstimates,
}

/// Fit each predictor set on both datasets (no specific blocks), estimate
/// the variances, and evaluate the common-predictors error formula in both
/// directions.
pub fn compat_table(data: &StandardizedData, sets: &[Vec<usize>]) -> Result<Vec<CompatRow>> {
    let mut rows = Vec::with_capacity(sets.len() * 2);
    for set in sets {
        let mut cols = set.clone();
        cols.sort_unstable();
        let x0 = data.design(0, &cols);
        let x1 = data.design(1, &cols);
        let y0 = data.response(0);
        let y1 = data.response(1);
        let fit0 = hyperg_fit(&x0, &y0)?;
        let fit1 = hyperg_fit(&x1, &y1)?;
        let align: Vec<(usize, usize)> = (0..cols.len()).map(|i| (i, i)).collect();
        let v = estimate_variances(&fit0, &fit1, &align)?;
        let names: Vec<String> = cols.iter().map(|&c| data.data.names[c].clone()).collect();
        for direction in Direction::BOTH {
            let breakdown = pe_rcm(
                &v,
                &with_intercept(&x0),
                &with_intercept(&x1),
                cols.len(),
                direction,
            )?;
            rows.push(CompatRow {
                predictors: cols.clone(),
                names: names.clone(),
                direction,
                breakdown,
                variances: v,
            });
        }
    }
    Ok(rows)
}

/// Ranking objective for the similarity search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Sum of the two directions' totals.
    Sum,
    /// The larger of the two directions' totals.
    MaxMin,
}

/// Constraints and objective for [`similarity_search`].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SearchOptions {
    /// Smallest number of common predictors considered. The default of 1
    /// excludes the empty set: with no common predictors the
    /// coefficient-variation variance is zero by convention and the ranking
    /// would degenerate.
    pub min_common: usize,
    pub max_common: Option<usize>,
    pub objective: Objective,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            min_common: 1,
            max_common: None,
            objective: Objective::Sum,
        }
    }
}

/// One ranked common set.
#[derive(Debug, Clone, Serialize)]
pub struct CommonSetResult {
    pub rank: usize,
    pub common: Vec<usize>,
    pub names: Vec<String>,
    pub pe_forward: ErrorBreakdown,
    pub pe_backward: ErrorBreakdown,
    /// Sum of the two directions' totals.
    pub pe_total: f64,
    /// Value the ranking sorted on (equals `pe_total` for the sum
    /// objective).
    pub objective_value: f64,
}

/// Evaluate every common set within the size constraints by model-averaged
/// prediction error in both directions and rank ascending by the objective,
/// ties broken by the lexicographically smallest bitmask.
pub fn similarity_search(
    data: &StandardizedData,
    options: &SearchOptions,
) -> Result<Vec<CommonSetResult>> {
    let p = data.n_predictors();
    let caches = [DatasetCache::build(data, 0)?, DatasetCache::build(data, 1)?];
    let max_common = options.max_common.unwrap_or(p).min(p);
    let masks: Vec<u32> = (0u32..(1 << p))
        .filter(|m| {
            let c = m.count_ones() as usize;
            c >= options.min_common && c <= max_common
        })
        .collect();
    let mut results: Vec<(u32, ErrorBreakdown, ErrorBreakdown)> = masks
        .par_iter()
        .map(|&mask| -> Result<_> {
            let common = bits_of(mask, p);
            let (fwd, bwd) = bma_pair(&caches, &common)?;
            Ok((mask, fwd, bwd))
        })
        .collect::<Result<Vec<_>>>()?;

    let value = |fwd: &ErrorBreakdown, bwd: &ErrorBreakdown| match options.objective {
        Objective::Sum => fwd.total + bwd.total,
        Objective::MaxMin => fwd.total.max(bwd.total),
    };
    results.sort_by(|a, b| {
        let va = value(&a.1, &a.2);
        let vb = value(&b.1, &b.2);
        va.total_cmp(&vb).then(a.0.cmp(&b.0))
    });
    Ok(results
        .into_iter()
        .enumerate()
        .map(|(i, (mask, fwd, bwd))| {
            let common = bits_of(mask, p);
            let names = common.iter().map(|&c| data.data.names[c].clone()).collect();
            CommonSetResult {
                rank: i + 1,
                common,
                names,
                pe_total: fwd.total + bwd.total,
                objective_value: value(&fwd, &bwd),
                pe_forward: fwd,
                pe_backward: bwd,
            }
        })
        .collect())
}

/// One entry of a marginal-likelihood ranking.
#[derive(Debug, Clone, Serialize)]
pub struct MlselEntry {
    pub predictors: Vec<usize>,
    pub names: Vec<String>,
    pub log_marginal: f64,
}

/// Exhaustively rank all predictor subsets of one dataset by marginal
/// likelihood, best first; ties broken by the smallest bitmask.
pub fn mlsel(data: &StandardizedData, dataset: u8) -> Result<Vec<MlselEntry>> {
    let p = data.n_predictors();
    let cache = DatasetCache::build(data, dataset)?;
    let mut order: Vec<(u32, f64)> = (0u32..(1 << p))
        .map(|mask| (mask, cache.fit(mask).log_marginal))
        .collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(order
        .into_iter()
        .map(|(mask, log_marginal)| {
            let predictors = bits_of(mask, p);
            let names = predictors
                .iter()
                .map(|&c| data.data.names[c].clone())
                .collect();
            MlselEntry {
                predictors,
                names,
                log_marginal,
            }
        })
        .collect())
}

/// A model in the two-route comparison family: a common block plus disjoint
/// specific assignments of some leftover predictors.
#[derive(Debug, Clone, Serialize)]
pub struct CompareModel {
    pub index: usize,
    pub common: Vec<usize>,
    pub specific0: Vec<usize>,
    pub specific1: Vec<usize>,
}

/// Enumerate the comparison family: every common set with more than
/// `min_common` predictors, with each remaining predictor either specific to
/// dataset 0, specific to dataset 1, or excluded.
pub fn enumerate_family(p: usize, min_common: usize) -> Vec<CompareModel> {
    let mut out = Vec::new();
    let mut index = 0;
    for cmask in 0u32..(1 << p) {
        let c = cmask.count_ones() as usize;
        if c <= min_common {
            continue;
        }
        let rest: Vec<usize> = (0..p).filter(|i| cmask >> i & 1 == 0).collect();
        let m = rest.len();
        let combos = 3u32.pow(m as u32);
        for code in 0..combos {
            let mut s0 = Vec::new();
            let mut s1 = Vec::new();
            let mut c3 = code;
            for &r in &rest {
                match c3 % 3 {
                    0 => s0.push(r),
                    1 => s1.push(r),
                    _ => {}
                }
                c3 /= 3;
            }
            out.push(CompareModel {
                index,
                common: bits_of(cmask, p),
                specific0: s0,
                specific1: s1,
            });
            index += 1;
        }
    }
    out
}

/// Options for [`compare_approaches`].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CompareOptions {
    pub min_common: usize,
    pub iters: usize,
    pub burnin: usize,
    pub seed: u64,
    /// Run the MCMC route on a seeded random subset of this size instead of
    /// the whole family.
    pub subset: Option<usize>,
}

impl Default for CompareOptions {
    fn default() -> Self {
        Self {
            min_common: 7,
            iters: 20_000,
            burnin: 5_000,
            seed: 1,
            subset: None,
        }
    }
}

/// Per-model comparison record between the closed-form route and the MCMC
/// route. Differences are MCMC minus closed-form.
#[derive(Debug, Clone, Serialize)]
pub struct CompareRecord {
    pub model: CompareModel,
    pub pe_approx: f64,
    pub pe_mcmc_mean: f64,
    pub pe_mcmc_sd: f64,
    /// |pe_approx - pe_mcmc_mean| / pe_mcmc_sd.
    pub standardized_abs_deviance: f64,
    pub approx: VarianceEstimates,
    pub mcmc: VarianceEstimates,
    pub d_sigma_eta_sq: f64,
    pub d_sigma0_sq: f64,
    pub d_sigma1_sq: f64,
}

/// Closed-form variance estimates for one comparison model, from the caches.
fn approx_variances(
    caches: &[DatasetCache; 2],
    model: &CompareModel,
) -> Result<VarianceEstimates> {
    let p = caches[0].p;
    let k = model.common.len();
    let mut sig = [0.0; 2];
    let mut betas: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for j in 0..2 {
        let specific = if j == 0 {
            &model.specific0
        } else {
            &model.specific1
        };
        let umask = mask_of(&model.common) | mask_of(specific);
        let fit = caches[j].fit(umask);
        sig[j] = fit.sigma_sq_mean;
        let ucols = bits_of(umask, p);
        betas[j] = model
            .common
            .iter()
            .map(|c| fit.beta[ucols.binary_search(c).expect("common in union")])
            .collect();
    }
    let eta = if k > 0 {
        betas[0]
            .iter()
            .zip(&betas[1])
            .map(|(b0, b1)| (b1 - b0) * (b1 - b0) / 4.0)
            .sum::<f64>()
            / k as f64
    } else {
        0.0
    };
    VarianceEstimates::new(sig[0], sig[1], eta)
}

/// For each model in the family, compute the closed-form estimate and the
/// MCMC posterior of the two-direction prediction error, the standardized
/// absolute deviance between them, and the per-parameter estimate
/// differences.
pub fn compare_approaches(
    data: &StandardizedData,
    options: &CompareOptions,
) -> Result<Vec<CompareRecord>> {
    let p = data.n_predictors();
    let caches = [DatasetCache::build(data, 0)?, DatasetCache::build(data, 1)?];
    let family = enumerate_family(p, options.min_common);
    if family.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no models with more than {} common predictors",
            options.min_common
        )));
    }
    let selected: Vec<CompareModel> = match options.subset {
        Some(count) if count < family.len() => {
            use rand::seq::SliceRandom;
            let mut rng = rng_from_seed(options.seed);
            let mut picked: Vec<CompareModel> = family
                .choose_multiple(&mut rng, count)
                .cloned()
                .collect();
            picked.sort_by_key(|m| m.index);
            picked
        }
        _ => family,
    };

    selected
        .into_par_iter()
        .map(|model| -> Result<CompareRecord> {
            let pair = ModelPair::new(
                model.common.clone(),
                model.specific0.clone(),
                model.specific1.clone(),
            )?;
            let approx = approx_variances(&caches, &model)?;
            let terms: Vec<PeTerms> = Direction::BOTH
                .iter()
                .map(|&d| PeTerms::grcm(&pair, data, d))
                .collect::<Result<_>>()?;
            let pe_approx: f64 = terms.iter().map(|t| t.breakdown(&approx).total).sum();

            let seed = derive_seed(options.seed, model.index as u64);
            let draws = gibbs_run(&pair, data, options.iters, options.burnin, seed)?;
            let pe = pe_posterior(&draws, &pair, data)?;
            let m = draws.states.len() as f64;
            let mean_of = |f: &dyn Fn(&crate::gibbs::ChainState) -> f64| {
                draws.states.iter().map(f).sum::<f64>() / m
            };
            let mcmc = VarianceEstimates::new(
                mean_of(&|s| s.sigma_sq[0]),
                mean_of(&|s| s.sigma_sq[1]),
                mean_of(&|s| s.sigma_eta_sq),
            )?;
            let deviance = if pe.sd > 0.0 {
                (pe_approx - pe.mean).abs() / pe.sd
            } else {
                f64::INFINITY
            };
            Ok(CompareRecord {
                pe_approx,
                pe_mcmc_mean: pe.mean,
                pe_mcmc_sd: pe.sd,
                standardized_abs_deviance: deviance,
                d_sigma_eta_sq: mcmc.sigma_eta_sq - approx.sigma_eta_sq,
                d_sigma0_sq: mcmc.sigma0_sq - approx.sigma0_sq,
                d_sigma1_sq: mcmc.sigma1_sq - approx.sigma1_sq,
                approx,
                mcmc,
                model,
            })
        })
        .collect()
}
