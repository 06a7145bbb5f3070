//! Synthetic data generation under the (generalized) random-coefficients
//! model and brute-force estimation of the expected squared prediction
//! error. This is the independent check of the closed-form breakdowns: the
//! empirical average over replications must agree with them to within Monte
//! Carlo noise.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataio::TwoSetData;
use crate::error::{Error, Result};
use crate::linmodel::{with_intercept, Direction, QrFactor};
use crate::rng::{derive_seed, rng_from_seed};

/// How the per-dataset designs are produced.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignSpec {
    /// Draw iid standard normal columns, then center and scale each within
    /// its dataset to mean 0 and mean square 1.
    Gaussian,
    /// Use the given matrices as-is (row-major). `common0`/`common1` carry
    /// the shared predictors, `specific0`/`specific1` the per-dataset ones.
    Fixed {
        common0: Vec<Vec<f64>>,
        common1: Vec<Vec<f64>>,
        #[serde(default)]
        specific0: Vec<Vec<f64>>,
        #[serde(default)]
        specific1: Vec<Vec<f64>>,
    },
}

fn default_true() -> bool {
    true
}

/// Configuration of one simulation experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub n0: usize,
    pub n1: usize,
    pub sigma0_sq: f64,
    pub sigma1_sq: f64,
    pub sigma_eta_sq: f64,
    /// Shared intercept (coefficient on the constant regressor).
    #[serde(default)]
    pub intercept: f64,
    /// Base coefficients of the common predictors; dataset 1 adds the random
    /// perturbation.
    pub beta: Vec<f64>,
    #[serde(default)]
    pub alpha0: Vec<f64>,
    #[serde(default)]
    pub alpha1: Vec<f64>,
    pub design: DesignSpec,
    pub replications: usize,
    pub seed: u64,
    /// The closed forms condition on fixed designs, so redrawing per
    /// replication is off by default.
    #[serde(default)]
    pub redraw_designs: bool,
    /// Whether the intercept also carries the random perturbation.
    #[serde(default)]
    pub intercept_random: bool,
    /// Whether the constant regressor is part of the common block.
    #[serde(default = "default_true")]
    pub intercept_in_common: bool,
}

impl SimConfig {
    fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::InvalidInput("need at least one replication".into()));
        }
        for (name, v) in [
            ("sigma0_sq", self.sigma0_sq),
            ("sigma1_sq", self.sigma1_sq),
            ("sigma_eta_sq", self.sigma_eta_sq),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidInput(format!("{name} must be nonnegative")));
            }
        }
        Ok(())
    }
}

/// Realized design matrices for one experiment, fixed across replications.
#[derive(Debug, Clone)]
pub struct SimDesigns {
    pub common0: DMatrix<f64>,
    pub common1: DMatrix<f64>,
    pub specific0: DMatrix<f64>,
    pub specific1: DMatrix<f64>,
}

fn center_scale_columns(m: &mut DMatrix<f64>) {
    let n = m.nrows() as f64;
    for j in 0..m.ncols() {
        let mean = m.column(j).mean();
        let mut msq = 0.0;
        for i in 0..m.nrows() {
            m[(i, j)] -= mean;
            msq += m[(i, j)] * m[(i, j)];
        }
        let s = (msq / n).sqrt();
        if s > 0.0 {
            for i in 0..m.nrows() {
                m[(i, j)] /= s;
            }
        }
    }
}

fn from_rows(rows: &[Vec<f64>], n: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.is_empty() {
        return Ok(DMatrix::zeros(n, 0));
    }
    if rows.len() != n {
        return Err(Error::InvalidInput(format!(
            "{what}: expected {n} rows, got {}",
            rows.len()
        )));
    }
    let d = rows[0].len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::InvalidInput(format!("{what}: ragged rows")));
    }
    Ok(DMatrix::from_fn(n, d, |i, j| rows[i][j]))
}

impl SimDesigns {
    /// The designs [`empirical_pe`] uses for a config: drawn once from a
    /// reserved stream of the run seed, fixed across replications.
    pub fn for_config(cfg: &SimConfig) -> Result<Self> {
        let mut rng = rng_from_seed(derive_seed(cfg.seed, u64::from(u32::MAX)));
        Self::build(cfg, &mut rng)
    }

    pub fn build(cfg: &SimConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let k = cfg.beta.len();
        match &cfg.design {
            DesignSpec::Gaussian => {
                let mut draw = |n: usize, d: usize| {
                    let mut m =
                        DMatrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal));
                    center_scale_columns(&mut m);
                    m
                };
                Ok(Self {
                    common0: draw(cfg.n0, k),
                    common1: draw(cfg.n1, k),
                    specific0: draw(cfg.n0, cfg.alpha0.len()),
                    specific1: draw(cfg.n1, cfg.alpha1.len()),
                })
            }
            DesignSpec::Fixed {
                common0,
                common1,
                specific0,
                specific1,
            } => {
                let c0 = from_rows(common0, cfg.n0, "common0")?;
                let c1 = from_rows(common1, cfg.n1, "common1")?;
                if c0.ncols() != k || c1.ncols() != k {
                    return Err(Error::InvalidInput(format!(
                        "fixed common designs must have {k} columns to match beta"
                    )));
                }
                Ok(Self {
                    common0: c0,
                    common1: c1,
                    specific0: from_rows(specific0, cfg.n0, "specific0")?,
                    specific1: from_rows(specific1, cfg.n1, "specific1")?,
                })
            }
        }
    }
}

/// Draw one dataset pair: coefficients for dataset 1 are the base
/// coefficients plus a zero-mean perturbation with variance `sigma_eta_sq`,
/// and both datasets get their own Gaussian noise.
pub fn simulate_once(cfg: &SimConfig, designs: &SimDesigns, rng: &mut ChaCha8Rng) -> TwoSetData {
    let k = cfg.beta.len();
    let eta_sd = cfg.sigma_eta_sq.sqrt();
    let eta_int = if cfg.intercept_random {
        eta_sd * rng.sample::<f64, _>(StandardNormal)
    } else {
        0.0
    };
    let eta = DVector::from_fn(k, |_, _| eta_sd * rng.sample::<f64, _>(StandardNormal));
    let beta0 = DVector::from_column_slice(&cfg.beta);
    let beta1 = &beta0 + &eta;

    let mut draw_y = |common: &DMatrix<f64>,
                      specific: &DMatrix<f64>,
                      beta: &DVector<f64>,
                      alpha: &[f64],
                      intercept: f64,
                      sigma_sq: f64| {
        let n = common.nrows();
        let sd = sigma_sq.sqrt();
        let mut y = DVector::from_element(n, intercept);
        y += common * beta;
        if !alpha.is_empty() {
            y += specific * DVector::from_column_slice(alpha);
        }
        for i in 0..n {
            y[i] += sd * rng.sample::<f64, _>(StandardNormal);
        }
        y
    };

    let y0 = draw_y(
        &designs.common0,
        &designs.specific0,
        &beta0,
        &cfg.alpha0,
        cfg.intercept,
        cfg.sigma0_sq,
    );
    let y1 = draw_y(
        &designs.common1,
        &designs.specific1,
        &beta1,
        &cfg.alpha1,
        cfg.intercept + eta_int,
        cfg.sigma1_sq,
    );

    let n = cfg.n0 + cfg.n1;
    let p = k + cfg.alpha0.len().max(cfg.alpha1.len());
    let mut x = DMatrix::zeros(n, p);
    let mut y = DVector::zeros(n);
    let mut label = Vec::with_capacity(n);
    for i in 0..cfg.n0 {
        for j in 0..k {
            x[(i, j)] = designs.common0[(i, j)];
        }
        for j in 0..designs.specific0.ncols() {
            x[(i, k + j)] = designs.specific0[(i, j)];
        }
        y[i] = y0[i];
        label.push(0);
    }
    for i in 0..cfg.n1 {
        for j in 0..k {
            x[(cfg.n0 + i, j)] = designs.common1[(i, j)];
        }
        for j in 0..designs.specific1.ncols() {
            x[(cfg.n0 + i, k + j)] = designs.specific1[(i, j)];
        }
        y[cfg.n0 + i] = y1[i];
        label.push(1);
    }
    let names = (1..=p).map(|i| format!("x{i}")).collect();
    TwoSetData::new(y, x, names, label).expect("simulated data is well formed")
}

/// View realized designs as standardized two-set data so the closed-form
/// breakdowns can be evaluated on exactly the matrices the simulation uses.
/// Columns are the common block, then dataset 0's specific block, then
/// dataset 1's; the blocks belonging to the other dataset are zero-filled
/// and never read by the formulas.
pub fn designs_as_standardized(designs: &SimDesigns) -> crate::dataio::StandardizedData {
    let n0 = designs.common0.nrows();
    let n1 = designs.common1.nrows();
    let k = designs.common0.ncols();
    let q0 = designs.specific0.ncols();
    let q1 = designs.specific1.ncols();
    let p = k + q0 + q1;
    let mut x = DMatrix::zeros(n0 + n1, p);
    for i in 0..n0 {
        for j in 0..k {
            x[(i, j)] = designs.common0[(i, j)];
        }
        for j in 0..q0 {
            x[(i, k + j)] = designs.specific0[(i, j)];
        }
    }
    for i in 0..n1 {
        for j in 0..k {
            x[(n0 + i, j)] = designs.common1[(i, j)];
        }
        for j in 0..q1 {
            x[(n0 + i, k + q0 + j)] = designs.specific1[(i, j)];
        }
    }
    let label = [vec![0u8; n0], vec![1u8; n1]].concat();
    let names = (1..=p).map(|i| format!("x{i}")).collect();
    let data = TwoSetData::new(DVector::zeros(n0 + n1), x, names, label)
        .expect("designs produce well-formed data");
    crate::dataio::StandardizedData {
        data,
        loc: [vec![0.0; p], vec![0.0; p]],
        scale: [vec![1.0; p], vec![1.0; p]],
    }
}

/// The model pair matching [`designs_as_standardized`]'s column layout.
pub fn design_model_pair(designs: &SimDesigns, cfg: &SimConfig) -> crate::linmodel::ModelPair {
    let k = designs.common0.ncols();
    let q0 = designs.specific0.ncols();
    let q1 = designs.specific1.ncols();
    crate::linmodel::ModelPair::new(
        (0..k).collect(),
        (k..k + q0).collect(),
        (k + q0..k + q0 + q1).collect(),
    )
    .expect("disjoint by construction")
    .with_intercept_random(cfg.intercept_random)
    .with_intercept_in_common(cfg.intercept_in_common)
}

/// Pairwise (tree) summation; the result does not depend on how work was
/// distributed across threads.
fn pairwise_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        2 => v[0] + v[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
        }
    }
}

/// Report from [`empirical_pe`].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EmpiricalPe {
    pub mean: f64,
    pub mc_standard_error: f64,
    pub replications: usize,
}

struct RepWorkspace<'a> {
    cfg: &'a SimConfig,
    designs: &'a SimDesigns,
    direction: Direction,
    // target-side pieces for one prediction
    target_full: DMatrix<f64>,     // [1 C_t] (or C_t without intercept)
    target_specific: DMatrix<f64>, // W_t
    source_annihilated: QrFactor,  // QR of M_{Z_s}[1 C_s]
    target_specific_qr: Option<QrFactor>,
}

impl<'a> RepWorkspace<'a> {
    fn new(cfg: &'a SimConfig, designs: &'a SimDesigns, direction: Direction) -> Result<Self> {
        let (c_s, z_s, c_t, w_t) = match direction.target() {
            1 => (
                &designs.common0,
                &designs.specific0,
                &designs.common1,
                &designs.specific1,
            ),
            _ => (
                &designs.common1,
                &designs.specific1,
                &designs.common0,
                &designs.specific0,
            ),
        };
        let full = |c: &DMatrix<f64>| {
            if cfg.intercept_in_common {
                with_intercept(c)
            } else {
                c.clone()
            }
        };
        let source_full = full(c_s);
        let source_annihilated =
            QrFactor::factor(&crate::linmodel::annihilate(z_s, &source_full)?)?;
        let target_specific_qr = if w_t.ncols() > 0 {
            Some(QrFactor::factor(w_t)?)
        } else {
            None
        };
        Ok(Self {
            cfg,
            designs,
            direction,
            target_full: full(c_t),
            target_specific: w_t.clone(),
            source_annihilated,
            target_specific_qr,
        })
    }

    /// One replication's average squared prediction error.
    fn run(&self, rep: u64) -> f64 {
        let mut rng = rng_from_seed(derive_seed(self.cfg.seed, rep));
        let data = simulate_once(self.cfg, self.designs, &mut rng);
        let (t, s) = (self.direction.target(), self.direction.source());
        let rows_t = data.rows_of(t);
        let rows_s = data.rows_of(s);
        let y_t = DVector::from_iterator(rows_t.len(), rows_t.iter().map(|&i| data.y[i]));
        let y_s = DVector::from_iterator(rows_s.len(), rows_s.iter().map(|&i| data.y[i]));

        // Fit the common block (with intercept) on the annihilated source
        // design, refit the target-specific block on the target residual.
        let beta_hat = self.source_annihilated.solve_ls(&y_s);
        let mut pred = &self.target_full * &beta_hat;
        if let Some(wqr) = &self.target_specific_qr {
            let alpha_hat = wqr.solve_ls(&(&y_t - &pred));
            pred += &self.target_specific * alpha_hat;
        }
        let resid = y_t - pred;
        resid.norm_squared() / rows_t.len() as f64
    }
}

/// Brute-force estimate of the expected average squared prediction error in
/// one direction: per replication, fit on the source by least squares (the
/// two-step estimator when specific blocks are present), predict the target,
/// and average the squared error over replications.
pub fn empirical_pe(cfg: &SimConfig, direction: Direction) -> Result<EmpiricalPe> {
    cfg.validate()?;
    if cfg.redraw_designs {
        return empirical_pe_redrawn(cfg, direction);
    }
    let designs = SimDesigns::for_config(cfg)?;
    let ws = RepWorkspace::new(cfg, &designs, direction)?;
    let values: Vec<f64> = {
        use rayon::prelude::*;
        (0..cfg.replications as u64)
            .into_par_iter()
            .map(|rep| ws.run(rep))
            .collect()
    };
    Ok(summarize(&values))
}

/// Robustness variant that redraws the designs each replication.
fn empirical_pe_redrawn(cfg: &SimConfig, direction: Direction) -> Result<EmpiricalPe> {
    use rayon::prelude::*;
    let values: Vec<f64> = (0..cfg.replications as u64)
        .into_par_iter()
        .map(|rep| -> Result<f64> {
            let mut rng = rng_from_seed(derive_seed(cfg.seed, rep));
            let designs = SimDesigns::build(cfg, &mut rng)?;
            let ws = RepWorkspace::new(cfg, &designs, direction)?;
            Ok(ws.run(rep))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(summarize(&values))
}

fn summarize(values: &[f64]) -> EmpiricalPe {
    let r = values.len();
    let mean = pairwise_sum(values) / r as f64;
    let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = pairwise_sum(&sq) / (r.saturating_sub(1)).max(1) as f64;
    EmpiricalPe {
        mean,
        mc_standard_error: (var / r as f64).sqrt(),
        replications: r,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn base_cfg() -> SimConfig {
        SimConfig {
            n0: 30,
            n1: 40,
            sigma0_sq: 0.5,
            sigma1_sq: 0.8,
            sigma_eta_sq: 0.1,
            intercept: 0.3,
            beta: vec![1.0, -0.5],
            alpha0: vec![],
            alpha1: vec![],
            design: DesignSpec::Gaussian,
            replications: 100,
            seed: 11,
            redraw_designs: false,
            intercept_random: false,
            intercept_in_common: true,
        }
    }

    #[test]
    fn zero_variances_give_exactly_linear_data() {
        let mut cfg = base_cfg();
        cfg.sigma0_sq = 0.0;
        cfg.sigma1_sq = 0.0;
        cfg.sigma_eta_sq = 0.0;
        let mut rng = rng_from_seed(1);
        let designs = SimDesigns::build(&cfg, &mut rng).unwrap();
        let data = simulate_once(&cfg, &designs, &mut rng);
        for i in 0..cfg.n0 {
            let fit = cfg.intercept
                + designs.common0[(i, 0)] * cfg.beta[0]
                + designs.common0[(i, 1)] * cfg.beta[1];
            assert_relative_eq!(data.y[i], fit, epsilon = 1e-12);
        }
    }

    #[test]
    fn fixed_seed_reproduces_dataset() {
        let cfg = base_cfg();
        let mut rng1 = rng_from_seed(5);
        let d1 = SimDesigns::build(&cfg, &mut rng1).unwrap();
        let a = simulate_once(&cfg, &d1, &mut rng_from_seed(7));
        let b = simulate_once(&cfg, &d1, &mut rng_from_seed(7));
        assert_eq!(a.y.as_slice(), b.y.as_slice());
    }

    #[test]
    fn eta_draws_have_the_configured_variance() {
        // Constant common design so the perturbation is directly observable.
        let cfg = SimConfig {
            n0: 2,
            n1: 2,
            sigma0_sq: 0.0,
            sigma1_sq: 0.0,
            sigma_eta_sq: 0.25,
            intercept: 0.0,
            beta: vec![1.0],
            alpha0: vec![],
            alpha1: vec![],
            design: DesignSpec::Fixed {
                common0: vec![vec![1.0], vec![1.0]],
                common1: vec![vec![1.0], vec![1.0]],
                specific0: vec![],
                specific1: vec![],
            },
            replications: 1,
            seed: 0,
            redraw_designs: false,
            intercept_random: false,
            intercept_in_common: true,
        };
        let mut rng = rng_from_seed(1);
        let designs = SimDesigns::build(&cfg, &mut rng).unwrap();
        let reps = 100_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for r in 0..reps {
            let mut rep_rng = rng_from_seed(r);
            let data = simulate_once(&cfg, &designs, &mut rep_rng);
            let eta = data.y[2] - cfg.beta[0]; // y1 = beta + eta exactly
            sum += eta;
            sumsq += eta * eta;
        }
        let var = sumsq / reps as f64 - (sum / reps as f64).powi(2);
        assert!((var - 0.25).abs() / 0.25 < 0.02, "eta variance {var}");
    }

    #[test]
    fn classical_out_of_sample_error_intercept_only() {
        // Identical populations, intercept-only model: expected error is
        // sigma^2 (1 + 1/n_source).
        let cfg = SimConfig {
            n0: 25,
            n1: 25,
            sigma0_sq: 1.0,
            sigma1_sq: 1.0,
            sigma_eta_sq: 0.0,
            intercept: 2.0,
            beta: vec![],
            alpha0: vec![],
            alpha1: vec![],
            design: DesignSpec::Gaussian,
            replications: 40_000,
            seed: 3,
            redraw_designs: false,
            intercept_random: false,
            intercept_in_common: true,
        };
        let out = empirical_pe(&cfg, Direction::OneFromZero).unwrap();
        let expect = 1.0 * (1.0 + 1.0 / 25.0);
        assert!(
            (out.mean - expect).abs() < 4.0 * out.mc_standard_error,
            "mean {} expect {expect} se {}",
            out.mean,
            out.mc_standard_error
        );
    }

    #[test]
    fn threaded_and_serial_results_match_bitwise() {
        let mut cfg = base_cfg();
        cfg.replications = 500;
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let serial = pool.install(|| empirical_pe(&cfg, Direction::OneFromZero).unwrap());
        let threaded = empirical_pe(&cfg, Direction::OneFromZero).unwrap();
        assert_eq!(serial.mean.to_bits(), threaded.mean.to_bits());
        assert_eq!(
            serial.mc_standard_error.to_bits(),
            threaded.mc_standard_error.to_bits()
        );
    }
}
