//! Distributional checks of the sampler components against independent
//! references: the inverse-gamma augmentation recovers its half-Cauchy
//! prior, the Metropolis-Hastings scale step has the right stationary law,
//! the conjugate sub-case matches closed-form posterior means, and with the
//! coupling switched off the chain reproduces the closed-form route.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use twoset_core::dataio::{standardize, TwoSetData};
use twoset_core::gibbs::{fc_coef_params, fc_sigma2_params, fc_u_params, mh_step_g, ChainState, GibbsModel};
use twoset_core::hyperg::hyperg_fit;
use twoset_core::linmodel::ModelPair;
use twoset_core::rng::rng_from_seed;

fn inv_gamma(rng: &mut ChaCha8Rng, shape: f64, scale: f64) -> f64 {
    1.0 / Gamma::new(shape, 1.0 / scale).unwrap().sample(rng)
}

/// Asymptotic Kolmogorov-Smirnov p-value.
fn ks_p_value(stat: f64, n: usize) -> f64 {
    let lambda = (n as f64).sqrt() * stat;
    let mut p = 0.0;
    for j in 1..=100 {
        let jf = j as f64;
        p += 2.0 * (-1.0f64).powi(j + 1) * (-2.0 * jf * jf * lambda * lambda).exp();
    }
    p.clamp(0.0, 1.0)
}

#[test]
fn augmentation_recovers_half_cauchy_prior() {
    // Alternating the two augmentation conditionals with the likelihood
    // removed entirely (prior shape 1/2 for the scale, and the U conditional
    // as implemented) must leave the half standard Cauchy invariant.
    let mut rng = rng_from_seed(5);
    let mut eta2;
    let mut u = 1.0;
    let total = 100_000;
    let burn = 1_000;
    let mut draws = Vec::with_capacity(total - burn);
    for it in 0..total {
        eta2 = inv_gamma(&mut rng, 0.5, 1.0 / u);
        let state = ChainState {
            xi: [0.0, 0.0],
            alpha: [DVector::zeros(0), DVector::zeros(0)],
            beta: [DVector::zeros(0), DVector::zeros(0)],
            sigma_sq: [1.0, 1.0],
            g: [1.0, 1.0],
            sigma_eta_sq: eta2,
            u,
        };
        let (shape, scale) = fc_u_params(&state);
        u = inv_gamma(&mut rng, shape, scale);
        if it >= burn {
            draws.push(eta2.sqrt());
        }
    }
    draws.sort_by(f64::total_cmp);
    let n = draws.len();
    let mut stat = 0.0f64;
    for (i, x) in draws.iter().enumerate() {
        let cdf = 2.0 / std::f64::consts::PI * x.atan();
        let hi = ((i + 1) as f64 / n as f64 - cdf).abs();
        let lo = (cdf - i as f64 / n as f64).abs();
        stat = stat.max(hi).max(lo);
    }
    let p = ks_p_value(stat, n);
    assert!(p > 0.01, "KS stat {stat:.5} p {p:.4}");
}

fn toy_standardized(n0: usize, n1: usize, p: usize, seed: u64) -> twoset_core::StandardizedData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = n0 + n1;
    let x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let beta = DVector::from_fn(p, |i, _| 0.7 / (i + 1) as f64);
    let y = &x * &beta + DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal)) * 0.8;
    let label = [vec![0u8; n0], vec![1u8; n1]].concat();
    let data = TwoSetData::new(y, x, (1..=p).map(|i| format!("x{i}")).collect(), label).unwrap();
    standardize(&data).unwrap()
}

/// Batch-means standard error for a correlated chain.
fn batch_se(xs: &[f64]) -> f64 {
    let b = 100;
    let m = xs.len() / b;
    let means: Vec<f64> = (0..b)
        .map(|i| xs[i * m..(i + 1) * m].iter().sum::<f64>() / m as f64)
        .collect();
    let grand = means.iter().sum::<f64>() / b as f64;
    let var = means.iter().map(|v| (v - grand) * (v - grand)).sum::<f64>() / (b as f64 - 1.0);
    (var / b as f64).sqrt()
}

#[test]
fn mh_scale_step_has_the_right_stationary_law() {
    // Freeze (beta, sigma^2); the chain's invariant density in g is
    // g^(-k/2) (1+g)^(-3/2) exp(-c/g). Compare E[g/(1+g)] with a direct
    // quadrature of that density (substituted onto (0,1)).
    let data = toy_standardized(30, 30, 2, 1);
    let pair = ModelPair::common_only(vec![0, 1]).unwrap();
    let model = GibbsModel::new(&pair, &data).unwrap();
    let mut state = ChainState {
        xi: [0.0, 0.0],
        alpha: [DVector::zeros(0), DVector::zeros(0)],
        beta: [
            DVector::from_vec(vec![0.4, -0.2]),
            DVector::from_vec(vec![0.4, -0.2]),
        ],
        sigma_sq: [0.7, 0.7],
        g: [5.0, 5.0],
        sigma_eta_sq: 1.0,
        u: 1.0,
    };
    // c = beta' X'X beta / (2 sigma^2) for dataset 0, recomputed here
    let x0 = data.design(0, &[0, 1]);
    let b = &state.beta[0];
    let c = (x0.tr_mul(&x0) * b).dot(b) / (2.0 * state.sigma_sq[0]);
    let k = 2.0f64;

    let mut rng = rng_from_seed(2);
    let total = 200_000;
    let burn = 10_000;
    let mut ts = Vec::with_capacity(total - burn);
    for it in 0..total {
        let (g, _) = mh_step_g(&model, &state, 0, &mut rng);
        state.g[0] = g;
        if it >= burn {
            ts.push(g / (1.0 + g));
        }
    }
    let chain_mean = ts.iter().sum::<f64>() / ts.len() as f64;
    let se = batch_se(&ts);

    // quadrature on t = g/(1+g): density ~ t^(-k/2) (1-t)^((k-1)/2)
    // exp(-c (1-t)/t)
    let mut z = 0.0;
    let mut tz = 0.0;
    let grid = 2_000_000;
    for i in 0..grid {
        let t = (i as f64 + 0.5) / grid as f64;
        let ldens = -k / 2.0 * t.ln() + (k - 1.0) / 2.0 * (1.0 - t).ln() - c * (1.0 - t) / t;
        let d = ldens.exp();
        z += d;
        tz += t * d;
    }
    let quad_mean = tz / z;
    assert!(
        (chain_mean - quad_mean).abs() <= 2.0 * se,
        "chain {chain_mean:.6} +- {se:.6} vs quadrature {quad_mean:.6}"
    );
}

#[test]
fn conjugate_subcase_matches_analytic_posterior() {
    // With g fixed and the coupling flat (huge sigma_eta^2), one dataset's
    // coefficient/variance sub-chain is conjugate: E[beta | y] is the
    // g-prior shrinkage g/(1+g) times the least-squares fit.
    let data = toy_standardized(40, 35, 2, 3);
    let pair = ModelPair::common_only(vec![0, 1]).unwrap();
    let model = GibbsModel::new(&pair, &data).unwrap();
    let g_fixed = 25.0;
    let eta_flat = 1e12;

    let mut state = ChainState {
        xi: [0.0, 0.0],
        alpha: [DVector::zeros(0), DVector::zeros(0)],
        beta: [DVector::zeros(2), DVector::zeros(2)],
        sigma_sq: [1.0, 1.0],
        g: [g_fixed, g_fixed],
        sigma_eta_sq: eta_flat,
        u: 1.0,
    };
    let mut rng = rng_from_seed(4);
    let total = 60_000;
    let burn = 5_000;
    let mut beta_draws: Vec<[f64; 2]> = Vec::with_capacity(total - burn);
    for it in 0..total {
        for j in 0..2usize {
            let (mean, cov) = fc_coef_params(&model, &state, j).unwrap();
            // draw from N(mean, cov) via the covariance Cholesky
            let chol = cov.cholesky().unwrap();
            let z = DVector::from_fn(mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
            let draw = &mean + chol.l() * z;
            state.xi[j] = draw[0];
            state.beta[j] = DVector::from_vec(vec![draw[1], draw[2]]);
            let (shape, scale) = fc_sigma2_params(&model, &state, j);
            state.sigma_sq[j] = inv_gamma(&mut rng, shape, scale);
        }
        if it >= burn {
            beta_draws.push([state.beta[0][0], state.beta[0][1]]);
        }
    }

    // analytic: shrinkage times least squares on the centered design
    let x0 = data.design(0, &[0, 1]);
    let y0 = data.response(0);
    let yc = y0.add_scalar(-y0.mean());
    let bhat = (x0.tr_mul(&x0)).cholesky().unwrap().solve(&x0.tr_mul(&yc));
    let shrink = g_fixed / (1.0 + g_fixed);
    for i in 0..2 {
        let chain: Vec<f64> = beta_draws.iter().map(|d| d[i]).collect();
        let mean = chain.iter().sum::<f64>() / chain.len() as f64;
        let se = batch_se(&chain);
        let analytic = shrink * bhat[i];
        assert!(
            (mean - analytic).abs() <= 3.0 * se,
            "beta[{i}]: chain {mean:.6} +- {se:.6} vs analytic {analytic:.6}"
        );
    }
}

#[test]
fn decoupled_chain_reproduces_the_closed_form_route() {
    // Pin sigma_eta^2 huge and let everything else move: each dataset's
    // marginal posterior is then the single-dataset hyper-g posterior, so
    // the chain's E[beta] must match the closed-form shrinkage route.
    let data = toy_standardized(50, 45, 3, 6);
    let pair = ModelPair::common_only(vec![0, 1, 2]).unwrap();
    let model = GibbsModel::new(&pair, &data).unwrap();
    let eta_flat = 1e12;

    let mut state = ChainState {
        xi: [0.0, 0.0],
        alpha: [DVector::zeros(0), DVector::zeros(0)],
        beta: [DVector::zeros(3), DVector::zeros(3)],
        sigma_sq: [1.0, 1.0],
        g: [50.0, 45.0],
        sigma_eta_sq: eta_flat,
        u: 1.0,
    };
    let mut rng = rng_from_seed(8);
    let total = 80_000;
    let burn = 8_000;
    let mut beta0: Vec<[f64; 3]> = Vec::with_capacity(total - burn);
    for it in 0..total {
        for j in 0..2usize {
            let (mean, cov) = fc_coef_params(&model, &state, j).unwrap();
            let chol = cov.cholesky().unwrap();
            let z = DVector::from_fn(mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
            let draw = &mean + chol.l() * z;
            state.xi[j] = draw[0];
            state.beta[j] = DVector::from_vec(vec![draw[1], draw[2], draw[3]]);
            let (shape, scale) = fc_sigma2_params(&model, &state, j);
            state.sigma_sq[j] = inv_gamma(&mut rng, shape, scale);
            let (g, _) = mh_step_g(&model, &state, j, &mut rng);
            state.g[j] = g;
        }
        if it >= burn {
            beta0.push([state.beta[0][0], state.beta[0][1], state.beta[0][2]]);
        }
    }

    let fit = hyperg_fit(&data.design(0, &[0, 1, 2]), &data.response(0)).unwrap();
    for i in 0..3 {
        let chain: Vec<f64> = beta0.iter().map(|d| d[i]).collect();
        let mean = chain.iter().sum::<f64>() / chain.len() as f64;
        let se = batch_se(&chain);
        assert!(
            (mean - fit.beta_mean[i]).abs() <= 3.0 * se,
            "beta[{i}]: chain {mean:.6} +- {se:.6} vs closed form {:.6}",
            fit.beta_mean[i]
        );
    }
}
