//! Brute-force Monte Carlo against the closed-form breakdowns. The
//! acceptance suite runs the full randomized battery; these are two pinned
//! instances that fail fast when either side drifts.

use twoset_core::linmodel::{pe_grcm, pe_rcm, with_intercept, Direction, ModelPair, VarianceEstimates};
use twoset_core::montecarlo::{
    designs_as_standardized, empirical_pe, DesignSpec, SimConfig, SimDesigns,
};

#[test]
fn common_only_formula_agrees_with_brute_force() {
    let cfg = SimConfig {
        n0: 50,
        n1: 60,
        sigma0_sq: 0.8,
        sigma1_sq: 1.3,
        sigma_eta_sq: 0.25,
        intercept: 0.5,
        beta: vec![1.0, -0.7],
        alpha0: vec![],
        alpha1: vec![],
        design: DesignSpec::Gaussian,
        replications: 60_000,
        seed: 42,
        redraw_designs: false,
        intercept_random: false,
        intercept_in_common: true,
    };
    let designs = SimDesigns::for_config(&cfg).unwrap();
    let v = VarianceEstimates::new(0.8, 1.3, 0.25).unwrap();
    let x0 = with_intercept(&designs.common0);
    let x1 = with_intercept(&designs.common1);
    let closed = pe_rcm(&v, &x0, &x1, 2, Direction::OneFromZero).unwrap();
    let mc = empirical_pe(&cfg, Direction::OneFromZero).unwrap();
    assert!(
        (mc.mean - closed.total).abs() <= 3.0 * mc.mc_standard_error,
        "mc {} +- {} vs closed {}",
        mc.mean,
        mc.mc_standard_error,
        closed.total
    );
}

#[test]
fn generalized_formula_agrees_with_brute_force_both_directions() {
    let cfg = SimConfig {
        n0: 40,
        n1: 40,
        sigma0_sq: 1.1,
        sigma1_sq: 0.6,
        sigma_eta_sq: 0.15,
        intercept: -0.2,
        beta: vec![0.9, 0.4],
        alpha0: vec![1.5],
        alpha1: vec![-0.8],
        design: DesignSpec::Gaussian,
        replications: 60_000,
        seed: 7,
        redraw_designs: false,
        intercept_random: false,
        intercept_in_common: true,
    };
    let designs = SimDesigns::for_config(&cfg).unwrap();
    let data = designs_as_standardized(&designs);
    // columns: 0,1 common; 2 specific to dataset 0; 3 specific to dataset 1
    let pair = ModelPair::new(vec![0, 1], vec![2], vec![3]).unwrap();
    let v = VarianceEstimates::new(1.1, 0.6, 0.15).unwrap();
    for direction in Direction::BOTH {
        let closed = pe_grcm(&v, &pair, &data, direction).unwrap();
        let mc = empirical_pe(&cfg, direction).unwrap();
        assert!(
            (mc.mean - closed.total).abs() <= 3.0 * mc.mc_standard_error,
            "{direction}: mc {} +- {} vs closed {}",
            mc.mean,
            mc.mc_standard_error,
            closed.total
        );
    }
}

#[test]
fn mc_standard_error_shrinks_like_inverse_sqrt() {
    let mut cfg = SimConfig {
        n0: 30,
        n1: 30,
        sigma0_sq: 1.0,
        sigma1_sq: 1.0,
        sigma_eta_sq: 0.0,
        intercept: 0.0,
        beta: vec![0.5],
        alpha0: vec![],
        alpha1: vec![],
        design: DesignSpec::Gaussian,
        replications: 4_000,
        seed: 9,
        redraw_designs: false,
        intercept_random: false,
        intercept_in_common: true,
    };
    let se_r = empirical_pe(&cfg, Direction::OneFromZero)
        .unwrap()
        .mc_standard_error;
    cfg.replications = 16_000;
    let se_4r = empirical_pe(&cfg, Direction::OneFromZero)
        .unwrap()
        .mc_standard_error;
    let ratio = se_r / se_4r;
    assert!(
        (ratio - 2.0).abs() < 0.25,
        "se ratio {ratio} not close to 2"
    );
}
