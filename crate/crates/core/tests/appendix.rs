use cdi_lab::appendix::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};

// 40-digit mpmath enumeration.
const ET_10_01: f64 = -0.038061559068259090899;
const ET2_10_01: f64 = 0.0068904104667752417059;
const DRIFT_100_01: f64 = 0.48582010749304236456;
const SECMOM_50_002: f64 = 0.61583031991288293478;
const EXP_256_005_1: f64 = 0.1030949742072353747;
const EXP_256_025_4: f64 = 0.00077014269867586146187;

// Suprema measured on the canonical grid (n = 32..4096, p = 2^-2..2^-16,
// c = 2^-3..2^3), frozen with 10% slack either way.
const C0_DRIFT: f64 = 0.6023;
const C0_SECOND: f64 = 1.3229;
const K_SECMOM: f64 = 0.9988;
const K0_EXP: f64 = 7.1206e15;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

#[test]
fn log_moments_match_high_precision_enumeration() {
    let (et, et2) = log_moment_exact(10, 0.1).unwrap();
    assert!(rel(et, ET_10_01) < 1e-13);
    assert!(rel(et2, ET2_10_01) < 1e-13);
    assert!(rel(drift_ratio(100, 0.1).unwrap(), DRIFT_100_01) < 1e-10);
    assert!(rel(secmom_ratio(50, 0.02).unwrap(), SECMOM_50_002) < 1e-12);
    assert!(rel(expmoment_ratio(256, 0.05, 1.0).unwrap(), EXP_256_005_1) < 1e-11);
    assert!(rel(expmoment_ratio(256, 0.25, 4.0).unwrap(), EXP_256_025_4) < 1e-11);
}

#[test]
fn log_moments_match_monte_carlo() {
    let (n, p) = (10u64, 0.1);
    let (et, et2) = log_moment_exact(n, p).unwrap();
    let bin = Binomial::new(n, 1.0 - p).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let reps = 1_000_000;
    let (mut s1, mut s2, mut s4) = (0.0, 0.0, 0.0);
    for _ in 0..reps {
        let x = bin.sample(&mut rng);
        let t = ((x + u64::from(x < n)) as f64 / n as f64).ln();
        s1 += t;
        s2 += t * t;
        s4 += t.powi(4);
    }
    let r = reps as f64;
    let (m1, m2) = (s1 / r, s2 / r);
    let sd1 = ((m2 - m1 * m1) / r).sqrt();
    let sd2 = ((s4 / r - m2 * m2) / r).sqrt();
    assert!((m1 - et).abs() < 4.0 * sd1, "{m1} vs {et}");
    assert!((m2 - et2).abs() < 4.0 * sd2, "{m2} vs {et2}");
}

#[test]
fn closed_forms_on_full_grid() {
    let check = verify_closed_forms(CLOSED_FORM_N_MAX, &closed_form_p_grid()).unwrap();
    assert_eq!(check.cells, 200 * 25);
    assert!(check.pass, "{check:?}");
}

#[test]
fn bound_constants_are_frozen() {
    let (ns, ps, cs) = (canonical_n_grid(), canonical_p_grid(), canonical_c_grid());
    let (drift, second) = verify_drift_bound(&ns, &ps).unwrap();
    let secmom = verify_secmom_bound(&ns, &ps).unwrap();
    let exp = verify_expmoment_bound(&ns, &ps, &cs).unwrap();
    for (check, frozen) in [(&drift, C0_DRIFT), (&second, C0_SECOND), (&secmom, K_SECMOM), (&exp, K0_EXP)] {
        assert!(check.pass, "{check:?}");
        assert!(rel(check.constant, frozen) < 0.1, "{}: {} vs frozen {frozen}", check.lemma, check.constant);
    }
}

#[test]
fn secmom_is_order_one_when_np_is_large() {
    // For p >= 1/n the n²p² term dominates, so the ratio approaches 1.
    for n in [256u64, 1024, 4096] {
        let r = secmom_ratio(n, 0.25).unwrap();
        assert!((r - 1.0).abs() < 0.05, "n = {n}: {r}");
    }
    assert!(secmom_ratio(32, 0.25).unwrap().is_finite());
}

#[test]
fn large_deviation_bound_holds() {
    let ns: Vec<u64> = (1..=200).chain(canonical_n_grid()).collect();
    let check = verify_ldp_bound(&ns, &canonical_p_grid()).unwrap();
    assert!(check.pass, "{check:?}");
}

#[test]
fn bad_grids_are_rejected() {
    assert!(verify_drift_bound(&[16], &[0.25]).is_err());
    assert!(verify_secmom_bound(&[64], &[0.5]).is_err());
    assert!(verify_expmoment_bound(&[64], &[0.25], &[9.0]).is_err());
}
