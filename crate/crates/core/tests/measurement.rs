use num_bigint::BigInt;
use num_rational::BigRational;
use probestation_core::measurement::{
    critical_current, fit_line, fit_resistance, ic_r_product, run_iv_sweep, Constants, DutModel, IVSample,
    IVSweepConfig, ELEMENTARY_CHARGE,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Closed-form normal equations, uncentred, written independently of the library.
fn normal_equation_slope(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let sx: f64 = points.iter().map(|p| p.0).sum();
    let sy: f64 = points.iter().map(|p| p.1).sum();
    let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = points.iter().map(|p| p.0 * p.1).sum();
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    (slope, (sy - slope * sx) / n)
}

fn eleven_points() -> IVSweepConfig {
    IVSweepConfig {
        current_points: (0..11).map(|k| (k as f64 - 5.0) / 1e6).collect(),
        v_max: 1.0,
        i_max: 1e-5,
        dwell: 0.0,
    }
}

#[test]
fn noisy_fit_matches_normal_equations() {
    let dut = DutModel {
        voltage_noise_sigma: 1e-5,
        ..DutModel::closed(1000.0, 0.25)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let samples = run_iv_sweep(&eleven_points(), &dut, &mut rng, |_| {}).unwrap();
    let fit = fit_resistance(&samples).unwrap();
    let pts: Vec<_> = samples.iter().map(|s| (s.current, s.voltage)).collect();
    let (slope, intercept) = normal_equation_slope(&pts);
    assert!(((fit.resistance - slope) / slope).abs() <= 1e-9);
    assert!((fit.intercept - intercept).abs() <= 1e-9 * 1e-5 + 1e-15);
    assert!(fit.rms > 0.0);
}

fn rational(v: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(v), BigInt::from(d))
}

#[test]
fn rational_fit_is_exact() {
    let r = rational(10_501, 7);
    let b = rational(-3, 1000);
    let pts: Vec<_> = (-5..=5).map(|k| {
        let i = rational(k, 1_000_000);
        (i.clone(), r.clone() * i + b.clone())
    }).collect();
    let fit = fit_line(&pts).unwrap();
    assert_eq!(fit.slope, r);
    assert_eq!(fit.intercept, b);
    assert_eq!(fit.sse, rational(0, 1));
}

#[test]
fn rational_product_identity_is_exact() {
    // A rational stand-in for pi; the identity holds for any value.
    let k = Constants::with_pi(rational(355, 113));
    for (r, gap) in [(rational(1000, 1), rational(288, 1)), (rational(12_345, 17), rational(7, 3))] {
        let gap = gap * BigRational::from_float(1e-25).unwrap();
        let p = critical_current(r.clone(), gap.clone(), &k).unwrap();
        assert_eq!(p.critical_current * r, ic_r_product(gap, &k));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn noiseless_fit_is_exact(r in 1.0..1e6f64, contact in 0.0..10.0f64, n in 2usize..40) {
        let cfg = IVSweepConfig {
            current_points: (0..n).map(|k| (k as f64 - n as f64 / 2.0) * 1e-7).collect(),
            v_max: 1e3,
            i_max: 1e-5,
            dwell: 0.0,
        };
        let dut = DutModel::closed(r, contact);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let samples = run_iv_sweep(&cfg, &dut, &mut rng, |_| {}).unwrap();
        let fit = fit_resistance(&samples).unwrap();
        let network = r + 2.0 * contact;
        prop_assert!(((fit.resistance - network) / network).abs() <= 1e-12);
    }

    /// (a / R) * R stays within two ulps of a, and repeated evaluation is bit-identical.
    #[test]
    fn product_identity_in_f64(r in 1e-3..1e9f64, gap in 1e-26..1e-20f64) {
        let k = Constants::codata();
        let a = ic_r_product(gap, &k);
        let p = critical_current(r, gap, &k).unwrap();
        let q = critical_current(r, gap, &k).unwrap();
        prop_assert_eq!(p.critical_current.to_bits(), q.critical_current.to_bits());
        let ulp = f64::EPSILON * a;
        prop_assert!((p.critical_current * r - a).abs() <= 2.0 * ulp);
        let direct = std::f64::consts::PI * gap / (2.0 * ELEMENTARY_CHARGE);
        prop_assert_eq!(a.to_bits(), direct.to_bits());
    }

    #[test]
    fn compliance_never_exceeded(r in 1.0..1e7f64, contact in 0.0..5.0f64, noise in 0.0..1e-2f64,
                                 v_max in 1e-4..1.0f64, i_max in 1e-7..1e-4f64, n in 2usize..30,
                                 open: bool, seed: u64) {
        let cfg = IVSweepConfig {
            current_points: (0..n).map(|k| i_max * (2.0 * k as f64 / (n - 1) as f64 - 1.0)).collect(),
            v_max,
            i_max,
            dwell: 0.0,
        };
        let dut = DutModel { true_resistance: r, contact_resistance: contact, voltage_noise_sigma: noise, open_circuit: open };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples = run_iv_sweep(&cfg, &dut, &mut rng, |_| {}).unwrap();
        for s in &samples {
            prop_assert!(s.voltage.abs() <= v_max);
            prop_assert!(s.current.abs() <= i_max);
        }
        if open {
            prop_assert!(samples.iter().all(|s: &IVSample| s.clamped));
        }
    }

    /// The two-point fit overestimates by exactly the two contact resistances.
    #[test]
    fn two_point_bias(r in 1000.0..1e6f64) {
        let dut = DutModel::closed(r, 0.25);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let samples = run_iv_sweep(&eleven_points(), &dut, &mut rng, |_| {}).unwrap();
        let fit = fit_resistance(&samples).unwrap();
        let bias = fit.resistance - r;
        prop_assert!((bias - 0.5).abs() <= 1e-12 * r);
        prop_assert!(bias / r < 1e-3);
    }
}
