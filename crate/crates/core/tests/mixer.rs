use std::f64::consts::PI;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use stomix_core::mixer::{
    conversion_gain, iip3_extrapolate, input_power, lock_detector, measure_point, output_spectrum,
    p1db_sweep, third_order_power, MixerAnalysis, Sideband,
};
use stomix_core::{MixerError, OscillatorTrace, TraceSet};

const FS: f64 = 10e9;
const N: usize = 1 << 15;
const R: f64 = 1500.0;
const F_OSC: f64 = 900e6;
const F_RF: f64 = 300e6;

/// Peak amplitude of a tone delivering `dbm` into `R`.
fn amp(dbm: f64) -> f64 {
    (2.0 * R * 1e-3 * 10f64.powf(dbm / 10.0)).sqrt()
}

fn synth(tones: &[(f64, f64)], noise: f64, seed: u64) -> TraceSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, noise.max(1e-300)).unwrap();
    let v = (0..N)
        .map(|k| {
            let t = k as f64 / FS;
            tones
                .iter()
                .map(|(f, a)| a * (2.0 * PI * f * t).cos())
                .sum::<f64>()
                + normal.sample(&mut rng)
        })
        .collect();
    TraceSet {
        sample_rate: FS,
        t0: 0.0,
        channels: vec![OscillatorTrace {
            v,
            ..Default::default()
        }],
    }
}

fn spectrum_of(tr: &TraceSet) -> stomix_core::mixer::OutputSpectrum {
    output_spectrum(tr, &[R], &MixerAnalysis::default()).unwrap()
}

#[test]
fn conversion_gain_of_a_constructed_sideband() {
    let (p_in, p_s) = (-20.0, -47.5);
    let tr = synth(
        &[
            (F_OSC, amp(-10.0)),
            (F_RF, amp(p_in)),
            (F_OSC - F_RF, amp(p_s)),
        ],
        1e-6,
        1,
    );
    let cg = conversion_gain(&spectrum_of(&tr), F_OSC, F_RF, p_in, Sideband::Lower).unwrap();
    assert!((cg - (p_s - p_in)).abs() < 0.05, "{cg}");
    assert!(matches!(
        conversion_gain(&spectrum_of(&tr), F_OSC, F_RF, p_in, Sideband::Upper),
        Err(MixerError::NoSideband { .. })
    ));
}

#[test]
fn linear_mixer_gain_is_independent_of_drive() {
    let gain = -27.0;
    let mut cgs = Vec::new();
    for p_in in [-30.0, -27.0] {
        let tr = synth(
            &[
                (F_OSC, amp(-10.0)),
                (F_OSC - F_RF, amp(p_in + gain)),
                (F_OSC + F_RF, amp(p_in + gain)),
            ],
            1e-6,
            2,
        );
        cgs.push(conversion_gain(&spectrum_of(&tr), F_OSC, F_RF, p_in, Sideband::Lower).unwrap());
    }
    assert!((cgs[0] - cgs[1]).abs() < 0.01, "{cgs:?}");
    assert!((cgs[0] - gain).abs() < 0.05);
}

#[test]
fn third_order_product_of_a_constructed_tone() {
    // f_rf chosen so f_osc − 3f_rf does not fall on DC
    let f_rf = 110e6;
    let p = -63.0;
    let tr = synth(
        &[
            (F_OSC, amp(-10.0)),
            (f_rf, amp(-20.0)),
            (F_OSC - 3.0 * f_rf, amp(p)),
        ],
        1e-6,
        3,
    );
    let got = third_order_power(&spectrum_of(&tr), F_OSC, f_rf).unwrap();
    assert!((got - p).abs() < 0.1, "{got}");
    // a well-averaged estimate keeps the noise floor below the detection margin
    let bare = synth(&[(F_OSC, amp(-10.0)), (f_rf, amp(-20.0))], 1e-6, 3);
    let analysis = MixerAnalysis {
        segment_len: Some(4096),
        ..Default::default()
    };
    let out = output_spectrum(&bare, &[R], &analysis).unwrap();
    assert!(matches!(
        third_order_power(&out, F_OSC, f_rf),
        Err(MixerError::NoSideband { .. })
    ));
}

#[test]
fn cubic_nonlinearity_gives_third_order_slope_three() {
    // carrier modulated by a cubic function of the RF drive
    let f_rf = 110e6;
    let mut pts = Vec::new();
    for p_in in [-40.0, -36.0, -32.0, -28.0] {
        let carrier = synth(&[(F_OSC, amp(-10.0))], 0.0, 0);
        let rf = synth(&[(f_rf, amp(p_in))], 0.0, 0);
        let mut y = synth(&[], 1e-12, 4);
        for ((o, c), r) in y.channels[0]
            .v
            .iter_mut()
            .zip(&carrier.channels[0].v)
            .zip(&rf.channels[0].v)
        {
            *o += c * (1.0 + 3.0 * r + 40.0 * r * r * r);
        }
        pts.push((
            p_in,
            third_order_power(&spectrum_of(&y), F_OSC, f_rf).unwrap(),
        ));
    }
    let slopes: Vec<f64> = pts
        .windows(2)
        .map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0))
        .collect();
    assert!(slopes.iter().all(|s| (s - 3.0).abs() < 0.1), "{slopes:?}");
}

#[test]
fn report_gain_is_exact_arithmetic() {
    let p_in = -21.3;
    let tr = synth(
        &[
            (F_OSC, amp(-10.0)),
            (F_RF, amp(p_in)),
            (F_OSC - F_RF, amp(-49.9)),
            (F_OSC + F_RF, amp(-51.0)),
        ],
        1e-6,
        5,
    );
    for sideband in [Sideband::Lower, Sideband::Upper] {
        let analysis = MixerAnalysis {
            sideband,
            ..Default::default()
        };
        let r = measure_point(&tr, &[R], F_RF, p_in, 0, &analysis).unwrap();
        assert!((r.f_osc - F_OSC).abs() < 1e6);
        assert_eq!(
            r.conversion_gain.unwrap() + r.p_in,
            r.chosen_sideband(sideband).unwrap()
        );
    }
}

#[test]
fn coarse_resolution_is_refused() {
    let tr = synth(&[(F_OSC, amp(-10.0))], 1e-6, 6);
    let analysis = MixerAnalysis {
        segment_len: Some(256),
        ..Default::default()
    };
    let out = output_spectrum(&tr, &[R], &analysis).unwrap();
    assert!(matches!(
        conversion_gain(&out, F_OSC, F_RF, -20.0, Sideband::Lower),
        Err(MixerError::Spectral(_))
    ));
}

proptest! {
    #[test]
    fn input_power_is_quadratic(i in 1e-6f64..1e-2, r in 10.0f64..1e4) {
        let a = input_power(i, r).unwrap();
        let b = input_power(2.0 * i, r).unwrap();
        prop_assert!((b.dbm - a.dbm - 20.0 * 2f64.log10()).abs() < 1e-9);
        prop_assert!((a.watts - i * i * r / 2.0).abs() <= 1e-12 * a.watts);
    }

    #[test]
    fn p1db_shifts_with_the_sweep(c in -20.0f64..20.0, g in -40.0f64..10.0, p_sat in 0.1f64..10.0) {
        let curve = |shift: f64| -> Vec<(f64, f64)> {
            (0..=50).map(|k| {
                let pi = -40.0 + k as f64;
                let mw = 10f64.powf(pi / 10.0);
                (pi + shift, g + 10.0 * (mw / (1.0 + mw / p_sat)).log10() + shift)
            }).collect()
        };
        let a = p1db_sweep(&curve(0.0)).unwrap().unwrap();
        let b = p1db_sweep(&curve(c)).unwrap().unwrap();
        prop_assert!((b - a - c).abs() < 1e-6);
        let exact = 10.0 * (p_sat * (10f64.powf(0.1) - 1.0)).log10();
        prop_assert!((a - exact).abs() < 0.1, "{} vs {}", a, exact);
    }

    #[test]
    fn intercept_translates_with_input(c in -30.0f64..30.0, g1 in -50.0f64..0.0, g3 in -150.0f64..-60.0) {
        let grid = [-50.0, -45.0, -40.0, -35.0];
        let fund: Vec<(f64, f64)> = grid.iter().map(|&p| (p, p + g1)).collect();
        let third: Vec<(f64, f64)> = grid.iter().map(|&p| (p, 3.0 * p + g3)).collect();
        let a = iip3_extrapolate(&fund, &third).unwrap();
        prop_assert!((a.iip3 - 0.5 * (g1 - g3)).abs() < 1e-9);
        let shift = |v: &[(f64, f64)]| v.iter().map(|(x, y)| (x + c, *y)).collect::<Vec<_>>();
        let b = iip3_extrapolate(&shift(&fund), &shift(&third)).unwrap();
        prop_assert!((b.iip3 - a.iip3 - c).abs() < 1e-9);
        prop_assert!((b.oip3 - a.oip3).abs() < 1e-9);
    }

    #[test]
    fn lock_detector_is_symmetric(rate in -1e8f64..1e8, offset in -3.0f64..3.0, wobble in 0.0f64..1.5) {
        let (fs, f_osc) = (20e9, 900e6);
        let a: Vec<f64> = (0..3000).map(|k| wobble * (k as f64 * 0.01).sin()).collect();
        let b: Vec<f64> = (0..3000).map(|k| offset + 2.0 * PI * rate * k as f64 / fs).collect();
        let ab = lock_detector(&a, &b, fs, f_osc).unwrap();
        let ba = lock_detector(&b, &a, fs, f_osc).unwrap();
        prop_assert_eq!(ab.locked, ba.locked);
        prop_assert!((ab.drift + ba.drift).abs() <= 1e-9 * ab.drift.abs().max(1.0));
        prop_assert!((ab.residual_std - ba.residual_std).abs() < 1e-9);
    }
}
