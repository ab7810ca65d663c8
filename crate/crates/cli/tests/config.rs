use proptest::prelude::*;
use stomix::config::{DeviceOverride, SweepSection, VolumeSection};
use stomix::{emit_config, parse_config, Experiment, ExperimentConfig};
use stomix_core::mixer::{OutputTap, Sideband};
use stomix_core::network::{RfTone, Topology};
use stomix_core::Vec3;

fn field_of(text: &str) -> String {
    parse_config(text).unwrap_err().field
}

#[test]
fn constraint_errors_name_the_field() {
    let f = field_of(
        r#"{"schema_version": 1, "experiment": "trajectory", "device": {"r_p": 1000, "r_ap": 900}}"#,
    );
    assert_eq!(f, "device.r_ap");
    let f =
        field_of(r#"{"schema_version": 1, "experiment": "trajectory", "stepper": {"dt": -1e-12}}"#);
    assert_eq!(f, "stepper.dt");
    let f = field_of(
        r#"{"schema_version": 1, "experiment": "network", "overrides": [{"index": 2, "r_ap": 500}]}"#,
    );
    assert_eq!(f, "network.oscillators[2].r_ap");
    let f = field_of(r#"{"schema_version": 1, "experiment": "network", "network": {"g_m": 1e-3}}"#);
    assert_eq!(f, "network.g_m");
    let f =
        field_of(r#"{"schema_version": 1, "experiment": "network", "run": {"settle_time": 5e-6}}"#);
    assert_eq!(f, "run.settle_time");
    assert_eq!(
        field_of(r#"{"schema_version": 2, "experiment": "network"}"#),
        "schema_version"
    );
    assert_eq!(
        field_of(r#"{"schema_version": 1, "experiment": "p1db"}"#),
        "sweep"
    );
}

#[test]
fn rk4_at_finite_temperature_is_rejected() {
    let f = field_of(
        r#"{"schema_version": 1, "experiment": "trajectory", "stepper": {"scheme": "rk4"}}"#,
    );
    assert_eq!(f, "stepper.scheme");
}

#[test]
fn unknown_fields_are_rejected_with_their_path() {
    let e =
        parse_config(r#"{"schema_version": 1, "experiment": "network", "network": {"gm": 1e-4}}"#)
            .unwrap_err();
    assert!(e.field.starts_with("network"), "{e}");
    assert!(e.message.contains("unknown field `gm`"), "{e}");
    let e =
        parse_config(r#"{"schema_version": 1, "experiment": "network", "colour": 3}"#).unwrap_err();
    assert!(e.message.contains("unknown field `colour`"), "{e}");
}

#[test]
fn syntax_and_type_errors() {
    assert!(parse_config("{").is_err());
    let e =
        parse_config(r#"{"schema_version": 1, "experiment": "network", "stepper": {"dt": "1ps"}}"#)
            .unwrap_err();
    assert_eq!(e.field, "stepper.dt");
    let e = parse_config(r#"{"schema_version": 1, "experiment": "warp"}"#).unwrap_err();
    assert_eq!(e.field, "experiment");
}

#[test]
fn emitted_defaults_are_complete() {
    let text = emit_config(&ExperimentConfig::new(Experiment::Network));
    for key in [
        "\"device\"",
        "\"stepper\"",
        "\"dt\"",
        "\"g_m\"",
        "\"band_width\"",
        "\"master_seed\"",
    ] {
        assert!(text.contains(key), "{key} missing");
    }
}

fn unit() -> impl Strategy<Value = Vec3> {
    (-1.0f64..1.0, -1.0f64..1.0, 0.1f64..1.0).prop_map(|(x, y, z)| Vec3::new(x, y, z).normalized())
}

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![
        -1e3f64..1e3,
        (-30i32..30, 1.0f64..10.0).prop_map(|(e, m)| m * 10f64.powi(e))
    ]
}

fn experiment() -> impl Strategy<Value = Experiment> {
    prop_oneof![
        Just(Experiment::Trajectory),
        Just(Experiment::Network),
        Just(Experiment::PsdCompare),
        Just(Experiment::MixerSweep),
        Just(Experiment::P1db),
        Just(Experiment::Iip3),
        Just(Experiment::VolumeLock),
    ]
}

prop_compose! {
    fn config()(
        experiment in experiment(),
        master_seed in any::<u64>(),
        alpha in 1e-4f64..1.0,
        ms in 1e5f64..2e6,
        volume in 1e-25f64..1e-20,
        epsilon in finite(),
        k1 in (finite(), finite(), finite()),
        m_p in unit(),
        r_p in 10.0f64..1e4,
        tmr in 1e-3f64..3.0,
        temperature in 0.0f64..600.0,
        dt in 1e-14f64..1e-11,
        renormalize in any::<bool>(),
        oscillators in 2usize..5,
        i_dc in finite(),
        g_m in 0.0f64..1e-4,
        none in any::<bool>(),
        hp_cutoff in 1e3f64..1e8,
        tone in proptest::option::of((finite(), 1e6f64..1e10, finite())),
        init in proptest::option::of(unit()),
        duration in 1e-9f64..1e-5,
        settle_frac in 0.01f64..0.9,
        stride in 1usize..1000,
        seeds in 1usize..20,
        segment_len in proptest::option::of(16usize..1 << 16),
        band_width in 1e3f64..1e9,
        upper in any::<bool>(),
        sum in any::<bool>(),
        r_load in proptest::option::of(1.0f64..1e4),
        grid in proptest::collection::vec(0.1f64..5.0, 1..8),
        f_rf in 1e6f64..1e10,
        override_r in proptest::option::of((0usize..2, 0.1f64..2.0)),
        volumes in proptest::collection::vec(1e-25f64..1e-20, 2..5),
    ) -> ExperimentConfig {
        let mut c = ExperimentConfig::new(experiment);
        c.master_seed = master_seed;
        c.output_dir = format!("runs/{master_seed}");
        c.device.alpha = alpha;
        c.device.ms = ms;
        c.device.volume = volume;
        c.device.epsilon = epsilon;
        c.device.k1 = Vec3::new(k1.0, k1.1, k1.2);
        c.device.m_p = m_p;
        c.device.r_p = r_p;
        c.device.r_ap = r_p * (1.0 + tmr);
        c.device.temperature = temperature;
        c.stepper.dt = dt;
        c.stepper.renormalize = renormalize;
        c.network.oscillators = oscillators;
        c.network.i_dc = i_dc;
        c.network.g_m = g_m;
        c.network.topology = if none { Topology::None } else { Topology::Global };
        c.network.hp_cutoff = hp_cutoff;
        if let Some((amplitude, frequency, phase)) = tone {
            c.network.rf_tones.push(RfTone { amplitude, frequency, phase, target: 0 });
        }
        if let Some(m) = init {
            c.network.initial_m = vec![m; oscillators];
        }
        if let Some((index, scale)) = override_r {
            c.overrides.push(DeviceOverride { index, r_ap: Some(c.device.r_ap * (1.0 + scale)), ..Default::default() });
        }
        c.run.duration = duration;
        c.run.settle_time = duration * settle_frac;
        c.run.sample_stride = stride;
        c.run.seeds = seeds;
        c.analysis.segment_len = segment_len;
        c.analysis.band_width = band_width;
        c.analysis.sideband = if upper { Sideband::Upper } else { Sideband::Lower };
        c.analysis.tap = if sum { OutputTap::Sum } else { OutputTap::Channel(1) };
        c.analysis.r_load = r_load;
        let p_in_grid = grid.iter().scan(-80.0, |p, d| { *p += d; Some(*p) }).collect();
        c.sweep = Some(SweepSection { p_in_grid, f_rf, rf_target: 1 });
        c.volume_lock = Some(VolumeSection { volumes, scale_current: !upper });
        c
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn emit_then_parse_is_identity(cfg in config()) {
        prop_assume!(cfg.validate().is_ok());
        let text = emit_config(&cfg);
        let back = parse_config(&text).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(emit_config(&back), text);
    }
}
