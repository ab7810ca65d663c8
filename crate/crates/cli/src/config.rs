//! Versioned experiment configuration.
//!
//! A config is a strict JSON document: unknown fields are rejected at every
//! level and every physical quantity is given in SI units. Omitted sections
//! take the defaults documented on each field.

use std::fmt;

use serde::{Deserialize, Serialize};
use stomix_core::compare::CompareSpec;
use stomix_core::mixer::{
    MixerAnalysis, OutputTap, RunSettings, Sideband, SweepSpec, VolumeStudySpec,
};
use stomix_core::network::{
    NetworkConfig, RfTone, Topology, DEFAULT_G_M, DEFAULT_HP_CUTOFF, DEFAULT_I_DC,
};
use stomix_core::{DeviceParams, ParamError, StepperConfig, Vec3};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Trajectory,
    Network,
    PsdCompare,
    MixerSweep,
    P1db,
    Iip3,
    VolumeLock,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Trajectory => "trajectory",
            Experiment::Network => "network",
            Experiment::PsdCompare => "psd_compare",
            Experiment::MixerSweep => "mixer_sweep",
            Experiment::P1db => "p1db",
            Experiment::Iip3 => "iip3",
            Experiment::VolumeLock => "volume_lock",
        }
    }

    fn needs_sweep(self) -> bool {
        matches!(
            self,
            Experiment::MixerSweep | Experiment::P1db | Experiment::Iip3
        )
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-oscillator departures from the shared `device` block.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceOverride {
    pub index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub volume: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k1: Option<Vec3>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k2: Option<Vec3>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_p: Option<Vec3>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_ap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    /// Bias current of this oscillator, A.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub i_dc: Option<f64>,
}

impl DeviceOverride {
    fn apply(&self, p: &mut DeviceParams) {
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { p.$f = v; } )* };
        }
        set!(
            alpha,
            gamma,
            ms,
            volume,
            epsilon,
            k1,
            k2,
            m_p,
            r_p,
            r_ap,
            temperature
        );
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSection {
    /// Number of oscillators. The trajectory experiment uses oscillator 0 only.
    pub oscillators: usize,
    /// Bias current shared by all oscillators, A.
    pub i_dc: f64,
    /// Coupling transconductance, S.
    pub g_m: f64,
    pub topology: Topology,
    /// Corner of the series-capacitor high-pass, Hz.
    pub hp_cutoff: f64,
    pub rf_tones: Vec<RfTone>,
    /// Initial directions; empty picks a slightly staggered start per index.
    pub initial_m: Vec<Vec3>,
    /// External field, T.
    pub h_ext: Vec3,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self {
            oscillators: 3,
            i_dc: DEFAULT_I_DC,
            g_m: DEFAULT_G_M,
            topology: Topology::Global,
            hp_cutoff: DEFAULT_HP_CUTOFF,
            rf_tones: Vec::new(),
            initial_m: Vec::new(),
            h_ext: Vec3::ZERO,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    /// Simulated time per run including settling, s.
    pub duration: f64,
    /// Start-up transient discarded before analysis, s.
    pub settle_time: f64,
    /// Integrator steps per recorded sample.
    pub sample_stride: usize,
    /// Number of seeds; run k uses `master_seed + k`.
    pub seeds: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            duration: 2e-6,
            settle_time: 200e-9,
            sample_stride: 50,
            seeds: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    /// Welch segment length; `null` picks at least four segments.
    pub segment_len: Option<usize>,
    /// Carrier band for power figures, Hz.
    pub band_width: f64,
    /// Carrier search window, Hz.
    pub carrier_search: [f64; 2],
    /// Mixer output voltage.
    pub tap: OutputTap,
    /// Mixer product band, in resolution bandwidths.
    pub band_bins: f64,
    /// Load for dBm figures, Ω; `null` uses R_av of the tapped device.
    pub r_load: Option<f64>,
    /// Sideband reported as the conversion gain.
    pub sideband: Sideband,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        let m = MixerAnalysis::default();
        Self {
            segment_len: m.segment_len,
            band_width: 100e6,
            carrier_search: m.carrier_search,
            tap: m.tap,
            band_bins: m.band_bins,
            r_load: m.r_load,
            sideband: m.sideband,
        }
    }
}

impl AnalysisSection {
    pub fn mixer(&self) -> MixerAnalysis {
        MixerAnalysis {
            tap: self.tap,
            segment_len: self.segment_len,
            band_bins: self.band_bins,
            r_load: self.r_load,
            carrier_search: self.carrier_search,
            sideband: self.sideband,
        }
    }
}

/// RF input-power sweep shared by `mixer_sweep`, `p1db` and `iip3`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// Available RF input powers, dBm, strictly increasing.
    pub p_in_grid: Vec<f64>,
    /// RF frequency, Hz.
    pub f_rf: f64,
    /// Oscillator receiving the RF tone.
    #[serde(default)]
    pub rf_target: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeSection {
    /// Free-layer volumes, m³.
    pub volumes: Vec<f64>,
    /// Scale bias and RF currents with volume (constant current density).
    #[serde(default = "yes")]
    pub scale_current: bool,
}

fn yes() -> bool {
    true
}

fn default_output_dir() -> String {
    "out".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub experiment: Experiment,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
    #[serde(default)]
    pub device: DeviceParams,
    #[serde(default)]
    pub overrides: Vec<DeviceOverride>,
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default)]
    pub stepper: StepperConfig,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub volume_lock: Option<VolumeSection>,
}

/// A config rejected by [`parse_config`], with the path of the offending field.
#[derive(Clone, Debug, PartialEq, thiserror::Error)]
#[error("`{field}`: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl From<ParamError> for ConfigError {
    fn from(e: ParamError) -> Self {
        Self::new(e.field(), e.message())
    }
}

fn scoped(section: &str) -> impl Fn(ParamError) -> ConfigError + '_ {
    move |e| e.within(section).into()
}

/// Parses and validates a config document.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let field = if path == "." { String::new() } else { path };
        ConfigError::new(field, e.into_inner().to_string())
    })?;
    cfg.validate()?;
    Ok(cfg)
}

/// Serializes a config in the canonical artifact format.
pub fn emit_config(cfg: &ExperimentConfig) -> String {
    crate::output::to_json(cfg)
}

impl ExperimentConfig {
    /// Minimal config for `experiment` with every section at its default.
    pub fn new(experiment: Experiment) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            experiment,
            master_seed: 0,
            output_dir: default_output_dir(),
            device: DeviceParams::default(),
            overrides: Vec::new(),
            network: NetworkSection::default(),
            stepper: StepperConfig::default(),
            run: RunSection::default(),
            analysis: AnalysisSection::default(),
            sweep: None,
            volume_lock: None,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::new(
                "schema_version",
                format!(
                    "unsupported version {}, expected {SCHEMA_VERSION}",
                    self.schema_version
                ),
            ));
        }
        self.device.validate().map_err(scoped("device"))?;
        let n = self.oscillator_count();
        for (k, o) in self.overrides.iter().enumerate() {
            if o.index >= self.network.oscillators {
                return Err(ConfigError::new(
                    format!("overrides[{k}].index"),
                    format!(
                        "must be < network.oscillators ({})",
                        self.network.oscillators
                    ),
                ));
            }
            if o.i_dc.is_some_and(|i| !i.is_finite()) {
                return Err(ConfigError::new(
                    format!("overrides[{k}].i_dc"),
                    "must be finite",
                ));
            }
        }
        if self.experiment == Experiment::Trajectory {
            if let Some(k) = self.network.rf_tones.iter().position(|t| t.target != 0) {
                return Err(ConfigError::new(
                    format!("network.rf_tones[{k}].target"),
                    "the trajectory experiment simulates oscillator 0 only",
                ));
            }
        }
        let net = self.network_config();
        net.validate().map_err(scoped("network"))?;
        self.stepper.validate().map_err(scoped("stepper"))?;
        for p in &net.oscillators[..n] {
            self.stepper.validate_for(p).map_err(scoped("stepper"))?;
        }
        self.validate_run()?;
        self.analysis
            .mixer()
            .validate()
            .map_err(scoped("analysis"))?;
        if !(self.analysis.band_width.is_finite() && self.analysis.band_width > 0.0) {
            return Err(ConfigError::new("analysis.band_width", "must be > 0"));
        }
        if self.experiment.needs_sweep() {
            let spec = self.sweep_spec().ok_or_else(|| {
                ConfigError::new(
                    "sweep",
                    format!("required for the {} experiment", self.experiment),
                )
            })?;
            spec.validate().map_err(scoped("sweep"))?;
            if spec.rf_target >= n {
                return Err(ConfigError::new(
                    "sweep.rf_target",
                    format!("must be < {n}"),
                ));
            }
            if let OutputTap::Channel(j) = self.analysis.tap {
                if j >= n {
                    return Err(ConfigError::new(
                        "analysis.tap",
                        format!("channel must be < {n}"),
                    ));
                }
            }
        }
        if self.experiment == Experiment::VolumeLock {
            let spec = self.volume_spec().ok_or_else(|| {
                ConfigError::new("volume_lock", "required for the volume_lock experiment")
            })?;
            spec.validate().map_err(scoped("volume_lock"))?;
            if n < 2 {
                return Err(ConfigError::new(
                    "network.oscillators",
                    "locking needs at least two oscillators",
                ));
            }
        }
        if self.experiment == Experiment::PsdCompare {
            self.compare_spec().validate().map_err(scoped("run"))?;
        }
        Ok(())
    }

    fn validate_run(&self) -> Result<(), ConfigError> {
        let r = &self.run;
        if !(r.duration.is_finite() && r.duration > 0.0) {
            return Err(ConfigError::new(
                "run.duration",
                format!("must be > 0, got {}", r.duration),
            ));
        }
        if !(r.settle_time.is_finite() && r.settle_time >= 0.0 && r.settle_time < r.duration) {
            return Err(ConfigError::new(
                "run.settle_time",
                "must lie in [0, run.duration)",
            ));
        }
        if r.sample_stride == 0 {
            return Err(ConfigError::new("run.sample_stride", "must be >= 1"));
        }
        if r.seeds == 0 {
            return Err(ConfigError::new("run.seeds", "must be >= 1"));
        }
        if self.experiment.needs_sweep() && r.settle_time == 0.0 {
            return Err(ConfigError::new(
                "run.settle_time",
                "must be > 0 for sweeps",
            ));
        }
        Ok(())
    }

    /// Oscillators actually simulated.
    pub fn oscillator_count(&self) -> usize {
        if self.experiment == Experiment::Trajectory {
            1
        } else {
            self.network.oscillators
        }
    }

    /// Seeds of all runs, `master_seed + k`.
    pub fn seeds(&self) -> Vec<u64> {
        (0..self.run.seeds as u64)
            .map(|k| self.master_seed.wrapping_add(k))
            .collect()
    }

    /// Device parameters of oscillator `j` after overrides.
    pub fn device_for(&self, j: usize) -> DeviceParams {
        let mut p = self.device.clone();
        self.overrides
            .iter()
            .filter(|o| o.index == j)
            .for_each(|o| o.apply(&mut p));
        p
    }

    fn i_dc_for(&self, j: usize) -> f64 {
        self.overrides
            .iter()
            .filter(|o| o.index == j)
            .fold(self.network.i_dc, |i, o| o.i_dc.unwrap_or(i))
    }

    /// The simulated network; a single oscillator for the trajectory experiment.
    pub fn network_config(&self) -> NetworkConfig {
        let n = self.oscillator_count();
        let s = &self.network;
        NetworkConfig {
            oscillators: (0..n).map(|j| self.device_for(j)).collect(),
            i_dc: (0..n).map(|j| self.i_dc_for(j)).collect(),
            g_m: s.g_m,
            topology: s.topology,
            hp_cutoff: s.hp_cutoff,
            rf_tones: s.rf_tones.clone(),
            master_seed: self.master_seed,
            initial_m: if s.initial_m.is_empty() {
                Vec::new()
            } else {
                s.initial_m.iter().take(n).copied().collect()
            },
            h_ext: s.h_ext,
        }
    }

    pub fn run_settings(&self, threads: usize) -> RunSettings {
        RunSettings {
            stepper: self.stepper.clone(),
            stride: self.run.sample_stride,
            threads,
        }
    }

    pub fn sweep_spec(&self) -> Option<SweepSpec> {
        let s = self.sweep.as_ref()?;
        Some(SweepSpec {
            p_in_grid: s.p_in_grid.clone(),
            f_rf: s.f_rf,
            settle_time: self.run.settle_time,
            measure_time: self.run.duration - self.run.settle_time,
            seeds: self.seeds(),
            rf_target: s.rf_target,
        })
    }

    pub fn volume_spec(&self) -> Option<VolumeStudySpec> {
        let s = self.volume_lock.as_ref()?;
        Some(VolumeStudySpec {
            volumes: s.volumes.clone(),
            settle_time: self.run.settle_time,
            measure_time: self.run.duration - self.run.settle_time,
            scale_current: s.scale_current,
        })
    }

    pub fn compare_spec(&self) -> CompareSpec {
        CompareSpec {
            seeds: self.seeds(),
            duration: self.run.duration,
            settle_time: self.run.settle_time,
            band_width: self.analysis.band_width,
            segment_len: self.analysis.segment_len,
            carrier_search: self.analysis.carrier_search,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_trajectory_fills_defaults() {
        let cfg = parse_config(r#"{"schema_version": 1, "experiment": "trajectory"}"#).unwrap();
        assert_eq!(cfg, ExperimentConfig::new(Experiment::Trajectory));
        assert_eq!(cfg.stepper.dt, 1e-12);
        assert_eq!(cfg.network_config().len(), 1);
    }

    #[test]
    fn overrides_apply_per_index() {
        let mut cfg = ExperimentConfig::new(Experiment::Network);
        cfg.overrides.push(DeviceOverride {
            index: 1,
            r_ap: Some(2500.0),
            i_dc: Some(1.2e-3),
            ..Default::default()
        });
        let net = cfg.network_config();
        assert_eq!(net.oscillators[0].r_ap, 2000.0);
        assert_eq!(net.oscillators[1].r_ap, 2500.0);
        assert_eq!(net.i_dc, vec![1e-3, 1.2e-3, 1e-3]);
    }

    #[test]
    fn seeds_follow_master_seed() {
        let mut cfg = ExperimentConfig::new(Experiment::PsdCompare);
        cfg.master_seed = 10;
        cfg.run.seeds = 3;
        assert_eq!(cfg.seeds(), vec![10, 11, 12]);
    }
}
