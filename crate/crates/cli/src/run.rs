//! Experiment dispatch and artifact layout.

use std::io;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use stomix_core::compare::{psd_compare, ArmResult, OscillatorMetrics};
use stomix_core::integrator::{run_trajectory, TrajectorySpec};
use stomix_core::mixer::{
    network_lock, run_mixer_sweep, unit_slope_gain, volume_lock_study, Intercept, LockVerdict,
    PairLock, Sideband, SweepPoint, SweepResult, REFIT_MARGIN_DB,
};
use stomix_core::network::{rf_current, simulate_network, NetworkConfig};
use stomix_core::spectral::{
    band_power, find_carrier, linewidth, segment_for, welch_psd, Spectrum,
};
use stomix_core::{MixerError, RngStream, SimError, SpectralError, TraceSet};

use crate::config::{emit_config, ConfigError, Experiment, ExperimentConfig};
use crate::output::{sha256_hex, write_manifest, ArtifactDir, RunManifest};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("simulation error: {0}")]
    Simulation(SimError),
    #[error("analysis error: {0}")]
    Analysis(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

impl RunError {
    /// Process exit status: 1 config, 2 simulation or I/O, 3 analysis.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 1,
            RunError::Simulation(_) | RunError::Io(_) => 2,
            RunError::Analysis(_) => 3,
        }
    }
}

impl From<SimError> for RunError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Param(p) => RunError::Config(p.into()),
            other => RunError::Simulation(other),
        }
    }
}

impl From<SpectralError> for RunError {
    fn from(e: SpectralError) -> Self {
        RunError::Analysis(e.to_string())
    }
}

impl From<MixerError> for RunError {
    fn from(e: MixerError) -> Self {
        match e {
            MixerError::Sim(s) => s.into(),
            MixerError::Param(p) => RunError::Config(p.into()),
            other => RunError::Analysis(other.to_string()),
        }
    }
}

/// Runs `cfg`, writes its artifacts into `out` and finishes with the manifest.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    out: &Path,
    threads: usize,
) -> Result<RunManifest, RunError> {
    cfg.validate()?;
    let start = Instant::now();
    let mut dir = ArtifactDir::create(out)?;
    let config_text = emit_config(cfg);
    dir.write_bytes("config.json", config_text.as_bytes())?;
    match cfg.experiment {
        Experiment::Trajectory | Experiment::Network => simulate(cfg, &mut dir)?,
        Experiment::PsdCompare => compare(cfg, threads, &mut dir)?,
        Experiment::MixerSweep | Experiment::P1db | Experiment::Iip3 => {
            sweep(cfg, threads, &mut dir)?
        }
        Experiment::VolumeLock => volumes(cfg, threads, &mut dir)?,
    }
    let manifest = RunManifest {
        config_hash: sha256_hex(config_text.as_bytes()),
        seed: cfg.master_seed,
        artifacts: dir.artifacts().to_vec(),
        software_version: env!("CARGO_PKG_VERSION").to_string(),
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    write_manifest(dir.root(), &manifest)?;
    Ok(manifest)
}

/// Carrier figures of one channel.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChannelMetrics {
    pub channel: usize,
    pub frequency: f64,
    pub linewidth: f64,
    pub linewidth_fitted: bool,
    pub resolution_limited: bool,
    pub band_power_dbm: f64,
    /// Mean-square voltage, V².
    pub mean_square: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LockSummary {
    pub verdict: LockVerdict,
    pub pairs: Vec<PairLock>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimulationMetrics {
    pub experiment: Experiment,
    pub seed: u64,
    pub sample_rate: f64,
    /// Samples after settling.
    pub samples: usize,
    pub channels: Vec<ChannelMetrics>,
    pub lock: Option<LockSummary>,
    /// Why the lock test was skipped, when it was.
    pub lock_note: Option<String>,
}

fn trace_for(cfg: &ExperimentConfig, net: &NetworkConfig) -> Result<TraceSet, SimError> {
    if cfg.experiment == Experiment::Network {
        return simulate_network(net, cfg.run.duration, &cfg.stepper, cfg.run.sample_stride);
    }
    let spec = TrajectorySpec {
        initial: net.initial_state()[0],
        i_dc: net.i_dc[0],
        h_ext: net.h_ext,
        duration: cfg.run.duration,
        sample_stride: cfg.run.sample_stride,
    };
    let tones = &net.rf_tones;
    run_trajectory(
        &spec,
        |t| rf_current(t, tones, 1)[0],
        &net.oscillators[0],
        &cfg.stepper,
        RngStream::new(cfg.master_seed, 0),
    )
}

fn channel_spectrum(cfg: &ExperimentConfig, v: &[f64], fs: f64) -> Result<Spectrum, SpectralError> {
    let seg = cfg
        .analysis
        .segment_len
        .unwrap_or_else(|| segment_for(v.len(), 4));
    welch_psd(v, fs, seg, 0.5)
}

fn simulate(cfg: &ExperimentConfig, dir: &mut ArtifactDir) -> Result<(), RunError> {
    let net = cfg.network_config();
    let trace = trace_for(cfg, &net)?;
    let settled = trace.after(cfg.run.settle_time);
    let fs = settled.sample_rate;
    let [lo, hi] = cfg.analysis.carrier_search;
    let mut spectra = Vec::new();
    let mut channels = Vec::new();
    for (j, ch) in settled.channels.iter().enumerate() {
        let s = channel_spectrum(cfg, &ch.v, fs)?;
        let carrier = find_carrier(&s, lo, hi.min(s.nyquist()))?;
        let lw = linewidth(&s, carrier.frequency)?;
        let bp = band_power(
            &s,
            carrier.frequency,
            cfg.analysis.band_width,
            net.oscillators[j].r_av(),
        )?;
        channels.push(ChannelMetrics {
            channel: j,
            frequency: carrier.frequency,
            linewidth: lw.fwhm,
            linewidth_fitted: lw.fitted,
            resolution_limited: lw.resolution_limited,
            band_power_dbm: bp.dbm,
            mean_square: ch.v.iter().map(|v| v * v).sum::<f64>() / ch.v.len() as f64,
        });
        spectra.push(s);
    }
    let (lock, lock_note) = if settled.channels.len() < 2 {
        (None, None)
    } else {
        match network_lock(&settled, channels[0].frequency) {
            Ok((verdict, pairs)) => (Some(LockSummary { verdict, pairs }), None),
            Err(e) => (None, Some(e.to_string())),
        }
    };
    dir.write_trace("trace.csv", &trace)?;
    if spectra.len() == 1 {
        dir.write_spectrum("spectrum.csv", &spectra[0])?;
    } else {
        for (j, s) in spectra.iter().enumerate() {
            dir.write_spectrum(&format!("spectrum_osc{j}.csv"), s)?;
        }
    }
    let metrics = SimulationMetrics {
        experiment: cfg.experiment,
        seed: cfg.master_seed,
        sample_rate: fs,
        samples: settled.len(),
        channels,
        lock,
        lock_note,
    };
    dir.write_json("metrics.json", &metrics)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ArmMetrics {
    pub g_m: f64,
    pub median_linewidth: f64,
    pub median_band_power_dbm: f64,
    pub oscillators: Vec<OscillatorMetrics>,
}

impl From<&ArmResult> for ArmMetrics {
    fn from(a: &ArmResult) -> Self {
        Self {
            g_m: a.g_m,
            median_linewidth: a.median_linewidth,
            median_band_power_dbm: a.median_band_power_dbm,
            oscillators: a.oscillators.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompareMetrics {
    pub seeds: Vec<u64>,
    pub coupled: ArmMetrics,
    pub uncoupled: ArmMetrics,
    pub linewidth_reduced: bool,
    pub power_increased: bool,
}

fn compare(cfg: &ExperimentConfig, threads: usize, dir: &mut ArtifactDir) -> Result<(), RunError> {
    let spec = cfg.compare_spec();
    let r = psd_compare(&cfg.network_config(), &spec, &cfg.run_settings(threads))?;
    dir.write_spectrum("spectrum_coupled.csv", &r.coupled.spectrum)?;
    dir.write_spectrum("spectrum_uncoupled.csv", &r.uncoupled.spectrum)?;
    dir.write_phase_noise("phase_noise_coupled.csv", &r.coupled.phase_noise)?;
    dir.write_phase_noise("phase_noise_uncoupled.csv", &r.uncoupled.phase_noise)?;
    let metrics = CompareMetrics {
        seeds: spec.seeds,
        coupled: (&r.coupled).into(),
        uncoupled: (&r.uncoupled).into(),
        linewidth_reduced: r.linewidth_reduced,
        power_increased: r.power_increased,
    };
    dir.write_json("metrics.json", &metrics)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepMetrics {
    pub experiment: Experiment,
    pub sideband: Sideband,
    pub p1db_in: Option<f64>,
    /// Gain of the unit-slope line the compression point refers to, dB.
    pub small_signal_gain: Option<f64>,
    pub intercept: Option<Intercept>,
    pub intercept_note: Option<String>,
}

fn chosen(p: &SweepPoint, sideband: Sideband) -> Option<f64> {
    match sideband {
        Sideband::Lower => p.p_sideband_low,
        Sideband::Upper => p.p_sideband_high,
    }
}

fn sweep(cfg: &ExperimentConfig, threads: usize, dir: &mut ArtifactDir) -> Result<(), RunError> {
    let spec = cfg.sweep_spec().expect("validated");
    let sideband = cfg.analysis.sideband;
    let r: SweepResult = run_mixer_sweep(
        &cfg.network_config(),
        &spec,
        &cfg.run_settings(threads),
        &cfg.analysis.mixer(),
    )?;
    let fund: Vec<(f64, f64)> = r
        .curve
        .iter()
        .filter_map(|p| chosen(p, sideband).map(|o| (p.p_in, o)))
        .collect();
    let small_signal_gain = r
        .p1db_in
        .and_then(|p| unit_slope_gain(&fund, p - REFIT_MARGIN_DB))
        .or_else(|| {
            fund.last()
                .and_then(|top| unit_slope_gain(&fund, top.0 - 6.0))
        });
    match cfg.experiment {
        Experiment::P1db if r.p1db_in.is_none() => {
            return Err(RunError::Analysis(
                "no 1 dB compression within the input grid".into(),
            ));
        }
        Experiment::Iip3 if r.intercept.is_none() => {
            let note = r
                .intercept_note
                .clone()
                .unwrap_or_else(|| "no intercept".into());
            return Err(RunError::Analysis(note));
        }
        _ => {}
    }

    dir.write_json("reports.json", &r.reports)?;
    let header: Vec<String> = match cfg.experiment {
        Experiment::P1db => vec!["p_in_dbm".into(), "p_out_dbm".into(), "linear_dbm".into()],
        Experiment::Iip3 => [
            "p_in_dbm",
            "p_fund_dbm",
            "p_third_dbm",
            "fund_line_dbm",
            "third_line_dbm",
        ]
        .map(String::from)
        .to_vec(),
        _ => [
            "p_in_dbm",
            "i_ac_amp",
            "f_osc_hz",
            "p_sideband_low_dbm",
            "p_sideband_high_dbm",
            "p_third_dbm",
        ]
        .map(String::from)
        .to_vec(),
    };
    let rows: Vec<Vec<Option<f64>>> = r
        .curve
        .iter()
        .map(|p| match cfg.experiment {
            Experiment::P1db => vec![
                Some(p.p_in),
                chosen(p, sideband),
                small_signal_gain.map(|g| p.p_in + g),
            ],
            Experiment::Iip3 => {
                let i = r.intercept.expect("checked above");
                let g1 = i.oip3 - i.iip3;
                vec![
                    Some(p.p_in),
                    chosen(p, sideband),
                    p.p_third,
                    Some(p.p_in + g1),
                    Some(i.oip3 + 3.0 * (p.p_in - i.iip3)),
                ]
            }
            _ => vec![
                Some(p.p_in),
                Some(p.i_ac),
                Some(p.f_osc),
                p.p_sideband_low,
                p.p_sideband_high,
                p.p_third,
            ],
        })
        .collect();
    dir.write_csv("curve.csv", &header, &rows)?;
    let metrics = SweepMetrics {
        experiment: cfg.experiment,
        sideband,
        p1db_in: r.p1db_in,
        small_signal_gain,
        intercept: r.intercept,
        intercept_note: r.intercept_note,
    };
    dir.write_json("metrics.json", &metrics)?;
    Ok(())
}

fn volumes(cfg: &ExperimentConfig, threads: usize, dir: &mut ArtifactDir) -> Result<(), RunError> {
    let spec = cfg.volume_spec().expect("validated");
    let study = volume_lock_study(
        &cfg.network_config(),
        &spec,
        &cfg.run_settings(threads),
        cfg.analysis.carrier_search,
    )?;
    let rank = |v: LockVerdict| match v {
        LockVerdict::Unlocked => 0.0,
        LockVerdict::Partial => 1.0,
        LockVerdict::Locked => 2.0,
    };
    let rows: Vec<Vec<Option<f64>>> = study
        .verdicts
        .iter()
        .map(|v| vec![Some(v.volume), Some(v.f_osc), Some(rank(v.verdict))])
        .collect();
    dir.write_csv(
        "volumes.csv",
        &["volume_m3".into(), "f_osc_hz".into(), "lock_rank".into()],
        &rows,
    )?;
    dir.write_json("metrics.json", &study)?;
    Ok(())
}
