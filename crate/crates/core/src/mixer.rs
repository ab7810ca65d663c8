//! Mixer figures of merit on top of the network simulator: input power
//! calibration, sideband and third-order product power, P1dB, IIP3/OIP3,
//! pairwise lock detection and the volume lock study.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{MixerError, ParamError, SpectralError};
use crate::integrator::StepperConfig;
use crate::network::{simulate_network, NetworkConfig, RfTone};
use crate::pool::map_ordered;
use crate::spectral::{
    band_power, find_carrier, instantaneous_phase, linear_fit, segment_for, to_db, watts_to_dbm,
    welch_psd, BandPower, Spectrum,
};
use crate::trace::TraceSet;

/// Peak-to-detection margin below which a sideband counts as absent, dB.
pub const DETECTION_MARGIN_DB: f64 = 3.0;
/// Highest resolution bandwidth accepted for sideband measurements, as a
/// fraction of `f_rf`.
pub const MAX_RBW_FRACTION: f64 = 1.0 / 30.0;
/// Frequency drift limit for a lock, as a fraction of the carrier.
pub const LOCK_DRIFT_FRACTION: f64 = 1e-3;
/// Residual phase-difference spread limit for a lock, rad.
pub const LOCK_RESIDUAL_STD: f64 = PI / 4.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputPower {
    pub watts: f64,
    pub dbm: f64,
}

/// `P_in = (i_ac/√2)²·R_av` for a sinusoidal drive of peak current `i_ac`.
pub fn input_power(i_ac: f64, r_av: f64) -> Result<InputPower, ParamError> {
    if !(i_ac.is_finite() && i_ac >= 0.0) {
        return Err(ParamError::new("i_ac", format!("must be >= 0, got {i_ac}")));
    }
    if !(r_av.is_finite() && r_av > 0.0) {
        return Err(ParamError::new("r_av", format!("must be > 0, got {r_av}")));
    }
    let i_rms = i_ac / 2f64.sqrt();
    let watts = i_rms * i_rms * r_av;
    Ok(InputPower {
        watts,
        dbm: watts_to_dbm(watts),
    })
}

/// Peak current that delivers `p_in_dbm` into `r_av`.
pub fn drive_amplitude(p_in_dbm: f64, r_av: f64) -> f64 {
    let watts = 1e-3 * 10f64.powf(p_in_dbm / 10.0);
    (2.0 * watts / r_av).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sideband {
    Lower,
    Upper,
}

/// Which voltage is treated as the mixer output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputTap {
    Channel(usize),
    Sum,
}

/// Spectral settings shared by the mixer measurements.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MixerAnalysis {
    pub tap: OutputTap,
    /// Welch segment length; `None` picks the largest power of two giving
    /// at least four segments.
    pub segment_len: Option<usize>,
    /// Integration band around each product, in resolution bandwidths.
    pub band_bins: f64,
    /// Load for dBm conversion, Ω; `None` uses R_av of the tapped device.
    pub r_load: Option<f64>,
    /// Carrier search window, Hz.
    pub carrier_search: [f64; 2],
    pub sideband: Sideband,
}

impl Default for MixerAnalysis {
    fn default() -> Self {
        Self {
            tap: OutputTap::Channel(0),
            segment_len: None,
            band_bins: 8.0,
            r_load: None,
            carrier_search: [100e6, 5e9],
            sideband: Sideband::Lower,
        }
    }
}

impl MixerAnalysis {
    pub fn validate(&self) -> Result<(), ParamError> {
        if matches!(self.segment_len, Some(n) if n < 16) {
            return Err(ParamError::new("segment_len", "must be >= 16"));
        }
        if !(self.band_bins.is_finite() && self.band_bins >= 1.0) {
            return Err(ParamError::new(
                "band_bins",
                format!("must be >= 1, got {}", self.band_bins),
            ));
        }
        if matches!(self.r_load, Some(r) if !(r.is_finite() && r > 0.0)) {
            return Err(ParamError::new("r_load", "must be > 0"));
        }
        let [lo, hi] = self.carrier_search;
        if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo < hi) {
            return Err(ParamError::new("carrier_search", "expected 0 <= lo < hi"));
        }
        Ok(())
    }
}

/// The output spectrum of `trace` together with the load it is referred to.
#[derive(Clone, Debug, PartialEq)]
pub struct OutputSpectrum {
    pub spectrum: Spectrum,
    pub r_load: f64,
    pub band_width: f64,
}

/// Load referred to by power figures when `analysis.r_load` is unset.
fn tap_load(cfg_r_av: &[f64], tap: OutputTap) -> f64 {
    match tap {
        OutputTap::Channel(j) => cfg_r_av.get(j).copied().unwrap_or(cfg_r_av[0]),
        OutputTap::Sum => cfg_r_av[0],
    }
}

/// Welch spectrum of the tapped voltage.
pub fn output_spectrum(
    trace: &TraceSet,
    r_av: &[f64],
    analysis: &MixerAnalysis,
) -> Result<OutputSpectrum, MixerError> {
    analysis.validate()?;
    let series = match analysis.tap {
        OutputTap::Channel(j) => trace
            .channels
            .get(j)
            .ok_or_else(|| ParamError::new("tap", format!("channel {j} out of range")))?
            .v
            .clone(),
        OutputTap::Sum => trace.combined_voltage(),
    };
    let seg = analysis
        .segment_len
        .unwrap_or_else(|| segment_for(series.len(), 4));
    let spectrum = welch_psd(&series, trace.sample_rate, seg, 0.5)?;
    let r_load = analysis
        .r_load
        .unwrap_or_else(|| tap_load(r_av, analysis.tap));
    let band_width = analysis.band_bins * spectrum.resolution_bw;
    Ok(OutputSpectrum {
        spectrum,
        r_load,
        band_width,
    })
}

/// Height of the strongest bin within one bin of `freq` over the median
/// psd within `±f_rf/4`, dB.
pub fn product_margin(out: &OutputSpectrum, freq: f64, f_rf: f64) -> Result<f64, SpectralError> {
    let s = &out.spectrum;
    let half = 0.5 * out.band_width;
    if !(freq - half > 0.0 && freq + half < s.nyquist()) {
        return Err(SpectralError::BandOutOfRange {
            lo: freq - half,
            hi: freq + half,
            nyquist: s.nyquist(),
        });
    }
    let floor = s
        .median_in(freq - 0.25 * f_rf, freq + 0.25 * f_rf)
        .unwrap_or(0.0);
    let peak = s
        .max_in(freq - s.resolution_bw, freq + s.resolution_bw)
        .unwrap_or(0.0);
    Ok(to_db(peak) - to_db(floor))
}

/// Band power of a mixing product at `freq`, rejecting lines that stand
/// less than [`DETECTION_MARGIN_DB`] above the median psd within
/// `±f_rf/4`.
pub fn product_power(out: &OutputSpectrum, freq: f64, f_rf: f64) -> Result<BandPower, MixerError> {
    let s = &out.spectrum;
    if s.resolution_bw > MAX_RBW_FRACTION * f_rf {
        return Err(SpectralError::Argument(
            "segment_len",
            format!(
                "resolution {} Hz exceeds f_rf/30 = {} Hz",
                s.resolution_bw,
                f_rf / 30.0
            ),
        )
        .into());
    }
    let margin_db = product_margin(out, freq, f_rf)?;
    if !(margin_db >= DETECTION_MARGIN_DB) {
        return Err(MixerError::NoSideband { freq, margin_db });
    }
    Ok(band_power(s, freq, out.band_width, out.r_load)?)
}

pub fn sideband_frequency(f_osc: f64, f_rf: f64, sideband: Sideband) -> f64 {
    match sideband {
        Sideband::Lower => (f_osc - f_rf).abs(),
        Sideband::Upper => f_osc + f_rf,
    }
}

/// Single-tone third-order mixing product frequency, `|f_osc − 3·f_rf|`.
pub fn third_order_frequency(f_osc: f64, f_rf: f64) -> f64 {
    (f_osc - 3.0 * f_rf).abs()
}

/// Sideband power minus `p_in`, dB.
pub fn conversion_gain(
    out: &OutputSpectrum,
    f_osc: f64,
    f_rf: f64,
    p_in: f64,
    sideband: Sideband,
) -> Result<f64, MixerError> {
    let p = product_power(out, sideband_frequency(f_osc, f_rf, sideband), f_rf)?;
    Ok(p.dbm - p_in)
}

/// Power of the product at `|f_osc − 3·f_rf|`, dBm.
pub fn third_order_power(out: &OutputSpectrum, f_osc: f64, f_rf: f64) -> Result<f64, MixerError> {
    Ok(product_power(out, third_order_frequency(f_osc, f_rf), f_rf)?.dbm)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LockVerdict {
    Locked,
    Unlocked,
    Partial,
}

impl LockVerdict {
    /// Locked when every pair locks, unlocked when none does.
    pub fn from_pairs(pairs: &[bool]) -> Self {
        if pairs.iter().all(|&l| l) {
            LockVerdict::Locked
        } else if pairs.iter().any(|&l| l) {
            LockVerdict::Partial
        } else {
            LockVerdict::Unlocked
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LockResult {
    pub locked: bool,
    /// Slope of `φ_a − φ_b`, rad/s.
    pub drift: f64,
    /// Standard deviation of `φ_a − φ_b` about its linear trend, rad.
    pub residual_std: f64,
}

/// Phase-lock test on two unwrapped phases sampled at `fs`.
///
/// Locked iff the phase difference drifts slower than
/// `2π·0.001·f_osc` rad/s and its residual spread stays below π/4.
pub fn lock_detector(
    phase_a: &[f64],
    phase_b: &[f64],
    fs: f64,
    f_osc: f64,
) -> Result<LockResult, SpectralError> {
    if phase_a.len() != phase_b.len() {
        return Err(SpectralError::LengthMismatch(phase_a.len(), phase_b.len()));
    }
    if !(fs > 0.0 && f_osc > 0.0) {
        return Err(SpectralError::Argument(
            "fs",
            "fs and f_osc must be > 0".into(),
        ));
    }
    let periods = phase_a.len() as f64 / fs * f_osc;
    if periods < 100.0 {
        return Err(SpectralError::Argument(
            "phase",
            format!("{periods:.1} carrier periods, need >= 100"),
        ));
    }
    let t: Vec<f64> = (0..phase_a.len()).map(|k| k as f64 / fs).collect();
    let d: Vec<f64> = phase_a.iter().zip(phase_b).map(|(a, b)| a - b).collect();
    let (slope, intercept) = linear_fit(&t, &d);
    let var = d
        .iter()
        .zip(&t)
        .map(|(y, x)| (y - slope * x - intercept).powi(2))
        .sum::<f64>()
        / d.len() as f64;
    let residual_std = var.sqrt();
    let locked =
        slope.abs() < 2.0 * PI * LOCK_DRIFT_FRACTION * f_osc && residual_std < LOCK_RESIDUAL_STD;
    Ok(LockResult {
        locked,
        drift: slope,
        residual_std,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairLock {
    pub a: usize,
    pub b: usize,
    #[serde(flatten)]
    pub result: LockResult,
}

/// Demodulates every channel at `f_osc` and applies [`lock_detector`] to
/// every pair.
pub fn network_lock(
    trace: &TraceSet,
    f_osc: f64,
) -> Result<(LockVerdict, Vec<PairLock>), SpectralError> {
    let phases = trace
        .channels
        .iter()
        .map(|c| instantaneous_phase(&c.v, trace.sample_rate, f_osc))
        .collect::<Result<Vec<_>, _>>()?;
    let mut pairs = Vec::new();
    for a in 0..phases.len() {
        for b in a + 1..phases.len() {
            let result = lock_detector(
                phases[a].interior(),
                phases[b].interior(),
                trace.sample_rate,
                f_osc,
            )?;
            pairs.push(PairLock { a, b, result });
        }
    }
    let flags: Vec<bool> = pairs.iter().map(|p| p.result.locked).collect();
    Ok((LockVerdict::from_pairs(&flags), pairs))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixerReport {
    pub seed: u64,
    pub f_osc: f64,
    pub f_rf: f64,
    pub p_in: f64,
    pub p_sideband_low: Option<f64>,
    pub p_sideband_high: Option<f64>,
    /// Chosen sideband power minus `p_in`; absent when that sideband is
    /// not detected.
    pub conversion_gain: Option<f64>,
    pub p_third: Option<f64>,
    pub p1db_in: Option<f64>,
    pub iip3: Option<f64>,
    pub oip3: Option<f64>,
    pub lock: LockVerdict,
}

impl MixerReport {
    pub fn chosen_sideband(&self, sideband: Sideband) -> Option<f64> {
        match sideband {
            Sideband::Lower => self.p_sideband_low,
            Sideband::Upper => self.p_sideband_high,
        }
    }

    /// Sets the gain from `sideband` and re-derives that sideband's power
    /// as `gain + p_in`, so the two fields agree exactly in floating point.
    pub fn set_conversion_gain(&mut self, sideband: Sideband) {
        let p_in = self.p_in;
        let slot = match sideband {
            Sideband::Lower => &mut self.p_sideband_low,
            Sideband::Upper => &mut self.p_sideband_high,
        };
        self.conversion_gain = slot.map(|p| p - p_in);
        *slot = self.conversion_gain.map(|g| g + p_in);
    }
}

fn detected(r: Result<f64, MixerError>) -> Result<Option<f64>, MixerError> {
    match r {
        Ok(p) => Ok(Some(p)),
        Err(MixerError::NoSideband { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Measures one settled trace driven at `f_rf` with input power `p_in`.
pub fn measure_point(
    trace: &TraceSet,
    r_av: &[f64],
    f_rf: f64,
    p_in: f64,
    seed: u64,
    analysis: &MixerAnalysis,
) -> Result<MixerReport, MixerError> {
    let out = output_spectrum(trace, r_av, analysis)?;
    let [lo, hi] = analysis.carrier_search;
    // exclude the RF feed-through from the carrier search
    let guard = 4.0 * out.band_width;
    let carrier_lo = if (lo..hi).contains(&f_rf) {
        (f_rf + guard).max(lo)
    } else {
        lo
    };
    let f_osc = find_carrier(&out.spectrum, carrier_lo, hi.min(out.spectrum.nyquist()))?.frequency;
    let power_at = |f: f64| detected(product_power(&out, f, f_rf).map(|b| b.dbm));
    let p_sideband_low = power_at(sideband_frequency(f_osc, f_rf, Sideband::Lower))?;
    let p_sideband_high = power_at(sideband_frequency(f_osc, f_rf, Sideband::Upper))?;
    let third_f = third_order_frequency(f_osc, f_rf);
    let p_third = if third_f > out.band_width {
        power_at(third_f)?
    } else {
        None
    };
    let lock = if trace.channels.len() > 1 {
        network_lock(trace, f_osc)?.0
    } else {
        LockVerdict::Locked
    };
    let mut report = MixerReport {
        seed,
        f_osc,
        f_rf,
        p_in,
        p_sideband_low,
        p_sideband_high,
        conversion_gain: None,
        p_third,
        p1db_in: None,
        iip3: None,
        oip3: None,
        lock,
    };
    report.set_conversion_gain(analysis.sideband);
    Ok(report)
}

/// Distance below the running P1dB estimate used for the gain refit, dB.
pub const REFIT_MARGIN_DB: f64 = 15.0;

fn check_grid(p_in: &[f64], needed: usize) -> Result<(), MixerError> {
    if p_in.len() < needed {
        return Err(MixerError::TooFewPoints {
            needed,
            got: p_in.len(),
        });
    }
    if p_in.iter().any(|p| !p.is_finite()) || p_in.windows(2).any(|w| w[1] <= w[0]) {
        return Err(MixerError::NonMonotoneGrid);
    }
    Ok(())
}

/// Small-signal gain `G` of `p_out = p_in + G` over points with `p_in <= limit`.
pub fn unit_slope_gain(points: &[(f64, f64)], limit: f64) -> Option<f64> {
    let sel: Vec<f64> = points
        .iter()
        .filter(|(pi, _)| *pi <= limit)
        .map(|(pi, po)| po - pi)
        .collect();
    (sel.len() >= 2).then(|| sel.iter().sum::<f64>() / sel.len() as f64)
}

fn first_compression(points: &[(f64, f64)], gain: f64) -> Option<f64> {
    let dev = |k: usize| points[k].0 + gain - points[k].1;
    (0..points.len()).find(|&k| dev(k) >= 1.0).map(|k| {
        if k == 0 {
            return points[0].0;
        }
        let (d0, d1) = (dev(k - 1), dev(k));
        let t = if d1 > d0 {
            ((1.0 - d0) / (d1 - d0)).clamp(0.0, 1.0)
        } else {
            1.0
        };
        points[k - 1].0 + t * (points[k].0 - points[k - 1].0)
    })
}

/// Input-referred 1 dB compression point of a `(p_in, p_out)` sweep, dBm.
///
/// The unit-slope line is fitted over points at least 6 dB below the top
/// input, the compression point is interpolated where the measured output
/// first falls 1 dB below it. The line is then refitted over points at
/// least [`REFIT_MARGIN_DB`] below the estimate (three passes at most)
/// while enough remain, so early compression does not bias the gain. `None` when the
/// sweep never compresses by 1 dB.
pub fn p1db_sweep(points: &[(f64, f64)]) -> Result<Option<f64>, MixerError> {
    let p_in: Vec<f64> = points.iter().map(|p| p.0).collect();
    check_grid(&p_in, 5)?;
    let top = *p_in.last().expect("checked length");
    let gain =
        unit_slope_gain(points, top - 6.0).ok_or(MixerError::TooFewPoints { needed: 2, got: 1 })?;
    let Some(first) = first_compression(points, gain) else {
        return Ok(None);
    };
    let mut estimate = first;
    for _ in 0..3 {
        let Some(g) = unit_slope_gain(points, estimate - REFIT_MARGIN_DB) else {
            break;
        };
        estimate = first_compression(points, g).unwrap_or(estimate);
    }
    Ok(Some(estimate))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intercept {
    pub iip3: f64,
    pub oip3: f64,
    /// Unconstrained least-squares slopes, dB/dB.
    pub fund_slope: f64,
    pub third_slope: f64,
}

/// Unconstrained slope range accepted for the fundamental.
pub const FUND_SLOPE_RANGE: (f64, f64) = (0.7, 1.3);
/// Unconstrained slope range accepted for the third-order product.
pub const THIRD_SLOPE_RANGE: (f64, f64) = (2.4, 3.6);

/// Intersection of the slope-1 fundamental and slope-3 third-order lines.
pub fn iip3_extrapolate(
    fund: &[(f64, f64)],
    third: &[(f64, f64)],
) -> Result<Intercept, MixerError> {
    for curve in [fund, third] {
        let p_in: Vec<f64> = curve.iter().map(|p| p.0).collect();
        check_grid(&p_in, 3)?;
    }
    let g1 = fund.iter().map(|(pi, po)| po - pi).sum::<f64>() / fund.len() as f64;
    let g3 = third.iter().map(|(pi, po)| po - 3.0 * pi).sum::<f64>() / third.len() as f64;
    let iip3 = 0.5 * (g1 - g3);
    let slope = |c: &[(f64, f64)]| {
        let (x, y): (Vec<f64>, Vec<f64>) = c.iter().copied().unzip();
        linear_fit(&x, &y).0
    };
    let (fund_slope, third_slope) = (slope(fund), slope(third));
    let inside = |s: f64, r: (f64, f64)| (r.0..=r.1).contains(&s);
    if !(inside(fund_slope, FUND_SLOPE_RANGE) && inside(third_slope, THIRD_SLOPE_RANGE)) {
        return Err(MixerError::NonCubicRegime {
            fund_slope,
            third_slope,
        });
    }
    Ok(Intercept {
        iip3,
        oip3: iip3 + g1,
        fund_slope,
        third_slope,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// RF input powers, dBm, strictly increasing.
    pub p_in_grid: Vec<f64>,
    pub f_rf: f64,
    /// Discarded before measurement, s.
    pub settle_time: f64,
    pub measure_time: f64,
    pub seeds: Vec<u64>,
    /// Oscillator receiving the RF tone.
    #[serde(default)]
    pub rf_target: usize,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), ParamError> {
        if self.p_in_grid.is_empty() {
            return Err(ParamError::new("p_in_grid", "must not be empty"));
        }
        if self.p_in_grid.iter().any(|p| !p.is_finite())
            || self.p_in_grid.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(ParamError::new(
                "p_in_grid",
                "must be finite and strictly increasing",
            ));
        }
        if !(self.f_rf.is_finite() && self.f_rf > 0.0) {
            return Err(ParamError::new("f_rf", "must be > 0"));
        }
        if !(self.settle_time.is_finite() && self.settle_time > 0.0) {
            return Err(ParamError::new("settle_time", "must be > 0"));
        }
        if !(self.measure_time.is_finite() && self.measure_time > 0.0) {
            return Err(ParamError::new("measure_time", "must be > 0"));
        }
        if self.seeds.is_empty() {
            return Err(ParamError::new("seeds", "must not be empty"));
        }
        Ok(())
    }
}

/// Seed-averaged sweep curve point; powers are averaged in watts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub p_in: f64,
    pub i_ac: f64,
    pub f_osc: f64,
    pub p_sideband_low: Option<f64>,
    pub p_sideband_high: Option<f64>,
    pub p_third: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    /// One report per (grid point, seed), grid-major.
    pub reports: Vec<MixerReport>,
    pub curve: Vec<SweepPoint>,
    pub p1db_in: Option<f64>,
    pub intercept: Option<Intercept>,
    /// Why no intercept was extrapolated, when it was not.
    pub intercept_note: Option<String>,
}

/// Shared run settings for simulation-backed experiments.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSettings {
    pub stepper: StepperConfig,
    pub stride: usize,
    pub threads: usize,
}

fn mean_dbm(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.collect::<Option<Vec<f64>>>()?;
    (!v.is_empty()).then(|| {
        watts_to_dbm(v.iter().map(|d| 1e-3 * 10f64.powf(d / 10.0)).sum::<f64>() / v.len() as f64)
    })
}

/// Points of a curve usable for the intercept fit: at least `margin` dB
/// below the compression point when it is known.
pub fn low_power_points(curve: &[(f64, f64)], p1db: Option<f64>, margin: f64) -> Vec<(f64, f64)> {
    curve
        .iter()
        .copied()
        .filter(|(pi, _)| p1db.is_none_or(|p| *pi <= p - margin))
        .collect()
}

/// Runs every (input power, seed) pair, measures it after `settle_time`
/// and reduces the results in grid order.
pub fn run_mixer_sweep(
    base: &NetworkConfig,
    sweep: &SweepSpec,
    run: &RunSettings,
    analysis: &MixerAnalysis,
) -> Result<SweepResult, MixerError> {
    sweep.validate()?;
    base.validate()?;
    analysis.validate()?;
    if sweep.rf_target >= base.len() {
        return Err(ParamError::new("rf_target", format!("must be < {}", base.len())).into());
    }
    let r_av: Vec<f64> = base.oscillators.iter().map(|p| p.r_av()).collect();
    let r_in = r_av[sweep.rf_target];
    let n_seeds = sweep.seeds.len();
    let jobs = sweep.p_in_grid.len() * n_seeds;
    let results = map_ordered(jobs, run.threads, |k| -> Result<MixerReport, MixerError> {
        let (p_in, seed) = (sweep.p_in_grid[k / n_seeds], sweep.seeds[k % n_seeds]);
        let mut cfg = base.clone();
        cfg.master_seed = seed;
        cfg.rf_tones.push(RfTone {
            amplitude: drive_amplitude(p_in, r_in),
            frequency: sweep.f_rf,
            phase: 0.0,
            target: sweep.rf_target,
        });
        let trace = simulate_network(
            &cfg,
            sweep.settle_time + sweep.measure_time,
            &run.stepper,
            run.stride,
        )?;
        measure_point(
            &trace.after(sweep.settle_time),
            &r_av,
            sweep.f_rf,
            p_in,
            seed,
            analysis,
        )
    });
    let reports = results.into_iter().collect::<Result<Vec<_>, _>>()?;

    let curve: Vec<SweepPoint> = reports
        .chunks(n_seeds)
        .zip(&sweep.p_in_grid)
        .map(|(rs, &p_in)| SweepPoint {
            p_in,
            i_ac: drive_amplitude(p_in, r_in),
            f_osc: rs.iter().map(|r| r.f_osc).sum::<f64>() / rs.len() as f64,
            p_sideband_low: mean_dbm(rs.iter().map(|r| r.p_sideband_low)),
            p_sideband_high: mean_dbm(rs.iter().map(|r| r.p_sideband_high)),
            p_third: mean_dbm(rs.iter().map(|r| r.p_third)),
        })
        .collect();

    let chosen = |p: &SweepPoint| match analysis.sideband {
        Sideband::Lower => p.p_sideband_low,
        Sideband::Upper => p.p_sideband_high,
    };
    let fund: Vec<(f64, f64)> = curve
        .iter()
        .filter_map(|p| chosen(p).map(|o| (p.p_in, o)))
        .collect();
    let third: Vec<(f64, f64)> = curve
        .iter()
        .filter_map(|p| p.p_third.map(|o| (p.p_in, o)))
        .collect();
    let p1db_in = if fund.len() >= 5 {
        p1db_sweep(&fund)?
    } else {
        None
    };
    let (intercept, intercept_note) = match iip3_extrapolate(
        &low_power_points(&fund, p1db_in, 5.0),
        &low_power_points(&third, p1db_in, 5.0),
    ) {
        Ok(i) => (Some(i), None),
        Err(e @ (MixerError::TooFewPoints { .. } | MixerError::NonCubicRegime { .. })) => {
            (None, Some(e.to_string()))
        }
        Err(e) => return Err(e),
    };

    let reports = reports
        .into_iter()
        .map(|mut r| {
            r.p1db_in = p1db_in;
            r.iip3 = intercept.map(|i| i.iip3);
            r.oip3 = intercept.map(|i| i.oip3);
            r
        })
        .collect();
    Ok(SweepResult {
        reports,
        curve,
        p1db_in,
        intercept,
        intercept_note,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeStudySpec {
    /// Free-layer volumes, m³.
    pub volumes: Vec<f64>,
    pub settle_time: f64,
    pub measure_time: f64,
    /// Scale bias and RF currents with volume so the current density, and
    /// with it the noise-free dynamics, stay fixed.
    #[serde(default = "default_true")]
    pub scale_current: bool,
}

fn default_true() -> bool {
    true
}

impl VolumeStudySpec {
    pub fn validate(&self) -> Result<(), ParamError> {
        if self.volumes.len() < 2 {
            return Err(ParamError::new("volumes", "need at least two volumes"));
        }
        if self.volumes.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(ParamError::new("volumes", "must be > 0"));
        }
        if !(self.settle_time.is_finite() && self.settle_time >= 0.0) {
            return Err(ParamError::new("settle_time", "must be >= 0"));
        }
        if !(self.measure_time.is_finite() && self.measure_time > 0.0) {
            return Err(ParamError::new("measure_time", "must be > 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeVerdict {
    pub volume: f64,
    pub f_osc: f64,
    pub verdict: LockVerdict,
    pub pairs: Vec<PairLock>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeStudy {
    pub verdicts: Vec<VolumeVerdict>,
    /// True when no volume is locked while a smaller one is not worse off,
    /// i.e. lock quality never degrades with growing volume.
    pub monotone: bool,
    /// Smallest volume with a locked verdict above which every volume locks.
    pub transition_volume: Option<f64>,
}

fn rank(v: LockVerdict) -> u8 {
    match v {
        LockVerdict::Unlocked => 0,
        LockVerdict::Partial => 1,
        LockVerdict::Locked => 2,
    }
}

/// Network configured for one volume of the study.
pub fn config_for_volume(base: &NetworkConfig, volume: f64, scale_current: bool) -> NetworkConfig {
    let mut cfg = base.clone();
    let scale = volume / base.oscillators[0].volume;
    for p in &mut cfg.oscillators {
        p.volume = volume;
    }
    if scale_current {
        cfg.i_dc.iter_mut().for_each(|i| *i *= scale);
        cfg.rf_tones.iter_mut().for_each(|t| t.amplitude *= scale);
    }
    cfg
}

/// Simulates `base` at each volume and applies the pairwise lock test.
pub fn volume_lock_study(
    base: &NetworkConfig,
    spec: &VolumeStudySpec,
    run: &RunSettings,
    carrier_search: [f64; 2],
) -> Result<VolumeStudy, MixerError> {
    spec.validate()?;
    base.validate()?;
    let results = map_ordered(
        spec.volumes.len(),
        run.threads,
        |k| -> Result<VolumeVerdict, MixerError> {
            let volume = spec.volumes[k];
            let cfg = config_for_volume(base, volume, spec.scale_current);
            let trace = simulate_network(
                &cfg,
                spec.settle_time + spec.measure_time,
                &run.stepper,
                run.stride,
            )?
            .after(spec.settle_time);
            let seg = segment_for(trace.len(), 4);
            let s = welch_psd(&trace.channels[0].v, trace.sample_rate, seg, 0.5)?;
            let f_osc =
                find_carrier(&s, carrier_search[0], carrier_search[1].min(s.nyquist()))?.frequency;
            let (verdict, pairs) = network_lock(&trace, f_osc)?;
            Ok(VolumeVerdict {
                volume,
                f_osc,
                verdict,
                pairs,
            })
        },
    );
    let mut verdicts = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    verdicts.sort_by(|a, b| a.volume.total_cmp(&b.volume));
    let monotone = verdicts
        .windows(2)
        .all(|w| rank(w[1].verdict) >= rank(w[0].verdict));
    let transition_volume = verdicts
        .iter()
        .rposition(|v| v.verdict != LockVerdict::Locked)
        .map_or(verdicts.first().map(|v| v.volume), |k| {
            verdicts.get(k + 1).map(|v| v.volume)
        });
    Ok(VolumeStudy {
        verdicts,
        monotone,
        transition_volume,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn input_power_examples() {
        let p = input_power(0.0, 500.0).unwrap();
        assert_eq!(p.watts, 0.0);
        let p = input_power(1e-3, 500.0).unwrap();
        assert!(close(p.watts, 2.5e-4, 1e-18));
        assert!(close(p.dbm, 10.0 * 0.25f64.log10(), 1e-12));
        let q = input_power(2e-3, 500.0).unwrap();
        assert!(close(q.dbm - p.dbm, 20.0 * 2f64.log10(), 1e-12));
        assert_eq!(input_power(-1.0, 500.0).unwrap_err().field(), "i_ac");
        assert_eq!(input_power(1.0, 0.0).unwrap_err().field(), "r_av");
        assert!(close(drive_amplitude(p.dbm, 500.0), 1e-3, 1e-15));
    }

    #[test]
    fn paper_anchor_arithmetic() {
        let cg: f64 = -39.83 - (-11.1);
        assert!(close(cg, -28.73, 1e-9));
    }

    #[test]
    fn p1db_linear_is_absent() {
        let pts: Vec<(f64, f64)> = (0..10)
            .map(|k| (-40.0 + 3.0 * k as f64, -40.0 + 3.0 * k as f64 - 20.0))
            .collect();
        assert_eq!(p1db_sweep(&pts).unwrap(), None);
    }

    #[test]
    fn p1db_saturation_oracle() {
        let (g, p_sat) = (0.01, 2.0);
        let exact_mw = p_sat * (10f64.powf(0.1) - 1.0);
        let exact = 10.0 * exact_mw.log10();
        let pts: Vec<(f64, f64)> = (0..=50)
            .map(|k| {
                let pi = -40.0 + k as f64;
                let mw = 10f64.powf(pi / 10.0);
                (pi, 10.0 * (g * mw / (1.0 + mw / p_sat)).log10())
            })
            .collect();
        let got = p1db_sweep(&pts).unwrap().unwrap();
        assert!(close(got, exact, 0.1), "{got} vs {exact}");
    }

    #[test]
    fn p1db_grid_errors() {
        let pts = [(0.0, 0.0), (1.0, 1.0), (1.0, 1.0), (2.0, 2.0), (3.0, 3.0)];
        assert_eq!(p1db_sweep(&pts), Err(MixerError::NonMonotoneGrid));
        assert!(matches!(
            p1db_sweep(&pts[..3]),
            Err(MixerError::TooFewPoints { .. })
        ));
    }

    #[test]
    fn iip3_line_intersection() {
        let fund: Vec<(f64, f64)> = [-40.0, -35.0, -30.0]
            .iter()
            .map(|&p| (p, p - 30.0))
            .collect();
        let third: Vec<(f64, f64)> = [-40.0, -35.0, -30.0]
            .iter()
            .map(|&p| (p, 3.0 * p - 30.0))
            .collect();
        let r = iip3_extrapolate(&fund, &third).unwrap();
        assert!(close(r.iip3, 0.0, 1e-12) && close(r.oip3, -30.0, 1e-12));
        assert!(close(r.fund_slope, 1.0, 1e-12) && close(r.third_slope, 3.0, 1e-12));

        let c = 7.5;
        let shift = |v: &[(f64, f64)]| v.iter().map(|(a, b)| (a + c, *b)).collect::<Vec<_>>();
        let r2 = iip3_extrapolate(&shift(&fund), &shift(&third)).unwrap();
        assert!(close(r2.iip3, c, 1e-9) && close(r2.oip3, -30.0, 1e-9));
    }

    #[test]
    fn iip3_rejects_non_cubic_slopes() {
        let fund: Vec<(f64, f64)> = [-40.0, -35.0, -30.0].iter().map(|&p| (p, p)).collect();
        let third: Vec<(f64, f64)> = [-40.0, -35.0, -30.0]
            .iter()
            .map(|&p| (p, 1.5 * p))
            .collect();
        assert!(matches!(
            iip3_extrapolate(&fund, &third),
            Err(MixerError::NonCubicRegime { .. })
        ));
    }

    #[test]
    fn lock_detector_examples() {
        let (fs, f_osc) = (20e9, 900e6);
        let n = 4000;
        let a: Vec<f64> = (0..n).map(|k| (k as f64 * 0.37).sin()).collect();
        let r = lock_detector(&a, &a, fs, f_osc).unwrap();
        assert!(r.locked && r.drift == 0.0);
        let b: Vec<f64> = a.iter().map(|x| x + PI / 6.0).collect();
        assert!(lock_detector(&a, &b, fs, f_osc).unwrap().locked);
        let c: Vec<f64> = a
            .iter()
            .enumerate()
            .map(|(k, x)| x + 2.0 * PI * 10e6 * k as f64 / fs)
            .collect();
        let r = lock_detector(&a, &c, fs, f_osc).unwrap();
        assert!(!r.locked);
        let rev = lock_detector(&c, &a, fs, f_osc).unwrap();
        assert!(close(rev.drift, -r.drift, 1e-6 * r.drift.abs()) && rev.locked == r.locked);
        assert!(matches!(
            lock_detector(&a, &a[1..], fs, f_osc),
            Err(SpectralError::LengthMismatch(..))
        ));
        assert!(lock_detector(&a[..100], &a[..100], fs, f_osc).is_err());
    }

    #[test]
    fn verdict_reduction() {
        assert_eq!(LockVerdict::from_pairs(&[true, true]), LockVerdict::Locked);
        assert_eq!(
            LockVerdict::from_pairs(&[true, false]),
            LockVerdict::Partial
        );
        assert_eq!(
            LockVerdict::from_pairs(&[false, false]),
            LockVerdict::Unlocked
        );
    }

    #[test]
    fn sweep_spec_validation() {
        let mut s = SweepSpec {
            p_in_grid: vec![-30.0, -20.0],
            f_rf: 3e8,
            settle_time: 1e-7,
            measure_time: 1e-6,
            seeds: vec![0],
            rf_target: 0,
        };
        assert!(s.validate().is_ok());
        s.p_in_grid = vec![-20.0, -30.0];
        assert_eq!(s.validate().unwrap_err().field(), "p_in_grid");
        s.p_in_grid = vec![-30.0];
        s.settle_time = 0.0;
        assert_eq!(s.validate().unwrap_err().field(), "settle_time");
    }
}
