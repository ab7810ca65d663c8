//! Coupled versus uncoupled networks over matched seeds: linewidth, carrier
//! power, averaged spectra and phase noise.

use serde::{Deserialize, Serialize};

use crate::error::{MixerError, ParamError};
use crate::mixer::RunSettings;
use crate::network::{simulate_network, NetworkConfig};
use crate::pool::map_ordered;
use crate::spectral::{
    band_power, find_carrier, instantaneous_phase, linewidth, phase_noise, segment_for, to_db,
    welch_psd, PhaseNoiseCurve, Spectrum,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSpec {
    pub seeds: Vec<u64>,
    pub duration: f64,
    /// Discarded before analysis, s.
    pub settle_time: f64,
    /// Carrier integration band, Hz.
    pub band_width: f64,
    /// Welch segment length; `None` picks at least four segments.
    #[serde(default)]
    pub segment_len: Option<usize>,
    pub carrier_search: [f64; 2],
}

impl CompareSpec {
    pub fn validate(&self) -> Result<(), ParamError> {
        if self.seeds.is_empty() {
            return Err(ParamError::new("seeds", "must not be empty"));
        }
        if !(self.duration.is_finite()
            && self.settle_time >= 0.0
            && self.settle_time < self.duration)
        {
            return Err(ParamError::new("settle_time", "must lie in [0, duration)"));
        }
        if !(self.band_width.is_finite() && self.band_width > 0.0) {
            return Err(ParamError::new("band_width", "must be > 0"));
        }
        if matches!(self.segment_len, Some(n) if n < 16) {
            return Err(ParamError::new("segment_len", "must be >= 16"));
        }
        let [lo, hi] = self.carrier_search;
        if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo < hi) {
            return Err(ParamError::new("carrier_search", "expected 0 <= lo < hi"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OscillatorMetrics {
    pub seed: u64,
    pub channel: usize,
    pub frequency: f64,
    pub linewidth: f64,
    pub resolution_limited: bool,
    pub band_power_dbm: f64,
}

/// One arm of the comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub g_m: f64,
    pub oscillators: Vec<OscillatorMetrics>,
    pub median_linewidth: f64,
    pub median_band_power_dbm: f64,
    /// Mean of the per-oscillator spectra.
    pub spectrum: Spectrum,
    /// Mean phase noise over all oscillators, averaged in linear units.
    pub phase_noise: PhaseNoiseCurve,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareResult {
    pub coupled: ArmResult,
    pub uncoupled: ArmResult,
    /// Coupled minus uncoupled phase noise, dB.
    pub phase_noise_difference: PhaseNoiseCurve,
    pub linewidth_reduced: bool,
    pub power_increased: bool,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

struct RunOutput {
    metrics: Vec<OscillatorMetrics>,
    spectra: Vec<Spectrum>,
    phase_noise: Vec<PhaseNoiseCurve>,
}

fn analyse_run(
    cfg: &NetworkConfig,
    seed: u64,
    spec: &CompareSpec,
    run: &RunSettings,
) -> Result<RunOutput, MixerError> {
    let mut cfg = cfg.clone();
    cfg.master_seed = seed;
    let trace =
        simulate_network(&cfg, spec.duration, &run.stepper, run.stride)?.after(spec.settle_time);
    let fs = trace.sample_rate;
    let seg = spec
        .segment_len
        .unwrap_or_else(|| segment_for(trace.len(), 4));
    // fixed across channels so the phase-noise grids line up
    let phase_seg = segment_for(trace.len(), 8);
    let mut out = RunOutput {
        metrics: Vec::new(),
        spectra: Vec::new(),
        phase_noise: Vec::new(),
    };
    for (j, ch) in trace.channels.iter().enumerate() {
        let s = welch_psd(&ch.v, fs, seg, 0.5)?;
        let carrier = find_carrier(
            &s,
            spec.carrier_search[0],
            spec.carrier_search[1].min(s.nyquist()),
        )?;
        let lw = linewidth(&s, carrier.frequency)?;
        let bp = band_power(
            &s,
            carrier.frequency,
            spec.band_width,
            cfg.oscillators[j].r_av(),
        )?;
        let phase = instantaneous_phase(&ch.v, fs, carrier.frequency)?;
        out.phase_noise
            .push(phase_noise(phase.interior(), fs, phase_seg)?);
        out.metrics.push(OscillatorMetrics {
            seed,
            channel: j,
            frequency: carrier.frequency,
            linewidth: lw.fwhm,
            resolution_limited: lw.resolution_limited,
            band_power_dbm: bp.dbm,
        });
        out.spectra.push(s);
    }
    Ok(out)
}

fn mean_spectrum(spectra: &[Spectrum]) -> Spectrum {
    let mut s = spectra[0].clone();
    for other in &spectra[1..] {
        s.psd.iter_mut().zip(&other.psd).for_each(|(a, b)| *a += b);
    }
    let n = spectra.len() as f64;
    s.psd.iter_mut().for_each(|p| *p /= n);
    s.n_segments *= spectra.len();
    s
}

fn mean_phase_noise(curves: &[PhaseNoiseCurve]) -> PhaseNoiseCurve {
    let n = curves.len() as f64;
    let l = (0..curves[0].offsets.len())
        .map(|k| {
            let lin: f64 = curves
                .iter()
                .map(|c| 10f64.powf(c.l_dbc_per_hz[k] / 10.0))
                .sum::<f64>()
                / n;
            to_db(lin)
        })
        .collect();
    PhaseNoiseCurve {
        offsets: curves[0].offsets.clone(),
        l_dbc_per_hz: l,
    }
}

fn arm(
    cfg: &NetworkConfig,
    spec: &CompareSpec,
    run: &RunSettings,
) -> Result<ArmResult, MixerError> {
    let runs = map_ordered(spec.seeds.len(), run.threads, |k| {
        analyse_run(cfg, spec.seeds[k], spec, run)
    });
    let runs = runs.into_iter().collect::<Result<Vec<_>, _>>()?;
    let oscillators: Vec<OscillatorMetrics> = runs.iter().flat_map(|r| r.metrics.clone()).collect();
    let spectra: Vec<Spectrum> = runs.iter().flat_map(|r| r.spectra.clone()).collect();
    let curves: Vec<PhaseNoiseCurve> = runs.into_iter().flat_map(|r| r.phase_noise).collect();
    Ok(ArmResult {
        g_m: cfg.effective_g_m(),
        median_linewidth: median(oscillators.iter().map(|o| o.linewidth).collect()),
        median_band_power_dbm: median(oscillators.iter().map(|o| o.band_power_dbm).collect()),
        oscillators,
        spectrum: mean_spectrum(&spectra),
        phase_noise: mean_phase_noise(&curves),
    })
}

/// Runs `base` and its `g_m = 0` twin over the same seeds.
pub fn psd_compare(
    base: &NetworkConfig,
    spec: &CompareSpec,
    run: &RunSettings,
) -> Result<CompareResult, MixerError> {
    spec.validate()?;
    base.validate()?;
    let mut free = base.clone();
    free.g_m = 0.0;
    let coupled = arm(base, spec, run)?;
    let uncoupled = arm(&free, spec, run)?;
    let phase_noise_difference = coupled.phase_noise.difference(&uncoupled.phase_noise)?;
    Ok(CompareResult {
        linewidth_reduced: coupled.median_linewidth < uncoupled.median_linewidth,
        power_increased: coupled.median_band_power_dbm > uncoupled.median_band_power_dbm,
        phase_noise_difference,
        coupled,
        uncoupled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_examples() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 3.0, 2.0]), 2.5);
    }
}
