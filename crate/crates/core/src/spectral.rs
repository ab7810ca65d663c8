//! Spectral measurements on sampled voltages: Welch PSD, band power,
//! carrier search, linewidth, quadrature phase extraction and phase noise.

use std::f64::consts::PI;
use std::ops::Range;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::SpectralError;

/// Value reported in place of −∞ for zero power (dBm, dBc/Hz).
pub const DB_FLOOR: f64 = -300.0;

/// 10·log₁₀(x), clamped at [`DB_FLOOR`].
pub fn to_db(x: f64) -> f64 {
    if x > 0.0 {
        (10.0 * x.log10()).max(DB_FLOOR)
    } else {
        DB_FLOOR
    }
}

/// Watts to dBm.
pub fn watts_to_dbm(w: f64) -> f64 {
    to_db(w / 1e-3)
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    1e-3 * 10f64.powf(dbm / 10.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    Hann,
}

/// Single-sided power spectral density, V²/Hz.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub frequencies: Vec<f64>,
    pub psd: Vec<f64>,
    /// Bin spacing, Hz.
    pub resolution_bw: f64,
    pub window: Window,
    pub n_segments: usize,
}

impl Spectrum {
    pub fn nyquist(&self) -> f64 {
        *self.frequencies.last().unwrap_or(&0.0)
    }

    /// ∫ psd df, the mean-square value captured by the estimate.
    pub fn total_power(&self) -> f64 {
        self.psd.iter().sum::<f64>() * self.resolution_bw
    }

    fn nearest_bin(&self, f: f64) -> usize {
        ((f / self.resolution_bw).round().max(0.0) as usize).min(self.psd.len() - 1)
    }

    fn bins_within(&self, lo: f64, hi: f64) -> Range<usize> {
        let df = self.resolution_bw;
        let start = ((lo / df).ceil().max(0.0) as usize).min(self.psd.len());
        let end = (((hi / df).floor() + 1.0).max(0.0) as usize).min(self.psd.len());
        start..end.max(start)
    }

    /// Median psd over bins in `[lo, hi]`, a robust local noise floor.
    pub fn median_in(&self, lo: f64, hi: f64) -> Option<f64> {
        let mut v: Vec<f64> = self.psd[self.bins_within(lo, hi)].to_vec();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        Some(v[v.len() / 2])
    }

    /// Largest psd value over bins in `[lo, hi]`.
    pub fn max_in(&self, lo: f64, hi: f64) -> Option<f64> {
        self.psd[self.bins_within(lo, hi)]
            .iter()
            .copied()
            .reduce(f64::max)
    }
}

/// Hann-windowed, constant-detrended Welch estimate.
///
/// Each segment is scaled by `1 / (fs · Σw²)` and every bin except DC and
/// Nyquist is doubled, so `Σ psd · Δf` equals the window-weighted variance.
pub fn welch_psd(
    series: &[f64],
    fs: f64,
    segment_len: usize,
    overlap: f64,
) -> Result<Spectrum, SpectralError> {
    if segment_len < 2 {
        return Err(SpectralError::Argument(
            "segment_len",
            "must be >= 2".into(),
        ));
    }
    if !(0.0..1.0).contains(&overlap) {
        return Err(SpectralError::Argument(
            "overlap",
            format!("must be in [0, 1), got {overlap}"),
        ));
    }
    if !(fs.is_finite() && fs > 0.0) {
        return Err(SpectralError::Argument(
            "fs",
            format!("must be > 0, got {fs}"),
        ));
    }
    if series.len() < segment_len {
        return Err(SpectralError::TooShort {
            len: series.len(),
            segment_len,
        });
    }

    let n = segment_len;
    let window: Vec<f64> = (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect();
    let window_power: f64 = window.iter().map(|w| w * w).sum();
    let step = (n - (overlap * n as f64).round() as usize).max(1);
    let n_segments = (series.len() - n) / step + 1;
    let n_bins = n / 2 + 1;

    let fft = FftPlanner::new().plan_fft_forward(n);
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    let mut acc = vec![0.0; n_bins];
    for s in 0..n_segments {
        let seg = &series[s * step..s * step + n];
        let mean = seg.iter().sum::<f64>() / n as f64;
        for ((b, x), w) in buf.iter_mut().zip(seg).zip(&window) {
            *b = Complex::new((x - mean) * w, 0.0);
        }
        fft.process(&mut buf);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b.norm_sqr();
        }
    }

    let scale = 1.0 / (fs * window_power * n_segments as f64);
    let psd: Vec<f64> = acc
        .iter()
        .enumerate()
        .map(|(k, a)| {
            let edge = k == 0 || (n.is_multiple_of(2) && k == n / 2);
            a * scale * if edge { 1.0 } else { 2.0 }
        })
        .collect();
    let df = fs / n as f64;
    Ok(Spectrum {
        frequencies: (0..n_bins).map(|k| k as f64 * df).collect(),
        psd,
        resolution_bw: df,
        window: Window::Hann,
        n_segments,
    })
}

/// Largest power-of-two segment not exceeding `len / min_segments` (with
/// 50 % overlap that yields about `2·min_segments − 1` averages).
pub fn segment_for(len: usize, min_segments: usize) -> usize {
    let target = (len / min_segments.max(1)).max(2);
    1usize << (usize::BITS - 1 - target.leading_zeros())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandPower {
    /// Integrated mean-square voltage, V².
    pub mean_square: f64,
    pub watts: f64,
    pub dbm: f64,
}

/// Power in `[f0 − bw/2, f0 + bw/2]` delivered to `r_load`.
pub fn band_power(s: &Spectrum, f0: f64, bw: f64, r_load: f64) -> Result<BandPower, SpectralError> {
    if !(r_load > 0.0) {
        return Err(SpectralError::Argument(
            "r_load",
            format!("must be > 0, got {r_load}"),
        ));
    }
    if !(bw >= s.resolution_bw * (1.0 - 1e-12)) {
        return Err(SpectralError::Argument(
            "bw",
            format!(
                "must be >= resolution bandwidth {} Hz, got {bw}",
                s.resolution_bw
            ),
        ));
    }
    let (lo, hi) = (f0 - 0.5 * bw, f0 + 0.5 * bw);
    if !(0.0..=s.nyquist()).contains(&f0) {
        return Err(SpectralError::BandOutOfRange {
            lo,
            hi,
            nyquist: s.nyquist(),
        });
    }
    let mean_square = s.psd[s.bins_within(lo, hi)].iter().sum::<f64>() * s.resolution_bw;
    let watts = mean_square / r_load;
    Ok(BandPower {
        mean_square,
        watts,
        dbm: watts_to_dbm(watts),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Carrier {
    /// Interpolated peak frequency, Hz.
    pub frequency: f64,
    /// Mean-square voltage within ±3 resolution bandwidths, V².
    pub power: f64,
}

/// Strongest line in `[f_min, f_max]`, refined by a parabola through the
/// log-psd of the peak bin and its neighbours.
pub fn find_carrier(s: &Spectrum, f_min: f64, f_max: f64) -> Result<Carrier, SpectralError> {
    let range = s.bins_within(f_min.max(0.0), f_max);
    if range.is_empty() || f_min > f_max {
        return Err(SpectralError::EmptyRange(f_min, f_max));
    }
    let k = range
        .clone()
        .max_by(|&a, &b| s.psd[a].total_cmp(&s.psd[b]))
        .expect("non-empty range");
    let mut offset = 0.0;
    if k > 0 && k + 1 < s.psd.len() && s.psd[k - 1] > 0.0 && s.psd[k + 1] > 0.0 {
        let (a, b, c) = (s.psd[k - 1].ln(), s.psd[k].ln(), s.psd[k + 1].ln());
        let denom = a - 2.0 * b + c;
        if denom < 0.0 {
            offset = (0.5 * (a - c) / denom).clamp(-0.5, 0.5);
        }
    }
    let frequency = (k as f64 + offset) * s.resolution_bw;
    let power = s.psd[s.bins_within(
        frequency - 3.0 * s.resolution_bw,
        frequency + 3.0 * s.resolution_bw,
    )]
    .iter()
    .sum::<f64>()
        * s.resolution_bw;
    Ok(Carrier { frequency, power })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linewidth {
    /// Full width at half maximum, Hz.
    pub fwhm: f64,
    /// Line centre, Hz (fitted when the fit converged).
    pub center: f64,
    /// True when the Lorentzian fit supplied the width.
    pub fitted: bool,
    /// True when the width is within two resolution bandwidths.
    pub resolution_limited: bool,
}

/// Full width at half maximum of the line at `f_peak`.
///
/// A Lorentzian is least-squares fitted over ±max(20 bins, 2 half-max
/// widths) around the peak; when the fit does not converge the
/// linearly interpolated half-maximum width is reported instead.
pub fn linewidth(s: &Spectrum, f_peak: f64) -> Result<Linewidth, SpectralError> {
    let n = s.psd.len();
    if n < 3 {
        return Err(SpectralError::PeakAtEdge(f_peak));
    }
    let mut k = s.nearest_bin(f_peak);
    // climb to the local maximum
    loop {
        let left = if k > 0 {
            s.psd[k - 1]
        } else {
            f64::NEG_INFINITY
        };
        let right = if k + 1 < n {
            s.psd[k + 1]
        } else {
            f64::NEG_INFINITY
        };
        if left > s.psd[k] && left >= right {
            k -= 1;
        } else if right > s.psd[k] {
            k += 1;
        } else {
            break;
        }
    }
    if k == 0 || k + 1 == n || !(s.psd[k] > 0.0) {
        return Err(SpectralError::PeakAtEdge(k as f64 * s.resolution_bw));
    }

    let df = s.resolution_bw;
    let half = 0.5 * s.psd[k];
    let crossing = |dir: isize| -> f64 {
        let mut j = k as isize;
        loop {
            let next = j + dir;
            if next < 0 || next >= n as isize {
                return (j - k as isize).unsigned_abs() as f64;
            }
            let (y0, y1) = (s.psd[j as usize], s.psd[next as usize]);
            if y1 <= half {
                let frac = (y0 - half) / (y0 - y1);
                return (j - k as isize).unsigned_abs() as f64 + frac;
            }
            j = next;
        }
    };
    let half_max_bins = crossing(-1) + crossing(1);
    let half_max_width = half_max_bins * df;

    if half_max_bins <= 2.0 {
        return Ok(Linewidth {
            fwhm: half_max_width,
            center: k as f64 * df,
            fitted: false,
            resolution_limited: true,
        });
    }

    let reach = (20.0f64).max(2.0 * half_max_bins).ceil() as usize;
    let lo = k.saturating_sub(reach);
    let hi = (k + reach).min(n - 1);
    let xs: Vec<f64> = (lo..=hi).map(|j| j as f64 - k as f64).collect();
    let ys: Vec<f64> = (lo..=hi).map(|j| s.psd[j] / s.psd[k]).collect();

    match fit_lorentzian(&xs, &ys, 0.5 * half_max_bins) {
        Some((_, x0, g)) if (x0.abs() as usize) < reach => {
            let fwhm = 2.0 * g * df;
            Ok(Linewidth {
                fwhm,
                center: (k as f64 + x0) * df,
                fitted: true,
                resolution_limited: fwhm <= 2.0 * df,
            })
        }
        _ => Ok(Linewidth {
            fwhm: half_max_width,
            center: k as f64 * df,
            fitted: false,
            resolution_limited: false,
        }),
    }
}

/// Levenberg–Marquardt fit of `a / (1 + ((x − x0)/g)²)`; returns `(a, x0, g)`.
fn fit_lorentzian(xs: &[f64], ys: &[f64], g_init: f64) -> Option<(f64, f64, f64)> {
    let model = |t: &[f64; 3], x: f64| {
        let u = (x - t[1]) / t[2];
        t[0] / (1.0 + u * u)
    };
    let cost = |t: &[f64; 3]| {
        xs.iter()
            .zip(ys)
            .map(|(&x, &y)| (y - model(t, x)).powi(2))
            .sum::<f64>()
    };

    let mut theta = [1.0, 0.0, g_init.max(0.5)];
    let mut c = cost(&theta);
    let mut lambda = 1e-3;
    for _ in 0..500 {
        let mut jtj = [[0.0; 3]; 3];
        let mut jtr = [0.0; 3];
        for (&x, &y) in xs.iter().zip(ys) {
            let u = (x - theta[1]) / theta[2];
            let d = 1.0 + u * u;
            let r = y - theta[0] / d;
            let j = [
                1.0 / d,
                theta[0] * 2.0 * u / (theta[2] * d * d),
                theta[0] * 2.0 * u * u / (theta[2] * d * d),
            ];
            for a in 0..3 {
                jtr[a] += j[a] * r;
                for b in 0..3 {
                    jtj[a][b] += j[a] * j[b];
                }
            }
        }
        let mut improved = false;
        while lambda < 1e12 {
            let mut m = jtj;
            for (a, row) in m.iter_mut().enumerate() {
                row[a] += lambda * jtj[a][a].max(1e-300);
            }
            let Some(step) = solve3(m, jtr) else {
                lambda *= 10.0;
                continue;
            };
            let trial = [
                theta[0] + step[0],
                theta[1] + step[1],
                (theta[2] + step[2]).abs(),
            ];
            let ct = cost(&trial);
            if ct.is_finite() && ct <= c {
                let rel = step
                    .iter()
                    .zip(&trial)
                    .map(|(s, t)| (s / t.abs().max(1e-12)).abs())
                    .fold(0.0, f64::max);
                theta = trial;
                let done = rel < 1e-12 || (c - ct) <= 1e-15 * c.max(1e-300);
                c = ct;
                lambda = (lambda * 0.3).max(1e-12);
                improved = true;
                if done {
                    return finite(theta);
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            // no downhill step left: at a minimum to working precision
            return finite(theta);
        }
    }
    None
}

fn finite(t: [f64; 3]) -> Option<(f64, f64, f64)> {
    (t.iter().all(|v| v.is_finite()) && t[2] > 0.0 && t[0] > 0.0).then_some((t[0], t[1], t[2]))
}

fn solve3(m: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let det = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(&m);
    if !(d.abs() > 0.0) || !d.is_finite() {
        return None;
    }
    let mut out = [0.0; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let mut mc = m;
        for r in 0..3 {
            mc[r][c] = b[r];
        }
        *o = det(&mc) / d;
    }
    Some(out)
}

/// Least-squares line `y = slope·x + intercept`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, my - slope * mx)
}

/// Removes the least-squares line through `(k, x[k])`.
pub fn detrend_linear(x: &[f64]) -> Vec<f64> {
    let ks: Vec<f64> = (0..x.len()).map(|k| k as f64).collect();
    let (slope, intercept) = linear_fit(&ks, x);
    x.iter()
        .zip(&ks)
        .map(|(v, k)| v - (slope * k + intercept))
        .collect()
}

/// Unwrapped instantaneous phase relative to a reference carrier.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseTrace {
    /// Phase `φ(t)` such that the input is ≈ `A(t)·cos(2π f0 t + φ(t))`, rad.
    pub phase: Vec<f64>,
    /// Samples unaffected by the low-pass filter's edges.
    pub valid: Range<usize>,
    pub sample_rate: f64,
    pub f0: f64,
}

impl PhaseTrace {
    pub fn interior(&self) -> &[f64] {
        &self.phase[self.valid.clone()]
    }
}

fn lowpass_taps(cutoff: f64, fs: f64) -> Vec<f64> {
    let half = (3.0 * fs / cutoff).ceil() as usize;
    let len = 2 * half + 1;
    let fc = cutoff / fs;
    let mut taps: Vec<f64> = (0..len)
        .map(|i| {
            let k = i as f64 - half as f64;
            let sinc = if k == 0.0 {
                2.0 * fc
            } else {
                (2.0 * PI * fc * k).sin() / (PI * k)
            };
            let x = 2.0 * PI * i as f64 / (len - 1) as f64;
            sinc * (0.42 - 0.5 * x.cos() + 0.08 * (2.0 * x).cos())
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

fn convolve_same(x: &[f64], taps: &[f64]) -> Vec<f64> {
    let half = taps.len() / 2;
    let n = x.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(n - 1);
            (lo..=hi).map(|j| x[j] * taps[j + half - i]).sum()
        })
        .collect()
}

/// Quadrature demodulation at `f0`: mix with cos/−sin, low-pass at `f0/2`
/// (Blackman-windowed sinc), take `atan2` and unwrap. The series mean is
/// removed first.
pub fn instantaneous_phase(series: &[f64], fs: f64, f0: f64) -> Result<PhaseTrace, SpectralError> {
    let nyquist = 0.5 * fs;
    if !(f0 > 0.0 && f0 < nyquist) {
        return Err(SpectralError::CarrierOutOfRange { f0, nyquist });
    }
    let taps = lowpass_taps(0.5 * f0, fs);
    let min_len = taps.len().max((10.0 * fs / f0).ceil() as usize);
    if series.len() < min_len {
        return Err(SpectralError::TooShort {
            len: series.len(),
            segment_len: min_len,
        });
    }
    let mean = series.iter().sum::<f64>() / series.len() as f64;
    let ratio = f0 / fs;
    let (mut i_mix, mut q_mix) = (
        Vec::with_capacity(series.len()),
        Vec::with_capacity(series.len()),
    );
    for (k, x) in series.iter().enumerate() {
        let cycles = k as f64 * ratio;
        let theta = 2.0 * PI * (cycles - cycles.floor());
        let (s, c) = theta.sin_cos();
        i_mix.push((x - mean) * c);
        q_mix.push(-(x - mean) * s);
    }
    let i_f = convolve_same(&i_mix, &taps);
    let q_f = convolve_same(&q_mix, &taps);
    let mut phase = Vec::with_capacity(series.len());
    let mut prev = 0.0;
    let mut offset = 0.0;
    for (k, (q, i)) in q_f.iter().zip(&i_f).enumerate() {
        let raw = q.atan2(*i);
        if k > 0 {
            let d = raw - prev;
            if d > PI {
                offset -= 2.0 * PI;
            } else if d < -PI {
                offset += 2.0 * PI;
            }
        }
        prev = raw;
        phase.push(raw + offset);
    }
    let half = taps.len() / 2;
    Ok(PhaseTrace {
        phase,
        valid: half..series.len() - half,
        sample_rate: fs,
        f0,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseNoiseCurve {
    /// Offset from the carrier, Hz.
    pub offsets: Vec<f64>,
    /// Single-sideband phase noise, dBc/Hz.
    pub l_dbc_per_hz: Vec<f64>,
}

impl PhaseNoiseCurve {
    /// L(Δf) interpolated linearly in log-frequency.
    pub fn at(&self, offset: f64) -> Option<f64> {
        let j = self.offsets.partition_point(|&f| f < offset);
        if j == 0 || j >= self.offsets.len() {
            return None;
        }
        let (f0, f1) = (self.offsets[j - 1], self.offsets[j]);
        let t = (offset.ln() - f0.ln()) / (f1.ln() - f0.ln());
        Some(self.l_dbc_per_hz[j - 1] + t * (self.l_dbc_per_hz[j] - self.l_dbc_per_hz[j - 1]))
    }

    /// Least-squares slope of L against log₁₀(Δf) over `[lo, hi]`, dB/decade.
    pub fn slope_per_decade(&self, lo: f64, hi: f64) -> Option<f64> {
        let (xs, ys): (Vec<f64>, Vec<f64>) = self
            .offsets
            .iter()
            .zip(&self.l_dbc_per_hz)
            .filter(|(f, _)| (lo..=hi).contains(*f))
            .map(|(f, l)| (f.log10(), *l))
            .unzip();
        (xs.len() >= 2).then(|| linear_fit(&xs, &ys).0)
    }

    /// Pointwise `self − other` on a shared offset grid.
    pub fn difference(&self, other: &PhaseNoiseCurve) -> Result<PhaseNoiseCurve, SpectralError> {
        if self.offsets.len() != other.offsets.len() {
            return Err(SpectralError::LengthMismatch(
                self.offsets.len(),
                other.offsets.len(),
            ));
        }
        Ok(PhaseNoiseCurve {
            offsets: self.offsets.clone(),
            l_dbc_per_hz: self
                .l_dbc_per_hz
                .iter()
                .zip(&other.l_dbc_per_hz)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }
}

/// L(Δf) = 10·log₁₀(S_φ(Δf)/2) from the one-sided Welch PSD of the
/// linearly detrended phase.
pub fn phase_noise(
    phase: &[f64],
    fs: f64,
    segment_len: usize,
) -> Result<PhaseNoiseCurve, SpectralError> {
    if phase.len() < segment_len {
        return Err(SpectralError::TooShort {
            len: phase.len(),
            segment_len,
        });
    }
    let detrended = detrend_linear(phase);
    let s = welch_psd(&detrended, fs, segment_len, 0.5)?;
    Ok(PhaseNoiseCurve {
        offsets: s.frequencies[1..].to_vec(),
        l_dbc_per_hz: s.psd[1..].iter().map(|p| to_db(0.5 * p)).collect(),
    })
}
