//! Time stepping for a single macrospin: deterministic RK4 and stochastic
//! Heun with a Brown thermal field, plus the RNG stream contract.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ParamError, SimError};
use crate::magnetics::{
    effective_field_raw, llgs_rhs_raw, resistance_raw, spin_torque_prefactor, DeviceParams,
    Magnetization, Vec3, BOLTZMANN,
};
use crate::trace::{OscillatorTrace, TraceSet};

pub type NoiseRng = ChaCha12Rng;

/// Identifies one independent random stream derived from a master seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    pub fn rng(&self) -> NoiseRng {
        let mut rng = ChaCha12Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Heun,
    Rk4,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StepperConfig {
    /// Time step, s.
    pub dt: f64,
    pub scheme: Scheme,
    pub renormalize: bool,
}

impl Default for StepperConfig {
    fn default() -> Self {
        Self {
            dt: 1e-12,
            scheme: Scheme::Heun,
            renormalize: true,
        }
    }
}

impl StepperConfig {
    pub fn heun(dt: f64) -> Self {
        Self {
            dt,
            ..Self::default()
        }
    }

    pub fn rk4(dt: f64) -> Self {
        Self {
            dt,
            scheme: Scheme::Rk4,
            renormalize: true,
        }
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(ParamError::new(
                "dt",
                format!("must be > 0, got {}", self.dt),
            ));
        }
        Ok(())
    }

    /// RK4 is deterministic only; it refuses devices at finite temperature.
    pub fn validate_for(&self, p: &DeviceParams) -> Result<(), ParamError> {
        self.validate()?;
        if self.scheme == Scheme::Rk4 && p.temperature != 0.0 {
            return Err(ParamError::new("scheme", "rk4 requires temperature = 0"));
        }
        Ok(())
    }
}

/// Standard deviation of each Cartesian thermal-field component, tesla:
/// σ = sqrt(2·α·k_B·T / (γ·Mₛ·V·Δt)).
pub fn thermal_sigma(p: &DeviceParams, dt: f64) -> f64 {
    (2.0 * p.alpha * BOLTZMANN * p.temperature / (p.gamma * p.ms * p.volume * dt)).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThermalNoiseSpec {
    pub enabled: bool,
    pub sigma_per_component: f64,
    pub rng_stream_id: u64,
}

impl ThermalNoiseSpec {
    pub fn new(p: &DeviceParams, dt: f64, enabled: bool, rng_stream_id: u64) -> Self {
        let sigma_per_component = if enabled { thermal_sigma(p, dt) } else { 0.0 };
        Self {
            enabled,
            sigma_per_component,
            rng_stream_id,
        }
    }

    pub fn disabled() -> Self {
        Self {
            enabled: false,
            sigma_per_component: 0.0,
            rng_stream_id: 0,
        }
    }

    fn active(&self) -> bool {
        self.enabled && self.sigma_per_component > 0.0
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec3 {
        if !self.active() {
            return Vec3::ZERO;
        }
        let s = self.sigma_per_component;
        let x: f64 = rng.sample(StandardNormal);
        let y: f64 = rng.sample(StandardNormal);
        let z: f64 = rng.sample(StandardNormal);
        Vec3::new(x * s, y * s, z * s)
    }
}

fn finish(m: Vec3, cfg: &StepperConfig) -> Result<Magnetization, SimError> {
    if !m.is_finite() {
        return Err(SimError::StepRejected);
    }
    if cfg.renormalize {
        let n = m.norm();
        if n == 0.0 {
            return Err(SimError::StepRejected);
        }
        Ok(Magnetization::new_unchecked(m * (1.0 / n)))
    } else {
        Ok(Magnetization::new_unchecked(m))
    }
}

/// One stochastic Heun step. The thermal field is drawn once and shared by
/// predictor and corrector, which makes the scheme Stratonovich-consistent.
pub fn step_heun<F, R>(
    state: Magnetization,
    h_det: F,
    beta: f64,
    p: &DeviceParams,
    noise: &ThermalNoiseSpec,
    cfg: &StepperConfig,
    rng: &mut R,
) -> Result<Magnetization, SimError>
where
    F: Fn(Vec3) -> Vec3,
    R: Rng + ?Sized,
{
    let h_th = noise.sample(rng);
    let dt = cfg.dt;
    let m0 = state.vec();
    let f0 = llgs_rhs_raw(m0, h_det(m0) + h_th, beta, p);
    let predictor = m0 + f0 * dt;
    if !predictor.is_finite() {
        return Err(SimError::StepRejected);
    }
    let f1 = llgs_rhs_raw(predictor, h_det(predictor) + h_th, beta, p);
    finish(m0 + (f0 + f1) * (0.5 * dt), cfg)
}

/// Classical fourth-order Runge–Kutta step on the deterministic equation.
pub fn step_rk4<F>(
    state: Magnetization,
    h_det: F,
    beta: f64,
    p: &DeviceParams,
    cfg: &StepperConfig,
) -> Result<Magnetization, SimError>
where
    F: Fn(Vec3) -> Vec3,
{
    let dt = cfg.dt;
    let rhs = |m: Vec3| llgs_rhs_raw(m, h_det(m), beta, p);
    let m0 = state.vec();
    let k1 = rhs(m0);
    let k2 = rhs(m0 + k1 * (0.5 * dt));
    let k3 = rhs(m0 + k2 * (0.5 * dt));
    let k4 = rhs(m0 + k3 * dt);
    finish(m0 + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0), cfg)
}

/// Advances one oscillator by one step at the given torque prefactor.
pub(crate) fn advance<R: Rng + ?Sized>(
    m: Magnetization,
    h_ext: Vec3,
    beta: f64,
    p: &DeviceParams,
    noise: &ThermalNoiseSpec,
    cfg: &StepperConfig,
    rng: &mut R,
) -> Result<Magnetization, SimError> {
    let h_det = |v: Vec3| effective_field_raw(v, p, h_ext);
    match cfg.scheme {
        Scheme::Heun => step_heun(m, h_det, beta, p, noise, cfg, rng),
        Scheme::Rk4 => step_rk4(m, h_det, beta, p, cfg),
    }
}

/// Number of samples and integration steps for a run.
pub(crate) fn sample_plan(
    duration: f64,
    dt: f64,
    stride: usize,
) -> Result<(usize, u64), ParamError> {
    if stride == 0 {
        return Err(ParamError::new("sample_stride", "must be >= 1"));
    }
    if !(duration.is_finite() && duration >= dt) {
        return Err(ParamError::new(
            "duration",
            format!("must be >= dt ({dt} s), got {duration}"),
        ));
    }
    let intervals = (duration / (dt * stride as f64) * (1.0 + 1e-12)).floor() as usize;
    Ok((intervals + 1, (intervals * stride) as u64))
}

/// Inputs of a single-oscillator run apart from the injected current.
#[derive(Clone, Debug)]
pub struct TrajectorySpec {
    pub initial: Magnetization,
    /// DC bias current, A.
    pub i_dc: f64,
    /// External field, T.
    pub h_ext: Vec3,
    /// Simulated time, s.
    pub duration: f64,
    pub sample_stride: usize,
}

/// Integrates one oscillator driven by `i_dc + injection(t)`.
///
/// The torque over each step uses the current at the step midpoint. Samples
/// record `(m, R(m), v = i(t)·R(m), injection(t))` at `t = k·stride·dt`.
pub fn run_trajectory<I>(
    spec: &TrajectorySpec,
    injection: I,
    p: &DeviceParams,
    cfg: &StepperConfig,
    stream: RngStream,
) -> Result<TraceSet, SimError>
where
    I: Fn(f64) -> f64,
{
    p.validate()?;
    cfg.validate_for(p)?;
    let (n_samples, n_steps) = sample_plan(spec.duration, cfg.dt, spec.sample_stride)?;
    let noise = ThermalNoiseSpec::new(p, cfg.dt, cfg.scheme == Scheme::Heun, stream.stream);
    let mut rng = stream.rng();
    let mut out = OscillatorTrace::with_capacity(n_samples);
    let mut m = spec.initial;
    let dt = cfg.dt;

    let record = |m: Magnetization, t: f64, out: &mut OscillatorTrace| {
        let inj = injection(t);
        let r = resistance_raw(m.vec(), p);
        let v = m.vec();
        out.mx.push(v.x);
        out.my.push(v.y);
        out.mz.push(v.z);
        out.r.push(r);
        out.v.push((spec.i_dc + inj) * r);
        out.i_inj.push(inj);
    };

    record(m, 0.0, &mut out);
    for n in 0..n_steps {
        let t_mid = (n as f64 + 0.5) * dt;
        let beta = spin_torque_prefactor(spec.i_dc + injection(t_mid), p);
        m = advance(m, spec.h_ext, beta, p, &noise, cfg, &mut rng).map_err(|_| {
            SimError::NonFinite {
                step: n,
                oscillator: None,
            }
        })?;
        if (n + 1) % spec.sample_stride as u64 == 0 {
            record(m, (n + 1) as f64 * dt, &mut out);
        }
    }

    Ok(TraceSet {
        sample_rate: 1.0 / (dt * spec.sample_stride as f64),
        t0: 0.0,
        channels: vec![out],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::magnetics::llgs_rhs;

    fn unit(v: Vec3) -> Magnetization {
        Magnetization::from_direction(v).unwrap()
    }

    fn larmor_params() -> DeviceParams {
        DeviceParams {
            alpha: 0.0,
            k1: Vec3::ZERO,
            k2: Vec3::ZERO,
            temperature: 0.0,
            ..DeviceParams::default()
        }
    }

    #[test]
    fn sigma_examples() {
        let p = DeviceParams {
            alpha: 0.01,
            temperature: 300.0,
            gamma: 1.76e11,
            ms: 8e5,
            volume: 5.04e-23,
            ..DeviceParams::default()
        };
        // sqrt(2·0.01·1.380649e-23·300 / (1.76e11·8e5·5.04e-23·1e-12)) = 3.41665e-3 T
        let s = thermal_sigma(&p, 1e-12);
        assert!((s - 3.41665e-3).abs() < 1e-8, "sigma = {s}");
        let cold = DeviceParams {
            temperature: 0.0,
            ..p.clone()
        };
        assert_eq!(thermal_sigma(&cold, 1e-12), 0.0);
        let big = DeviceParams {
            volume: 2.0 * p.volume,
            ..p.clone()
        };
        let ratio = thermal_sigma(&big, 1e-12).powi(2) / s.powi(2);
        assert!((ratio - 0.5).abs() < 1e-14);
        assert_eq!(
            ThermalNoiseSpec::new(&p, 1e-12, false, 0).sigma_per_component,
            0.0
        );
    }

    #[test]
    fn rk4_refuses_finite_temperature() {
        let cfg = StepperConfig::rk4(1e-12);
        assert!(cfg.validate_for(&DeviceParams::default()).is_err());
        assert!(cfg.validate_for(&larmor_params()).is_ok());
        assert!(StepperConfig::heun(-1.0).validate().is_err());
    }

    #[test]
    fn heun_without_noise_is_deterministic_heun() {
        let p = DeviceParams {
            temperature: 0.0,
            ..DeviceParams::default()
        };
        let cfg = StepperConfig::heun(1e-12);
        let m = unit(Vec3::new(0.9, 0.3, 0.2));
        let h = |v: Vec3| effective_field_raw(v, &p, Vec3::ZERO);
        let mut rng = RngStream::new(1, 0).rng();
        let got = step_heun(
            m,
            h,
            1e-4,
            &p,
            &ThermalNoiseSpec::disabled(),
            &cfg,
            &mut rng,
        )
        .unwrap();
        let f0 = llgs_rhs(m, h(m.vec()), 1e-4, &p);
        let pred = m.vec() + f0 * cfg.dt;
        let f1 = llgs_rhs_raw(pred, h(pred), 1e-4, &p);
        let want = (m.vec() + (f0 + f1) * (0.5 * cfg.dt)).normalized();
        assert_eq!(got.vec(), want);
    }

    #[test]
    fn heun_renormalizes_and_is_reproducible() {
        let p = DeviceParams::default();
        let cfg = StepperConfig::heun(1e-12);
        let noise = ThermalNoiseSpec::new(&p, cfg.dt, true, 3);
        let h = |v: Vec3| effective_field_raw(v, &p, Vec3::ZERO);
        let run = || {
            let mut rng = RngStream::new(42, 3).rng();
            let mut m = unit(Vec3::new(1.0, 0.1, 0.1));
            for _ in 0..1000 {
                m = step_heun(m, h, 2e-4, &p, &noise, &cfg, &mut rng).unwrap();
                assert!((m.vec().norm() - 1.0).abs() < 1e-12);
            }
            m
        };
        assert_eq!(run().vec(), run().vec());
    }

    #[test]
    fn non_finite_step_is_rejected() {
        let p = DeviceParams {
            temperature: 0.0,
            ..DeviceParams::default()
        };
        let cfg = StepperConfig::heun(1e-12);
        let h = |_: Vec3| Vec3::new(f64::NAN, 0.0, 0.0);
        let mut rng = RngStream::new(0, 0).rng();
        let r = step_heun(
            unit(Vec3::X),
            h,
            0.0,
            &p,
            &ThermalNoiseSpec::disabled(),
            &cfg,
            &mut rng,
        );
        assert_eq!(r, Err(SimError::StepRejected));
    }

    #[test]
    fn rk4_fixed_point() {
        let p = DeviceParams {
            temperature: 0.0,
            ..DeviceParams::default()
        };
        let cfg = StepperConfig::rk4(1e-12);
        let mut m = unit(Vec3::X);
        for _ in 0..100 {
            m = step_rk4(m, |v| effective_field_raw(v, &p, Vec3::ZERO), 0.0, &p, &cfg).unwrap();
        }
        assert_eq!(m.vec(), Vec3::X);
    }

    #[test]
    fn rk4_returns_after_one_larmor_period() {
        let p = larmor_params();
        let h = 0.1;
        let period = 2.0 * std::f64::consts::PI / (p.gamma * h);
        let steps = 2000;
        let cfg = StepperConfig::rk4(period / steps as f64);
        let start = unit(Vec3::new(1.0, 0.0, 0.3));
        let mut m = start;
        for _ in 0..steps {
            m = step_rk4(m, |_| Vec3::new(0.0, 0.0, h), 0.0, &p, &cfg).unwrap();
        }
        assert!((m.vec() - start.vec()).norm() < 1e-6);
    }

    #[test]
    fn trajectory_sample_count_and_fixed_point() {
        let p = DeviceParams {
            temperature: 0.0,
            ..DeviceParams::default()
        };
        let cfg = StepperConfig::heun(1e-12);
        let spec = TrajectorySpec {
            initial: unit(Vec3::X),
            i_dc: 0.0,
            h_ext: Vec3::ZERO,
            duration: 10e-12,
            sample_stride: 1,
        };
        let tr = run_trajectory(&spec, |_| 0.0, &p, &cfg, RngStream::new(0, 0)).unwrap();
        assert_eq!(tr.len(), 11);
        assert!(tr.channels[0].mx.iter().all(|&x| x == 1.0));
        assert!(tr.channels[0].v.iter().all(|&v| v == 0.0));

        let spec = TrajectorySpec {
            duration: 1e-9,
            sample_stride: 7,
            ..spec
        };
        let tr = run_trajectory(&spec, |_| 0.0, &p, &cfg, RngStream::new(0, 0)).unwrap();
        assert_eq!(tr.len(), 1000 / 7 + 1);
        assert!((tr.sample_rate - 1.0 / 7e-12).abs() < 1.0);
    }

    #[test]
    fn trajectory_rejects_bad_plan() {
        let p = DeviceParams::default();
        let cfg = StepperConfig::heun(1e-12);
        let spec = TrajectorySpec {
            initial: unit(Vec3::X),
            i_dc: 0.0,
            h_ext: Vec3::ZERO,
            duration: 1e-13,
            sample_stride: 1,
        };
        assert!(matches!(
            run_trajectory(&spec, |_| 0.0, &p, &cfg, RngStream::new(0, 0)),
            Err(SimError::Param(_))
        ));
    }

    #[test]
    fn rng_streams_are_independent() {
        let mut a = RngStream::new(7, 0).rng();
        let mut b = RngStream::new(7, 1).rng();
        let xa: Vec<u64> = (0..4).map(|_| a.gen()).collect();
        let xb: Vec<u64> = (0..4).map(|_| b.gen()).collect();
        assert_ne!(xa, xb);
        let mut a2 = RngStream::new(7, 0).rng();
        let xa2: Vec<u64> = (0..4).map(|_| a2.gen()).collect();
        assert_eq!(xa, xa2);
    }
}
