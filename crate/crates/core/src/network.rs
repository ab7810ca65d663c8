//! N oscillators coupled through a behavioural feedback loop: every device
//! voltage passes a series-capacitor high-pass, is converted to current by
//! a transconductance stage and injected into the other devices. Optional
//! RF tones are injected for mixing.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{ParamError, SimError};
use crate::integrator::{advance, sample_plan, RngStream, Scheme, StepperConfig, ThermalNoiseSpec};
use crate::magnetics::{resistance_raw, spin_torque_prefactor, DeviceParams, Magnetization, Vec3};
use crate::trace::{OscillatorTrace, TraceSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    /// All-to-all.
    Global,
    /// No coupling.
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RfTone {
    /// Peak current, A.
    pub amplitude: f64,
    /// Hz.
    pub frequency: f64,
    /// rad.
    #[serde(default)]
    pub phase: f64,
    /// Index of the oscillator the tone is injected into.
    #[serde(default)]
    pub target: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub oscillators: Vec<DeviceParams>,
    /// DC bias per oscillator, A.
    pub i_dc: Vec<f64>,
    /// Coupling transconductance, S.
    pub g_m: f64,
    pub topology: Topology,
    /// High-pass corner of the series capacitor, Hz.
    pub hp_cutoff: f64,
    #[serde(default)]
    pub rf_tones: Vec<RfTone>,
    pub master_seed: u64,
    /// Initial magnetization per oscillator; empty selects [`default_initial`].
    #[serde(default)]
    pub initial_m: Vec<Vec3>,
    /// External field applied to every device, T.
    #[serde(default)]
    pub h_ext: Vec3,
}

/// Default bias that places the default device near 0.9 GHz.
pub const DEFAULT_I_DC: f64 = 1.0e-3;
/// Default series-capacitor corner, f_osc / 100 for a 0.9 GHz carrier.
pub const DEFAULT_HP_CUTOFF: f64 = 9.0e6;
/// Default coupling transconductance, S.
pub const DEFAULT_G_M: f64 = 0.15e-3;

impl NetworkConfig {
    /// `n` identical default devices, globally coupled.
    pub fn identical(
        n: usize,
        device: DeviceParams,
        i_dc: f64,
        g_m: f64,
        master_seed: u64,
    ) -> Self {
        Self {
            oscillators: vec![device; n],
            i_dc: vec![i_dc; n],
            g_m,
            topology: Topology::Global,
            hp_cutoff: DEFAULT_HP_CUTOFF,
            rf_tones: Vec::new(),
            master_seed,
            initial_m: Vec::new(),
            h_ext: Vec3::ZERO,
        }
    }

    pub fn len(&self) -> usize {
        self.oscillators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.oscillators.is_empty()
    }

    /// Coupling strength after applying the topology.
    pub fn effective_g_m(&self) -> f64 {
        match self.topology {
            Topology::Global => self.g_m,
            Topology::None => 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        let n = self.oscillators.len();
        if n == 0 {
            return Err(ParamError::new(
                "oscillators",
                "need at least one oscillator",
            ));
        }
        for (j, p) in self.oscillators.iter().enumerate() {
            p.validate()
                .map_err(|e| e.within(&format!("oscillators[{j}]")))?;
        }
        if self.i_dc.len() != n {
            return Err(ParamError::new(
                "i_dc",
                format!("expected {n} entries, got {}", self.i_dc.len()),
            ));
        }
        if let Some(j) = self.i_dc.iter().position(|i| !i.is_finite()) {
            return Err(ParamError::new(format!("i_dc[{j}]"), "must be finite"));
        }
        if !(self.g_m.is_finite() && self.g_m >= 0.0) {
            return Err(ParamError::new(
                "g_m",
                format!("must be >= 0, got {}", self.g_m),
            ));
        }
        // each injected current shows up again in the device voltage, so the
        // ring gain g_m·R·(N−1) must stay below one
        let loop_gain = self.effective_g_m()
            * self.oscillators.iter().map(|p| p.r_ap).fold(0.0, f64::max)
            * (n - 1) as f64;
        if loop_gain >= 1.0 {
            return Err(ParamError::new(
                "g_m",
                format!("feedback loop gain g_m*R_AP*(N-1) = {loop_gain:.3} must be < 1"),
            ));
        }
        if !(self.hp_cutoff.is_finite() && self.hp_cutoff > 0.0) {
            return Err(ParamError::new(
                "hp_cutoff",
                format!("must be > 0, got {}", self.hp_cutoff),
            ));
        }
        for (k, tone) in self.rf_tones.iter().enumerate() {
            let at = |f: &str| format!("rf_tones[{k}].{f}");
            if !(tone.frequency.is_finite() && tone.frequency > 0.0) {
                return Err(ParamError::new(at("frequency"), "must be > 0"));
            }
            if !(tone.amplitude.is_finite() && tone.phase.is_finite()) {
                return Err(ParamError::new(at("amplitude"), "must be finite"));
            }
            if tone.target >= n {
                return Err(ParamError::new(at("target"), format!("must be < {n}")));
            }
        }
        if !self.initial_m.is_empty() {
            if self.initial_m.len() != n {
                return Err(ParamError::new(
                    "initial_m",
                    format!("expected {n} entries"),
                ));
            }
            for (j, m) in self.initial_m.iter().enumerate() {
                Magnetization::from_direction(*m)
                    .map_err(|e| e.within(&format!("initial_m[{j}]")))?;
            }
        }
        if !self.h_ext.is_finite() {
            return Err(ParamError::new("h_ext", "must be finite"));
        }
        Ok(())
    }

    pub fn initial_state(&self) -> Vec<Magnetization> {
        (0..self.len())
            .map(|j| match self.initial_m.get(j) {
                Some(v) => Magnetization::from_direction(*v).expect("validated"),
                None => default_initial(j),
            })
            .collect()
    }
}

/// Near the easy axis, slightly tilted out of plane and rotated by 0.05 rad
/// per index so identical devices do not start in lock-step.
pub fn default_initial(j: usize) -> Magnetization {
    let a = 0.05 * j as f64;
    Magnetization::from_direction(Vec3::new(a.cos(), a.sin(), 0.05)).expect("non-zero")
}

/// State of one first-order high-pass section.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct HighPassState {
    pub prev_in: f64,
    pub prev_out: f64,
}

/// `y[n] = a·(y[n−1] + x[n] − x[n−1])`, `a = 1/(1 + 2π·f_c·dt)`.
#[inline]
pub fn highpass_step(x: f64, state: &mut HighPassState, f_c: f64, dt: f64) -> f64 {
    let a = 1.0 / (1.0 + 2.0 * PI * f_c * dt);
    let y = a * (state.prev_out + x - state.prev_in);
    state.prev_in = x;
    state.prev_out = y;
    y
}

/// Current injected into each oscillator from the filtered voltages of the others.
pub fn coupling_currents(v_filtered: &[f64], g_m: f64, topology: Topology) -> Vec<f64> {
    let mut out = vec![0.0; v_filtered.len()];
    coupling_currents_into(v_filtered, g_m, topology, &mut out);
    out
}

fn coupling_currents_into(v_filtered: &[f64], g_m: f64, topology: Topology, out: &mut [f64]) {
    match topology {
        Topology::None => out.iter_mut().for_each(|i| *i = 0.0),
        Topology::Global => {
            for (j, o) in out.iter_mut().enumerate() {
                let others: f64 = v_filtered
                    .iter()
                    .enumerate()
                    .filter(|&(i, _)| i != j)
                    .map(|(_, v)| v)
                    .sum();
                *o = g_m * others;
            }
        }
    }
}

/// Sum of `A·sin(2πft + φ)` over the tones aimed at each of `n` oscillators.
pub fn rf_current(t: f64, tones: &[RfTone], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    rf_current_into(t, tones, &mut out);
    out
}

fn rf_current_into(t: f64, tones: &[RfTone], out: &mut [f64]) {
    out.iter_mut().for_each(|i| *i = 0.0);
    for tone in tones {
        out[tone.target] += tone.amplitude * (2.0 * PI * tone.frequency * t + tone.phase).sin();
    }
}

/// The capacitor + transconductance feedback path with a one-step delay.
///
/// [`CouplingStage::currents`] returns the currents for the current step;
/// [`CouplingStage::push`] filters this step's voltages and prepares the
/// currents for the next step.
#[derive(Clone, Debug)]
pub struct CouplingStage {
    filters: Vec<HighPassState>,
    filtered: Vec<f64>,
    currents: Vec<f64>,
    g_m: f64,
    topology: Topology,
    f_c: f64,
    dt: f64,
}

impl CouplingStage {
    pub fn new(n: usize, g_m: f64, topology: Topology, f_c: f64, dt: f64) -> Self {
        Self {
            filters: vec![HighPassState::default(); n],
            filtered: vec![0.0; n],
            currents: vec![0.0; n],
            g_m,
            topology,
            f_c,
            dt,
        }
    }

    pub fn currents(&self) -> &[f64] {
        &self.currents
    }

    /// Charges the series capacitors to `voltages`, so a constant input
    /// produces no coupling current.
    pub fn precharge(&mut self, voltages: &[f64]) {
        for (st, &v) in self.filters.iter_mut().zip(voltages) {
            st.prev_in = v;
        }
    }

    pub fn push(&mut self, voltages: &[f64]) {
        for ((y, st), &v) in self
            .filtered
            .iter_mut()
            .zip(&mut self.filters)
            .zip(voltages)
        {
            *y = highpass_step(v, st, self.f_c, self.dt);
        }
        coupling_currents_into(&self.filtered, self.g_m, self.topology, &mut self.currents);
    }
}

/// Co-integrates all oscillators on one clock.
///
/// During step `n → n+1` oscillator `j` carries
/// `i_dc[j] + rf(t_n + dt/2)[j] + coupling[j]`, where the coupling currents
/// come from the filtered voltages of step `n`. Samples record
/// `v_j = i_total,j(t_n) · R_j(m_j(t_n))`. Oscillator `j` draws its thermal
/// field from stream `j` of `master_seed`. The coupling capacitors start
/// charged to the t = 0 device voltages.
pub fn simulate_network(
    cfg: &NetworkConfig,
    duration: f64,
    stepper: &StepperConfig,
    stride: usize,
) -> Result<TraceSet, SimError> {
    cfg.validate()?;
    for (j, p) in cfg.oscillators.iter().enumerate() {
        stepper
            .validate_for(p)
            .map_err(|e| e.within(&format!("oscillators[{j}]")))?;
    }
    let (n_samples, n_steps) = sample_plan(duration, stepper.dt, stride)?;
    let n = cfg.len();
    let dt = stepper.dt;

    let noise: Vec<ThermalNoiseSpec> = cfg
        .oscillators
        .iter()
        .enumerate()
        .map(|(j, p)| ThermalNoiseSpec::new(p, dt, stepper.scheme == Scheme::Heun, j as u64))
        .collect();
    let mut rngs: Vec<_> = (0..n)
        .map(|j| RngStream::new(cfg.master_seed, j as u64).rng())
        .collect();
    let mut m = cfg.initial_state();
    let mut coupling = CouplingStage::new(n, cfg.effective_g_m(), cfg.topology, cfg.hp_cutoff, dt);
    let mut rf = vec![0.0; n];
    let mut volts = vec![0.0; n];
    let mut out: Vec<OscillatorTrace> = (0..n)
        .map(|_| OscillatorTrace::with_capacity(n_samples))
        .collect();

    // voltages at t_n with the currents that flow during step n
    let observe = |m: &[Magnetization], t: f64, ic: &[f64], rf: &mut [f64], volts: &mut [f64]| {
        rf_current_into(t, &cfg.rf_tones, rf);
        for j in 0..n {
            let r = resistance_raw(m[j].vec(), &cfg.oscillators[j]);
            volts[j] = (cfg.i_dc[j] + rf[j] + ic[j]) * r;
        }
    };

    let record = |out: &mut [OscillatorTrace],
                  m: &[Magnetization],
                  volts: &[f64],
                  rf: &[f64],
                  ic: &[f64]| {
        for j in 0..n {
            let v = m[j].vec();
            let o = &mut out[j];
            o.mx.push(v.x);
            o.my.push(v.y);
            o.mz.push(v.z);
            o.r.push(resistance_raw(v, &cfg.oscillators[j]));
            o.v.push(volts[j]);
            o.i_inj.push(rf[j] + ic[j]);
        }
    };

    observe(&m, 0.0, coupling.currents(), &mut rf, &mut volts);
    coupling.precharge(&volts);
    record(&mut out, &m, &volts, &rf, coupling.currents());

    for step in 0..n_steps {
        let t_mid = (step as f64 + 0.5) * dt;
        rf_current_into(t_mid, &cfg.rf_tones, &mut rf);
        for j in 0..n {
            let p = &cfg.oscillators[j];
            let beta = spin_torque_prefactor(cfg.i_dc[j] + rf[j] + coupling.currents()[j], p);
            m[j] = advance(m[j], cfg.h_ext, beta, p, &noise[j], stepper, &mut rngs[j]).map_err(
                |_| SimError::NonFinite {
                    step,
                    oscillator: Some(j),
                },
            )?;
        }
        coupling.push(&volts);
        let t = (step + 1) as f64 * dt;
        observe(&m, t, coupling.currents(), &mut rf, &mut volts);
        if (step + 1) % stride as u64 == 0 {
            record(&mut out, &m, &volts, &rf, coupling.currents());
        }
    }

    Ok(TraceSet {
        sample_rate: 1.0 / (dt * stride as f64),
        t0: 0.0,
        channels: out,
    })
}
