use serde::{Deserialize, Serialize};

/// Sampled channels of one oscillator.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OscillatorTrace {
    pub mx: Vec<f64>,
    pub my: Vec<f64>,
    pub mz: Vec<f64>,
    /// MTJ resistance, Ω.
    pub r: Vec<f64>,
    /// Device voltage, V.
    pub v: Vec<f64>,
    /// Injected (non-DC) current, A: RF tones plus coupling.
    pub i_inj: Vec<f64>,
}

impl OscillatorTrace {
    pub(crate) fn with_capacity(n: usize) -> Self {
        Self {
            mx: Vec::with_capacity(n),
            my: Vec::with_capacity(n),
            mz: Vec::with_capacity(n),
            r: Vec::with_capacity(n),
            v: Vec::with_capacity(n),
            i_inj: Vec::with_capacity(n),
        }
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    /// Named columns in serialization order.
    pub fn columns(&self) -> [(&'static str, &[f64]); 6] {
        [
            ("mx", &self.mx),
            ("my", &self.my),
            ("mz", &self.mz),
            ("r_ohm", &self.r),
            ("v_volt", &self.v),
            ("i_inj_amp", &self.i_inj),
        ]
    }

    fn tail(&self, from: usize) -> Self {
        Self {
            mx: self.mx[from..].to_vec(),
            my: self.my[from..].to_vec(),
            mz: self.mz[from..].to_vec(),
            r: self.r[from..].to_vec(),
            v: self.v[from..].to_vec(),
            i_inj: self.i_inj[from..].to_vec(),
        }
    }
}

/// Multichannel time series on a uniform clock.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceSet {
    /// Samples per second, `1 / (dt · stride)`.
    pub sample_rate: f64,
    /// Time of the first sample, s.
    pub t0: f64,
    pub channels: Vec<OscillatorTrace>,
}

impl TraceSet {
    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, OscillatorTrace::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 / self.sample_rate
    }

    pub fn duration(&self) -> f64 {
        self.len().saturating_sub(1) as f64 / self.sample_rate
    }

    /// Sum of all oscillator voltages, the combined network output.
    pub fn combined_voltage(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        for ch in &self.channels {
            for (o, v) in out.iter_mut().zip(&ch.v) {
                *o += v;
            }
        }
        out
    }

    /// Drops every sample earlier than `t0 + settle` seconds.
    pub fn after(&self, settle: f64) -> TraceSet {
        let skip = ((settle * self.sample_rate).ceil() as usize).min(self.len());
        TraceSet {
            sample_rate: self.sample_rate,
            t0: self.time(skip),
            channels: self.channels.iter().map(|c| c.tail(skip)).collect(),
        }
    }
}
