use thiserror::Error;

/// A violated parameter constraint, naming the offending field.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid `{field}`: {message}")]
pub struct ParamError {
    field: String,
    message: String,
}

impl ParamError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn field(&self) -> &str {
        &self.field
    }

    pub fn message(&self) -> &str {
        &self.message
    }

    /// Prefixes the field path, e.g. `r_ap` becomes `oscillators[1].r_ap`.
    pub fn within(mut self, parent: &str) -> Self {
        self.field = format!("{parent}.{}", self.field);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error("step rejected: non-finite intermediate state")]
    StepRejected,
    #[error("step rejected: non-finite state at step {step}{}", oscillator.map(|j| format!(" (oscillator {j})")).unwrap_or_default())]
    NonFinite {
        step: u64,
        oscillator: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpectralError {
    #[error("series of {len} samples is shorter than one segment of {segment_len}")]
    TooShort { len: usize, segment_len: usize },
    #[error("invalid argument `{0}`: {1}")]
    Argument(&'static str, String),
    #[error("band [{lo}, {hi}] Hz lies outside the spectrum [0, {nyquist}] Hz")]
    BandOutOfRange { lo: f64, hi: f64, nyquist: f64 },
    #[error("no spectrum bins in [{0}, {1}] Hz")]
    EmptyRange(f64, f64),
    #[error("peak at {0} Hz sits on the spectrum edge")]
    PeakAtEdge(f64),
    #[error("carrier {f0} Hz outside (0, {nyquist}) Hz")]
    CarrierOutOfRange { f0: f64, nyquist: f64 },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MixerError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error("no sideband at {freq} Hz: peak only {margin_db:.2} dB above local median")]
    NoSideband { freq: f64, margin_db: f64 },
    #[error("sweep input grid is not strictly increasing")]
    NonMonotoneGrid,
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("fitted slopes {fund_slope:.3} / {third_slope:.3} outside the linear/cubic regime; lower the input power")]
    NonCubicRegime { fund_slope: f64, third_slope: f64 },
}
