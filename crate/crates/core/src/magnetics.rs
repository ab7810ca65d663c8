//! Macrospin device physics: effective field, LLGS right-hand side,
//! spin-torque prefactor and the MTJ resistance model.
//!
//! Units are SI throughout. Fields are expressed in tesla (μ₀ absorbed),
//! so `gamma` is in rad·s⁻¹·T⁻¹.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::ParamError;

/// Reduced Planck constant, J·s (CODATA 2018, exact).
pub const HBAR: f64 = 1.054_571_817e-34;
/// Elementary charge, C (exact).
pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;
/// Boltzmann constant, J/K (exact).
pub const BOLTZMANN: f64 = 1.380_649e-23;
/// Free-electron gyromagnetic ratio used as the default, rad·s⁻¹·T⁻¹.
pub const GAMMA_DEFAULT: f64 = 1.76e11;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);
    pub const X: Vec3 = Vec3::new(1.0, 0.0, 0.0);
    pub const Y: Vec3 = Vec3::new(0.0, 1.0, 0.0);
    pub const Z: Vec3 = Vec3::new(0.0, 0.0, 1.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    #[inline]
    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    #[inline]
    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    /// Componentwise product, i.e. a diagonal tensor applied to `o`.
    #[inline]
    pub fn hadamard(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x * o.x, self.y * o.y, self.z * o.z)
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Vec3 {
        self * (1.0 / self.norm())
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

impl From<[f64; 3]> for Vec3 {
    fn from(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }
}

impl From<Vec3> for [f64; 3] {
    fn from(v: Vec3) -> Self {
        v.to_array()
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    #[inline]
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    #[inline]
    fn add_assign(&mut self, o: Vec3) {
        self.x += o.x;
        self.y += o.y;
        self.z += o.z;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    #[inline]
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    #[inline]
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    #[inline]
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl fmt::Display for Vec3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.x, self.y, self.z)
    }
}

/// Unit magnetization of the free layer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec3", into = "Vec3")]
pub struct Magnetization(Vec3);

impl Magnetization {
    pub const NORM_TOLERANCE: f64 = 1e-9;

    /// Wraps a vector that is already unit length within [`Self::NORM_TOLERANCE`].
    pub fn new(m: Vec3) -> Result<Self, ParamError> {
        if !m.is_finite() || (m.norm() - 1.0).abs() > Self::NORM_TOLERANCE {
            return Err(ParamError::new(
                "m",
                format!("must be a unit vector, got {m}"),
            ));
        }
        Ok(Self(m))
    }

    /// Projects an arbitrary non-zero vector onto the unit sphere.
    pub fn from_direction(v: Vec3) -> Result<Self, ParamError> {
        let n = v.norm();
        if !(n.is_finite() && n > 0.0) {
            return Err(ParamError::new("m", format!("cannot normalize {v}")));
        }
        Ok(Self(v * (1.0 / n)))
    }

    /// Caller guarantees `|m| = 1`.
    pub(crate) fn new_unchecked(m: Vec3) -> Self {
        Self(m)
    }

    #[inline]
    pub fn vec(self) -> Vec3 {
        self.0
    }
}

impl TryFrom<Vec3> for Magnetization {
    type Error = ParamError;
    fn try_from(v: Vec3) -> Result<Self, ParamError> {
        Magnetization::from_direction(v)
    }
}

impl From<Magnetization> for Vec3 {
    fn from(m: Magnetization) -> Vec3 {
        m.0
    }
}

/// Material and geometry constants of one MTJ oscillator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeviceParams {
    /// Gilbert damping.
    pub alpha: f64,
    /// Gyromagnetic ratio, rad·s⁻¹·T⁻¹.
    pub gamma: f64,
    /// Saturation magnetization, A/m.
    pub ms: f64,
    /// Free-layer volume, m³.
    pub volume: f64,
    /// Spin-torque efficiency.
    pub epsilon: f64,
    /// Anisotropy tensor diagonal, T per unit m.
    pub k1: Vec3,
    /// Demagnetization tensor diagonal, T per unit m.
    pub k2: Vec3,
    /// Polarizer (pinned layer) axis.
    pub m_p: Vec3,
    /// Parallel resistance, Ω.
    pub r_p: f64,
    /// Anti-parallel resistance, Ω.
    pub r_ap: f64,
    /// Temperature, K.
    pub temperature: f64,
}

impl Default for DeviceParams {
    /// In-plane free layer (easy axis x̂, effective easy plane penalizing m_z)
    /// with a perpendicular polarizer, sized to the 50400 nm³ reference device.
    fn default() -> Self {
        Self {
            alpha: 0.1,
            gamma: GAMMA_DEFAULT,
            ms: 8.0e5,
            volume: 5.04e-23,
            epsilon: 0.2,
            k1: Vec3::new(2.0e-3, 0.0, 0.0),
            k2: Vec3::new(0.0, 0.0, -0.1),
            m_p: Vec3::Z,
            r_p: 1000.0,
            r_ap: 2000.0,
            temperature: 300.0,
        }
    }
}

impl DeviceParams {
    pub fn validate(&self) -> Result<(), ParamError> {
        let positive = [
            ("alpha", self.alpha),
            ("gamma", self.gamma),
            ("ms", self.ms),
            ("volume", self.volume),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(ParamError::new(
                    name,
                    format!("must be finite and > 0, got {v}"),
                ));
            }
        }
        if !self.epsilon.is_finite() {
            return Err(ParamError::new("epsilon", "must be finite"));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(ParamError::new("temperature", "must be finite and >= 0"));
        }
        if !self.k1.is_finite() {
            return Err(ParamError::new("k1", "must be finite"));
        }
        if !self.k2.is_finite() {
            return Err(ParamError::new("k2", "must be finite"));
        }
        if !self.m_p.is_finite() || (self.m_p.norm() - 1.0).abs() > 1e-12 {
            return Err(ParamError::new("m_p", "must be a unit vector within 1e-12"));
        }
        if !(self.r_p.is_finite() && self.r_p > 0.0) {
            return Err(ParamError::new("r_p", "must be finite and > 0"));
        }
        if !(self.r_ap.is_finite() && self.r_ap > self.r_p) {
            return Err(ParamError::new(
                "r_ap",
                format!("must exceed r_p ({} Ω), got {}", self.r_p, self.r_ap),
            ));
        }
        Ok(())
    }

    /// Average resistance (R_P + R_AP) / 2.
    pub fn r_av(&self) -> f64 {
        0.5 * (self.r_p + self.r_ap)
    }

    /// Tunnel magnetoresistance ratio (R_AP − R_P) / R_P.
    pub fn tmr(&self) -> f64 {
        (self.r_ap - self.r_p) / self.r_p
    }
}

/// H_eff = H_ext + K₁·m + K₂·m with K₁, K₂ diagonal tensors.
#[inline]
pub fn assemble_effective_field(m: Magnetization, p: &DeviceParams, h_ext: Vec3) -> Vec3 {
    effective_field_raw(m.vec(), p, h_ext)
}

#[inline]
pub(crate) fn effective_field_raw(m: Vec3, p: &DeviceParams, h_ext: Vec3) -> Vec3 {
    h_ext + p.k1.hadamard(m) + p.k2.hadamard(m)
}

/// Slonczewski prefactor β = ħ·I / (2·e·Mₛ·V), in tesla.
#[inline]
pub fn spin_torque_prefactor(i_bias: f64, p: &DeviceParams) -> f64 {
    HBAR * i_bias / (2.0 * ELEMENTARY_CHARGE * p.ms * p.volume)
}

/// Explicit (Landau–Lifshitz) form of the Gilbert–Slonczewski equation.
///
/// With the undamped torque `A = −γ m×H + γβε m×(m_p×m)`, the implicit
/// Gilbert equation `ṁ = A + α m×ṁ` solves to `ṁ = (A + α m×A) / (1 + α²)`.
/// The damping sign is the dissipative one for γ > 0 and the `−γ m×H`
/// precession convention. The result is perpendicular to `m`.
#[inline]
pub fn llgs_rhs(m: Magnetization, h_eff: Vec3, beta: f64, p: &DeviceParams) -> Vec3 {
    llgs_rhs_raw(m.vec(), h_eff, beta, p)
}

#[inline]
pub(crate) fn llgs_rhs_raw(m: Vec3, h_eff: Vec3, beta: f64, p: &DeviceParams) -> Vec3 {
    let precession = m.cross(h_eff) * (-p.gamma);
    let torque = m.cross(p.m_p.cross(m)) * (p.gamma * beta * p.epsilon);
    let a = precession + torque;
    (a + m.cross(a) * p.alpha) * (1.0 / (1.0 + p.alpha * p.alpha))
}

/// R = R_av − (ΔR/2)·(m·m_p): R_P when parallel, R_AP when anti-parallel.
#[inline]
pub fn mtj_resistance(m: Magnetization, p: &DeviceParams) -> f64 {
    resistance_raw(m.vec(), p)
}

#[inline]
pub(crate) fn resistance_raw(m: Vec3, p: &DeviceParams) -> f64 {
    p.r_av() - 0.5 * (p.r_ap - p.r_p) * m.dot(p.m_p)
}
