//! One- and two-particle Gaussian momentum amplitudes in Hartree atomic
//! units.
//!
//! Each electron is a free Gaussian wavepacket of momentum width `sigma`
//! centred at `(P ± p̃)/2`. The relative momentum vector `p̃` points along
//! [`RELATIVE_AXIS`]; every exported statistic depends only on its
//! magnitude.

use std::ops::{Add, Mul, Neg, Sub};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// Hartree atomic units, fixed for the whole crate.
#[derive(Debug, Clone, Copy)]
pub struct PhysicalConstants;

impl PhysicalConstants {
    pub const HBAR: f64 = 1.0;
    pub const MASS: f64 = 1.0;
}

/// Triplet states with `p_tilde / sigma` below this are rejected.
pub const TRIPLET_DEGENERACY: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Momentum3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

/// Direction of the relative average momentum `p̃`.
pub const RELATIVE_AXIS: Momentum3 = Momentum3::new(0.0, 0.0, 1.0);

impl Momentum3 {
    pub const ZERO: Momentum3 = Momentum3::new(0.0, 0.0, 0.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, o: Self) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn norm_sqr(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Two unit vectors completing `self` (assumed unit length) to a
    /// right-handed orthonormal frame.
    pub fn orthonormal_complement(self) -> (Momentum3, Momentum3) {
        let helper = if self.x.abs() < 0.9 {
            Momentum3::new(1.0, 0.0, 0.0)
        } else {
            Momentum3::new(0.0, 1.0, 0.0)
        };
        let e1 = helper - self * helper.dot(self);
        let e1 = e1 * (1.0 / e1.norm());
        let e2 = Momentum3::new(
            self.y * e1.z - self.z * e1.y,
            self.z * e1.x - self.x * e1.z,
            self.x * e1.y - self.y * e1.x,
        );
        (e1, e2)
    }
}

impl Add for Momentum3 {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Momentum3 {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Momentum3 {
    type Output = Self;
    fn mul(self, k: f64) -> Self {
        Self::new(self.x * k, self.y * k, self.z * k)
    }
}

impl Neg for Momentum3 {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }
}

/// Physical parameters of one correlation model instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Momentum uncertainty of each electron, a.u.
    pub sigma: f64,
    /// Singlet-to-triplet transition probability.
    pub f: f64,
    /// Magnitude of the relative average momentum, a.u.
    pub p_tilde: f64,
    /// Total average momentum, a.u.
    pub p_total: Momentum3,
    /// Total double-ionization cross-section (arbitrary scale).
    pub n_tot: f64,
}

impl ModelParams {
    /// `P = 0`, `N_tot = 1`.
    pub fn new(sigma: f64, f: f64, p_tilde: f64) -> Self {
        Self {
            sigma,
            f,
            p_tilde,
            p_total: Momentum3::ZERO,
            n_tot: 1.0,
        }
    }

    pub fn with_p_total(mut self, p: Momentum3) -> Self {
        self.p_total = p;
        self
    }

    pub fn with_n_tot(mut self, n: f64) -> Self {
        self.n_tot = n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        ensure_finite("sigma", self.sigma)?;
        ensure_finite("f", self.f)?;
        ensure_finite("p_tilde", self.p_tilde)?;
        ensure_finite("n_tot", self.n_tot)?;
        if !self.p_total.is_finite() {
            return Err(Error::Domain("p_total must be finite".into()));
        }
        if self.sigma <= 0.0 {
            return Err(Error::Domain(format!("sigma must be > 0, got {}", self.sigma)));
        }
        if !(0.0..=1.0).contains(&self.f) {
            return Err(Error::Domain(format!("f must lie in [0, 1], got {}", self.f)));
        }
        if self.p_tilde < 0.0 {
            return Err(Error::Domain(format!("p_tilde must be >= 0, got {}", self.p_tilde)));
        }
        if self.n_tot <= 0.0 {
            return Err(Error::Domain(format!("n_tot must be > 0, got {}", self.n_tot)));
        }
        Ok(())
    }

    pub fn p_tilde_vector(&self) -> Momentum3 {
        RELATIVE_AXIS * self.p_tilde
    }

    pub fn triplet_is_degenerate(&self) -> bool {
        self.p_tilde < TRIPLET_DEGENERACY * self.sigma
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SpinChannel {
    /// S = 0, symmetric spatial part.
    Singlet,
    /// S = 1, antisymmetric spatial part.
    Triplet,
}

impl SpinChannel {
    pub const BOTH: [SpinChannel; 2] = [SpinChannel::Singlet, SpinChannel::Triplet];

    /// Exchange sign of the spatial wavefunction.
    pub fn sign(self) -> f64 {
        match self {
            SpinChannel::Singlet => 1.0,
            SpinChannel::Triplet => -1.0,
        }
    }
}

/// Selects the `+` (mean `(P+p̃)/2`) or `−` (mean `(P−p̃)/2`) wavepacket.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Plus,
    Minus,
}

/// `ln|φ| + i·arg φ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogAmplitude {
    pub log_mag: f64,
    pub phase: f64,
}

impl LogAmplitude {
    pub fn to_complex(self) -> Complex64 {
        Complex64::from_polar(self.log_mag.exp(), self.phase)
    }
}

impl Mul for LogAmplitude {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Self {
            log_mag: self.log_mag + o.log_mag,
            phase: self.phase + o.phase,
        }
    }
}

/// Validated parameters with the per-state constants precomputed. Reused
/// across the many density evaluations of the integration oracle.
#[derive(Debug, Clone, Copy)]
pub struct PairState {
    sigma: f64,
    mean_plus: Momentum3,
    mean_minus: Momentum3,
    log_norm: f64,
    inv_four_var: f64,
    j2: f64,
    one_minus_j2: f64,
    degenerate: bool,
}

impl PairState {
    pub fn new(params: &ModelParams) -> Result<Self> {
        params.validate()?;
        Ok(Self::from_vectors(
            params.sigma,
            params.p_total,
            params.p_tilde_vector(),
        ))
    }

    /// Arbitrary `P` and `p̃` vectors; `sigma` must already be validated.
    pub(crate) fn from_vectors(sigma: f64, p_total: Momentum3, p_tilde: Momentum3) -> Self {
        let var = sigma * sigma;
        let q = p_tilde.norm_sqr() / (4.0 * var);
        Self {
            sigma,
            mean_plus: (p_total + p_tilde) * 0.5,
            mean_minus: (p_total - p_tilde) * 0.5,
            log_norm: -0.75 * (2.0 * std::f64::consts::PI * var).ln(),
            inv_four_var: 1.0 / (4.0 * var),
            j2: (-q).exp(),
            one_minus_j2: -(-q).exp_m1(),
            degenerate: p_tilde.norm() < TRIPLET_DEGENERACY * sigma,
        }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn mean(&self, branch: Branch) -> Momentum3 {
        match branch {
            Branch::Plus => self.mean_plus,
            Branch::Minus => self.mean_minus,
        }
    }

    /// Squared overlap `J²`.
    pub fn overlap_sqr(&self) -> f64 {
        self.j2
    }

    /// `1 ± J²` for the channel normalization.
    pub fn channel_norm(&self, channel: SpinChannel) -> f64 {
        match channel {
            SpinChannel::Singlet => 1.0 + self.j2,
            SpinChannel::Triplet => self.one_minus_j2,
        }
    }

    pub fn check_channel(&self, channel: SpinChannel) -> Result<()> {
        if channel == SpinChannel::Triplet && self.degenerate {
            let ratio = (self.mean_plus - self.mean_minus).norm() / self.sigma;
            return Err(Error::DegenerateChannel {
                ratio,
                threshold: TRIPLET_DEGENERACY,
            });
        }
        Ok(())
    }

    pub fn log_amplitude(&self, p: Momentum3, branch: Branch, t: f64) -> LogAmplitude {
        let d = p - self.mean(branch);
        LogAmplitude {
            log_mag: self.log_norm - d.norm_sqr() * self.inv_four_var,
            phase: -p.norm_sqr() * t / (2.0 * PhysicalConstants::MASS * PhysicalConstants::HBAR),
        }
    }

    /// `|φ(p)|²`, a normalized 3-D Gaussian with variance `σ²` per axis.
    pub fn one_particle_density(&self, p: Momentum3, branch: Branch) -> f64 {
        (2.0 * self.log_amplitude(p, branch, 0.0).log_mag).exp()
    }

    /// `|Ψ_S(p1, p2, t)|²`, combined in log space.
    pub fn density(&self, p1: Momentum3, p2: Momentum3, channel: SpinChannel, t: f64) -> Result<f64> {
        self.check_channel(channel)?;
        Ok(self.density_unchecked(p1, p2, channel, t))
    }

    pub(crate) fn density_unchecked(
        &self,
        p1: Momentum3,
        p2: Momentum3,
        channel: SpinChannel,
        t: f64,
    ) -> f64 {
        let direct =
            self.log_amplitude(p1, Branch::Plus, t) * self.log_amplitude(p2, Branch::Minus, t);
        let exchanged =
            self.log_amplitude(p1, Branch::Minus, t) * self.log_amplitude(p2, Branch::Plus, t);
        let (hi, lo) = if direct.log_mag >= exchanged.log_mag {
            (direct, exchanged)
        } else {
            (exchanged, direct)
        };
        // |e^{hi} ± e^{lo}|² = e^{2 hi} |1 ± e^{d} e^{iΔ}|²
        let d = lo.log_mag - hi.log_mag;
        let delta = lo.phase - hi.phase;
        let ed = d.exp();
        let (re, im) = match channel {
            SpinChannel::Singlet => (1.0 + ed * delta.cos(), ed * delta.sin()),
            SpinChannel::Triplet => {
                let s = (0.5 * delta).sin();
                (-d.exp_m1() + 2.0 * ed * s * s, -ed * delta.sin())
            }
        };
        let modulus = re * re + im * im;
        (2.0 * hi.log_mag).exp() * modulus / (2.0 * self.channel_norm(channel))
    }
}

/// φ₁ (`Branch::Plus`) or φ₂ (`Branch::Minus`) at momentum `p` and time `t`.
pub fn one_particle_amplitude(
    p: Momentum3,
    params: &ModelParams,
    branch: Branch,
    t: f64,
) -> Result<Complex64> {
    if !p.is_finite() {
        return Err(Error::Domain("momentum must be finite".into()));
    }
    ensure_finite("t", t)?;
    Ok(PairState::new(params)?.log_amplitude(p, branch, t).to_complex())
}

/// `J = exp(-p̃²/(8σ²))`.
pub fn overlap_j(p_tilde: f64, sigma: f64) -> Result<f64> {
    ensure_finite("sigma", sigma)?;
    ensure_finite("p_tilde", p_tilde)?;
    if sigma <= 0.0 {
        return Err(Error::Domain(format!("sigma must be > 0, got {sigma}")));
    }
    if p_tilde < 0.0 {
        return Err(Error::Domain(format!("p_tilde must be >= 0, got {p_tilde}")));
    }
    Ok((-(p_tilde * p_tilde) / (8.0 * sigma * sigma)).exp())
}

pub fn two_particle_density(
    p1: Momentum3,
    p2: Momentum3,
    params: &ModelParams,
    channel: SpinChannel,
    t: f64,
) -> Result<f64> {
    if !p1.is_finite() || !p2.is_finite() {
        return Err(Error::Domain("momentum must be finite".into()));
    }
    ensure_finite("t", t)?;
    PairState::new(params)?.density(p1, p2, channel, t)
}

/// Position-space width of a free Gaussian packet after time `t`.
pub fn coordinate_uncertainty(sigma: f64, t: f64) -> Result<f64> {
    ensure_finite("sigma", sigma)?;
    ensure_finite("t", t)?;
    if sigma <= 0.0 {
        return Err(Error::Domain(format!("sigma must be > 0, got {sigma}")));
    }
    if t < 0.0 {
        return Err(Error::Domain(format!("t must be >= 0, got {t}")));
    }
    let (hbar, m) = (PhysicalConstants::HBAR, PhysicalConstants::MASS);
    Ok(hbar / (2.0 * sigma) * 1.0_f64.hypot(2.0 * sigma * sigma * t / (hbar * m)))
}
