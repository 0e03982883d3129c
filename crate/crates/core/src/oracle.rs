//! First-principles integration of the pair and single-electron densities.
//!
//! The closed forms in [`crate::correlation`] are checked against the
//! integrals computed here, which only ever evaluate the amplitudes of
//! [`crate::model`]. Two integration routes are available:
//!
//! * stratified Monte-Carlo with Gaussian importance sampling, used for the
//!   5-D coincidence and accidental intensity integrals and the 6-D pair
//!   normalization;
//! * tensor-product trapezoid quadrature over a ±8σ box, used for the
//!   separable 3-D integrals (one-particle norms, overlap, single-electron
//!   density) where it reaches ~1e-14.
//!
//! Monte-Carlo sampling is stratified over a grid of cells in two unit
//! coordinates: the direction cosine of the detector direction `n` against
//! the relative-momentum axis (uniform, so the solid angle measure is
//! preserved) and the quantile of the momentum component along that axis.
//! Each cell owns an RNG stream derived from `rng_seed` and the cell index,
//! and cells are reduced in index order, so results do not depend on the
//! thread count.
//!
//! The solid-angle integral over `n` uses the unnormalized measure (total
//! 4π); with that convention the intensities coincide with the closed forms
//! with no extra constant.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Open01, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::{Branch, ModelParams, Momentum3, PairState, SpinChannel, RELATIVE_AXIS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QuadratureMethod {
    MonteCarlo,
    TensorQuadrature,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    pub method: QuadratureMethod,
    /// Monte-Carlo sample budget.
    pub sample_count: usize,
    /// Minimum tensor nodes per axis on a ±8σ span.
    pub nodes_per_axis: usize,
    pub rng_seed: u64,
    /// Accept when `3·est_error <= target_rel_tol·|value|`.
    pub target_rel_tol: f64,
    #[serde(skip)]
    pub exec: Execution,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            method: QuadratureMethod::MonteCarlo,
            sample_count: 2_000_000,
            nodes_per_axis: 65,
            rng_seed: 0x5eed_2026,
            target_rel_tol: 1e-3,
            exec: Execution::default(),
        }
    }
}

impl QuadratureSpec {
    pub fn monte_carlo(sample_count: usize, rng_seed: u64) -> Self {
        Self {
            sample_count,
            rng_seed,
            ..Self::default()
        }
    }

    pub fn tensor(nodes_per_axis: usize) -> Self {
        Self {
            method: QuadratureMethod::TensorQuadrature,
            nodes_per_axis,
            ..Self::default()
        }
    }

    pub fn with_tolerance(mut self, tol: f64) -> Self {
        self.target_rel_tol = tol;
        self
    }

    pub fn with_exec(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.target_rel_tol.is_nan() || self.target_rel_tol <= 0.0 {
            return Err(Error::InvalidSpec("target_rel_tol must be > 0".into()));
        }
        match self.method {
            QuadratureMethod::MonteCarlo if self.sample_count == 0 => {
                Err(Error::InvalidSpec("sample_count must be > 0".into()))
            }
            QuadratureMethod::TensorQuadrature if self.nodes_per_axis < 3 => {
                Err(Error::InvalidSpec("nodes_per_axis must be >= 3".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub value: f64,
    /// Standard error (Monte-Carlo) or last-refinement delta (quadrature).
    pub est_error: f64,
    pub samples_used: usize,
}

impl OracleResult {
    pub const ZERO: OracleResult = OracleResult {
        value: 0.0,
        est_error: 0.0,
        samples_used: 0,
    };

    pub fn rel_error(&self) -> f64 {
        if self.value == 0.0 {
            if self.est_error == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            self.est_error / self.value.abs()
        }
    }

    /// `max(analytic_rel·|reference|, 3·est_error)`.
    pub fn combined_tolerance(&self, reference: f64, analytic_rel: f64) -> f64 {
        (analytic_rel * reference.abs()).max(3.0 * self.est_error)
    }

    /// Agreement with `reference` within the combined tolerance, and the
    /// combined tolerance itself no looser than `analytic_rel`.
    pub fn agrees_with(&self, reference: f64, analytic_rel: f64) -> bool {
        let tol = self.combined_tolerance(reference, analytic_rel);
        (self.value - reference).abs() <= tol && tol <= analytic_rel * reference.abs()
            || (reference == 0.0 && self.value == 0.0)
    }

    fn check(self, spec: &QuadratureSpec) -> Result<Self> {
        if 3.0 * self.est_error <= spec.target_rel_tol * self.value.abs()
            || (self.value == 0.0 && self.est_error == 0.0)
        {
            Ok(self)
        } else {
            Err(Error::ToleranceNotMet(self))
        }
    }
}

/// Unwrap either an accepted result or the best estimate carried by a
/// tolerance failure.
pub fn best_estimate(r: Result<OracleResult>) -> Result<OracleResult> {
    match r {
        Err(Error::ToleranceNotMet(best)) => Ok(best),
        other => other,
    }
}

/// Where a channel's ionization weight Θ_S(P, p̃) sits in `(P, p̃)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ThetaShape {
    PointMass {
        p_total: Momentum3,
        p_tilde: Momentum3,
    },
    /// Isotropic Gaussian spread of the `p̃` vector around `p_tilde_mean`.
    Gaussian {
        p_total: Momentum3,
        p_tilde_mean: Momentum3,
        width: f64,
    },
}

/// One channel's contribution: total weight `N_S = ∫Θ_S` and its shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelCrossSection {
    pub channel: SpinChannel,
    pub weight: f64,
    pub shape: ThetaShape,
}

impl ChannelCrossSection {
    pub fn point_mass(channel: SpinChannel, weight: f64, p_total: Momentum3, p_tilde: Momentum3) -> Self {
        Self {
            channel,
            weight,
            shape: ThetaShape::PointMass { p_total, p_tilde },
        }
    }

    /// The two point masses `(1−f)N_tot` (singlet) and `f N_tot` (triplet)
    /// of the fixed-state model; zero-weight channels are omitted.
    pub fn from_params(params: &ModelParams) -> Vec<Self> {
        let (p, pt) = (params.p_total, params.p_tilde_vector());
        let mut v = Vec::with_capacity(2);
        if params.f < 1.0 {
            v.push(Self::point_mass(SpinChannel::Singlet, (1.0 - params.f) * params.n_tot, p, pt));
        }
        if params.f > 0.0 {
            v.push(Self::point_mass(SpinChannel::Triplet, params.f * params.n_tot, p, pt));
        }
        v
    }
}

// ---------------------------------------------------------------------------
// Sampling machinery

#[derive(Debug, Clone, Copy)]
struct Layout {
    direction: usize,
    axial: usize,
}

impl Layout {
    const INTENSITY_COR: Layout = Layout { direction: 1024, axial: 4 };
    const INTENSITY_UNCOR: Layout = Layout { direction: 32, axial: 128 };
    const AXIAL_ONLY: Layout = Layout { direction: 1, axial: 4096 };

    /// Shrink until every cell gets at least 8 samples.
    fn fit_budget(mut self, samples: usize) -> Self {
        while self.direction * self.axial * 8 > samples && self.direction * self.axial > 1 {
            if self.direction >= self.axial {
                self.direction = (self.direction / 2).max(1);
            } else {
                self.axial = (self.axial / 2).max(1);
            }
        }
        self
    }

    fn cells(&self) -> usize {
        self.direction * self.axial
    }
}

/// Disjoint RNG stream ranges per integral.
#[derive(Debug, Clone, Copy)]
enum Stream {
    Coincidence(usize),
    Accidental,
    Single,
    PairNorm,
}

impl Stream {
    fn base(self) -> u64 {
        match self {
            Stream::Coincidence(g) => (g as u64) << 32,
            Stream::Accidental => 1 << 60,
            Stream::Single => 2 << 60,
            Stream::PairNorm => 3 << 60,
        }
    }
}

/// Stratified estimate of `E[w]` where `w` is produced from two stratified
/// unit coordinates `(u_dir, u_axial)` and further free draws.
fn stratified<F>(spec: &QuadratureSpec, layout: Layout, stream: Stream, weight: F) -> Result<OracleResult>
where
    F: Fn(&mut ChaCha8Rng, f64, f64) -> f64 + Sync + Send,
{
    let layout = layout.fit_budget(spec.sample_count);
    let cells = layout.cells();
    let per_cell = (spec.sample_count / cells).max(2);
    let cell_stats = spec.exec.map_indexed(cells, |k| {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
        rng.set_stream(stream.base() + k as u64);
        let (kd, ka) = (k / layout.axial, k % layout.axial);
        let (mut mean, mut m2) = (0.0_f64, 0.0_f64);
        for i in 0..per_cell {
            let a: f64 = rng.sample(Open01);
            let b: f64 = rng.sample(Open01);
            let u_dir = (kd as f64 + a) / layout.direction as f64;
            let u_axial = (ka as f64 + b) / layout.axial as f64;
            let w = weight(&mut rng, u_dir, u_axial);
            let delta = w - mean;
            mean += delta / (i + 1) as f64;
            m2 += delta * (w - mean);
        }
        (mean, m2 / (per_cell - 1) as f64)
    });
    let (mut value, mut var) = (0.0, 0.0);
    for (mean, v) in cell_stats {
        value += mean;
        var += v / per_cell as f64;
    }
    let c = cells as f64;
    Ok(OracleResult {
        value: value / c,
        est_error: var.sqrt() / c,
        samples_used: per_cell * cells,
    })
}

/// Gaussian proposal with a distinguished axis: independent normals across
/// the axis (variance `var_perp`), a stratified quantile along it (variance
/// `var_axial`).
#[derive(Debug, Clone, Copy)]
struct AxialGaussian {
    axis: Momentum3,
    e1: Momentum3,
    e2: Momentum3,
    sd_perp: f64,
    sd_axial: f64,
    log_norm: f64,
}

impl AxialGaussian {
    fn new(axis: Momentum3, var_perp: f64, var_axial: f64) -> Self {
        let (e1, e2) = axis.orthonormal_complement();
        Self {
            axis,
            e1,
            e2,
            sd_perp: var_perp.sqrt(),
            sd_axial: var_axial.sqrt(),
            log_norm: -1.5 * (2.0 * PI).ln() - var_perp.ln() - 0.5 * var_axial.ln(),
        }
    }

    /// Offset from the proposal mean and its log density.
    fn draw(&self, rng: &mut ChaCha8Rng, u_axial: f64, std_normal: &Normal) -> (Momentum3, f64) {
        let g1: f64 = rng.sample(StandardNormal);
        let g2: f64 = rng.sample(StandardNormal);
        let ga = std_normal.inverse_cdf(u_axial);
        let offset = self.e1 * (g1 * self.sd_perp) + self.e2 * (g2 * self.sd_perp) + self.axis * (ga * self.sd_axial);
        let log_q = self.log_norm - 0.5 * (g1 * g1 + g2 * g2 + ga * ga);
        (offset, log_q)
    }
}

fn unit_axis(v: Momentum3) -> Momentum3 {
    let n = v.norm();
    if n > 0.0 {
        v * (1.0 / n)
    } else {
        RELATIVE_AXIS
    }
}

/// Direction on the unit sphere from a uniform direction cosine and an
/// azimuth draw.
fn direction(axis: Momentum3, e1: Momentum3, e2: Momentum3, u_dir: f64, rng: &mut ChaCha8Rng) -> Momentum3 {
    let c = 2.0 * u_dir - 1.0;
    let s = (1.0 - c * c).max(0.0).sqrt();
    let phi = 2.0 * PI * rng.random::<f64>();
    axis * c + e1 * (s * phi.cos()) + e2 * (s * phi.sin())
}

fn standard_normal() -> Normal {
    Normal::standard()
}

// ---------------------------------------------------------------------------
// Densities

/// `Φ(p₁, p₂) = N_tot ((1−f)|Ψ₀|² + f|Ψ₁|²)`.
pub fn phi_differential(p1: Momentum3, p2: Momentum3, params: &ModelParams) -> Result<f64> {
    let state = PairState::new(params)?;
    let mut v = 0.0;
    if params.f < 1.0 {
        v += (1.0 - params.f) * state.density(p1, p2, SpinChannel::Singlet, 0.0)?;
    }
    if params.f > 0.0 {
        v += params.f * state.density(p1, p2, SpinChannel::Triplet, 0.0)?;
    }
    Ok(params.n_tot * v)
}

/// Single-electron density `ρ(p)`, from the one-particle amplitudes after
/// the inner momentum integral is done analytically (the partner integrates
/// to the norms `1` and the overlap `J`).
pub fn marginal_density(p: Momentum3, params: &ModelParams) -> Result<f64> {
    let state = PairState::new(params)?;
    if params.f > 0.0 {
        state.check_channel(SpinChannel::Triplet)?;
    }
    Ok(marginal_with_state(&state, p, params.f, params.n_tot))
}

fn marginal_with_state(state: &PairState, p: Momentum3, f: f64, n_tot: f64) -> f64 {
    let l1 = state.log_amplitude(p, Branch::Plus, 0.0).log_mag;
    let l2 = state.log_amplitude(p, Branch::Minus, 0.0).log_mag;
    let (g1, g2) = ((2.0 * l1).exp(), (2.0 * l2).exp());
    let cross = 2.0 * state.overlap_sqr().sqrt() * (l1 + l2).exp();
    let mut v = 0.0;
    if f < 1.0 {
        v += (1.0 - f) * (g1 + g2 + cross) / (2.0 * state.channel_norm(SpinChannel::Singlet));
    }
    if f > 0.0 {
        v += f * (g1 + g2 - cross) / (2.0 * state.channel_norm(SpinChannel::Triplet));
    }
    n_tot * v
}

// ---------------------------------------------------------------------------
// Tensor quadrature

/// Uniform grid on `[lo, hi]` per axis, odd node count, spacing no larger
/// than `16σ/(nodes−1)`.
#[derive(Debug, Clone)]
struct TensorGrid {
    lo: [f64; 3],
    h: [f64; 3],
    n: [usize; 3],
}

impl TensorGrid {
    fn covering(centers: &[Momentum3], sigma: f64, nodes: usize) -> Self {
        let h0 = 16.0 * sigma / (nodes - 1) as f64;
        let mut lo = [0.0; 3];
        let mut h = [0.0; 3];
        let mut n = [0; 3];
        for axis in 0..3 {
            let comp = |m: &Momentum3| [m.x, m.y, m.z][axis];
            let min = centers.iter().map(comp).fold(f64::INFINITY, f64::min) - 8.0 * sigma;
            let max = centers.iter().map(comp).fold(f64::NEG_INFINITY, f64::max) + 8.0 * sigma;
            let mut count = (((max - min) / h0).ceil() as usize + 1).max(nodes);
            if count.is_multiple_of(2) {
                count += 1;
            }
            lo[axis] = min;
            n[axis] = count;
            h[axis] = (max - min) / (count - 1) as f64;
        }
        Self { lo, h, n }
    }

    /// Trapezoid sums on the full grid and on every other node.
    fn integrate<T, F>(&self, exec: Execution, f: F) -> (T, T)
    where
        T: Copy + Default + Send + std::ops::Add<Output = T> + std::ops::Mul<f64, Output = T>,
        F: Fn(Momentum3) -> T + Sync + Send,
    {
        let w = |i: usize, n: usize| if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
        let slabs = exec.map_indexed(self.n[0], |i| {
            let mut fine = T::default();
            let mut coarse = T::default();
            let x = self.lo[0] + self.h[0] * i as f64;
            for j in 0..self.n[1] {
                let y = self.lo[1] + self.h[1] * j as f64;
                for k in 0..self.n[2] {
                    let z = self.lo[2] + self.h[2] * k as f64;
                    let v = f(Momentum3::new(x, y, z));
                    let wf = w(i, self.n[0]) * w(j, self.n[1]) * w(k, self.n[2]);
                    fine = fine + v * wf;
                    if i % 2 == 0 && j % 2 == 0 && k % 2 == 0 {
                        let wc = w(i / 2, self.n[0] / 2 + 1)
                            * w(j / 2, self.n[1] / 2 + 1)
                            * w(k / 2, self.n[2] / 2 + 1);
                        coarse = coarse + v * wc;
                    }
                }
            }
            (fine, coarse)
        });
        let vol = self.h[0] * self.h[1] * self.h[2];
        let (fine, coarse) = slabs
            .into_iter()
            .fold((T::default(), T::default()), |(a, b), (c, d)| (a + c, b + d));
        (fine * vol, coarse * (8.0 * vol))
    }

    fn points(&self) -> usize {
        self.n.iter().product()
    }
}

fn tensor_result(fine: f64, coarse: f64, grid: &TensorGrid) -> OracleResult {
    OracleResult {
        value: fine,
        est_error: (fine - coarse).abs(),
        samples_used: grid.points(),
    }
}

fn require_tensor(spec: &QuadratureSpec) -> Result<()> {
    spec.validate()?;
    if spec.method != QuadratureMethod::TensorQuadrature {
        return Err(Error::InvalidSpec("this integral is evaluated by tensor quadrature only".into()));
    }
    Ok(())
}

/// `∫|φ(p, t)|² d³p`.
pub fn one_particle_norm(params: &ModelParams, branch: Branch, t: f64, spec: &QuadratureSpec) -> Result<OracleResult> {
    require_tensor(spec)?;
    let state = PairState::new(params)?;
    let grid = TensorGrid::covering(&[state.mean(branch)], params.sigma, spec.nodes_per_axis);
    let (fine, coarse) = grid.integrate(spec.exec, |p| {
        let a = state.log_amplitude(p, branch, t).to_complex();
        a.norm_sqr()
    });
    tensor_result(fine, coarse, &grid).check(spec)
}

/// `∫φ₁*(p, t) φ₂(p, t) d³p`, complex. `est_error` refers to the modulus.
pub fn overlap_integral(params: &ModelParams, t: f64, spec: &QuadratureSpec) -> Result<(Complex64, OracleResult)> {
    require_tensor(spec)?;
    let state = PairState::new(params)?;
    let grid = TensorGrid::covering(
        &[state.mean(Branch::Plus), state.mean(Branch::Minus)],
        params.sigma,
        spec.nodes_per_axis,
    );
    let (fine, coarse) = grid.integrate(spec.exec, |p| {
        let a = state.log_amplitude(p, Branch::Plus, t).to_complex();
        let b = state.log_amplitude(p, Branch::Minus, t).to_complex();
        a.conj() * b
    });
    let res = OracleResult {
        value: fine.norm(),
        est_error: (fine - coarse).norm(),
        samples_used: grid.points(),
    };
    Ok((fine, res.check(spec)?))
}

/// `∫∫|Ψ_S|² d³p₁ d³p₂`.
///
/// Tensor route: expand `|Ψ_S|²` into products of the one-particle
/// integrals `∫|φ₁|²`, `∫|φ₂|²`, `∫φ₁*φ₂` and integrate each on the grid.
/// Monte-Carlo route: sample centre-of-mass and relative momenta.
pub fn pair_normalization(params: &ModelParams, channel: SpinChannel, spec: &QuadratureSpec) -> Result<OracleResult> {
    spec.validate()?;
    let state = PairState::new(params)?;
    state.check_channel(channel)?;
    match spec.method {
        QuadratureMethod::TensorQuadrature => {
            let grid = TensorGrid::covering(
                &[state.mean(Branch::Plus), state.mean(Branch::Minus)],
                params.sigma,
                spec.nodes_per_axis,
            );
            let ((n11, n22, o12), (c11, c22, co12)) = {
                let (fine, coarse) = grid.integrate(spec.exec, |p| {
                    let a = state.log_amplitude(p, Branch::Plus, 0.0).to_complex();
                    let b = state.log_amplitude(p, Branch::Minus, 0.0).to_complex();
                    Triple(a.norm_sqr(), b.norm_sqr(), a.conj() * b)
                });
                ((fine.0, fine.1, fine.2), (coarse.0, coarse.1, coarse.2))
            };
            let combine = |n11: f64, n22: f64, o12: Complex64| {
                (2.0 * n11 * n22 + 2.0 * channel.sign() * o12.norm_sqr()) / (2.0 * state.channel_norm(channel))
            };
            let fine = combine(n11, n22, o12);
            let coarse = combine(c11, c22, co12);
            tensor_result(fine, coarse, &grid).check(spec)
        }
        QuadratureMethod::MonteCarlo => {
            let one = ModelParams { n_tot: 1.0, f: channel_f(channel), ..*params };
            pair_total_mc(&one, &state, spec)
        }
    }
}

fn channel_f(channel: SpinChannel) -> f64 {
    match channel {
        SpinChannel::Singlet => 0.0,
        SpinChannel::Triplet => 1.0,
    }
}

/// `∫∫Φ(p₁, p₂) d³p₁ d³p₂ = N_tot` by Monte-Carlo over pair space.
pub fn total_cross_section(params: &ModelParams, spec: &QuadratureSpec) -> Result<OracleResult> {
    spec.validate()?;
    let state = PairState::new(params)?;
    if params.f > 0.0 {
        state.check_channel(SpinChannel::Triplet)?;
    }
    pair_total_mc(params, &state, spec)
}

fn pair_total_mc(params: &ModelParams, state: &PairState, spec: &QuadratureSpec) -> Result<OracleResult> {
    let sigma = params.sigma;
    let var = sigma * sigma;
    let axis = unit_axis(params.p_tilde_vector());
    // K = p1 + p2 ~ N(P, 2σ²); k = p2 − p1 centred at 0 with the ±p̃ lobes
    // covered by the wider axial variance.
    let com = AxialGaussian::new(axis, 2.0 * var, 2.0 * var);
    let rel = AxialGaussian::new(axis, 2.0 * var, 2.0 * var + params.p_tilde * params.p_tilde);
    let normal = standard_normal();
    let f = params.f;
    let n_tot = params.n_tot;
    let p_total = params.p_total;
    let res = stratified(spec, Layout::AXIAL_ONLY, Stream::PairNorm, |rng, _u_dir, u_axial| {
        let u_com: f64 = rng.sample(Open01);
        let (dk, log_qk) = com.draw(rng, u_com, &normal);
        let (dr, log_qr) = rel.draw(rng, u_axial, &normal);
        let big_k = p_total + dk;
        let p1 = (big_k - dr) * 0.5;
        let p2 = (big_k + dr) * 0.5;
        let mut v = 0.0;
        if f < 1.0 {
            v += (1.0 - f) * state.density_unchecked(p1, p2, SpinChannel::Singlet, 0.0);
        }
        if f > 0.0 {
            v += f * state.density_unchecked(p1, p2, SpinChannel::Triplet, 0.0);
        }
        // dp1 dp2 = dK dk / 8
        n_tot * v / 8.0 * (-(log_qk + log_qr)).exp()
    })?;
    res.check(spec)
}

#[derive(Debug, Clone, Copy, Default)]
struct Triple(f64, f64, Complex64);

impl std::ops::Add for Triple {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Triple(self.0 + o.0, self.1 + o.1, self.2 + o.2)
    }
}

impl std::ops::Mul<f64> for Triple {
    type Output = Self;
    fn mul(self, k: f64) -> Self {
        Triple(self.0 * k, self.1 * k, self.2 * k)
    }
}

/// `∫ρ(p) d³p = N_tot`, by tensor quadrature of the analytic marginal.
pub fn marginal_total(params: &ModelParams, spec: &QuadratureSpec) -> Result<OracleResult> {
    require_tensor(spec)?;
    let state = PairState::new(params)?;
    if params.f > 0.0 {
        state.check_channel(SpinChannel::Triplet)?;
    }
    let grid = TensorGrid::covering(
        &[state.mean(Branch::Plus), state.mean(Branch::Minus)],
        params.sigma,
        spec.nodes_per_axis,
    );
    let (fine, coarse) = grid.integrate(spec.exec, |p| marginal_with_state(&state, p, params.f, params.n_tot));
    tensor_result(fine, coarse, &grid).check(spec)
}

/// `ρ(p) = ∫Φ(p, p′) d³p′`.
pub fn rho_single(p: Momentum3, params: &ModelParams, spec: &QuadratureSpec) -> Result<OracleResult> {
    spec.validate()?;
    let state = PairState::new(params)?;
    if params.f > 0.0 {
        state.check_channel(SpinChannel::Triplet)?;
    }
    let (f, n_tot) = (params.f, params.n_tot);
    let integrand = move |q: Momentum3| {
        let mut v = 0.0;
        if f < 1.0 {
            v += (1.0 - f) * state.density_unchecked(p, q, SpinChannel::Singlet, 0.0);
        }
        if f > 0.0 {
            v += f * state.density_unchecked(p, q, SpinChannel::Triplet, 0.0);
        }
        n_tot * v
    };
    match spec.method {
        QuadratureMethod::TensorQuadrature => {
            let grid = TensorGrid::covering(
                &[state.mean(Branch::Plus), state.mean(Branch::Minus)],
                params.sigma,
                spec.nodes_per_axis,
            );
            let (fine, coarse) = grid.integrate(spec.exec, integrand);
            tensor_result(fine, coarse, &grid).check(spec)
        }
        QuadratureMethod::MonteCarlo => {
            let var = params.sigma * params.sigma;
            let axis = unit_axis(params.p_tilde_vector());
            let prop = AxialGaussian::new(axis, var, var + 0.25 * params.p_tilde * params.p_tilde);
            let centre = params.p_total * 0.5;
            let normal = standard_normal();
            stratified(spec, Layout::AXIAL_ONLY, Stream::Single, |rng, _u, u_axial| {
                let (d, log_q) = prop.draw(rng, u_axial, &normal);
                integrand(centre + d) * (-log_q).exp()
            })?
            .check(spec)
        }
    }
}

// ---------------------------------------------------------------------------
// Intensities

fn require_mc(spec: &QuadratureSpec) -> Result<()> {
    spec.validate()?;
    if spec.method != QuadratureMethod::MonteCarlo {
        return Err(Error::InvalidSpec("the 5-D intensity integrals are Monte-Carlo only".into()));
    }
    Ok(())
}

fn check_delta_p(delta_p: f64) -> Result<()> {
    if !delta_p.is_finite() || delta_p < 0.0 {
        return Err(Error::Domain(format!("delta_p must be finite and >= 0, got {delta_p}")));
    }
    Ok(())
}

/// Coincidence intensity `(Δp)² ∫Φ(p₁, p₁ + Δp n) d³p₁ d²n` of the
/// fixed-state model.
pub fn intensity_cor_oracle(delta_p: f64, params: &ModelParams, spec: &QuadratureSpec) -> Result<OracleResult> {
    params.validate()?;
    general_channel_integral(&ChannelCrossSection::from_params(params), params.sigma, delta_p, spec)
}

/// Accidental intensity `(Δp)²/N_tot ∫ρ(p₁)ρ(p₁ + Δp n) d³p₁ d²n`.
pub fn intensity_uncor_oracle(delta_p: f64, params: &ModelParams, spec: &QuadratureSpec) -> Result<OracleResult> {
    require_mc(spec)?;
    check_delta_p(delta_p)?;
    let state = PairState::new(params)?;
    if params.f > 0.0 {
        state.check_channel(SpinChannel::Triplet)?;
    }
    if delta_p == 0.0 {
        return Ok(OracleResult::ZERO);
    }
    let var = params.sigma * params.sigma;
    let axis = unit_axis(params.p_tilde_vector());
    let (e1, e2) = axis.orthonormal_complement();
    let prop = AxialGaussian::new(axis, 0.5 * var, 0.5 * var + 0.25 * params.p_tilde * params.p_tilde);
    let half_total = params.p_total * 0.5;
    let (f, n_tot) = (params.f, params.n_tot);
    let scale = 4.0 * PI * delta_p * delta_p / n_tot;
    let normal = standard_normal();
    stratified(spec, Layout::INTENSITY_UNCOR, Stream::Accidental, |rng, u_dir, u_axial| {
        let n = direction(axis, e1, e2, u_dir, rng);
        let step = n * delta_p;
        let (d, log_q) = prop.draw(rng, u_axial, &normal);
        let p1 = half_total - step * 0.5 + d;
        let v = marginal_with_state(&state, p1, f, n_tot) * marginal_with_state(&state, p1 + step, f, n_tot);
        scale * v * (-log_q).exp()
    })?
    .check(spec)
}

/// `I_cor` for an arbitrary list of channel weights Θ_S; linear in the
/// list. Entries with identical shapes are integrated together on one
/// sample stream, so the fixed-state model goes through exactly this path.
pub fn general_channel_integral(
    theta: &[ChannelCrossSection],
    sigma: f64,
    delta_p: f64,
    spec: &QuadratureSpec,
) -> Result<OracleResult> {
    require_mc(spec)?;
    check_delta_p(delta_p)?;
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Domain(format!("sigma must be > 0, got {sigma}")));
    }
    let mut groups: Vec<(ThetaShape, Vec<(SpinChannel, f64)>)> = Vec::new();
    for entry in theta {
        if !(entry.weight >= 0.0 && entry.weight.is_finite()) {
            return Err(Error::Domain(format!("channel weight must be >= 0, got {}", entry.weight)));
        }
        if entry.channel == SpinChannel::Triplet && entry.weight > 0.0 {
            if let ThetaShape::PointMass { p_total, p_tilde } = entry.shape {
                PairState::from_vectors(sigma, p_total, p_tilde).check_channel(SpinChannel::Triplet)?;
            }
        }
        match groups.iter_mut().find(|(shape, _)| *shape == entry.shape) {
            Some((_, members)) => members.push((entry.channel, entry.weight)),
            None => groups.push((entry.shape, vec![(entry.channel, entry.weight)])),
        }
    }
    if delta_p == 0.0 || groups.is_empty() {
        return Ok(OracleResult::ZERO);
    }

    let mut total = OracleResult::ZERO;
    let mut var = 0.0;
    for (g, (shape, members)) in groups.iter().enumerate() {
        let r = coincidence_group(*shape, members, sigma, delta_p, spec, g)?;
        total.value += r.value;
        total.samples_used += r.samples_used;
        var += r.est_error * r.est_error;
    }
    total.est_error = var.sqrt();
    total.check(spec)
}

fn coincidence_group(
    shape: ThetaShape,
    members: &[(SpinChannel, f64)],
    sigma: f64,
    delta_p: f64,
    spec: &QuadratureSpec,
    group: usize,
) -> Result<OracleResult> {
    let var = sigma * sigma;
    let scale = 4.0 * PI * delta_p * delta_p;
    let normal = standard_normal();
    // Given n, every term of |Ψ|² at (p₁, p₁ + Δ) is a Gaussian in p₁ with
    // mean (P − Δ)/2 and variance σ²/2 per axis.
    let pair_weight = |state: &PairState, axis: Momentum3, p_total: Momentum3, rng: &mut ChaCha8Rng, u_dir: f64, u_axial: f64| {
        let (e1, e2) = axis.orthonormal_complement();
        let n = direction(axis, e1, e2, u_dir, rng);
        let step = n * delta_p;
        let prop = AxialGaussian::new(axis, 0.5 * var, 0.5 * var);
        let (d, log_q) = prop.draw(rng, u_axial, &normal);
        let p1 = (p_total - step) * 0.5 + d;
        let p2 = p1 + step;
        let v: f64 = members
            .iter()
            .map(|&(ch, w)| w * state.density_unchecked(p1, p2, ch, 0.0))
            .sum();
        scale * v * (-log_q).exp()
    };
    match shape {
        ThetaShape::PointMass { p_total, p_tilde } => {
            let state = PairState::from_vectors(sigma, p_total, p_tilde);
            let axis = unit_axis(p_tilde);
            stratified(spec, Layout::INTENSITY_COR, Stream::Coincidence(group), |rng, u_dir, u_axial| {
                pair_weight(&state, axis, p_total, rng, u_dir, u_axial)
            })
        }
        ThetaShape::Gaussian {
            p_total,
            p_tilde_mean,
            width,
        } => {
            if !(width >= 0.0 && width.is_finite()) {
                return Err(Error::Domain(format!("theta width must be >= 0, got {width}")));
            }
            stratified(spec, Layout::INTENSITY_COR, Stream::Coincidence(group), |rng, u_dir, u_axial| {
                let jitter = Momentum3::new(
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                );
                let p_tilde = p_tilde_mean + jitter * width;
                let state = PairState::from_vectors(sigma, p_total, p_tilde);
                pair_weight(&state, unit_axis(p_tilde), p_total, rng, u_dir, u_axial)
            })
        }
    }
}

/// `R = I_cor/I_uncor − 1` from the two oracle integrals, with first-order
/// error propagation.
pub fn correlation_r_oracle(delta_p: f64, params: &ModelParams, spec: &QuadratureSpec) -> Result<OracleResult> {
    let cor = intensity_cor_oracle(delta_p, params, spec)?;
    let uncor = intensity_uncor_oracle(delta_p, params, spec)?;
    if uncor.value == 0.0 {
        return Err(Error::Domain("R is undefined where both intensities vanish".into()));
    }
    let ratio = cor.value / uncor.value;
    Ok(OracleResult {
        value: ratio - 1.0,
        est_error: ratio.abs() * (cor.rel_error().powi(2) + uncor.rel_error().powi(2)).sqrt(),
        samples_used: cor.samples_used + uncor.samples_used,
    })
}
