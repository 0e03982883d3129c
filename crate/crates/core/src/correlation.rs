//! Closed-form coincidence / accidental intensities and the correlation
//! function `R(Δp) = I_cor/I_uncor − 1`.
//!
//! Everything is evaluated in the reduced variables `x = Δp/(2σ)`,
//! `y = p̃/(2σ)`, `z = 2xy`. The shared prefactor `(Δp)² e^{-x²}` cancels in
//! `R`, so `R` is formed from the bracketed channel factors alone.
//!
//! The accidental intensity is
//!
//! ```text
//! I_uncor = N_tot (Δp)² e^{-x²} / (4√π σ³) · (A + B + C)
//! ```
//!
//! with the usual singlet/triplet/interference terms `A`, `B`, `C`. It
//! carries no overall `J²`; that is what integrating the single-electron
//! densities gives (see the oracle module and its tests).

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::exec::Execution;
use crate::model::{ModelParams, TRIPLET_DEGENERACY};
use crate::special::{
    exp_group, gaussian_sinhc, gaussian_weighted_sinhc, half_sinh_ratio, inv_sinhc,
    one_minus_j2, sinhc, sinhc_group, sinhc_m1, SCALED_Z,
};

/// Relative-momentum scale `z = p̃Δp/(2σ²)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct ZParam(f64);

impl ZParam {
    pub fn new(delta_p: f64, p_tilde: f64, sigma: f64) -> Result<Self> {
        if !(delta_p >= 0.0 && p_tilde >= 0.0 && sigma > 0.0) {
            return Err(Error::Domain(format!(
                "z needs delta_p >= 0, p_tilde >= 0, sigma > 0 (got {delta_p}, {p_tilde}, {sigma})"
            )));
        }
        Ok(Self(p_tilde * delta_p / (2.0 * sigma * sigma)))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntensityPair {
    pub i_cor: f64,
    pub i_uncor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationCurve {
    pub delta_p: Vec<f64>,
    pub r: Vec<f64>,
    pub params: ModelParams,
}

impl CorrelationCurve {
    pub fn len(&self) -> usize {
        self.delta_p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delta_p.is_empty()
    }
}

/// Bracketed channel factors of the two intensities. When `scaled` is set
/// both are divided by `sinh z / z`.
#[derive(Debug, Clone, Copy)]
struct Factors {
    cor: f64,
    uncor: f64,
    scaled: bool,
}

#[derive(Debug, Clone, Copy)]
struct Reduced {
    x: f64,
    y: f64,
    f: f64,
}

impl Reduced {
    fn new(delta_p: f64, params: &ModelParams) -> Result<Self> {
        params.validate()?;
        ensure_finite("delta_p", delta_p)?;
        if delta_p < 0.0 {
            return Err(Error::Domain(format!("delta_p must be >= 0, got {delta_p}")));
        }
        let two_sigma = 2.0 * params.sigma;
        Ok(Self {
            x: delta_p / two_sigma,
            y: params.p_tilde / two_sigma,
            f: params.f,
        })
    }

    fn z(&self) -> f64 {
        2.0 * self.x * self.y
    }

    fn j2(&self) -> f64 {
        (-self.y * self.y).exp()
    }

    /// `J⁴` and `J^{5/2}`.
    fn j4_j52(&self) -> (f64, f64) {
        let y2 = self.y * self.y;
        ((-2.0 * y2).exp(), (-1.25 * y2).exp())
    }

    /// Small-p̃ path: triplet terms by their series in `y²` at fixed `x`.
    fn use_series(&self) -> bool {
        self.f > 0.0 && 2.0 * self.y < TRIPLET_DEGENERACY && self.x * self.y < 1e-3
    }
}

/// Triplet factors `(s−1)/(1−J²)`, `N_B/(1−J²)²`, `N_C/(1−J²)` to second
/// order in `y²`.
fn triplet_series(x: f64, y: f64) -> (f64, f64, f64) {
    let (x2, y2) = (x * x, y * y);
    let (x4, x6, x8) = (x2 * x2, x2 * x2 * x2, x2 * x2 * x2 * x2);
    let t1 = 2.0 * x2 / 3.0
        + (2.0 * x4 / 15.0 + x2 / 3.0) * y2
        + (4.0 * x6 / 315.0 + x4 / 15.0 + x2 / 18.0) * y2 * y2;
    let tb = (x4 / 10.0 + x2 / 6.0 + 11.0 / 8.0)
        + (x6 / 84.0 + x4 / 120.0 - x2 / 48.0 - 5.0 / 32.0) * y2
        + (x8 / 1440.0 + x6 / 5040.0 - 3.0 * x4 / 320.0 - 7.0 * x2 / 576.0 + 5.0 / 512.0)
            * y2
            * y2;
    let tc = (2.0 * x2 / 3.0 + 3.0)
        + (2.0 * x4 / 15.0 - x2 / 3.0 - 2.0) * y2
        + (4.0 * x6 / 315.0 - x4 / 15.0 + x2 / 18.0 + 1.0) * y2 * y2;
    (t1, tb, tc)
}

/// Singlet numerator `N_A = 1 + 2J⁴ + J² s + 8J^{5/2} sinh(z/2)/z`.
fn singlet_numerator(r: &Reduced) -> f64 {
    let z = r.z();
    let (j4, j52) = r.j4_j52();
    1.0 + 2.0 * j4 + r.j2() * sinhc(z) + 4.0 * j52 * sinhc(0.5 * z)
}

/// Triplet numerator `N_B = 1 + 2J⁴ + J² s − 8J^{5/2} sinh(z/2)/z` as a sum
/// of nonnegative groups.
fn triplet_numerator(r: &Reduced) -> f64 {
    let z = r.z();
    let y2 = r.y * r.y;
    exp_group(y2) + sinhc_group(z) + (-y2).exp_m1() * sinhc_m1(z)
        - 4.0 * (-1.25 * y2).exp_m1() * sinhc_m1(0.5 * z)
}

/// Interference numerator `N_C = 1 − 2J⁴ + J² s`.
fn interference_numerator(r: &Reduced) -> f64 {
    let y2 = r.y * r.y;
    (-2.0 * (-2.0 * y2).exp_m1() + (-y2).exp_m1()) + r.j2() * sinhc_m1(r.z())
}

fn factors(r: &Reduced) -> Factors {
    let z = r.z();
    let j2 = r.j2();
    let alpha = (1.0 - r.f) / (1.0 + j2);
    let f = r.f;

    if r.use_series() {
        let (t1, tb, tc) = triplet_series(r.x, r.y);
        let s = sinhc(z);
        return Factors {
            cor: alpha * (s + 1.0) + f * t1,
            uncor: alpha * alpha * singlet_numerator(r) + f * f * tb + 2.0 * alpha * f * tc,
            scaled: false,
        };
    }

    if z <= SCALED_Z {
        let s = sinhc(z);
        let mut cor = alpha * (s + 1.0);
        let mut uncor = alpha * alpha * singlet_numerator(r);
        if f > 0.0 {
            let omj = one_minus_j2(r.y);
            cor += f * sinhc_m1(z) / omj;
            uncor += f * f * triplet_numerator(r) / (omj * omj)
                + 2.0 * alpha * f * interference_numerator(r) / omj;
        }
        return Factors {
            cor,
            uncor,
            scaled: false,
        };
    }

    // Divide through by s = sinh z / z.
    let inv = inv_sinhc(z);
    let half = 8.0 * r.j4_j52().1 * half_sinh_ratio(z);
    let j4 = r.j4_j52().0;
    let base = (1.0 + 2.0 * j4) * inv + j2;
    let mut cor = alpha * (1.0 + inv);
    let mut uncor = alpha * alpha * (base + half);
    if f > 0.0 {
        let beta = f / one_minus_j2(r.y);
        cor += beta * (1.0 - inv);
        uncor += beta * beta * (base - half) + 2.0 * alpha * beta * ((1.0 - 2.0 * j4) * inv + j2);
    }
    Factors {
        cor,
        uncor,
        scaled: true,
    }
}

fn prefactor(params: &ModelParams, delta_p: f64) -> f64 {
    params.n_tot * delta_p * delta_p
        / (std::f64::consts::PI.sqrt() * params.sigma.powi(3))
}

/// Coincidence intensity: pairs from the same ionization event at momentum
/// difference `delta_p`.
pub fn intensity_cor(delta_p: f64, params: &ModelParams) -> Result<f64> {
    let r = Reduced::new(delta_p, params)?;
    if delta_p == 0.0 {
        return Ok(0.0);
    }
    let fac = factors(&r);
    let envelope = if fac.scaled {
        gaussian_weighted_sinhc(r.x, r.y)
    } else {
        (-(r.x * r.x) - r.y * r.y).exp()
    };
    Ok(prefactor(params, delta_p) / 2.0 * envelope * fac.cor)
}

/// Accidental intensity: pairs built from independent single-electron
/// densities (event mixing).
pub fn intensity_uncor(delta_p: f64, params: &ModelParams) -> Result<f64> {
    let r = Reduced::new(delta_p, params)?;
    if delta_p == 0.0 {
        return Ok(0.0);
    }
    let fac = factors(&r);
    let envelope = if fac.scaled {
        gaussian_sinhc(r.x, r.y)
    } else {
        (-(r.x * r.x)).exp()
    };
    Ok(prefactor(params, delta_p) / 4.0 * envelope * fac.uncor)
}

pub fn intensities(delta_p: f64, params: &ModelParams) -> Result<IntensityPair> {
    Ok(IntensityPair {
        i_cor: intensity_cor(delta_p, params)?,
        i_uncor: intensity_uncor(delta_p, params)?,
    })
}

/// `R(Δp)` for the singlet/triplet mixture. At `Δp = 0` this is the
/// analytic limit.
pub fn correlation_r(delta_p: f64, params: &ModelParams) -> Result<f64> {
    let r = Reduced::new(delta_p, params)?;
    let fac = factors(&r);
    Ok(2.0 * r.j2() * fac.cor / fac.uncor - 1.0)
}

/// Pure singlet channel.
pub fn correlation_r0(delta_p: f64, p_tilde: f64, sigma: f64) -> Result<f64> {
    let r = Reduced::new(delta_p, &ModelParams::new(sigma, 0.0, p_tilde))?;
    let z = r.z();
    let j2 = r.j2();
    if z <= SCALED_Z {
        Ok(2.0 * j2 * (sinhc(z) + 1.0) * (1.0 + j2) / singlet_numerator(&r) - 1.0)
    } else {
        let inv = inv_sinhc(z);
        let (j4, j52) = r.j4_j52();
        let den = (1.0 + 2.0 * j4) * inv + j2 + 8.0 * j52 * half_sinh_ratio(z);
        Ok(2.0 * j2 * (1.0 + inv) * (1.0 + j2) / den - 1.0)
    }
}

/// Pure triplet channel. Fails when the antisymmetric state degenerates
/// (`p̃/σ` below the degeneracy threshold).
pub fn correlation_r1(delta_p: f64, p_tilde: f64, sigma: f64) -> Result<f64> {
    let params = ModelParams::new(sigma, 1.0, p_tilde);
    let r = Reduced::new(delta_p, &params)?;
    if params.triplet_is_degenerate() {
        return Err(Error::DegenerateChannel {
            ratio: p_tilde / sigma,
            threshold: TRIPLET_DEGENERACY,
        });
    }
    let z = r.z();
    let j2 = r.j2();
    let omj = one_minus_j2(r.y);
    if z <= SCALED_Z {
        Ok(2.0 * j2 * sinhc_m1(z) * omj / triplet_numerator(&r) - 1.0)
    } else {
        let inv = inv_sinhc(z);
        let (j4, j52) = r.j4_j52();
        let den = (1.0 + 2.0 * j4) * inv + j2 - 8.0 * j52 * half_sinh_ratio(z);
        Ok(2.0 * j2 * (1.0 - inv) * omj / den - 1.0)
    }
}

/// Evaluate `R` on an ascending grid of positive `Δp` values.
pub fn curve(params: &ModelParams, grid: &[f64], exec: Execution) -> Result<CorrelationCurve> {
    params.validate()?;
    for (i, w) in grid.windows(2).enumerate() {
        if w[1] <= w[0] {
            return Err(Error::GridPoint {
                index: i + 1,
                source: Box::new(Error::Domain("grid must be strictly ascending".into())),
            });
        }
    }
    let values = exec.map_slice(grid, |&dp| {
        if dp > 0.0 {
            correlation_r(dp, params)
        } else {
            Err(Error::Domain(format!("grid values must be > 0, got {dp}")))
        }
    });
    let mut r = Vec::with_capacity(grid.len());
    for (index, v) in values.into_iter().enumerate() {
        r.push(v.map_err(|e| Error::GridPoint {
            index,
            source: Box::new(e),
        })?);
    }
    Ok(CorrelationCurve {
        delta_p: grid.to_vec(),
        r,
        params: *params,
    })
}

/// `count` evenly spaced points on `[min, max]`.
pub fn linear_grid(min: f64, max: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![min],
        _ => {
            let step = (max - min) / (count - 1) as f64;
            (0..count).map(|i| min + step * i as f64).collect()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Negative,
    Positive,
}

/// Collapse a sampled curve into its sequence of sign runs. Exact zeros
/// are skipped.
pub fn sign_runs(values: &[f64]) -> Vec<Sign> {
    let mut runs: Vec<Sign> = Vec::new();
    for &v in values {
        let s = if v > 0.0 {
            Sign::Positive
        } else if v < 0.0 {
            Sign::Negative
        } else {
            continue;
        };
        if runs.last() != Some(&s) {
            runs.push(s);
        }
    }
    runs
}

/// Location and value of the largest `R` on `[lo, hi]`: best point of an
/// `n`-point grid, refined by golden-section search on the neighbouring
/// interval.
pub fn locate_maximum(params: &ModelParams, lo: f64, hi: f64, n: usize) -> Result<(f64, f64)> {
    if !(hi > lo && lo > 0.0) || n < 3 {
        return Err(Error::Domain("maximum search needs 0 < lo < hi and n >= 3".into()));
    }
    let grid = linear_grid(lo, hi, n);
    let c = curve(params, &grid, Execution::Sequential)?;
    let best = (0..n)
        .max_by(|&a, &b| c.r[a].total_cmp(&c.r[b]))
        .expect("non-empty grid");
    let mut a = grid[best.saturating_sub(1)];
    let mut b = grid[(best + 1).min(n - 1)];
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let eval = |dp: f64| correlation_r(dp, params);
    let mut c1 = b - g * (b - a);
    let mut c2 = a + g * (b - a);
    let (mut f1, mut f2) = (eval(c1)?, eval(c2)?);
    while (b - a) > 1e-12 * b {
        if f1 > f2 {
            b = c2;
            c2 = c1;
            f2 = f1;
            c1 = b - g * (b - a);
            f1 = eval(c1)?;
        } else {
            a = c1;
            c1 = c2;
            f1 = f2;
            c2 = a + g * (b - a);
            f2 = eval(c2)?;
        }
    }
    let x = 0.5 * (a + b);
    Ok((x, eval(x)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const SQRT_PI: f64 = 1.772_453_850_905_516;

    #[test]
    fn intensities_vanish_at_zero_separation() {
        let p = ModelParams::new(0.5, 0.5, 0.5);
        assert_eq!(intensity_cor(0.0, &p).unwrap(), 0.0);
        assert_eq!(intensity_uncor(0.0, &p).unwrap(), 0.0);
        assert!(intensity_cor(-0.1, &p).is_err());
        assert!(intensity_uncor(-0.1, &p).is_err());
        assert!(correlation_r(-0.1, &p).is_err());
    }

    #[test]
    fn product_state_intensities() {
        let sigma = 0.3;
        let p = ModelParams::new(sigma, 0.0, 0.0).with_n_tot(2.5);
        for &dp in &[0.1, 0.6, 1.7] {
            let expected = 2.5 * dp * dp * (-dp * dp / (4.0 * sigma * sigma)).exp()
                / (2.0 * SQRT_PI * sigma.powi(3));
            assert_relative_eq!(intensity_cor(dp, &p).unwrap(), expected, max_relative = 1e-14);
            assert_relative_eq!(intensity_uncor(dp, &p).unwrap(), expected, max_relative = 1e-14);
            assert_eq!(correlation_r(dp, &p).unwrap(), 0.0);
        }
    }

    #[test]
    fn singlet_at_half_overlap_zero_separation() {
        // J = 1/2, Δp → 0. Reference from a 50-digit evaluation of the
        // integrated pair and single densities.
        let sigma = 0.4;
        let p_tilde = (8.0 * sigma * sigma * 2f64.ln()).sqrt();
        let r0 = correlation_r0(0.0, p_tilde, sigma).unwrap();
        assert_relative_eq!(r0, -0.399_646_544_886_784_3, max_relative = 1e-13);
        assert_relative_eq!(correlation_r0(1e-9, p_tilde, sigma).unwrap(), r0, max_relative = 1e-12);
    }

    #[test]
    fn triplet_tends_to_minus_one_at_zero() {
        for &(pt, s) in &[(0.1, 0.5), (1.0, 0.5), (3.0, 1.0)] {
            assert_eq!(correlation_r1(0.0, pt, s).unwrap(), -1.0);
            assert!((correlation_r1(1e-6, pt, s).unwrap() + 1.0).abs() < 1e-10);
        }
        assert!(matches!(
            correlation_r1(1.0, 1e-8, 0.5),
            Err(Error::DegenerateChannel { .. })
        ));
    }

    #[test]
    fn mixture_at_degenerate_p_tilde_uses_the_limit() {
        let p = ModelParams::new(0.5, 1.0, 0.0);
        let v = correlation_r(1.0, &p).unwrap();
        // x = 1: (2/3) / (11/8 + 1/6 + 1/10) · 2 − 1
        let expected = 2.0 * (2.0 / 3.0) / (11.0 / 8.0 + 1.0 / 6.0 + 1.0 / 10.0) - 1.0;
        assert_relative_eq!(v, expected, max_relative = 1e-14);
        assert!(intensity_cor(1.0, &p).unwrap() > 0.0);
    }

    #[test]
    fn series_and_direct_paths_meet() {
        // Just above the series cutoff the direct path takes over; both are
        // accurate there.
        for &f in &[0.3, 1.0] {
            let below = ModelParams::new(1.0, f, 0.99e-6);
            let above = ModelParams::new(1.0, f, 1.01e-6);
            for &dp in &[0.01, 0.5, 2.0, 10.0] {
                let a = correlation_r(dp, &below).unwrap();
                let b = correlation_r(dp, &above).unwrap();
                assert!((a - b).abs() < 1e-10, "f={f} dp={dp}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn scaled_and_unscaled_paths_meet() {
        let sigma = 0.5;
        let pt = 1.0;
        // z = 20 exactly at Δp = 10σ² / p̃ · 2
        let dp = SCALED_Z * 2.0 * sigma * sigma / pt;
        for &f in &[0.0, 0.4, 1.0] {
            let p = ModelParams::new(sigma, f, pt);
            let a = correlation_r(dp * (1.0 - 1e-9), &p).unwrap();
            let b = correlation_r(dp * (1.0 + 1e-9), &p).unwrap();
            assert!((a - b).abs() < 1e-8, "f={f}");
            let ia = intensity_uncor(dp * (1.0 - 1e-9), &p).unwrap();
            let ib = intensity_uncor(dp * (1.0 + 1e-9), &p).unwrap();
            assert_relative_eq!(ia, ib, max_relative = 1e-7);
        }
        let a = correlation_r0(dp * (1.0 - 1e-9), pt, sigma).unwrap();
        let b = correlation_r0(dp * (1.0 + 1e-9), pt, sigma).unwrap();
        assert!((a - b).abs() < 1e-8);
        let a = correlation_r1(dp * (1.0 - 1e-9), pt, sigma).unwrap();
        let b = correlation_r1(dp * (1.0 + 1e-9), pt, sigma).unwrap();
        assert!((a - b).abs() < 1e-8);
    }

    #[test]
    fn huge_z_stays_finite() {
        let p = ModelParams::new(0.2, 0.5, 3.0);
        for &dp in &[20.0, 50.0, 200.0] {
            let r = correlation_r(dp, &p).unwrap();
            assert!(r.is_finite() && r >= -1.0);
        }
        // intensities underflow to zero long before they could overflow
        assert!(intensity_cor(50.0, &p).unwrap().is_finite());
    }

    #[test]
    fn curve_contract() {
        let p = ModelParams::new(0.22, 0.5, 0.022);
        let c = curve(&p, &[], Execution::Sequential).unwrap();
        assert!(c.is_empty());
        let err = curve(&p, &[0.1, 0.3, 0.2], Execution::Sequential).unwrap_err();
        assert!(matches!(err, Error::GridPoint { index: 2, .. }));
        let err = curve(&p, &[0.0, 0.3], Execution::Sequential).unwrap_err();
        assert!(matches!(err, Error::GridPoint { index: 0, .. }));
        let grid = linear_grid(0.05, 10.0, 200);
        let seq = curve(&p, &grid, Execution::Sequential).unwrap();
        let par = curve(&p, &grid, Execution::Parallel).unwrap();
        assert_eq!(seq, par);
        assert!(seq.r.iter().all(|&r| r >= -1.0));
    }

    #[test]
    fn sign_runs_collapse() {
        use Sign::*;
        assert_eq!(sign_runs(&[-1.0, -0.5, 0.0, 0.2, 0.1, -0.3]), vec![Negative, Positive, Negative]);
        assert!(sign_runs(&[0.0, 0.0]).is_empty());
    }

    proptest! {
        #[test]
        fn r_is_bounded_below(
            sigma in 0.05f64..2.0,
            ratio in 0.0f64..6.0,
            f in 0.0f64..=1.0,
            xdp in 0.0f64..40.0,
        ) {
            let p = ModelParams::new(sigma, f, ratio * sigma);
            let r = correlation_r(xdp * sigma, &p).unwrap();
            prop_assert!(r.is_finite());
            prop_assert!(r >= -1.0);
        }

        #[test]
        fn intensities_nonnegative_and_linear_in_n_tot(
            sigma in 0.1f64..2.0,
            ratio in 0.01f64..4.0,
            f in 0.0f64..=1.0,
            xdp in 0.01f64..10.0,
        ) {
            let p = ModelParams::new(sigma, f, ratio * sigma);
            let q = p.with_n_tot(7.0);
            let dp = xdp * sigma;
            let a = intensities(dp, &p).unwrap();
            let b = intensities(dp, &q).unwrap();
            prop_assert!(a.i_cor >= 0.0 && a.i_uncor >= 0.0);
            prop_assert!((b.i_cor - 7.0 * a.i_cor).abs() <= 1e-13 * b.i_cor);
            prop_assert!((b.i_uncor - 7.0 * a.i_uncor).abs() <= 1e-13 * b.i_uncor);
            // R from the intensities agrees with the cancelled form
            let r = correlation_r(dp, &p).unwrap();
            if a.i_uncor > 1e-280 {
                prop_assert!((a.i_cor / a.i_uncor - 1.0 - r).abs() <= 1e-11 * (1.0 + r.abs()));
            }
        }
    }
}
