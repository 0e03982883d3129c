//! Cancellation- and overflow-safe pieces of the correlation closed forms.
//!
//! Notation shared with `correlation`: `x = Δp/(2σ)`, `y = p̃/(2σ)`,
//! `z = 2xy = p̃Δp/(2σ²)`, so that `J² = e^{-y²}`.

/// Above this `z` the closed forms switch to representations scaled by
/// `1/(sinh z / z)`.
pub const SCALED_Z: f64 = 20.0;

/// `sinh(z)/z` for `z >= 0`; `+inf` once the value overflows.
pub fn sinhc(z: f64) -> f64 {
    1.0 + sinhc_m1(z)
}

/// `sinh(z)/z - 1`, accurate near zero.
pub fn sinhc_m1(z: f64) -> f64 {
    let z = z.abs();
    if z < 1.0 {
        let z2 = z * z;
        let mut term = z2 / 6.0;
        let mut sum = term;
        let mut k = 1.0;
        while term > sum * 1e-18 {
            k += 1.0;
            term *= z2 / ((2.0 * k) * (2.0 * k + 1.0));
            sum += term;
        }
        sum
    } else if z < 700.0 {
        z.sinh() / z - 1.0
    } else {
        (z - (2.0 * z).ln()).exp() - 1.0
    }
}

/// `z / sinh(z)`, finite for all `z >= 0`.
pub fn inv_sinhc(z: f64) -> f64 {
    if z < 1.0 {
        1.0 / sinhc(z)
    } else {
        2.0 * z * (-z).exp() / -(-2.0 * z).exp_m1()
    }
}

/// `sinh(z/2) / sinh(z) = 1 / (2 cosh(z/2))`, finite for all `z >= 0`.
pub fn half_sinh_ratio(z: f64) -> f64 {
    let e = (-0.5 * z).exp();
    e / (1.0 + e * e)
}

/// `1 - J² = 1 - e^{-y²}`.
pub fn one_minus_j2(y: f64) -> f64 {
    -(-y * y).exp_m1()
}

/// `2(e^{-2a}-1) + (e^{-a}-1) - 4(e^{-5a/4}-1)` with `a = y²`. Its Taylor
/// series starts at `11a²/8`; the linear terms cancel exactly.
pub fn exp_group(a: f64) -> f64 {
    if a < 0.5 {
        let mut sum = 0.0;
        let mut pow = 1.0; // (-a)^k / k!
        let (mut p2, mut p54) = (2.0_f64, 1.25_f64);
        pow *= -a;
        for k in 2..60 {
            pow *= -a / k as f64;
            p2 *= 2.0;
            p54 *= 1.25;
            let term = pow * (2.0 * p2 + 1.0 - 4.0 * p54);
            sum += term;
            if term.abs() <= sum.abs() * 1e-18 {
                break;
            }
        }
        sum
    } else {
        2.0 * (-2.0 * a).exp_m1() + (-a).exp_m1() - 4.0 * (-1.25 * a).exp_m1()
    }
}

/// `sinhc_m1(z) - 4 sinhc_m1(z/2)`, nonnegative, `O(z⁴)` near zero.
pub fn sinhc_group(z: f64) -> f64 {
    if z < 2.0 {
        let z2 = z * z;
        // z^{2k}/(2k+1)! for k = 1
        let mut term = z2 / 6.0;
        let mut quarter = 1.0; // 4^{1-k}
        let mut sum = 0.0;
        for k in 2..60 {
            let kf = k as f64;
            term *= z2 / ((2.0 * kf) * (2.0 * kf + 1.0));
            quarter *= 0.25;
            let t = term * (1.0 - quarter);
            sum += t;
            if t <= sum * 1e-18 {
                break;
            }
        }
        sum
    } else {
        sinhc_m1(z) - 4.0 * sinhc_m1(0.5 * z)
    }
}

/// `e^{-x²} J² sinh(z)/z` evaluated through the exponent-combined identity
/// `[e^{-(x-y)²} - e^{-(x+y)²}] / (2z)`, so it stays finite where `sinh z`
/// alone overflows.
pub fn gaussian_weighted_sinhc(x: f64, y: f64) -> f64 {
    let z = 2.0 * x * y;
    if z < 1.0 {
        (-(x * x) - y * y).exp() * sinhc(z)
    } else {
        let d = x - y;
        (-(d * d)).exp() * -(-2.0 * z).exp_m1() / (2.0 * z)
    }
}

/// `e^{-x²} sinh(z)/z` in the same exponent-combined form.
pub fn gaussian_sinhc(x: f64, y: f64) -> f64 {
    let z = 2.0 * x * y;
    if z < 1.0 {
        (-(x * x)).exp() * sinhc(z)
    } else {
        let d = x - y;
        (-(d * d) + y * y - (2.0 * z).ln()).exp() * -(-2.0 * z).exp_m1()
    }
}
