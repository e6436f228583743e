//! Real-argument Bessel and Hankel functions of integer order.
//!
//! Orders 0 and 1 use rational approximations on `(0, 2)` and fitted
//! asymptotic modulus/phase corrections on `[2, ∞)`; the corrections switch
//! to their pure large-argument fit at `x = 8`. Higher orders come from
//! three-term recurrence (Miller's backward scheme for `J` when `x` is small
//! compared to the order).

mod coeffs;

use std::f64::consts::{FRAC_2_PI, PI};

use num_complex::Complex64;

use crate::error::{Error, Result};
use coeffs::{AsymptoticFit, ORDER0_FITS, ORDER1_FITS};

/// Below this argument the small-x rational forms are used.
pub const SERIES_SWITCH: f64 = 2.0;

const INV_SQRT_PI: f64 = 5.641_895_835_477_563e-1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BesselKind {
    /// First kind, `J`.
    J,
    /// Second kind, `Y` (Neumann).
    Y,
}

/// Checked entry point: `J_order(x)` or `Y_order(x)` for order 0 or 1.
pub fn bessel(kind: BesselKind, order: u32, x: f64) -> Result<f64> {
    if x.is_nan() {
        return Err(Error::Domain { what: "bessel argument is NaN", value: x });
    }
    match kind {
        BesselKind::J if x < 0.0 => {
            Err(Error::Domain { what: "J requires x >= 0", value: x })
        }
        BesselKind::Y if x <= 0.0 => {
            Err(Error::Domain { what: "Y requires x > 0", value: x })
        }
        _ => match (kind, order) {
            (BesselKind::J, 0) => Ok(j0(x)),
            (BesselKind::J, 1) => Ok(j1(x)),
            (BesselKind::Y, 0) => Ok(y0(x)),
            (BesselKind::Y, 1) => Ok(y1(x)),
            _ => Err(Error::Domain { what: "only orders 0 and 1 are provided", value: order as f64 }),
        },
    }
}

/// Hankel function of the second kind, `H_n^(2)(x) = J_n(x) - j Y_n(x)`.
pub fn hankel2(order: u32, x: f64) -> Result<Complex64> {
    if !(x > 0.0) {
        return Err(Error::Domain { what: "hankel2 requires x > 0", value: x });
    }
    let j = bessel(BesselKind::J, order, x)?;
    let y = bessel(BesselKind::Y, order, x)?;
    Ok(Complex64::new(j, -y))
}

/// Unchecked `H_0^(2)(x)` for hot loops; callers guarantee `x > 0`.
#[inline]
pub fn h0_2(x: f64) -> Complex64 {
    if x < SERIES_SWITCH {
        Complex64::new(j0(x), -y0(x))
    } else {
        let (p, q) = modulus_phase(&ORDER0_FITS, x, -0.125);
        let (s, c) = x.sin_cos();
        let scale = INV_SQRT_PI / x.sqrt();
        // cos(x - pi/4), sin(x - pi/4) times sqrt(2)
        let cp = c + s;
        let sp = s - c;
        Complex64::new(scale * (p * cp - q * sp), -scale * (p * sp + q * cp))
    }
}

/// Unchecked `H_1^(2)(x)`; callers guarantee `x > 0`.
#[inline]
pub fn h1_2(x: f64) -> Complex64 {
    Complex64::new(j1(x), -y1(x))
}

fn horner(coeffs: &[f64], z: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * z + c)
}

fn select_fit(fits: &[AsymptoticFit; 4], x: f64) -> &AsymptoticFit {
    fits.iter().find(|f| x >= f.lower).unwrap_or(&fits[3])
}

/// `(P(x), Q(x))` for the asymptotic form; `q_lead` is the leading `Q`
/// coefficient (-1/8 for order 0, 3/8 for order 1).
fn modulus_phase(fits: &[AsymptoticFit; 4], x: f64, q_lead: f64) -> (f64, f64) {
    let fit = select_fit(fits, x);
    let z = 1.0 / (x * x);
    let pr = horner(&fit.pr, z);
    let ps = 1.0 + z * horner(&fit.ps, z);
    let qr = horner(&fit.qr, z);
    let qs = 1.0 + z * horner(&fit.qs, z);
    (1.0 + pr / ps, (q_lead + qr / qs) / x)
}

/// Bessel function of the first kind, order 0. Even in `x`.
pub fn j0(x: f64) -> f64 {
    let x = x.abs();
    if x.is_infinite() {
        return 0.0;
    }
    if x >= SERIES_SWITCH {
        let (p, q) = modulus_phase(&ORDER0_FITS, x, -0.125);
        let (s, c) = x.sin_cos();
        return INV_SQRT_PI * (p * (c + s) - q * (s - c)) / x.sqrt();
    }
    if x < 1.220_703_125e-4 {
        return 1.0 - 0.25 * x * x;
    }
    let z = x * x;
    let r = z * horner(&coeffs::J0_SMALL_R, z);
    let s = 1.0 + z * horner(&coeffs::J0_SMALL_S, z);
    (1.0 + x / 2.0) * (1.0 - x / 2.0) + z * (r / s)
}

/// Bessel function of the second kind, order 0. NaN for `x < 0`, `-inf` at 0.
pub fn y0(x: f64) -> f64 {
    if x.is_nan() || x < 0.0 {
        return f64::NAN;
    }
    if x == 0.0 {
        return f64::NEG_INFINITY;
    }
    if x.is_infinite() {
        return 0.0;
    }
    if x >= SERIES_SWITCH {
        let (p, q) = modulus_phase(&ORDER0_FITS, x, -0.125);
        let (s, c) = x.sin_cos();
        return INV_SQRT_PI * (p * (s - c) + q * (c + s)) / x.sqrt();
    }
    if x < 7.450_580_596_923_828e-9 {
        return coeffs::Y0_SMALL_U[0] + FRAC_2_PI * x.ln();
    }
    let z = x * x;
    let u = horner(&coeffs::Y0_SMALL_U, z);
    let v = 1.0 + z * horner(&coeffs::Y0_SMALL_V, z);
    u / v + FRAC_2_PI * (j0(x) * x.ln())
}

/// Bessel function of the first kind, order 1. Odd in `x`.
pub fn j1(x: f64) -> f64 {
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs();
    if x.is_infinite() {
        return 0.0;
    }
    if x >= SERIES_SWITCH {
        let (p, q) = modulus_phase(&ORDER1_FITS, x, 0.375);
        let (s, c) = x.sin_cos();
        // cos(x - 3pi/4) = (s - c)/sqrt2, sin(x - 3pi/4) = -(s + c)/sqrt2
        return sign * INV_SQRT_PI * (p * (s - c) + q * (s + c)) / x.sqrt();
    }
    let z = x * x;
    let r = z * horner(&coeffs::J1_SMALL_R, z);
    let s = 1.0 + z * horner(&coeffs::J1_SMALL_S, z);
    sign * (0.5 + r / s) * x
}

/// Bessel function of the second kind, order 1. NaN for `x < 0`, `-inf` at 0.
pub fn y1(x: f64) -> f64 {
    if x.is_nan() || x < 0.0 {
        return f64::NAN;
    }
    if x == 0.0 {
        return f64::NEG_INFINITY;
    }
    if x.is_infinite() {
        return 0.0;
    }
    if x >= SERIES_SWITCH {
        let (p, q) = modulus_phase(&ORDER1_FITS, x, 0.375);
        let (s, c) = x.sin_cos();
        return INV_SQRT_PI * (-p * (s + c) + q * (s - c)) / x.sqrt();
    }
    if x < 5.551_115_123_125_783e-17 {
        return -FRAC_2_PI / x;
    }
    let z = x * x;
    let u = horner(&coeffs::Y1_SMALL_U, z);
    let v = 1.0 + z * horner(&coeffs::Y1_SMALL_V, z);
    x * (u / v) + FRAC_2_PI * (j1(x) * x.ln() - 1.0 / x)
}

/// `J_0(x) ..= J_nmax(x)` for `x >= 0`.
///
/// Forward recurrence is used while it is stable (`x > nmax`); otherwise the
/// sequence is generated downward from a high starting order and normalized
/// with `J_0 + 2 Σ J_2k = 1`.
pub fn jn_sequence(nmax: usize, x: f64) -> Vec<f64> {
    let mut out = vec![0.0; nmax + 1];
    if x == 0.0 {
        out[0] = 1.0;
        return out;
    }
    if x > nmax as f64 {
        out[0] = j0(x);
        if nmax >= 1 {
            out[1] = j1(x);
        }
        for n in 1..nmax {
            out[n + 1] = 2.0 * n as f64 / x * out[n] - out[n - 1];
        }
        return out;
    }
    // Starting order well above both nmax and x.
    let mut start = nmax.max(x.ceil() as usize) + 20 + (40.0 * nmax.max(1) as f64).sqrt() as usize;
    if start % 2 == 1 {
        start += 1;
    }
    let mut next = 0.0;
    let mut cur = 1e-300;
    let mut norm = 0.0;
    for k in (1..=start).rev() {
        let prev = 2.0 * k as f64 / x * cur - next;
        next = cur;
        cur = prev;
        // cur now holds the value for order k - 1
        let order = k - 1;
        if order <= nmax {
            out[order] = cur;
        }
        if order % 2 == 0 {
            norm += if order == 0 { cur } else { 2.0 * cur };
        }
        if cur.abs() > 1e250 {
            let rescale = 1e-250;
            cur *= rescale;
            next *= rescale;
            norm *= rescale;
            for v in out.iter_mut() {
                *v *= rescale;
            }
        }
    }
    for v in out.iter_mut() {
        *v /= norm;
    }
    out
}

/// `Y_0(x) ..= Y_nmax(x)` for `x > 0` by forward recurrence (stable for Y).
pub fn yn_sequence(nmax: usize, x: f64) -> Vec<f64> {
    let mut out = vec![0.0; nmax + 1];
    out[0] = y0(x);
    if nmax >= 1 {
        out[1] = y1(x);
    }
    for n in 1..nmax {
        out[n + 1] = 2.0 * n as f64 / x * out[n] - out[n - 1];
    }
    out
}

/// `H_0^(2)(x) ..= H_nmax^(2)(x)`.
pub fn hankel2_sequence(nmax: usize, x: f64) -> Vec<Complex64> {
    jn_sequence(nmax, x)
        .into_iter()
        .zip(yn_sequence(nmax, x))
        .map(|(j, y)| Complex64::new(j, -y))
        .collect()
}

/// Large-argument limit used in sanity checks: `|H_0^(2)(x)| sqrt(x) -> sqrt(2/pi)`.
pub fn hankel_asymptotic_modulus() -> f64 {
    (2.0 / PI).sqrt()
}
