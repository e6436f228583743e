//! Scattered field of a homogeneous dielectric cylinder under line-source
//! (TM) illumination, by cylindrical-harmonic series.

use crate::error::{Error, Result};
use crate::linalg::C64;
use crate::scene::Point;
use crate::specfun::{hankel2_sequence, jn_sequence};

pub const MAX_TERMS: usize = 200;
const REL_TOL: f64 = 1e-12;

/// Scattered field at each point of `rx` for a cylinder of `radius` and real
/// relative permittivity `eps_r` centered at `center`, illuminated by the line
/// source `-(j/4) H0^(2)(k0 |r - source|)`.
pub fn cylinder_oracle(radius: f64, eps_r: f64, k0: f64, center: Point, source: Point, rx: &[Point]) -> Result<Vec<C64>> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::Domain { what: "cylinder radius must be positive", value: radius });
    }
    if !(eps_r > 0.0 && eps_r.is_finite()) {
        return Err(Error::Domain { what: "cylinder permittivity must be positive", value: eps_r });
    }
    if !(k0 > 0.0 && k0.is_finite()) {
        return Err(Error::Domain { what: "wavenumber must be positive", value: k0 });
    }
    let rho_s = source.distance(&center);
    if rho_s <= radius {
        return Err(Error::Domain { what: "source must lie outside the cylinder", value: rho_s });
    }
    if let Some(p) = rx.iter().find(|p| p.distance(&center) <= radius) {
        return Err(Error::Domain { what: "receiver must lie outside the cylinder", value: p.distance(&center) });
    }
    if eps_r == 1.0 {
        return Ok(vec![C64::new(0.0, 0.0); rx.len()]);
    }

    let k1 = k0 * eps_r.sqrt();
    let ka = k0 * radius;
    let k1a = k1 * radius;
    let nmax = MAX_TERMS;
    let j_out = jn_sequence(nmax, ka);
    let j_in = jn_sequence(nmax, k1a);
    let h_out = hankel2_sequence(nmax, ka);
    let h_src = hankel2_sequence(nmax, k0 * rho_s);

    let deriv = |seq: &[f64], n: usize, x: f64| -> f64 {
        if n == 0 {
            -seq[1]
        } else {
            seq[n - 1] - n as f64 / x * seq[n]
        }
    };
    let hderiv = |seq: &[C64], n: usize, x: f64| -> C64 {
        if n == 0 {
            -seq[1]
        } else {
            seq[n - 1] - seq[n] * (n as f64 / x)
        }
    };

    // a_n without the source factor, computed lazily up to the needed order
    let mut coeffs: Vec<C64> = Vec::new();
    let mut coeff = |n: usize| -> C64 {
        while coeffs.len() <= n {
            let m = coeffs.len();
            let num = k1 * j_out[m] * deriv(&j_in, m, k1a) - k0 * deriv(&j_out, m, ka) * j_in[m];
            let den = hderiv(&h_out, m, ka) * (k0 * j_in[m]) - h_out[m] * (k1 * deriv(&j_in, m, k1a));
            coeffs.push(h_src[m] * num / den);
        }
        coeffs[n]
    };

    let phi_s = (source.y - center.y).atan2(source.x - center.x);
    let mut out = Vec::with_capacity(rx.len());
    for p in rx {
        let rho = p.distance(&center);
        let dphi = (p.y - center.y).atan2(p.x - center.x) - phi_s;
        let h_obs = hankel2_sequence(nmax, k0 * rho);
        let min_terms = (k1a.max(ka)).ceil() as usize + 2;
        let mut sum = coeff(0) * h_obs[0];
        let mut small_run = 0;
        let mut converged = false;
        for n in 1..nmax {
            let term = coeff(n) * h_obs[n] * (2.0 * (n as f64 * dphi).cos());
            if !(term.re.is_finite() && term.im.is_finite()) {
                return Err(Error::SeriesDivergence { terms: n });
            }
            sum += term;
            if term.norm() <= REL_TOL * sum.norm() {
                small_run += 1;
                if small_run >= 2 && n >= min_terms {
                    converged = true;
                    break;
                }
            } else {
                small_run = 0;
            }
        }
        if !converged {
            return Err(Error::SeriesDivergence { terms: nmax });
        }
        out.push(C64::new(0.0, -0.25) * sum);
    }
    Ok(out)
}
