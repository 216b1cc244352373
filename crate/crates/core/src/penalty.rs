//! The coupled image/blur/noise penalty and its one-dimensional shape functions.
//!
//! Every quantity here is a closed form. With `a = |x| * ||w_i||` and
//! `r = sqrt(4 lambda + a^2)`, the per-pixel penalty is
//!
//! ```text
//! g = 2a / (a + r) + ln(2 lambda + a^2 + a r)
//! ```
//!
//! and the logarithm is evaluated as `2 ln(a + r) - ln 2`, which is the same
//! quantity (`(a + r)^2 = 2 (2 lambda + a^2 + a r)`) without squaring `a`.

use std::io::Write;

use crate::error::{Error, Result};
use crate::real::Real;

/// Inputs of the per-pixel penalty: gradient magnitude, squared local-kernel
/// norm and noise level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltyPoint<T> {
    x_abs: T,
    kernel_norm_sq: T,
    noise_level: T,
}

impl<T: Real> PenaltyPoint<T> {
    pub fn new(x_abs: T, kernel_norm_sq: T, noise_level: T) -> Result<Self> {
        check_nonneg("x_abs", x_abs)?;
        check_pos("kernel_norm_sq", kernel_norm_sq)?;
        check_pos("noise_level", noise_level)?;
        Ok(Self {
            x_abs,
            kernel_norm_sq,
            noise_level,
        })
    }

    /// Builds a point from a signed gradient value.
    pub fn from_gradient(x: T, kernel_norm_sq: T, noise_level: T) -> Result<Self> {
        Self::new(x.abs(), kernel_norm_sq, noise_level)
    }

    pub fn x_abs(&self) -> T {
        self.x_abs
    }

    pub fn kernel_norm_sq(&self) -> T {
        self.kernel_norm_sq
    }

    pub fn noise_level(&self) -> T {
        self.noise_level
    }

    pub fn shape(&self) -> ShapeParams<T> {
        ShapeParams {
            rho: self.noise_level / self.kernel_norm_sq,
            mu: self.x_abs / self.noise_level.sqrt(),
        }
    }
}

/// Shape parameters: `rho = lambda / ||w_i||^2` drives the penalty on the
/// image, `mu = |x_i| / sqrt(lambda)` drives the penalty on the blur.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeParams<T> {
    pub rho: T,
    pub mu: T,
}

fn check_pos<T: Real>(name: &'static str, v: T) -> Result<()> {
    if v > T::zero() && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain {
            name,
            value: v.as_f64(),
            expected: "finite and > 0",
        })
    }
}

fn check_nonneg<T: Real>(name: &'static str, v: T) -> Result<()> {
    if v >= T::zero() && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain {
            name,
            value: v.as_f64(),
            expected: "finite and >= 0",
        })
    }
}

/// Shared kernel of `g`, `h` and `nu`: `2a/(a+r) + 2 ln(a+r) - ln 2` with
/// `r = hypot(a, 2 sqrt(c))`.
#[inline]
fn coupled<T: Real>(a: T, c: T) -> T {
    let two = T::lit(2.0);
    if a == T::zero() {
        return (two * c).ln();
    }
    let r = a.hypot(two * c.sqrt());
    let s = a + r;
    two * a / s + two * s.ln() - T::lit(std::f64::consts::LN_2)
}

/// Per-pixel coupled penalty `g(x_i, w_i, lambda)`.
pub fn eval_g<T: Real>(p: &PenaltyPoint<T>) -> T {
    coupled(p.x_abs * p.kernel_norm_sq.sqrt(), p.noise_level)
}

/// Image-side shape function `h(z; rho)`; equals `g` with unit kernel norm
/// and noise level `rho`.
pub fn eval_h<T: Real>(z: T, rho: T) -> Result<T> {
    check_nonneg("z", z)?;
    check_pos("rho", rho)?;
    Ok(coupled(z, rho))
}

/// Blur-side shape function `nu(w; mu, B)` as a function of `mu` and the
/// weighted norm `||w||_B`. Depends on the product only: `nu = h(mu ||w||_B; 1)`.
pub fn eval_nu<T: Real>(mu: T, w_norm_b: T) -> Result<T> {
    check_nonneg("mu", mu)?;
    check_nonneg("w_norm_b", w_norm_b)?;
    Ok(coupled(mu * w_norm_b, T::one()))
}

/// `argmin_{gamma >= 0} x^2/gamma + ln(lambda + gamma s)`.
///
/// Positive root of the stationarity quadratic `s g^2 - x^2 s g - x^2 lambda = 0`.
/// Returns zero at `x = 0`, where the infimum sits on the boundary.
pub fn gamma_star<T: Real>(p: &PenaltyPoint<T>) -> T {
    let x = p.x_abs;
    if x == T::zero() {
        return T::zero();
    }
    let c = T::lit(2.0) * (p.noise_level / p.kernel_norm_sq).sqrt();
    x * (x + x.hypot(c)) / T::lit(2.0)
}

/// The variational upper bound `x^2/gamma + ln(lambda + gamma s)` for a given `gamma`.
pub fn variational_term<T: Real>(x: T, kernel_norm_sq: T, noise_level: T, gamma: T) -> T {
    x * x / gamma + (noise_level + gamma * kernel_norm_sq).ln()
}

/// Exact derivative `dh/dz = 4 / (z + sqrt(z^2 + 4 rho))`.
///
/// This is `(z/rho)(sqrt(1 + 4 rho / z^2) - 1)` rewritten without the
/// cancellation; at `z = 0` it gives the one-sided limit `2 / sqrt(rho)`.
pub fn h_gradient<T: Real>(z: T, rho: T) -> Result<T> {
    check_nonneg("z", z)?;
    check_pos("rho", rho)?;
    let r = z.hypot(T::lit(2.0) * rho.sqrt());
    Ok(T::lit(4.0) / (z + r))
}

/// Exact second derivative `d^2h/dz^2 = -4 / (r (z + r))`, `r = sqrt(z^2 + 4 rho)`.
pub fn h_curvature<T: Real>(z: T, rho: T) -> Result<T> {
    check_nonneg("z", z)?;
    check_pos("rho", rho)?;
    let r = z.hypot(T::lit(2.0) * rho.sqrt());
    Ok(-T::lit(4.0) / (r * (z + r)))
}

/// One row of a penalty-curve dump.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveSample<T> {
    pub z: T,
    pub rho: T,
    pub h: T,
    pub dh: T,
}

/// Samples `(z, rho, h, dh/dz)` for every `rho` (outer) and every `z` (inner).
pub fn penalty_curve<T: Real>(rhos: &[T], zs: &[T]) -> Result<Vec<CurveSample<T>>> {
    let mut out = Vec::with_capacity(rhos.len() * zs.len());
    for &rho in rhos {
        for &z in zs {
            out.push(CurveSample {
                z,
                rho,
                h: eval_h(z, rho)?,
                dh: h_gradient(z, rho)?,
            });
        }
    }
    Ok(out)
}

/// Writes samples as CSV with header `z,rho,h,dh`. Values use the shortest
/// decimal representation that round-trips.
pub fn write_curve_csv<T: Real, W: Write>(samples: &[CurveSample<T>], mut out: W) -> Result<()> {
    writeln!(out, "z,rho,h,dh")?;
    for s in samples {
        writeln!(
            out,
            "{},{},{},{}",
            s.z.as_f64(),
            s.rho.as_f64(),
            s.h.as_f64(),
            s.dh.as_f64()
        )?;
    }
    Ok(())
}
