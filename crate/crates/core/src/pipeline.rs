//! Intensity-domain plumbing around the blind solver: derivative filters,
//! image pyramids and the final non-blind deconvolution.

use log::warn;

use crate::cg::{conjugate_gradient, CgOptions, CgStatus};
use crate::eff::EffDecomposition;
use crate::error::{Error, Result};
use crate::image::{GradientImage, IntensityImage, Plane};
use crate::real::Real;

/// Smallest pyramid level edge length.
pub const MIN_LEVEL_SIZE: usize = 16;

/// First differences with filters `[-1, 1]` and `[-1, 1]^T` under replicate
/// boundary: `h(r, c) = x(r, c+1) - x(r, c)`, zero on the last column (and
/// likewise for `v` on the last row).
pub fn gradient_plane<T: Real>(x: &Plane<T>) -> GradientImage<T> {
    let (h, w) = x.dim();
    let mut gx = Plane::zeros((h, w));
    let mut gy = Plane::zeros((h, w));
    for r in 0..h {
        for c in 0..w {
            let v = x[[r, c]];
            if c + 1 < w {
                gx[[r, c]] = x[[r, c + 1]] - v;
            }
            if r + 1 < h {
                gy[[r, c]] = x[[r + 1, c]] - v;
            }
        }
    }
    GradientImage::new(gx, gy).expect("same shape")
}

/// Adjoint of [`gradient_plane`].
pub fn gradient_adjoint<T: Real>(g: &GradientImage<T>) -> Plane<T> {
    let (h, w) = g.dim();
    let gx = g.channel(0);
    let gy = g.channel(1);
    let mut out = Plane::zeros((h, w));
    for r in 0..h {
        for c in 0..w {
            if c + 1 < w {
                let v = gx[[r, c]];
                out[[r, c + 1]] += v;
                out[[r, c]] -= v;
            }
            if r + 1 < h {
                let v = gy[[r, c]];
                out[[r + 1, c]] += v;
                out[[r, c]] -= v;
            }
        }
    }
    out
}

/// Derivative-domain representation of an image (luma for color input).
pub fn to_gradient_domain<T: Real>(img: &IntensityImage<T>) -> GradientImage<T> {
    gradient_plane(&img.luma())
}

/// Pyramid level sizes: `floor(size * factor^l + 0.5)`.
pub fn level_size(size: usize, factor: f64, level: usize) -> usize {
    (size as f64 * factor.powi(level as i32) + 0.5).floor() as usize
}

/// Area-averaging weights mapping `n_in` samples onto `n_out` samples.
fn area_weights(n_in: usize, n_out: usize) -> Vec<Vec<(usize, f64)>> {
    let ratio = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let a = o as f64 * ratio;
            let b = (o + 1) as f64 * ratio;
            let mut taps = Vec::new();
            let mut i = a.floor() as usize;
            while (i as f64) < b && i < n_in {
                let lo = a.max(i as f64);
                let hi = b.min((i + 1) as f64);
                if hi > lo {
                    taps.push((i, (hi - lo) / ratio));
                }
                i += 1;
            }
            taps
        })
        .collect()
}

/// Area-averaging resample of a plane to `(height, width)`.
pub fn resample_area<T: Real>(x: &Plane<T>, height: usize, width: usize) -> Plane<T> {
    let (h, w) = x.dim();
    let wx = area_weights(w, width);
    let wy = area_weights(h, height);
    let mut tmp = Plane::zeros((h, width));
    for r in 0..h {
        for (c, taps) in wx.iter().enumerate() {
            tmp[[r, c]] = taps.iter().fold(T::zero(), |a, &(i, v)| a + T::lit(v) * x[[r, i]]);
        }
    }
    let mut out = Plane::zeros((height, width));
    for (r, taps) in wy.iter().enumerate() {
        for c in 0..width {
            out[[r, c]] = taps.iter().fold(T::zero(), |a, &(i, v)| a + T::lit(v) * tmp[[i, c]]);
        }
    }
    out
}

/// Builds `num_levels` levels, finest first. Level `l` is the original
/// resampled by `scale_factor^l` with area averaging. Levels that would drop
/// below [`MIN_LEVEL_SIZE`] pixels on a side are dropped with a warning.
pub fn build_pyramid<T: Real>(img: &Plane<T>, scale_factor: f64, num_levels: usize) -> Result<Vec<Plane<T>>> {
    if num_levels == 0 {
        return Err(Error::Invalid("num_levels must be at least 1".into()));
    }
    if !(scale_factor > 0.0 && scale_factor < 1.0) && num_levels > 1 {
        return Err(Error::Domain {
            name: "scale_factor",
            value: scale_factor,
            expected: "in (0, 1)",
        });
    }
    let (h, w) = img.dim();
    let mut levels = vec![img.clone()];
    for l in 1..num_levels {
        let lh = level_size(h, scale_factor, l);
        let lw = level_size(w, scale_factor, l);
        if lh < MIN_LEVEL_SIZE || lw < MIN_LEVEL_SIZE {
            warn!("pyramid truncated to {l} levels: level {l} would be {lw}x{lh}");
            break;
        }
        levels.push(resample_area(img, lh, lw));
    }
    Ok(levels)
}

/// Minimizes `||y - H x||^2 + lambda * reg_weight * ||grad x||^2` per plane by
/// conjugate gradients, starting from `y`. Returns the per-plane CG status.
pub fn nonblind_deconvolve<T: Real>(
    y: &IntensityImage<T>,
    w: &[T],
    eff: &EffDecomposition<T>,
    lambda: T,
    reg_weight: T,
    opts: &CgOptions<T>,
) -> Result<(IntensityImage<T>, Vec<CgStatus<T>>)> {
    let kernels = eff.kernels(w)?;
    let alpha = lambda * reg_weight;
    let mut planes = Vec::with_capacity(y.planes().len());
    let mut status = Vec::with_capacity(y.planes().len());
    for plane in y.planes() {
        let rhs = eff.blur_adjoint_plane(plane, &kernels)?;
        let mut x = plane.clone();
        let apply = |v: &Plane<T>| -> Result<Plane<T>> {
            let hv = eff.blur_plane(v, &kernels)?;
            let mut out = eff.blur_adjoint_plane(&hv, &kernels)?;
            if alpha > T::zero() {
                let reg = gradient_adjoint(&gradient_plane(v));
                out.scaled_add(alpha, &reg);
            }
            Ok(out)
        };
        let st = conjugate_gradient(apply, &rhs, &mut x, None, opts)?;
        if !st.converged {
            warn!(
                "non-blind deconvolution stopped after {} iterations at relative residual {}",
                st.iterations, st.rel_residual
            );
        }
        planes.push(x);
        status.push(st);
    }
    Ok((IntensityImage::new(planes)?, status))
}
