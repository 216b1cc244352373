//! Ground-truth blur synthesis and evaluation metrics.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::eff::{EffDecomposition, LocalKernels};
use crate::error::{Error, Result};
use crate::image::{IntensityImage, Plane};
use crate::pose::{Pose, PoseGrid};
use crate::real::Real;
use crate::rng::{stream, Subsystem};

/// Camera motion: weighted poses plus additive Gaussian noise.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSpec<T> {
    pub entries: Vec<(Pose<T>, T)>,
    /// Noise standard deviation in intensity units.
    pub noise_sigma: T,
    pub seed: u64,
}

/// Tolerance on the unit-sum constraint of motion weights.
pub const WEIGHT_SUM_TOL: f64 = 1e-6;

impl<T: Real> MotionSpec<T> {
    pub fn new(entries: Vec<(Pose<T>, T)>, noise_sigma: T, seed: u64) -> Result<Self> {
        let spec = Self {
            entries,
            noise_sigma,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::Invalid("motion spec has no poses".into()));
        }
        if let Some((_, w)) = self.entries.iter().find(|(_, w)| !(*w >= T::zero())) {
            return Err(Error::Domain {
                name: "motion weight",
                value: w.as_f64(),
                expected: ">= 0",
            });
        }
        let sum: f64 = self.entries.iter().map(|(_, w)| w.as_f64()).sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::WeightSum(sum));
        }
        if !(self.noise_sigma >= T::zero()) {
            return Err(Error::Domain {
                name: "noise_sigma",
                value: self.noise_sigma.as_f64(),
                expected: ">= 0",
            });
        }
        Ok(())
    }

    /// Weight vector on `grid`. A pose must lie within half a lattice step
    /// of a grid pose in every coordinate (or match exactly when the grid has
    /// no lattice).
    pub fn weights_on(&self, grid: &PoseGrid<T>) -> Result<Vec<T>> {
        let half = T::lit(0.5);
        let (tol_theta, tol_shift) = match grid.lattice() {
            Some(l) => (l.rotation_step * half, l.shift_step * half),
            None => (T::lit(1e-9), T::lit(1e-9)),
        };
        let mut w = vec![T::zero(); grid.len()];
        for (p, wt) in &self.entries {
            let j = grid
                .poses()
                .iter()
                .position(|q| {
                    (q.theta - p.theta).abs() <= tol_theta
                        && (q.tx - p.tx).abs() <= tol_shift
                        && (q.ty - p.ty).abs() <= tol_shift
                })
                .ok_or(Error::OffGrid {
                    theta: p.theta.as_f64(),
                    tx: p.tx.as_f64(),
                    ty: p.ty.as_f64(),
                })?;
            w[j] += *wt;
        }
        Ok(w)
    }
}

/// Blurry observation and ground truth from [`synthesize`].
#[derive(Debug, Clone)]
pub struct Synthesis<T> {
    pub blurry: IntensityImage<T>,
    /// Ground-truth weights on the synthesis grid.
    pub w: Vec<T>,
    /// Per-patch ground-truth local kernels `A_r w`.
    pub kernels: LocalKernels<T>,
}

/// `blurry = sum_j w_j P_j sharp + N(0, sigma^2)` per plane, with noise drawn
/// from the synthesis stream of `spec.seed`.
pub fn synthesize<T: Real>(
    sharp: &IntensityImage<T>,
    spec: &MotionSpec<T>,
    grid: &PoseGrid<T>,
    eff: &EffDecomposition<T>,
) -> Result<Synthesis<T>> {
    spec.validate()?;
    let w = spec.weights_on(grid)?;
    let kernels = eff.kernels(&w)?;
    let mut rng = stream(spec.seed, Subsystem::SynthNoise);
    let sigma = spec.noise_sigma.as_f64();
    let normal = Normal::new(0.0, sigma.max(0.0)).map_err(|e| Error::Invalid(e.to_string()))?;
    let mut planes = Vec::with_capacity(sharp.planes().len());
    for p in sharp.planes() {
        let mut b = eff.blur_plane(p, &kernels)?;
        if sigma > 0.0 {
            b.iter_mut().for_each(|v| *v += T::lit(normal.sample(&mut rng)));
        }
        planes.push(b);
    }
    Ok(Synthesis {
        blurry: IntensityImage::new(planes)?,
        w,
        kernels,
    })
}

/// Piecewise-smooth test scene in `[0, 1]`: a soft background ramp with
/// randomly oriented rectangles, discs and thin bars.
pub fn test_scene<T: Real>(height: usize, width: usize, seed: u64) -> Plane<T> {
    test_scene_with_density(height, width, seed, 1500)
}

/// Sets every pixel within the rectangle of half-extents `(a, b)` centred at
/// `(cy, cx)` and rotated by `phi` to `val`.
fn fill_box(img: &mut Plane<f64>, (cy, cx): (f64, f64), (a, b): (f64, f64), phi: f64, val: f64) {
    let (s, c) = phi.sin_cos();
    let reach = a.hypot(b);
    let (h, w) = img.dim();
    let r0 = (cy - reach).floor().max(0.0) as usize;
    let r1 = ((cy + reach).ceil() as usize + 1).min(h);
    let c0 = (cx - reach).floor().max(0.0) as usize;
    let c1 = ((cx + reach).ceil() as usize + 1).min(w);
    for r in r0..r1 {
        for col in c0..c1 {
            let (dy, dx) = (r as f64 - cy, col as f64 - cx);
            if (dx * c + dy * s).abs() <= a && (dy * c - dx * s).abs() <= b {
                img[[r, col]] = val;
            }
        }
    }
}

/// [`test_scene`] with one extra shape per `pixels_per_shape` pixels.
pub fn test_scene_with_density<T: Real>(height: usize, width: usize, seed: u64, pixels_per_shape: usize) -> Plane<T> {
    let mut rng = stream(seed, Subsystem::Fixture);
    let mut img = Plane::<f64>::zeros((height, width));
    let (hf, wf) = (height as f64, width as f64);
    let side = hf.min(wf);
    let gx: f64 = rng.gen_range(-0.2..0.2);
    let gy: f64 = rng.gen_range(-0.2..0.2);
    for ((r, c), v) in img.indexed_iter_mut() {
        *v = 0.5 + gx * (c as f64 / wf - 0.5) + gy * (r as f64 / hf - 0.5);
    }
    let shapes = 6 + (height * width) / pixels_per_shape.max(1);
    for _ in 0..shapes {
        let val: f64 = rng.gen_range(0.0..1.0);
        let centre = (rng.gen_range(0.0..hf), rng.gen_range(0.0..wf));
        let phi = rng.gen_range(0.0..std::f64::consts::PI);
        match rng.gen_range(0..3) {
            0 => {
                let a = rng.gen_range(side * 0.04..side * 0.2);
                let b = rng.gen_range(side * 0.04..side * 0.2);
                fill_box(&mut img, centre, (a, b), phi, val);
            }
            1 => {
                let rad = rng.gen_range(side * 0.05..side * 0.2);
                for ((r, c), v) in img.indexed_iter_mut() {
                    if (r as f64 - centre.0).hypot(c as f64 - centre.1) <= rad {
                        *v = val;
                    }
                }
            }
            _ => {
                let half_len = rng.gen_range(side * 0.1..side * 0.5);
                let half_thick = rng.gen_range(0.5..2.0);
                fill_box(&mut img, centre, (half_len, half_thick), phi, val);
            }
        }
    }
    img.mapv(|v| T::lit(v.clamp(0.0, 1.0)))
}

fn check_same_dims<T: Real>(a: &IntensityImage<T>, b: &IntensityImage<T>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension {
            expected: b.dim(),
            got: a.dim(),
        });
    }
    if a.planes().len() != b.planes().len() {
        return Err(Error::Length {
            what: "image planes",
            expected: b.planes().len(),
            got: a.planes().len(),
        });
    }
    Ok(())
}

/// Largest integer shift searched when aligning a reconstruction.
pub const ALIGN_RADIUS: usize = 2;

/// SSD between `img` shifted by `(dy, dx)` and `reference` over the window
/// `[m, h - m) x [m, w - m)`.
fn shifted_ssd<T: Real>(img: &IntensityImage<T>, reference: &IntensityImage<T>, dy: isize, dx: isize, m: usize) -> f64 {
    let (h, w) = reference.dim();
    let mut acc = 0.0;
    for (p, q) in img.planes().iter().zip(reference.planes()) {
        for r in m..h - m {
            for c in m..w - m {
                let a = p[[(r as isize + dy) as usize, (c as isize + dx) as usize]].as_f64();
                let b = q[[r, c]].as_f64();
                acc += (a - b) * (a - b);
            }
        }
    }
    acc
}

/// Smallest SSD to `reference` over integer shifts within
/// [`ALIGN_RADIUS`], after cropping `crop` border pixels.
pub fn aligned_ssd<T: Real>(img: &IntensityImage<T>, reference: &IntensityImage<T>, crop: usize) -> Result<f64> {
    check_same_dims(img, reference)?;
    let m = crop + ALIGN_RADIUS;
    let (h, w) = reference.dim();
    if 2 * m >= h || 2 * m >= w {
        return Err(Error::ImageTooSmall {
            width: w,
            height: h,
            kernel_size: crop,
        });
    }
    let r = ALIGN_RADIUS as isize;
    let mut best = f64::INFINITY;
    for dy in -r..=r {
        for dx in -r..=r {
            best = best.min(shifted_ssd(img, reference, dy, dx, m));
        }
    }
    Ok(best)
}

/// `SSD(est, sharp) / SSD(gt, sharp)`, each after its own alignment search
/// and a border crop of `crop` pixels.
pub fn ssd_error_ratio<T: Real>(
    deblur_est: &IntensityImage<T>,
    deblur_gt: &IntensityImage<T>,
    sharp: &IntensityImage<T>,
    crop: usize,
) -> Result<f64> {
    let num = aligned_ssd(deblur_est, sharp, crop)?;
    let den = aligned_ssd(deblur_gt, sharp, crop)?;
    if den == 0.0 {
        return Err(Error::Zero("SSD of the ground-truth reconstruction"));
    }
    Ok(num / den)
}

/// Normalized cross-correlation of two weight vectors on a common grid.
pub fn kernel_correlation<T: Real>(w_est: &[T], w_gt: &[T]) -> Result<f64> {
    if w_est.len() != w_gt.len() {
        return Err(Error::Length {
            what: "weight vectors",
            expected: w_gt.len(),
            got: w_est.len(),
        });
    }
    let dot: f64 = w_est.iter().zip(w_gt).map(|(a, b)| a.as_f64() * b.as_f64()).sum();
    let na: f64 = w_est.iter().map(|a| a.as_f64().powi(2)).sum::<f64>().sqrt();
    let nb: f64 = w_gt.iter().map(|a| a.as_f64().powi(2)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Zero("weight vector"));
    }
    Ok(dot / (na * nb))
}

/// Moves weights from `from` onto the nearest poses of `to`.
pub fn resample_weights<T: Real>(w: &[T], from: &PoseGrid<T>, to: &PoseGrid<T>, radius: T) -> Result<Vec<T>> {
    if w.len() != from.len() {
        return Err(Error::Length {
            what: "blur weights",
            expected: from.len(),
            got: w.len(),
        });
    }
    let mut out = vec![T::zero(); to.len()];
    for (p, &v) in from.poses().iter().zip(w) {
        if v != T::zero() {
            out[to.nearest(p, radius)] += v;
        }
    }
    Ok(out)
}

/// Fraction of ratios `<= e` for every edge `e`.
pub fn cumulative_histogram(ratios: &[f64], edges: &[f64]) -> Result<Vec<(f64, f64)>> {
    if ratios.is_empty() {
        return Err(Error::Invalid("no error ratios".into()));
    }
    let n = ratios.len() as f64;
    Ok(edges
        .iter()
        .map(|&e| (e, ratios.iter().filter(|&&r| r <= e).count() as f64 / n))
        .collect())
}

/// Metrics for one evaluated case.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub ssd_error_ratio: f64,
    pub kernel_correlation: f64,
    pub psnr_blurry: f64,
    pub psnr_deblurred: f64,
}

impl EvalReport {
    /// `key=value` lines.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        writeln!(s, "ssd_error_ratio={}", self.ssd_error_ratio).unwrap();
        writeln!(s, "kernel_correlation={}", self.kernel_correlation).unwrap();
        writeln!(s, "psnr_blurry={}", self.psnr_blurry).unwrap();
        writeln!(s, "psnr_deblurred={}", self.psnr_deblurred).unwrap();
        s
    }
}

/// Parses a motion file: one `theta_rad tx_px ty_px weight` row per pose,
/// whitespace separated, `#` comments and an optional header row.
pub fn parse_motion<T: Real>(text: &str, source: &Path) -> Result<Vec<(Pose<T>, T)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() || line.starts_with("theta") {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let location = format!("{}:{}", source.display(), i + 1);
        if fields.len() != 4 {
            return Err(Error::Parse {
                location,
                message: format!("expected 4 columns, found {}", fields.len()),
            });
        }
        let mut v = [0.0f64; 4];
        for (k, f) in fields.iter().enumerate() {
            v[k] = f.parse().map_err(|e| Error::Parse {
                location: location.clone(),
                message: format!("{f:?}: {e}"),
            })?;
        }
        out.push((Pose::new(T::lit(v[0]), T::lit(v[1]), T::lit(v[2])), T::lit(v[3])));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eff::{build_eff, EffSpec};
    use crate::pose::{build_pose_grid, PoseGridSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid() -> PoseGrid<f64> {
        let mut spec = PoseGridSpec::new(0.02, 2.0, 48, 48);
        spec.rotation_step = Some(0.01);
        build_pose_grid(&spec).unwrap()
    }

    #[test]
    fn identity_motion_without_noise_is_exact() {
        let g = grid();
        let eff = build_eff(&g, 48, 48, &EffSpec::new(16, 4, 7)).unwrap();
        let sharp = IntensityImage::gray(test_scene::<f64>(48, 48, 1));
        let spec = MotionSpec::new(vec![(Pose::identity(), 1.0)], 0.0, 3).unwrap();
        let out = synthesize(&sharp, &spec, &g, &eff).unwrap();
        let diff = (&out.blurry.planes()[0] - &sharp.planes()[0]).mapv(f64::abs);
        assert!(diff.iter().all(|&d| d < 1e-12));
    }

    #[test]
    fn off_grid_pose_is_rejected() {
        let g = grid();
        let spec = MotionSpec::new(vec![(Pose::new(0.0, 2.6, 0.0), 1.0)], 0.0, 0).unwrap();
        assert!(matches!(spec.weights_on(&g), Err(Error::OffGrid { .. })));
        let spec = MotionSpec::new(vec![(Pose::new(0.004, 0.4, 0.0), 1.0)], 0.0, 0).unwrap();
        assert!(spec.weights_on(&g).is_ok());
    }

    #[test]
    fn weights_must_sum_to_one() {
        let e = MotionSpec::new(vec![(Pose::<f64>::identity(), 0.9)], 0.0, 0);
        assert!(matches!(e, Err(Error::WeightSum(_))));
    }

    #[test]
    fn noise_variance_matches_sigma() {
        let g = grid();
        let eff = build_eff(&g, 48, 48, &EffSpec::new(16, 4, 7)).unwrap();
        let sharp = IntensityImage::gray(Plane::from_elem((48, 48), 0.5f64));
        let sigma = 0.05;
        let mut total = 0.0;
        for seed in 0..20 {
            let spec = MotionSpec::new(vec![(Pose::identity(), 1.0)], sigma, seed).unwrap();
            let b = synthesize(&sharp, &spec, &g, &eff).unwrap();
            total += b.blurry.planes()[0].iter().map(|v| (v - 0.5).powi(2)).sum::<f64>() / (48.0 * 48.0);
        }
        let var = total / 20.0;
        assert!((var / (sigma * sigma) - 1.0).abs() < 0.05, "{var}");
    }

    #[test]
    fn ssd_ratio_trivial_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sharp = IntensityImage::gray(test_scene::<f64>(32, 32, 2));
        let gt = sharp.map_planes(|p| p.mapv(|v| v + rng.gen_range(-0.05..0.05)));
        assert_eq!(ssd_error_ratio(&gt, &gt, &sharp, 3).unwrap(), 1.0);
        assert_eq!(ssd_error_ratio(&sharp, &gt, &sharp, 3).unwrap(), 0.0);
        let worse = gt.map_planes(|p| p.mapv(|v| v + rng.gen_range(-0.1..0.1)));
        assert!(ssd_error_ratio(&worse, &gt, &sharp, 3).unwrap() > 1.0);
        assert!(ssd_error_ratio(&gt, &sharp, &sharp, 3).is_err());
    }

    #[test]
    fn ssd_ratio_ignores_common_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sharp = IntensityImage::gray(test_scene::<f64>(40, 40, 3));
        let est = sharp.map_planes(|p| p.mapv(|v| v + rng.gen_range(-0.1..0.1)));
        let gt = sharp.map_planes(|p| p.mapv(|v| v + rng.gen_range(-0.1..0.1)));
        let base = ssd_error_ratio(&est, &gt, &sharp, 4).unwrap();
        let shift = |img: &IntensityImage<f64>| {
            img.map_planes(|p| Plane::from_shape_fn(p.dim(), |(r, c)| p[[r.saturating_sub(1), c.saturating_sub(2)]]))
        };
        let moved = ssd_error_ratio(&shift(&est), &shift(&gt), &sharp, 4).unwrap();
        assert!((base - moved).abs() < 1e-12 * base, "{base} vs {moved}");
    }

    #[test]
    fn correlation_cases() {
        assert!((kernel_correlation(&[0.2, 0.5, 0.3], &[0.2, 0.5, 0.3]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(kernel_correlation(&[1.0, 0.0, 0.0], &[0.0, 0.5, 0.5]).unwrap(), 0.0);
        assert!(kernel_correlation(&[0.0, 0.0], &[1.0, 0.0]).is_err());
        // gt = delta, estimate = 90% delta plus 10% spread uniformly
        let gt = [1.0, 0.0, 0.0];
        let est = [0.9 + 0.1 / 3.0, 0.1 / 3.0, 0.1 / 3.0];
        let a: f64 = 0.9 + 0.1 / 3.0;
        let b = 0.1 / 3.0;
        let expected = a / (a * a + 2.0 * b * b).sqrt();
        assert!((kernel_correlation(&est, &gt).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.998_726_9).abs() < 1e-6);
    }

    #[test]
    fn histogram_cases() {
        let h = cumulative_histogram(&[1.0; 4], &[1.5, 2.0, 3.0]).unwrap();
        assert!(h.iter().all(|&(_, f)| f == 1.0));
        let h = cumulative_histogram(&[1.0, 2.0, 3.0], &[2.0]).unwrap();
        assert!((h[0].1 - 2.0 / 3.0).abs() < 1e-15);
        assert!(cumulative_histogram(&[], &[1.0]).is_err());
    }

    #[test]
    fn motion_file_parsing() {
        let text = "theta_rad\ttx_px\tty_px\tweight\n# comment\n0 1 0 0.5\n0.01 0 -1 0.5 # tail\n";
        let m = parse_motion::<f64>(text, Path::new("m.tsv")).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m[1].0, Pose::new(0.01, 0.0, -1.0));
        let bad = parse_motion::<f64>("0 1 0\n", Path::new("m.tsv"));
        assert!(matches!(bad, Err(Error::Parse { .. })));
    }

    #[test]
    fn scene_is_in_unit_range_and_reproducible() {
        let a = test_scene::<f64>(64, 64, 9);
        assert!(a.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(a, test_scene::<f64>(64, 64, 9));
        assert_ne!(a, test_scene::<f64>(64, 64, 10));
    }
}
