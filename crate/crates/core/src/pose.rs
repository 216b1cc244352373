//! In-plane camera poses (rotation about the image center plus translation)
//! and the discrete pose grid over which blur weights are estimated.

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;

use crate::error::{Error, Result};
use crate::real::Real;

/// Default upper bound on the number of poses in a grid.
pub const DEFAULT_GRID_CAP: usize = 2500;

/// Rotation by `theta` radians about the image center followed by a
/// translation `(tx, ty)` in pixels. `x` runs along columns, `y` along rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose<T> {
    pub theta: T,
    pub tx: T,
    pub ty: T,
}

impl<T: Real> Pose<T> {
    pub fn new(theta: T, tx: T, ty: T) -> Self {
        Self { theta, tx, ty }
    }

    pub fn identity() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    pub fn is_identity(&self) -> bool {
        let eps = T::lit(1e-12);
        self.theta.abs() < eps && self.tx.abs() < eps && self.ty.abs() < eps
    }

    /// Maps the point `(x, y)` of an image whose rotation center is `center`.
    pub fn apply(&self, x: T, y: T, center: (T, T)) -> (T, T) {
        let (s, c) = self.theta.sin_cos();
        let dx = x - center.0;
        let dy = y - center.1;
        (
            c * dx - s * dy + center.0 + self.tx,
            s * dx + c * dy + center.1 + self.ty,
        )
    }

    /// Displacement `T(p) - p` of the point `p`.
    pub fn displacement(&self, x: T, y: T, center: (T, T)) -> (T, T) {
        // expanded so that theta = 0 yields the translation bit-exactly
        let (s, c) = self.theta.sin_cos();
        let dx = x - center.0;
        let dy = y - center.1;
        let one = T::one();
        ((c - one) * dx - s * dy + self.tx, s * dx + (c - one) * dy + self.ty)
    }

    /// Same pose expressed on an image rescaled by `factor`: the angle is
    /// unchanged, translations scale with the image.
    pub fn scaled(&self, factor: T) -> Self {
        Self::new(self.theta, self.tx * factor, self.ty * factor)
    }

    /// Distance in pixels, counting rotation as arc length at `radius`.
    pub fn distance(&self, other: &Self, radius: T) -> T {
        let a = (self.theta - other.theta) * radius;
        let b = self.tx - other.tx;
        let c = self.ty - other.ty;
        (a * a + b * b + c * c).sqrt()
    }
}

/// Geometric center of a `width x height` pixel grid.
pub fn image_center<T: Real>(width: usize, height: usize) -> (T, T) {
    (
        T::from_usize_lossy(width.saturating_sub(1)) / T::lit(2.0),
        T::from_usize_lossy(height.saturating_sub(1)) / T::lit(2.0),
    )
}

/// Distance from the image center to the farthest corner.
pub fn corner_radius<T: Real>(width: usize, height: usize) -> T {
    let (cx, cy) = image_center::<T>(width, height);
    cx.hypot(cy)
}

/// Interpolation used when warping images through a pose.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Interp {
    #[default]
    Bilinear,
}

/// Regular lattice a grid was built on; used to snap resampled poses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lattice<T> {
    pub rotation_step: T,
    pub shift_step: T,
    pub max_rotation: T,
    pub max_shift: T,
}

impl<T: Real> Lattice<T> {
    fn snap(&self, p: Pose<T>) -> Pose<T> {
        let snap = |v: T, step: T| if step > T::zero() { (v / step).round() * step } else { T::zero() };
        Pose::new(
            snap(p.theta, self.rotation_step),
            snap(p.tx, self.shift_step),
            snap(p.ty, self.shift_step),
        )
    }

    fn contains(&self, p: &Pose<T>) -> bool {
        let tol = T::lit(1e-9);
        p.theta.abs() <= self.max_rotation + tol
            && p.tx.abs() <= self.max_shift + tol
            && p.ty.abs() <= self.max_shift + tol
    }

    fn scaled(&self, factor: T) -> Self {
        Self {
            rotation_step: self.rotation_step,
            shift_step: self.shift_step * factor,
            max_rotation: self.max_rotation,
            max_shift: self.max_shift * factor,
        }
    }
}

/// Ordered set of distinct poses. The position of a pose in the sequence is
/// the index used by blur-weight vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseGrid<T> {
    poses: Vec<Pose<T>>,
    interp: Interp,
    lattice: Option<Lattice<T>>,
}

impl<T: Real> PoseGrid<T> {
    /// Builds a grid from an explicit pose list; duplicates are rejected.
    pub fn from_poses(poses: Vec<Pose<T>>) -> Result<Self> {
        Self::with_lattice(poses, None)
    }

    pub fn with_lattice(poses: Vec<Pose<T>>, lattice: Option<Lattice<T>>) -> Result<Self> {
        if poses.is_empty() {
            return Err(Error::Invalid("pose grid is empty".into()));
        }
        let eps = T::lit(1e-12);
        for (i, a) in poses.iter().enumerate() {
            for b in &poses[..i] {
                if (a.theta - b.theta).abs() < eps && (a.tx - b.tx).abs() < eps && (a.ty - b.ty).abs() < eps {
                    return Err(Error::Invalid(format!(
                        "duplicate pose (theta={}, tx={}, ty={})",
                        a.theta, a.tx, a.ty
                    )));
                }
            }
        }
        Ok(Self {
            poses,
            interp: Interp::Bilinear,
            lattice,
        })
    }

    pub fn poses(&self) -> &[Pose<T>] {
        &self.poses
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn interp(&self) -> Interp {
        self.interp
    }

    pub fn lattice(&self) -> Option<&Lattice<T>> {
        self.lattice.as_ref()
    }

    pub fn identity_index(&self) -> Option<usize> {
        self.poses.iter().position(Pose::is_identity)
    }

    /// Index of the pose nearest to `p` under [`Pose::distance`].
    pub fn nearest(&self, p: &Pose<T>, radius: T) -> usize {
        let mut best = 0;
        let mut best_d = T::infinity();
        for (j, q) in self.poses.iter().enumerate() {
            let d = q.distance(p, radius);
            if d < best_d {
                best_d = d;
                best = j;
            }
        }
        best
    }

    /// The grid as seen on an image rescaled by `factor`.
    pub fn scaled(&self, factor: T) -> Self {
        Self {
            poses: self.poses.iter().map(|p| p.scaled(factor)).collect(),
            interp: self.interp,
            lattice: self.lattice.map(|l| l.scaled(factor)),
        }
    }

    /// Largest displacement any pose induces on a `width x height` image.
    pub fn max_displacement(&self, width: usize, height: usize) -> T {
        let center = image_center::<T>(width, height);
        let w = T::from_usize_lossy(width.saturating_sub(1));
        let h = T::from_usize_lossy(height.saturating_sub(1));
        let corners = [(T::zero(), T::zero()), (w, T::zero()), (T::zero(), h), (w, h)];
        let mut m = T::zero();
        for p in &self.poses {
            for &(x, y) in &corners {
                let (dx, dy) = p.displacement(x, y, center);
                m = m.max(dx.abs()).max(dy.abs());
            }
        }
        m
    }
}

/// Parameters of a full Cartesian pose grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseGridSpec<T> {
    pub max_rotation: T,
    /// `None` picks the largest step whose arc at the farthest corner is at
    /// most one pixel.
    pub rotation_step: Option<T>,
    pub max_shift: T,
    pub shift_step: T,
    pub width: usize,
    pub height: usize,
    pub cap: usize,
}

impl<T: Real> PoseGridSpec<T> {
    pub fn new(max_rotation: T, max_shift: T, width: usize, height: usize) -> Self {
        Self {
            max_rotation,
            rotation_step: None,
            max_shift,
            shift_step: T::one(),
            width,
            height,
            cap: DEFAULT_GRID_CAP,
        }
    }

    /// Rotation step actually used by [`build_pose_grid`].
    pub fn effective_rotation_step(&self) -> T {
        match self.rotation_step {
            Some(s) => s,
            None => {
                let r = corner_radius::<T>(self.width, self.height).max(T::one());
                if self.max_rotation <= T::zero() {
                    return T::one() / r;
                }
                let n = (self.max_rotation * r).ceil().max(T::one());
                self.max_rotation / n
            }
        }
    }
}

fn steps<T: Real>(max: T, step: T) -> i64 {
    (max / step + T::lit(1e-9)).floor().to_i64().unwrap_or(0)
}

/// Full Cartesian grid over `(theta, ty, tx)`, rotation outermost and `tx`
/// innermost.
pub fn build_pose_grid<T: Real>(spec: &PoseGridSpec<T>) -> Result<PoseGrid<T>> {
    let check = |name, v: T, strict: bool| {
        let ok = v.is_finite() && if strict { v > T::zero() } else { v >= T::zero() };
        if ok {
            Ok(())
        } else {
            Err(Error::Domain {
                name,
                value: v.as_f64(),
                expected: if strict { "> 0" } else { ">= 0" },
            })
        }
    };
    check("max_rotation", spec.max_rotation, false)?;
    check("max_shift", spec.max_shift, false)?;
    check("shift_step", spec.shift_step, true)?;
    let rot_step = spec.effective_rotation_step();
    check("rotation_step", rot_step, true)?;

    let nr = steps(spec.max_rotation, rot_step);
    let ns = steps(spec.max_shift, spec.shift_step);
    let size = ((2 * nr + 1) * (2 * ns + 1) * (2 * ns + 1)) as usize;
    if size > spec.cap {
        return Err(Error::GridCap { size, cap: spec.cap });
    }
    let mut poses = Vec::with_capacity(size);
    for r in -nr..=nr {
        for sy in -ns..=ns {
            for sx in -ns..=ns {
                poses.push(Pose::new(
                    T::lit(r as f64) * rot_step,
                    T::lit(sx as f64) * spec.shift_step,
                    T::lit(sy as f64) * spec.shift_step,
                ));
            }
        }
    }
    let lattice = Lattice {
        rotation_step: rot_step,
        shift_step: spec.shift_step,
        max_rotation: spec.max_rotation,
        max_shift: spec.max_shift,
    };
    PoseGrid::with_lattice(poses, Some(lattice))
}

/// Standard deviations of the Gaussian used to propose new poses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResampleSigma<T> {
    pub theta: T,
    pub shift: T,
}

impl<T: Real> ResampleSigma<T> {
    /// One lattice step per coordinate.
    pub fn from_lattice(l: &Lattice<T>) -> Self {
        Self {
            theta: l.rotation_step,
            shift: l.shift_step,
        }
    }
}

const RESAMPLE_ATTEMPTS: usize = 32;

/// Prunes poses whose weight is below `prune_fraction * max(w)` and proposes
/// the same number of replacements by Gaussian perturbation of surviving
/// poses (picked in proportion to their weight). Replacements are snapped to
/// the grid lattice when it has one, must stay inside the lattice bounds, must
/// not duplicate a pose already in the grid, and start with weight zero. The
/// grid never grows.
pub fn active_set_update<T: Real>(
    w: &[T],
    grid: &PoseGrid<T>,
    prune_fraction: T,
    sigma: ResampleSigma<T>,
    seed: u64,
) -> Result<(Vec<T>, PoseGrid<T>)> {
    if w.len() != grid.len() {
        return Err(Error::Length {
            what: "blur weights",
            expected: grid.len(),
            got: w.len(),
        });
    }
    if !(prune_fraction >= T::zero() && prune_fraction < T::one()) {
        return Err(Error::Domain {
            name: "prune_fraction",
            value: prune_fraction.as_f64(),
            expected: "in [0, 1)",
        });
    }
    let wmax = w.iter().cloned().fold(T::zero(), T::max);
    if wmax <= T::zero() {
        return Err(Error::ZeroWeights);
    }
    let threshold = prune_fraction * wmax;
    let keep: Vec<usize> = (0..w.len()).filter(|&j| w[j] >= threshold).collect();
    let removed = w.len() - keep.len();
    if removed == 0 {
        return Ok((w.to_vec(), grid.clone()));
    }

    let mut poses: Vec<Pose<T>> = keep.iter().map(|&j| grid.poses[j]).collect();
    let mut weights: Vec<T> = keep.iter().map(|&j| w[j]).collect();
    let survivors = poses.clone();
    let picker = WeightedIndex::new(weights.iter().map(|v| v.as_f64())).map_err(|_| Error::ZeroWeights)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let eps = T::lit(1e-9);

    for _ in 0..removed {
        for _ in 0..RESAMPLE_ATTEMPTS {
            let base = survivors[picker.sample(&mut rng)];
            let mut cand = Pose::new(
                base.theta + sigma.theta * T::lit(unit.sample(&mut rng)),
                base.tx + sigma.shift * T::lit(unit.sample(&mut rng)),
                base.ty + sigma.shift * T::lit(unit.sample(&mut rng)),
            );
            if let Some(l) = grid.lattice() {
                cand = l.snap(cand);
                if !l.contains(&cand) {
                    continue;
                }
            }
            let dup = poses.iter().any(|p| {
                (p.theta - cand.theta).abs() < eps && (p.tx - cand.tx).abs() < eps && (p.ty - cand.ty).abs() < eps
            });
            if !dup {
                poses.push(cand);
                weights.push(T::zero());
                break;
            }
        }
    }
    let out = PoseGrid::with_lattice(poses, grid.lattice)?;
    Ok((weights, out))
}
