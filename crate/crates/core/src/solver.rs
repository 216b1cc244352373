//! Blind estimation by majorization-minimization of the bound
//!
//! ```text
//! L(x, w, gamma, lambda) = ||y - H x||^2 / lambda
//!                        + sum_i [ x_i^2 / gamma_i + ln(lambda + gamma_i ||w_i||^2) ]
//! ```
//!
//! cycling image, latent, blur and noise updates, with a coarse-to-fine
//! driver on top. The noise update also carries the constant `d / lambda`,
//! so [`eval_bound`] includes it.

use log::{debug, warn};

use crate::cg::{conjugate_gradient, CgOptions, CgStatus};
use crate::eff::{
    apply_blur, apply_blur_with, apply_d_transpose, build_eff, local_kernel_norms, rho_map, EffDecomposition,
    EffSpec, LocalKernelNormField,
};
use crate::error::{Error, Result};
use crate::image::{GradientImage, Plane};
use crate::pipeline::{build_pyramid, gradient_plane};
use crate::pose::{active_set_update, corner_radius, Pose, PoseGrid, ResampleSigma};
use crate::real::Real;
use crate::rng::{child_seed, Subsystem};

/// Solver knobs. Defaults follow the reference configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig<T> {
    pub cg_tol: T,
    pub cg_max_iter: usize,
    pub outer_iters_per_level: usize,
    /// Relative objective decrease below which the blur subproblem stops.
    pub w_solver_tol: T,
    pub w_solver_max_iter: usize,
    /// Level stops once `||dw||_1 / ||w||_1` falls below this.
    pub w_change_tol: T,
    /// `d = n * d_coefficient`.
    pub d_coefficient: T,
    pub gamma_floor: T,
    /// `gamma_0 = y^2 + gamma_init_offset`.
    pub gamma_init_offset: T,
    pub pyramid_scale: T,
    pub min_kernel_px: usize,
    /// Fixed number of pyramid levels; `None` derives it from `min_kernel_px`.
    pub levels: Option<usize>,
    /// Run the active-set update every this many outer iterations (0 = never).
    pub active_set_every: usize,
    pub prune_fraction: T,
    pub seed: u64,
}

impl<T: Real> Default for SolverConfig<T> {
    fn default() -> Self {
        Self {
            cg_tol: T::lit(1e-5),
            cg_max_iter: 50,
            outer_iters_per_level: 30,
            w_solver_tol: T::lit(1e-6),
            w_solver_max_iter: 40,
            w_change_tol: T::lit(1e-3),
            d_coefficient: T::lit(1e-4),
            gamma_floor: T::lit(1e-10),
            gamma_init_offset: T::lit(1e-2),
            pyramid_scale: T::lit(std::f64::consts::FRAC_1_SQRT_2),
            min_kernel_px: 3,
            levels: None,
            active_set_every: 0,
            prune_fraction: T::lit(0.02),
            seed: 0,
        }
    }
}

impl<T: Real> SolverConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("cg_tol", self.cg_tol),
            ("w_solver_tol", self.w_solver_tol),
            ("w_change_tol", self.w_change_tol),
            ("d_coefficient", self.d_coefficient),
            ("gamma_floor", self.gamma_floor),
        ];
        for (name, v) in positive {
            if !(v > T::zero() && v.is_finite()) {
                return Err(Error::Domain {
                    name,
                    value: v.as_f64(),
                    expected: "> 0",
                });
            }
        }
        if !(self.gamma_init_offset >= T::zero()) {
            return Err(Error::Domain {
                name: "gamma_init_offset",
                value: self.gamma_init_offset.as_f64(),
                expected: ">= 0",
            });
        }
        if !(self.pyramid_scale > T::zero() && self.pyramid_scale < T::one()) {
            return Err(Error::Domain {
                name: "pyramid_scale",
                value: self.pyramid_scale.as_f64(),
                expected: "in (0, 1)",
            });
        }
        if !(self.prune_fraction >= T::zero() && self.prune_fraction < T::one()) {
            return Err(Error::Domain {
                name: "prune_fraction",
                value: self.prune_fraction.as_f64(),
                expected: "in [0, 1)",
            });
        }
        let counts = [
            ("cg_max_iter", self.cg_max_iter),
            ("outer_iters_per_level", self.outer_iters_per_level),
            ("w_solver_max_iter", self.w_solver_max_iter),
            ("min_kernel_px", self.min_kernel_px),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Domain {
                    name,
                    value: 0.0,
                    expected: ">= 1",
                });
            }
        }
        if self.levels == Some(0) {
            return Err(Error::Domain {
                name: "levels",
                value: 0.0,
                expected: ">= 1",
            });
        }
        Ok(())
    }

    fn cg_options(&self) -> CgOptions<T> {
        CgOptions {
            tol: self.cg_tol,
            max_iter: self.cg_max_iter,
        }
    }
}

/// Iterate of the blind solver on one pyramid level.
#[derive(Debug, Clone)]
pub struct SolverState<T> {
    pub x: GradientImage<T>,
    pub gamma: [Plane<T>; 2],
    pub w: Vec<T>,
    pub lambda: T,
    /// Cached `||w_i||^2` for the current `w`.
    pub norms: LocalKernelNormField<T>,
    /// Latent variances from the last latent update.
    pub z: [Plane<T>; 2],
}

impl<T: Real> SolverState<T> {
    /// `x = y`, `gamma = y^2 + offset`, norms from `w`.
    pub fn new(y: &GradientImage<T>, w: Vec<T>, lambda: T, eff: &EffDecomposition<T>, cfg: &SolverConfig<T>) -> Result<Self> {
        y.check_dim(eff.dim())?;
        if !(lambda > T::zero()) {
            return Err(Error::Domain {
                name: "lambda",
                value: lambda.as_f64(),
                expected: "> 0",
            });
        }
        if w.iter().any(|&v| !(v >= T::zero())) {
            return Err(Error::Invalid("blur weights must be nonnegative".into()));
        }
        let floor = cfg.gamma_floor;
        let off = cfg.gamma_init_offset;
        let gamma = [0, 1].map(|c| y.channel(c).mapv(|v| (v * v + off).max(floor)));
        let norms = local_kernel_norms(&w, eff)?;
        let (h, wd) = y.dim();
        Ok(Self {
            x: y.clone(),
            gamma,
            w,
            lambda,
            norms,
            z: [Plane::zeros((h, wd)), Plane::zeros((h, wd))],
        })
    }

    pub fn refresh_norms(&mut self, eff: &EffDecomposition<T>) -> Result<()> {
        self.norms = local_kernel_norms(&self.w, eff)?;
        Ok(())
    }
}

/// `z_i = 1 / (s_i / lambda + 1 / gamma_i)`, written to avoid dividing by a
/// tiny `gamma`.
#[inline]
pub fn latent_variance<T: Real>(gamma: T, s: T, lambda: T) -> T {
    gamma * lambda / (lambda + gamma * s)
}

/// Tangent weights `z` at the current `(gamma, w, lambda)`.
pub fn tangent_z<T: Real>(state: &SolverState<T>) -> [Plane<T>; 2] {
    let lambda = state.lambda;
    [0, 1].map(|c| {
        let mut z = state.gamma[c].clone();
        ndarray::Zip::from(&mut z)
            .and(&state.norms.norms_sq)
            .for_each(|g, &s| *g = latent_variance(*g, s, lambda));
        z
    })
}

/// Per-pixel part of the bound.
#[inline]
fn pixel_term<T: Real>(x: T, gamma: T, lambda: T, s: T) -> T {
    x * x / gamma + (lambda + gamma * s).ln()
}

fn data_fit<T: Real>(y: &GradientImage<T>, hx: &GradientImage<T>) -> T {
    y.sub(hx).norm_sq()
}

/// Bound from a precomputed data fit `||y - H x||^2`. Summation order is fixed
/// (channel, then row-major) so that termwise comparisons carry over.
fn bound_from_fit<T: Real>(state: &SolverState<T>, fit: T, d: T) -> T {
    let lambda = state.lambda;
    let mut acc = (fit + d) / lambda;
    for c in 0..2 {
        for ((x, g), s) in state.x.channel(c).iter().zip(state.gamma[c].iter()).zip(state.norms.norms_sq.iter()) {
            acc += pixel_term(*x, *g, lambda, *s);
        }
    }
    acc
}

/// The bound `L`, plus the constant `d / lambda` the noise update accounts
/// for. `state.norms` must match `state.w`.
pub fn eval_bound<T: Real>(state: &SolverState<T>, y: &GradientImage<T>, eff: &EffDecomposition<T>, d: T) -> Result<T> {
    let hx = apply_blur(&state.x, &state.w, eff)?;
    Ok(bound_from_fit(state, data_fit(y, &hx), d))
}

/// Image update: per channel, `(H^T H + lambda Gamma^-1) x = H^T y` by
/// preconditioned CG from the current `x`. Pixels whose `gamma` sits at the
/// floor are held at zero.
pub fn update_image<T: Real>(
    state: &SolverState<T>,
    y: &GradientImage<T>,
    eff: &EffDecomposition<T>,
    cfg: &SolverConfig<T>,
) -> Result<(GradientImage<T>, [CgStatus<T>; 2])> {
    y.check_dim(eff.dim())?;
    let kernels = eff.kernels(&state.w)?;
    let lambda = state.lambda;
    let floor = cfg.gamma_floor;
    let opts = cfg.cg_options();
    let mut out = Vec::with_capacity(2);
    let mut status = Vec::with_capacity(2);
    for c in 0..2 {
        let gamma = &state.gamma[c];
        let free = gamma.mapv(|g| if g > floor { T::one() } else { T::zero() });
        let reg = gamma.mapv(|g| if g > floor { lambda / g } else { T::one() });
        let precond = ndarray::Zip::from(&reg)
            .and(&free)
            .and(&state.norms.norms_sq)
            .map_collect(|&r, &f, &s| if f > T::zero() { T::one() / (s + r) } else { T::one() });
        let mut rhs = eff.blur_adjoint_plane(y.channel(c), &kernels)?;
        rhs *= &free;
        let mut x = state.x.channel(c) * &free;
        let apply = |v: &Plane<T>| -> Result<Plane<T>> {
            let mv = v * &free;
            let hv = eff.blur_plane(&mv, &kernels)?;
            let mut out = eff.blur_adjoint_plane(&hv, &kernels)?;
            out *= &free;
            out += &(v * &reg);
            Ok(out)
        };
        let st = conjugate_gradient(apply, &rhs, &mut x, Some(&precond), &opts)?;
        x *= &free;
        out.push(x);
        status.push(st);
    }
    let [a, b]: [Plane<T>; 2] = out.try_into().expect("two channels");
    Ok((GradientImage::new(a, b)?, [status[0], status[1]]))
}

/// Latent update from the pre-update `gamma`: `z = 1/(s/lambda + 1/gamma)`,
/// `gamma' = max(x^2 + z, floor)`. A pixel keeps its old `gamma` if the new one
/// would not lower its term of the bound in floating point.
pub fn update_latent<T: Real>(state: &SolverState<T>, gamma_floor: T) -> ([Plane<T>; 2], [Plane<T>; 2]) {
    let lambda = state.lambda;
    let mut gammas = state.gamma.clone();
    let mut zs = state.gamma.clone();
    for c in 0..2 {
        ndarray::Zip::from(&mut gammas[c])
            .and(&mut zs[c])
            .and(state.x.channel(c))
            .and(&state.norms.norms_sq)
            .for_each(|g, z, &x, &s| {
                let old = *g;
                let zi = latent_variance(old, s, lambda);
                let new = (x * x + zi).max(gamma_floor);
                *z = zi;
                if pixel_term(x, new, lambda, s) <= pixel_term(x, old, lambda, s) {
                    *g = new;
                }
            });
    }
    (gammas, zs)
}

/// Outcome of the blur subproblem solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlurStatus<T> {
    pub iterations: usize,
    pub rejected_steps: usize,
    pub converged: bool,
    /// Subproblem objective `||y - D w||^2 + w^T Q w` before and after.
    pub objective_before: T,
    pub objective_after: T,
}

/// Quadratic blur subproblem `min_{w >= 0} ||y - D w||^2 + w^T Q w`, where
/// `D w = H(w) x` and `Q = sum_r c_r A_r^T A_r`.
pub struct BlurProblem<'a, T> {
    pub x: &'a GradientImage<T>,
    pub y: &'a GradientImage<T>,
    pub eff: &'a EffDecomposition<T>,
    /// Patch coefficients `c_r` of `Q`.
    pub coeffs: Vec<T>,
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&u, &v)| acc + u * v)
}

impl<'a, T: Real> BlurProblem<'a, T> {
    /// Regularizer coefficients from latent weights `z` (summed over
    /// channels) and a scalar factor.
    pub fn from_latent(
        x: &'a GradientImage<T>,
        y: &'a GradientImage<T>,
        eff: &'a EffDecomposition<T>,
        z: &[Plane<T>; 2],
    ) -> Self {
        let zsum = &z[0] + &z[1];
        let coeffs = eff.window_sums(&zsum);
        Self { x, y, eff, coeffs }
    }

    pub fn objective(&self, w: &[T]) -> Result<T> {
        let dw = apply_blur(self.x, w, self.eff)?;
        let qw = self.eff.weighted_gram_apply(&self.coeffs, w)?;
        Ok(data_fit(self.y, &dw) + dot(w, &qw))
    }

    /// Projected gradient from `w0` with Barzilai-Borwein steps and an exact
    /// line search along each feasible direction. Returns the new weights and
    /// `D w`.
    pub fn solve(&self, w0: &[T], tol: T, max_iter: usize) -> Result<(Vec<T>, GradientImage<T>, BlurStatus<T>)> {
        let eff = self.eff;
        let two = T::lit(2.0);
        let n = w0.len();
        let b = apply_d_transpose(self.y, self.x, eff)?;
        let mut w = w0.to_vec();
        let mut dw = apply_blur(self.x, &w, eff)?;
        let mut qw = eff.weighted_gram_apply(&self.coeffs, &w)?;
        let dtdw = apply_d_transpose(&dw, self.x, eff)?;
        let mut g: Vec<T> = (0..n).map(|j| two * (dtdw[j] - b[j] + qw[j])).collect();
        let f0 = data_fit(self.y, &dw) + dot(&w, &qw);
        let mut f = f0;
        let mut step: Option<T> = None;
        let mut rejected = 0;
        let mut converged = false;
        let mut iterations = 0;

        'outer: for it in 0..max_iter {
            iterations = it + 1;
            let mut t = match step {
                Some(t) => t,
                None => {
                    // Cauchy step along the projected steepest descent direction
                    let dir: Vec<T> = (0..n)
                        .map(|j| if w[j] > T::zero() || g[j] < T::zero() { -g[j] } else { T::zero() })
                        .collect();
                    let gg = -dot(&g, &dir);
                    if !(gg > T::zero()) {
                        converged = true;
                        break;
                    }
                    let ddir = apply_blur(self.x, &dir, eff)?;
                    let qdir = eff.weighted_gram_apply(&self.coeffs, &dir)?;
                    let quad = ddir.norm_sq() + dot(&dir, &qdir);
                    if quad > T::zero() {
                        gg / (two * quad)
                    } else {
                        T::one()
                    }
                }
            };
            loop {
                let d: Vec<T> = (0..n).map(|j| (w[j] - t * g[j]).max(T::zero()) - w[j]).collect();
                if d.iter().all(|&v| v == T::zero()) {
                    converged = true;
                    break 'outer;
                }
                let slope = dot(&g, &d);
                let (dd, qd, quad) = if slope < T::zero() {
                    let dd = apply_blur(self.x, &d, eff)?;
                    let qd = eff.weighted_gram_apply(&self.coeffs, &d)?;
                    let quad = dd.norm_sq() + dot(&d, &qd);
                    (Some(dd), qd, quad)
                } else {
                    (None, Vec::new(), T::zero())
                };
                let alpha = if quad > T::zero() {
                    (-slope / (two * quad)).min(T::one())
                } else {
                    T::one()
                };
                let decrease = alpha * slope + alpha * alpha * quad;
                if let (Some(dd), true) = (dd, slope < T::zero() && decrease < T::zero()) {
                    let dtdd = apply_d_transpose(&dd, self.x, eff)?;
                    let w_old = w.clone();
                    let g_old = g.clone();
                    for j in 0..n {
                        w[j] = (w[j] + alpha * d[j]).max(T::zero());
                        qw[j] += alpha * qd[j];
                        g[j] += two * alpha * (dtdd[j] + qd[j]);
                    }
                    for c in 0..2 {
                        dw.channels_mut()[c].scaled_add(alpha, dd.channel(c));
                    }
                    let f_new = f + decrease;
                    let s: Vec<T> = (0..n).map(|j| w[j] - w_old[j]).collect();
                    let yv: Vec<T> = (0..n).map(|j| g[j] - g_old[j]).collect();
                    let sy = dot(&s, &yv);
                    step = Some(if sy > T::zero() { dot(&s, &s) / sy } else { t * two });
                    let rel = (f - f_new) / f.abs().max(T::min_positive_value());
                    f = f_new;
                    if rel < tol {
                        converged = true;
                        break 'outer;
                    }
                    break;
                }
                rejected += 1;
                t = t / two;
                if t < T::epsilon() * T::epsilon() {
                    converged = true;
                    break 'outer;
                }
            }
        }

        // re-evaluate exactly and never hand back a worse point
        let dw_exact = apply_blur(self.x, &w, eff)?;
        let qw_exact = eff.weighted_gram_apply(&self.coeffs, &w)?;
        let f_exact = data_fit(self.y, &dw_exact) + dot(&w, &qw_exact);
        let (w, dw, f_after) = if f_exact <= f0 {
            (w, dw_exact, f_exact)
        } else {
            let dw0 = apply_blur(self.x, w0, eff)?;
            (w0.to_vec(), dw0, f0)
        };
        Ok((
            w,
            dw,
            BlurStatus {
                iterations,
                rejected_steps: rejected,
                converged,
                objective_before: f0,
                objective_after: f_after,
            },
        ))
    }
}

/// Blur update with tangent weights taken at the current state.
pub fn update_blur<T: Real>(
    state: &SolverState<T>,
    y: &GradientImage<T>,
    eff: &EffDecomposition<T>,
    cfg: &SolverConfig<T>,
) -> Result<(Vec<T>, GradientImage<T>, BlurStatus<T>)> {
    let z = tangent_z(state);
    let problem = BlurProblem::from_latent(&state.x, y, eff, &z);
    problem.solve(&state.w, cfg.w_solver_tol, cfg.w_solver_max_iter)
}

/// `lambda = (||y - H x||^2 + beta + d) / n` with `beta = sum_i z_i ||w_i||^2`
/// and `z` the tangent weights at the current state.
pub fn update_noise_from_fit<T: Real>(state: &SolverState<T>, fit: T, n: usize, d: T) -> T {
    let z = tangent_z(state);
    let mut beta = T::zero();
    for zc in &z {
        for (zi, s) in zc.iter().zip(state.norms.norms_sq.iter()) {
            beta += *zi * *s;
        }
    }
    (fit + beta + d) / T::from_usize_lossy(n)
}

pub fn update_noise<T: Real>(
    state: &SolverState<T>,
    y: &GradientImage<T>,
    eff: &EffDecomposition<T>,
    n: usize,
    d: T,
) -> Result<T> {
    let hx = apply_blur(&state.x, &state.w, eff)?;
    Ok(update_noise_from_fit(state, data_fit(y, &hx), n, d))
}

/// Bound after each block of one outer iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockBounds<T> {
    pub start: T,
    pub image: T,
    pub latent: T,
    pub blur: T,
    pub noise: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord<T> {
    pub level: usize,
    pub iter: usize,
    pub bound: T,
    pub lambda: T,
    pub w_change: T,
    pub blocks: BlockBounds<T>,
    pub cg: [CgStatus<T>; 2],
    pub blur: BlurStatus<T>,
    /// Minimum `gamma` over both channels after the latent update.
    pub min_gamma: T,
    /// `d / n` for this level.
    pub lambda_floor: T,
    /// The active-set update changed the grid after this iteration.
    pub grid_changed: bool,
}

/// Pyramid level handed to [`run_level`].
pub struct Level<'a, T> {
    pub index: usize,
    pub y: &'a GradientImage<T>,
    /// Linear scale of this level relative to full resolution.
    pub scale: T,
    pub patch_size: usize,
    pub overlap: usize,
}

pub struct LevelOutcome<T> {
    pub state: SolverState<T>,
    /// Full-resolution grid (changes only through the active-set update).
    pub grid: PoseGrid<T>,
    pub eff: EffDecomposition<T>,
    pub records: Vec<IterationRecord<T>>,
    /// Last image update converged on both channels.
    pub cg_converged: bool,
}

/// EFF for `grid_full` seen at `scale` on an image of `dim`.
pub fn level_eff<T: Real>(
    grid_full: &PoseGrid<T>,
    scale: T,
    dim: (usize, usize),
    patch_size: usize,
    overlap: usize,
) -> Result<EffDecomposition<T>> {
    let (h, w) = dim;
    let grid = grid_full.scaled(scale);
    let k = EffSpec::kernel_size_for(grid.max_displacement(w, h));
    build_eff(&grid, h, w, &EffSpec::new(patch_size, overlap, k))
}

/// Initial weights: half on the identity pose (or the pose nearest to it),
/// half spread uniformly over the nine poses sharing its rotation that are
/// nearest in translation.
pub fn initial_weights<T: Real>(grid: &PoseGrid<T>, width: usize, height: usize) -> Vec<T> {
    let radius = corner_radius::<T>(width, height);
    let id = grid.nearest(&Pose::identity(), radius);
    let p0 = grid.poses()[id];
    let eps = T::lit(1e-12);
    let mut near: Vec<(T, usize)> = grid
        .poses()
        .iter()
        .enumerate()
        .filter(|(_, p)| (p.theta - p0.theta).abs() < eps)
        .map(|(j, p)| ((p.tx - p0.tx).hypot(p.ty - p0.ty), j))
        .collect();
    near.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    near.truncate(9);
    let mut w = vec![T::zero(); grid.len()];
    w[id] += T::lit(0.5);
    let share = T::lit(0.5) / T::from_usize_lossy(near.len());
    for &(_, j) in &near {
        w[j] += share;
    }
    w
}

fn normalize<T: Real>(w: &mut [T]) -> Result<()> {
    let s: T = w.iter().copied().sum();
    if !(s > T::zero()) {
        return Err(Error::ZeroWeights);
    }
    for v in w.iter_mut() {
        *v /= s;
    }
    Ok(())
}

fn l1_change<T: Real>(a: &[T], b: &[T]) -> T {
    let num = a.iter().zip(b).fold(T::zero(), |acc, (&u, &v)| acc + (u - v).abs());
    let den = a.iter().fold(T::zero(), |acc, &u| acc + u.abs());
    if den > T::zero() {
        num / den
    } else {
        T::zero()
    }
}

/// Outer loop on one level: image, latent, blur and noise updates until the
/// relative weight change drops below `w_change_tol` or the iteration budget
/// runs out. `w` is renormalized to unit sum on entry.
pub fn run_level<T: Real>(
    level: &Level<'_, T>,
    grid_full: &PoseGrid<T>,
    mut state: SolverState<T>,
    cfg: &SolverConfig<T>,
    observer: &mut dyn FnMut(&IterationRecord<T>),
) -> Result<LevelOutcome<T>> {
    cfg.validate()?;
    let y = level.y;
    let mut grid = grid_full.clone();
    let mut eff = level_eff(grid_full, level.scale, y.dim(), level.patch_size, level.overlap)?;
    if state.w.len() != grid.len() {
        return Err(Error::Length {
            what: "blur weights",
            expected: grid.len(),
            got: state.w.len(),
        });
    }
    normalize(&mut state.w)?;
    state.refresh_norms(&eff)?;
    let n = y.len();
    let d = T::from_usize_lossy(n) * cfg.d_coefficient;
    let lambda_floor = d / T::from_usize_lossy(n);
    state.lambda = state.lambda.max(lambda_floor);

    let mut hx = apply_blur(&state.x, &state.w, &eff)?;
    let mut bound = bound_from_fit(&state, data_fit(y, &hx), d);
    let mut records = Vec::new();
    let mut cg_converged = true;

    for iter in 0..cfg.outer_iters_per_level {
        let start = bound;

        let (x, cg) = update_image(&state, y, &eff, cfg)?;
        state.x = x;
        cg_converged = cg.iter().all(|s| s.converged);
        if !cg_converged {
            debug!(
                "level {} iter {}: image CG residuals {} / {}",
                level.index, iter, cg[0].rel_residual, cg[1].rel_residual
            );
        }
        let kernels = eff.kernels(&state.w)?;
        hx = apply_blur_with(&state.x, &kernels, &eff)?;
        let fit = data_fit(y, &hx);
        let after_image = bound_from_fit(&state, fit, d);

        let (gamma, z) = update_latent(&state, cfg.gamma_floor);
        state.gamma = gamma;
        state.z = z;
        let after_latent = bound_from_fit(&state, fit, d);
        let min_gamma = state
            .gamma
            .iter()
            .flat_map(|g| g.iter())
            .fold(T::infinity(), |m, &v| m.min(v));

        let w_prev = state.w.clone();
        let (w, dw, blur) = update_blur(&state, y, &eff, cfg)?;
        state.w = w;
        state.refresh_norms(&eff)?;
        hx = dw;
        let fit = data_fit(y, &hx);
        let after_blur = bound_from_fit(&state, fit, d);

        let lambda_new = update_noise_from_fit(&state, fit, n, d);
        let lambda_old = state.lambda;
        state.lambda = lambda_new;
        let mut after_noise = bound_from_fit(&state, fit, d);
        if after_noise > after_blur {
            state.lambda = lambda_old;
            after_noise = after_blur;
        }
        bound = after_noise;

        let w_change = l1_change(&w_prev, &state.w);
        let mut record = IterationRecord {
            level: level.index,
            iter,
            bound,
            lambda: state.lambda,
            w_change,
            blocks: BlockBounds {
                start,
                image: after_image,
                latent: after_latent,
                blur: after_blur,
                noise: after_noise,
            },
            cg,
            blur,
            min_gamma,
            lambda_floor,
            grid_changed: false,
        };

        let done = w_change < cfg.w_change_tol || iter + 1 == cfg.outer_iters_per_level;
        if !done && cfg.active_set_every > 0 && (iter + 1) % cfg.active_set_every == 0 {
            if let Some(lattice) = grid.lattice().copied() {
                let round = (level.index * cfg.outer_iters_per_level + iter) as u64;
                let seed = child_seed(cfg.seed, Subsystem::ActiveSet, round);
                let (w_new, g_new) =
                    active_set_update(&state.w, &grid, cfg.prune_fraction, ResampleSigma::from_lattice(&lattice), seed)?;
                if g_new != grid {
                    grid = g_new;
                    state.w = w_new;
                    eff = level_eff(&grid, level.scale, y.dim(), level.patch_size, level.overlap)?;
                    state.refresh_norms(&eff)?;
                    hx = apply_blur(&state.x, &state.w, &eff)?;
                    bound = bound_from_fit(&state, data_fit(y, &hx), d);
                    record.grid_changed = true;
                }
            }
        }
        observer(&record);
        records.push(record);
        if done {
            break;
        }
    }
    Ok(LevelOutcome {
        state,
        grid,
        eff,
        records,
        cg_converged,
    })
}

/// Output of the coarse-to-fine driver at full resolution.
pub struct Estimate<T> {
    pub w: Vec<T>,
    pub grid: PoseGrid<T>,
    pub lambda: T,
    pub rho: Plane<T>,
    pub x: GradientImage<T>,
    pub norms: LocalKernelNormField<T>,
    pub eff: EffDecomposition<T>,
    pub trace: Vec<IterationRecord<T>>,
    pub levels: usize,
    /// Image-update CG converged at the last iteration of the finest level.
    pub converged: bool,
}

/// Number of pyramid levels that brings the kernel extent `2 m + 1` (for a
/// maximum displacement `m`) down to about `min_kernel_px`.
pub fn auto_levels(max_disp: f64, scale: f64, min_kernel_px: usize) -> usize {
    let extent = 2.0 * max_disp + 1.0;
    let ratio = extent / min_kernel_px as f64;
    if ratio <= 1.0 {
        return 1;
    }
    1 + (ratio.ln() / (1.0 / scale).ln()).round().max(0.0) as usize
}

/// Coarse-to-fine blind estimation on an intensity plane `y` (luma). Each
/// level starts from its own blurry gradients; `w` (indexed by the
/// full-resolution grid) and `lambda` are carried between levels.
pub fn run_multiscale<T: Real>(
    y: &Plane<T>,
    grid: &PoseGrid<T>,
    patch_size: usize,
    overlap: usize,
    cfg: &SolverConfig<T>,
    observer: &mut dyn FnMut(&IterationRecord<T>),
) -> Result<Estimate<T>> {
    cfg.validate()?;
    let (h, w) = y.dim();
    if h == 0 || w == 0 {
        return Err(Error::Invalid("empty image".into()));
    }
    let scale = cfg.pyramid_scale.as_f64();
    let n_levels = match cfg.levels {
        Some(l) => l,
        None => auto_levels(grid.max_displacement(w, h).as_f64(), scale, cfg.min_kernel_px),
    };
    let pyramid = build_pyramid(y, scale, n_levels)?;
    let n_levels = pyramid.len();

    let mut grid = grid.clone();
    let mut weights = initial_weights(&grid, w, h);
    let mut lambda: Option<T> = None;
    let mut trace = Vec::new();
    let mut last = None;
    for li in (0..n_levels).rev() {
        let plane = &pyramid[li];
        let yl = gradient_plane(plane);
        let s = cfg.pyramid_scale.powi(li as i32);
        let ps = ((patch_size as f64 * s.as_f64()).round() as usize).max(8);
        let ov = (overlap as f64 * s.as_f64()).round() as usize;
        let eff = level_eff(&grid, s, yl.dim(), ps, ov)?;
        let lam = lambda.unwrap_or_else(|| (yl.norm_sq() / T::from_usize_lossy(yl.len())).max(cfg.d_coefficient));
        let state = SolverState::new(&yl, weights.clone(), lam, &eff, cfg)?;
        let lvl = Level {
            index: li,
            y: &yl,
            scale: s,
            patch_size: ps,
            overlap: ov,
        };
        let out = run_level(&lvl, &grid, state, cfg, observer)?;
        trace.extend(out.records.iter().cloned());
        weights = out.state.w.clone();
        lambda = Some(out.state.lambda);
        grid = out.grid.clone();
        last = Some(out);
    }
    let mut out = last.expect("at least one level");
    if !out.cg_converged {
        warn!("image update did not reach the CG tolerance at the finest level");
    }
    // emit w on the simplex; H x is unchanged by moving the scale into x
    let total: T = out.state.w.iter().copied().sum();
    normalize(&mut out.state.w)?;
    out.state.x = out.state.x.scaled(total);
    out.state.refresh_norms(&out.eff)?;
    let rho = rho_map(&out.state.norms, out.state.lambda)?;
    Ok(Estimate {
        w: out.state.w,
        grid: out.grid,
        lambda: out.state.lambda,
        rho,
        x: out.state.x,
        norms: out.state.norms,
        eff: out.eff,
        trace,
        levels: n_levels,
        converged: out.cg_converged,
    })
}
