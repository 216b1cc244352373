//! Patchwise ("efficient filter flow") realization of the projective blur
//! operator `H = sum_j w_j P_j`.
//!
//! The image is covered by overlapping patches whose windows form a partition
//! of unity. Inside patch `r` the blur is a plain convolution with the local
//! kernel `A_r w`, where column `j` of `A_r` is the bilinear splat of a unit
//! delta at the patch center moved through pose `j`. Hence
//!
//! ```text
//! H x = sum_r k_r * (win_r . x),        k_r = A_r w
//! ```
//!
//! Convolutions use replicate-edge extension of the windowed image, which is
//! a linear map; every operator here has an exact adjoint.

use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{GradientImage, Plane};
use crate::pose::{image_center, Pose, PoseGrid};
use crate::real::Real;

/// Patch layout and kernel support.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EffSpec {
    /// Nominal patch edge length in pixels.
    pub patch_size: usize,
    /// Width of the raised-cosine transition between neighbouring patches.
    pub overlap: usize,
    /// Odd local-kernel edge length `K`.
    pub kernel_size: usize,
}

impl EffSpec {
    pub fn new(patch_size: usize, overlap: usize, kernel_size: usize) -> Self {
        Self {
            patch_size,
            overlap,
            kernel_size,
        }
    }

    /// Smallest odd kernel size that holds a displacement of `max_disp`
    /// pixels plus the bilinear footprint.
    pub fn kernel_size_for<T: Real>(max_disp: T) -> usize {
        let r = max_disp.ceil().to_usize().unwrap_or(0) + 1;
        2 * r + 1
    }
}

/// Sparse columns of a patch basis: column `j` occupies
/// `taps[offsets[j]..offsets[j + 1]]`, each tap `(flat kernel index, weight)`.
#[derive(Debug, Clone)]
struct Basis<T> {
    offsets: Vec<usize>,
    taps: Vec<(usize, T)>,
}

#[derive(Debug, Clone)]
struct Patch<T> {
    /// Window support `[r0, r1) x [c0, c1)`.
    r0: usize,
    r1: usize,
    c0: usize,
    c1: usize,
    /// Separable window factors over the support.
    wy: Vec<T>,
    wx: Vec<T>,
    center: (T, T),
    basis: Basis<T>,
}

impl<T: Real> Patch<T> {
    #[inline]
    fn window(&self, row: usize, col: usize) -> T {
        if row < self.r0 || row >= self.r1 || col < self.c0 || col >= self.c1 {
            T::zero()
        } else {
            self.wy[row - self.r0] * self.wx[col - self.c0]
        }
    }
}

/// Patch windows plus per-patch basis kernels.
#[derive(Debug, Clone)]
pub struct EffDecomposition<T> {
    height: usize,
    width: usize,
    kernel_size: usize,
    grid_rows: usize,
    grid_cols: usize,
    n_poses: usize,
    patches: Vec<Patch<T>>,
}

/// Dense local kernels `k_r = A_r w`, one `K x K` row-major vector per patch.
#[derive(Debug, Clone)]
pub struct LocalKernels<T> {
    kernels: Vec<Vec<T>>,
}

impl<T: Real> LocalKernels<T> {
    pub fn get(&self, patch: usize) -> &[T] {
        &self.kernels[patch]
    }

    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }
}

/// Per-pixel squared local-kernel norms `||w_i||^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalKernelNormField<T> {
    pub norms_sq: Plane<T>,
}

/// Bilinear splat of a unit delta displaced by `disp` into a `K x K` kernel
/// centered at `(K/2, K/2)`. Returns `None` when a tap with non-negligible
/// weight falls outside the kernel.
pub fn splat_delta<T: Real>(disp: (T, T), kernel_size: usize) -> Option<Vec<(usize, T)>> {
    let rad = T::from_usize_lossy(kernel_size / 2);
    let u = rad + disp.0;
    let v = rad + disp.1;
    let u0 = u.floor();
    let v0 = v.floor();
    let fx = u - u0;
    let fy = v - v0;
    let one = T::one();
    let cand = [
        (v0, u0, (one - fx) * (one - fy)),
        (v0, u0 + one, fx * (one - fy)),
        (v0 + one, u0, (one - fx) * fy),
        (v0 + one, u0 + one, fx * fy),
    ];
    let tiny = T::lit(1e-12);
    let k = T::from_usize_lossy(kernel_size);
    let mut taps = Vec::with_capacity(4);
    let mut mass = T::zero();
    for &(row, col, wgt) in &cand {
        if wgt <= tiny {
            continue;
        }
        if row < T::zero() || col < T::zero() || row >= k || col >= k {
            return None;
        }
        let idx = row.to_usize()? * kernel_size + col.to_usize()?;
        taps.push((idx, wgt));
        mass += wgt;
    }
    for t in &mut taps {
        t.1 = t.1 / mass;
    }
    Some(taps)
}

/// The exact local kernel of pose `pose` at pixel `(x, y)`: column of the
/// per-pixel basis `B_i`, as a dense `K x K` vector.
pub fn exact_basis_column<T: Real>(
    pose: &Pose<T>,
    x: T,
    y: T,
    center: (T, T),
    kernel_size: usize,
) -> Option<Vec<T>> {
    let taps = splat_delta(pose.displacement(x, y, center), kernel_size)?;
    let mut col = vec![T::zero(); kernel_size * kernel_size];
    for (i, v) in taps {
        col[i] += v;
    }
    Some(col)
}

/// Partition-of-unity weights along one axis: `n` segments of length
/// `len / n`, blended by raised-cosine ramps of width `overlap`.
fn axis_windows<T: Real>(len: usize, n: usize, overlap: usize) -> Vec<Vec<T>> {
    let seg = T::from_usize_lossy(len) / T::from_usize_lossy(n);
    let ov = T::from_usize_lossy(overlap);
    let half_pi = T::lit(std::f64::consts::FRAC_PI_2);
    // frac[k][p]: share of pixel p lying beyond boundary k (k = 0..=n)
    let beyond = |k: usize, p: usize| -> T {
        if k == 0 {
            return T::one();
        }
        if k == n {
            return T::zero();
        }
        let b = seg * T::from_usize_lossy(k);
        let pc = T::from_usize_lossy(p) + T::lit(0.5);
        if ov <= T::zero() {
            return if pc >= b { T::one() } else { T::zero() };
        }
        let t = ((pc - (b - ov / T::lit(2.0))) / ov).max(T::zero()).min(T::one());
        let s = (half_pi * t).sin();
        s * s
    };
    (0..n)
        .map(|i| (0..len).map(|p| beyond(i, p) - beyond(i + 1, p)).collect())
        .collect()
}

fn support(win: &[impl Real]) -> (usize, usize) {
    let first = win.iter().position(|v| *v > Real::lit(0.0)).unwrap_or(0);
    let last = win.iter().rposition(|v| *v > Real::lit(0.0)).map_or(first, |l| l + 1);
    (first, last)
}

/// Builds windows and basis kernels for `pose_grid` on a `height x width`
/// image.
pub fn build_eff<T: Real>(
    pose_grid: &PoseGrid<T>,
    height: usize,
    width: usize,
    spec: &EffSpec,
) -> Result<EffDecomposition<T>> {
    let k = spec.kernel_size;
    if k % 2 == 0 || k == 0 {
        return Err(Error::Invalid(format!("kernel size must be odd, got {k}")));
    }
    if spec.patch_size == 0 {
        return Err(Error::Invalid("patch size must be positive".into()));
    }
    if width < k || height < k {
        return Err(Error::ImageTooSmall {
            width,
            height,
            kernel_size: k,
        });
    }
    let ny = ((height as f64 / spec.patch_size as f64).round() as usize).max(1);
    let nx = ((width as f64 / spec.patch_size as f64).round() as usize).max(1);
    let wys = axis_windows::<T>(height, ny, spec.overlap);
    let wxs = axis_windows::<T>(width, nx, spec.overlap);
    let img_center = image_center::<T>(width, height);
    let half = T::lit(0.5);

    let mut patches = Vec::with_capacity(ny * nx);
    for (py, wy) in wys.iter().enumerate() {
        let (r0, r1) = support(wy);
        let cy = T::from_usize_lossy(py * 2 + 1) * T::from_usize_lossy(height) / T::from_usize_lossy(2 * ny) - half;
        for (px, wx) in wxs.iter().enumerate() {
            let (c0, c1) = support(wx);
            let cx =
                T::from_usize_lossy(px * 2 + 1) * T::from_usize_lossy(width) / T::from_usize_lossy(2 * nx) - half;
            let patch_idx = patches.len();
            let mut offsets = Vec::with_capacity(pose_grid.len() + 1);
            let mut taps = Vec::with_capacity(4 * pose_grid.len());
            offsets.push(0);
            for (j, pose) in pose_grid.poses().iter().enumerate() {
                let col = splat_delta(pose.displacement(cx, cy, img_center), k).ok_or(Error::KernelTooSmall {
                    kernel_size: k,
                    pose: j,
                    theta: pose.theta.as_f64(),
                    tx: pose.tx.as_f64(),
                    ty: pose.ty.as_f64(),
                    patch: patch_idx,
                })?;
                taps.extend(col);
                offsets.push(taps.len());
            }
            patches.push(Patch {
                r0,
                r1,
                c0,
                c1,
                wy: wy[r0..r1].to_vec(),
                wx: wx[c0..c1].to_vec(),
                center: (cx, cy),
                basis: Basis { offsets, taps },
            });
        }
    }
    Ok(EffDecomposition {
        height,
        width,
        kernel_size: k,
        grid_rows: ny,
        grid_cols: nx,
        n_poses: pose_grid.len(),
        patches,
    })
}

/// Output region and replicate-extended windowed input of one patch.
struct Extended<T> {
    /// Global coordinates of `data[0][0]`.
    org_r: isize,
    org_c: isize,
    data: Array2<T>,
}

impl<T: Real> EffDecomposition<T> {
    pub fn dim(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel_size
    }

    pub fn n_poses(&self) -> usize {
        self.n_poses
    }

    pub fn n_patches(&self) -> usize {
        self.patches.len()
    }

    /// Patch grid shape `(rows, cols)`.
    pub fn patch_grid(&self) -> (usize, usize) {
        (self.grid_rows, self.grid_cols)
    }

    pub fn patch_center(&self, r: usize) -> (T, T) {
        self.patches[r].center
    }

    /// Window weight of patch `r` at pixel `(row, col)`.
    pub fn window(&self, r: usize, row: usize, col: usize) -> T {
        self.patches[r].window(row, col)
    }

    /// Dense `K^2 x J` basis matrix of patch `r`, row-major.
    pub fn basis_dense(&self, r: usize) -> Array2<T> {
        let b = &self.patches[r].basis;
        let kk = self.kernel_size * self.kernel_size;
        let mut a = Array2::zeros((kk, self.n_poses));
        for j in 0..self.n_poses {
            for &(i, v) in &b.taps[b.offsets[j]..b.offsets[j + 1]] {
                a[[i, j]] += v;
            }
        }
        a
    }

    fn check_weights(&self, w: &[T]) -> Result<()> {
        if w.len() != self.n_poses {
            return Err(Error::Length {
                what: "blur weights",
                expected: self.n_poses,
                got: w.len(),
            });
        }
        Ok(())
    }

    fn check_plane(&self, p: &Plane<T>) -> Result<()> {
        if p.dim() != (self.height, self.width) {
            return Err(Error::Dimension {
                expected: (self.height, self.width),
                got: p.dim(),
            });
        }
        Ok(())
    }

    /// `k_r = A_r w` for every patch.
    pub fn kernels(&self, w: &[T]) -> Result<LocalKernels<T>> {
        self.check_weights(w)?;
        let kk = self.kernel_size * self.kernel_size;
        let kernels = self
            .patches
            .iter()
            .map(|p| {
                let mut k = vec![T::zero(); kk];
                for (j, &wj) in w.iter().enumerate() {
                    if wj == T::zero() {
                        continue;
                    }
                    for &(i, v) in &p.basis.taps[p.basis.offsets[j]..p.basis.offsets[j + 1]] {
                        k[i] += wj * v;
                    }
                }
                k
            })
            .collect();
        Ok(LocalKernels { kernels })
    }

    /// `A_r^T k` accumulated into `out` with weight `scale`.
    fn basis_transpose_into(&self, r: usize, k: &[T], scale: T, out: &mut [T]) {
        let b = &self.patches[r].basis;
        for (j, o) in out.iter_mut().enumerate() {
            let mut acc = T::zero();
            for &(i, v) in &b.taps[b.offsets[j]..b.offsets[j + 1]] {
                acc += v * k[i];
            }
            *o += scale * acc;
        }
    }

    fn radius(&self) -> usize {
        self.kernel_size / 2
    }

    /// Rows/cols of outputs patch `r` can touch.
    fn output_region(&self, r: usize) -> (usize, usize, usize, usize) {
        let p = &self.patches[r];
        let rad = self.radius();
        (
            p.r0.saturating_sub(rad),
            (p.r1 + rad).min(self.height),
            p.c0.saturating_sub(rad),
            (p.c1 + rad).min(self.width),
        )
    }

    fn extend(&self, r: usize, x: &Plane<T>) -> Extended<T> {
        let p = &self.patches[r];
        let pad = 2 * self.radius();
        let org_r = p.r0 as isize - pad as isize;
        let org_c = p.c0 as isize - pad as isize;
        let eh = p.r1 - p.r0 + 2 * pad;
        let ew = p.c1 - p.c0 + 2 * pad;
        let mut data = Array2::zeros((eh, ew));
        let hmax = self.height as isize - 1;
        let wmax = self.width as isize - 1;
        for a in 0..eh {
            let gr = (org_r + a as isize).clamp(0, hmax) as usize;
            if gr < p.r0 || gr >= p.r1 {
                continue;
            }
            let wyv = p.wy[gr - p.r0];
            for b in 0..ew {
                let gc = (org_c + b as isize).clamp(0, wmax) as usize;
                if gc < p.c0 || gc >= p.c1 {
                    continue;
                }
                data[[a, b]] = wyv * p.wx[gc - p.c0] * x[[gr, gc]];
            }
        }
        Extended { org_r, org_c, data }
    }

    /// Adjoint of [`Self::extend`]: folds an extended buffer back onto the
    /// window support and applies the window.
    fn fold_into(&self, r: usize, ext: &Extended<T>, out: &mut Plane<T>) {
        let p = &self.patches[r];
        let (eh, ew) = ext.data.dim();
        let hmax = self.height as isize - 1;
        let wmax = self.width as isize - 1;
        let mut acc = Array2::<T>::zeros((p.r1 - p.r0, p.c1 - p.c0));
        for a in 0..eh {
            let gr = (ext.org_r + a as isize).clamp(0, hmax) as usize;
            if gr < p.r0 || gr >= p.r1 {
                continue;
            }
            for b in 0..ew {
                let gc = (ext.org_c + b as isize).clamp(0, wmax) as usize;
                if gc < p.c0 || gc >= p.c1 {
                    continue;
                }
                acc[[gr - p.r0, gc - p.c0]] += ext.data[[a, b]];
            }
        }
        for (i, row) in acc.outer_iter().enumerate() {
            let wyv = p.wy[i];
            for (j, &v) in row.iter().enumerate() {
                out[[p.r0 + i, p.c0 + j]] += wyv * p.wx[j] * v;
            }
        }
    }

    /// Convolution of one patch; returns the output region and its values.
    fn blur_patch(&self, r: usize, x: &Plane<T>, k: &[T]) -> (usize, usize, Array2<T>) {
        let (or0, or1, oc0, oc1) = self.output_region(r);
        let ext = self.extend(r, x);
        let kz = self.kernel_size;
        let rad = self.radius() as isize;
        let mut out = Array2::<T>::zeros((or1 - or0, oc1 - oc0));
        let ow = oc1 - oc0;
        for (ki, &kv) in k.iter().enumerate() {
            if kv == T::zero() {
                continue;
            }
            let uy = (ki / kz) as isize - rad;
            let ux = (ki % kz) as isize - rad;
            for (i, mut orow) in out.outer_iter_mut().enumerate() {
                let er = (or0 + i) as isize - uy - ext.org_r;
                let ec = oc0 as isize - ux - ext.org_c;
                let erow = ext.data.row(er as usize);
                let src = &erow.as_slice().expect("contiguous")[ec as usize..ec as usize + ow];
                for (o, &s) in orow.iter_mut().zip(src) {
                    *o += kv * s;
                }
            }
        }
        (or0, oc0, out)
    }

    /// Correlation of residual `res` with the extended buffer of `x`:
    /// `C(u) = sum_p res(p) E(p - u)`, returned as a dense `K x K` vector.
    fn correlate_patch(&self, r: usize, x: &Plane<T>, res: &Plane<T>) -> Vec<T> {
        let (or0, or1, oc0, oc1) = self.output_region(r);
        let ext = self.extend(r, x);
        let kz = self.kernel_size;
        let rad = self.radius() as isize;
        let ow = oc1 - oc0;
        let mut c = vec![T::zero(); kz * kz];
        for (ki, cv) in c.iter_mut().enumerate() {
            let uy = (ki / kz) as isize - rad;
            let ux = (ki % kz) as isize - rad;
            let mut acc = T::zero();
            for row in or0..or1 {
                let er = row as isize - uy - ext.org_r;
                let ec = oc0 as isize - ux - ext.org_c;
                let erow = ext.data.row(er as usize);
                let src = &erow.as_slice().expect("contiguous")[ec as usize..ec as usize + ow];
                let rrow = res.row(row);
                let rs = &rrow.as_slice().expect("contiguous")[oc0..oc1];
                for (&a, &b) in rs.iter().zip(src) {
                    acc += a * b;
                }
            }
            *cv = acc;
        }
        c
    }

    /// Adjoint convolution of one patch into a folded output plane.
    fn adjoint_patch(&self, r: usize, res: &Plane<T>, k: &[T], out: &mut Plane<T>) {
        let (or0, or1, oc0, oc1) = self.output_region(r);
        let p = &self.patches[r];
        let pad = 2 * self.radius();
        let mut ext = Extended {
            org_r: p.r0 as isize - pad as isize,
            org_c: p.c0 as isize - pad as isize,
            data: Array2::zeros((p.r1 - p.r0 + 2 * pad, p.c1 - p.c0 + 2 * pad)),
        };
        let kz = self.kernel_size;
        let rad = self.radius() as isize;
        let ow = oc1 - oc0;
        for (ki, &kv) in k.iter().enumerate() {
            if kv == T::zero() {
                continue;
            }
            let uy = (ki / kz) as isize - rad;
            let ux = (ki % kz) as isize - rad;
            for row in or0..or1 {
                let er = (row as isize - uy - ext.org_r) as usize;
                let ec = (oc0 as isize - ux - ext.org_c) as usize;
                let rrow = res.row(row);
                let rs = &rrow.as_slice().expect("contiguous")[oc0..oc1];
                let mut erow = ext.data.row_mut(er);
                let dst = &mut erow.as_slice_mut().expect("contiguous")[ec..ec + ow];
                for (d, &s) in dst.iter_mut().zip(rs) {
                    *d += kv * s;
                }
            }
        }
        self.fold_into(r, &ext, out);
    }

    /// `H x` for one plane with precomputed kernels.
    pub fn blur_plane(&self, x: &Plane<T>, kernels: &LocalKernels<T>) -> Result<Plane<T>> {
        self.check_plane(x)?;
        let parts: Vec<_> = (0..self.patches.len())
            .into_par_iter()
            .map(|r| self.blur_patch(r, x, kernels.get(r)))
            .collect();
        let mut out = Plane::zeros((self.height, self.width));
        for (r0, c0, part) in parts {
            let (h, w) = part.dim();
            let mut view = out.slice_mut(ndarray::s![r0..r0 + h, c0..c0 + w]);
            view += &part;
        }
        Ok(out)
    }

    /// `H^T r` for one plane with precomputed kernels.
    pub fn blur_adjoint_plane(&self, res: &Plane<T>, kernels: &LocalKernels<T>) -> Result<Plane<T>> {
        self.check_plane(res)?;
        let parts: Vec<Plane<T>> = (0..self.patches.len())
            .into_par_iter()
            .map(|r| {
                let mut out = Plane::zeros((self.height, self.width));
                self.adjoint_patch(r, res, kernels.get(r), &mut out);
                out
            })
            .collect();
        let mut out = Plane::zeros((self.height, self.width));
        for part in parts {
            out += &part;
        }
        Ok(out)
    }

    /// `D^T r` restricted to one channel pair, accumulated into `out`.
    fn d_transpose_into(&self, res: &Plane<T>, x: &Plane<T>, out: &mut [T]) -> Result<()> {
        self.check_plane(res)?;
        self.check_plane(x)?;
        let corrs: Vec<Vec<T>> = (0..self.patches.len())
            .into_par_iter()
            .map(|r| self.correlate_patch(r, x, res))
            .collect();
        for (r, c) in corrs.iter().enumerate() {
            self.basis_transpose_into(r, c, T::one(), out);
        }
        Ok(())
    }

    /// Exact squared norm of each patch kernel.
    pub fn patch_norms_sq(&self, kernels: &LocalKernels<T>) -> Vec<T> {
        kernels
            .kernels
            .iter()
            .map(|k| k.iter().fold(T::zero(), |a, &v| a + v * v))
            .collect()
    }

    /// Window-weighted sum `c_r = sum_i win_r(i) field(i)` for every patch.
    pub fn window_sums(&self, field: &Plane<T>) -> Vec<T> {
        self.patches
            .iter()
            .map(|p| {
                let mut acc = T::zero();
                for (i, &wy) in p.wy.iter().enumerate() {
                    let row = field.row(p.r0 + i);
                    let mut racc = T::zero();
                    for (j, &wx) in p.wx.iter().enumerate() {
                        racc += wx * row[p.c0 + j];
                    }
                    acc += wy * racc;
                }
                acc
            })
            .collect()
    }

    /// Interpolates per-patch values to pixels: `sum_r win_r(i) v_r`.
    pub fn interpolate(&self, per_patch: &[T]) -> Plane<T> {
        let mut out = Plane::zeros((self.height, self.width));
        for (p, &v) in self.patches.iter().zip(per_patch) {
            for (i, &wy) in p.wy.iter().enumerate() {
                for (j, &wx) in p.wx.iter().enumerate() {
                    out[[p.r0 + i, p.c0 + j]] += wy * wx * v;
                }
            }
        }
        out
    }

    /// `Q w` with `Q = sum_r c_r A_r^T A_r`.
    pub fn weighted_gram_apply(&self, coeffs: &[T], w: &[T]) -> Result<Vec<T>> {
        let kernels = self.kernels(w)?;
        let mut out = vec![T::zero(); self.n_poses];
        for (r, &c) in coeffs.iter().enumerate() {
            if c != T::zero() {
                self.basis_transpose_into(r, kernels.get(r), c, &mut out);
            }
        }
        Ok(out)
    }

    /// Local kernel of `H` at pixel `(row, col)` (the corresponding column of
    /// `H`, cut to `K x K`): `sum_r win_r(i) k_r`.
    pub fn pixel_kernel(&self, kernels: &LocalKernels<T>, row: usize, col: usize) -> Vec<T> {
        let kk = self.kernel_size * self.kernel_size;
        let mut out = vec![T::zero(); kk];
        for (r, p) in self.patches.iter().enumerate() {
            let wv = p.window(row, col);
            if wv == T::zero() {
                continue;
            }
            for (o, &v) in out.iter_mut().zip(kernels.get(r)) {
                *o += wv * v;
            }
        }
        out
    }
}

/// `H x` on both derivative channels.
pub fn apply_blur<T: Real>(x: &GradientImage<T>, w: &[T], eff: &EffDecomposition<T>) -> Result<GradientImage<T>> {
    let k = eff.kernels(w)?;
    apply_blur_with(x, &k, eff)
}

pub fn apply_blur_with<T: Real>(
    x: &GradientImage<T>,
    kernels: &LocalKernels<T>,
    eff: &EffDecomposition<T>,
) -> Result<GradientImage<T>> {
    let [a, b] = x.channels();
    GradientImage::new(eff.blur_plane(a, kernels)?, eff.blur_plane(b, kernels)?)
}

/// `H^T r` on both derivative channels.
pub fn apply_blur_adjoint<T: Real>(
    r: &GradientImage<T>,
    w: &[T],
    eff: &EffDecomposition<T>,
) -> Result<GradientImage<T>> {
    let k = eff.kernels(w)?;
    apply_blur_adjoint_with(r, &k, eff)
}

pub fn apply_blur_adjoint_with<T: Real>(
    r: &GradientImage<T>,
    kernels: &LocalKernels<T>,
    eff: &EffDecomposition<T>,
) -> Result<GradientImage<T>> {
    let [a, b] = r.channels();
    GradientImage::new(eff.blur_adjoint_plane(a, kernels)?, eff.blur_adjoint_plane(b, kernels)?)
}

/// `D^T r` where `D = [P_1 x, P_2 x, ...]`: entry `j` is `<P_j x, r>` summed
/// over channels, accumulated patchwise without forming any `P_j x`.
pub fn apply_d_transpose<T: Real>(r: &GradientImage<T>, x: &GradientImage<T>, eff: &EffDecomposition<T>) -> Result<Vec<T>> {
    let mut out = vec![T::zero(); eff.n_poses()];
    for c in 0..2 {
        eff.d_transpose_into(r.channel(c), x.channel(c), &mut out)?;
    }
    Ok(out)
}

/// Same as [`apply_d_transpose`] for a single plane.
pub fn apply_d_transpose_plane<T: Real>(r: &Plane<T>, x: &Plane<T>, eff: &EffDecomposition<T>) -> Result<Vec<T>> {
    let mut out = vec![T::zero(); eff.n_poses()];
    eff.d_transpose_into(r, x, &mut out)?;
    Ok(out)
}

/// Squared local-kernel norms: exact per patch, window-interpolated to pixels.
pub fn local_kernel_norms<T: Real>(w: &[T], eff: &EffDecomposition<T>) -> Result<LocalKernelNormField<T>> {
    let k = eff.kernels(w)?;
    Ok(LocalKernelNormField {
        norms_sq: eff.interpolate(&eff.patch_norms_sq(&k)),
    })
}

/// `rho_i = lambda / ||w_i||^2`.
pub fn rho_map<T: Real>(norms: &LocalKernelNormField<T>, lambda: T) -> Result<Plane<T>> {
    if !(lambda > T::zero()) {
        return Err(Error::Domain {
            name: "lambda",
            value: lambda.as_f64(),
            expected: "> 0",
        });
    }
    if norms.norms_sq.iter().any(|&v| !(v > T::zero())) {
        return Err(Error::Zero("local kernel norm"));
    }
    Ok(norms.norms_sq.mapv(|v| lambda / v))
}
