use deblur_core::eff::{apply_blur, apply_blur_adjoint, build_eff, local_kernel_norms, EffSpec};
use deblur_core::image::{GradientImage, Plane};
use deblur_core::pose::{build_pose_grid, PoseGrid, PoseGridSpec};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

pub fn rand_plane(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Plane<f64> {
    Plane::from_shape_fn((h, w), |_| rng.gen_range(-1.0..1.0))
}

pub fn rand_grad(rng: &mut ChaCha8Rng, h: usize, w: usize) -> GradientImage<f64> {
    GradientImage::new(rand_plane(rng, h, w), rand_plane(rng, h, w)).unwrap()
}

pub fn simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn rotation_grid(n: usize) -> PoseGrid<f64> {
    let mut spec = PoseGridSpec::new(0.04, 2.0, n, n);
    spec.rotation_step = Some(0.02);
    build_pose_grid(&spec).unwrap()
}

/// `y(p) = sum_j w_j x(clamp(p - t_j))` straight from the warp definition.
pub fn dense_translate(x: &Plane<f64>, grid: &PoseGrid<f64>, w: &[f64]) -> Plane<f64> {
    let (h, wd) = x.dim();
    let mut y = Array2::zeros((h, wd));
    for (p, &wj) in grid.poses().iter().zip(w) {
        let (tx, ty) = (p.tx.round() as isize, p.ty.round() as isize);
        for r in 0..h {
            for c in 0..wd {
                let sr = (r as isize - ty).clamp(0, h as isize - 1) as usize;
                let sc = (c as isize - tx).clamp(0, wd as isize - 1) as usize;
                y[[r, c]] += wj * x[[sr, sc]];
            }
        }
    }
    y
}

pub fn dense_translate_adjoint(res: &Plane<f64>, grid: &PoseGrid<f64>, w: &[f64]) -> Plane<f64> {
    let (h, wd) = res.dim();
    let mut out = Array2::zeros((h, wd));
    for (p, &wj) in grid.poses().iter().zip(w) {
        let (tx, ty) = (p.tx.round() as isize, p.ty.round() as isize);
        for r in 0..h {
            for c in 0..wd {
                let sr = (r as isize - ty).clamp(0, h as isize - 1) as usize;
                let sc = (c as isize - tx).clamp(0, wd as isize - 1) as usize;
                out[[sr, sc]] += wj * res[[r, c]];
            }
        }
    }
    out
}

/// Number of poses and the worst `|<H x, r> - <x, H^T r>| / (||x|| ||r||)`
/// over random 32x32 trials on a rotation grid.
pub fn adjoint_error(trials: usize, seed: u64) -> (usize, f64) {
    let n = 32;
    let grid = rotation_grid(n);
    let k = EffSpec::kernel_size_for(grid.max_displacement(n, n));
    let eff = build_eff(&grid, n, n, &EffSpec::new(16, 4, k)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let x = rand_grad(&mut rng, n, n);
        let r = rand_grad(&mut rng, n, n);
        let w: Vec<f64> = (0..grid.len()).map(|_| rng.gen::<f64>()).collect();
        let lhs = apply_blur(&x, &w, &eff).unwrap().dot(&r);
        let rhs = x.dot(&apply_blur_adjoint(&r, &w, &eff).unwrap());
        worst = worst.max((lhs - rhs).abs() / (x.norm_sq() * r.norm_sq()).sqrt());
    }
    (grid.len(), worst)
}

/// Worst absolute difference between the single-patch operator (and its
/// adjoint) and dense translation on a translation-only grid.
pub fn dense_translation_error(trials: usize, seed: u64) -> f64 {
    let n = 32;
    let grid = build_pose_grid(&PoseGridSpec::new(0.0, 2.0, n, n)).unwrap();
    let eff = build_eff(&grid, n, n, &EffSpec::new(n, 0, 5)).unwrap();
    assert_eq!(eff.n_patches(), 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let x = rand_plane(&mut rng, n, n);
        let res = rand_plane(&mut rng, n, n);
        let w = simplex(&mut rng, grid.len());
        let kern = eff.kernels(&w).unwrap();
        let pairs = [
            (eff.blur_plane(&x, &kern).unwrap(), dense_translate(&x, &grid, &w)),
            (eff.blur_adjoint_plane(&res, &kern).unwrap(), dense_translate_adjoint(&res, &grid, &w)),
        ];
        for (a, b) in &pairs {
            worst = a.iter().zip(b).fold(worst, |m, (u, v)| m.max((u - v).abs()));
        }
    }
    worst
}

/// Worst `|sum - 1|` over all basis columns of every patch, and the smallest
/// basis entry.
pub fn column_mass_error() -> (f64, f64) {
    let n = 64;
    let grid = rotation_grid(n);
    let k = EffSpec::kernel_size_for(grid.max_displacement(n, n));
    let eff = build_eff(&grid, n, n, &EffSpec::new(16, 4, k)).unwrap();
    let (mut worst, mut min_entry) = (0.0f64, f64::INFINITY);
    for r in 0..eff.n_patches() {
        let a = eff.basis_dense(r);
        for j in 0..grid.len() {
            worst = worst.max((a.column(j).sum() - 1.0).abs());
            min_entry = a.column(j).iter().fold(min_entry, |m, &v| m.min(v));
        }
    }
    (worst, min_entry)
}

/// Smallest `L ||w_i||^2` and largest `||w_i||^2` over all pixels for random
/// simplex draws, where `L` is the local kernel size.
pub fn local_norm_range(draws: usize, seed: u64) -> (f64, f64) {
    let n = 48;
    let grid = rotation_grid(n);
    let k = EffSpec::kernel_size_for(grid.max_displacement(n, n));
    let l = (k * k) as f64;
    let eff = build_eff(&grid, n, n, &EffSpec::new(16, 4, k)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for _ in 0..draws {
        let w = simplex(&mut rng, grid.len());
        let f = local_kernel_norms(&w, &eff).unwrap();
        for &v in f.norms_sq.iter() {
            lo = lo.min(v * l);
            hi = hi.max(v);
        }
    }
    (lo, hi)
}
