use deblur_core::cg::CgOptions;
use deblur_core::eff::{build_eff, local_kernel_norms, rho_map, EffDecomposition, EffSpec};
use deblur_core::image::{psnr, IntensityImage, Plane};
use deblur_core::pipeline::nonblind_deconvolve;
use deblur_core::pose::{build_pose_grid, corner_radius, Pose, PoseGrid, PoseGridSpec};
use deblur_core::solver::{run_multiscale, Estimate, IterationRecord, SolverConfig};
use deblur_core::synth::{kernel_correlation, resample_weights, synthesize, test_scene, test_scene_with_density, MotionSpec};

pub const N: usize = 64;

pub fn grid64() -> PoseGrid<f64> {
    let mut spec = PoseGridSpec::new(0.04, 2.0, N, N);
    spec.rotation_step = Some(0.02);
    build_pose_grid(&spec).unwrap()
}

pub fn eff64(grid: &PoseGrid<f64>) -> EffDecomposition<f64> {
    let k = EffSpec::kernel_size_for(grid.max_displacement(N, N));
    build_eff(grid, N, N, &EffSpec::new(32, 8, k)).unwrap()
}

pub fn problem(seed: u64) -> (IntensityImage<f64>, Vec<f64>) {
    let grid = grid64();
    let eff = eff64(&grid);
    let sharp = IntensityImage::gray(test_scene::<f64>(N, N, seed));
    let motion = vec![
        (Pose::new(-0.02, -1.0, 0.0), 0.2),
        (Pose::new(0.0, 0.0, 0.0), 0.3),
        (Pose::new(0.0, 1.0, 1.0), 0.3),
        (Pose::new(0.02, 2.0, 1.0), 0.2),
    ];
    let spec = MotionSpec::new(motion, 0.01, seed).unwrap();
    let out = synthesize(&sharp, &spec, &grid, &eff).unwrap();
    (out.blurry, out.w)
}


pub fn run(y: &Plane<f64>, cfg: &SolverConfig<f64>) -> (Estimate<f64>, Vec<IterationRecord<f64>>) {
    let mut recs = Vec::new();
    let est = run_multiscale(y, &grid64(), 32, 8, cfg, &mut |r| recs.push(r.clone())).unwrap();
    (est, recs)
}

/// Largest relative bound increase over any block, and over the latent and
/// noise blocks alone (those must not increase at all), in a trace.
#[derive(Debug, Default)]
pub struct DescentReport {
    pub iterations: usize,
    pub worst_relative_increase: f64,
    pub latent_increases: usize,
    pub noise_increases: usize,
    pub broken_chains: usize,
}

pub fn descent_report(recs: &[IterationRecord<f64>]) -> DescentReport {
    let mut d = DescentReport { iterations: recs.len(), ..Default::default() };
    for r in recs {
        let b = &r.blocks;
        let scale = b.start.abs().max(f64::MIN_POSITIVE);
        for (before, after) in [(b.start, b.image), (b.image, b.latent), (b.latent, b.blur), (b.blur, b.noise)] {
            d.worst_relative_increase = d.worst_relative_increase.max((after - before) / scale);
        }
        d.latent_increases += (b.latent > b.image) as usize;
        d.noise_increases += (b.noise > b.blur) as usize;
        d.broken_chains += (r.bound != b.noise) as usize;
    }
    for pair in recs.windows(2) {
        if pair[0].level == pair[1].level && !pair[0].grid_changed {
            d.broken_chains += (pair[1].blocks.start != pair[0].bound) as usize;
        }
    }
    d
}

/// Records where `lambda` dips below its floor or `gamma` is not positive.
pub fn floor_violations(recs: &[IterationRecord<f64>]) -> usize {
    recs.iter().filter(|r| !(r.lambda >= r.lambda_floor) || !(r.min_gamma > 0.0)).count()
}

/// Shape of the rho-map on a 96x96 image.
#[derive(Debug)]
pub struct RhoReport {
    /// Interior max/min for a translation-only blur.
    pub translation_spread: f64,
    /// Offset of the global minimum from the centre for a centred rotation.
    pub argmin_offset: (isize, isize),
    /// Corner value over the smallest value near the centre.
    pub corner_over_centre: f64,
}

pub fn rho_report() -> RhoReport {
    let n = 96;
    let mut spec = PoseGridSpec::new(0.06, 2.0, n, n);
    spec.rotation_step = Some(0.02);
    let grid = build_pose_grid(&spec).unwrap();
    let k = EffSpec::kernel_size_for(grid.max_displacement(n, n));
    let eff = build_eff(&grid, n, n, &EffSpec::new(24, 8, k)).unwrap();
    let pick = |poses: &[(f64, f64, f64)]| {
        let mut w = vec![0.0; grid.len()];
        for &(t, x, y) in poses {
            w[grid.nearest(&Pose::new(t, x, y), 1.0)] += 1.0 / poses.len() as f64;
        }
        w
    };
    let trans = pick(&[(0.0, -1.0, 0.0), (0.0, 0.0, 0.0), (0.0, 1.0, 1.0), (0.0, 2.0, 1.0)]);
    let rho = rho_map(&local_kernel_norms(&trans, &eff).unwrap(), 1e-3).unwrap();
    let interior = rho.slice(ndarray::s![k..n - k, k..n - k]);
    let (lo, hi) = interior.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));

    let rot: Vec<(f64, f64, f64)> = (-3..=3).map(|i| (0.02 * i as f64, 0.0, 0.0)).collect();
    let rho = rho_map(&local_kernel_norms(&pick(&rot), &eff).unwrap(), 1e-3).unwrap();
    let c = n / 2;
    let centre = rho.slice(ndarray::s![c - 8..c + 8, c - 8..c + 8]).iter().cloned().fold(f64::MAX, f64::min);
    let (gr, gc) = rho.indexed_iter().min_by(|a, b| a.1.partial_cmp(b.1).unwrap()).unwrap().0;
    RhoReport {
        translation_spread: hi / lo,
        argmin_offset: (gr as isize - c as isize, gc as isize - c as isize),
        corner_over_centre: rho[[k, k]] / centre,
    }
}

/// Outcome of one seeded 128x128 blind recovery.
#[derive(Debug)]
pub struct Recovery {
    pub correlation: f64,
    pub psnr_blurry: f64,
    pub psnr_deblurred: f64,
    pub floor_violations: usize,
}

impl Recovery {
    pub fn gain(&self) -> f64 {
        self.psnr_deblurred - self.psnr_blurry
    }
}

/// Nine-pose path as (rotation steps, tx, ty, weight).
pub const RECOVERY_PATH: [(f64, f64, f64, f64); 9] = [
    (-1.0, -2.0, -1.0, 0.08),
    (-1.0, -1.0, -1.0, 0.12),
    (0.0, -1.0, 0.0, 0.15),
    (0.0, 0.0, 0.0, 0.15),
    (0.0, 1.0, 0.0, 0.12),
    (1.0, 1.0, 1.0, 0.1),
    (1.0, 2.0, 1.0, 0.1),
    (2.0, 2.0, 2.0, 0.1),
    (2.0, 3.0, 2.0, 0.08),
];

pub fn recovery(seed: u64) -> Recovery {
    let n = 128;
    let step = 0.02;
    let mut spec = PoseGridSpec::new(2.0 * step, 4.0, n, n);
    spec.rotation_step = Some(step);
    let grid = build_pose_grid(&spec).unwrap();
    let k = EffSpec::kernel_size_for(grid.max_displacement(n, n));
    let eff = build_eff(&grid, n, n, &EffSpec::new(32, 8, k)).unwrap();
    let sharp = IntensityImage::gray(test_scene_with_density::<f64>(n, n, seed, 150));
    let motion = RECOVERY_PATH.iter().map(|&(t, x, y, w)| (Pose::new(t * step, x, y), w)).collect();
    let syn = synthesize(&sharp, &MotionSpec::new(motion, 0.01, seed).unwrap(), &grid, &eff).unwrap();

    let mut recs = Vec::new();
    let est = run_multiscale(&syn.blurry.luma(), &grid, 32, 8, &SolverConfig::default(), &mut |r| recs.push(r.clone())).unwrap();
    let w = resample_weights(&est.w, &est.grid, &grid, corner_radius(n, n)).unwrap();
    let opts = CgOptions { tol: 1e-6, max_iter: 200 };
    let (deb, _) = nonblind_deconvolve(&syn.blurry, &est.w, &est.eff, est.lambda, 20.0, &opts).unwrap();
    Recovery {
        correlation: kernel_correlation(&w, &syn.w).unwrap(),
        psnr_blurry: psnr(&syn.blurry.planes()[0], &sharp.planes()[0]),
        psnr_deblurred: psnr(&deb.planes()[0], &sharp.planes()[0]),
        floor_violations: floor_violations(&recs),
    }
}
