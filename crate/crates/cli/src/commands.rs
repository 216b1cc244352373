use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use deblur_core::cg::CgOptions;
use deblur_core::eff::{build_eff, EffDecomposition, EffSpec};
use deblur_core::image::psnr_image;
use deblur_core::io;
use deblur_core::penalty::{penalty_curve, write_curve_csv};
use deblur_core::pipeline::nonblind_deconvolve;
use deblur_core::pose::{build_pose_grid, PoseGrid};
use deblur_core::solver::{run_multiscale, IterationRecord};
use deblur_core::synth::{
    cumulative_histogram, kernel_correlation, parse_motion, resample_weights, ssd_error_ratio, synthesize, EvalReport,
    MotionSpec,
};

use crate::config::RunConfig;

pub enum Outcome {
    Done,
    /// Finished, but some solver did not reach its tolerance.
    Warned,
}

fn sibling(out: &Path, name: &str) -> PathBuf {
    out.parent().unwrap_or(Path::new("")).join(name)
}

fn eff_for(grid: &PoseGrid<f64>, cfg: &RunConfig, w: usize, h: usize) -> Result<EffDecomposition<f64>> {
    let k = EffSpec::kernel_size_for(grid.max_displacement(w, h));
    Ok(build_eff(grid, w, h, &EffSpec::new(cfg.patch_size, cfg.overlap, k))?)
}

fn nonblind_opts(cfg: &RunConfig) -> CgOptions<f64> {
    CgOptions {
        tol: cfg.nonblind_cg_tol,
        max_iter: cfg.nonblind_cg_max_iter,
    }
}

fn trace_csv(records: &[IterationRecord<f64>]) -> String {
    let mut s = String::from("level,iter,bound,lambda,w_change,min_gamma,cg_iters_h,cg_iters_v,blur_iters\n");
    for r in records {
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.level,
            r.iter,
            r.bound,
            r.lambda,
            r.w_change,
            r.min_gamma,
            r.cg[0].iterations,
            r.cg[1].iterations,
            r.blur.iterations
        )
        .unwrap();
    }
    s
}

pub fn deblur(cfg: &RunConfig) -> Result<Outcome> {
    let input = cfg.input.as_ref().ok_or_else(|| anyhow!("config key `input` is not set"))?;
    let output = cfg.output.as_ref().ok_or_else(|| anyhow!("config key `output` is not set"))?;
    let solver = cfg.solver()?;
    let img = io::read_image::<f64>(input).with_context(|| format!("reading {}", input.display()))?;
    let (h, w) = img.dim();
    let grid = build_pose_grid(&cfg.grid_spec(w, h)).context("pose grid")?;
    let mut records = Vec::new();
    let est = run_multiscale(&img.luma(), &grid, cfg.patch_size, cfg.overlap, &solver, &mut |r| {
        eprintln!("{:>2} {:>4} {:>16.9e} {:>12.5e} {:>12.5e}", r.level, r.iter, r.bound, r.lambda, r.w_change);
        records.push(r.clone());
    })?;
    let (sharp, status) = nonblind_deconvolve(&img, &est.w, &est.eff, est.lambda, cfg.reg_weight, &nonblind_opts(cfg))?;

    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    io::write_png(&sharp, output)?;
    io::write_poses(&est.grid, &est.w, cfg.poses.as_deref().unwrap_or(&sibling(output, "poses.tsv")))?;
    let montage = cfg.montage.clone().unwrap_or_else(|| sibling(output, "kernels.png"));
    io::write_kernel_montage(&est.eff, &est.w, cfg.montage_grid, &montage)?;
    io::write_normalized_png(&est.rho, cfg.rho_png.as_deref().unwrap_or(&sibling(output, "rho.png")))?;
    fs::write(
        cfg.rho_csv.clone().unwrap_or_else(|| sibling(output, "rho.csv")),
        io::format_plane_csv(&est.rho),
    )?;
    if let Some(t) = &cfg.trace {
        fs::write(t, trace_csv(&records))?;
    }
    if est.converged && status.iter().all(|s| s.converged) {
        Ok(Outcome::Done)
    } else {
        Ok(Outcome::Warned)
    }
}

pub fn synth(cfg: &RunConfig, input: &Path, motion: &Path, out_dir: &Path) -> Result<Outcome> {
    let sharp = io::read_image::<f64>(input).with_context(|| format!("reading {}", input.display()))?;
    let text = fs::read_to_string(motion).with_context(|| format!("reading {}", motion.display()))?;
    let spec = MotionSpec::new(parse_motion(&text, motion)?, cfg.noise_sigma, cfg.seed)?;
    let (h, w) = sharp.dim();
    let grid = build_pose_grid(&cfg.grid_spec(w, h)).context("pose grid")?;
    let eff = eff_for(&grid, cfg, w, h)?;
    let out = synthesize(&sharp, &spec, &grid, &eff)?;
    fs::create_dir_all(out_dir)?;
    io::write_png(&out.blurry, &out_dir.join("blurry.png"))?;
    io::write_poses(&grid, &out.w, &out_dir.join("gt_poses.tsv"))?;
    io::write_kernel_montage(&eff, &out.w, cfg.montage_grid, &out_dir.join("gt_kernels.png"))?;
    Ok(Outcome::Done)
}

struct Case {
    name: String,
    report: EvalReport,
}

fn eval_case(cfg: &RunConfig, dir: &Path) -> Result<Case> {
    let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let read = |f: &str| io::read_image::<f64>(&dir.join(f)).with_context(|| format!("case {name}: {f}"));
    let sharp = read("sharp.png")?;
    let blurry = read("blurry.png")?;
    let (gt_grid, gt_w) = io::read_poses::<f64>(&dir.join("gt_poses.tsv")).with_context(|| format!("case {name}: gt_poses.tsv"))?;
    let (est_grid, est_w) =
        io::read_poses::<f64>(&dir.join("est_poses.tsv")).with_context(|| format!("case {name}: est_poses.tsv"))?;
    if sharp.dim() != blurry.dim() {
        bail!("case {name}: sharp and blurry sizes differ");
    }
    let (h, w) = sharp.dim();
    let gt_eff = eff_for(&gt_grid, cfg, w, h)?;
    let est_eff = eff_for(&est_grid, cfg, w, h)?;
    let opts = nonblind_opts(cfg);
    let (deb_gt, _) = nonblind_deconvolve(&blurry, &gt_w, &gt_eff, cfg.eval_lambda, cfg.reg_weight, &opts)?;
    let (deb_est, _) = nonblind_deconvolve(&blurry, &est_w, &est_eff, cfg.eval_lambda, cfg.reg_weight, &opts)?;
    let crop = gt_eff.kernel_size().max(est_eff.kernel_size());
    let ratio = ssd_error_ratio(&deb_est, &deb_gt, &sharp, crop).with_context(|| format!("case {name}"))?;
    let radius = deblur_core::pose::corner_radius::<f64>(w, h);
    let est_on_gt = resample_weights(&est_w, &est_grid, &gt_grid, radius)?;
    Ok(Case {
        name,
        report: EvalReport {
            ssd_error_ratio: ratio,
            kernel_correlation: kernel_correlation(&est_on_gt, &gt_w)?,
            psnr_blurry: psnr_image(&blurry, &sharp),
            psnr_deblurred: psnr_image(&deb_est, &sharp),
        },
    })
}

pub fn eval(cfg: &RunConfig, cases: &Path, out_dir: &Path, edges: &[f64]) -> Result<Outcome> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(cases)
        .with_context(|| format!("reading {}", cases.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        bail!("no cases under {}", cases.display());
    }
    let results = dirs.iter().map(|d| eval_case(cfg, d)).collect::<Result<Vec<_>>>()?;
    let ratios: Vec<(String, f64)> = results.iter().map(|c| (c.name.clone(), c.report.ssd_error_ratio)).collect();
    let values: Vec<f64> = ratios.iter().map(|r| r.1).collect();
    let hist = cumulative_histogram(&values, edges)?;
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("ratios.csv"), io::format_ratios(&ratios))?;
    fs::write(out_dir.join("cumhist.csv"), io::format_cumhist(&hist))?;
    let mut report = String::new();
    writeln!(report, "cases={}", results.len()).unwrap();
    for c in &results {
        for line in c.report.to_kv().lines() {
            writeln!(report, "{}.{line}", c.name).unwrap();
        }
    }
    fs::write(out_dir.join("report.txt"), report)?;
    Ok(Outcome::Done)
}

/// Parses `start:step:stop` into an inclusive sample list.
pub fn parse_range(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<f64> = s
        .split(':')
        .map(|p| p.trim().parse::<f64>().map_err(|e| anyhow!("range {s:?}: {e}")))
        .collect::<Result<_>>()?;
    let [start, step, stop] = parts[..] else {
        bail!("range {s:?}: expected start:step:stop");
    };
    if !(step > 0.0) || stop < start {
        bail!("range {s:?}: need step > 0 and stop >= start");
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| start + i as f64 * step).collect())
}

pub fn penalty(rho: &[f64], z: &str, out: Option<&Path>) -> Result<Outcome> {
    let zs = parse_range(z)?;
    let samples = penalty_curve(rho, &zs)?;
    match out {
        Some(p) => write_curve_csv(&samples, fs::File::create(p)?)?,
        None => write_curve_csv(&samples, std::io::stdout().lock())?,
    }
    Ok(Outcome::Done)
}
