//! File formats: images, pose tables, kernel montages, rho maps and the
//! evaluation CSVs.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use image::{DynamicImage, GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

use crate::eff::EffDecomposition;
use crate::error::{Error, Result};
use crate::image::{IntensityImage, Plane};
use crate::pose::PoseGrid;
use crate::real::Real;
use crate::synth::parse_motion;

pub const POSES_HEADER: &str = "theta_rad\ttx_px\tty_px\tweight";

/// Reads an 8/16-bit PNG or binary PGM/PPM into `[0, 1]` planes. Gray
/// sources give one plane, everything else three.
pub fn read_image<T: Real>(path: &Path) -> Result<IntensityImage<T>> {
    let img = image::open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    if img.color().has_color() {
        let rgb = img.to_rgb32f();
        let planes = (0..3)
            .map(|c| Plane::from_shape_fn((h, w), |(r, col)| T::lit(rgb.get_pixel(col as u32, r as u32)[c] as f64)))
            .collect();
        IntensityImage::new(planes)
    } else {
        let g = img.to_luma32f();
        Ok(IntensityImage::gray(Plane::from_shape_fn((h, w), |(r, c)| {
            T::lit(g.get_pixel(c as u32, r as u32)[0] as f64)
        })))
    }
}

fn to_u8<T: Real>(v: T) -> u8 {
    (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes an 8-bit PNG, clamping to `[0, 1]`.
pub fn write_png<T: Real>(img: &IntensityImage<T>, path: &Path) -> Result<()> {
    let (h, w) = img.dim();
    let out = if img.is_color() {
        let p = img.planes();
        DynamicImage::ImageRgb8(RgbImage::from_fn(w as u32, h as u32, |c, r| {
            let (r, c) = (r as usize, c as usize);
            Rgb([to_u8(p[0][[r, c]]), to_u8(p[1][[r, c]]), to_u8(p[2][[r, c]])])
        }))
    } else {
        let p = &img.planes()[0];
        DynamicImage::ImageLuma8(GrayImage::from_fn(w as u32, h as u32, |c, r| {
            Luma([to_u8(p[[r as usize, c as usize]])])
        }))
    };
    out.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// Writes a plane rescaled so its range maps onto `[0, 1]`.
pub fn write_normalized_png<T: Real>(plane: &Plane<T>, path: &Path) -> Result<()> {
    let lo = plane.iter().fold(T::infinity(), |a, &b| a.min(b));
    let hi = plane.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let span = hi - lo;
    let p = if span > T::zero() {
        plane.mapv(|v| (v - lo) / span)
    } else {
        plane.mapv(|_| T::zero())
    };
    write_png(&IntensityImage::gray(p), path)
}

/// `poses.tsv`: the pose table with one row per grid pose.
pub fn format_poses<T: Real>(grid: &PoseGrid<T>, w: &[T]) -> Result<String> {
    if w.len() != grid.len() {
        return Err(Error::Length {
            what: "weights",
            expected: grid.len(),
            got: w.len(),
        });
    }
    let mut s = String::from(POSES_HEADER);
    s.push('\n');
    for (p, &wj) in grid.poses().iter().zip(w) {
        writeln!(s, "{}\t{}\t{}\t{}", p.theta, p.tx, p.ty, wj).unwrap();
    }
    Ok(s)
}

pub fn write_poses<T: Real>(grid: &PoseGrid<T>, w: &[T], path: &Path) -> Result<()> {
    fs::write(path, format_poses(grid, w)?)?;
    Ok(())
}

/// Reads a pose table back as a grid plus weights.
pub fn read_poses<T: Real>(path: &Path) -> Result<(PoseGrid<T>, Vec<T>)> {
    let text = fs::read_to_string(path)?;
    let entries = parse_motion::<T>(&text, path)?;
    if entries.is_empty() {
        return Err(Error::Parse {
            location: path.display().to_string(),
            message: "no poses".into(),
        });
    }
    let (poses, w): (Vec<_>, Vec<_>) = entries.into_iter().unzip();
    Ok((PoseGrid::from_poses(poses)?, w))
}

/// Renders the local kernels at a `g x g` lattice of pixel sites into one
/// gray image, each kernel scaled to its own maximum, separated by 1 px.
pub fn kernel_montage<T: Real>(eff: &EffDecomposition<T>, w: &[T], g: usize) -> Result<Plane<T>> {
    let g = g.max(1);
    let k = eff.kernel_size();
    let (h, wd) = eff.dim();
    let kernels = eff.kernels(w)?;
    let side = g * (k + 1) + 1;
    let mut out = Plane::zeros((side, side));
    let site = |i: usize, n: usize| ((2 * i + 1) * n) / (2 * g);
    for gi in 0..g {
        for gj in 0..g {
            let kv = eff.pixel_kernel(&kernels, site(gi, h), site(gj, wd));
            let m = kv.iter().fold(T::zero(), |a, &b| a.max(b));
            let (r0, c0) = (1 + gi * (k + 1), 1 + gj * (k + 1));
            for (idx, &v) in kv.iter().enumerate() {
                out[[r0 + idx / k, c0 + idx % k]] = if m > T::zero() { v / m } else { T::zero() };
            }
        }
    }
    Ok(out)
}

pub fn write_kernel_montage<T: Real>(eff: &EffDecomposition<T>, w: &[T], g: usize, path: &Path) -> Result<()> {
    write_png(&IntensityImage::gray(kernel_montage(eff, w, g)?), path)
}

/// A plane as CSV, one line per image row.
pub fn format_plane_csv<T: Real>(plane: &Plane<T>) -> String {
    let mut s = String::new();
    for row in plane.rows() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    s
}

pub fn read_plane_csv(path: &Path) -> Result<Plane<f64>> {
    let text = fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let row = line
            .split(',')
            .map(|f| {
                f.trim().parse().map_err(|e| Error::Parse {
                    location: format!("{}:{}", path.display(), i + 1),
                    message: format!("{f:?}: {e}"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    let w = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != w) {
        return Err(Error::Parse {
            location: path.display().to_string(),
            message: "ragged rows".into(),
        });
    }
    let h = rows.len();
    Ok(Plane::from_shape_vec((h, w), rows.concat()).expect("shape checked"))
}

/// `ratios.csv`.
pub fn format_ratios(rows: &[(String, f64)]) -> String {
    let mut s = String::from("case,ratio\n");
    for (case, r) in rows {
        writeln!(s, "{case},{r}").unwrap();
    }
    s
}

/// `cumhist.csv`.
pub fn format_cumhist(rows: &[(f64, f64)]) -> String {
    let mut s = String::from("edge,fraction\n");
    for (e, f) in rows {
        writeln!(s, "{e},{f}").unwrap();
    }
    s
}

/// 16-bit gray PNG; only used to produce fixtures of that depth.
pub fn write_png16<T: Real>(plane: &Plane<T>, path: &Path) -> Result<()> {
    let (h, w) = plane.dim();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_fn(w as u32, h as u32, |c, r| {
        Luma([(plane[[r as usize, c as usize]].as_f64().clamp(0.0, 1.0) * 65535.0).round() as u16])
    });
    buf.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}
