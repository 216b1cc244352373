//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use deblur_core::pose::{PoseGridSpec, DEFAULT_GRID_CAP};
use deblur_core::solver::SolverConfig;

/// Everything a run can be configured with. `0` means "derive
/// automatically" for `levels` and `rotation_step_deg`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub cg_tol: f64,
    pub cg_max_iter: usize,
    pub outer_iters_per_level: usize,
    pub w_solver_tol: f64,
    pub w_solver_max_iter: usize,
    pub w_change_tol: f64,
    pub d_coefficient: f64,
    pub gamma_floor: f64,
    pub gamma_init_offset: f64,
    pub pyramid_scale: f64,
    pub min_kernel_px: usize,
    pub levels: usize,
    pub active_set_every: usize,
    pub prune_fraction: f64,
    pub seed: u64,

    pub max_rot_deg: f64,
    pub rotation_step_deg: f64,
    pub max_shift: f64,
    pub shift_step: f64,
    pub grid_cap: usize,

    pub patch_size: usize,
    pub overlap: usize,

    pub reg_weight: f64,
    pub nonblind_cg_tol: f64,
    pub nonblind_cg_max_iter: usize,
    pub noise_sigma: f64,
    pub eval_lambda: f64,
    pub montage_grid: usize,

    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub poses: Option<PathBuf>,
    pub montage: Option<PathBuf>,
    pub rho_png: Option<PathBuf>,
    pub rho_csv: Option<PathBuf>,
    pub trace: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let s = SolverConfig::<f64>::default();
        Self {
            cg_tol: s.cg_tol,
            cg_max_iter: s.cg_max_iter,
            outer_iters_per_level: s.outer_iters_per_level,
            w_solver_tol: s.w_solver_tol,
            w_solver_max_iter: s.w_solver_max_iter,
            w_change_tol: s.w_change_tol,
            d_coefficient: s.d_coefficient,
            gamma_floor: s.gamma_floor,
            gamma_init_offset: s.gamma_init_offset,
            pyramid_scale: s.pyramid_scale,
            min_kernel_px: s.min_kernel_px,
            levels: 0,
            active_set_every: s.active_set_every,
            prune_fraction: s.prune_fraction,
            seed: s.seed,
            max_rot_deg: 5.0,
            rotation_step_deg: 0.0,
            max_shift: 8.0,
            shift_step: 1.0,
            grid_cap: DEFAULT_GRID_CAP,
            patch_size: 64,
            overlap: 16,
            reg_weight: 20.0,
            nonblind_cg_tol: 1e-6,
            nonblind_cg_max_iter: 200,
            noise_sigma: 0.0,
            eval_lambda: 3e-4,
            montage_grid: 5,
            input: None,
            output: None,
            poses: None,
            montage: None,
            rho_png: None,
            rho_csv: None,
            trace: None,
        }
    }
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| anyhow!("config key `{key}`: cannot parse {value:?}: {e}"))
}

fn path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn show(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

macro_rules! keys {
    ($($num:ident),* ; $($path:ident),*) => {
        impl RunConfig {
            pub const KEYS: &'static [&'static str] = &[$(stringify!($num),)* $(stringify!($path),)*];

            /// Sets one key; unknown keys and unparsable values are errors
            /// naming the key.
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                let value = value.trim();
                match key {
                    $(stringify!($num) => self.$num = num(key, value)?,)*
                    $(stringify!($path) => self.$path = path(value),)*
                    _ => bail!("unknown config key `{key}`"),
                }
                Ok(())
            }

            /// Re-emits every key; parsing the result gives back `self`.
            pub fn dump(&self) -> String {
                let mut s = String::new();
                $(writeln!(s, "{} = {}", stringify!($num), self.$num).unwrap();)*
                $(writeln!(s, "{} = {}", stringify!($path), show(&self.$path)).unwrap();)*
                s
            }
        }
    };
}

keys!(
    cg_tol, cg_max_iter, outer_iters_per_level, w_solver_tol, w_solver_max_iter, w_change_tol, d_coefficient,
    gamma_floor, gamma_init_offset, pyramid_scale, min_kernel_px, levels, active_set_every,
    prune_fraction, seed, max_rot_deg, rotation_step_deg, max_shift, shift_step, grid_cap,
    patch_size, overlap, reg_weight, nonblind_cg_tol, nonblind_cg_max_iter,
    noise_sigma, eval_lambda, montage_grid;
    input, output, poses, montage, rho_png, rho_csv, trace
);

impl RunConfig {
    /// Applies `key = value` lines on top of `self`. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, source: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("{source}:{}: expected `key = value`", i + 1))?;
            self.set(k.trim(), v).with_context(|| format!("{source}:{}", i + 1))?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text, "<config>")?;
        Ok(c)
    }

    pub fn solver(&self) -> Result<SolverConfig<f64>> {
        let c = SolverConfig {
            cg_tol: self.cg_tol,
            cg_max_iter: self.cg_max_iter,
            outer_iters_per_level: self.outer_iters_per_level,
            w_solver_tol: self.w_solver_tol,
            w_solver_max_iter: self.w_solver_max_iter,
            w_change_tol: self.w_change_tol,
            d_coefficient: self.d_coefficient,
            gamma_floor: self.gamma_floor,
            gamma_init_offset: self.gamma_init_offset,
            pyramid_scale: self.pyramid_scale,
            min_kernel_px: self.min_kernel_px,
            levels: (self.levels > 0).then_some(self.levels),
            active_set_every: self.active_set_every,
            prune_fraction: self.prune_fraction,
            seed: self.seed,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn grid_spec(&self, width: usize, height: usize) -> PoseGridSpec<f64> {
        let mut g = PoseGridSpec::new(self.max_rot_deg.to_radians(), self.max_shift, width, height);
        if self.rotation_step_deg > 0.0 {
            g.rotation_step = Some(self.rotation_step_deg.to_radians());
        }
        g.shift_step = self.shift_step;
        g.cap = self.grid_cap;
        g
    }
}
