pub mod eff;
pub mod error;
pub mod image;
pub mod io;
pub mod penalty;
pub mod pose;
pub mod real;
pub mod cg;
pub mod pipeline;
pub mod rng;
pub mod solver;
pub mod synth;

pub use real::Real;

pub type Plane64 = image::Plane<f64>;
pub type Image64 = image::IntensityImage<f64>;
pub type Gradient64 = image::GradientImage<f64>;
pub type Pose64 = pose::Pose<f64>;
pub type PoseGrid64 = pose::PoseGrid<f64>;
pub type Eff64 = eff::EffDecomposition<f64>;
pub type SolverConfig64 = solver::SolverConfig<f64>;
pub type Estimate64 = solver::Estimate<f64>;

pub type Plane32 = image::Plane<f32>;
pub type Image32 = image::IntensityImage<f32>;
pub type PoseGrid32 = pose::PoseGrid<f32>;
pub type Eff32 = eff::EffDecomposition<f32>;
pub type SolverConfig32 = solver::SolverConfig<f32>;
