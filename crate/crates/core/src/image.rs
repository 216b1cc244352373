//! Image containers: intensity planes and two-channel derivative images.

use ndarray::{Array2, Zip};

use crate::error::{Error, Result};
use crate::real::Real;

/// A single 2-D plane, indexed `[[row, col]]`.
pub type Plane<T> = Array2<T>;

/// Horizontal and vertical first differences of an image, stored as two
/// planes of identical size.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientImage<T> {
    channels: [Plane<T>; 2],
}

impl<T: Real> GradientImage<T> {
    pub fn new(horizontal: Plane<T>, vertical: Plane<T>) -> Result<Self> {
        if horizontal.dim() != vertical.dim() {
            return Err(Error::Dimension {
                expected: horizontal.dim(),
                got: vertical.dim(),
            });
        }
        Ok(Self {
            channels: [horizontal, vertical],
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            channels: [Plane::zeros((height, width)), Plane::zeros((height, width))],
        }
    }

    pub fn height(&self) -> usize {
        self.channels[0].nrows()
    }

    pub fn width(&self) -> usize {
        self.channels[0].ncols()
    }

    /// `(height, width)`.
    pub fn dim(&self) -> (usize, usize) {
        self.channels[0].dim()
    }

    /// Number of scalar entries over both channels.
    pub fn len(&self) -> usize {
        2 * self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels[0].is_empty()
    }

    pub fn channels(&self) -> &[Plane<T>; 2] {
        &self.channels
    }

    pub fn channels_mut(&mut self) -> &mut [Plane<T>; 2] {
        &mut self.channels
    }

    pub fn channel(&self, c: usize) -> &Plane<T> {
        &self.channels[c]
    }

    pub fn into_channels(self) -> [Plane<T>; 2] {
        self.channels
    }

    pub fn map<F: Fn(&Plane<T>) -> Plane<T>>(&self, f: F) -> Self {
        Self {
            channels: [f(&self.channels[0]), f(&self.channels[1])],
        }
    }

    pub fn dot(&self, other: &Self) -> T {
        plane_dot(&self.channels[0], &other.channels[0]) + plane_dot(&self.channels[1], &other.channels[1])
    }

    pub fn norm_sq(&self) -> T {
        self.dot(self)
    }

    pub fn scaled(&self, a: T) -> Self {
        self.map(|p| p.mapv(|v| v * a))
    }

    /// `self - other`.
    pub fn sub(&self, other: &Self) -> Self {
        Self {
            channels: [
                &self.channels[0] - &other.channels[0],
                &self.channels[1] - &other.channels[1],
            ],
        }
    }

    pub fn check_dim(&self, dim: (usize, usize)) -> Result<()> {
        if self.dim() != dim {
            return Err(Error::Dimension {
                expected: dim,
                got: self.dim(),
            });
        }
        Ok(())
    }
}

/// Gray or RGB image with planes nominally in `[0, 1]`. Values are only
/// clamped on export.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityImage<T> {
    planes: Vec<Plane<T>>,
}

impl<T: Real> IntensityImage<T> {
    pub fn new(planes: Vec<Plane<T>>) -> Result<Self> {
        if planes.len() != 1 && planes.len() != 3 {
            return Err(Error::Invalid(format!("expected 1 or 3 planes, got {}", planes.len())));
        }
        let dim = planes[0].dim();
        for p in &planes[1..] {
            if p.dim() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    got: p.dim(),
                });
            }
        }
        Ok(Self { planes })
    }

    pub fn gray(plane: Plane<T>) -> Self {
        Self { planes: vec![plane] }
    }

    pub fn planes(&self) -> &[Plane<T>] {
        &self.planes
    }

    pub fn into_planes(self) -> Vec<Plane<T>> {
        self.planes
    }

    pub fn is_color(&self) -> bool {
        self.planes.len() == 3
    }

    pub fn height(&self) -> usize {
        self.planes[0].nrows()
    }

    pub fn width(&self) -> usize {
        self.planes[0].ncols()
    }

    pub fn dim(&self) -> (usize, usize) {
        self.planes[0].dim()
    }

    /// Rec. 601 luma for color images, the plane itself for gray.
    pub fn luma(&self) -> Plane<T> {
        if self.planes.len() == 1 {
            return self.planes[0].clone();
        }
        let (kr, kg, kb) = (T::lit(0.299), T::lit(0.587), T::lit(0.114));
        let mut out = Plane::zeros(self.dim());
        Zip::from(&mut out)
            .and(&self.planes[0])
            .and(&self.planes[1])
            .and(&self.planes[2])
            .for_each(|o, &r, &g, &b| *o = kr * r + kg * g + kb * b);
        out
    }

    pub fn map_planes<F: FnMut(&Plane<T>) -> Plane<T>>(&self, f: F) -> Self {
        Self {
            planes: self.planes.iter().map(f).collect(),
        }
    }
}

pub fn plane_dot<T: Real>(a: &Plane<T>, b: &Plane<T>) -> T {
    let mut acc = T::zero();
    Zip::from(a).and(b).for_each(|&x, &y| acc += x * y);
    acc
}

pub fn plane_norm_sq<T: Real>(a: &Plane<T>) -> T {
    a.iter().fold(T::zero(), |acc, &v| acc + v * v)
}

/// `y += alpha * x`.
pub fn plane_axpy<T: Real>(y: &mut Plane<T>, alpha: T, x: &Plane<T>) {
    Zip::from(y).and(x).for_each(|y, &x| *y += alpha * x);
}

/// Peak signal-to-noise ratio in dB for unit peak.
pub fn psnr<T: Real>(a: &Plane<T>, b: &Plane<T>) -> f64 {
    let mut sse = 0.0;
    Zip::from(a).and(b).for_each(|&x, &y| {
        let d = (x - y).as_f64();
        sse += d * d;
    });
    let mse = sse / a.len() as f64;
    10.0 * (1.0 / mse).log10()
}

/// PSNR averaged in MSE over all planes.
pub fn psnr_image<T: Real>(a: &IntensityImage<T>, b: &IntensityImage<T>) -> f64 {
    let mut sse = 0.0;
    let mut n = 0usize;
    for (pa, pb) in a.planes().iter().zip(b.planes()) {
        Zip::from(pa).and(pb).for_each(|&x, &y| {
            let d = (x - y).as_f64();
            sse += d * d;
        });
        n += pa.len();
    }
    10.0 * (n as f64 / sse).log10()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn gradient_image_rejects_mismatch() {
        let a = Plane::<f64>::zeros((3, 4));
        let b = Plane::<f64>::zeros((4, 3));
        assert!(GradientImage::new(a, b).is_err());
    }

    #[test]
    fn luma_of_gray_is_identity() {
        let p = array![[0.1, 0.2], [0.3, 0.4]];
        let img = IntensityImage::gray(p.clone());
        assert_eq!(img.luma(), p);
    }

    #[test]
    fn luma_of_white_is_one() {
        let one = Plane::<f64>::ones((2, 2));
        let img = IntensityImage::new(vec![one.clone(), one.clone(), one]).unwrap();
        for v in img.luma() {
            assert!((v - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn psnr_of_known_error() {
        let a = Plane::<f64>::zeros((10, 10));
        let b = Plane::<f64>::from_elem((10, 10), 0.1);
        assert!((psnr(&a, &b) - 20.0).abs() < 1e-9);
    }
}
