//! Matrix-free preconditioned conjugate gradients on image planes.

use ndarray::Zip;

use crate::error::Result;
use crate::image::{plane_axpy, plane_dot, Plane};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOptions<T> {
    /// Stop when `||b - A x|| <= tol * ||b||`.
    pub tol: T,
    pub max_iter: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgStatus<T> {
    pub converged: bool,
    pub iterations: usize,
    pub rel_residual: T,
}

/// Solves `A x = b` for symmetric positive (semi)definite `A`, starting from
/// `x`. `precond_inv` holds the inverse of a diagonal preconditioner. If the
/// tolerance is not met the last iterate is kept: CG decreases the quadratic
/// energy monotonically, so it is the best one in that sense.
pub fn conjugate_gradient<T, F>(
    mut apply: F,
    b: &Plane<T>,
    x: &mut Plane<T>,
    precond_inv: Option<&Plane<T>>,
    opts: &CgOptions<T>,
) -> Result<CgStatus<T>>
where
    T: Real,
    F: FnMut(&Plane<T>) -> Result<Plane<T>>,
{
    let bnorm = plane_dot(b, b).sqrt();
    if bnorm == T::zero() {
        x.fill(T::zero());
        return Ok(CgStatus {
            converged: true,
            iterations: 0,
            rel_residual: T::zero(),
        });
    }
    let mut r = b - &apply(x)?;
    let precondition = |r: &Plane<T>| match precond_inv {
        Some(m) => r * m,
        None => r.clone(),
    };
    let mut rnorm = plane_dot(&r, &r).sqrt();
    if rnorm <= opts.tol * bnorm {
        return Ok(CgStatus {
            converged: true,
            iterations: 0,
            rel_residual: rnorm / bnorm,
        });
    }
    let mut z = precondition(&r);
    let mut p = z.clone();
    let mut rz = plane_dot(&r, &z);
    for it in 1..=opts.max_iter {
        let ap = apply(&p)?;
        let pap = plane_dot(&p, &ap);
        if !(pap > T::zero()) {
            break;
        }
        let alpha = rz / pap;
        plane_axpy(x, alpha, &p);
        plane_axpy(&mut r, -alpha, &ap);
        rnorm = plane_dot(&r, &r).sqrt();
        if rnorm <= opts.tol * bnorm {
            return Ok(CgStatus {
                converged: true,
                iterations: it,
                rel_residual: rnorm / bnorm,
            });
        }
        z = precondition(&r);
        let rz_new = plane_dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        Zip::from(&mut p).and(&z).for_each(|p, &z| *p = z + beta * *p);
    }
    Ok(CgStatus {
        converged: false,
        iterations: opts.max_iter,
        rel_residual: rnorm / bnorm,
    })
}
