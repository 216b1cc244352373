use deblur_core::eff::{apply_blur, build_eff, EffDecomposition, EffSpec};
use deblur_core::image::{GradientImage, Plane};
use deblur_core::penalty::eval_nu;
use deblur_core::pipeline::gradient_plane;
use deblur_core::pose::{Pose, PoseGrid};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Per-pixel quadratic forms `M_i` with `||w||_{B_i}^2 = w^T M_i w`.
pub fn local_forms(eff: &EffDecomposition<f64>) -> Vec<Array2<f64>> {
    let (h, w) = eff.dim();
    let grams: Vec<Array2<f64>> = (0..eff.n_patches())
        .map(|r| {
            let a = eff.basis_dense(r);
            a.t().dot(&a)
        })
        .collect();
    let mut out = Vec::with_capacity(h * w);
    for row in 0..h {
        for col in 0..w {
            let mut m = Array2::zeros(grams[0].dim());
            for (r, g) in grams.iter().enumerate() {
                let v = eff.window(r, row, col);
                if v != 0.0 {
                    m.scaled_add(v, g);
                }
            }
            out.push(m);
        }
    }
    out
}

/// Exact minimizer of `||y - D w||^2 + w^T Q w` over `w >= 0` for tiny `J`,
/// by enumerating free sets.
pub fn nnqp(g: &Array2<f64>, b: &[f64]) -> Vec<f64> {
    let j = b.len();
    let obj = |w: &[f64]| {
        let mut v = 0.0;
        for p in 0..j {
            v -= 2.0 * b[p] * w[p];
            for q in 0..j {
                v += w[p] * g[[p, q]] * w[q];
            }
        }
        v
    };
    let mut best = (0.0, vec![0.0; j]);
    for mask in 1..(1u32 << j) {
        let free: Vec<usize> = (0..j).filter(|&p| mask & (1 << p) != 0).collect();
        let m = free.len();
        let mut a = Array2::<f64>::zeros((m, m + 1));
        for (r, &p) in free.iter().enumerate() {
            for (c, &q) in free.iter().enumerate() {
                a[[r, c]] = g[[p, q]];
            }
            a[[r, m]] = b[p];
        }
        for col in 0..m {
            let piv = (col..m).max_by(|&x, &y| a[[x, col]].abs().partial_cmp(&a[[y, col]].abs()).unwrap()).unwrap();
            for c in 0..=m {
                a.swap([col, c], [piv, c]);
            }
            for r in 0..m {
                if r != col {
                    let f = a[[r, col]] / a[[col, col]];
                    for c in col..=m {
                        a[[r, c]] -= f * a[[col, c]];
                    }
                }
            }
        }
        let mut w = vec![0.0; j];
        let mut ok = true;
        for (r, &p) in free.iter().enumerate() {
            w[p] = a[[r, m]] / a[[r, r]];
            ok &= w[p] >= 0.0;
        }
        if ok {
            let v = obj(&w);
            if v < best.0 {
                best = (v, w);
            }
        }
    }
    best.1
}

/// Minimizes `||y - D w||^2 / lambda + sum_i nu(w; mu_i, B_i)` over `w >= 0`
/// by majorizing each `nu` with its tangent in `u = ||w||_{B_i}^2`.
pub fn minimize_w_cost(d: &[Vec<f64>], y: &[f64], lambda: f64, mu: &[f64], forms: &[Array2<f64>], w0: &[f64]) -> (Vec<f64>, f64) {
    let j = d.len();
    let dtd = Array2::from_shape_fn((j, j), |(p, q)| d[p].iter().zip(&d[q]).map(|(a, b)| a * b).sum::<f64>() / lambda);
    let dty: Vec<f64> = (0..j).map(|p| d[p].iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / lambda).collect();
    let quad = |m: &Array2<f64>, w: &[f64]| -> f64 { (0..j).map(|p| (0..j).map(|q| w[p] * m[[p, q]] * w[q]).sum::<f64>()).sum() };
    let cost = |w: &[f64]| -> f64 {
        let fit: f64 = (0..y.len()).map(|i| (y[i] - (0..j).map(|p| d[p][i] * w[p]).sum::<f64>()).powi(2)).sum::<f64>() / lambda;
        let pen: f64 = mu.iter().zip(forms).map(|(&m, f)| eval_nu(m, quad(f, w).sqrt()).unwrap()).sum();
        fit + pen
    };
    let mut w = w0.to_vec();
    for _ in 0..5000 {
        let mut g = dtd.clone();
        for (&m, f) in mu.iter().zip(forms) {
            if m == 0.0 {
                continue;
            }
            let u = quad(f, &w);
            let z = m * u.sqrt();
            let c = m * m * ((z * z + 4.0).sqrt() - z) / (2.0 * z);
            g.scaled_add(c, f);
        }
        let next = nnqp(&g, &dty);
        assert!(next.iter().any(|&v| v > 0.0));
        let change: f64 = next.iter().zip(&w).map(|(a, b)| (a - b).abs()).sum::<f64>() / w.iter().map(|v| v.abs()).sum::<f64>();
        w = next;
        if change < 1e-13 {
            break;
        }
    }
    let c = cost(&w);
    (w, c)
}

/// Relative error of the `alpha`-scaled minimizer against `w*/alpha`, for each
/// `alpha`, plus the norm of the unscaled minimizer.
pub fn scale_covariance_errors(alphas: &[f64]) -> (f64, Vec<f64>) {

    let n = 12;
    let poses = vec![Pose::new(0.0, 0.0, 0.0), Pose::new(0.0, 1.0, 0.0), Pose::new(0.08, 0.0, 1.0)];
    let grid = PoseGrid::from_poses(poses).unwrap();
    let eff = build_eff(&grid, n, n, &EffSpec::new(6, 2, 5)).unwrap();
    let forms = local_forms(&eff);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let sharp = Plane::from_shape_fn((n, n), |_| if rng.gen::<f64>() < 0.3 { rng.gen_range(0.0..1.0) } else { 0.5 });
    let x = gradient_plane(&sharp);
    let w_true = [0.5, 0.3, 0.2];
    let mut y = apply_blur(&x, &w_true, &eff).unwrap();
    for c in y.channels_mut() {
        c.mapv_inplace(|v| v + 0.01 * rng.gen_range(-1.0..1.0));
    }
    let lambda: f64 = 1e-2;
    let flat = |g: &GradientImage<f64>| -> Vec<f64> { g.channel(0).iter().chain(g.channel(1).iter()).copied().collect() };
    let yv = flat(&y);
    let forms2: Vec<Array2<f64>> = forms.iter().chain(forms.iter()).cloned().collect();
    let solve = |alpha: f64| {
        let xa = x.scaled(alpha);
        let cols: Vec<Vec<f64>> = (0..3)
            .map(|j| {
                let mut e = vec![0.0; 3];
                e[j] = 1.0;
                flat(&apply_blur(&xa, &e, &eff).unwrap())
            })
            .collect();
        let mu: Vec<f64> = flat(&xa).iter().map(|v| v.abs() / lambda.sqrt()).collect();
        minimize_w_cost(&cols, &yv, lambda, &mu, &forms2, &[1.0 / 3.0; 3])
    };
    let (w1, _) = solve(1.0);
    let n1: f64 = w1.iter().map(|v| v * v).sum::<f64>().sqrt();
    let errs = alphas
        .iter()
        .map(|&alpha| {
            let (wa, _) = solve(alpha);
            let err: f64 = wa.iter().zip(&w1).map(|(a, b)| (a - b / alpha).powi(2)).sum::<f64>().sqrt();
            err * alpha / n1
        })
        .collect();
    (n1, errs)
}
