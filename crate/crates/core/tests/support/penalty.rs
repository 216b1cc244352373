use deblur_core::penalty::{eval_g, eval_h, eval_nu, gamma_star, h_curvature, h_gradient, PenaltyPoint};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `min over gamma > 0 of x^2/gamma + ln(lambda + gamma s)` by golden-section
/// search in `ln gamma`.
pub fn variational_min(x: f64, s: f64, lambda: f64) -> f64 {
    let f = |t: f64| {
        let g = t.exp();
        x * x / g + (lambda + g * s).ln()
    };
    let (mut a, mut b) = (-60.0f64, 60.0f64);
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    f(0.5 * (a + b))
}

/// `n` points spaced evenly in `ln` between `lo` and `hi`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| (lo.ln() + (hi / lo).ln() * i as f64 / (n - 1) as f64).exp()).collect()
}

/// Worst absolute errors of `g` against the brute-force minimum plus `ln 2`,
/// and of the `h` and `nu` decompositions, over log-uniform draws.
#[derive(Debug)]
pub struct IdentityErrors {
    pub brute_force: f64,
    pub via_h: f64,
    pub via_nu: f64,
    pub at_gamma_star: f64,
}

pub fn identity_errors(samples: usize, seed: u64) -> IdentityErrors {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |lo: f64, hi: f64| rng.gen_range(lo.ln()..hi.ln()).exp();
    let mut e = IdentityErrors { brute_force: 0.0, via_h: 0.0, via_nu: 0.0, at_gamma_star: 0.0 };
    for _ in 0..samples {
        let (x, s, l) = (draw(1e-3, 1e2), draw(1e-3, 1.0), draw(1e-4, 1e2));
        let p = PenaltyPoint::new(x, s, l).unwrap();
        let g = eval_g(&p);
        let gs = gamma_star(&p);
        e.brute_force = e.brute_force.max((g - variational_min(x, s, l) - std::f64::consts::LN_2).abs());
        e.at_gamma_star = e.at_gamma_star.max((g - x * x / gs - (l + gs * s).ln() - std::f64::consts::LN_2).abs());
        e.via_h = e.via_h.max((g - eval_h(x, l / s).unwrap() - s.ln()).abs());
        e.via_nu = e.via_nu.max((g - eval_nu(x / l.sqrt(), s.sqrt()).unwrap() - l.ln()).abs());
    }
    e
}

/// Largest violations of the shape properties of `h` over a `(z, rho)` grid.
/// Every field is `<= 0` when the property holds.
#[derive(Debug)]
pub struct ShapeReport {
    /// Largest second difference of `h` along `z`.
    pub second_difference: f64,
    /// Negated smallest first difference of `h` along `z`.
    pub decrease: f64,
    /// Largest increase of the slope along `z`.
    pub slope_increase: f64,
    /// Largest `h'(z; rho2) - h'(z; rho1)` over `rho1 < rho2`, `z > 0`.
    pub slope_order: f64,
    /// Largest drop of `h''/h'` between neighbouring `rho`.
    pub ratio_drop: f64,
}

pub fn shape_report(rhos: &[f64], zs: &[f64]) -> ShapeReport {
    let mut r = ShapeReport {
        second_difference: f64::NEG_INFINITY,
        decrease: f64::NEG_INFINITY,
        slope_increase: f64::NEG_INFINITY,
        slope_order: f64::NEG_INFINITY,
        ratio_drop: f64::NEG_INFINITY,
    };
    for &rho in rhos {
        let h: Vec<f64> = zs.iter().map(|&z| eval_h(z, rho).unwrap()).collect();
        let d: Vec<f64> = zs.iter().map(|&z| h_gradient(z, rho).unwrap()).collect();
        for k in 1..zs.len() {
            r.decrease = r.decrease.max(h[k - 1] - h[k]);
            r.slope_increase = r.slope_increase.max(d[k] - d[k - 1]);
            if k + 1 < zs.len() {
                r.second_difference = r.second_difference.max(h[k - 1] - 2.0 * h[k] + h[k + 1]);
            }
        }
    }
    for &z in zs.iter().filter(|&&z| z > 0.0) {
        for (i, &r1) in rhos.iter().enumerate() {
            for &r2 in &rhos[i + 1..] {
                r.slope_order = r.slope_order.max(h_gradient(z, r2).unwrap() - h_gradient(z, r1).unwrap());
            }
        }
        let e = 1e-5 * z.max(1e-3);
        let ratio = |rho: f64| {
            let fd = (h_gradient(z + e, rho).unwrap() - h_gradient(z - e, rho).unwrap()) / (2.0 * e);
            fd / h_gradient(z, rho).unwrap()
        };
        for pair in rhos.windows(2) {
            r.ratio_drop = r.ratio_drop.max(ratio(pair[0]) - ratio(pair[1]));
        }
    }
    r
}

/// Largest relative error of `h'` and `h''` against five-point central
/// differences of `h` and `h'` over a `(z, rho)` grid with `z > 0`.
pub fn derivative_errors(rhos: &[f64], zs: &[f64]) -> (f64, f64) {
    let (mut slope, mut curv) = (0.0f64, 0.0f64);
    for &rho in rhos {
        for &z in zs.iter().filter(|&&z| z > 0.0) {
            let e = 1e-3 * z.min(rho.sqrt());
            let five = |f: &dyn Fn(f64) -> f64| (f(z - 2.0 * e) - 8.0 * f(z - e) + 8.0 * f(z + e) - f(z + 2.0 * e)) / (12.0 * e);
            let g = h_gradient(z, rho).unwrap();
            let fd = five(&|v| eval_h(v, rho).unwrap());
            slope = slope.max((fd - g).abs() / g.abs());
            let c = h_curvature(z, rho).unwrap();
            let fd = five(&|v| h_gradient(v, rho).unwrap());
            curv = curv.max((fd - c).abs() / c.abs());
        }
    }
    (slope, curv)
}
