//! Karhunen-Loeve expansion of a random coefficient with separable
//! exponential covariance exp(-|x1-y1|/l) * exp(-|x2-y2|/l) on a rectangle.
//! 1D eigenpairs are analytic (transcendental roots per bracketing interval);
//! 2D modes are tensor products sorted by eigenvalue.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceSpec {
    pub correlation_length: f64,
    pub std_dev: f64,
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
}

impl CovarianceSpec {
    pub fn new(correlation_length: f64, std_dev: f64, x_range: [f64; 2], y_range: [f64; 2]) -> Self {
        assert!(correlation_length > 0.0 && std_dev >= 0.0);
        CovarianceSpec {
            correlation_length,
            std_dev,
            x_range,
            y_range,
        }
    }
}

/// One 1D eigenpair of the exponential kernel on [-a, a].
#[derive(Debug, Clone, Copy)]
pub struct Eigen1d {
    pub omega: f64,
    pub lambda: f64,
    /// true: phi = cos(omega x)/nrm, false: phi = sin(omega x)/nrm
    pub even: bool,
    nrm: f64,
}

impl Eigen1d {
    /// Evaluate the unit-L2-norm eigenfunction at centered coordinate x.
    pub fn eval(&self, x: f64) -> f64 {
        if self.even {
            (self.omega * x).cos() / self.nrm
        } else {
            (self.omega * x).sin() / self.nrm
        }
    }

    pub fn eval_deriv(&self, x: f64) -> f64 {
        if self.even {
            -self.omega * (self.omega * x).sin() / self.nrm
        } else {
            self.omega * (self.omega * x).cos() / self.nrm
        }
    }
}

/// The m largest eigenpairs of the kernel exp(-|x-y|/ell) on [-a, a].
/// The j-th frequency lies in ((j-1)pi/(2a), j pi/(2a)); odd j solves
/// c = w tan(w a), even j solves w = -c tan(w a), with c = 1/ell.
pub fn solve_1d_eigenpairs(ell: f64, a: f64, m: usize) -> Result<Vec<Eigen1d>> {
    assert!(ell > 0.0 && a > 0.0 && m >= 1);
    let c = 1.0 / ell;
    let mut out = Vec::with_capacity(m);
    for j in 1..=m {
        let lo = (j as f64 - 1.0) * std::f64::consts::FRAC_PI_2 / a;
        let hi = j as f64 * std::f64::consts::FRAC_PI_2 / a;
        let pad = (hi - lo) * 1e-12;
        let even = j % 2 == 1;
        let f = |w: f64| {
            if even {
                c - w * (w * a).tan()
            } else {
                w + c * (w * a).tan()
            }
        };
        let omega = bisect(f, lo + pad, hi - pad)?;
        let lambda = 2.0 * c / (omega * omega + c * c);
        let s2 = (2.0 * omega * a).sin() / (2.0 * omega);
        let nrm = if even { (a + s2).sqrt() } else { (a - s2).sqrt() };
        out.push(Eigen1d {
            omega,
            lambda,
            even,
            nrm,
        });
    }
    Ok(out)
}

fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64) -> Result<f64> {
    let (flo, fhi) = (f(lo), f(hi));
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() {
        return Err(Error::Bracketing(lo, hi));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// A 2D tensor-product KL mode.
#[derive(Debug, Clone, Copy)]
pub struct Mode2d {
    pub lambda: f64,
    pub fx: Eigen1d,
    pub fy: Eigen1d,
    /// 1-based 1D indices (x, y) of the factors.
    pub jk: (usize, usize),
}

impl Mode2d {
    pub fn eval(&self, x: [f64; 2], center: [f64; 2]) -> f64 {
        self.fx.eval(x[0] - center[0]) * self.fy.eval(x[1] - center[1])
    }

    pub fn grad(&self, x: [f64; 2], center: [f64; 2]) -> [f64; 2] {
        let (u, v) = (x[0] - center[0], x[1] - center[1]);
        [
            self.fx.eval_deriv(u) * self.fy.eval(v),
            self.fx.eval(u) * self.fy.eval_deriv(v),
        ]
    }
}

/// The `count` largest 2D tensor eigenvalues (lambda_j * lambda_k) on the
/// square of half-width `a`, sorted descending, ties by (j, k) lex order.
pub fn spectrum_2d(ell: f64, a: f64, count: usize) -> Vec<(f64, usize, usize)> {
    let mut m = 64usize;
    loop {
        let e1 = solve_1d_eigenpairs(ell, a, m + 1).expect("bracketed roots");
        let mut pool: Vec<(f64, usize, usize)> = Vec::with_capacity(m * m);
        for j in 0..m {
            for k in 0..m {
                pool.push((e1[j].lambda * e1[k].lambda, j + 1, k + 1));
            }
        }
        pool.sort_by(|x, y| {
            y.0.partial_cmp(&x.0)
                .unwrap()
                .then(x.1.cmp(&y.1))
                .then(x.2.cmp(&y.2))
        });
        if count <= pool.len() {
            // entries beyond the m x m pool are all <= lambda_1 * lambda_{m+1}
            let guard = e1[0].lambda * e1[m].lambda;
            if pool[count - 1].0 >= guard {
                pool.truncate(count);
                return pool;
            }
        }
        m *= 2;
        assert!(m <= 1 << 14, "2D spectrum pool exhausted");
    }
}

/// Smallest N with sum_{i<=N} lambda_i >= 0.97 * 4 over the 2D tensor
/// eigenvalue stream on [-1,1]^2 (total = domain measure times unit variance).
pub fn n_infinity(ell: f64) -> usize {
    let threshold = 0.97 * 4.0;
    let mut m = 64usize;
    loop {
        let e1 = solve_1d_eigenpairs(ell, 1.0, m + 1).expect("bracketed roots");
        let mut pool: Vec<f64> = Vec::with_capacity(m * m);
        for j in 0..m {
            for k in 0..m {
                pool.push(e1[j].lambda * e1[k].lambda);
            }
        }
        pool.sort_by(|x, y| y.partial_cmp(x).unwrap());
        let guard = e1[0].lambda * e1[m].lambda;
        let mut acc = 0.0;
        for (i, &l) in pool.iter().enumerate() {
            acc += l;
            if acc >= threshold {
                if l >= guard {
                    return i + 1;
                }
                break;
            }
        }
        m *= 2;
        assert!(m <= 1 << 14, "n_infinity pool exhausted");
    }
}

/// Piecewise-constant field over axis-aligned subrectangles; the first
/// matching patch wins, else the default value.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseConst {
    pub default: f64,
    pub patches: Vec<([f64; 2], [f64; 2], f64)>,
}

impl PiecewiseConst {
    pub fn constant(v: f64) -> Self {
        PiecewiseConst {
            default: v,
            patches: Vec::new(),
        }
    }

    pub fn eval(&self, x: [f64; 2]) -> f64 {
        for &(xr, yr, v) in &self.patches {
            if x[0] >= xr[0] && x[0] <= xr[1] && x[1] >= yr[0] && x[1] <= yr[1] {
                return v;
            }
        }
        self.default
    }

    pub fn scaled(&self, s: f64) -> Self {
        PiecewiseConst {
            default: s * self.default,
            patches: self
                .patches
                .iter()
                .map(|&(xr, yr, v)| (xr, yr, s * v))
                .collect(),
        }
    }
}

/// Truncated KL representation of a random coefficient:
/// z_N(x, xi) = mean(x) + kappa * sum_k sqrt(lambda_k) phi_k(x) xi_k.
#[derive(Debug, Clone)]
pub struct KLField {
    pub mean: PiecewiseConst,
    pub kappa: f64,
    pub modes: Vec<Mode2d>,
    pub n_infinity: usize,
    /// Lambda_z = sqrt(sum of kernel eigenvalues N+1 .. N_infinity).
    pub tail: f64,
    pub center: [f64; 2],
}

impl KLField {
    pub fn deterministic(mean: PiecewiseConst) -> Self {
        KLField {
            mean,
            kappa: 0.0,
            modes: Vec::new(),
            n_infinity: 0,
            tail: 0.0,
            center: [0.0, 0.0],
        }
    }

    pub fn n(&self) -> usize {
        self.modes.len()
    }

    /// kappa * sqrt(lambda_i) * phi_i(x): the coefficient of xi_i (1-based i).
    /// Modes beyond this field's truncation contribute zero.
    pub fn coef_mode(&self, i: usize, x: [f64; 2]) -> f64 {
        if i == 0 || i > self.modes.len() {
            return 0.0;
        }
        let m = &self.modes[i - 1];
        self.kappa * m.lambda.sqrt() * m.eval(x, self.center)
    }

    /// Gradient of the i-th coefficient function (the mean is piecewise
    /// constant, so the mean "mode" i = 0 has zero gradient a.e.).
    pub fn coef_mode_grad(&self, i: usize, x: [f64; 2]) -> [f64; 2] {
        if i == 0 || i > self.modes.len() {
            return [0.0, 0.0];
        }
        let m = &self.modes[i - 1];
        let s = self.kappa * m.lambda.sqrt();
        let g = m.grad(x, self.center);
        [s * g[0], s * g[1]]
    }

    pub fn mean_at(&self, x: [f64; 2]) -> f64 {
        self.mean.eval(x)
    }

    pub fn realization(&self, xi: &[f64], x: [f64; 2]) -> f64 {
        let mut v = self.mean.eval(x);
        for (k, m) in self.modes.iter().enumerate() {
            if k >= xi.len() {
                break;
            }
            v += self.kappa * m.lambda.sqrt() * m.eval(x, self.center) * xi[k];
        }
        v
    }

}

/// Build the N-term 2D KL field for the given covariance spec. `kappa` is
/// the full coefficient amplitude multiplying sqrt(lambda_k) phi_k(x) xi_k
/// (any deterministic prefactor of the field folds into `mean` and `kappa`).
pub fn build_2d_kl(spec: &CovarianceSpec, mean: PiecewiseConst, kappa: f64, n: usize) -> KLField {
    assert!(n >= 1);
    let ax = 0.5 * (spec.x_range[1] - spec.x_range[0]);
    let ay = 0.5 * (spec.y_range[1] - spec.y_range[0]);
    let center = [
        0.5 * (spec.x_range[0] + spec.x_range[1]),
        0.5 * (spec.y_range[0] + spec.y_range[1]),
    ];
    assert!(
        (ax - ay).abs() < 1e-14,
        "tensor spectrum ordering assumes a square domain"
    );
    let n_inf = n_infinity_on(spec.correlation_length, ax);
    let depth = n.max(n_inf);
    let spectrum = spectrum_2d(spec.correlation_length, ax, depth);
    let max_1d = spectrum[..n].iter().map(|s| s.1.max(s.2)).max().unwrap();
    let e1 = solve_1d_eigenpairs(spec.correlation_length, ax, max_1d).expect("bracketed roots");
    let modes: Vec<Mode2d> = spectrum[..n]
        .iter()
        .map(|&(lambda, j, k)| Mode2d {
            lambda,
            fx: e1[j - 1],
            fy: e1[k - 1],
            jk: (j, k),
        })
        .collect();
    let tail_sq: f64 = if n >= n_inf {
        0.0
    } else {
        spectrum[n..n_inf].iter().map(|s| s.0).sum()
    };
    KLField {
        mean,
        kappa,
        modes,
        n_infinity: n_inf,
        tail: tail_sq.sqrt(),
        center,
    }
}

fn n_infinity_on(ell: f64, a: f64) -> usize {
    if (a - 1.0).abs() < 1e-14 {
        n_infinity(ell)
    } else {
        // same 97% rule with total (2a)^2
        let threshold = 0.97 * 4.0 * a * a;
        let mut m = 64usize;
        loop {
            let e1 = solve_1d_eigenpairs(ell, a, m + 1).expect("bracketed roots");
            let mut pool: Vec<f64> = Vec::with_capacity(m * m);
            for j in 0..m {
                for k in 0..m {
                    pool.push(e1[j].lambda * e1[k].lambda);
                }
            }
            pool.sort_by(|x, y| y.partial_cmp(x).unwrap());
            let guard = e1[0].lambda * e1[m].lambda;
            let mut acc = 0.0;
            let mut hit = None;
            for (i, &l) in pool.iter().enumerate() {
                acc += l;
                if acc >= threshold {
                    hit = Some((i + 1, l));
                    break;
                }
            }
            if let Some((count, l)) = hit {
                if l >= guard {
                    return count;
                }
            }
            m *= 2;
            assert!(m <= 1 << 14);
        }
    }
}
