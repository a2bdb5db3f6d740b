//! Quadrature rules: symmetric Gauss rules on the reference triangle
//! (barycentric points, weights summing to one) and Gauss-Legendre rules
//! on [-1,1] for edge and parameter integrals.

/// Degree-4 rule, 6 points. Exact for quartics on a straight triangle.
pub const TRI_DEG4: [([f64; 3], f64); 6] = {
    const A1: f64 = 0.816847572980459;
    const B1: f64 = 0.091576213509771;
    const W1: f64 = 0.109951743655322;
    const A2: f64 = 0.108103018168070;
    const B2: f64 = 0.445948490915965;
    const W2: f64 = 0.223381589678011;
    [
        ([A1, B1, B1], W1),
        ([B1, A1, B1], W1),
        ([B1, B1, A1], W1),
        ([A2, B2, B2], W2),
        ([B2, A2, B2], W2),
        ([B2, B2, A2], W2),
    ]
};

/// Degree-6 rule, 12 points.
pub const TRI_DEG6: [([f64; 3], f64); 12] = {
    const A1: f64 = 0.873821971016996;
    const B1: f64 = 0.063089014491502;
    const W1: f64 = 0.050844906370207;
    const A2: f64 = 0.501426509658179;
    const B2: f64 = 0.249286745170910;
    const W2: f64 = 0.116786275726379;
    const A3: f64 = 0.636502499121399;
    const B3: f64 = 0.310352451033785;
    const C3: f64 = 0.053145049844816;
    const W3: f64 = 0.082851075618374;
    [
        ([A1, B1, B1], W1),
        ([B1, A1, B1], W1),
        ([B1, B1, A1], W1),
        ([A2, B2, B2], W2),
        ([B2, A2, B2], W2),
        ([B2, B2, A2], W2),
        ([A3, B3, C3], W3),
        ([A3, C3, B3], W3),
        ([B3, A3, C3], W3),
        ([B3, C3, A3], W3),
        ([C3, A3, B3], W3),
        ([C3, B3, A3], W3),
    ]
};

/// Nodes and weights of the n-point Gauss-Legendre rule on [-1,1],
/// weights summing to 2. Newton iteration on the three-term recurrence;
/// accurate to machine precision for n up to a few hundred.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    assert!(n >= 1);
    let mut rule = Vec::with_capacity(n);
    for i in 0..n {
        // Tricomi initial guess for the i-th root, descending from +1.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        rule.push((x, w));
    }
    rule.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    rule
}

/// (P_n(x), P_n'(x)) by the standard recurrence.
fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Integrate f over the physical triangle (v0,v1,v2) with a barycentric rule.
pub fn integrate_tri<F: FnMut([f64; 2]) -> f64>(
    rule: &[([f64; 3], f64)],
    v: &[[f64; 2]; 3],
    mut f: F,
) -> f64 {
    let area = 0.5
        * ((v[1][0] - v[0][0]) * (v[2][1] - v[0][1]) - (v[2][0] - v[0][0]) * (v[1][1] - v[0][1]))
            .abs();
    let mut acc = 0.0;
    for &(l, w) in rule {
        let x = [
            l[0] * v[0][0] + l[1] * v[1][0] + l[2] * v[2][0],
            l[0] * v[0][1] + l[1] * v[1][1] + l[2] * v[2][1],
        ];
        acc += w * f(x);
    }
    area * acc
}

/// Integrate f over the segment [p, q] with an n-point Gauss rule.
pub fn integrate_edge<F: FnMut([f64; 2]) -> f64>(gl: &[(f64, f64)], p: [f64; 2], q: [f64; 2], mut f: F) -> f64 {
    let len = ((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2)).sqrt();
    let mut acc = 0.0;
    for &(t, w) in gl {
        let s = 0.5 * (t + 1.0);
        let x = [p[0] + s * (q[0] - p[0]), p[1] + s * (q[1] - p[1])];
        acc += w * f(x);
    }
    0.5 * len * acc
}
