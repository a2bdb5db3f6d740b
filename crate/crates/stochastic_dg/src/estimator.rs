//! Residual error estimation split four ways: spatial residual, data
//! projection error, parametric truncation of the chaos basis, and
//! truncation of the coefficient expansions.
//!
//! All stochastic integrals reduce to Parseval sums: expansion-term weights
//! are frozen at the mean field, so each squared residual is a finite sum of
//! spatial norms of coupled coefficient functions. Spatial residual and data
//! terms keep only the mass on the active index set; the mass pushed onto
//! neighbor indices is exactly the parametric estimator and is regrouped per
//! detail index to drive enrichment.

use crate::assembly::{barycentric, tri_grads, ProblemData, ProjectedData};
use crate::mesh::TriangleMesh;
use crate::pc_basis::{IndexSet, SparseG};
use crate::quadrature::{gauss_legendre, TRI_DEG6};
use crate::random_field::KLField;
use crate::sparse::ColMat;

#[derive(Debug, Clone)]
pub struct EstimateReport {
    /// Per-element squared contributions.
    pub eta_h_k: Vec<f64>,
    pub eta_theta_k: Vec<f64>,
    pub eta_q_k: Vec<f64>,
    pub eta_z_k: Vec<f64>,
    /// Squared parametric indicators per detail index, in detail-set order.
    pub eta_q_idx: Vec<f64>,
    pub eta_h2: f64,
    pub eta_theta2: f64,
    pub eta_q2: f64,
    pub eta_z2: f64,
}

impl EstimateReport {
    pub fn eta_t2(&self) -> f64 {
        self.eta_h2 + self.eta_theta2 + self.eta_q2 + self.eta_z2
    }

    pub fn eta_t(&self) -> f64 {
        self.eta_t2().sqrt()
    }

    /// Spatial side of the refine-or-enrich comparison.
    pub fn spatial2(&self) -> f64 {
        self.eta_h2 + self.eta_theta2
    }

    /// Parametric side; coefficient truncation counts here.
    pub fn parametric2(&self) -> f64 {
        self.eta_q2 + self.eta_z2
    }
}

/// eta_T / (|u_ref|^2 - |u|^2)^(1/2) on squared energy norms; None when the
/// reference is not richer than the current solution.
pub fn effectivity(eta_t: f64, ref_norm_sq: f64, cur_norm_sq: f64) -> Option<f64> {
    let rad = ref_norm_sq - cur_norm_sq;
    if rad > 0.0 {
        Some(eta_t / rad.sqrt())
    } else {
        None
    }
}

fn tail_scale(f: &KLField) -> f64 {
    f.kappa * f.tail
}

/// Integral of a squared linear over a triangle from nodal values.
fn tri_p1_sq(c: &[f64; 3], area: f64) -> f64 {
    let s = c[0] + c[1] + c[2];
    area / 12.0 * (c[0] * c[0] + c[1] * c[1] + c[2] * c[2] + s * s)
}

/// Mean square of a linear over a triangle. Weight denominators use this
/// measure-normalized magnitude (for a constant coefficient it is just the
/// value), so the weights scale like h^2/a and h/a and stay consistent with
/// the h^-1 penalty scaling of the energy norm.
fn tri_p1_ms(c: &[f64; 3]) -> f64 {
    let s = c[0] + c[1] + c[2];
    (c[0] * c[0] + c[1] * c[1] + c[2] * c[2] + s * s) / 12.0
}

/// Integral of a squared linear over an edge from endpoint values.
fn edge_lin_sq(v0: f64, v1: f64, len: f64) -> f64 {
    len * (v0 * v0 + v0 * v1 + v1 * v1) / 3.0
}

/// Mean square of a linear over an edge; see `tri_p1_ms`.
fn edge_lin_ms(v0: f64, v1: f64) -> f64 {
    (v0 * v0 + v0 * v1 + v1 * v1) / 3.0
}

fn eval_p1(nodal: &[f64; 3], bc: &[f64; 3]) -> f64 {
    nodal[0] * bc[0] + nodal[1] * bc[1] + nodal[2] * bc[2]
}

fn p1_gradient(nodal: &[f64; 3], grads: &[[f64; 2]; 3]) -> [f64; 2] {
    [
        nodal[0] * grads[0][0] + nodal[1] * grads[1][0] + nodal[2] * grads[2][0],
        nodal[0] * grads[0][1] + nodal[1] * grads[1][1] + nodal[2] * grads[2][1],
    ]
}

/// Entries of the coupling matrices filtered to rows on the detail set and
/// columns on the active set, with rows rebased to detail positions.
fn detail_couplings(g_ext: &[SparseG], nb: usize) -> Vec<Vec<(usize, usize, f64)>> {
    g_ext
        .iter()
        .map(|g| {
            g.entries
                .iter()
                .filter(|&&(r, c, _)| r >= nb && c < nb)
                .map(|&(r, c, v)| (r - nb, c, v))
                .collect()
        })
        .collect()
}

struct EdgeGeom {
    p: [f64; 2],
    q: [f64; 2],
    len: f64,
    n: [f64; 2],
}

fn edge_geom(mesh: &TriangleMesh, ei: usize) -> EdgeGeom {
    let e = &mesh.edges[ei];
    EdgeGeom {
        p: mesh.vertices[e.v[0]],
        q: mesh.vertices[e.v[1]],
        len: e.length,
        n: e.normal,
    }
}

impl EdgeGeom {
    fn at(&self, s: f64) -> [f64; 2] {
        [
            self.p[0] + s * (self.q[0] - self.p[0]),
            self.p[1] + s * (self.q[1] - self.p[1]),
        ]
    }
}

/// Squared energy norm of the coupled solution: diffusion-weighted
/// gradients, penalty jumps, and convective jump terms, integrated exactly
/// in the stochastic variables through the coupling matrices. The convective
/// absolute value is resolved with the sign of the mean field at each edge
/// midpoint; projected coefficients and assembly quadrature throughout.
pub fn energy_norm_sq(
    mesh: &TriangleMesh,
    data: &ProblemData,
    proj: &ProjectedData,
    set: &IndexSet,
    u: &ColMat,
    g_b: &[SparseG],
    n_modes: usize,
) -> f64 {
    let nb = set.len();
    assert_eq!(u.cols, nb);
    assert_eq!(u.rows, 3 * mesh.n_triangles());
    assert!(g_b.len() > n_modes);
    let gl = gauss_legendre(3);
    let mut total = 0.0;

    for t in 0..mesh.n_triangles() {
        let v = mesh.tri_vertices(t);
        let area = mesh.area(t);
        let grads = tri_grads(&v, area);
        let gu: Vec<[f64; 2]> = (0..nb)
            .map(|q| {
                let c = [u.get(3 * t, q), u.get(3 * t + 1, q), u.get(3 * t + 2, q)];
                p1_gradient(&c, &grads)
            })
            .collect();
        for i in 0..=n_modes {
            let an = &proj.a_h[i][t];
            let abar = (an[0] + an[1] + an[2]) / 3.0;
            if abar == 0.0 {
                continue;
            }
            for &(p, q, w) in &g_b[i].entries {
                total += w * abar * area * (gu[p][0] * gu[q][0] + gu[p][1] * gu[q][1]);
            }
        }
    }

    for (ei, e) in mesh.edges.iter().enumerate() {
        let geom = edge_geom(mesh, ei);
        let tin = e.tri_in;
        let vin = mesh.tri_vertices(tin);
        let ain = mesh.area(tin);
        let sigma = data.sigma;
        let mid = geom.at(0.5);
        let bbar = data.b_mode(0, mid);
        let bdn_mean = bbar[0] * geom.n[0] + bbar[1] * geom.n[1];
        let sign = if bdn_mean > 0.0 {
            1.0
        } else if bdn_mean < 0.0 {
            -1.0
        } else {
            0.0
        };
        match e.tri_out {
            Some(tout) => {
                let vout = mesh.tri_vertices(tout);
                let aout = mesh.area(tout);
                for &(glt, glw) in gl.iter() {
                    let s = 0.5 * (glt + 1.0);
                    let w = 0.5 * glw * geom.len;
                    let x = geom.at(s);
                    let bc_in = barycentric(&vin, ain, x);
                    let bc_out = barycentric(&vout, aout, x);
                    let jump: Vec<f64> = (0..nb)
                        .map(|q| {
                            let ci = [u.get(3 * tin, q), u.get(3 * tin + 1, q), u.get(3 * tin + 2, q)];
                            let co =
                                [u.get(3 * tout, q), u.get(3 * tout + 1, q), u.get(3 * tout + 2, q)];
                            eval_p1(&ci, &bc_in) - eval_p1(&co, &bc_out)
                        })
                        .collect();
                    for i in 0..=n_modes {
                        let a_avg = 0.5
                            * (eval_p1(&proj.a_h[i][tin], &bc_in)
                                + eval_p1(&proj.a_h[i][tout], &bc_out));
                        let bx = 0.5
                            * (eval_p1(&proj.b_h[0][i][tin], &bc_in)
                                + eval_p1(&proj.b_h[0][i][tout], &bc_out));
                        let by = 0.5
                            * (eval_p1(&proj.b_h[1][i][tin], &bc_in)
                                + eval_p1(&proj.b_h[1][i][tout], &bc_out));
                        let bdn = bx * geom.n[0] + by * geom.n[1];
                        for &(p, q, gw) in &g_b[i].entries {
                            let jj = jump[p] * jump[q];
                            total += w * gw * (sigma / geom.len * a_avg * jj
                                + 0.5 * sign * bdn * jj);
                        }
                    }
                }
            }
            None => {
                for &(glt, glw) in gl.iter() {
                    let s = 0.5 * (glt + 1.0);
                    let w = 0.5 * glw * geom.len;
                    let x = geom.at(s);
                    let bc = barycentric(&vin, ain, x);
                    let tr: Vec<f64> = (0..nb)
                        .map(|q| {
                            let c = [u.get(3 * tin, q), u.get(3 * tin + 1, q), u.get(3 * tin + 2, q)];
                            eval_p1(&c, &bc)
                        })
                        .collect();
                    for i in 0..=n_modes {
                        let a_val = eval_p1(&proj.a_h[i][tin], &bc);
                        let bx = eval_p1(&proj.b_h[0][i][tin], &bc);
                        let by = eval_p1(&proj.b_h[1][i][tin], &bc);
                        let bdn = bx * geom.n[0] + by * geom.n[1];
                        for &(p, q, gw) in &g_b[i].entries {
                            let tt = tr[p] * tr[q];
                            total += w * gw * (sigma / geom.len * a_val * tt
                                + 0.5 * sign * bdn * tt);
                        }
                    }
                }
            }
        }
    }
    total
}

/// Full estimator sweep. `g_b` couples the active set, `g_ext` the active
/// set extended by its detail neighbors; `n_modes` is the expansion
/// truncation shared with assembly.
pub fn estimate(
    mesh: &TriangleMesh,
    data: &ProblemData,
    proj: &ProjectedData,
    set: &IndexSet,
    u: &ColMat,
    g_b: &[SparseG],
    g_ext: &[SparseG],
    n_modes: usize,
) -> EstimateReport {
    let nt = mesh.n_triangles();
    let nb = set.len();
    let nr = set.detail().len();
    assert_eq!(u.cols, nb);
    assert_eq!(u.rows, 3 * nt);
    assert!(g_b.len() > n_modes && g_ext.len() > n_modes);

    let sigma = data.sigma;
    let gl3 = gauss_legendre(3);
    let gl4 = gauss_legendre(4);
    let ext = detail_couplings(g_ext, nb);
    let lam_a = tail_scale(&data.a);
    let lam_b = [tail_scale(&data.b[0]), tail_scale(&data.b[1])];
    let lam_b_mag = lam_b[0].hypot(lam_b[1]);

    let mut eta_h_k = vec![0.0; nt];
    let mut eta_theta_k = vec![0.0; nt];
    let mut eta_q_k = vec![0.0; nt];
    let mut eta_z_k = vec![0.0; nt];
    let mut eta_q_idx = vec![0.0; nr];

    // per-element gradients of every solution column, and mean-frozen
    // element weights
    let mut gu_all: Vec<Vec<[f64; 2]>> = Vec::with_capacity(nt);
    let mut rho_h_k = vec![0.0; nt];
    let mut rho_q_k = vec![0.0; nt];
    for t in 0..nt {
        let v = mesh.tri_vertices(t);
        let area = mesh.area(t);
        let grads = tri_grads(&v, area);
        let gu: Vec<[f64; 2]> = (0..nb)
            .map(|q| {
                let c = [u.get(3 * t, q), u.get(3 * t + 1, q), u.get(3 * t + 2, q)];
                p1_gradient(&c, &grads)
            })
            .collect();
        gu_all.push(gu);
        let norm_a = tri_p1_ms(&proj.a_h[0][t]).sqrt();
        let h = mesh.diameter(t);
        rho_h_k[t] = h * h / norm_a;
        rho_q_k[t] = 1.0 / (n_modes as f64 * norm_a);
    }

    // volume terms
    for t in 0..nt {
        let v = mesh.tri_vertices(t);
        let area = mesh.area(t);
        let grads = tri_grads(&v, area);
        let gu = &gu_all[t];

        // spatial interior residual: expand the coupled residual over the
        // active set and take its Parseval mass there
        let mut rnod: Vec<[f64; 3]> = vec![[0.0; 3]; nb];
        for k in 0..3 {
            rnod[0][k] = proj.f_h[t][k];
        }
        for i in 0..=n_modes {
            let ga = p1_gradient(&proj.a_h[i][t], &grads);
            let bx = &proj.b_h[0][i][t];
            let by = &proj.b_h[1][i][t];
            for &(p, q, w) in &g_b[i].entries {
                let adv = ga[0] * gu[q][0] + ga[1] * gu[q][1];
                for k in 0..3 {
                    rnod[p][k] += w * (adv - (bx[k] * gu[q][0] + by[k] * gu[q][1]));
                }
            }
        }
        let mut res2 = 0.0;
        for r in &rnod {
            res2 += tri_p1_sq(r, area);
        }
        eta_h_k[t] += rho_h_k[t] * res2;

        // parametric defects: mass pushed onto detail indices per direction
        let mut q_vol = 0.0;
        for n in 1..=n_modes {
            if ext[n].is_empty() {
                continue;
            }
            let an = &proj.a_h[n][t];
            let bxn = &proj.b_h[0][n][t];
            let byn = &proj.b_h[1][n][t];
            let mut combo: Vec<[f64; 2]> = vec![[0.0; 2]; nr];
            let mut touched: Vec<usize> = Vec::new();
            for &(r, c, w) in &ext[n] {
                if combo[r] == [0.0; 2] {
                    touched.push(r);
                }
                combo[r][0] += w * gu[c][0];
                combo[r][1] += w * gu[c][1];
            }
            for &r in &touched {
                let g = combo[r];
                if g == [0.0; 2] {
                    continue;
                }
                let mass_a = (g[0] * g[0] + g[1] * g[1]) * tri_p1_sq(an, area);
                let conv: [f64; 3] = [
                    bxn[0] * g[0] + byn[0] * g[1],
                    bxn[1] * g[0] + byn[1] * g[1],
                    bxn[2] * g[0] + byn[2] * g[1],
                ];
                let mass_b = tri_p1_sq(&conv, area);
                let mass = rho_q_k[t] * (mass_a + mass_b);
                q_vol += mass;
                eta_q_idx[r] += mass;
            }
        }
        eta_q_k[t] += q_vol;

        // coefficient truncation: the surviving volume term is the tail
        // magnitude against every column gradient
        if lam_b_mag > 0.0 {
            let mut z = 0.0;
            for g in gu {
                let s = lam_b[0] * g[0] + lam_b[1] * g[1];
                z += s * s * area;
            }
            eta_z_k[t] += rho_h_k[t] * z;
        }

        // data terms: analytic-minus-projected differences by quadrature
        let mut dat = 0.0;
        for &(bc, w) in TRI_DEG6.iter() {
            let x = [
                bc[0] * v[0][0] + bc[1] * v[1][0] + bc[2] * v[2][0],
                bc[0] * v[0][1] + bc[1] * v[1][1] + bc[2] * v[2][1],
            ];
            let wq = w * area;
            let fd = (data.f)(x) - eval_p1(&proj.f_h[t], &bc);
            dat += wq * fd * fd;
            let mut acc_a = vec![0.0; nb];
            let mut acc_b = vec![0.0; nb];
            for i in 0..=n_modes {
                let dg = {
                    let g_proj = p1_gradient(&proj.a_h[i][t], &grads);
                    let g_exact = if i == 0 {
                        [0.0, 0.0]
                    } else {
                        data.a.coef_mode_grad(i, x)
                    };
                    [g_exact[0] - g_proj[0], g_exact[1] - g_proj[1]]
                };
                let bv = data.b_mode(i, x);
                let db = [
                    bv[0] - eval_p1(&proj.b_h[0][i][t], &bc),
                    bv[1] - eval_p1(&proj.b_h[1][i][t], &bc),
                ];
                if dg == [0.0, 0.0] && db == [0.0, 0.0] {
                    continue;
                }
                for &(p, q, gw) in &g_b[i].entries {
                    acc_a[p] += gw * (dg[0] * gu[q][0] + dg[1] * gu[q][1]);
                    acc_b[p] += gw * (db[0] * gu[q][0] + db[1] * gu[q][1]);
                }
            }
            for p in 0..nb {
                dat += wq * (acc_a[p] * acc_a[p] + acc_b[p] * acc_b[p]);
            }
        }
        eta_theta_k[t] += rho_h_k[t] * dat;
    }

    // edge terms
    for (ei, e) in mesh.edges.iter().enumerate() {
        let geom = edge_geom(mesh, ei);
        let n = geom.n;
        let len = geom.len;
        let tin = e.tri_in;
        let vin = mesh.tri_vertices(tin);
        let ain = mesh.area(tin);
        let bc_in_ends = [
            barycentric(&vin, ain, geom.p),
            barycentric(&vin, ain, geom.q),
        ];
        // mean-frozen edge weights from averaged traces
        let trace_ends = |nodal: &[f64; 3], ends: &[[f64; 3]; 2]| -> [f64; 2] {
            [eval_p1(nodal, &ends[0]), eval_p1(nodal, &ends[1])]
        };

        match e.tri_out {
            Some(tout) => {
                let vout = mesh.tri_vertices(tout);
                let aout = mesh.area(tout);
                let bc_out_ends = [
                    barycentric(&vout, aout, geom.p),
                    barycentric(&vout, aout, geom.q),
                ];
                let a0_in = trace_ends(&proj.a_h[0][tin], &bc_in_ends);
                let a0_out = trace_ends(&proj.a_h[0][tout], &bc_out_ends);
                let a0_avg = [0.5 * (a0_in[0] + a0_out[0]), 0.5 * (a0_in[1] + a0_out[1])];
                let norm_a = edge_lin_ms(a0_avg[0], a0_avg[1]).sqrt();
                let rho_h_e = len / norm_a;
                let rho_q_e = 1.0 / (n_modes as f64 * norm_a);
                let bx0 = [
                    0.5 * (trace_ends(&proj.b_h[0][0][tin], &bc_in_ends)[0]
                        + trace_ends(&proj.b_h[0][0][tout], &bc_out_ends)[0]),
                    0.5 * (trace_ends(&proj.b_h[0][0][tin], &bc_in_ends)[1]
                        + trace_ends(&proj.b_h[0][0][tout], &bc_out_ends)[1]),
                ];
                let by0 = [
                    0.5 * (trace_ends(&proj.b_h[1][0][tin], &bc_in_ends)[0]
                        + trace_ends(&proj.b_h[1][0][tout], &bc_out_ends)[0]),
                    0.5 * (trace_ends(&proj.b_h[1][0][tin], &bc_in_ends)[1]
                        + trace_ends(&proj.b_h[1][0][tout], &bc_out_ends)[1]),
                ];
                let norm_b = (edge_lin_ms(bx0[0], bx0[1]) + edge_lin_ms(by0[0], by0[1])).sqrt();

                // solution jump endpoints per column
                let jump_ends: Vec<[f64; 2]> = (0..nb)
                    .map(|q| {
                        let ci = [u.get(3 * tin, q), u.get(3 * tin + 1, q), u.get(3 * tin + 2, q)];
                        let co =
                            [u.get(3 * tout, q), u.get(3 * tout + 1, q), u.get(3 * tout + 2, q)];
                        [
                            eval_p1(&ci, &bc_in_ends[0]) - eval_p1(&co, &bc_out_ends[0]),
                            eval_p1(&ci, &bc_in_ends[1]) - eval_p1(&co, &bc_out_ends[1]),
                        ]
                    })
                    .collect();
                let jump_mass: f64 = jump_ends
                    .iter()
                    .map(|j| edge_lin_sq(j[0], j[1], len))
                    .sum();

                // flux jump of the coupled discrete gradient on the active set
                let mut flux_ends: Vec<[f64; 2]> = vec![[0.0; 2]; nb];
                for i in 0..=n_modes {
                    let ai_in = trace_ends(&proj.a_h[i][tin], &bc_in_ends);
                    let ai_out = trace_ends(&proj.a_h[i][tout], &bc_out_ends);
                    for &(p, q, w) in &g_b[i].entries {
                        let dn_in = gu_all[tin][q][0] * n[0] + gu_all[tin][q][1] * n[1];
                        let dn_out = gu_all[tout][q][0] * n[0] + gu_all[tout][q][1] * n[1];
                        flux_ends[p][0] += w * (ai_in[0] * dn_in - ai_out[0] * dn_out);
                        flux_ends[p][1] += w * (ai_in[1] * dn_in - ai_out[1] * dn_out);
                    }
                }
                let flux: f64 = flux_ends
                    .iter()
                    .map(|f| edge_lin_sq(f[0], f[1], len))
                    .sum();

                let jump_w = sigma / len * norm_a + norm_b + rho_h_e * norm_b * norm_b;
                let spatial_edge = rho_h_e * flux + jump_w * jump_mass;
                eta_h_k[tin] += 0.5 * spatial_edge;
                eta_h_k[tout] += 0.5 * spatial_edge;

                // parametric edge defect of the upwind coupling term
                let mut q_edge_tot = 0.0;
                for dir in 1..=n_modes {
                    if ext[dir].is_empty() {
                        continue;
                    }
                    let bxn = [
                        0.5 * (trace_ends(&proj.b_h[0][dir][tin], &bc_in_ends)[0]
                            + trace_ends(&proj.b_h[0][dir][tout], &bc_out_ends)[0]),
                        0.5 * (trace_ends(&proj.b_h[0][dir][tin], &bc_in_ends)[1]
                            + trace_ends(&proj.b_h[0][dir][tout], &bc_out_ends)[1]),
                    ];
                    let byn = [
                        0.5 * (trace_ends(&proj.b_h[1][dir][tin], &bc_in_ends)[0]
                            + trace_ends(&proj.b_h[1][dir][tout], &bc_out_ends)[0]),
                        0.5 * (trace_ends(&proj.b_h[1][dir][tin], &bc_in_ends)[1]
                            + trace_ends(&proj.b_h[1][dir][tout], &bc_out_ends)[1]),
                    ];
                    let bdn_ends = [
                        bxn[0] * n[0] + byn[0] * n[1],
                        bxn[1] * n[0] + byn[1] * n[1],
                    ];
                    if bdn_ends == [0.0, 0.0] {
                        continue;
                    }
                    let mut combo: Vec<[f64; 2]> = vec![[0.0; 2]; nr];
                    let mut touched: Vec<usize> = Vec::new();
                    for &(r, c, w) in &ext[dir] {
                        if combo[r] == [0.0; 2] {
                            touched.push(r);
                        }
                        combo[r][0] += w * jump_ends[c][0];
                        combo[r][1] += w * jump_ends[c][1];
                    }
                    for &r in &touched {
                        let j = combo[r];
                        if j == [0.0; 2] {
                            continue;
                        }
                        // product of two edge linears, integrated exactly
                        let mut mass = 0.0;
                        for &(glt, glw) in gl3.iter() {
                            let s = 0.5 * (glt + 1.0);
                            let w = 0.5 * glw * len;
                            let bdn = bdn_ends[0] * (1.0 - s) + bdn_ends[1] * s;
                            let jv = j[0] * (1.0 - s) + j[1] * s;
                            mass += w * (bdn * jv) * (bdn * jv);
                        }
                        mass *= rho_q_e;
                        q_edge_tot += mass;
                        eta_q_idx[r] += mass;
                    }
                }
                eta_q_k[tin] += 0.5 * q_edge_tot;
                eta_q_k[tout] += 0.5 * q_edge_tot;

                // coefficient truncation on the edge: constant-in-x tails
                if lam_a > 0.0 || lam_b_mag > 0.0 {
                    let mut zflux = 0.0;
                    for q in 0..nb {
                        let dn_in = gu_all[tin][q][0] * n[0] + gu_all[tin][q][1] * n[1];
                        let dn_out = gu_all[tout][q][0] * n[0] + gu_all[tout][q][1] * n[1];
                        let d = dn_in - dn_out;
                        zflux += len * d * d;
                    }
                    let zjump_w =
                        sigma * lam_a / len + lam_b_mag + rho_h_e * lam_b_mag * lam_b_mag;
                    let z_edge = rho_h_e * lam_a * lam_a * zflux + zjump_w * jump_mass;
                    eta_z_k[tin] += 0.5 * z_edge;
                    eta_z_k[tout] += 0.5 * z_edge;
                }

                // data differences across the edge
                let mut theta_flux = 0.0;
                let mut diff_a_sq = 0.0;
                let mut diff_b_sq = 0.0;
                for &(glt, glw) in gl4.iter() {
                    let s = 0.5 * (glt + 1.0);
                    let w = 0.5 * glw * len;
                    let x = geom.at(s);
                    let bci = barycentric(&vin, ain, x);
                    let bco = barycentric(&vout, aout, x);
                    let mut acc = vec![0.0f64; nb];
                    for i in 0..=n_modes {
                        let exact = data.a_mode(i, x);
                        let d_in = exact - eval_p1(&proj.a_h[i][tin], &bci);
                        let d_out = exact - eval_p1(&proj.a_h[i][tout], &bco);
                        if d_in == 0.0 && d_out == 0.0 {
                            continue;
                        }
                        for &(p, q, gw) in &g_b[i].entries {
                            let dn_in = gu_all[tin][q][0] * n[0] + gu_all[tin][q][1] * n[1];
                            let dn_out = gu_all[tout][q][0] * n[0] + gu_all[tout][q][1] * n[1];
                            acc[p] += gw * (d_in * dn_in - d_out * dn_out);
                        }
                    }
                    for p in 0..nb {
                        theta_flux += w * acc[p] * acc[p];
                    }
                    // mean-frozen coefficient difference weights
                    let am = data.a_mode(0, x);
                    let da = am
                        - 0.5
                            * (eval_p1(&proj.a_h[0][tin], &bci)
                                + eval_p1(&proj.a_h[0][tout], &bco));
                    diff_a_sq += w * da * da;
                    let bm = data.b_mode(0, x);
                    let dbx = bm[0]
                        - 0.5
                            * (eval_p1(&proj.b_h[0][0][tin], &bci)
                                + eval_p1(&proj.b_h[0][0][tout], &bco));
                    let dby = bm[1]
                        - 0.5
                            * (eval_p1(&proj.b_h[1][0][tin], &bci)
                                + eval_p1(&proj.b_h[1][0][tout], &bco));
                    diff_b_sq += w * (dbx * dbx + dby * dby);
                }
                let diff_a = (diff_a_sq / len).sqrt();
                let diff_b = (diff_b_sq / len).sqrt();
                let theta_jump_w = sigma / len * diff_a + diff_b + rho_h_e * diff_b * diff_b;
                let theta_edge = rho_h_e * theta_flux + theta_jump_w * jump_mass;
                eta_theta_k[tin] += 0.5 * theta_edge;
                eta_theta_k[tout] += 0.5 * theta_edge;
            }
            None => {
                // boundary: mismatch against the Dirichlet trace, weighted by
                // the analytic mean fields
                let mut norm_a_sq = 0.0;
                let mut norm_b_sq = 0.0;
                for &(glt, glw) in gl3.iter() {
                    let s = 0.5 * (glt + 1.0);
                    let w = 0.5 * glw * len;
                    let x = geom.at(s);
                    let am = data.a_mode(0, x);
                    let bm = data.b_mode(0, x);
                    norm_a_sq += w * am * am;
                    norm_b_sq += w * (bm[0] * bm[0] + bm[1] * bm[1]);
                }
                let bnd_w = sigma / len * (norm_a_sq / len).sqrt() + (norm_b_sq / len).sqrt();

                let ud = proj.ud_h[ei].expect("boundary edge has projected trace");
                let mut mismatch = 0.0;
                for q in 0..nb {
                    let c = [u.get(3 * tin, q), u.get(3 * tin + 1, q), u.get(3 * tin + 2, q)];
                    let mut ends = [
                        eval_p1(&c, &bc_in_ends[0]),
                        eval_p1(&c, &bc_in_ends[1]),
                    ];
                    if q == 0 {
                        ends[0] -= ud[0];
                        ends[1] -= ud[1];
                    }
                    mismatch += edge_lin_sq(ends[0], ends[1], len);
                }
                eta_h_k[tin] += bnd_w * mismatch;

                // interpolated-vs-exact Dirichlet data
                let mut dmis = 0.0;
                for &(glt, glw) in gl4.iter() {
                    let s = 0.5 * (glt + 1.0);
                    let w = 0.5 * glw * len;
                    let x = geom.at(s);
                    let d = (data.u_d)(x) - (ud[0] * (1.0 - s) + ud[1] * s);
                    dmis += w * d * d;
                }
                eta_theta_k[tin] += bnd_w * dmis;
            }
        }
    }

    let eta_h2 = eta_h_k.iter().sum();
    let eta_theta2 = eta_theta_k.iter().sum();
    let eta_q2 = eta_q_k.iter().sum();
    let eta_z2 = eta_z_k.iter().sum();
    EstimateReport {
        eta_h_k,
        eta_theta_k,
        eta_q_k,
        eta_z_k,
        eta_q_idx,
        eta_h2,
        eta_theta2,
        eta_q2,
        eta_z2,
    }
}
