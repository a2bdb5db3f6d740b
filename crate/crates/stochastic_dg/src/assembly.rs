//! SIPG spatial discretization with upwinded convection.
//!
//! Every random coefficient is affine in the stochastic variables, so the
//! coupled system splits into one stiffness block and one load vector per
//! expansion term. Assembly produces those blocks from elementwise linear
//! projections of the coefficient modes.

use crate::mesh::TriangleMesh;
use crate::pc_basis::{IndexSet, SparseG};
use crate::quadrature::{gauss_legendre, TRI_DEG4};
use crate::random_field::KLField;
use crate::sparse::CsrMatrix;

/// Continuous problem description: diffusion field a, convection components
/// b = (b_x, b_y), source f, Dirichlet trace u_d, penalty sigma.
///
/// Deterministic coefficients are fields with zero amplitude. When diffusion
/// and convection are driven by the same underlying field, their mode lists
/// coincide and refer to the same stochastic variables.
#[derive(Clone)]
pub struct ProblemData {
    pub a: KLField,
    pub b: [KLField; 2],
    pub f: fn([f64; 2]) -> f64,
    pub u_d: fn([f64; 2]) -> f64,
    pub sigma: f64,
}

impl ProblemData {
    /// Mean or mode-i value of the diffusion coefficient at x (i = 0: mean).
    pub fn a_mode(&self, i: usize, x: [f64; 2]) -> f64 {
        if i == 0 {
            self.a.mean_at(x)
        } else {
            self.a.coef_mode(i, x)
        }
    }

    pub fn b_mode(&self, i: usize, x: [f64; 2]) -> [f64; 2] {
        if i == 0 {
            [self.b[0].mean_at(x), self.b[1].mean_at(x)]
        } else {
            [self.b[0].coef_mode(i, x), self.b[1].coef_mode(i, x)]
        }
    }
}

/// Elementwise linear projections of all data, nodal values per triangle in
/// local vertex order. Coefficient projections are per expansion mode
/// (index 0 = mean).
#[derive(Debug, Clone)]
pub struct ProjectedData {
    pub f_h: Vec<[f64; 3]>,
    pub a_h: Vec<Vec<[f64; 3]>>,
    pub b_h: [Vec<Vec<[f64; 3]>>; 2],
    /// Per-edge linear boundary trace (endpoint values in edge vertex order);
    /// None for interior edges.
    pub ud_h: Vec<Option<[f64; 2]>>,
}

/// One stiffness block and load vector per expansion term, plus the
/// stochastic load couplings.
#[derive(Debug, Clone)]
pub struct SpatialBlocks {
    pub k: Vec<CsrMatrix>,
    pub f: Vec<Vec<f64>>,
    pub g: Vec<Vec<f64>>,
    pub n_dofs: usize,
}

pub fn n_dofs(mesh: &TriangleMesh) -> usize {
    3 * mesh.n_triangles()
}

pub(crate) fn tri_grads(v: &[[f64; 2]; 3], area: f64) -> [[f64; 2]; 3] {
    let s = 0.5 / area;
    [
        [(v[1][1] - v[2][1]) * s, (v[2][0] - v[1][0]) * s],
        [(v[2][1] - v[0][1]) * s, (v[0][0] - v[2][0]) * s],
        [(v[0][1] - v[1][1]) * s, (v[1][0] - v[0][0]) * s],
    ]
}

/// Barycentric coordinates of x in the triangle with vertices v.
pub(crate) fn barycentric(v: &[[f64; 2]; 3], area: f64, x: [f64; 2]) -> [f64; 3] {
    let s = 0.5 / area;
    let l0 = ((v[1][1] - v[2][1]) * (x[0] - v[2][0]) + (v[2][0] - v[1][0]) * (x[1] - v[2][1])) * s;
    let l1 = ((v[2][1] - v[0][1]) * (x[0] - v[2][0]) + (v[0][0] - v[2][0]) * (x[1] - v[2][1])) * s;
    [l0, l1, 1.0 - l0 - l1]
}

/// L2-projection of g onto linears on one triangle, returned as nodal values.
pub(crate) fn p1_project_tri(
    v: &[[f64; 2]; 3],
    area: f64,
    g: &mut dyn FnMut([f64; 2]) -> f64,
) -> [f64; 3] {
    let mut r = [0.0f64; 3];
    for &(bc, w) in TRI_DEG4.iter() {
        let x = [
            bc[0] * v[0][0] + bc[1] * v[1][0] + bc[2] * v[2][0],
            bc[0] * v[0][1] + bc[1] * v[1][1] + bc[2] * v[2][1],
        ];
        let gv = g(x) * w * area;
        r[0] += gv * bc[0];
        r[1] += gv * bc[1];
        r[2] += gv * bc[2];
    }
    // inverse of the P1 mass matrix (area/12)(I + ones)
    let sum = r[0] + r[1] + r[2];
    let s = 12.0 / area;
    [
        s * (r[0] - 0.25 * sum),
        s * (r[1] - 0.25 * sum),
        s * (r[2] - 0.25 * sum),
    ]
}

/// Project all problem data onto elementwise (and boundary-edge) linears.
/// Coefficients are projected mode by mode up to `n_modes` expansion terms.
pub fn project_data(mesh: &TriangleMesh, data: &ProblemData, n_modes: usize) -> ProjectedData {
    let nt = mesh.n_triangles();
    let mut f_h = Vec::with_capacity(nt);
    let mut a_h = vec![Vec::with_capacity(nt); n_modes + 1];
    let mut b_h = [
        vec![Vec::with_capacity(nt); n_modes + 1],
        vec![Vec::with_capacity(nt); n_modes + 1],
    ];
    for t in 0..nt {
        let v = mesh.tri_vertices(t);
        let area = mesh.area(t);
        f_h.push(p1_project_tri(&v, area, &mut |x| (data.f)(x)));
        for i in 0..=n_modes {
            a_h[i].push(p1_project_tri(&v, area, &mut |x| data.a_mode(i, x)));
            b_h[0][i].push(p1_project_tri(&v, area, &mut |x| data.b_mode(i, x)[0]));
            b_h[1][i].push(p1_project_tri(&v, area, &mut |x| data.b_mode(i, x)[1]));
        }
    }
    // Dirichlet trace as the vertex interpolant. Sharing vertex values across
    // adjacent boundary edges keeps the imposed data continuous even where the
    // prescribed trace is not (domain corners with conflicting wall values);
    // each mesh solves a compatible problem whose data converges to the
    // prescribed one.
    let mut ud_h = Vec::with_capacity(mesh.edges.len());
    for e in &mesh.edges {
        if e.tri_out.is_some() {
            ud_h.push(None);
        } else {
            let p = mesh.vertices[e.v[0]];
            let q = mesh.vertices[e.v[1]];
            ud_h.push(Some([(data.u_d)(p), (data.u_d)(q)]));
        }
    }
    ProjectedData { f_h, a_h, b_h, ud_h }
}

pub(crate) fn vol_diffusion(grads: &[[f64; 2]; 3], area: f64, a_nodal: &[f64; 3]) -> [[f64; 3]; 3] {
    let abar = (a_nodal[0] + a_nodal[1] + a_nodal[2]) / 3.0;
    let mut m = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            m[r][c] = area
                * abar
                * (grads[r][0] * grads[c][0] + grads[r][1] * grads[c][1]);
        }
    }
    m
}

pub(crate) fn vol_convection(
    grads: &[[f64; 2]; 3],
    area: f64,
    bx: &[f64; 3],
    by: &[f64; 3],
) -> [[f64; 3]; 3] {
    // entry (r, c) = Int (b . grad lambda_c) lambda_r with P1 components b
    let mut m = [[0.0; 3]; 3];
    for c in 0..3 {
        for n in 0..3 {
            let bdg = bx[n] * grads[c][0] + by[n] * grads[c][1];
            for r in 0..3 {
                let mass = area / 12.0 * if n == r { 2.0 } else { 1.0 };
                m[r][c] += bdg * mass;
            }
        }
    }
    m
}

struct EdgeQuad {
    points: Vec<[f64; 2]>,
    weights: Vec<f64>,
}

fn edge_quad(gl: &[(f64, f64)], p: [f64; 2], q: [f64; 2]) -> EdgeQuad {
    let half = 0.5 * ((q[0] - p[0]).hypot(q[1] - p[1]));
    let mid = [0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])];
    let dir = [0.5 * (q[0] - p[0]), 0.5 * (q[1] - p[1])];
    EdgeQuad {
        points: gl.iter().map(|&(t, _)| [mid[0] + t * dir[0], mid[1] + t * dir[1]]).collect(),
        weights: gl.iter().map(|&(_, w)| w * half).collect(),
    }
}

fn eval_p1(nodal: &[f64; 3], bc: &[f64; 3]) -> f64 {
    nodal[0] * bc[0] + nodal[1] * bc[1] + nodal[2] * bc[2]
}

/// Per element-side inflow flags from the mean convection field, evaluated
/// at edge midpoints with a strict sign test.
pub fn inflow_classification(mesh: &TriangleMesh, data: &ProblemData) -> Vec<[bool; 2]> {
    mesh.edges
        .iter()
        .map(|e| {
            let p = mesh.vertices[e.v[0]];
            let q = mesh.vertices[e.v[1]];
            let mid = [0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])];
            let b = data.b_mode(0, mid);
            let bdn = b[0] * e.normal[0] + b[1] * e.normal[1];
            // normal points out of tri_in: tri_in sees inflow when bdn < 0,
            // the neighbor when bdn > 0
            [bdn < 0.0, bdn > 0.0]
        })
        .collect()
}

/// Assemble the per-mode stiffness blocks, load vectors, and stochastic load
/// couplings. `g_mats` are the coupling matrices over the index set (used
/// only for the load coupling columns); `n_modes` is the number of expansion
/// terms (blocks 0..=n_modes are produced).
pub fn assemble_blocks(
    mesh: &TriangleMesh,
    data: &ProblemData,
    proj: &ProjectedData,
    set: &IndexSet,
    g_mats: &[SparseG],
    n_modes: usize,
) -> SpatialBlocks {
    assert!(set.indices()[0].is_zero());
    assert_eq!(g_mats.len(), n_modes + 1);
    let nd = n_dofs(mesh);
    let sigma = data.sigma;
    let gl = gauss_legendre(3);
    let mut trips: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); n_modes + 1];
    let mut loads: Vec<Vec<f64>> = vec![vec![0.0; nd]; n_modes + 1];

    // volume terms
    for t in 0..mesh.n_triangles() {
        let v = mesh.tri_vertices(t);
        let area = mesh.area(t);
        let grads = tri_grads(&v, area);
        for i in 0..=n_modes {
            let dif = vol_diffusion(&grads, area, &proj.a_h[i][t]);
            let conv = vol_convection(&grads, area, &proj.b_h[0][i][t], &proj.b_h[1][i][t]);
            for r in 0..3 {
                for c in 0..3 {
                    let val = dif[r][c] + conv[r][c];
                    if val != 0.0 {
                        trips[i].push((3 * t + r, 3 * t + c, val));
                    }
                }
            }
        }
        // deterministic source enters the mean load only
        let fh = &proj.f_h[t];
        for r in 0..3 {
            let mut acc = 0.0;
            for n in 0..3 {
                acc += fh[n] * area / 12.0 * if n == r { 2.0 } else { 1.0 };
            }
            loads[0][3 * t + r] += acc;
        }
    }

    // edge terms
    let inflow = inflow_classification(mesh, data);
    for (ei, e) in mesh.edges.iter().enumerate() {
        let p = mesh.vertices[e.v[0]];
        let q = mesh.vertices[e.v[1]];
        let quad = edge_quad(&gl, p, q);
        let h_e = e.length;
        let n = e.normal;
        let tin = e.tri_in;
        let vin = mesh.tri_vertices(tin);
        let (ain, gin) = (mesh.area(tin), tri_grads(&mesh.tri_vertices(tin), mesh.area(tin)));
        match e.tri_out {
            Some(tout) => {
                let vout = mesh.tri_vertices(tout);
                let aout = mesh.area(tout);
                let gout = tri_grads(&vout, aout);
                // local dof order: 3 on tri_in then 3 on tri_out
                let dofs: Vec<usize> = (0..3)
                    .map(|k| 3 * tin + k)
                    .chain((0..3).map(|k| 3 * tout + k))
                    .collect();
                for i in 0..=n_modes {
                    let mut local = [[0.0f64; 6]; 6];
                    for (&x, &w) in quad.points.iter().zip(&quad.weights) {
                        let bc_in = barycentric(&vin, ain, x);
                        let bc_out = barycentric(&vout, aout, x);
                        let a_in = eval_p1(&proj.a_h[i][tin], &bc_in);
                        let a_out = eval_p1(&proj.a_h[i][tout], &bc_out);
                        let a_avg = 0.5 * (a_in + a_out);
                        // traces and normal derivatives of the 6 local basis
                        // functions; jump sign +1 on tri_in, -1 on tri_out
                        let mut tr = [0.0f64; 6];
                        let mut dn = [0.0f64; 6];
                        let mut jmp = [0.0f64; 6];
                        let mut aside = [0.0f64; 6];
                        for k in 0..3 {
                            tr[k] = bc_in[k];
                            dn[k] = gin[k][0] * n[0] + gin[k][1] * n[1];
                            jmp[k] = bc_in[k];
                            aside[k] = a_in;
                            tr[3 + k] = bc_out[k];
                            dn[3 + k] = gout[k][0] * n[0] + gout[k][1] * n[1];
                            jmp[3 + k] = -bc_out[k];
                            aside[3 + k] = a_out;
                        }
                        for r in 0..6 {
                            for c in 0..6 {
                                let cons = -0.5 * (aside[c] * dn[c] * jmp[r] + aside[r] * dn[r] * jmp[c]);
                                let pen = sigma / h_e * a_avg * jmp[c] * jmp[r];
                                local[r][c] += w * (cons + pen);
                            }
                        }
                        // upwind jump term on the inflow side
                        let bx = 0.5
                            * (eval_p1(&proj.b_h[0][i][tin], &bc_in)
                                + eval_p1(&proj.b_h[0][i][tout], &bc_out));
                        let by = 0.5
                            * (eval_p1(&proj.b_h[1][i][tin], &bc_in)
                                + eval_p1(&proj.b_h[1][i][tout], &bc_out));
                        if inflow[ei][0] {
                            // tri_in is downwind: outward normal n, b.n < 0
                            let bdn = bx * n[0] + by * n[1];
                            for r in 0..3 {
                                for c in 0..6 {
                                    let u_diff = if c < 3 { -tr[c] } else { tr[c] };
                                    local[r][c] += w * bdn * u_diff * tr[r];
                                }
                            }
                        } else if inflow[ei][1] {
                            let bdn = -(bx * n[0] + by * n[1]);
                            for r in 3..6 {
                                for c in 0..6 {
                                    let u_diff = if c < 3 { tr[c] } else { -tr[c] };
                                    local[r][c] += w * bdn * u_diff * tr[r];
                                }
                            }
                        }
                    }
                    for r in 0..6 {
                        for c in 0..6 {
                            if local[r][c] != 0.0 {
                                trips[i].push((dofs[r], dofs[c], local[r][c]));
                            }
                        }
                    }
                }
            }
            None => {
                let is_inflow = inflow[ei][0];
                let ud_ends = proj.ud_h[ei].expect("boundary edge has a trace");
                for i in 0..=n_modes {
                    let mut local = [[0.0f64; 3]; 3];
                    let mut rhs = [0.0f64; 3];
                    for (&x, &w) in quad.points.iter().zip(&quad.weights) {
                        let bc = barycentric(&vin, ain, x);
                        let a_val = eval_p1(&proj.a_h[i][tin], &bc);
                        let bx = eval_p1(&proj.b_h[0][i][tin], &bc);
                        let by = eval_p1(&proj.b_h[1][i][tin], &bc);
                        let bdn = bx * n[0] + by * n[1];
                        let s = ((x[0] - p[0]) * (q[0] - p[0]) + (x[1] - p[1]) * (q[1] - p[1]))
                            / (h_e * h_e);
                        let ud = ud_ends[0] * (1.0 - s) + ud_ends[1] * s;
                        let mut tr = [0.0f64; 3];
                        let mut dn = [0.0f64; 3];
                        for k in 0..3 {
                            tr[k] = bc[k];
                            dn[k] = gin[k][0] * n[0] + gin[k][1] * n[1];
                        }
                        for r in 0..3 {
                            for c in 0..3 {
                                let cons = -(a_val * dn[c] * tr[r] + a_val * dn[r] * tr[c]);
                                let pen = sigma / h_e * a_val * tr[c] * tr[r];
                                let inf = if is_inflow { -bdn * tr[c] * tr[r] } else { 0.0 };
                                local[r][c] += w * (cons + pen + inf);
                            }
                            rhs[r] += w * (sigma / h_e * a_val * tr[r] - a_val * dn[r]) * ud;
                            if is_inflow {
                                rhs[r] += w * (-bdn) * ud * tr[r];
                            }
                        }
                    }
                    for r in 0..3 {
                        loads[i][3 * tin + r] += rhs[r];
                        for c in 0..3 {
                            if local[r][c] != 0.0 {
                                trips[i].push((3 * tin + r, 3 * tin + c, local[r][c]));
                            }
                        }
                    }
                }
            }
        }
    }

    let k: Vec<CsrMatrix> = trips
        .iter()
        .map(|t| CsrMatrix::from_triplets(nd, nd, t))
        .collect();

    // stochastic load couplings: the mode-i load scales with the i-th
    // variable, whose Galerkin coefficients are column 0 of the coupling
    // matrix (the mean load couples to the zero index alone)
    let nb = set.len();
    let mut g = vec![vec![0.0; nb]; n_modes + 1];
    g[0][0] = 1.0;
    for i in 1..=n_modes {
        for &(r, c, val) in &g_mats[i].entries {
            if c == 0 && r < nb {
                g[i][r] = val;
            }
        }
    }

    SpatialBlocks { k, f: loads, g, n_dofs: nd }
}

/// Cheap positivity probe of the symmetric part of a stiffness block on
/// random unit vectors; false signals a penalty too small for coercivity.
pub fn coercivity_probe(k0: &CsrMatrix, n_vectors: usize, seed: u64) -> bool {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..n_vectors {
        let v: Vec<f64> = (0..k0.n_rows).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let nrm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if nrm == 0.0 {
            continue;
        }
        if k0.quad_form(&v) <= 0.0 {
            return false;
        }
    }
    true
}
