//! Matrix-free Kronecker solver for the coupled Galerkin system.
//!
//! The coupled operator is a sum of Kronecker products of stochastic
//! coupling matrices with spatial stiffness blocks. It is never formed;
//! applications sweep the blocks column by column. A sparse factorization
//! of the mean block preconditions restarted GMRES from the left.

use crate::assembly::SpatialBlocks;
use crate::error::{Error, Result};
use crate::pc_basis::SparseG;
use crate::sparse::{axpy, dot, norm2, ColMat, CsrMatrix};

/// out = sum_i K_i (U G_i^T), the coupled operator applied to U (one spatial
/// column per stochastic index; the coupling matrices are symmetric).
pub fn apply_coupled(k: &[CsrMatrix], g: &[SparseG], u: &ColMat) -> ColMat {
    assert_eq!(k.len(), g.len());
    let mut out = ColMat::zeros(u.rows, u.cols);
    let mut tmp = ColMat::zeros(u.rows, u.cols);
    for (ki, gi) in k.iter().zip(g) {
        assert_eq!(gi.n, u.cols);
        if ki.is_zero() {
            continue;
        }
        tmp.data.iter_mut().for_each(|v| *v = 0.0);
        for &(p, q, val) in &gi.entries {
            let src = q * u.rows;
            let dst = tmp.col_mut(p);
            for (d, s) in dst.iter_mut().zip(&u.data[src..src + u.rows]) {
                *d += val * s;
            }
        }
        for p in 0..u.cols {
            ki.matvec_add(tmp.col(p), out.col_mut(p));
        }
    }
    out
}

/// Dense row-major matrix of the coupled operator, for small cross-checks.
pub fn dense_coupled(k: &[CsrMatrix], g: &[SparseG], nb: usize) -> Vec<f64> {
    let nd = k[0].n_rows;
    let n = nd * nb;
    let mut a = vec![0.0; n * n];
    for (ki, gi) in k.iter().zip(g) {
        let kd = ki.to_dense();
        for &(p, q, val) in &gi.entries {
            if val == 0.0 {
                continue;
            }
            for r in 0..nd {
                let row = (p * nd + r) * n + q * nd;
                for c in 0..nd {
                    a[row + c] += val * kd[r * nd + c];
                }
            }
        }
    }
    a
}

/// Coupled right-hand side: column q collects every load vector weighted by
/// its stochastic coupling coefficient for index q.
pub fn build_rhs(blocks: &SpatialBlocks) -> ColMat {
    let nb = blocks.g[0].len();
    let mut rhs = ColMat::zeros(blocks.n_dofs, nb);
    for (fi, gi) in blocks.f.iter().zip(&blocks.g) {
        for q in 0..nb {
            if gi[q] != 0.0 {
                axpy(gi[q], fi, rhs.col_mut(q));
            }
        }
    }
    rhs
}

/// Sparse LU factorization of the mean stiffness block; applying it column
/// by column inverts the block-diagonal mean of the coupled operator.
pub struct MeanSolver {
    lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
    n: usize,
}

impl MeanSolver {
    pub fn new(k0: &CsrMatrix) -> Result<Self> {
        let fa = k0.to_faer()?;
        let lu = fa
            .sp_lu()
            .map_err(|e| Error::SolverSetup(format!("mean block LU failed: {e:?}")))?;
        Ok(MeanSolver { lu, n: k0.n_rows })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn solve_cols(&self, b: &ColMat) -> ColMat {
        use faer::prelude::SpSolver;
        assert_eq!(b.rows, self.n);
        let m = faer::Mat::from_fn(b.rows, b.cols, |i, j| b.get(i, j));
        let x = self.lu.solve(&m);
        let mut out = ColMat::zeros(b.rows, b.cols);
        for j in 0..b.cols {
            for i in 0..b.rows {
                out.set(i, j, x.read(i, j));
            }
        }
        out
    }

    pub fn solve_vec(&self, b: &[f64]) -> Vec<f64> {
        let col = ColMat::from_data(b.len(), 1, b.to_vec());
        self.solve_cols(&col).data
    }
}

#[derive(Debug, Clone)]
pub struct GmresOptions {
    pub tol: f64,
    pub restart: usize,
    pub max_iters: usize,
}

impl Default for GmresOptions {
    fn default() -> Self {
        GmresOptions {
            tol: 1e-10,
            restart: 50,
            max_iters: 2000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GmresReport {
    pub iterations: usize,
    pub residual: f64,
    /// Relative preconditioned residual after each Arnoldi step, preceded by
    /// the initial value 1.
    pub history: Vec<f64>,
}

fn givens(a: f64, b: f64) -> (f64, f64) {
    if b == 0.0 {
        (1.0, 0.0)
    } else if b.abs() > a.abs() {
        let t = a / b;
        let s = 1.0 / (1.0 + t * t).sqrt();
        (s * t, s)
    } else {
        let t = b / a;
        let c = 1.0 / (1.0 + t * t).sqrt();
        (c, c * t)
    }
}

/// Restarted GMRES on the left-preconditioned system. `op` applies the
/// operator, `prec` the preconditioner. Starts from zero; residuals are
/// relative to the preconditioned right-hand side.
pub fn gmres<A, M>(op: A, prec: M, b: &[f64], opts: &GmresOptions) -> Result<(Vec<f64>, GmresReport)>
where
    A: Fn(&[f64]) -> Vec<f64>,
    M: Fn(&[f64]) -> Vec<f64>,
{
    let n = b.len();
    let mut x = vec![0.0; n];
    let pb = prec(b);
    let denom = norm2(&pb);
    let mut history = vec![1.0];
    if denom == 0.0 {
        return Ok((
            x,
            GmresReport {
                iterations: 0,
                residual: 0.0,
                history: vec![0.0],
            },
        ));
    }
    let m = opts.restart.max(1);
    let mut total = 0usize;
    let mut rel;
    loop {
        let ax = op(&x);
        let mut raw = b.to_vec();
        for i in 0..n {
            raw[i] -= ax[i];
        }
        let r = prec(&raw);
        let beta = norm2(&r);
        rel = beta / denom;
        if rel <= opts.tol {
            break;
        }
        if total >= opts.max_iters {
            return Err(Error::NonConvergence {
                iterations: total,
                residual: rel,
                history,
            });
        }

        let mut v: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
        v.push(r.iter().map(|y| y / beta).collect());
        let mut h = vec![vec![0.0f64; m]; m + 1];
        let mut cs = vec![0.0f64; m];
        let mut sn = vec![0.0f64; m];
        let mut s = vec![0.0f64; m + 1];
        s[0] = beta;
        let mut cols = 0usize;
        let mut breakdown = false;
        for j in 0..m {
            let mut w = prec(&op(&v[j]));
            for i in 0..=j {
                h[i][j] = dot(&w, &v[i]);
                axpy(-h[i][j], &v[i], &mut w);
            }
            let hnext = norm2(&w);
            h[j + 1][j] = hnext;
            for i in 0..j {
                let t = cs[i] * h[i][j] + sn[i] * h[i + 1][j];
                h[i + 1][j] = -sn[i] * h[i][j] + cs[i] * h[i + 1][j];
                h[i][j] = t;
            }
            let (c, sg) = givens(h[j][j], h[j + 1][j]);
            cs[j] = c;
            sn[j] = sg;
            h[j][j] = c * h[j][j] + sg * h[j + 1][j];
            h[j + 1][j] = 0.0;
            s[j + 1] = -sg * s[j];
            s[j] *= c;
            total += 1;
            cols = j + 1;
            rel = s[j + 1].abs() / denom;
            history.push(rel);
            if rel <= opts.tol || total >= opts.max_iters {
                break;
            }
            if hnext <= f64::EPSILON * beta {
                breakdown = true;
                break;
            }
            if j + 1 < m {
                v.push(w.iter().map(|y| y / hnext).collect());
            }
        }

        let mut y = vec![0.0f64; cols];
        for i in (0..cols).rev() {
            let mut acc = s[i];
            for k in i + 1..cols {
                acc -= h[i][k] * y[k];
            }
            y[i] = acc / h[i][i];
        }
        for (i, yi) in y.iter().enumerate() {
            axpy(*yi, &v[i], &mut x);
        }
        if breakdown && rel > opts.tol {
            // Krylov space exhausted; the projected solve above is exact up
            // to roundoff, so the top of the loop verifies and exits
            continue;
        }
    }
    Ok((
        x,
        GmresReport {
            iterations: total,
            residual: rel,
            history,
        },
    ))
}

/// Assemble the coupled right-hand side and solve the full tensor system.
pub fn solve_coupled(
    blocks: &SpatialBlocks,
    g: &[SparseG],
    opts: &GmresOptions,
) -> Result<(ColMat, GmresReport)> {
    let nb = blocks.g[0].len();
    let nd = blocks.n_dofs;
    let mean = MeanSolver::new(&blocks.k[0])?;
    let rhs = build_rhs(blocks);
    let op = |xs: &[f64]| {
        let u = ColMat::from_data(nd, nb, xs.to_vec());
        apply_coupled(&blocks.k, g, &u).data
    };
    let prec = |xs: &[f64]| {
        let u = ColMat::from_data(nd, nb, xs.to_vec());
        mean.solve_cols(&u).data
    };
    let (xd, report) = gmres(op, prec, &rhs.data, opts)?;
    Ok((ColMat::from_data(nd, nb, xd), report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{assemble_blocks, project_data, ProblemData};
    use crate::mesh::TriangleMesh;
    use crate::pc_basis::{build_stochastic_matrices, IndexSet};
    use crate::random_field::{build_2d_kl, CovarianceSpec, KLField, PiecewiseConst};
    use rand::{Rng, SeedableRng};

    fn random_csr(n: usize, rng: &mut impl Rng) -> CsrMatrix {
        let mut trips = Vec::new();
        for r in 0..n {
            for c in 0..n {
                if rng.gen_bool(0.4) {
                    trips.push((r, c, rng.gen_range(-1.0..1.0)));
                }
            }
        }
        CsrMatrix::from_triplets(n, n, &trips)
    }

    fn dense_matvec(a: &[f64], x: &[f64]) -> Vec<f64> {
        let n = x.len();
        (0..n)
            .map(|r| (0..n).map(|c| a[r * n + c] * x[c]).sum())
            .collect()
    }

    fn gauss_solve(a: &[f64], b: &[f64]) -> Vec<f64> {
        let n = b.len();
        let mut m = a.to_vec();
        let mut x = b.to_vec();
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&i, &j| m[i * n + col].abs().total_cmp(&m[j * n + col].abs()))
                .unwrap();
            if piv != col {
                for k in 0..n {
                    m.swap(col * n + k, piv * n + k);
                }
                x.swap(col, piv);
            }
            let d = m[col * n + col];
            assert!(d.abs() > 1e-14, "singular oracle matrix");
            for r in col + 1..n {
                let f = m[r * n + col] / d;
                if f == 0.0 {
                    continue;
                }
                for k in col..n {
                    m[r * n + k] -= f * m[col * n + k];
                }
                x[r] -= f * x[col];
            }
        }
        for r in (0..n).rev() {
            let mut acc = x[r];
            for k in r + 1..n {
                acc -= m[r * n + k] * x[k];
            }
            x[r] = acc / m[r * n + r];
        }
        x
    }

    fn det_field(v: f64) -> KLField {
        KLField::deterministic(PiecewiseConst::constant(v))
    }

    fn test_problem(mesh_n: usize, n_modes: usize, degree: u32) -> (TriangleMesh, ProblemData, IndexSet) {
        let mesh = TriangleMesh::rectangle([-1.0, 1.0], [-1.0, 1.0], mesh_n, mesh_n).unwrap();
        let spec = CovarianceSpec::new(1.0, 0.05, [-1.0, 1.0], [-1.0, 1.0]);
        let a = build_2d_kl(&spec, PiecewiseConst::constant(1.0), 0.05, n_modes);
        let data = ProblemData {
            a,
            b: [det_field(0.0), det_field(1.0)],
            f: |_| 0.0,
            u_d: |x| x[0] + x[1],
            sigma: 10.0,
        };
        let set = IndexSet::total_degree(n_modes, degree);
        (mesh, data, set)
    }

    fn assemble(
        mesh: &TriangleMesh,
        data: &ProblemData,
        set: &IndexSet,
        n_modes: usize,
    ) -> (SpatialBlocks, Vec<SparseG>) {
        let g = build_stochastic_matrices(set, n_modes, false);
        let proj = project_data(mesh, data, n_modes);
        let blocks = assemble_blocks(mesh, data, &proj, set, &g, n_modes);
        (blocks, g)
    }

    #[test]
    fn kronecker_apply_matches_dense() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let set = IndexSet::total_degree(2, 2);
        let nb = set.len();
        let g = build_stochastic_matrices(&set, 2, false);
        let nd = 5;
        let k: Vec<CsrMatrix> = (0..3).map(|_| random_csr(nd, &mut rng)).collect();
        let a = dense_coupled(&k, &g, nb);
        for _ in 0..5 {
            let u = ColMat::from_data(
                nd,
                nb,
                (0..nd * nb).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            );
            let fast = apply_coupled(&k, &g, &u);
            let slow = dense_matvec(&a, &u.data);
            for (f, s) in fast.data.iter().zip(&slow) {
                assert!((f - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn apply_is_linear() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let set = IndexSet::total_degree(3, 1);
        let nb = set.len();
        let g = build_stochastic_matrices(&set, 3, false);
        let nd = 6;
        let k: Vec<CsrMatrix> = (0..4).map(|_| random_csr(nd, &mut rng)).collect();
        let u = ColMat::from_data(nd, nb, (0..nd * nb).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let w = ColMat::from_data(nd, nb, (0..nd * nb).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let (al, be) = (0.7, -1.3);
        let mut comb = ColMat::zeros(nd, nb);
        for i in 0..nd * nb {
            comb.data[i] = al * u.data[i] + be * w.data[i];
        }
        let lhs = apply_coupled(&k, &g, &comb);
        let au = apply_coupled(&k, &g, &u);
        let aw = apply_coupled(&k, &g, &w);
        for i in 0..nd * nb {
            assert!((lhs.data[i] - al * au.data[i] - be * aw.data[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn gmres_matches_dense_direct_solve() {
        let (mesh, data, set) = test_problem(3, 2, 2);
        let (blocks, g) = assemble(&mesh, &data, &set, 2);
        let n = blocks.n_dofs * set.len();
        assert!(n <= 500, "oracle sized for small systems, got {n}");
        let opts = GmresOptions {
            tol: 1e-12,
            ..Default::default()
        };
        let (u, rep) = solve_coupled(&blocks, &g, &opts).unwrap();
        assert!(rep.residual <= 1e-12);
        let a = dense_coupled(&blocks.k, &g, set.len());
        let rhs = build_rhs(&blocks);
        let exact = gauss_solve(&a, &rhs.data);
        let scale = exact.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (ui, ei) in u.data.iter().zip(&exact) {
            assert!((ui - ei).abs() <= 1e-8 * scale.max(1.0));
        }
    }

    #[test]
    fn deterministic_coefficients_converge_in_one_iteration() {
        let mesh = TriangleMesh::rectangle([-1.0, 1.0], [-1.0, 1.0], 4, 4).unwrap();
        let data = ProblemData {
            a: det_field(1.0),
            b: [det_field(0.0), det_field(1.0)],
            f: |_| 1.0,
            u_d: |_| 0.0,
            sigma: 10.0,
        };
        let set = IndexSet::total_degree(2, 1);
        let (blocks, g) = assemble(&mesh, &data, &set, 2);
        let (u, rep) = solve_coupled(&blocks, &g, &GmresOptions::default()).unwrap();
        assert_eq!(rep.iterations, 1);
        // the mean column solves the deterministic system, the rest vanish
        let mean = MeanSolver::new(&blocks.k[0]).unwrap();
        let direct = mean.solve_vec(&blocks.f[0]);
        for (a_, b_) in u.col(0).iter().zip(&direct) {
            assert!((a_ - b_).abs() < 1e-10);
        }
        for q in 1..set.len() {
            assert!(u.col(q).iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn mean_preconditioner_robust_under_refinement() {
        let mut iters = Vec::new();
        for mesh_n in [4usize, 8, 16] {
            let (mesh, data, set) = test_problem(mesh_n, 3, 2);
            let (blocks, g) = assemble(&mesh, &data, &set, 3);
            let (_, rep) = solve_coupled(&blocks, &g, &GmresOptions::default()).unwrap();
            iters.push(rep.iterations);
        }
        let lo = *iters.iter().min().unwrap() as f64;
        let hi = *iters.iter().max().unwrap() as f64;
        assert!(
            hi <= 2.0 * lo.max(1.0),
            "iteration counts {iters:?} grow with refinement"
        );
    }

    #[test]
    fn coarse_benchmark_converges_quickly() {
        let (mesh, data, set) = test_problem(8, 3, 2);
        let (blocks, g) = assemble(&mesh, &data, &set, 3);
        let (_, rep) = solve_coupled(&blocks, &g, &GmresOptions::default()).unwrap();
        assert!(rep.iterations <= 30, "took {} iterations", rep.iterations);
        assert!(rep.residual <= 1e-10);
    }

    #[test]
    fn residual_history_decreases_within_cycles() {
        let (mesh, data, set) = test_problem(4, 3, 2);
        let (blocks, g) = assemble(&mesh, &data, &set, 3);
        let opts = GmresOptions {
            tol: 1e-12,
            restart: 4,
            max_iters: 400,
        };
        let (_, rep) = solve_coupled(&blocks, &g, &opts).unwrap();
        // within one restart cycle the projected residual cannot increase
        for (pos, pair) in rep.history.windows(2).enumerate() {
            if pos % opts.restart == 0 {
                continue;
            }
            assert!(
                pair[1] <= pair[0] * (1.0 + 1e-12),
                "residual rose inside a cycle at step {pos}: {pair:?}"
            );
        }
    }

    #[test]
    fn unsolvable_budget_reports_nonconvergence() {
        let (mesh, data, set) = test_problem(4, 3, 2);
        let (blocks, g) = assemble(&mesh, &data, &set, 3);
        let opts = GmresOptions {
            tol: 1e-14,
            restart: 2,
            max_iters: 2,
        };
        match solve_coupled(&blocks, &g, &opts) {
            Err(Error::NonConvergence { iterations, residual, history }) => {
                assert_eq!(iterations, 2);
                assert!(residual > 1e-14);
                assert_eq!(history.len(), 3);
            }
            other => panic!("expected NonConvergence, got {other:?}"),
        }
    }
}
