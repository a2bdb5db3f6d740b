//! The solve, estimate, mark, refine loop: bulk marking in the spatial and
//! parametric domains, the branch decision between mesh refinement and index
//! enrichment, stopping tests, and cumulative cost accounting.

use crate::assembly::{assemble_blocks, project_data, ProblemData};
use crate::error::{Error, Result};
use crate::estimator::{self, EstimateReport};
use crate::mesh::TriangleMesh;
use crate::pc_basis::{build_stochastic_matrices, IndexSet, MultiIndex};
use crate::sparse::ColMat;
use crate::tensor::{solve_coupled, GmresOptions};
use std::fmt;

#[derive(Debug, Clone)]
pub struct AdaptiveConfig {
    /// Spatial bulk marking parameter, in (0, 1].
    pub theta_h: f64,
    /// Parametric bulk marking parameter, in (0, 1].
    pub theta_q: f64,
    /// Stop once the squared total estimator falls below this.
    pub tol: f64,
    /// Stop once the coupled system size reaches this.
    pub max_dof: usize,
    /// Safety valve on the number of loop iterations.
    pub max_iters: usize,
    /// Replace the adaptive loop by simultaneous uniform refinement of the
    /// mesh and the index set (baseline for comparison runs).
    pub uniform: bool,
    pub gmres: GmresOptions,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        AdaptiveConfig {
            theta_h: 0.5,
            theta_q: 0.5,
            tol: 1e-6,
            max_dof: 10_000_000,
            max_iters: 200,
            uniform: false,
            gmres: GmresOptions::default(),
        }
    }
}

impl AdaptiveConfig {
    pub fn validate(&self) -> Result<()> {
        let theta_ok = |t: f64| t > 0.0 && t <= 1.0;
        if !theta_ok(self.theta_h) || !theta_ok(self.theta_q) {
            return Err(Error::Contract(
                "marking parameters must lie in (0, 1]".into(),
            ));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Contract("tolerance must be positive".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::Contract("iteration cap must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    /// Bisect the marked elements.
    Refine,
    /// Add the marked detail indices to the active set.
    Enrich,
    /// One simultaneous refinement step of both spaces (uniform mode).
    Uniform,
    Stop,
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Action::Refine => "refine",
            Action::Enrich => "enrich",
            Action::Uniform => "uniform",
            Action::Stop => "stop",
        };
        f.write_str(s)
    }
}

/// One row of the run history.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub iter: usize,
    /// Spatial DG dimension.
    pub n_d: usize,
    /// Active index set cardinality.
    pub card_b: usize,
    /// n_d * card_b.
    pub total_dofs: usize,
    pub eta_h: f64,
    pub eta_theta: f64,
    pub eta_q: f64,
    pub eta_z: f64,
    pub eta_t: f64,
    pub action: Action,
    pub gmres_iters: usize,
    /// Cumulative total DOFs over all solves so far.
    pub n_cost: usize,
    /// Filled retroactively once a reference solution exists.
    pub i_eff: Option<f64>,
    /// Squared energy norm of this iterate's solution in its own spaces.
    pub energy_sq: f64,
    /// Detail indices added by an enrichment action.
    pub added: Vec<MultiIndex>,
}

/// Greedy bulk marking: sort indicators descending (ties toward the lower
/// position) and take the shortest prefix whose sum reaches theta * total.
pub fn dorfler(indicators: &[f64], theta: f64) -> Vec<usize> {
    let total: f64 = indicators.iter().sum();
    if total <= 0.0 {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..indicators.len()).collect();
    order.sort_by(|&i, &j| {
        indicators[j]
            .partial_cmp(&indicators[i])
            .unwrap()
            .then(i.cmp(&j))
    });
    let target = theta * total;
    let mut acc = 0.0;
    let mut out = Vec::new();
    for i in order {
        if acc >= target {
            break;
        }
        acc += indicators[i];
        out.push(i);
    }
    out
}

/// Elements marked for bisection: bulk criterion on eta_h,K^2 + eta_theta,K^2.
pub fn mark_spatial(report: &EstimateReport, theta_h: f64) -> Vec<usize> {
    let ind: Vec<f64> = report
        .eta_h_k
        .iter()
        .zip(&report.eta_theta_k)
        .map(|(h, t)| h + t)
        .collect();
    dorfler(&ind, theta_h)
}

/// Detail indices marked for enrichment: bulk criterion on eta_q(q)^2.
/// Positions map to the detail set, so ties resolve in graded-lex order.
pub fn mark_parametric(report: &EstimateReport, set: &IndexSet, theta_q: f64) -> Vec<MultiIndex> {
    dorfler(&report.eta_q_idx, theta_q)
        .into_iter()
        .map(|i| set.detail()[i].clone())
        .collect()
}

/// A solved and estimated iterate on one fixed space pair.
pub struct Iterate {
    pub u: ColMat,
    pub report: EstimateReport,
    pub energy_sq: f64,
    pub gmres_iters: usize,
    pub n_d: usize,
}

/// Project the data, assemble, solve the coupled system, and run the full
/// estimator sweep on the given mesh and index set.
pub fn solve_and_estimate(
    mesh: &TriangleMesh,
    data: &ProblemData,
    set: &IndexSet,
    gmres: &GmresOptions,
) -> Result<Iterate> {
    let n_modes = set.active_dim();
    let proj = project_data(mesh, data, n_modes);
    let g_b = build_stochastic_matrices(set, n_modes, false);
    let g_ext = build_stochastic_matrices(set, n_modes, true);
    let blocks = assemble_blocks(mesh, data, &proj, set, &g_b, n_modes);
    let (u, rep) = solve_coupled(&blocks, &g_b, gmres)?;
    let report = estimator::estimate(mesh, data, &proj, set, &u, &g_b, &g_ext, n_modes);
    let energy_sq = estimator::energy_norm_sq(mesh, data, &proj, set, &u, &g_b, n_modes);
    Ok(Iterate {
        u,
        report,
        energy_sq,
        gmres_iters: rep.iterations,
        n_d: blocks.n_dofs,
    })
}

/// Mutable loop state: the current spaces plus iteration and cost counters.
pub struct AdaptiveState {
    pub mesh: TriangleMesh,
    pub set: IndexSet,
    pub iter: usize,
    pub n_cost: usize,
}

/// One full cycle. Solves on the current spaces, estimates, then either
/// stops, bisects the marked elements, or enriches the index set; exactly
/// one of the two spaces changes on a non-stop step.
pub fn adaptive_step(
    state: &mut AdaptiveState,
    data: &ProblemData,
    cfg: &AdaptiveConfig,
) -> Result<(IterationRecord, Iterate)> {
    let it = solve_and_estimate(&state.mesh, data, &state.set, &cfg.gmres)?;
    let card_b = state.set.len();
    let total_dofs = it.n_d * card_b;
    state.n_cost += total_dofs;
    let rep = &it.report;

    let mut added = Vec::new();
    let action = if rep.eta_t2() <= cfg.tol || total_dofs >= cfg.max_dof {
        Action::Stop
    } else if rep.spatial2() >= rep.parametric2() {
        let marked = mark_spatial(rep, cfg.theta_h);
        if marked.is_empty() {
            Action::Stop
        } else {
            state.mesh = state.mesh.bisect_marked(&marked);
            Action::Refine
        }
    } else {
        let marked = mark_parametric(rep, &state.set, cfg.theta_q);
        if marked.is_empty() {
            Action::Stop
        } else {
            state.set = state.set.enrich(&marked)?;
            added = marked;
            Action::Enrich
        }
    };

    let record = IterationRecord {
        iter: state.iter,
        n_d: it.n_d,
        card_b,
        total_dofs,
        eta_h: rep.eta_h2.sqrt(),
        eta_theta: rep.eta_theta2.sqrt(),
        eta_q: rep.eta_q2.sqrt(),
        eta_z: rep.eta_z2.sqrt(),
        eta_t: rep.eta_t(),
        action,
        gmres_iters: it.gmres_iters,
        n_cost: state.n_cost,
        i_eff: None,
        energy_sq: it.energy_sq,
        added,
    };
    state.iter += 1;
    Ok((record, it))
}

/// Full run history plus the spaces and solution of the last solved iterate.
pub struct RunOutput {
    pub records: Vec<IterationRecord>,
    pub mesh: TriangleMesh,
    pub set: IndexSet,
    pub final_iterate: Iterate,
}

/// Drive the loop from the initial mesh and the seed index set {0, e_1}
/// until a stopping criterion fires. Every record is handed to `sink` as
/// soon as it exists so partial histories survive a crash.
pub fn run(
    mesh0: TriangleMesh,
    data: &ProblemData,
    cfg: &AdaptiveConfig,
    mut sink: impl FnMut(&IterationRecord),
) -> Result<RunOutput> {
    cfg.validate()?;
    if cfg.uniform {
        return run_uniform(mesh0, data, cfg, &mut sink);
    }
    let mut state = AdaptiveState {
        mesh: mesh0,
        set: IndexSet::initial(),
        iter: 0,
        n_cost: 0,
    };
    let mut records: Vec<IterationRecord> = Vec::new();
    loop {
        let mesh_k = state.mesh.clone();
        let set_k = state.set.clone();
        let (record, it) = adaptive_step(&mut state, data, cfg)?;
        let stop = record.action == Action::Stop;
        sink(&record);
        records.push(record);
        if stop || records.len() >= cfg.max_iters {
            return Ok(RunOutput {
                records,
                mesh: mesh_k,
                set: set_k,
                final_iterate: it,
            });
        }
    }
}

fn run_uniform(
    mesh0: TriangleMesh,
    data: &ProblemData,
    cfg: &AdaptiveConfig,
    sink: &mut impl FnMut(&IterationRecord),
) -> Result<RunOutput> {
    let mut records: Vec<IterationRecord> = Vec::new();
    let mut mesh = mesh0;
    let mut n_cost = 0usize;
    let mut k = 0usize;
    loop {
        let set = IndexSet::total_degree(k + 1, (k + 1) as u32);
        let it = solve_and_estimate(&mesh, data, &set, &cfg.gmres)?;
        let total_dofs = it.n_d * set.len();
        n_cost += total_dofs;

        // the next step quadruples the triangle count and bumps both the
        // dimension and the degree; never start a step past the budget
        let next_dofs = 4 * it.n_d * IndexSet::total_degree(k + 2, (k + 2) as u32).len();
        let last = it.report.eta_t2() <= cfg.tol
            || total_dofs >= cfg.max_dof
            || next_dofs > cfg.max_dof
            || k + 1 >= cfg.max_iters;

        let record = IterationRecord {
            iter: k,
            n_d: it.n_d,
            card_b: set.len(),
            total_dofs,
            eta_h: it.report.eta_h2.sqrt(),
            eta_theta: it.report.eta_theta2.sqrt(),
            eta_q: it.report.eta_q2.sqrt(),
            eta_z: it.report.eta_z2.sqrt(),
            eta_t: it.report.eta_t(),
            action: if last { Action::Stop } else { Action::Uniform },
            gmres_iters: it.gmres_iters,
            n_cost,
            i_eff: None,
            energy_sq: it.energy_sq,
            added: Vec::new(),
        };
        sink(&record);
        records.push(record);
        if last {
            return Ok(RunOutput {
                records,
                mesh,
                set,
                final_iterate: it,
            });
        }
        mesh = mesh.uniform_refine();
        k += 1;
    }
}

/// Energy yardstick for effectivity indices.
pub struct Reference {
    pub energy_sq: f64,
    pub total_dofs: usize,
}

/// Solve once more on the uniformly refined final mesh with the final index
/// set enriched by one bulk marking of its detail indices (the set is reused
/// unchanged when nothing is marked, e.g. in the deterministic limit).
pub fn reference_solution(
    out: &RunOutput,
    data: &ProblemData,
    cfg: &AdaptiveConfig,
) -> Result<Reference> {
    let mesh = out.mesh.uniform_refine();
    let marked = mark_parametric(&out.final_iterate.report, &out.set, cfg.theta_q);
    let set = if marked.is_empty() {
        out.set.clone()
    } else {
        out.set.enrich(&marked)?
    };
    let it = solve_and_estimate(&mesh, data, &set, &cfg.gmres)?;
    Ok(Reference {
        energy_sq: it.energy_sq,
        total_dofs: it.n_d * set.len(),
    })
}

/// Effectivity of each history row against a reference energy; rows whose
/// radicand is not positive stay undefined.
pub fn fill_effectivity(records: &mut [IterationRecord], reference: &Reference) {
    for r in records.iter_mut() {
        r.i_eff = estimator::effectivity(r.eta_t, reference.energy_sq, r.energy_sq);
    }
}

/// `run`, then a reference solve, then the effectivity column.
pub fn run_with_reference(
    mesh0: TriangleMesh,
    data: &ProblemData,
    cfg: &AdaptiveConfig,
    sink: impl FnMut(&IterationRecord),
) -> Result<(RunOutput, Reference)> {
    let mut out = run(mesh0, data, cfg, sink)?;
    let reference = reference_solution(&out, data, cfg)?;
    fill_effectivity(&mut out.records, &reference);
    Ok((out, reference))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random_field::{build_2d_kl, CovarianceSpec, KLField, PiecewiseConst};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn kl_field(mean: f64, kappa: f64, n: usize) -> KLField {
        let spec = CovarianceSpec::new(1.0, 1.0, [-1.0, 1.0], [-1.0, 1.0]);
        build_2d_kl(&spec, PiecewiseConst::constant(mean), kappa, n)
    }

    fn layer_problem(nu: f64, kappa: f64) -> ProblemData {
        ProblemData {
            a: kl_field(nu, nu * kappa, 8),
            b: [
                KLField::deterministic(PiecewiseConst::constant(0.0)),
                KLField::deterministic(PiecewiseConst::constant(1.0)),
            ],
            f: |_| 0.0,
            u_d: |x| {
                // side walls blend to the lid value over a fixed band of
                // width 0.25 so the trace is continuous; the band edge lands
                // on a vertex of every mesh refined from the 8x8 start, so
                // the vertex interpolant reproduces the data exactly
                let eps = 1e-12;
                if (x[1] + 1.0).abs() < eps {
                    x[0]
                } else if (x[0] - 1.0).abs() < eps {
                    ((1.0 - x[1]) / 0.25).min(1.0)
                } else if (x[0] + 1.0).abs() < eps {
                    -((1.0 - x[1]) / 0.25).min(1.0)
                } else {
                    0.0
                }
            },
            sigma: 10.0,
        }
    }

    fn desk_config(max_dof: usize, max_iters: usize) -> AdaptiveConfig {
        AdaptiveConfig {
            max_dof,
            max_iters,
            ..AdaptiveConfig::default()
        }
    }

    #[test]
    fn dorfler_takes_minimal_prefix() {
        let marked = dorfler(&[4.0, 3.0, 2.0, 1.0], 0.5);
        assert_eq!(marked, vec![0, 1]);
        for &i in &marked {
            let rest: f64 = marked.iter().filter(|&&j| j != i).map(|&j| [4.0, 3.0, 2.0, 1.0][j]).sum();
            assert!(rest < 0.5 * 10.0);
        }
    }

    #[test]
    fn dorfler_theta_one_marks_every_positive_entry() {
        let marked = dorfler(&[2.0, 0.0, 1.0, 0.0], 1.0);
        assert_eq!(marked, vec![0, 2]);
    }

    #[test]
    fn dorfler_ignores_all_zero_input() {
        assert!(dorfler(&[0.0; 5], 0.5).is_empty());
        assert!(dorfler(&[], 0.5).is_empty());
    }

    #[test]
    fn dorfler_breaks_ties_toward_low_positions() {
        assert_eq!(dorfler(&[1.0, 1.0, 1.0, 1.0], 0.5), vec![0, 1]);
    }

    #[test]
    fn dorfler_bulk_bound_and_minimality_randomized() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let n = rng.gen_range(1..40);
            let theta = rng.gen_range(0.05..=1.0);
            let ind: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
            let total: f64 = ind.iter().sum();
            let marked = dorfler(&ind, theta);
            let sum: f64 = marked.iter().map(|&i| ind[i]).sum();
            if total > 0.0 {
                assert!(sum >= theta * total - 1e-12 * total);
                if let Some(&last) = marked.last() {
                    assert!(sum - ind[last] < theta * total);
                }
            }
        }
    }

    #[test]
    fn zero_variance_runs_as_deterministic_afem() {
        let data = layer_problem(1.0, 0.0);
        let mesh = TriangleMesh::rectangle([-1.0, 1.0], [-1.0, 1.0], 4, 4).unwrap();
        let cfg = desk_config(100_000, 4);
        let out = run(mesh, &data, &cfg, |_| {}).unwrap();
        for r in &out.records {
            assert!(r.action == Action::Refine || r.action == Action::Stop);
            assert_eq!(r.eta_q, 0.0);
            assert_eq!(r.eta_z, 0.0);
            assert_eq!(r.gmres_iters, 1);
            assert_eq!(r.card_b, 2);
        }
    }

    #[test]
    fn met_tolerance_stops_without_touching_the_spaces() {
        let data = layer_problem(1.0, 0.05);
        let mesh = TriangleMesh::rectangle([-1.0, 1.0], [-1.0, 1.0], 4, 4).unwrap();
        let cfg = AdaptiveConfig {
            tol: 1e9,
            ..desk_config(100_000, 10)
        };
        let out = run(mesh, &data, &cfg, |_| {}).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.records[0].action, Action::Stop);
        assert_eq!(out.mesh.n_triangles(), 32);
        assert_eq!(out.set.len(), 2);
    }

    #[test]
    fn undersized_budget_stops_at_the_first_record() {
        let data = layer_problem(1.0, 0.05);
        let mesh = TriangleMesh::rectangle([-1.0, 1.0], [-1.0, 1.0], 4, 4).unwrap();
        let cfg = desk_config(10, 10);
        let out = run(mesh, &data, &cfg, |_| {}).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.records[0].action, Action::Stop);
    }

    #[test]
    fn each_step_changes_exactly_one_space() {
        let data = layer_problem(1e-1, 0.05);
        let mesh = TriangleMesh::rectangle([-1.0, 1.0], [-1.0, 1.0], 4, 4).unwrap();
        let cfg = desk_config(5_000, 40);
        let out = run(mesh, &data, &cfg, |_| {}).unwrap();
        assert!(out.records.len() >= 3);
        for pair in out.records.windows(2) {
            let (prev, next) = (&pair[0], &pair[1]);
            assert_eq!(next.n_cost - prev.n_cost, next.total_dofs);
            match prev.action {
                Action::Refine => {
                    assert!(next.n_d > prev.n_d);
                    assert_eq!(next.card_b, prev.card_b);
                    assert!(prev.added.is_empty());
                }
                Action::Enrich => {
                    assert_eq!(next.n_d, prev.n_d);
                    assert!(next.card_b > prev.card_b);
                    assert_eq!(next.card_b, prev.card_b + prev.added.len());
                }
                a => panic!("unexpected action {a} before the end"),
            }
        }
        assert_eq!(out.records.last().unwrap().action, Action::Stop);
    }

    #[test]
    fn total_estimate_decreases_over_benchmark_steps() {
        let data = layer_problem(1.0, 0.05);
        let mesh = TriangleMesh::rectangle([-1.0, 1.0], [-1.0, 1.0], 8, 8).unwrap();
        let cfg = desk_config(1_000_000, 6);
        let out = run(mesh, &data, &cfg, |_| {}).unwrap();
        assert_eq!(out.records.len(), 6);
        let etas: Vec<f64> = out.records.iter().map(|r| r.eta_t).collect();
        let violations = etas.windows(2).filter(|w| w[1] >= w[0]).count();
        assert!(violations <= 1, "eta_T sequence {etas:?}");
    }

    #[test]
    fn uniform_mode_refines_both_spaces_together() {
        let data = layer_problem(1.0, 0.05);
        let mesh = TriangleMesh::rectangle([-1.0, 1.0], [-1.0, 1.0], 4, 4).unwrap();
        let cfg = AdaptiveConfig {
            uniform: true,
            ..desk_config(100_000, 20)
        };
        let out = run(mesh, &data, &cfg, |_| {}).unwrap();
        let cards: Vec<usize> = out.records.iter().map(|r| r.card_b).collect();
        let dims: Vec<usize> = out.records.iter().map(|r| r.n_d).collect();
        assert_eq!(cards, vec![2, 6, 20]);
        assert_eq!(dims, vec![96, 384, 1536]);
        assert_eq!(out.records.last().unwrap().action, Action::Stop);
        for r in &out.records[..out.records.len() - 1] {
            assert_eq!(r.action, Action::Uniform);
        }
        assert_eq!(out.set.len(), 20);
        assert_eq!(out.mesh.n_triangles(), 512);
    }

    #[test]
    fn reference_solve_enlarges_the_spaces_and_fills_effectivity() {
        let data = layer_problem(1.0, 0.05);
        let mesh = TriangleMesh::rectangle([-1.0, 1.0], [-1.0, 1.0], 4, 4).unwrap();
        let cfg = desk_config(20_000, 8);
        let (out, reference) = run_with_reference(mesh, &data, &cfg, |_| {}).unwrap();
        let last = out.records.last().unwrap();
        assert!(reference.total_dofs > last.total_dofs);
        assert!(reference.energy_sq > 0.0);
        let defined = out.records.iter().filter(|r| r.i_eff.is_some()).count();
        assert!(defined >= out.records.len() - 1);
        for r in &out.records {
            if let Some(v) = r.i_eff {
                assert!(v.is_finite() && v > 0.0);
            }
        }
    }

    #[test]
    fn rejects_out_of_range_marking_parameters() {
        let bad = AdaptiveConfig {
            theta_h: 0.0,
            ..AdaptiveConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = AdaptiveConfig {
            theta_q: 1.5,
            ..AdaptiveConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = AdaptiveConfig {
            tol: 0.0,
            ..AdaptiveConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
