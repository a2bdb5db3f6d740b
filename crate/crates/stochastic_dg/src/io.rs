//! Experiment configuration, run history CSV, and legacy VTK output.
//!
//! Configs are flat `key=value` text files so they stay diffable and can be
//! overridden key by key from a command line. History rows are flushed to
//! disk as they are produced, so a crashed run leaves a usable partial
//! history; once the reference solve fills the effectivity column the file
//! is rewritten in full.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::adapt::{run_with_reference, AdaptiveConfig, IterationRecord, Reference, RunOutput};
use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;
use crate::problems::{build_problem, BenchmarkProblem, ExampleId, Partition};
use crate::tensor::GmresOptions;

/// Whether the driver adapts or refines both spaces uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMode {
    Adaptive,
    Uniform,
}

impl RunMode {
    pub fn parse(s: &str) -> std::result::Result<Self, String> {
        match s {
            "adaptive" => Ok(RunMode::Adaptive),
            "uniform" => Ok(RunMode::Uniform),
            _ => Err(format!("unknown mode '{s}' (expected adaptive or uniform)")),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            RunMode::Adaptive => "adaptive",
            RunMode::Uniform => "uniform",
        }
    }
}

/// Everything one experiment needs: problem selection, marking and stopping
/// parameters, solver budget, and output location.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub example: ExampleId,
    /// Jump-mean layout; ignored by the other examples.
    pub partition: Partition,
    pub nu: f64,
    pub ell: f64,
    pub kappa: f64,
    pub theta_h: f64,
    pub theta_q: f64,
    pub sigma: f64,
    pub tol: f64,
    pub max_dof: usize,
    pub max_iters: usize,
    pub gmres_tol: f64,
    pub gmres_restart: usize,
    pub gmres_maxit: usize,
    pub mode: RunMode,
    /// Seed for the sampling-based self checks.
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            example: ExampleId::RandDiff,
            partition: Partition::Half,
            nu: 1e-2,
            ell: 1.0,
            kappa: 0.05,
            theta_h: 0.5,
            theta_q: 0.5,
            sigma: 10.0,
            tol: 1e-6,
            max_dof: 10_000_000,
            max_iters: 200,
            gmres_tol: 1e-10,
            gmres_restart: 50,
            gmres_maxit: 2000,
            mode: RunMode::Adaptive,
            seed: 7,
            out_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    fn set_inner(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
            value
                .parse()
                .map_err(|_| format!("bad value '{value}' for {key}"))
        }
        match key {
            "example" => self.example = ExampleId::parse(value).map_err(|e| e.to_string())?,
            "partition" => self.partition = Partition::parse(value).map_err(|e| e.to_string())?,
            "nu" => self.nu = num(key, value)?,
            "ell" => self.ell = num(key, value)?,
            "kappa" => self.kappa = num(key, value)?,
            "theta_h" => self.theta_h = num(key, value)?,
            "theta_q" => self.theta_q = num(key, value)?,
            "sigma" => self.sigma = num(key, value)?,
            "tol" => self.tol = num(key, value)?,
            "max_dof" => self.max_dof = num(key, value)?,
            "max_iters" => self.max_iters = num(key, value)?,
            "gmres_tol" => self.gmres_tol = num(key, value)?,
            "gmres_restart" => self.gmres_restart = num(key, value)?,
            "gmres_maxit" => self.gmres_maxit = num(key, value)?,
            "mode" => self.mode = RunMode::parse(value)?,
            "seed" => self.seed = num(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            _ => return Err(format!("unknown key '{key}'")),
        }
        Ok(())
    }

    /// Apply one `key=value` override (the CLI path).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        self.set_inner(key, value).map_err(|msg| Error::ConfigParse { line: 0, msg })
    }

    /// Serialize as a `key=value` file; [`parse_config`] round-trips it.
    pub fn write_config(&self) -> String {
        let mut s = String::new();
        use std::fmt::Write as _;
        let _ = writeln!(s, "example={}", self.example.as_str());
        let _ = writeln!(s, "partition={}", self.partition.as_str());
        let _ = writeln!(s, "nu={}", self.nu);
        let _ = writeln!(s, "ell={}", self.ell);
        let _ = writeln!(s, "kappa={}", self.kappa);
        let _ = writeln!(s, "theta_h={}", self.theta_h);
        let _ = writeln!(s, "theta_q={}", self.theta_q);
        let _ = writeln!(s, "sigma={}", self.sigma);
        let _ = writeln!(s, "tol={}", self.tol);
        let _ = writeln!(s, "max_dof={}", self.max_dof);
        let _ = writeln!(s, "max_iters={}", self.max_iters);
        let _ = writeln!(s, "gmres_tol={}", self.gmres_tol);
        let _ = writeln!(s, "gmres_restart={}", self.gmres_restart);
        let _ = writeln!(s, "gmres_maxit={}", self.gmres_maxit);
        let _ = writeln!(s, "mode={}", self.mode.as_str());
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "out_dir={}", self.out_dir.display());
        s
    }

    pub fn to_adaptive_config(&self) -> AdaptiveConfig {
        AdaptiveConfig {
            theta_h: self.theta_h,
            theta_q: self.theta_q,
            tol: self.tol,
            max_dof: self.max_dof,
            max_iters: self.max_iters,
            uniform: self.mode == RunMode::Uniform,
            gmres: GmresOptions {
                tol: self.gmres_tol,
                restart: self.gmres_restart,
                max_iters: self.gmres_maxit,
            },
        }
    }

    pub fn to_problem(&self) -> Result<BenchmarkProblem> {
        build_problem(
            self.example,
            self.partition,
            self.nu,
            self.ell,
            self.kappa,
            self.sigma,
        )
    }
}

/// Parse a `key=value` config text. Lines are trimmed; empty lines and lines
/// starting with `#` are skipped. Unknown keys and malformed values fail
/// with their line number.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::ConfigParse {
                line: i + 1,
                msg: format!("expected key=value, got '{line}'"),
            });
        };
        cfg.set_inner(key.trim(), value.trim())
            .map_err(|msg| Error::ConfigParse { line: i + 1, msg })?;
    }
    Ok(cfg)
}

/// Read and parse a config file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_config(&text)
}

/// History CSV column set, written bit-exactly.
pub const HISTORY_HEADER: &str =
    "iter,Nd,card_B,total_dofs,eta_h,eta_theta,eta_q,eta_z,eta_T,action,gmres_iters,N_cost,I_eff";

/// Scientific notation with a 6-significant-digit mantissa and a signed
/// two-digit exponent (`5.79600e-02`), the table style used throughout the
/// run histories.
pub fn fmt_sci(x: f64) -> String {
    if x == 0.0 {
        return "0.00000e+00".to_string();
    }
    let s = format!("{:.5e}", x);
    let (m, e) = s.split_once('e').expect("float formatting");
    let exp: i32 = e.parse().expect("float exponent");
    let sign = if exp < 0 { '-' } else { '+' };
    format!("{m}e{sign}{:02}", exp.abs())
}

fn csv_row(r: &IterationRecord) -> String {
    let i_eff = match r.i_eff {
        Some(v) => fmt_sci(v),
        None => String::new(),
    };
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{}",
        r.iter,
        r.n_d,
        r.card_b,
        r.total_dofs,
        fmt_sci(r.eta_h),
        fmt_sci(r.eta_theta),
        fmt_sci(r.eta_q),
        fmt_sci(r.eta_z),
        fmt_sci(r.eta_t),
        r.action,
        r.gmres_iters,
        r.n_cost,
        i_eff,
    )
}

/// Incremental history writer: header on open, one flushed line per record.
pub struct HistoryWriter {
    file: fs::File,
    path: PathBuf,
}

impl HistoryWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut file =
            fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        writeln!(file, "{HISTORY_HEADER}")
            .and_then(|_| file.flush())
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(HistoryWriter {
            file,
            path: path.to_path_buf(),
        })
    }

    pub fn append(&mut self, r: &IterationRecord) -> Result<()> {
        writeln!(self.file, "{}", csv_row(r))
            .and_then(|_| self.file.flush())
            .map_err(|e| Error::io(self.path.display().to_string(), e))
    }
}

/// Rewrite the whole history in one shot (used after the effectivity column
/// is filled in).
pub fn write_history(path: &Path, records: &[IterationRecord]) -> Result<()> {
    let mut s = String::with_capacity(64 * (records.len() + 1));
    s.push_str(HISTORY_HEADER);
    s.push('\n');
    for r in records {
        s.push_str(&csv_row(r));
        s.push('\n');
    }
    fs::write(path, s).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Legacy ASCII VTK unstructured grid with duplicated per-element corner
/// points, so discontinuous fields export without averaging across element
/// boundaries. Point field values are indexed like the DG coefficient
/// vector: entry `3 t + k` belongs to corner `k` of triangle `t`. Cell
/// fields hold one value per triangle.
pub fn export_vtk(
    mesh: &TriangleMesh,
    cell_fields: &[(&str, &[f64])],
    point_fields: &[(&str, &[f64])],
    path: &Path,
) -> Result<()> {
    let nt = mesh.n_triangles();
    for (name, f) in cell_fields {
        assert_eq!(f.len(), nt, "cell field {name}");
    }
    for (name, f) in point_fields {
        assert_eq!(f.len(), 3 * nt, "point field {name}");
    }

    let mut s = String::new();
    s.push_str("# vtk DataFile Version 3.0\n");
    s.push_str("sdg output\n");
    s.push_str("ASCII\n");
    s.push_str("DATASET UNSTRUCTURED_GRID\n");
    use std::fmt::Write as _;
    let _ = writeln!(s, "POINTS {} double", 3 * nt);
    for t in 0..nt {
        for v in mesh.tri_vertices(t) {
            let _ = writeln!(s, "{} {} 0", v[0], v[1]);
        }
    }
    let _ = writeln!(s, "CELLS {} {}", nt, 4 * nt);
    for t in 0..nt {
        let _ = writeln!(s, "3 {} {} {}", 3 * t, 3 * t + 1, 3 * t + 2);
    }
    let _ = writeln!(s, "CELL_TYPES {nt}");
    for _ in 0..nt {
        s.push_str("5\n");
    }
    if !cell_fields.is_empty() {
        let _ = writeln!(s, "CELL_DATA {nt}");
        for (name, f) in cell_fields {
            let _ = writeln!(s, "SCALARS {name} double 1");
            s.push_str("LOOKUP_TABLE default\n");
            for v in *f {
                let _ = writeln!(s, "{v}");
            }
        }
    }
    if !point_fields.is_empty() {
        let _ = writeln!(s, "POINT_DATA {}", 3 * nt);
        for (name, f) in point_fields {
            let _ = writeln!(s, "SCALARS {name} double 1");
            s.push_str("LOOKUP_TABLE default\n");
            for v in *f {
                let _ = writeln!(s, "{v}");
            }
        }
    }
    fs::write(path, s).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Pointwise mean and variance of the chaos solution: the mean is the
/// zero-index coefficient column and, the basis being orthonormal, the
/// variance is the pointwise sum of squares of the remaining columns.
pub fn mean_and_variance(u: &crate::sparse::ColMat) -> (Vec<f64>, Vec<f64>) {
    let mut mean = vec![0.0; u.rows];
    let mut var = vec![0.0; u.rows];
    for i in 0..u.rows {
        mean[i] = u.get(i, 0);
        for q in 1..u.cols {
            var[i] += u.get(i, q) * u.get(i, q);
        }
    }
    (mean, var)
}

/// Files produced by one experiment run.
pub struct ExperimentArtifacts {
    pub out: RunOutput,
    pub reference: Reference,
    pub history: PathBuf,
    pub solution_vtk: PathBuf,
    pub estimators_vtk: PathBuf,
    pub mesh_vtk: PathBuf,
}

/// Run one experiment end to end: build the problem, drive the loop with a
/// live history sink, fill the effectivity column from the reference solve,
/// and leave CSV and VTK artifacts in the output directory. `progress` sees
/// each record as it is produced.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    mut progress: impl FnMut(&IterationRecord),
) -> Result<ExperimentArtifacts> {
    let problem = cfg.to_problem()?;
    let mesh0 = problem.initial_mesh()?;
    let acfg = cfg.to_adaptive_config();

    fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| Error::io(cfg.out_dir.display().to_string(), e))?;
    let config_path = cfg.out_dir.join("config.txt");
    fs::write(&config_path, cfg.write_config())
        .map_err(|e| Error::io(config_path.display().to_string(), e))?;

    let history = cfg.out_dir.join("history.csv");
    let mut writer = HistoryWriter::create(&history)?;
    let mut sink_err: Option<Error> = None;
    let (out, reference) = run_with_reference(mesh0, &problem.data, &acfg, |r| {
        if sink_err.is_none() {
            if let Err(e) = writer.append(r) {
                sink_err = Some(e);
            }
        }
        progress(r);
    })?;
    if let Some(e) = sink_err {
        return Err(e);
    }
    drop(writer);
    write_history(&history, &out.records)?;

    let rep = &out.final_iterate.report;
    let estimators_vtk = cfg.out_dir.join("estimators.vtk");
    export_vtk(
        &out.mesh,
        &[
            ("eta_h_sq", &rep.eta_h_k),
            ("eta_theta_sq", &rep.eta_theta_k),
            ("eta_q_sq", &rep.eta_q_k),
            ("eta_z_sq", &rep.eta_z_k),
        ],
        &[],
        &estimators_vtk,
    )?;

    let (mean, var) = mean_and_variance(&out.final_iterate.u);
    let solution_vtk = cfg.out_dir.join("solution.vtk");
    export_vtk(
        &out.mesh,
        &[],
        &[("mean", &mean), ("variance", &var)],
        &solution_vtk,
    )?;

    let mesh_vtk = cfg.out_dir.join("mesh.vtk");
    export_vtk(&out.mesh, &[], &[], &mesh_vtk)?;

    Ok(ExperimentArtifacts {
        out,
        reference,
        history,
        solution_vtk,
        estimators_vtk,
        mesh_vtk,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sci_format_matches_table_style() {
        assert_eq!(fmt_sci(5.796e-2), "5.79600e-02");
        assert_eq!(fmt_sci(0.0), "0.00000e+00");
        assert_eq!(fmt_sci(-1.5), "-1.50000e+00");
        assert_eq!(fmt_sci(123456.0), "1.23456e+05");
        assert_eq!(fmt_sci(9.999999e-13), "1.00000e-12");
    }

    #[test]
    fn config_round_trips() {
        let mut cfg = ExperimentConfig::default();
        cfg.example = ExampleId::Jump;
        cfg.partition = Partition::Rectangle;
        cfg.nu = 0.03;
        cfg.theta_h = 0.8;
        cfg.max_dof = 123_456;
        cfg.mode = RunMode::Uniform;
        cfg.seed = 99;
        cfg.out_dir = PathBuf::from("artifacts/run1");
        let text = cfg.write_config();
        assert_eq!(parse_config(&text).unwrap(), cfg);
    }

    #[test]
    fn config_parser_reports_line_numbers() {
        let text = "# comment\n\nnu=0.5\nbogus_key=1\n";
        match parse_config(text) {
            Err(Error::ConfigParse { line, msg }) => {
                assert_eq!(line, 4);
                assert!(msg.contains("bogus_key"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
        let text = "nu=not_a_number\n";
        assert!(parse_config(text).is_err());
        let text = "just a line\n";
        assert!(parse_config(text).is_err());
    }

    #[test]
    fn overrides_apply_like_file_keys() {
        let mut cfg = ExperimentConfig::default();
        cfg.set("example", "rand_conv").unwrap();
        cfg.set("theta_q", "0.3").unwrap();
        assert_eq!(cfg.example, ExampleId::RandConv);
        assert_eq!(cfg.theta_q, 0.3);
        assert!(cfg.set("window", "north").is_err());
    }

    #[test]
    fn vtk_two_triangle_mesh_shape() {
        let d = tempfile::tempdir().unwrap();
        let mesh = TriangleMesh::rectangle([0.0, 1.0], [0.0, 1.0], 1, 1).unwrap();
        let path = d.path().join("two.vtk");
        let cells = vec![1.5, 2.5];
        let points = vec![7.0; 6];
        export_vtk(&mesh, &[("ind", &cells)], &[("val", &points)], &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.contains("POINTS 6 double"));
        assert!(text.contains("CELLS 2 8"));
        assert!(text.contains("CELL_TYPES 2"));
        assert!(text.contains("CELL_DATA 2"));
        assert!(text.contains("POINT_DATA 6"));
        // legacy cell type 5 is a linear triangle
        assert_eq!(text.lines().filter(|l| *l == "5").count(), 2);
        // constant field round-trips as written decimals
        assert_eq!(text.lines().filter(|l| *l == "7").count(), 6);
        assert!(text.contains("\n1.5\n2.5\n"));
    }

    #[test]
    fn experiment_artifacts_and_header() {
        let d = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig::default();
        cfg.example = ExampleId::RandDiff;
        cfg.nu = 1.0;
        cfg.kappa = 0.0;
        cfg.max_dof = 800;
        cfg.max_iters = 4;
        cfg.out_dir = d.path().to_path_buf();
        let mut seen = 0usize;
        let art = run_experiment(&cfg, |_| seen += 1).unwrap();
        assert_eq!(seen, art.out.records.len());
        let text = fs::read_to_string(&art.history).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), HISTORY_HEADER);
        let rows: Vec<&str> = lines.collect();
        assert_eq!(rows.len(), art.out.records.len());
        // kappa = 0: parametric and truncation columns are exactly zero
        for row in &rows {
            let cols: Vec<&str> = row.split(',').collect();
            assert_eq!(cols.len(), 13);
            assert_eq!(cols[6], "0.00000e+00");
            assert_eq!(cols[7], "0.00000e+00");
        }
        assert!(art.solution_vtk.exists());
        assert!(art.estimators_vtk.exists());
        assert!(art.mesh_vtk.exists());
        let config_path = d.path().join("config.txt");
        assert!(config_path.exists());
        let reparsed = load_config(&config_path).unwrap();
        assert_eq!(reparsed, cfg);
    }

    #[test]
    fn variance_vanishes_in_the_deterministic_limit() {
        let u = crate::sparse::ColMat::from_data(3, 2, vec![1.0, 2.0, 3.0, 0.0, 0.0, 0.0]);
        let (mean, var) = mean_and_variance(&u);
        assert_eq!(mean, vec![1.0, 2.0, 3.0]);
        assert_eq!(var, vec![0.0, 0.0, 0.0]);
    }
}
