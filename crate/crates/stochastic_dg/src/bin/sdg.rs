use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use stochastic_dg::adapt::IterationRecord;
use stochastic_dg::io::{fmt_sci, load_config, run_experiment, ExperimentConfig};
use stochastic_dg::verify;

#[derive(Parser)]
#[command(
    name = "sdg",
    about = "Adaptive stochastic DG solver for convection-dominated diffusion with random coefficients"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one experiment; leaves history.csv and VTK files in the output directory
    Run(RunArgs),
    /// Run a marking-parameter grid, one experiment per (theta_h, theta_q) cell
    Sweep(SweepArgs),
    /// Run the self-check oracle suite
    Verify {
        /// Seed for the randomized oracles
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

/// Config file plus per-key overrides. Values are parsed by the config
/// layer, so the accepted forms match the file format exactly.
#[derive(Args)]
struct RunArgs {
    /// key=value config file; defaults apply when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// rand_diff, rand_conv, rand_both, or jump
    #[arg(long)]
    example: Option<String>,
    /// half or rectangle (jump example only)
    #[arg(long)]
    partition: Option<String>,
    #[arg(long)]
    nu: Option<String>,
    #[arg(long)]
    ell: Option<String>,
    #[arg(long)]
    kappa: Option<String>,
    #[arg(long)]
    theta_h: Option<String>,
    #[arg(long)]
    theta_q: Option<String>,
    #[arg(long)]
    sigma: Option<String>,
    #[arg(long)]
    tol: Option<String>,
    #[arg(long)]
    max_dof: Option<String>,
    #[arg(long)]
    max_iters: Option<String>,
    #[arg(long)]
    gmres_tol: Option<String>,
    #[arg(long)]
    gmres_restart: Option<String>,
    #[arg(long)]
    gmres_maxit: Option<String>,
    /// adaptive or uniform
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    out_dir: Option<String>,
}

impl RunArgs {
    fn to_config(&self) -> Result<ExperimentConfig, String> {
        let mut cfg = match &self.config {
            Some(path) => load_config(path).map_err(|e| e.to_string())?,
            None => ExperimentConfig::default(),
        };
        let overrides: [(&str, &Option<String>); 17] = [
            ("example", &self.example),
            ("partition", &self.partition),
            ("nu", &self.nu),
            ("ell", &self.ell),
            ("kappa", &self.kappa),
            ("theta_h", &self.theta_h),
            ("theta_q", &self.theta_q),
            ("sigma", &self.sigma),
            ("tol", &self.tol),
            ("max_dof", &self.max_dof),
            ("max_iters", &self.max_iters),
            ("gmres_tol", &self.gmres_tol),
            ("gmres_restart", &self.gmres_restart),
            ("gmres_maxit", &self.gmres_maxit),
            ("mode", &self.mode),
            ("seed", &self.seed),
            ("out_dir", &self.out_dir),
        ];
        for (key, value) in overrides {
            if let Some(v) = value {
                cfg.set(key, v).map_err(|e| e.to_string())?;
            }
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    base: RunArgs,
    /// Comma-separated spatial marking parameters
    #[arg(long, default_value = "0.3,0.5,0.8")]
    theta_h_grid: String,
    /// Comma-separated parametric marking parameters
    #[arg(long, default_value = "0.3,0.5,0.8")]
    theta_q_grid: String,
}

fn parse_grid(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| format!("bad grid value '{t}'"))
        })
        .collect()
}

fn print_record(r: &IterationRecord) {
    println!(
        "iter {:>3}  Nd {:>7}  |B| {:>3}  dofs {:>9}  eta_T {}  {}",
        r.iter,
        r.n_d,
        r.card_b,
        r.total_dofs,
        fmt_sci(r.eta_t),
        r.action
    );
}

fn cmd_run(args: &RunArgs) -> Result<(), String> {
    let cfg = args.to_config()?;
    let art = run_experiment(&cfg, print_record).map_err(|e| e.to_string())?;
    let last = art.out.records.last().expect("at least one record");
    println!(
        "done: {} iterations, final eta_T {}, reference dofs {}",
        art.out.records.len(),
        fmt_sci(last.eta_t),
        art.reference.total_dofs
    );
    println!("history: {}", art.history.display());
    println!("fields: {}", art.solution_vtk.display());
    println!("indicators: {}", art.estimators_vtk.display());
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> Result<(), String> {
    let base = args.base.to_config()?;
    let hs = parse_grid(&args.theta_h_grid)?;
    let qs = parse_grid(&args.theta_q_grid)?;
    let root = base.out_dir.clone();
    std::fs::create_dir_all(&root).map_err(|e| format!("{}: {e}", root.display()))?;

    let mut summary = String::from(
        "theta_h,theta_q,iterations,final_eta_T,final_Nd,final_card_B,final_total_dofs,N_cost\n",
    );
    for &th in &hs {
        for &tq in &qs {
            let mut cfg = base.clone();
            cfg.theta_h = th;
            cfg.theta_q = tq;
            cfg.out_dir = root.join(format!("th{th}_tq{tq}"));
            println!("--- theta_h {th}, theta_q {tq} -> {}", cfg.out_dir.display());
            let art = run_experiment(&cfg, print_record).map_err(|e| e.to_string())?;
            let last = art.out.records.last().expect("at least one record");
            use std::fmt::Write as _;
            let _ = writeln!(
                summary,
                "{th},{tq},{},{},{},{},{},{}",
                art.out.records.len(),
                fmt_sci(last.eta_t),
                last.n_d,
                last.card_b,
                last.total_dofs,
                last.n_cost
            );
        }
    }
    let path = root.join("sweep.csv");
    std::fs::write(&path, summary).map_err(|e| format!("{}: {e}", path.display()))?;
    println!("sweep summary: {}", path.display());
    Ok(())
}

fn cmd_verify(seed: u64) -> Result<(), String> {
    let results = verify::run_all(seed);
    let mut failed = 0usize;
    for r in &results {
        let tag = if r.passed { "ok  " } else { "FAIL" };
        println!("{tag} {:<28} {}", r.name, r.detail);
        if !r.passed {
            failed += 1;
        }
    }
    if failed > 0 {
        return Err(format!("{failed} of {} checks failed", results.len()));
    }
    println!("all {} checks passed", results.len());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.cmd {
        Cmd::Run(args) => cmd_run(args),
        Cmd::Sweep(args) => cmd_sweep(args),
        Cmd::Verify { seed } => cmd_verify(*seed),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
