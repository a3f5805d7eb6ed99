use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};
use kigrasp::io::NormalConvention;
use kigrasp::planner::{self, BenchConfig, PlanResult, RunConfig};
use kigrasp::sqp::Termination;
use kigrasp::verify::{self, VerifyOptions};
use kigrasp::{par, Error};

const EXIT_VERIFY: u8 = 1;
const EXIT_IO: u8 = 2;
const EXIT_PARSE: u8 = 3;
const EXIT_INFEASIBLE: u8 = 4;
const EXIT_STALL: u8 = 5;
const EXIT_NUMERICAL: u8 = 6;

/// Grasp planning by Q∞ maximization.
#[derive(Parser)]
#[command(name = "kigrasp", version, allow_negative_numbers = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Plan a grasp; writes result.json, trace.csv and pose.obj.
    Plan(PlanArgs),
    /// Time FGT against direct summation over sample densities.
    FgtBench {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the CSV path in the config.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run the oracle suite; exits 1 if any check fails.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, hide = true)]
        flip_c_sign: bool,
        #[arg(long, hide = true)]
        flip_armijo_sign: bool,
    },
}

#[derive(Args)]
#[command(allow_negative_numbers = true)]
struct PlanArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Object file; repeat to plan several objects, each into its own
    /// subdirectory of the output directory.
    #[arg(long)]
    object: Vec<PathBuf>,
    #[arg(long)]
    gripper: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum)]
    normals: Option<Normals>,
    #[arg(long)]
    directions: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Halve alpha this many times after the first solve, restarting each time.
    #[arg(long)]
    alpha_schedule: Option<usize>,
    #[arg(long)]
    epsilon_fgt: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    gamma_obj: Option<f64>,
    #[arg(long)]
    gamma_self: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    c: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    poisson_r: Option<f64>,
    #[arg(long)]
    d0: Option<f64>,
    /// Approach direction as `x,y,z`.
    #[arg(long, value_delimiter = ',')]
    approach: Option<Vec<f64>>,
    /// Replace the fast Gauss transform by direct summation.
    #[arg(long)]
    brute_force: bool,
    /// Objects planned concurrently in batch mode.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Normals {
    Outward,
    Inward,
}

impl PlanArgs {
    /// Config file values with flags applied on top.
    fn configs(&self) -> kigrasp::Result<Vec<RunConfig>> {
        let mut base = match &self.config {
            Some(p) => RunConfig::from_toml_file(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = &self.gripper {
            base.gripper = v.clone();
        }
        if let Some(v) = &self.output {
            base.output = v.clone();
        }
        if let Some(v) = self.normals {
            base.normals = match v {
                Normals::Outward => NormalConvention::Outward,
                Normals::Inward => NormalConvention::Inward,
            };
        }
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field {
                    base.$field = v;
                }
            )*};
        }
        set!(directions, alpha, alpha_schedule, epsilon_fgt, mu, gamma_obj, gamma_self, beta, c, tau, max_iters, seed);
        if self.poisson_r.is_some() {
            base.poisson_r = self.poisson_r;
        }
        if self.d0.is_some() {
            base.d0 = self.d0;
        }
        if let Some(a) = &self.approach {
            base.approach = a
                .as_slice()
                .try_into()
                .map_err(|_| Error::InvalidArgument(format!("--approach takes three values, got {}", a.len())))?;
        }
        base.brute_force |= self.brute_force;

        if self.object.len() <= 1 {
            if let Some(o) = self.object.first() {
                base.object = o.clone();
            }
            return Ok(vec![base]);
        }
        Ok(self
            .object
            .iter()
            .map(|o| {
                let stem = o.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "object".into());
                RunConfig { object: o.clone(), output: base.output.join(stem), ..base.clone() }
            })
            .collect())
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } => EXIT_IO,
        Error::Parse { .. } | Error::InvalidArgument(_) => EXIT_PARSE,
        Error::InfeasibleInit(_) => EXIT_INFEASIBLE,
        Error::SolverFailure(_) => EXIT_STALL,
        Error::Numerical(_) => EXIT_NUMERICAL,
    }
}

fn create_dir(dir: &Path) -> kigrasp::Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.to_path_buf(), source })
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io { path: path.to_path_buf(), source },
        other => Error::Io { path: path.to_path_buf(), source: std::io::Error::other(format!("{other:?}")) },
    }
}

fn write_csv<T: serde::Serialize>(path: &Path, rows: &[T]) -> kigrasp::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

fn write_outputs(result: &PlanResult) -> kigrasp::Result<()> {
    let dir = &result.prepared.config.output;
    create_dir(dir)?;
    let json = serde_json::to_string_pretty(&result.to_json()).expect("result is valid JSON");
    kigrasp::io::write_text(&dir.join("result.json"), &(json + "\n"))?;
    write_csv(&dir.join("trace.csv"), &result.output.trace)?;
    kigrasp::io::write_text(&dir.join("pose.obj"), &result.pose_obj()?)
}

/// Plans one object and writes its files; a stalled solve still writes them.
fn plan_one(config: &RunConfig) -> Result<(), (u8, String)> {
    let fail = |e: Error| (exit_code(&e), e.to_string());
    let result = planner::plan(config).map_err(fail)?;
    write_outputs(&result).map_err(fail)?;
    let out = &result.output;
    println!(
        "{}: q_inf {:.6e} after {} iterations ({:?}, {:.2} s) -> {}",
        config.object.display(),
        out.q_inf,
        out.state.iteration,
        out.termination,
        result.wall_time_s,
        config.output.display()
    );
    if out.termination == Termination::Stall {
        return Err((EXIT_STALL, format!("{}: line search stalled", config.object.display())));
    }
    Ok(())
}

fn plan(args: &PlanArgs) -> Result<(), (u8, String)> {
    let configs = args.configs().map_err(|e| (exit_code(&e), e.to_string()))?;
    if configs.len() == 1 {
        return plan_one(&configs[0]);
    }
    let next = AtomicUsize::new(0);
    let failures = Mutex::new(Vec::new());
    std::thread::scope(|s| {
        for _ in 0..args.jobs.clamp(1, configs.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(cfg) = configs.get(i) else { break };
                if let Err(e) = plan_one(cfg) {
                    failures.lock().expect("no panics while holding the lock").push(e);
                }
            });
        }
    });
    let failures = failures.into_inner().expect("no panics while holding the lock");
    match failures.iter().map(|f| f.0).max() {
        None => Ok(()),
        Some(code) => {
            let msg = failures.into_iter().map(|f| f.1).collect::<Vec<_>>().join("\n");
            Err((code, msg))
        }
    }
}

fn fgt_bench(config: &Path, output: Option<PathBuf>) -> kigrasp::Result<()> {
    let mut cfg = BenchConfig::from_toml_file(config)?;
    if let Some(o) = output {
        cfg.output = o;
    }
    let rows = planner::fgt_bench(&cfg)?;
    if let Some(dir) = cfg.output.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_csv(&cfg.output, &rows)?;
    println!("density        N        M   fgt_ms  brute_ms  max_abs_err");
    for r in &rows {
        println!(
            "{:7.2} {:8} {:8} {:8.2} {:9.2} {:12.3e}",
            r.density, r.n, r.m, r.time_fgt_ms, r.time_brute_ms, r.max_abs_err
        );
    }
    println!("wrote {}", cfg.output.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), (u8, String)> {
    let fail = |e: Error| (exit_code(&e), e.to_string());
    match cli.command {
        Command::Plan(args) => plan(&args),
        Command::FgtBench { config, output } => fgt_bench(&config, output).map_err(fail),
        Command::Verify { seed, flip_c_sign, flip_armijo_sign } => {
            let results = verify::run(&VerifyOptions { seed, flip_c_sign, flip_armijo_sign });
            print!("{}", verify::report(&results));
            let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name).collect();
            if failed.is_empty() {
                Ok(())
            } else {
                Err((EXIT_VERIFY, format!("failed checks: {}", failed.join(", "))))
            }
        }
    }
}

fn threads_from_env() -> Option<usize> {
    let v = std::env::var("KIGRASP_THREADS").ok()?;
    match v.trim().parse::<usize>() {
        Ok(n) if n > 0 => Some(n),
        _ => {
            eprintln!("warning: ignoring KIGRASP_THREADS={v:?} (expected a positive integer)");
            None
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(EXIT_PARSE);
        }
    };
    let outcome = match threads_from_env() {
        Some(n) => par::with_threads(n, || run(cli)),
        None => run(cli),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
