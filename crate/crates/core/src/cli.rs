//! Command-line front end.
//!
//! Every command writes `manifest.json` into its output directory; the
//! manifest holds the fully resolved command and can be replayed with
//! `rerun --manifest`.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::cert::{self, CertOptions, Fault};
use crate::error::{Error, Result};
use crate::fov;
use crate::gmres::{self, run_gmres};
use crate::linop::{read_matrix_market, read_vector, write_matrix_market, write_vector, CVector, Operator};
use crate::mb::{self, MbOptions};
use crate::par;
use crate::probgen::{self, Family, FamilyParams, ProblemSpec};
use crate::report::{self, num};
use crate::suite::{self, SuiteConfig};

pub const TOOL: &str = "gmres-cert";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
    #[default]
    Both,
}

impl Format {
    fn csv(self) -> bool {
        self != Format::Json
    }
    fn json(self) -> bool {
        self != Format::Csv
    }
}

#[derive(Debug, Parser)]
#[command(name = TOOL, version, about = "Certify GMRES convergence bounds for A = B + C")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Debug, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "command")]
pub enum Command {
    /// Generate a problem (B.mtx, C.mtx, spec.json).
    Gen(GenArgs),
    /// Run instrumented GMRES on A x = b.
    Solve(SolveArgs),
    /// Compute the linear reduction factor of B.
    Mb(MbArgs),
    /// Sample the numerical range of a matrix.
    Fov(FovArgs),
    /// Certify all convergence bounds for A = B + C.
    Certify(CertifyArgs),
    /// Check the eigenvalue accumulation inequality for A = B + C.
    Hansmann(HansmannArgs),
    /// Run the full certification battery.
    Suite(SuiteArgs),
    /// Replay a run from its manifest.json.
    Rerun(RerunArgs),
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct Common {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Both)]
    pub format: Format,
    /// Worker threads (1 forces the sequential path).
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct GenArgs {
    #[arg(long, value_enum)]
    pub family: Family,
    /// Dimension (2n+1 for unitary_arctangent; ignored for custom_file).
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 2.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.1)]
    pub gamma: f64,
    /// Shift of B = lambda I as RE,IM.
    #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [2.0, 0.0])]
    pub shift: Vec<f64>,
    #[arg(long, default_value_t = 0.3)]
    pub spread: f64,
    #[arg(long, default_value_t = 1.0)]
    pub peclet: f64,
    /// B for the custom_file family.
    #[arg(long = "B")]
    pub b_path: Option<PathBuf>,
    /// C for the custom_file family (zero if absent).
    #[arg(long = "C")]
    pub c_path: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct SolveArgs {
    #[arg(long = "A")]
    pub a: PathBuf,
    /// Right-hand side; a seeded random unit vector if absent.
    #[arg(long = "b")]
    pub b: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Maximum number of steps (default: dimension).
    #[arg(long)]
    pub kmax: Option<usize>,
    #[arg(long, default_value_t = gmres::DEFAULT_RTOL)]
    pub rtol: f64,
    /// Include the Krylov bases in trace.json.
    #[arg(long)]
    pub bases: bool,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct MbArgs {
    #[arg(long)]
    pub matrix: PathBuf,
    #[arg(long, default_value_t = mb::DEFAULT_TOL)]
    pub tol: f64,
    #[arg(long, default_value_t = mb::DEFAULT_TRIALS)]
    pub trials: usize,
    #[arg(long, default_value_t = mb::DEFAULT_STEPS)]
    pub steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = fov::DEFAULT_ANGLES)]
    pub angles: usize,
    #[arg(long, default_value_t = mb::DEFAULT_MAX_EVALS)]
    pub max_evals: usize,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct FovArgs {
    #[arg(long)]
    pub matrix: PathBuf,
    #[arg(long, default_value_t = fov::DEFAULT_ANGLES)]
    pub angles: usize,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct CertifyArgs {
    #[arg(long = "B")]
    pub b: PathBuf,
    #[arg(long = "C")]
    pub c: PathBuf,
    /// Initial residual; a seeded random unit vector if absent.
    #[arg(long)]
    pub r0: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 2.0)]
    pub p: f64,
    /// Maximum number of steps (default: dimension).
    #[arg(long)]
    pub kmax: Option<usize>,
    #[arg(long, default_value_t = mb::DEFAULT_TOL)]
    pub tol: f64,
    #[arg(long, default_value_t = fov::DEFAULT_ANGLES)]
    pub angles: usize,
    /// Deliberately corrupt a bound (self-test of the violation path).
    #[arg(long, value_enum, hide = true)]
    pub inject_fault: Option<Fault>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct HansmannArgs {
    #[arg(long = "B")]
    pub b: PathBuf,
    #[arg(long = "C")]
    pub c: PathBuf,
    #[arg(long, default_value_t = 2.0)]
    pub p: f64,
    #[arg(long, default_value_t = fov::DEFAULT_ANGLES)]
    pub angles: usize,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct SuiteArgs {
    /// Comma-separated family list (default: all four generated families).
    #[arg(long, value_enum, value_delimiter = ',')]
    pub families: Vec<Family>,
    #[arg(long, default_value_t = suite::DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long, value_enum, hide = true)]
    pub inject_fault: Option<Fault>,
    /// Report each problem on stderr as it finishes.
    #[arg(long)]
    pub verbose: bool,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct RerunArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Write to this directory instead of the one recorded in the manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config: Command,
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

fn positive(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("--{name} must be positive, got {x}")))
    }
}

fn angles_ok(m: usize) -> Result<()> {
    if m < fov::MIN_ANGLES {
        return Err(invalid(format!("--angles must be at least {}, got {m}", fov::MIN_ANGLES)));
    }
    Ok(())
}

impl Command {
    fn common(&self) -> Option<&Common> {
        match self {
            Command::Gen(a) => Some(&a.common),
            Command::Solve(a) => Some(&a.common),
            Command::Mb(a) => Some(&a.common),
            Command::Fov(a) => Some(&a.common),
            Command::Certify(a) => Some(&a.common),
            Command::Hansmann(a) => Some(&a.common),
            Command::Suite(a) => Some(&a.common),
            Command::Rerun(_) => None,
        }
    }

    fn common_mut(&mut self) -> Option<&mut Common> {
        match self {
            Command::Gen(a) => Some(&mut a.common),
            Command::Solve(a) => Some(&mut a.common),
            Command::Mb(a) => Some(&mut a.common),
            Command::Fov(a) => Some(&mut a.common),
            Command::Certify(a) => Some(&mut a.common),
            Command::Hansmann(a) => Some(&mut a.common),
            Command::Suite(a) => Some(&mut a.common),
            Command::Rerun(_) => None,
        }
    }

    /// Flag checks that need no file access or computation.
    pub fn validate(&self) -> Result<()> {
        if let Some(c) = self.common() {
            if c.jobs == Some(0) {
                return Err(invalid("--jobs must be at least 1"));
            }
        }
        match self {
            Command::Gen(a) => {
                if a.family == Family::CustomFile {
                    if a.b_path.is_none() {
                        return Err(invalid("custom_file needs --B"));
                    }
                } else if a.dim.is_none() {
                    return Err(invalid("--dim is required"));
                }
                if a.shift.len() != 2 {
                    return Err(invalid("--shift takes RE,IM"));
                }
                if a.family == Family::ShiftedIdentityPlusCompact && a.shift == [0.0, 0.0] {
                    return Err(invalid("--shift must be nonzero"));
                }
                if a.family != Family::CustomFile {
                    positive("alpha", a.alpha)?;
                }
                if !(a.gamma >= 0.0) || !(a.spread >= 0.0) || !a.peclet.is_finite() {
                    return Err(invalid("--gamma and --spread must be nonnegative, --peclet finite"));
                }
            }
            Command::Solve(a) => {
                if !(a.rtol >= 0.0) {
                    return Err(invalid(format!("--rtol must be nonnegative, got {}", a.rtol)));
                }
                if a.kmax == Some(0) {
                    return Err(invalid("--kmax must be at least 1"));
                }
            }
            Command::Mb(a) => {
                positive("tol", a.tol)?;
                angles_ok(a.angles)?;
                if a.trials == 0 || a.steps == 0 || a.max_evals == 0 {
                    return Err(invalid("--trials, --steps and --max-evals must be at least 1"));
                }
            }
            Command::Fov(a) => angles_ok(a.angles)?,
            Command::Certify(a) => {
                positive("p", a.p)?;
                positive("tol", a.tol)?;
                angles_ok(a.angles)?;
                if a.kmax == Some(0) {
                    return Err(invalid("--kmax must be at least 1"));
                }
            }
            Command::Hansmann(a) => {
                if !(a.p > 1.0) || !a.p.is_finite() {
                    return Err(Error::InvalidP(a.p));
                }
                angles_ok(a.angles)?;
            }
            Command::Suite(a) => {
                if a.families.contains(&Family::CustomFile) {
                    return Err(invalid("custom_file is not a suite family"));
                }
            }
            Command::Rerun(_) => {}
        }
        Ok(())
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn prepare(common: &Common, cmd: &Command) -> Result<PathBuf> {
    let dir = common.out.clone();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let manifest = Manifest {
        tool: TOOL.into(),
        version: VERSION.into(),
        config: cmd.clone(),
    };
    report::write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(dir)
}

fn start_vector(path: &Option<PathBuf>, seed: u64, n: usize) -> Result<CVector> {
    match path {
        Some(p) => {
            let v = read_vector(p)?;
            if v.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: v.len(),
                });
            }
            Ok(v)
        }
        None => Ok(probgen::random_unit_vector(n, &mut probgen::rng(seed))),
    }
}

fn kmax_for(kmax: Option<usize>, n: usize) -> Result<usize> {
    match kmax {
        Some(k) if k > n => Err(invalid(format!("--kmax {k} exceeds dimension {n}"))),
        Some(k) => Ok(k),
        None => Ok(n),
    }
}

fn key_value_csv(rows: &[(&str, String)]) -> String {
    let rows: Vec<Vec<String>> = rows.iter().map(|(k, v)| vec![k.to_string(), v.clone()]).collect();
    report::csv_string(&["quantity", "value"], &rows)
}

/// Execute a parsed command.
pub fn execute(cmd: &Command) -> Result<()> {
    cmd.validate()?;
    let jobs = cmd.common().and_then(|c| c.jobs);
    par::with_jobs(jobs, || dispatch(cmd))
}

fn dispatch(cmd: &Command) -> Result<()> {
    match cmd {
        Command::Gen(a) => gen(a, cmd),
        Command::Solve(a) => solve(a, cmd),
        Command::Mb(a) => run_mb(a, cmd),
        Command::Fov(a) => run_fov(a, cmd),
        Command::Certify(a) => certify(a, cmd),
        Command::Hansmann(a) => hansmann(a, cmd),
        Command::Suite(a) => run_suite(a, cmd),
        Command::Rerun(a) => rerun(a),
    }
}

fn gen(a: &GenArgs, cmd: &Command) -> Result<()> {
    let params = FamilyParams {
        alpha: a.alpha,
        gamma: a.gamma,
        shift: [a.shift[0], a.shift[1]],
        spread: a.spread,
        peclet: a.peclet,
        b_path: a.b_path.clone(),
        c_path: a.c_path.clone(),
    };
    let dim = match (a.family, a.dim) {
        (Family::CustomFile, _) => read_matrix_market(a.b_path.as_ref().expect("validated"))?.dim(),
        (_, Some(d)) => d,
        (_, None) => unreachable!("validated"),
    };
    let spec = ProblemSpec::new(a.family, dim, params, a.seed);
    let problem = probgen::generate(&spec)?;
    let dir = prepare(&a.common, cmd)?;
    write_matrix_market(&problem.b, dir.join("B.mtx"))?;
    write_matrix_market(&problem.c, dir.join("C.mtx"))?;
    #[derive(Serialize)]
    struct SpecFile<'a> {
        id: &'a str,
        spec: &'a ProblemSpec,
        gamma_used: f64,
    }
    report::write_json(
        &dir.join("spec.json"),
        &SpecFile {
            id: &problem.id,
            spec: &spec,
            gamma_used: problem.gamma_used,
        },
    )?;
    println!("{} dim={} -> {}", problem.id, dim, dir.display());
    Ok(())
}

fn solve(a: &SolveArgs, cmd: &Command) -> Result<()> {
    let op = read_matrix_market(&a.a)?;
    let n = op.dim();
    let rhs = start_vector(&a.b, a.seed, n)?;
    let kmax = kmax_for(a.kmax, n)?;
    let trace = run_gmres(&op, &rhs, &CVector::zeros(n), kmax, a.rtol)?;
    let dir = prepare(&a.common, cmd)?;
    if a.common.format.csv() {
        write_text(&dir.join("trace.csv"), &trace.to_csv())?;
    }
    if a.common.format.json() {
        report::write_json(&dir.join("trace.json"), &trace.report(a.bases))?;
    }
    write_vector(&trace.solution, dir.join("x.mtx"))?;
    let rel = trace.relative_residuals();
    println!(
        "steps={} stop={:?} rel_residual={:.6e} true_residual={:.6e}",
        trace.steps(),
        trace.stop,
        rel.last().copied().unwrap_or(0.0),
        trace.true_residual
    );
    Ok(())
}

fn run_mb(a: &MbArgs, cmd: &Command) -> Result<()> {
    let b = read_matrix_market(&a.matrix)?;
    let opts = MbOptions {
        tol: a.tol,
        max_evals: a.max_evals,
        angles: a.angles,
        trials: a.trials,
        steps: a.steps,
        seed: a.seed,
    };
    let analysis = mb::analyze(&b, &opts)?;
    let rep = &analysis.report;
    let check = mb::minimizer_check(rep, &analysis.pair.fov_b, &analysis.pair.fov_binv);
    let dir = prepare(&a.common, cmd)?;
    if a.common.format.json() {
        #[derive(Serialize)]
        struct Out<'a> {
            report: &'a mb::ReductionReport,
            minimizer_check: &'a mb::MinimizerCheck,
        }
        report::write_json(
            &dir.join("mb.json"),
            &Out {
                report: rep,
                minimizer_check: &check,
            },
        )?;
    }
    if a.common.format.csv() {
        let rows = [
            ("m_b", num(rep.m_b)),
            ("lambda_b_re", num(rep.lambda_b.re)),
            ("lambda_b_im", num(rep.lambda_b.im)),
            ("m_b_dual", num(rep.m_b_dual)),
            ("lambda_binv_re", num(rep.lambda_binv.re)),
            ("lambda_binv_im", num(rep.lambda_binv.im)),
            ("starke_bound", num(rep.starke_bound)),
            ("elman_bound", num(rep.elman_bound)),
            ("empirical_lower", num(rep.empirical_lower)),
            ("nu_b", num(rep.nu_b)),
            ("nu_binv", num(rep.nu_binv)),
            ("norm_b", num(rep.norm_b)),
            ("eval_count", rep.eval_count.to_string()),
        ];
        write_text(&dir.join("mb.csv"), &key_value_csv(&rows))?;
    }
    print!("{}", rep.table());
    if !check.passed {
        return Err(Error::BoundViolation(format!("minimizer localization failed: {check:?}")));
    }
    Ok(())
}

fn run_fov(a: &FovArgs, cmd: &Command) -> Result<()> {
    let b = read_matrix_market(&a.matrix)?;
    let model = fov::build_fov(&b, a.angles)?;
    let dir = prepare(&a.common, cmd)?;
    if a.common.format.csv() {
        write_text(&dir.join("fov.csv"), &model.boundary_csv())?;
    }
    if a.common.format.json() {
        report::write_json(&dir.join("fov.json"), &model.summary())?;
    }
    println!(
        "nu={:.12} zero_in_closure={} margin={:.6e}",
        model.nu, model.zero_in_closure, model.margin
    );
    Ok(())
}

fn read_pair(b: &Path, c: &Path) -> Result<(Operator, Operator)> {
    let b = read_matrix_market(b)?;
    let c = read_matrix_market(c)?;
    if b.dim() != c.dim() {
        return Err(Error::DimensionMismatch {
            expected: b.dim(),
            got: c.dim(),
        });
    }
    Ok((b, c))
}

fn certify(a: &CertifyArgs, cmd: &Command) -> Result<()> {
    let (b, c) = read_pair(&a.b, &a.c)?;
    let n = b.dim();
    let r0 = start_vector(&a.r0, a.seed, n)?;
    let kmax = kmax_for(a.kmax, n)?;
    let opts = CertOptions {
        problem_id: a.b.file_stem().map_or("problem".into(), |s| s.to_string_lossy().into_owned()),
        mb: MbOptions {
            tol: a.tol,
            angles: a.angles,
            seed: a.seed,
            ..MbOptions::default()
        },
        fault: a.inject_fault,
    };
    let run = cert::certify_with(&b, &c, &r0, a.p, kmax, &opts)?;
    let certificate = &run.certificate;
    let dir = prepare(&a.common, cmd)?;
    if a.common.format.csv() {
        write_text(&dir.join("certificate.csv"), &certificate.to_csv())?;
    }
    if a.common.format.json() {
        report::write_json(&dir.join("certificate.json"), certificate)?;
    }
    let v = &certificate.verdicts;
    println!(
        "steps={} m_b={:.9} thm_margin={:.3e} rate_margin={:.3e} passed={}",
        certificate.steps,
        certificate.inputs.m_b,
        v.thm.worst_margin,
        v.rate.worst_margin,
        certificate.passed()
    );
    if !certificate.passed() {
        return Err(Error::BoundViolation(format!("certificate failed: {v:?}")));
    }
    Ok(())
}

fn hansmann(a: &HansmannArgs, cmd: &Command) -> Result<()> {
    let (b, c) = read_pair(&a.b, &a.c)?;
    let model = fov::build_fov(&b, a.angles)?;
    let h = cert::hansmann_check(&b, &c, a.p, &model)?;
    let dir = prepare(&a.common, cmd)?;
    if a.common.format.json() {
        report::write_json(&dir.join("hansmann.json"), &h)?;
    }
    if a.common.format.csv() {
        let rows = [
            ("p", num(h.p)),
            ("lhs", num(h.lhs)),
            ("rhs", num(h.rhs)),
            ("max_distance", num(h.max_distance)),
            ("eigenvalues", h.eigenvalues.to_string()),
            ("passed", h.passed.to_string()),
        ];
        write_text(&dir.join("hansmann.csv"), &key_value_csv(&rows))?;
    }
    println!("lhs={:.9e} rhs={:.9e} passed={}", h.lhs, h.rhs, h.passed);
    if !h.passed {
        return Err(Error::BoundViolation(format!("lhs {} > rhs {}", h.lhs, h.rhs)));
    }
    Ok(())
}

fn run_suite(a: &SuiteArgs, cmd: &Command) -> Result<()> {
    let families = if a.families.is_empty() {
        Family::SUITE.to_vec()
    } else {
        a.families.clone()
    };
    let config = SuiteConfig {
        families,
        seed: a.seed,
        fault: a.inject_fault,
        verbose: a.verbose,
    };
    let dir = prepare(&a.common, cmd)?;
    let summary = suite::run_suite(&config, Some(&dir))?;
    print!("{}", summary.table());
    if !summary.passed {
        let failed: Vec<&str> = summary
            .criteria
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name.as_str())
            .collect();
        return Err(Error::BoundViolation(format!("suite criteria failed: {}", failed.join(", "))));
    }
    Ok(())
}

fn rerun(a: &RerunArgs) -> Result<()> {
    let text = fs::read_to_string(&a.manifest).map_err(|e| Error::io(&a.manifest, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    let mut cmd = manifest.config;
    if matches!(cmd, Command::Rerun(_)) {
        return Err(invalid("a manifest cannot record a rerun"));
    }
    if let (Some(out), Some(common)) = (&a.out, cmd.common_mut()) {
        common.out = out.clone();
    }
    execute(&cmd)
}

/// Parse `args`, run, report errors on stderr and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    0
                }
                _ => {
                    let msg = e.to_string();
                    let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
                    eprintln!("ERROR 1: {first}");
                    eprint!("{}", e.render());
                    1
                }
            };
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            let code = e.exit_code();
            eprintln!("ERROR {code}: {e}");
            code
        }
    }
}
