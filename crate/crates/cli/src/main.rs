use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use rdgen_core::bounds::{self, BoundInput, BoundReport, CmiMode, EpsStrategy, ExpectVariant, VcWhich};
use rdgen_core::covering_sim::{self, BlockTailConfig, CoverConfig};
use rdgen_core::harness::{enumerate_joint, FiniteProblem};
use rdgen_core::infocore::{self, JointTable, ProbVec, RealDist};
use rdgen_core::rd_solver::{self, BaOptions, Constraint, DistortionMatrix, Family, MartonMethod};
use rdgen_core::suite::{self, SuiteConfig};
use rdgen_core::RdError;

mod output;
use output::{emit, flat_csv, json_doc, num, quote, write_atomic, Format};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] RdError),
    /// A bound fell below the exact quantity it claims to dominate.
    #[error("CRITICAL: {0}")]
    Critical(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Critical(_) => 3,
            CliError::Io { .. } => 1,
            CliError::Core(RdError::Convergence { .. }) => 1,
            _ => 2,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Parser)]
#[command(name = "rdgen", version, about = "Rate-distortion generalization bounds on finite alphabets")]
struct Cli {
    /// Output file (suite: output directory). Defaults to stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for stochastic commands; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Cap on worker threads.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Information measures.
    #[command(subcommand)]
    Info(InfoCmd),
    /// Rate-distortion solves.
    #[command(subcommand)]
    Rd(RdCmd),
    /// Generalization bounds.
    #[command(subcommand)]
    Bound(BoundCmd),
    /// Covering simulation and identity checks.
    #[command(subcommand)]
    Sim(SimCmd),
    /// Ground truth against every expectation bound.
    #[command(subcommand)]
    Exp(ExpCmd),
    /// The acceptance suite.
    #[command(subcommand)]
    Suite(SuiteCmd),
}

#[derive(Args)]
struct ConfigArg {
    #[arg(long)]
    config: PathBuf,
}

#[derive(Subcommand)]
enum InfoCmd {
    /// Entropy of a ProbVec file, or of inline weights.
    Entropy {
        #[arg(long, conflicts_with = "weights")]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        weights: Option<Vec<f64>>,
    },
    /// KL divergence D(q || p); config `{"q": ProbVec, "p": ProbVec}`.
    Kl(ConfigArg),
    /// Mutual information of a JointTable.
    Mi(ConfigArg),
}

#[derive(Subcommand)]
enum RdCmd {
    Solve {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        dist: PathBuf,
        #[arg(long, allow_negative_numbers = true)]
        epsilon: f64,
        /// Solve under lo <= E d <= epsilon instead.
        #[arg(long, allow_negative_numbers = true)]
        lower: Option<f64>,
    },
    Curve {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        dist: PathBuf,
        #[arg(long, default_value_t = 20)]
        points: usize,
        #[arg(long, allow_negative_numbers = true)]
        eps_min: f64,
        #[arg(long, allow_negative_numbers = true)]
        eps_max: f64,
    },
    Dim {
        #[arg(long, value_enum, default_value = "gaussian-sq")]
        family: FamilyArg,
        #[arg(long, default_value_t = 1.0)]
        d: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma2: f64,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        /// Distortion levels, strictly decreasing. Default: 41 log-spaced from 1e-2 to 1e-6.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
    },
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum FamilyArg {
    GaussianSq,
    BernoulliHamming,
    LaplaceL1,
}

#[derive(Subcommand)]
enum BoundCmd {
    Expect(ConfigArg),
    Tail(ConfigArg),
    Vc(ConfigArg),
    Cmi(ConfigArg),
    Example(ConfigArg),
}

#[derive(Args)]
struct SimArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the trial count in the config.
    #[arg(long)]
    trials: Option<usize>,
}

#[derive(Subcommand)]
enum SimCmd {
    Cover(SimArgs),
    Blocktail(SimArgs),
    Dv(SimArgs),
    Vartail(SimArgs),
}

#[derive(Subcommand)]
enum ExpCmd {
    Run(ConfigArg),
}

#[derive(Subcommand)]
enum SuiteCmd {
    Run {
        /// Criteria to run, e.g. `1,2,5`. Default: all.
        #[arg(long, value_delimiter = ',')]
        criteria: Option<Vec<usize>>,
    },
}

fn default_eps() -> EpsStrategy {
    EpsStrategy::Minimize
}

fn default_variant() -> ExpectVariant {
    ExpectVariant::TwoSided
}

#[derive(Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
enum ExpectConfig {
    /// Exact rate-distortion bound of an enumerable problem.
    Problem {
        problem: FiniteProblem,
        #[serde(default = "default_variant")]
        variant: ExpectVariant,
        #[serde(default = "default_eps")]
        eps: EpsStrategy,
    },
    Lossless {
        problem: FiniteProblem,
    },
    /// Plug a known rate into the square-root formula.
    Rate {
        rate: f64,
        input: BoundInput,
        #[serde(default)]
        abs: bool,
    },
    Lipschitz {
        hypotheses: bounds::LipschitzSource,
        lipschitz: f64,
        input: BoundInput,
        #[serde(default = "default_eps")]
        eps: EpsStrategy,
    },
    GaussianMean {
        d: f64,
        sigma0_sq: f64,
        lipschitz: f64,
        input: BoundInput,
        #[serde(default = "default_eps")]
        eps: EpsStrategy,
    },
    Dimension {
        dim: f64,
        lipschitz: f64,
        input: BoundInput,
    },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TailConfig {
    input: BoundInput,
    /// A known value of the KL-ball supremum.
    #[serde(default)]
    rp: Option<f64>,
    /// Or a problem whose supremum is computed.
    #[serde(default)]
    problem: Option<FiniteProblem>,
    #[serde(default)]
    method: MartonMethod,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct VcConfig {
    d: f64,
    n: f64,
    #[serde(default = "default_delta")]
    delta: f64,
    which: VcWhich,
}

fn default_delta() -> f64 {
    0.05
}

fn default_mode() -> CmiMode {
    CmiMode::FullK
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CmiConfig {
    #[serde(default)]
    problem: Option<FiniteProblem>,
    #[serde(default)]
    context: Option<bounds::SupersampleContext>,
    #[serde(default = "default_mode")]
    mode: CmiMode,
    #[serde(default = "default_eps")]
    eps: EpsStrategy,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ExampleConfig {
    example: bounds::AnalyticExample,
    input: BoundInput,
    #[serde(default = "default_eps")]
    eps: EpsStrategy,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct KlConfig {
    q: ProbVec,
    p: ProbVec,
}

fn default_shift_points() -> usize {
    21
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DvConfig {
    p: ProbVec,
    q: ProbVec,
    phi: Vec<f64>,
    #[serde(default = "default_shift_points")]
    shift_points: usize,
}

fn default_resolution() -> usize {
    20
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct VartailConfig {
    mu: RealDist,
    #[serde(rename = "Delta")]
    big_delta: f64,
    epsilon: f64,
    #[serde(default = "default_resolution")]
    resolution: usize,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Problems {
    One(FiniteProblem),
    Many(Vec<FiniteProblem>),
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })
}

struct Ctx {
    out: Option<PathBuf>,
    seed: Option<u64>,
    format: Option<Format>,
}

impl Ctx {
    /// Explicit `--format`, else the `--out` extension, else the command default.
    fn format(&self, default: Format) -> Format {
        if let Some(f) = self.format {
            return f;
        }
        match self.out.as_ref().and_then(|p| p.extension()).and_then(|e| e.to_str()) {
            Some("csv") => Format::Csv,
            Some("json") => Format::Json,
            _ => default,
        }
    }

    fn write(&self, contents: &str) -> Result<()> {
        emit(self.out.as_deref(), contents)
    }

    /// JSON document, or the flattened key/value CSV.
    fn write_value<T: Serialize>(&self, command: &str, seed: Option<u64>, v: &T) -> Result<()> {
        match self.format(Format::Json) {
            Format::Json => self.write(&json_doc(command, seed, v)),
            Format::Csv => self.write(&flat_csv(v)),
        }
    }

    fn write_bound(&self, command: &str, rep: &BoundReport) -> Result<()> {
        match self.format(Format::Json) {
            Format::Json => self.write(&json_doc(command, None, rep)),
            Format::Csv => {
                let mut s = String::from("quantity,value,unit\n");
                let _ = writeln!(s, "{},{},loss", quote(&rep.kind), num(rep.value));
                for (k, q) in &rep.intermediates {
                    let _ = writeln!(s, "{},{},{}", quote(k), num(q.value), quote(&q.unit));
                }
                self.write(&s)
            }
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(w) = cli.workers {
        rdgen_core::par::set_workers(w);
    }
    let ctx = Ctx {
        out: cli.out,
        seed: cli.seed,
        format: cli.format,
    };
    let opts = BaOptions::default();
    match cli.cmd {
        Command::Info(c) => info(&ctx, c),
        Command::Rd(c) => rd(&ctx, c, &opts),
        Command::Bound(c) => bound(&ctx, c, &opts),
        Command::Sim(c) => sim(&ctx, c, &opts),
        Command::Exp(ExpCmd::Run(a)) => exp_run(&ctx, &a.config, &opts),
        Command::Suite(SuiteCmd::Run { criteria }) => suite_run(&ctx, criteria),
    }
}

#[derive(Serialize)]
struct Scalar {
    value: f64,
    unit: &'static str,
}

fn nats(value: f64) -> Scalar {
    Scalar { value, unit: "nats" }
}

fn info(ctx: &Ctx, c: InfoCmd) -> Result<()> {
    match c {
        InfoCmd::Entropy { config, weights } => {
            let p: ProbVec = match (config, weights) {
                (Some(path), _) => read_json(&path)?,
                (None, Some(w)) => ProbVec::from_weights(w)?,
                (None, None) => return Err(CliError::Config("give --config or --weights".into())),
            };
            ctx.write_value("info entropy", None, &nats(infocore::entropy(&p)))
        }
        InfoCmd::Kl(a) => {
            let cfg: KlConfig = read_json(&a.config)?;
            let q = cfg.q.aligned_to(&cfg.p)?;
            ctx.write_value("info kl", None, &nats(infocore::kl_divergence(&q, &cfg.p)?))
        }
        InfoCmd::Mi(a) => {
            let j: JointTable = read_json(&a.config)?;
            ctx.write_value("info mi", None, &nats(infocore::mutual_information(&j)))
        }
    }
}

fn rd(ctx: &Ctx, c: RdCmd, opts: &BaOptions) -> Result<()> {
    match c {
        RdCmd::Solve {
            source,
            dist,
            epsilon,
            lower,
        } => {
            let p: ProbVec = read_json(&source)?;
            let d: DistortionMatrix = read_json(&dist)?;
            let constraint = match lower {
                Some(lo) => Constraint::Interval { lo, hi: epsilon },
                None => Constraint::Upper { epsilon },
            };
            let pt = rd_solver::rd_at_distortion(&p, &d, constraint, opts)?;
            match ctx.format(Format::Json) {
                Format::Json => ctx.write(&json_doc("rd solve", None, &pt)),
                Format::Csv => ctx.write(&curve_csv(std::slice::from_ref(&pt))),
            }
        }
        RdCmd::Curve {
            source,
            dist,
            points,
            eps_min,
            eps_max,
        } => {
            if points < 2 || eps_max.partial_cmp(&eps_min) != Some(std::cmp::Ordering::Greater) {
                return Err(CliError::Config("need --points >= 2 and --eps-max > --eps-min".into()));
            }
            let p: ProbVec = read_json(&source)?;
            let d: DistortionMatrix = read_json(&dist)?;
            let levels: Vec<f64> = (0..points)
                .map(|i| eps_min + (eps_max - eps_min) * i as f64 / (points - 1) as f64)
                .collect();
            let curve = rd_solver::rd_curve(&p, &d, &levels, opts)?;
            match ctx.format(Format::Csv) {
                Format::Json => ctx.write(&json_doc("rd curve", None, &curve)),
                Format::Csv => ctx.write(&curve_csv(&curve.points)),
            }
        }
        RdCmd::Dim {
            family,
            d,
            sigma2,
            lambda,
            grid,
        } => {
            let fam = match family {
                FamilyArg::GaussianSq => Family::GaussianSq { d, sigma2 },
                FamilyArg::BernoulliHamming => Family::BernoulliHamming { d },
                FamilyArg::LaplaceL1 => Family::LaplaceL1 { d, lambda },
            };
            let grid = grid.unwrap_or_else(|| rd_solver::log_grid_desc(1e-2, 1e-6, 41));
            let est = rd_solver::rd_dimension_estimate(|e| rd_solver::closed_form_rd(fam, e), &grid)?;
            match ctx.format(Format::Json) {
                Format::Json => ctx.write(&json_doc("rd dim", None, &est)),
                Format::Csv => {
                    let mut s = String::from("epsilon,rate\n");
                    for (e, r) in est.eps_grid.iter().zip(&est.rates) {
                        let _ = writeln!(s, "{},{}", num(*e), num(*r));
                    }
                    ctx.write(&s)
                }
            }
        }
    }
}

fn curve_csv(points: &[rd_solver::RdPoint]) -> String {
    let mut s = String::from("epsilon,rate,slope\n");
    for pt in points {
        let slope = pt.slope.map(num).unwrap_or_default();
        let _ = writeln!(s, "{},{},{slope}", num(pt.epsilon), num(pt.rate));
    }
    s
}

fn bound(ctx: &Ctx, c: BoundCmd, opts: &BaOptions) -> Result<()> {
    let (name, rep) = match c {
        BoundCmd::Expect(a) => {
            let rep = match read_json::<ExpectConfig>(&a.config)? {
                ExpectConfig::Problem { problem, variant, eps } => {
                    bounds::exact_expectation_bound(&problem, eps, variant, opts)?
                }
                ExpectConfig::Lossless { problem } => bounds::lossless_mi_bound(&problem)?,
                ExpectConfig::Rate { rate, input, abs } => bounds::expectation_bound(rate, input, abs)?,
                ExpectConfig::Lipschitz {
                    hypotheses,
                    lipschitz,
                    input,
                    eps,
                } => bounds::lipschitz_expectation_bound(&hypotheses, lipschitz, input, eps, opts)?,
                ExpectConfig::GaussianMean {
                    d,
                    sigma0_sq,
                    lipschitz,
                    input,
                    eps,
                } => bounds::gaussian_mean_example(d, sigma0_sq, lipschitz, input, eps)?,
                ExpectConfig::Dimension { dim, lipschitz, input } => bounds::dimension_bound(dim, lipschitz, input)?,
            };
            ("bound expect", rep)
        }
        BoundCmd::Tail(a) => {
            let cfg: TailConfig = read_json(&a.config)?;
            let rep = match (cfg.rp, cfg.problem) {
                (Some(rp), None) => bounds::tail_bound(rp, cfg.input, None)?,
                (None, Some(problem)) => {
                    let joint = enumerate_joint(&problem)?;
                    let m = rd_solver::marton_sup(
                        &joint,
                        &problem.gen_table(),
                        cfg.input.epsilon,
                        cfg.input.delta,
                        cfg.method,
                        opts,
                    )?;
                    bounds::tail_bound(m.rate, cfg.input, Some(&m))?
                }
                _ => return Err(CliError::Config("tail config needs exactly one of `rp` and `problem`".into())),
            };
            ("bound tail", rep)
        }
        BoundCmd::Vc(a) => {
            let cfg: VcConfig = read_json(&a.config)?;
            ("bound vc", bounds::vc_bounds(cfg.d, cfg.n, cfg.delta, cfg.which)?)
        }
        BoundCmd::Cmi(a) => {
            let cfg: CmiConfig = read_json(&a.config)?;
            let rep = match (cfg.problem, cfg.context) {
                (Some(p), None) => bounds::expected_cmi_bound(&p, cfg.eps, cfg.mode, opts)?,
                (None, Some(ctx)) => bounds::cmi_bound(&ctx, cfg.eps, cfg.mode, opts)?,
                _ => return Err(CliError::Config("cmi config needs exactly one of `problem` and `context`".into())),
            };
            ("bound cmi", rep)
        }
        BoundCmd::Example(a) => {
            let cfg: ExampleConfig = read_json(&a.config)?;
            ("bound example", bounds::analytic_example_bound(cfg.example, cfg.input, cfg.eps)?)
        }
    };
    ctx.write_bound(name, &rep)
}

fn sim(ctx: &Ctx, c: SimCmd, opts: &BaOptions) -> Result<()> {
    match c {
        SimCmd::Cover(a) => {
            let mut cfg: CoverConfig = read_json(&a.config)?;
            if let Some(t) = a.trials {
                cfg.trials = t;
            }
            if let Some(s) = ctx.seed {
                cfg.seed = s;
            }
            let res = covering_sim::simulate_covering(&cfg, opts)?;
            match ctx.format(Format::Csv) {
                Format::Json => ctx.write(&json_doc("sim cover", Some(cfg.seed), &res)),
                Format::Csv => ctx.write(&suite::sim_csv(&res)),
            }
        }
        SimCmd::Blocktail(a) => {
            let mut cfg: BlockTailConfig = read_json(&a.config)?;
            if let Some(t) = a.trials {
                cfg.trials = t;
            }
            if let Some(s) = ctx.seed {
                cfg.seed = s;
            }
            let rep = covering_sim::verify_block_tail(&cfg)?;
            ctx.write_value("sim blocktail", Some(cfg.seed), &rep)
        }
        SimCmd::Dv(a) => {
            let cfg: DvConfig = read_json(&a.config)?;
            let rep = covering_sim::dv_check(&cfg.p, &cfg.q, &cfg.phi, cfg.shift_points)?;
            ctx.write_value("sim dv", None, &rep)
        }
        SimCmd::Vartail(a) => {
            let cfg: VartailConfig = read_json(&a.config)?;
            let rep = covering_sim::variational_tail_check(&cfg.mu, cfg.big_delta, cfg.epsilon, cfg.resolution)?;
            ctx.write_value("sim vartail", None, &rep)
        }
    }
}

fn exp_run(ctx: &Ctx, config: &Path, opts: &BaOptions) -> Result<()> {
    let problems = match read_json::<Problems>(config)? {
        Problems::One(p) => vec![p],
        Problems::Many(v) => v,
    };
    let reports = problems
        .iter()
        .map(|p| suite::compare_report(p, opts))
        .collect::<rdgen_core::Result<Vec<_>>>()?;
    match ctx.format(Format::Json) {
        Format::Json => ctx.write(&json_doc("exp run", None, &reports))?,
        Format::Csv => {
            let mut s = String::from(
                "problem,exact_mean_gen,exact_mean_abs_gen,lossless_mi,exact_two_sided,exact_one_sided,exact_abs,per_sample,cmi,violations\n",
            );
            for r in &reports {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{},{},{},{}",
                    quote(r.name.as_deref().unwrap_or("")),
                    num(r.exact_mean_gen),
                    num(r.exact_mean_abs_gen),
                    num(r.lossless_mi),
                    num(r.exact_two_sided),
                    num(r.exact_one_sided),
                    num(r.exact_abs),
                    num(r.per_sample),
                    num(r.cmi),
                    quote(&r.violations.join("; ")),
                );
            }
            ctx.write(&s)?;
        }
    }
    let bad: Vec<String> = reports
        .iter()
        .flat_map(|r| {
            let name = r.name.clone().unwrap_or_default();
            r.violations.iter().map(move |v| format!("{name}: {v}"))
        })
        .collect();
    if bad.is_empty() {
        Ok(())
    } else {
        Err(CliError::Critical(bad.join("; ")))
    }
}

fn suite_run(ctx: &Ctx, criteria: Option<Vec<usize>>) -> Result<()> {
    let cfg = SuiteConfig {
        seed: ctx.seed.unwrap_or(SuiteConfig::default().seed),
    };
    let ids = criteria.unwrap_or_else(|| (1..=suite::CRITERIA).collect());
    if let Some(bad) = ids.iter().find(|i| !(1..=suite::CRITERIA).contains(*i)) {
        return Err(CliError::Config(format!("no criterion {bad}")));
    }
    let dir = ctx.out.clone().unwrap_or_else(|| PathBuf::from("suite_out"));
    let mut results = Vec::new();
    for id in ids {
        let r = suite::run_criterion(id, &cfg)?;
        println!("{}", r.line());
        results.push(r);
    }
    let mut summary = String::from("id,title,pass,summary\n");
    for r in &results {
        let _ = writeln!(summary, "{},{},{},{}", r.id, quote(&r.title), r.pass, quote(&r.summary));
        for (name, csv) in &r.tables {
            write_atomic(&dir.join(name), csv)?;
        }
    }
    write_atomic(&dir.join("suite_summary.csv"), &summary)?;
    write_atomic(&dir.join("suite_report.json"), &suite::report_json(&results, &cfg))?;
    let passed = results.iter().filter(|r| r.pass).count();
    println!("{passed}/{} criteria passed; artifacts in {}", results.len(), dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("rdgen: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
