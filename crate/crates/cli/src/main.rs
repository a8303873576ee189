//! `heavy-polymer` command-line interface. Every subcommand prints JSON on
//! stdout unless it writes a data file.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use heavy_polymer::continuum::{self, ContinuumVariant, Truncation};
use heavy_polymer::elpp::{self, Cardinality, EntropyKind, SolveParams, WeightWindow};
use heavy_polymer::environment::{self, DisorderField, SlowlyVarying, TailParams};
use heavy_polymer::experiments::{self, ExperimentConfig};
use heavy_polymer::polymer::{self, Centering, PathConstraint, WeightFilter};
use heavy_polymer::regimes::{self, BetaSchedule};
use heavy_polymer::{io, Error, Result};
use serde_json::json;

#[derive(Parser)]
#[command(name = "heavy-polymer", version, about = "Directed polymers in heavy-tailed environments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample, convert or inspect disorder fields
    #[command(subcommand)]
    Field(FieldCmd),
    /// Exact partition functions and chaos terms
    #[command(subcommand)]
    Polymer(PolymerCmd),
    /// Energy-entropy variational problem on a point set
    Elpp(ElppArgs),
    /// Poisson point process samples and continuum problems
    #[command(subcommand)]
    Ppp(PppCmd),
    /// Regime classification and transversal scale
    #[command(subcommand)]
    Regime(RegimeCmd),
    /// Monte Carlo campaigns
    #[command(subcommand)]
    Experiment(ExperimentCmd),
}

#[derive(Args, Clone)]
struct TailArgs {
    #[arg(long)]
    alpha: f64,
    /// constant slowly varying factor L(x) = c
    #[arg(long, conflicts_with = "tail_b")]
    tail_c: Option<f64>,
    /// L(x) = (ln(e + x))^b
    #[arg(long, allow_hyphen_values = true)]
    tail_b: Option<f64>,
}

impl TailArgs {
    fn tail(&self) -> Result<TailParams> {
        let sv = match (self.tail_c, self.tail_b) {
            (_, Some(b)) => SlowlyVarying::LogPower { b },
            (Some(c), None) => SlowlyVarying::Constant { c },
            (None, None) => SlowlyVarying::Constant { c: 1.0 },
        };
        TailParams::new(self.alpha, sv)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FieldFormat {
    Binary,
    Csv,
}

#[derive(Subcommand)]
enum FieldCmd {
    /// Draw weights on [1,n] × [-h,h]
    Sample {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        h: usize,
        #[command(flatten)]
        tail: TailArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = FieldFormat::Binary)]
        format: FieldFormat,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a summary of a field file, or convert it
    Dump {
        path: PathBuf,
        /// write the field as CSV to this path
        #[arg(long)]
        csv: Option<PathBuf>,
        /// list the ℓ heaviest sites
        #[arg(long, default_value_t = 0)]
        top: usize,
    },
}

#[derive(Args)]
struct ConstraintArgs {
    #[arg(long)]
    band: Option<usize>,
    /// max_i |S_i| ≥ lo
    #[arg(long)]
    window_lo: Option<usize>,
    /// max_i |S_i| < hi
    #[arg(long)]
    window_hi: Option<usize>,
    /// keep |β|ω > t
    #[arg(long, conflicts_with = "at_most")]
    above: Option<f64>,
    /// keep |β|ω ≤ t
    #[arg(long)]
    at_most: Option<f64>,
    #[arg(long, value_enum, default_value_t = CenteringArg::None)]
    centering: CenteringArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum CenteringArg {
    None,
    Mean,
    TruncatedMean,
}

impl ConstraintArgs {
    fn constraint(&self, n: usize) -> PathConstraint {
        let mut c = PathConstraint::free();
        if let Some(h) = self.band {
            c = c.with_band(h);
        }
        if self.window_lo.is_some() || self.window_hi.is_some() {
            c = c.with_window(self.window_lo.unwrap_or(0), self.window_hi.unwrap_or(n + 1));
        }
        if let Some(t) = self.above {
            c = c.with_filter(WeightFilter::Above { t });
        }
        if let Some(t) = self.at_most {
            c = c.with_filter(WeightFilter::AtMost { t });
        }
        c.with_centering(match self.centering {
            CenteringArg::None => Centering::None,
            CenteringArg::Mean => Centering::Mean,
            CenteringArg::TruncatedMean => Centering::TruncatedMean,
        })
    }
}

#[derive(Subcommand)]
enum PolymerCmd {
    /// log Z of the constrained polymer
    Logz {
        #[arg(long)]
        field: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        beta: f64,
        #[command(flatten)]
        constraint: ConstraintArgs,
    },
    /// First-order chaos terms of the truncated partition function
    Chaos {
        #[arg(long)]
        field: PathBuf,
        #[arg(long)]
        beta: f64,
        #[arg(long)]
        band: usize,
        /// truncation level k (default m(n^1.5 ln n))
        #[arg(long)]
        truncation: Option<f64>,
    },
    /// Draw one path from the Gibbs measure
    Path {
        #[arg(long)]
        field: PathBuf,
        #[arg(long)]
        beta: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        constraint: ConstraintArgs,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum EntropyArg {
    Quadratic,
    Lipschitz,
}

#[derive(Args)]
struct ElppArgs {
    /// CSV with header t,x,w
    #[arg(long)]
    points: PathBuf,
    #[arg(long)]
    beta: f64,
    #[arg(long, default_value_t = 0.0)]
    kappa: f64,
    #[arg(long, value_enum, default_value_t = EntropyArg::Quadratic)]
    entropy: EntropyArg,
    #[arg(long, conflicts_with = "at_least")]
    exactly: Option<usize>,
    #[arg(long)]
    at_least: Option<usize>,
    /// only the ℓ heaviest points may be used
    #[arg(long, conflicts_with = "beyond")]
    top: Option<usize>,
    /// the ℓ heaviest points carry weight 0
    #[arg(long)]
    beyond: Option<usize>,
    /// also run the exhaustive reference (≤ 20 points)
    #[arg(long)]
    check: bool,
}

#[derive(Subcommand)]
enum PppCmd {
    /// Write a truncated sample as CSV t,x,w
    Sample {
        #[arg(long)]
        alpha: f64,
        #[arg(long, default_value_t = 1.0)]
        q: f64,
        #[arg(long, conflicts_with = "floor")]
        top: Option<usize>,
        #[arg(long)]
        floor: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Continuum functionals of a point set
    Solve {
        #[arg(long)]
        points: PathBuf,
        #[arg(long)]
        beta: f64,
        #[arg(long, default_value_t = 1.0)]
        nu: f64,
    },
    /// Truncated 𝒲₀ samples
    W0 {
        #[arg(long)]
        alpha: f64,
        #[arg(long, default_value_t = 1e-3)]
        eps: f64,
        #[arg(long, default_value_t = 8.0)]
        k: f64,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Subcommand)]
enum RegimeCmd {
    /// Classify β_n = β̂ n^{-γ} (ln n)^κ at size n
    Classify {
        #[command(flatten)]
        tail: TailArgs,
        #[arg(long, allow_hyphen_values = true)]
        gamma: f64,
        #[arg(long, default_value_t = 1.0)]
        beta_hat: f64,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        log_power: f64,
        #[arg(long)]
        n: usize,
    },
    /// Solve β m(n h) = h²/n
    Hn {
        #[command(flatten)]
        tail: TailArgs,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        beta: f64,
    },
}

#[derive(Subcommand)]
enum ExperimentCmd {
    /// Run a campaign; exits 0 iff every hard invariant held
    Run {
        config: PathBuf,
        /// output directory (overrides the config)
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Parse and validate a config without running it
    Check { config: PathBuf },
}

fn read_field(path: &PathBuf) -> Result<DisorderField> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(io::FIELD_MAGIC) {
        io::decode_field_binary(&bytes)
    } else {
        io::decode_field_csv(&bytes)
    }
}

fn print(v: serde_json::Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(&v)?);
    Ok(())
}

fn field_cmd(cmd: FieldCmd) -> Result<()> {
    match cmd {
        FieldCmd::Sample { n, h, tail, seed, format, out } => {
            let field = environment::sample_field(n, h, &tail.tail()?, seed)?;
            match format {
                FieldFormat::Binary => fs::write(&out, io::encode_field_binary(&field))?,
                FieldFormat::Csv => fs::write(&out, io::encode_field_csv(&field))?,
            }
            print(json!({ "n": n, "h": h, "seed": seed, "sites": field.len(), "path": out }))
        }
        FieldCmd::Dump { path, csv, top } => {
            let field = read_field(&path)?;
            if let Some(p) = &csv {
                fs::write(p, io::encode_field_csv(&field))?;
            }
            let max = field.weights().iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let heaviest = if top > 0 {
                environment::ordered_statistics(&field, top.min(field.len()))?.entries
            } else {
                vec![]
            };
            print(json!({
                "n": field.n(),
                "h": field.h(),
                "tail": field.tail(),
                "seed": field.seed(),
                "sites": field.len(),
                "max_weight": max,
                "top": heaviest,
            }))
        }
    }
}

fn polymer_cmd(cmd: PolymerCmd) -> Result<()> {
    match cmd {
        PolymerCmd::Logz { field, beta, constraint } => {
            let f = read_field(&field)?;
            let c = constraint.constraint(f.n());
            let v = polymer::log_partition(&f, beta, &c)?;
            print(json!({ "log_z": v.log_z, "feasible": v.feasible, "constraint": c }))
        }
        PolymerCmd::Chaos { field, beta, band, truncation } => {
            let f = read_field(&field)?;
            let t = polymer::chaos_terms(&f, beta, band, truncation)?;
            print(json!({ "terms": t, "reassembled": t.reassembled() }))
        }
        PolymerCmd::Path { field, beta, seed, constraint } => {
            let f = read_field(&field)?;
            let c = constraint.constraint(f.n());
            let p = polymer::sample_gibbs_path(&f, beta, &c, seed)?;
            print(json!({ "path": p }))
        }
    }
}

fn elpp_cmd(a: ElppArgs) -> Result<()> {
    let pts = io::read_points_csv(fs::File::open(&a.points)?)?;
    let card = match (a.exactly, a.at_least) {
        (Some(k), _) => Cardinality::Exactly(k),
        (None, Some(r)) => Cardinality::AtLeast(r),
        (None, None) => Cardinality::Any,
    };
    let window = match (a.top, a.beyond) {
        (Some(l), _) => WeightWindow::TopL(l),
        (None, Some(l)) => WeightWindow::BeyondL(l),
        (None, None) => WeightWindow::All,
    };
    let params = SolveParams::quadratic(a.beta)
        .with_kappa(a.kappa)
        .with_cardinality(card)
        .with_window(window)
        .with_entropy(match a.entropy {
            EntropyArg::Quadratic => EntropyKind::Quadratic,
            EntropyArg::Lipschitz => EntropyKind::Lipschitz,
        });
    let s = elpp::solve(&pts, &params)?;
    let check = if a.check {
        let b = elpp::brute_force(&pts, &params)?;
        Some(json!({ "value": b.value, "chain": b.chain, "agrees": b.chain == s.chain }))
    } else {
        None
    };
    print(json!({ "value": s.value, "chain": s.chain, "brute_force": check }))
}

fn ppp_cmd(cmd: PppCmd) -> Result<()> {
    match cmd {
        PppCmd::Sample { alpha, q, top, floor, seed, out } => {
            let t = match (top, floor) {
                (Some(l), _) => Truncation::Top { l },
                (None, Some(eps)) => Truncation::Floor { eps },
                (None, None) => return Err(Error::Domain("pass --top or --floor".into())),
            };
            let s = continuum::sample_ppp(alpha, q, t, seed)?;
            io::write_points_csv(&s.points, fs::File::create(&out)?)?;
            print(json!({ "points": s.points.len(), "path": out }))
        }
        PppCmd::Solve { points, beta, nu } => {
            let pts = io::read_points_csv(fs::File::open(&points)?)?;
            let s = continuum::PppSample {
                alpha: 1.0,
                q: 1.0,
                truncation: Truncation::Top { l: pts.len() },
                seed: 0,
                points: pts,
            };
            print(json!({
                "t": continuum::continuum_t(&s, nu, ContinuumVariant::T)?,
                "tilde_t": continuum::continuum_t(&s, nu, ContinuumVariant::Tilde { beta, at_least: 0 })?,
                "tilde_t_at_least_one": continuum::continuum_t(&s, nu, ContinuumVariant::Tilde { beta, at_least: 1 })?,
                "hat_t": continuum::continuum_hat_t(&s, beta)?,
                "w_beta": continuum::w_beta(&s, beta)?,
                "w0": continuum::w0_of(&s),
            }))
        }
        PppCmd::W0 { alpha, eps, k, count, seed } => {
            let v: Vec<f64> = (0..count as u64)
                .map(|r| continuum::sample_w0(alpha, eps, k, heavy_polymer::rng::derive_seed(seed, &[r])))
                .collect::<Result<_>>()?;
            print(json!({ "samples": v }))
        }
    }
}

fn regime_cmd(cmd: RegimeCmd) -> Result<()> {
    match cmd {
        RegimeCmd::Classify { tail, gamma, beta_hat, log_power, n } => {
            let s = BetaSchedule::PowerLaw { gamma, beta_hat, log_power };
            let r = regimes::classify(&tail.tail()?, &s, n)?;
            print(serde_json::to_value(r)?)
        }
        RegimeCmd::Hn { tail, n, beta } => {
            let h = regimes::solve_hn(n, beta, &tail.tail()?)?;
            print(serde_json::to_value(h)?)
        }
    }
}

fn experiment_cmd(cmd: ExperimentCmd) -> Result<bool> {
    match cmd {
        ExperimentCmd::Check { config } => {
            let cfg = ExperimentConfig::from_toml(&fs::read_to_string(config)?)?;
            print(json!({ "kind": cfg.kind, "sizes": cfg.sizes, "replicas": cfg.replicas }))?;
            Ok(true)
        }
        ExperimentCmd::Run { config, output, threads } => {
            let mut cfg = ExperimentConfig::from_toml(&fs::read_to_string(&config)?)?;
            if let Some(t) = threads {
                cfg.threads = t;
                cfg.validate()?;
            }
            let dir = output
                .or_else(|| cfg.output.as_ref().map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from(format!("out-{}", cfg.kind)));
            let start = Instant::now();
            let res = experiments::run(&cfg)?;
            let wall = start.elapsed().as_secs_f64();
            let m = experiments::write_outputs(&res, &cfg, &dir, env!("HEAVY_POLYMER_GIT_DESCRIBE"), wall)?;
            print(json!({
                "output": dir,
                "tables": m.tables.iter().map(|t| &t.file).collect::<Vec<_>>(),
                "wall_time_seconds": wall,
                "all_invariants_held": m.all_invariants_held,
                "invariants": m.invariants,
            }))?;
            Ok(m.all_invariants_held)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let out = match cli.command {
        Command::Field(c) => field_cmd(c).map(|_| true),
        Command::Polymer(c) => polymer_cmd(c).map(|_| true),
        Command::Elpp(a) => elpp_cmd(a).map(|_| true),
        Command::Ppp(c) => ppp_cmd(c).map(|_| true),
        Command::Regime(c) => regime_cmd(c).map(|_| true),
        Command::Experiment(c) => experiment_cmd(c),
    };
    match out {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("hard invariants violated, see the manifest");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
