//! Seeded Monte Carlo campaigns driven by a TOML configuration.
//!
//! Every replica `r` at size `n` draws its disorder from
//! `derive_seed(seed, [n, r])` and its independent limit-object sample from
//! `derive_seed(seed, [n, r, 1])`. Replicas run on a rayon pool, results are
//! collected in job order and every table is sorted by its key columns, so
//! the emitted CSV files depend only on the configuration.

use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::continuum::{
    continuum_hat_t, continuum_t, sample_ppp, sample_w0, w_beta, ContinuumVariant,
    PppSample, Truncation,
};
use crate::elpp::{solve, SolveParams, WeightedPoint};
use crate::environment::{ordered_statistics_in, sample_field, DisorderField, RankedSite, TailParams};
use crate::error::{domain, Error, Result};
use crate::polymer::{chaos_terms, log_partition, PathConstraint};
use crate::regimes::{classify, solve_hn, BetaSchedule, LimitObject, PowerLawSpec, RegimeLabel, RegimeReport};
use crate::rng::derive_seed;
use crate::stats;

pub const SCHEMA_VERSION: u32 = 1;
/// Largest n for which exact transfer passes are run.
pub const MAX_EXACT_N: usize = 4096;
pub const MAX_REPLICAS: usize = 1_000_000;
pub const MAX_ORDERED_STATS_L: usize = 64;
pub const MAX_COUPLED_L: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Fluctuation,
    RegimeConvergence,
    OrderedStatsCoupling,
    SmallAlpha,
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ExperimentKind::Fluctuation => "fluctuation",
            ExperimentKind::RegimeConvergence => "regime_convergence",
            ExperimentKind::OrderedStatsCoupling => "ordered_stats_coupling",
            ExperimentKind::SmallAlpha => "small_alpha",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum R3Branch {
    #[default]
    A,
    B,
}

fn default_ell() -> usize {
    64
}
fn default_eps() -> f64 {
    1e-3
}
fn default_a_values() -> Vec<f64> {
    vec![1.0, 2.0, 4.0, 8.0]
}
fn default_k() -> f64 {
    8.0
}
fn default_delta() -> f64 {
    0.5
}
fn default_q() -> f64 {
    4.0
}
fn default_c1_values() -> Vec<f64> {
    vec![0.01, 0.1, 1.0]
}
fn default_c_values() -> Vec<f64> {
    vec![2.0, 8.0]
}
fn default_hat_l() -> usize {
    256
}

/// Truncation and sweep parameters; every field has a default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncationConfig {
    /// number of heaviest weights kept in coupled and continuum samples
    #[serde(default = "default_ell")]
    pub ell: usize,
    /// weight floor for 𝒲₀ samples
    #[serde(default = "default_eps")]
    pub eps: f64,
    /// multiples A of h_n in the fluctuation sweep
    #[serde(default = "default_a_values")]
    pub a_values: Vec<f64>,
    /// spatial cutoff K for 𝒲₀ samples
    #[serde(default = "default_k")]
    pub k: f64,
    /// intermediate band end δn in the small-α experiment
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// box half-width q, in units of h_n, for continuum samples
    #[serde(default = "default_q")]
    pub q: f64,
    /// constants c₁ of the exceedance thresholds n e^{−c₁ A² h_n²/n}
    #[serde(default = "default_c1_values")]
    pub c1_values: Vec<f64>,
    /// multiples C of √n in the small-α experiment
    #[serde(default = "default_c_values")]
    pub c_values: Vec<f64>,
    /// restrict every polymer computation to |S_i| ≤ ⌈b √(n ln n)⌉
    #[serde(default)]
    pub band_factor: Option<f64>,
    /// field half-width for the ordered-statistics experiment (default ⌈n/10⌉)
    #[serde(default)]
    pub h: Option<usize>,
    /// number of independent limit-object samples per size (default: replicas)
    #[serde(default)]
    pub limit_samples: Option<usize>,
    /// heaviest weights kept for the 𝒯̂ proxy of the small-α experiment
    #[serde(default = "default_hat_l")]
    pub hat_l: usize,
    #[serde(default)]
    pub r3_branch: R3Branch,
}

impl Default for TruncationConfig {
    fn default() -> Self {
        toml::from_str("").expect("all fields have defaults")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub kind: ExperimentKind,
    pub tail: TailParams,
    pub schedule: PowerLawSpec,
    pub sizes: Vec<usize>,
    pub replicas: usize,
    pub seed: u64,
    /// worker threads; 0 lets rayon decide
    #[serde(default)]
    pub threads: usize,
    #[serde(default)]
    pub output: Option<String>,
    #[serde(default)]
    pub truncation: TruncationConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Format(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is serializable")
    }

    pub fn schedule(&self) -> BetaSchedule {
        self.schedule.into()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Format(format!("config: {m}")));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.sizes.is_empty() || self.sizes.windows(2).any(|w| w[0] >= w[1]) {
            return bad("sizes must be nonempty and strictly increasing".into());
        }
        if self.sizes[0] < 2 || *self.sizes.last().unwrap() > MAX_EXACT_N {
            return bad(format!("sizes must lie in [2, {MAX_EXACT_N}]"));
        }
        if self.replicas == 0 || self.replicas > MAX_REPLICAS {
            return bad(format!("replicas must lie in [1, {MAX_REPLICAS}]"));
        }
        let s = &self.schedule;
        if !(s.gamma.is_finite() && s.beta_hat.is_finite() && s.beta_hat >= 0.0 && s.log_power.is_finite()) {
            return bad("schedule parameters must be finite with beta_hat >= 0".into());
        }
        let t = &self.truncation;
        if t.ell == 0 || t.ell > MAX_COUPLED_L || t.hat_l == 0 || t.hat_l > MAX_COUPLED_L {
            return bad(format!("ell and hat_l must lie in [1, {MAX_COUPLED_L}]"));
        }
        if self.kind == ExperimentKind::OrderedStatsCoupling && t.ell > MAX_ORDERED_STATS_L {
            return bad(format!("ordered statistics need ell <= {MAX_ORDERED_STATS_L}"));
        }
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !(t.eps > 0.0) || t.eps.is_nan() || !pos(t.k) || !pos(t.q) {
            return bad("eps, k and q must be positive".into());
        }
        if !(t.delta > 0.0 && t.delta < 1.0) {
            return bad("delta must lie in (0,1)".into());
        }
        if t.a_values.is_empty() || !t.a_values.iter().all(|&a| pos(a)) {
            return bad("a_values must be positive".into());
        }
        if !t.c1_values.iter().all(|&a| pos(a)) || !t.c_values.iter().all(|&a| pos(a)) {
            return bad("c1_values and c_values must be positive".into());
        }
        if t.band_factor.is_some_and(|b| !pos(b)) {
            return bad("band_factor must be positive".into());
        }
        if t.h == Some(0) {
            return bad("h must be positive".into());
        }
        if t.limit_samples == Some(0) || t.limit_samples.is_some_and(|m| m > MAX_REPLICAS) {
            return bad(format!("limit_samples must lie in [1, {MAX_REPLICAS}]"));
        }
        if self.threads > 1024 {
            return bad("threads must be at most 1024".into());
        }
        if t.eps.powf(-self.tail.alpha()) * t.k > crate::continuum::MAX_FLOOR_MEAN {
            return bad("eps is too small for the weight-floor sampler".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
    Bool(bool),
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Int(v) => write!(f, "{v}"),
            Cell::Float(v) => write!(f, "{v}"),
            Cell::Text(v) => f.write_str(v),
            Cell::Bool(v) => write!(f, "{v}"),
        }
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}
impl From<i64> for Cell {
    fn from(v: i64) -> Self {
        Cell::Int(v)
    }
}
impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Text(v.to_string())
    }
}
impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}
impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Bool(v)
    }
}
impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}
impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

macro_rules! row {
    ($($e:expr),* $(,)?) => { vec![$(Cell::from($e)),*] };
}

fn cell_order(a: &Cell, b: &Cell) -> std::cmp::Ordering {
    use std::cmp::Ordering;
    match (a, b) {
        (Cell::Int(x), Cell::Int(y)) => x.cmp(y),
        (Cell::Float(x), Cell::Float(y)) => x.total_cmp(y),
        (Cell::Text(x), Cell::Text(y)) => x.cmp(y),
        (Cell::Bool(x), Cell::Bool(y)) => x.cmp(y),
        _ => Ordering::Equal,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    /// number of leading columns that identify a row
    pub key_columns: usize,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    fn new(name: &str, columns: &[&str], key_columns: usize) -> Self {
        Table {
            name: name.to_string(),
            columns: columns.iter().map(|s| s.to_string()).collect(),
            key_columns,
            rows: Vec::new(),
        }
    }

    fn sort(&mut self) {
        let k = self.key_columns;
        self.rows.sort_by(|a, b| {
            a[..k]
                .iter()
                .zip(&b[..k])
                .map(|(x, y)| cell_order(x, y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn to_csv(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r.iter().map(|c| c.to_string())).expect("in-memory write");
        }
        w.into_inner().expect("in-memory write")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvariantCheck {
    pub name: String,
    pub checked: usize,
    pub violations: usize,
    /// first few violations
    pub examples: Vec<String>,
}

impl InvariantCheck {
    pub fn held(&self) -> bool {
        self.violations == 0
    }
}

#[derive(Default)]
struct Checks(Vec<InvariantCheck>);

impl Checks {
    fn record(&mut self, name: &str, ok: bool, detail: impl FnOnce() -> String) {
        let c = match self.0.iter_mut().position(|c| c.name == name) {
            Some(k) => &mut self.0[k],
            None => {
                self.0.push(InvariantCheck {
                    name: name.to_string(),
                    checked: 0,
                    violations: 0,
                    examples: vec![],
                });
                self.0.last_mut().unwrap()
            }
        };
        c.checked += 1;
        if !ok {
            c.violations += 1;
            if c.examples.len() < 5 {
                c.examples.push(detail());
            }
        }
    }

    fn merge(&mut self, other: Checks) {
        for c in other.0 {
            match self.0.iter_mut().find(|d| d.name == c.name) {
                Some(d) => {
                    d.checked += c.checked;
                    d.violations += c.violations;
                    for e in c.examples {
                        if d.examples.len() < 5 {
                            d.examples.push(e);
                        }
                    }
                }
                None => self.0.push(c),
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub kind: ExperimentKind,
    pub tables: Vec<Table>,
    pub invariants: Vec<InvariantCheck>,
}

impl ExperimentResult {
    pub fn all_invariants_held(&self) -> bool {
        self.invariants.iter().all(InvariantCheck::held)
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }
}

/// Run the campaign described by `cfg` on a pool of `cfg.threads` workers.
pub fn run(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::Invariant(format!("thread pool: {e}")))?;
    pool.install(|| match cfg.kind {
        ExperimentKind::Fluctuation => run_fluctuation(cfg),
        ExperimentKind::RegimeConvergence => run_regime_convergence(cfg),
        ExperimentKind::OrderedStatsCoupling => run_ordered_stats_coupling(cfg),
        ExperimentKind::SmallAlpha => run_small_alpha(cfg),
    })
}

fn jobs(cfg: &ExperimentConfig) -> Vec<(usize, usize)> {
    cfg.sizes
        .iter()
        .flat_map(|&n| (0..cfg.replicas).map(move |r| (n, r)))
        .collect()
}

fn replica_seed(cfg: &ExperimentConfig, n: usize, r: usize) -> u64 {
    derive_seed(cfg.seed, &[n as u64, r as u64])
}

fn limit_seed(cfg: &ExperimentConfig, n: usize, r: usize) -> u64 {
    derive_seed(cfg.seed, &[n as u64, r as u64, 1])
}

fn band_of(cfg: &ExperimentConfig, n: usize) -> usize {
    match cfg.truncation.band_factor {
        Some(b) => {
            let nf = n as f64;
            ((b * (nf * nf.ln()).sqrt()).ceil() as usize).min(n)
        }
        None => n,
    }
}

/// Gibbs probabilities of max |S_i| ≥ A h_n for one replica.
struct FluctuationRow {
    n: usize,
    r: usize,
    seed: u64,
    beta_n: f64,
    h_n: f64,
    probs: Vec<(f64, usize, f64)>,
    checks: Checks,
}

pub fn run_fluctuation(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let a = cfg.tail.alpha();
    if !(a > 0.5 && a < 2.0) {
        return domain(format!("the fluctuation experiment needs alpha in (1/2, 2), got {a}"));
    }
    let schedule = cfg.schedule();
    let mut a_values = cfg.truncation.a_values.clone();
    a_values.sort_by(f64::total_cmp);
    let out: Vec<Result<FluctuationRow>> = jobs(cfg)
        .into_par_iter()
        .map(|(n, r)| {
            let seed = replica_seed(cfg, n, r);
            let beta_n = schedule.beta(n);
            let h_n = solve_hn(n, beta_n, &cfg.tail)?.h;
            let band = band_of(cfg, n);
            let field = sample_field(n, band, &cfg.tail, seed)?;
            let base = PathConstraint::free().with_band(band);
            let full = log_partition(&field, beta_n, &base)?.log_z;
            let mut checks = Checks::default();
            let mut probs = Vec::new();
            for &amul in &a_values {
                let lo = (amul * h_n).ceil() as usize;
                let p = if lo > band {
                    0.0
                } else {
                    let c = base.with_window(lo, n + 1);
                    (log_partition(&field, beta_n, &c)?.log_z - full).exp()
                };
                checks.record("probability in [0,1]", (0.0..=1.0 + 1e-12).contains(&p), || {
                    format!("n={n} r={r} A={amul}: {p}")
                });
                if lo > n {
                    checks.record("zero beyond the walk range", p == 0.0, || {
                        format!("n={n} r={r} A={amul}: {p}")
                    });
                }
                probs.push((amul, lo, p.min(1.0)));
            }
            for w in probs.windows(2) {
                checks.record("tail nonincreasing in A", w[1].2 <= w[0].2 * (1.0 + 1e-12) + 1e-300, || {
                    format!("n={n} r={r}: P(A={})={} > P(A={})={}", w[1].0, w[1].2, w[0].0, w[0].2)
                });
            }
            Ok(FluctuationRow {
                n,
                r,
                seed,
                beta_n,
                h_n,
                probs,
                checks,
            })
        })
        .collect();
    let mut checks = Checks::default();
    let mut per = Table::new(
        "fluctuation_replicas",
        &["n", "replica", "A", "seed", "beta_n", "h_n", "threshold", "gibbs_tail"],
        3,
    );
    let mut rows = Vec::new();
    for o in out {
        let o = o?;
        for &(amul, lo, p) in &o.probs {
            per.rows.push(row![o.n, o.r, amul, o.seed, o.beta_n, o.h_n, lo, p]);
        }
        rows.push((o.n, o.h_n, o.probs));
        checks.merge(o.checks);
    }
    per.sort();
    let mut decay = Table::new(
        "fluctuation_decay",
        &["n", "A", "c1", "h_n", "median_tail", "exceed_threshold", "exceed_fraction", "replicas"],
        3,
    );
    for &n in &cfg.sizes {
        let these: Vec<_> = rows.iter().filter(|r| r.0 == n).collect();
        let h_n = these[0].1;
        for (k, &amul) in a_values.iter().enumerate() {
            let ps: Vec<f64> = these.iter().map(|r| r.2[k].2).collect();
            let med = stats::median(&ps);
            for &c1 in &cfg.truncation.c1_values {
                let nf = n as f64;
                let thr = nf * (-c1 * amul * amul * h_n * h_n / nf).exp();
                let frac = ps.iter().filter(|&&p| p >= thr).count() as f64 / ps.len() as f64;
                decay.rows.push(row![n, amul, c1, h_n, med, thr, frac, ps.len()]);
            }
        }
    }
    decay.sort();
    Ok(ExperimentResult {
        kind: ExperimentKind::Fluctuation,
        tables: vec![per, decay],
        invariants: checks.0,
    })
}

/// Diffusive rescaling of lattice points: (i, x, ω) ↦ (i/n, x/h, ω/m).
pub fn rescale_points(sites: &[RankedSite], n: f64, h: f64, m: f64) -> Vec<WeightedPoint> {
    sites
        .iter()
        .map(|s| WeightedPoint::new(s.i as f64 / n, s.x as f64 / h, s.weight / m))
        .collect()
}

fn limit_sample(
    cfg: &ExperimentConfig,
    report: &RegimeReport,
    limit: LimitObject,
    seed: u64,
) -> Result<f64> {
    let alpha = cfg.tail.alpha();
    let t = &cfg.truncation;
    let top = |q: f64| sample_ppp(alpha, q, Truncation::Top { l: t.ell }, seed);
    let beta = report.beta.unwrap_or(f64::INFINITY);
    Ok(match limit {
        LimitObject::HatT => continuum_hat_t(&top(1.0)?, beta.min(1e12))?,
        LimitObject::T1 => continuum_t(&top(t.q)?, 1.0, ContinuumVariant::T)?,
        LimitObject::TildeT => continuum_t(&top(t.q)?, 1.0, ContinuumVariant::Tilde { beta, at_least: 0 })?,
        LimitObject::TildeTAtLeastOne => {
            continuum_t(&top(t.q)?, 1.0, ContinuumVariant::Tilde { beta, at_least: 1 })?
        }
        LimitObject::W1 => w_beta(&top(t.q)?, 1.0)?.unwrap_or(f64::NEG_INFINITY),
        LimitObject::TwoWBeta | LimitObject::TwoW0 => {
            if beta > 0.0 {
                f64::NAN
            } else {
                2.0 * sample_w0(alpha, t.eps, t.k, seed)?
            }
        }
    })
}

struct ConvergenceRow {
    cells: Vec<Cell>,
    rescaled: f64,
    chaos_rescaled: Option<f64>,
    checks: Checks,
}

pub fn run_regime_convergence(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let schedule = cfg.schedule();
    let t = &cfg.truncation;
    let mut reports = Vec::new();
    for &n in &cfg.sizes {
        reports.push(if schedule.beta(n) > 0.0 {
            Some(classify(&cfg.tail, &schedule, n)?)
        } else {
            None
        });
    }
    let report_of = |n: usize| reports[cfg.sizes.iter().position(|&m| m == n).unwrap()].clone();
    let out: Vec<Result<ConvergenceRow>> = jobs(cfg)
        .into_par_iter()
        .map(|(n, r)| {
            let seed = replica_seed(cfg, n, r);
            let beta_n = schedule.beta(n);
            let band = band_of(cfg, n);
            let field = sample_field(n, band, &cfg.tail, seed)?;
            let mut checks = Checks::default();
            let log_z = log_partition(&field, beta_n, &PathConstraint::free().with_band(band))?.log_z;
            let Some(report) = report_of(n) else {
                checks.record("zero coupling gives zero", log_z == 0.0, || format!("n={n} r={r}: {log_z}"));
                return Ok(ConvergenceRow {
                    cells: row![n, r, seed, 0.0, "none", log_z, 0.0, 1.0, 0.0, 0.0, f64::NAN, f64::NAN, f64::NAN, f64::NAN, f64::NAN, f64::NAN, false],
                    rescaled: 0.0,
                    chaos_rescaled: None,
                    checks,
                });
            };
            let mut norm = report.normalizer.clone().expect("classified regime has a normalizer");
            let mut label = report.label;
            if label == RegimeLabel::R3 {
                let (l, k) = match t.r3_branch {
                    R3Branch::A => (RegimeLabel::R3a, 0),
                    R3Branch::B => (RegimeLabel::R3b, 1),
                };
                label = l;
                norm = report.alternatives[k].clone();
            }
            let rescaled = norm.apply(log_z, n);
            let limit = limit_sample(cfg, &report, norm.limit, limit_seed(cfg, n, r))?;
            // R3b needs T̃^{(≥1)}_β < 0 on the limit sample
            let flagged = label == RegimeLabel::R3b && limit >= 0.0;

            // coupled variant: rescaled heaviest lattice weights fed to the continuum solver
            let h = report.h_n;
            let hq = ((t.q * h).floor() as usize).min(band);
            let size = n * (2 * hq + 1);
            let os = ordered_statistics_in(&field, n, hq, t.ell.min(size))?;
            let raw: Vec<WeightedPoint> = os
                .entries
                .iter()
                .map(|s| WeightedPoint::new(s.i as f64, s.x as f64, s.weight))
                .collect();
            let nf = n as f64;
            let m = cfg.tail.m_of((nf * h).max(2.0))?;
            let raw_value = nf / (h * h) * solve(&raw, &SolveParams::quadratic(beta_n))?.value;
            let nu = nf / (h * h) * beta_n * m;
            let scaled = rescale_points(&os.entries, nf, h, m);
            let coupled = solve(&scaled, &SolveParams::quadratic(nu))?.value;
            let diff = (raw_value - coupled).abs();
            checks.record("scaling covariance", diff <= 1e-9 * raw_value.abs().max(1.0), || {
                format!("n={n} r={r}: {raw_value} vs {coupled}")
            });

            let mut chaos_rescaled = None;
            let mut chaos_v = f64::NAN;
            if matches!(label, RegimeLabel::R5) {
                let ch = chaos_terms(&field, beta_n, band, None)?;
                chaos_v = ch.v;
                let pre = nf.sqrt() / (beta_n * cfg.tail.m_of(nf.powf(1.5))?);
                chaos_rescaled = Some(pre * ch.v);
                let lhs = (ch.log_z_truncated - (nf - 1.0) * ch.lambda).exp();
                let rhs = ch.reassembled();
                checks.record("chaos reassembly", (lhs - rhs).abs() <= 1e-9 * lhs.abs().max(1.0), || {
                    format!("n={n} r={r}: {lhs} vs {rhs}")
                });
            }
            Ok(ConvergenceRow {
                cells: row![
                    n,
                    r,
                    seed,
                    beta_n,
                    format!("{label:?}"),
                    log_z,
                    norm.prefactor,
                    norm.centering_total,
                    rescaled,
                    limit,
                    raw_value,
                    coupled,
                    nu,
                    chaos_v,
                    chaos_rescaled.unwrap_or(f64::NAN),
                    h,
                    flagged
                ],
                rescaled,
                chaos_rescaled,
                checks,
            })
        })
        .collect();
    let mut checks = Checks::default();
    let mut per = Table::new(
        "convergence_replicas",
        &[
            "n",
            "replica",
            "seed",
            "beta_n",
            "regime",
            "log_z",
            "prefactor",
            "centering_total",
            "rescaled",
            "limit_sample",
            "coupled_discrete",
            "coupled_continuum",
            "coupled_nu",
            "chaos_v",
            "chaos_rescaled",
            "h_n",
            "r3b_flagged",
        ],
        2,
    );
    let mut by_n: Vec<(usize, Vec<f64>, Vec<f64>)> = cfg.sizes.iter().map(|&n| (n, vec![], vec![])).collect();
    for o in out {
        let o = o?;
        let n = match o.cells[0] {
            Cell::Int(v) => v as usize,
            _ => unreachable!(),
        };
        let slot = by_n.iter_mut().find(|s| s.0 == n).unwrap();
        slot.1.push(o.rescaled);
        if let Some(c) = o.chaos_rescaled {
            slot.2.push(c);
        }
        per.rows.push(o.cells);
        checks.merge(o.checks);
    }
    per.sort();
    // independent limit samples, possibly more than the replicas
    let mut summary = Table::new(
        "convergence_summary",
        &["n", "observable", "regime", "normalizer", "samples", "limit_samples", "ks", "ks_pvalue", "median_observable", "median_limit"],
        2,
    );
    let mut limits_table = Table::new("limit_samples", &["n", "sample", "seed", "value"], 2);
    for (k, (n, obs, chaos)) in by_n.iter().enumerate() {
        let Some(report) = &reports[k] else { continue };
        let mut norm = report.normalizer.clone().unwrap();
        if report.label == RegimeLabel::R3 {
            norm = report.alternatives[match t.r3_branch {
                R3Branch::A => 0,
                R3Branch::B => 1,
            }]
            .clone();
        }
        let m = t.limit_samples.unwrap_or(cfg.replicas);
        let lims: Vec<(u64, f64)> = (0..m)
            .into_par_iter()
            .map(|s| {
                let seed = derive_seed(cfg.seed, &[*n as u64, s as u64, 2]);
                limit_sample(cfg, report, norm.limit, seed).map(|v| (seed, v))
            })
            .collect::<Result<_>>()?;
        for (s, (seed, v)) in lims.iter().enumerate() {
            limits_table.rows.push(row![*n, s, *seed, *v]);
        }
        let lv: Vec<f64> = lims.iter().map(|x| x.1).filter(|v| !v.is_nan()).collect();
        let mut emit = |name: &str, sample: &[f64]| {
            let s: Vec<f64> = sample.iter().copied().filter(|v| !v.is_nan()).collect();
            if s.is_empty() || lv.is_empty() {
                return;
            }
            let d = stats::ks_two_sample(&s, &lv);
            summary.rows.push(row![
                *n,
                name,
                format!("{:?}", report.label),
                norm.description.clone(),
                s.len(),
                lv.len(),
                d,
                stats::ks_two_sample_pvalue(d, s.len(), lv.len()),
                stats::median(&s),
                stats::median(&lv)
            ]);
        };
        emit("rescaled_log_z", obs);
        if !chaos.is_empty() {
            emit("rescaled_first_chaos", chaos);
        }
    }
    summary.sort();
    limits_table.sort();
    Ok(ExperimentResult {
        kind: ExperimentKind::RegimeConvergence,
        tables: vec![per, summary, limits_table],
        invariants: checks.0,
    })
}

pub fn run_ordered_stats_coupling(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let l = cfg.truncation.ell;
    let alpha = cfg.tail.alpha();
    let h_of = |n: usize| cfg.truncation.h.unwrap_or(n.div_ceil(10)).max(1);
    let out: Vec<Result<(usize, usize, u64, Vec<RankedSite>, Vec<WeightedPoint>, f64)>> = jobs(cfg)
        .into_par_iter()
        .map(|(n, r)| {
            let seed = replica_seed(cfg, n, r);
            let h = h_of(n);
            let field = sample_field(n, h, &cfg.tail, seed)?;
            let os = ordered_statistics_in(&field, n, h, l.min(field.len()))?;
            let m = cfg.tail.m_of((2 * n * h) as f64)?;
            let ppp = sample_ppp(alpha, 1.0, Truncation::Top { l }, limit_seed(cfg, n, r))?;
            Ok((n, r, seed, os.entries, ppp.points, m))
        })
        .collect();
    let mut per = Table::new(
        "ordered_stats_replicas",
        &["n", "replica", "rank", "seed", "h", "weight_rescaled", "t_rescaled", "x_rescaled", "ppp_weight", "ppp_t", "ppp_x"],
        3,
    );
    let mut checks = Checks::default();
    let mut collected: Vec<(usize, usize, f64, f64, f64, f64, f64, f64)> = Vec::new();
    for o in out {
        let (n, r, seed, entries, ppp, m) = o?;
        let h = h_of(n);
        checks.record("ordered weights nonincreasing", entries.windows(2).all(|w| w[0].weight >= w[1].weight), || {
            format!("n={n} r={r}")
        });
        for (k, (e, p)) in entries.iter().zip(&ppp).enumerate() {
            let (w, t, x) = (e.weight / m, e.i as f64 / n as f64, e.x as f64 / h as f64);
            per.rows.push(row![n, r, k + 1, seed, h, w, t, x, p.w, p.t, p.x]);
            collected.push((n, k + 1, w, t, x, p.w, p.t, p.x));
        }
    }
    per.sort();
    let mut summary = Table::new(
        "ordered_stats_summary",
        &["n", "rank", "samples", "ks_weight", "ks_t", "ks_x", "ks_weight_vs_frechet", "mean_t", "sd_mean_t"],
        2,
    );
    for &n in &cfg.sizes {
        for rank in 1..=l {
            let sel: Vec<_> = collected.iter().filter(|c| c.0 == n && c.1 == rank).collect();
            if sel.is_empty() {
                continue;
            }
            let col = |f: fn(&&(usize, usize, f64, f64, f64, f64, f64, f64)) -> f64| -> Vec<f64> {
                sel.iter().map(f).collect()
            };
            let (w, t, x) = (col(|c| c.2), col(|c| c.3), col(|c| c.4));
            let (pw, pt, px) = (col(|c| c.5), col(|c| c.6), col(|c| c.7));
            let frechet = if rank == 1 {
                stats::ks_one_sample(&w, |u| if u > 0.0 { (-u.powf(-alpha)).exp() } else { 0.0 })
            } else {
                f64::NAN
            };
            let sd = (1.0 / 12.0 / t.len() as f64).sqrt();
            summary.rows.push(row![
                n,
                rank,
                sel.len(),
                stats::ks_two_sample(&w, &pw),
                stats::ks_two_sample(&t, &pt),
                stats::ks_two_sample(&x, &px),
                frechet,
                stats::mean(&t),
                sd
            ]);
        }
    }
    summary.sort();
    Ok(ExperimentResult {
        kind: ExperimentKind::OrderedStatsCoupling,
        tables: vec![per, summary],
        invariants: checks.0,
    })
}

/// Lattice sites with i + x even and |x| ≤ h, heaviest first.
fn reachable_top(field: &DisorderField, h: usize, l: usize) -> Vec<RankedSite> {
    let mut v = Vec::new();
    for i in 1..=field.n() {
        let r = i.min(h) as i64;
        let mut x = -r;
        if (x + i as i64) % 2 != 0 {
            x += 1;
        }
        while x <= r {
            v.push(RankedSite {
                weight: field.weight(i, x),
                i,
                x,
            });
            x += 2;
        }
    }
    let l = l.min(v.len());
    if l > 0 && l < v.len() {
        v.select_nth_unstable_by(l - 1, crate::environment::rank_order);
        v.truncate(l);
    }
    v.sort_by(crate::environment::rank_order);
    v
}

pub fn run_small_alpha(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let alpha = cfg.tail.alpha();
    if !(alpha > 0.0 && alpha < 0.5) {
        return domain(format!("the small-alpha experiment needs alpha in (0, 1/2), got {alpha}"));
    }
    let schedule = cfg.schedule();
    let t = &cfg.truncation;
    let mut c_values = t.c_values.clone();
    c_values.sort_by(f64::total_cmp);
    struct Out {
        cells: Vec<Vec<Cell>>,
        conditioned: bool,
        rescaled: f64,
        n: usize,
        checks: Checks,
    }
    let out: Vec<Result<Out>> = jobs(cfg)
        .into_par_iter()
        .map(|(n, r)| {
            let seed = replica_seed(cfg, n, r);
            let beta_n = schedule.beta(n);
            let nf = n as f64;
            let band = band_of(cfg, n);
            let field = sample_field(n, band, &cfg.tail, seed)?;
            let mut checks = Checks::default();
            let base = PathConstraint::free().with_band(band);
            let log_z = log_partition(&field, beta_n, &base)?.log_z;
            // 𝒯̂ proxy on the heaviest reachable weights, normalized by m(n²)
            let m2 = cfg.tail.m_of(nf * nf)?;
            let beta_eff = beta_n * m2 / nf;
            let proxy = if beta_eff > 0.0 {
                let pts = rescale_points(&reachable_top(&field, band, t.hat_l), nf, nf, m2);
                continuum_hat_t(
                    &PppSample {
                        alpha,
                        q: 1.0,
                        truncation: Truncation::Top { l: t.hat_l },
                        seed,
                        points: pts,
                    },
                    beta_eff,
                )?
            } else {
                0.0
            };
            let conditioned = proxy == 0.0;
            let m15 = cfg.tail.m_of(nf.powf(1.5))?;
            let rescaled = if beta_n > 0.0 {
                nf.sqrt() / (beta_n * m15) * log_z
            } else {
                0.0
            };
            let mut tails = Vec::new();
            for &c in &c_values {
                let lo = (c * nf.sqrt()).ceil() as usize;
                let tail_p = if lo > band {
                    0.0
                } else {
                    (log_partition(&field, beta_n, &base.with_window(lo, n + 1))?.log_z - log_z).exp()
                };
                let hi = ((t.delta * nf).ceil() as usize).max(lo + 1);
                let occ = if lo > band {
                    0.0
                } else {
                    (log_partition(&field, beta_n, &base.with_window(lo, hi))?.log_z - log_z).exp()
                };
                checks.record("band occupancy within tail", occ <= tail_p * (1.0 + 1e-12) + 1e-300, || {
                    format!("n={n} r={r} C={c}: {occ} > {tail_p}")
                });
                tails.push((c, tail_p, occ));
            }
            for w in tails.windows(2) {
                checks.record("tail nonincreasing in C", w[1].1 <= w[0].1 * (1.0 + 1e-12) + 1e-300, || {
                    format!("n={n} r={r}: {} > {}", w[1].1, w[0].1)
                });
            }
            let cells = tails
                .iter()
                .map(|&(c, tp, occ)| row![n, r, c, seed, beta_n, beta_eff, proxy, conditioned, log_z, rescaled, tp, occ])
                .collect();
            Ok(Out {
                cells,
                conditioned,
                rescaled,
                n,
                checks,
            })
        })
        .collect();
    let mut per = Table::new(
        "small_alpha_replicas",
        &["n", "replica", "C", "seed", "beta_n", "beta_eff", "hat_t_proxy", "conditioned", "log_z", "rescaled", "gibbs_tail", "band_occupancy"],
        3,
    );
    let mut checks = Checks::default();
    let mut cond: Vec<(usize, f64)> = Vec::new();
    let mut total: Vec<usize> = Vec::new();
    for o in out {
        let o = o?;
        per.rows.extend(o.cells);
        total.push(o.n);
        if o.conditioned {
            cond.push((o.n, o.rescaled));
        }
        checks.merge(o.checks);
    }
    per.sort();
    let mut summary = Table::new(
        "small_alpha_summary",
        &["n", "replicas", "conditioned", "limit_samples", "ks_vs_2w0", "median_rescaled", "median_2w0"],
        1,
    );
    for &n in &cfg.sizes {
        let obs: Vec<f64> = cond.iter().filter(|c| c.0 == n).map(|c| c.1).collect();
        let m = t.limit_samples.unwrap_or(cfg.replicas);
        let lims: Vec<f64> = (0..m)
            .into_par_iter()
            .map(|s| sample_w0(alpha, t.eps, t.k, derive_seed(cfg.seed, &[n as u64, s as u64, 2])).map(|v| 2.0 * v))
            .collect::<Result<_>>()?;
        let ks = if obs.is_empty() {
            f64::NAN
        } else {
            stats::ks_two_sample(&obs, &lims)
        };
        let med = if obs.is_empty() { f64::NAN } else { stats::median(&obs) };
        summary.rows.push(row![
            n,
            total.iter().filter(|&&m| m == n).count(),
            obs.len(),
            m,
            ks,
            med,
            stats::median(&lims)
        ]);
    }
    Ok(ExperimentResult {
        kind: ExperimentKind::SmallAlpha,
        tables: vec![per, summary],
        invariants: checks.0,
    })
}

/// Manifest written next to the CSV files.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub kind: ExperimentKind,
    pub config: ExperimentConfig,
    pub git_describe: String,
    pub wall_time_seconds: f64,
    pub tables: Vec<ManifestTable>,
    pub invariants: Vec<InvariantCheck>,
    pub all_invariants_held: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestTable {
    pub name: String,
    pub file: String,
    pub columns: Vec<String>,
    pub rows: usize,
}

/// Write one CSV per table and `manifest.json` into `dir`.
pub fn write_outputs(
    result: &ExperimentResult,
    cfg: &ExperimentConfig,
    dir: &Path,
    git_describe: &str,
    wall_time_seconds: f64,
) -> Result<Manifest> {
    std::fs::create_dir_all(dir)?;
    let mut tables = Vec::new();
    for t in &result.tables {
        let file = format!("{}.csv", t.name);
        std::fs::write(dir.join(&file), t.to_csv())?;
        tables.push(ManifestTable {
            name: t.name.clone(),
            file,
            columns: t.columns.clone(),
            rows: t.rows.len(),
        });
    }
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        kind: result.kind,
        config: cfg.clone(),
        git_describe: git_describe.to_string(),
        wall_time_seconds,
        tables,
        invariants: result.invariants.clone(),
        all_invariants_held: result.all_invariants_held(),
    };
    std::fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
schema_version = 1
kind = "fluctuation"
sizes = [8, 16]
replicas = 2
seed = 5
[tail]
alpha = 1.0
[schedule]
gamma = 1.4
"#;

    #[test]
    fn parses_minimal_config() {
        let c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(c.truncation.a_values, vec![1.0, 2.0, 4.0, 8.0]);
        assert_eq!(c.schedule.beta_hat, 1.0);
        let again = ExperimentConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(ExperimentConfig::from_toml(&MINIMAL.replace("[8, 16]", "[16, 8]")).is_err());
        assert!(ExperimentConfig::from_toml(&MINIMAL.replace("schema_version = 1", "schema_version = 2")).is_err());
        assert!(ExperimentConfig::from_toml(&MINIMAL.replace("replicas = 2", "replicas = 0")).is_err());
        assert!(ExperimentConfig::from_toml(&format!("{MINIMAL}\nbogus = 1")).is_err());
        assert!(ExperimentConfig::from_toml(&MINIMAL.replace("alpha = 1.0", "alpha = 2.5")).is_err());
    }
}
