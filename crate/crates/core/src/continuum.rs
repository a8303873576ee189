//! The limiting Poisson point process and the continuum variational
//! problems evaluated on its truncations.
//!
//! The process lives on `(0,∞) × [0,1] × ℝ` with intensity
//! `(α/2) w^{−α−1} dw dt dx`. On the box `[0,1] × [−q,q]` the number of
//! points above `u` is Poisson with mean `q u^{−α}`, which gives two exact
//! samplers:
//!
//! * floor mode: `N ~ Poisson(q ε^{−α})` points with i.i.d. weights
//!   `ε U^{−1/α}` and uniform positions;
//! * top-ℓ mode: the ℓ largest weights `M_r = q^{1/α} Γ_r^{−1/α}`, `Γ_r` the
//!   arrival times of a unit-rate Poisson process, with uniform positions.
//!
//! Both are consumed in a fixed order from one ChaCha8 stream, so a top-ℓ
//! sample is a prefix of the top-2ℓ sample with the same seed. Floor samples
//! at a smaller floor are coupled to larger floors by thinning, see
//! [`restrict_floor`].

use rand::Rng;
use rand_distr::{Distribution, Exp1, Poisson};
use serde::{Deserialize, Serialize};

use crate::elpp::{solve, Cardinality, EntropyKind, SolveParams, WeightWindow, WeightedPoint};
use crate::error::{domain, Error, Result};
use crate::rng::{derive_seed, stream};
use crate::stats;

/// Largest expected point count accepted in floor mode.
pub const MAX_FLOOR_MEAN: f64 = 5.0e6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum Truncation {
    /// all points with w > eps
    Floor { eps: f64 },
    /// the l largest weights
    Top { l: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PppSample {
    pub alpha: f64,
    pub q: f64,
    pub truncation: Truncation,
    pub seed: u64,
    /// sorted by decreasing weight
    pub points: Vec<WeightedPoint>,
}

fn check_alpha_q(alpha: f64, q: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 2.0) {
        return domain(format!("alpha must lie in (0,2), got {alpha}"));
    }
    if !(q > 0.0 && q.is_finite()) {
        return domain(format!("q must be positive and finite, got {q}"));
    }
    Ok(())
}

fn position<R: Rng>(rng: &mut R, q: f64) -> (f64, f64) {
    // t in (0, 1], x in [−q, q)
    let t = 1.0 - rng.random::<f64>();
    let x = q * (2.0 * rng.random::<f64>() - 1.0);
    (t, x)
}

fn by_weight_desc(points: &mut [WeightedPoint]) {
    points.sort_by(|a, b| {
        b.w.total_cmp(&a.w)
            .then(a.t.total_cmp(&b.t))
            .then(a.x.total_cmp(&b.x))
    });
}

pub fn sample_ppp(alpha: f64, q: f64, truncation: Truncation, seed: u64) -> Result<PppSample> {
    check_alpha_q(alpha, q)?;
    let mut rng = stream(seed);
    let points = match truncation {
        Truncation::Floor { eps } => {
            if eps.is_nan() || eps <= 0.0 {
                return domain(format!("weight floor must be positive, got {eps}"));
            }
            if eps == f64::INFINITY {
                Vec::new()
            } else {
                let mean = q * eps.powf(-alpha);
                if mean > MAX_FLOOR_MEAN {
                    return Err(Error::TooLarge {
                        what: "expected point count",
                        got: mean as usize,
                        cap: MAX_FLOOR_MEAN as usize,
                    });
                }
                let count = Poisson::new(mean)
                    .map_err(|e| Error::Domain(e.to_string()))?
                    .sample(&mut rng) as usize;
                let mut pts = Vec::with_capacity(count);
                for _ in 0..count {
                    let u = 1.0 - rng.random::<f64>();
                    let w = eps * u.powf(-1.0 / alpha);
                    let (t, x) = position(&mut rng, q);
                    pts.push(WeightedPoint::new(t, x, w));
                }
                by_weight_desc(&mut pts);
                pts
            }
        }
        Truncation::Top { l } => {
            let mut pts = Vec::with_capacity(l);
            let mut gamma = 0.0;
            let scale = q.powf(1.0 / alpha);
            for _ in 0..l {
                let e: f64 = Exp1.sample(&mut rng);
                gamma += e;
                let w = scale * gamma.powf(-1.0 / alpha);
                let (t, x) = position(&mut rng, q);
                pts.push(WeightedPoint::new(t, x, w));
            }
            pts
        }
    };
    Ok(PppSample {
        alpha,
        q,
        truncation,
        seed,
        points,
    })
}

/// Keep the points above a higher floor. The result has the law of a floor
/// sample at `eps` and is nested in the input.
pub fn restrict_floor(sample: &PppSample, eps: f64) -> Result<PppSample> {
    let floor = match sample.truncation {
        Truncation::Floor { eps } => eps,
        Truncation::Top { .. } => 0.0,
    };
    if !(eps >= floor) {
        return domain(format!("cannot lower the floor from {floor} to {eps}"));
    }
    if let Truncation::Top { .. } = sample.truncation {
        if sample.points.last().is_some_and(|p| p.w > eps) {
            return domain("top-l sample does not reach down to the requested floor");
        }
    }
    Ok(PppSample {
        truncation: Truncation::Floor { eps },
        points: sample.points.iter().copied().filter(|p| p.w > eps).collect(),
        ..sample.clone()
    })
}

/// Keep the ℓ heaviest points.
pub fn restrict_top(sample: &PppSample, l: usize) -> Result<PppSample> {
    if let Truncation::Top { l: have } = sample.truncation {
        if l > have {
            return domain(format!("cannot extend a top-{have} sample to {l} points"));
        }
    }
    Ok(PppSample {
        truncation: Truncation::Top { l },
        points: sample.points.iter().copied().take(l).collect(),
        ..sample.clone()
    })
}

/// The continuum problems solved by [`continuum_t`]. `nu` multiplies the
/// energy; the tilde variants add the penalty `N(s) / (2β)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ContinuumVariant {
    /// sup { ν π(s) − Ent(s) }
    T,
    /// same, energy from the ℓ heaviest points only
    TopL { l: usize },
    /// sup over N(s) ≥ r of { ν π(s) − Ent(s) − N(s)/(2β) }
    Tilde { beta: f64, at_least: usize },
    /// sup over N(s) = k of the same functional
    TildeExactly { beta: f64, k: usize },
}

pub fn continuum_t(sample: &PppSample, nu: f64, variant: ContinuumVariant) -> Result<f64> {
    let base = SolveParams::quadratic(nu);
    let penalty = |beta: f64| -> Result<f64> {
        if !(beta > 0.0 && beta.is_finite()) {
            return domain(format!("beta must be positive, got {beta}"));
        }
        Ok(1.0 / (2.0 * beta))
    };
    let params = match variant {
        ContinuumVariant::T => base,
        ContinuumVariant::TopL { l } => base.with_window(WeightWindow::TopL(l)),
        ContinuumVariant::Tilde { beta, at_least } => {
            let c = if at_least == 0 {
                Cardinality::Any
            } else {
                Cardinality::AtLeast(at_least)
            };
            base.with_kappa(penalty(beta)?).with_cardinality(c)
        }
        ContinuumVariant::TildeExactly { beta, k } => {
            base.with_kappa(penalty(beta)?).with_cardinality(Cardinality::Exactly(k))
        }
    };
    Ok(solve(&sample.points, &params)?.value)
}

/// 𝒯̂_β = sup over 1-Lipschitz paths of { π(s) − Ênt(s)/β }.
pub fn continuum_hat_t(sample: &PppSample, beta: f64) -> Result<f64> {
    if !(beta > 0.0 && beta.is_finite()) {
        return domain(format!("beta must be positive, got {beta}"));
    }
    let params = SolveParams::quadratic(beta).with_entropy(EntropyKind::Lipschitz);
    Ok(solve(&sample.points, &params)?.value / beta)
}

/// max over points of w − x²/(2βt); `None` for an empty sample.
pub fn w_beta(sample: &PppSample, beta: f64) -> Result<Option<f64>> {
    if !(beta > 0.0 && beta.is_finite()) {
        return domain(format!("beta must be positive, got {beta}"));
    }
    Ok(sample
        .points
        .iter()
        .map(|p| p.w - p.x * p.x / (2.0 * beta * p.t))
        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v)))))
}

/// Heat kernel ρ(t, x) = (2πt)^{−1/2} e^{−x²/(2t)}.
pub fn heat_kernel(t: f64, x: f64) -> f64 {
    (-x * x / (2.0 * t)).exp() / (2.0 * std::f64::consts::PI * t).sqrt()
}

/// Σ w ρ(t, x) over the points of a sample.
pub fn w0_of(sample: &PppSample) -> f64 {
    sample.points.iter().map(|p| p.w * heat_kernel(p.t, p.x)).sum()
}

/// Truncated 𝒲₀: Σ w ρ(t, x) over the points with w > ε on
/// `[0,1] × [−K, K]`. Lowering ε or raising K only adds nonnegative terms,
/// so on coupled samples the estimate increases towards 𝒲₀.
pub fn sample_w0(alpha: f64, eps: f64, k: f64, seed: u64) -> Result<f64> {
    let s = sample_ppp(alpha, k, Truncation::Floor { eps }, seed)?;
    Ok(w0_of(&s))
}

/// Truncated 𝒲₀ at several floors from one sample at the lowest floor.
pub fn sample_w0_nested(alpha: f64, floors: &[f64], k: f64, seed: u64) -> Result<Vec<f64>> {
    let lowest = floors.iter().copied().fold(f64::INFINITY, f64::min);
    let base = sample_ppp(alpha, k, Truncation::Floor { eps: lowest }, seed)?;
    floors
        .iter()
        .map(|&e| restrict_floor(&base, e).map(|s| w0_of(&s)))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticalKind {
    /// β_c = inf { β : T̃_β > 0 }
    Tilde,
    /// β̂_c = inf { β : 𝒯̂_β > 0 }
    Hat,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalMc {
    pub replicas: usize,
    /// number of heaviest points kept per replica
    pub l: usize,
    /// spatial half-width of the box; the hat problem always uses q = 1
    pub q: f64,
    pub seed: u64,
    pub bootstrap: usize,
}

/// Per-replica critical points and their summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalEstimate {
    pub kind: CriticalKind,
    pub alpha: f64,
    pub thresholds: Vec<f64>,
    /// replicas whose threshold hit an end of the search range
    pub clamped: usize,
    pub median: f64,
    pub ci95: (f64, f64),
    /// thresholds recomputed with 2ℓ points on the same samples
    pub thresholds_doubled: Vec<f64>,
    pub median_doubled: f64,
    pub relative_truncation_shift: f64,
}

pub const BETA_SEARCH_RANGE: (f64, f64) = (1e-4, 1e4);
pub const BETA_SEARCH_ITERATIONS: usize = 40;

fn positive_at(kind: CriticalKind, s: &PppSample, beta: f64) -> Result<bool> {
    Ok(match kind {
        CriticalKind::Tilde => continuum_t(s, 1.0, ContinuumVariant::Tilde { beta, at_least: 0 })? > 0.0,
        CriticalKind::Hat => continuum_hat_t(s, beta)? > 0.0,
    })
}

/// Bisection in log β for the positivity threshold of one sample.
/// Returns the threshold and whether it was clamped to the search range.
pub fn critical_point(kind: CriticalKind, sample: &PppSample) -> Result<(f64, bool)> {
    let (mut lo, mut hi) = (BETA_SEARCH_RANGE.0.ln(), BETA_SEARCH_RANGE.1.ln());
    let at_lo = positive_at(kind, sample, lo.exp())?;
    let at_hi = positive_at(kind, sample, hi.exp())?;
    if at_lo {
        return Ok((lo.exp(), true));
    }
    if !at_hi {
        return Ok((hi.exp(), true));
    }
    for _ in 0..BETA_SEARCH_ITERATIONS {
        let mid = 0.5 * (lo + hi);
        if positive_at(kind, sample, mid.exp())? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    if positive_at(kind, sample, lo.exp())? || !positive_at(kind, sample, hi.exp())? {
        return Err(Error::Invariant("positivity is not monotone in beta".into()));
    }
    Ok(((0.5 * (lo + hi)).exp(), false))
}

pub fn estimate_beta_c(alpha: f64, kind: CriticalKind, mc: &CriticalMc) -> Result<CriticalEstimate> {
    match kind {
        CriticalKind::Hat if !(alpha > 0.0 && alpha < 0.5) => {
            return domain(format!("the hat critical point needs alpha in (0, 1/2), got {alpha}"));
        }
        CriticalKind::Tilde if !(alpha > 0.5 && alpha < 2.0) => {
            return domain(format!("the tilde critical point needs alpha in (1/2, 2), got {alpha}"));
        }
        _ => {}
    }
    if mc.replicas == 0 || mc.l == 0 {
        return domain("need at least one replica and one point");
    }
    let q = match kind {
        CriticalKind::Hat => 1.0,
        CriticalKind::Tilde => mc.q,
    };
    let mut thresholds = Vec::with_capacity(mc.replicas);
    let mut doubled = Vec::with_capacity(mc.replicas);
    let mut clamped = 0;
    for r in 0..mc.replicas {
        let seed = derive_seed(mc.seed, &[r as u64]);
        let big = sample_ppp(alpha, q, Truncation::Top { l: 2 * mc.l }, seed)?;
        let small = restrict_top(&big, mc.l)?;
        let (b1, c1) = critical_point(kind, &small)?;
        let (b2, _) = critical_point(kind, &big)?;
        clamped += c1 as usize;
        thresholds.push(b1);
        doubled.push(b2);
    }
    let median = stats::median(&thresholds);
    let median_doubled = stats::median(&doubled);
    let ci95 = stats::bootstrap_median_ci(&thresholds, mc.bootstrap.max(1), 0.95, derive_seed(mc.seed, &[u64::MAX]));
    Ok(CriticalEstimate {
        kind,
        alpha,
        thresholds,
        clamped,
        median,
        ci95,
        thresholds_doubled: doubled,
        median_doubled,
        relative_truncation_shift: (median_doubled - median).abs() / median,
    })
}
