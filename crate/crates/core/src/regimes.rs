//! Transversal scale h_n, predicted exponents, and the classification of
//! coupling schedules β_n into the five weak-coupling regimes together with
//! the normalization each regime calls for.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::environment::{SlowlyVarying, TailParams};
use crate::error::{domain, Error, Result};
use crate::polymer::Centering;

const EXP_TOL: f64 = 1e-12;

/// Coupling schedule n ↦ β_n.
#[derive(Clone)]
pub enum BetaSchedule {
    /// β_n = β̂ n^{−γ} (ln n)^κ
    PowerLaw {
        gamma: f64,
        beta_hat: f64,
        log_power: f64,
    },
    Explicit(Arc<dyn Fn(usize) -> f64 + Send + Sync>),
}

impl fmt::Debug for BetaSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BetaSchedule::PowerLaw {
                gamma,
                beta_hat,
                log_power,
            } => f
                .debug_struct("PowerLaw")
                .field("gamma", gamma)
                .field("beta_hat", beta_hat)
                .field("log_power", log_power)
                .finish(),
            BetaSchedule::Explicit(_) => f.write_str("Explicit(..)"),
        }
    }
}

/// Serializable form of a power-law schedule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerLawSpec {
    pub gamma: f64,
    #[serde(default = "one")]
    pub beta_hat: f64,
    #[serde(default)]
    pub log_power: f64,
}

fn one() -> f64 {
    1.0
}

impl From<PowerLawSpec> for BetaSchedule {
    fn from(s: PowerLawSpec) -> Self {
        BetaSchedule::PowerLaw {
            gamma: s.gamma,
            beta_hat: s.beta_hat,
            log_power: s.log_power,
        }
    }
}

impl BetaSchedule {
    pub fn power_law(gamma: f64, beta_hat: f64) -> Self {
        BetaSchedule::PowerLaw {
            gamma,
            beta_hat,
            log_power: 0.0,
        }
    }

    pub fn explicit(f: impl Fn(usize) -> f64 + Send + Sync + 'static) -> Self {
        BetaSchedule::Explicit(Arc::new(f))
    }

    pub fn beta(&self, n: usize) -> f64 {
        match self {
            BetaSchedule::PowerLaw {
                gamma,
                beta_hat,
                log_power,
            } => {
                let nf = n as f64;
                let l = if *log_power == 0.0 { 1.0 } else { nf.ln().powf(*log_power) };
                beta_hat * nf.powf(-gamma) * l
            }
            BetaSchedule::Explicit(f) => f(n),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Clamp {
    /// no balance point; energy too weak, diffusive scale √n
    Lower,
    /// no balance point; energy dominates, ballistic scale n
    Upper,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HnSolution {
    pub h: f64,
    pub clamp: Option<Clamp>,
    /// (β_n m(nh) − h²/n) / (h²/n) at the returned h
    pub relative_residual: f64,
}

/// Solve β_n m(n h) = h²/n for h ∈ [√n, n].
///
/// For α > 1/2 the ratio β_n m(nh) n / h² decreases in h and the root is
/// found by bisection in ln h. For α ≤ 1/2 the balance is never stable; the
/// scale is n when β_n m(n²) > n and √n otherwise.
pub fn solve_hn(n: usize, beta_n: f64, tail: &TailParams) -> Result<HnSolution> {
    if n < 2 {
        return domain("h_n needs n >= 2");
    }
    if !(beta_n >= 0.0 && beta_n.is_finite()) {
        return domain(format!("beta_n must be finite and >= 0, got {beta_n}"));
    }
    let nf = n as f64;
    let (lo_h, hi_h) = (nf.sqrt(), nf);
    let residual = |h: f64| -> f64 {
        let target = h * h / nf;
        (beta_n * tail.m_of_unchecked_pub(nf * h) - target) / target
    };
    let finish = |h: f64, clamp| HnSolution {
        h,
        clamp,
        relative_residual: residual(h),
    };
    if beta_n == 0.0 {
        return Ok(finish(lo_h, Some(Clamp::Lower)));
    }
    // ln(β m(nh)) − ln(h²/n)
    let g = |lh: f64| -> f64 {
        let h = lh.exp();
        beta_n.ln() + tail.m_of_unchecked_pub(nf * h).ln() - (2.0 * lh - nf.ln())
    };
    let (mut a, mut b) = (lo_h.ln(), hi_h.ln());
    if tail.alpha() <= 0.5 {
        return Ok(if g(b) > 0.0 {
            finish(hi_h, Some(Clamp::Upper))
        } else {
            finish(lo_h, Some(Clamp::Lower))
        });
    }
    if g(a) <= 0.0 {
        return Ok(finish(lo_h, Some(Clamp::Lower)));
    }
    if g(b) >= 0.0 {
        return Ok(finish(hi_h, Some(Clamp::Upper)));
    }
    while b - a > 1e-13 {
        let mid = 0.5 * (a + b);
        if g(mid) > 0.0 {
            a = mid;
        } else {
            b = mid;
        }
        if mid == a && mid == b {
            break;
        }
    }
    Ok(finish((0.5 * (a + b)).exp(), None))
}

/// Closed form of h_n for a constant L and a pure power law,
/// h = (β̂ c^{1/α})^{α/(2α−1)} n^{(1+α(1−γ))/(2α−1)}.
pub fn closed_form_hn(n: usize, schedule: &BetaSchedule, tail: &TailParams) -> Option<f64> {
    let a = tail.alpha();
    match (schedule, tail.slowly_varying()) {
        (
            BetaSchedule::PowerLaw {
                gamma,
                beta_hat,
                log_power,
            },
            SlowlyVarying::Constant { c },
        ) if *log_power == 0.0 && a > 0.5 => {
            let d = 2.0 * a - 1.0;
            let pref = (beta_hat * c.powf(1.0 / a)).powf(a / d);
            Some(pref * (n as f64).powf((1.0 + a * (1.0 - gamma)) / d))
        }
        _ => None,
    }
}

/// Predicted transversal exponent ξ(α, γ) for β_n = n^{−γ}.
pub fn predicted_xi(alpha: f64, gamma: f64) -> Option<f64> {
    if !(alpha > 0.0) || !gamma.is_finite() {
        return None;
    }
    let kpz_edge = if gamma < 1.0 {
        (5.0 - 2.0 * gamma) / (1.0 - gamma)
    } else {
        f64::INFINITY
    };
    if alpha >= kpz_edge && (-0.5..=0.25).contains(&gamma) {
        return Some(2.0 * (1.0 - gamma) / 3.0);
    }
    let lower = 2.0 / alpha - 1.0;
    let upper = 3.0 / (2.0 * alpha);
    if (alpha - 0.5).abs() < EXP_TOL && (gamma - lower).abs() < EXP_TOL {
        return None;
    }
    if alpha > 0.5 && alpha <= kpz_edge && gamma >= lower && gamma <= upper {
        return Some((1.0 + alpha * (1.0 - gamma)) / (2.0 * alpha - 1.0));
    }
    if alpha > 0.5 {
        if gamma > upper {
            return Some(0.5);
        }
        if gamma < lower {
            return Some(1.0);
        }
        return None;
    }
    // α ≤ 1/2: no intermediate scale
    if gamma > lower {
        Some(0.5)
    } else if gamma < lower {
        Some(1.0)
    } else {
        None
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegimeLabel {
    R1,
    R2,
    /// split into R3a / R3b by the sign of T̃^{(≥1)}_β
    R3,
    R3a,
    R3b,
    R4,
    R5,
    #[serde(rename = "alpha-small-n-scale")]
    AlphaSmallNScale,
    #[serde(rename = "alpha-small-sqrt-scale")]
    AlphaSmallSqrtScale,
    #[serde(rename = "boundary")]
    Boundary,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Wrapper {
    /// a (log Z − C)
    Identity,
    /// a log(log Z − C)
    Log,
    /// a log(√n (log Z − C))
    LogSqrtN,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitObject {
    /// 𝒯̂_β
    HatT,
    /// 𝒯_1
    T1,
    /// T̃_β
    TildeT,
    /// T̃^{(≥1)}_β
    TildeTAtLeastOne,
    /// W_1
    W1,
    /// 2 𝒲_β^{(α)}
    TwoWBeta,
    /// 2 𝒲_0^{(α)}
    TwoW0,
}

/// How to rescale log Z at size n.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub description: String,
    /// multiplicative prefactor a_n evaluated at the probe size
    pub prefactor: f64,
    /// per-step centering applied (None when the indicator is off)
    pub centering: Centering,
    /// total centering C = n β_n c
    pub centering_total: f64,
    pub wrapper: Wrapper,
    pub limit: LimitObject,
}

impl Normalizer {
    /// Apply the recipe to `log Z` at size n. NaN when a log wrapper meets a
    /// nonpositive argument.
    pub fn apply(&self, log_z: f64, n: usize) -> f64 {
        let c = log_z - self.centering_total;
        match self.wrapper {
            Wrapper::Identity => self.prefactor * c,
            Wrapper::Log => {
                if c > 0.0 {
                    self.prefactor * c.ln()
                } else {
                    f64::NAN
                }
            }
            Wrapper::LogSqrtN => {
                if c > 0.0 {
                    self.prefactor * ((n as f64).sqrt() * c).ln()
                } else {
                    f64::NAN
                }
            }
        }
    }
}

/// Limit of coef · n^a (ln n)^l as n → ∞.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum Limit {
    Zero,
    Finite(f64),
    Infinite,
}

fn symbolic_limit(coef: f64, a: f64, l: f64) -> Limit {
    if a > EXP_TOL || (a.abs() <= EXP_TOL && l > EXP_TOL) {
        Limit::Infinite
    } else if a < -EXP_TOL || (a.abs() <= EXP_TOL && l < -EXP_TOL) {
        Limit::Zero
    } else {
        Limit::Finite(coef)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeReport {
    pub label: RegimeLabel,
    pub alpha: f64,
    pub n: usize,
    pub beta_n: f64,
    pub h_n: f64,
    pub h_clamp: Option<Clamp>,
    pub xi: Option<f64>,
    /// limits of β_n n^{-1} m(n²), β_n (ln n)^{-1} m(n^{3/2} √ln n), β_n m(n^{3/2})
    pub q1: Limit,
    pub q3: Limit,
    pub q5: Limit,
    /// the β of the defining limit, when finite
    pub beta: Option<f64>,
    pub normalizer: Option<Normalizer>,
    /// further recipes: both halves of R3, or the √n recipe conditional on
    /// 𝒯̂_β = 0 for α < 1/2
    pub alternatives: Vec<Normalizer>,
    /// n^{-1} m(n²) / m(n^{3/2}) at the probe size, reported at α = 1/2
    pub boundary_ratio: Option<f64>,
    /// true when the limits were probed numerically
    pub heuristic: bool,
}

/// Centering constant c of the per-step recentring.
pub fn centering_constant(tail: &TailParams, beta: f64, kind: Centering) -> Result<f64> {
    kind.constant(tail, beta)
}

struct Quantities {
    q1: f64,
    q3: f64,
    q5: f64,
}

fn quantities(tail: &TailParams, beta: f64, n: usize) -> Quantities {
    let nf = n as f64;
    let ln = nf.ln();
    Quantities {
        q1: beta / nf * tail.m_of_unchecked_pub(nf * nf),
        q3: beta / ln * tail.m_of_unchecked_pub(nf.powf(1.5) * ln.sqrt()),
        q5: beta * tail.m_of_unchecked_pub(nf.powf(1.5)),
    }
}

fn normalizers(
    label: RegimeLabel,
    tail: &TailParams,
    beta_n: f64,
    n: usize,
    h_n: f64,
) -> Result<Normalizer> {
    let a = tail.alpha();
    let nf = n as f64;
    let m = |x: f64| tail.m_of_unchecked_pub(x);
    let total = |c: Centering| -> Result<f64> { Ok(nf * beta_n * c.constant(tail, beta_n)?) };
    let mean_if = |on: bool| if on { Centering::Mean } else { Centering::None };
    let trunc_if = |on: bool| if on { Centering::TruncatedMean } else { Centering::None };
    let nh = m(nf * h_n);
    let (description, prefactor, centering, wrapper, limit) = match label {
        RegimeLabel::R1 | RegimeLabel::AlphaSmallNScale => (
            "log Z / (beta_n m(n^2))",
            1.0 / (beta_n * m(nf * nf)),
            Centering::None,
            Wrapper::Identity,
            LimitObject::HatT,
        ),
        RegimeLabel::R2 => (
            "(log Z - n beta_n E[w] 1{alpha>=3/2}) / (beta_n m(n h_n))",
            1.0 / (beta_n * nh),
            mean_if(a >= 1.5),
            Wrapper::Identity,
            LimitObject::T1,
        ),
        RegimeLabel::R3 | RegimeLabel::R3a => (
            "(log Z - n beta_n E[w] 1{alpha>=3/2}) / (beta_n m(n h_n))",
            1.0 / (beta_n * nh),
            mean_if(a >= 1.5),
            Wrapper::Identity,
            LimitObject::TildeT,
        ),
        RegimeLabel::R3b => (
            "log(log Z - n beta_n E[w 1{w<=1/beta_n}] 1{alpha>=1}) / (beta_n m(n h_n))",
            1.0 / (beta_n * nh),
            trunc_if(a >= 1.0),
            Wrapper::Log,
            LimitObject::TildeTAtLeastOne,
        ),
        RegimeLabel::R4 => (
            "log(sqrt(n) (log Z - n beta_n E[w 1{w<=1/beta_n}] 1{alpha>=1})) / (beta_n m(n h_n))",
            1.0 / (beta_n * nh),
            trunc_if(a >= 1.0),
            Wrapper::LogSqrtN,
            LimitObject::W1,
        ),
        RegimeLabel::R5 => {
            let k = m(nf.powf(1.5));
            (
                "sqrt(n) (log Z - n beta_n E[w 1{w<=m(n^1.5)}] 1{alpha>=1}) / (beta_n m(n^1.5))",
                nf.sqrt() / (beta_n * k),
                if a >= 1.0 {
                    Centering::TruncatedMeanAt { k }
                } else {
                    Centering::None
                },
                Wrapper::Identity,
                LimitObject::TwoWBeta,
            )
        }
        RegimeLabel::AlphaSmallSqrtScale => (
            "sqrt(n) log Z / (beta_n m(n^1.5))",
            nf.sqrt() / (beta_n * m(nf.powf(1.5))),
            Centering::None,
            Wrapper::Identity,
            LimitObject::TwoW0,
        ),
        RegimeLabel::Boundary => {
            return Err(Error::Unsupported("no normalization at alpha = 1/2".into()))
        }
    };
    Ok(Normalizer {
        description: description.to_string(),
        prefactor,
        centering,
        centering_total: total(centering)?,
        wrapper,
        limit,
    })
}

/// Classify a schedule at probe size `n`.
///
/// Power laws are classified from exponents. For a constant L,
/// m(x) = (c x)^{1/α}; for L = (ln(e+x))^b, m(x) ≍ x^{1/α} (ln x / α)^{b/α},
/// which adds b/α to every log exponent. Explicit schedules are probed at
/// n, 4n and 16n: a quantity is taken to diverge when it grows by more than
/// 5% per quadrupling at both steps, to vanish when it shrinks by more than
/// 5% at both steps, and to converge otherwise. This is a heuristic.
pub fn classify(tail: &TailParams, schedule: &BetaSchedule, n: usize) -> Result<RegimeReport> {
    let a = tail.alpha();
    if !(a > 0.0 && a < 2.0) {
        return Err(Error::Unsupported(format!("alpha = {a} is outside (0,2)")));
    }
    if n < 2 {
        return domain("probe size must be >= 2");
    }
    let beta_n = schedule.beta(n);
    if !(beta_n > 0.0 && beta_n.is_finite()) {
        return domain(format!("beta_n must be positive, got {beta_n}"));
    }
    let now = quantities(tail, beta_n, n);
    let (q1, q3, q5, heuristic) = match schedule {
        BetaSchedule::PowerLaw {
            gamma,
            beta_hat,
            log_power,
        } => {
            let (cst, lb) = match tail.slowly_varying() {
                SlowlyVarying::Constant { c } => (c.powf(1.0 / a), 0.0),
                SlowlyVarying::LogPower { b } => (1.0, b / a),
            };
            let lp = |scale: f64| match tail.slowly_varying() {
                SlowlyVarying::Constant { .. } => 1.0,
                SlowlyVarying::LogPower { b } => (scale / a).powf(b / a),
            };
            let g = *gamma;
            (
                symbolic_limit(beta_hat * cst * lp(2.0), -g - 1.0 + 2.0 / a, log_power + lb),
                symbolic_limit(
                    beta_hat * cst * lp(1.5),
                    -g + 1.5 / a,
                    log_power - 1.0 + 0.5 / a + lb,
                ),
                symbolic_limit(beta_hat * cst * lp(1.5), -g + 1.5 / a, log_power + lb),
                false,
            )
        }
        BetaSchedule::Explicit(_) => {
            let q4 = quantities(tail, schedule.beta(4 * n), 4 * n);
            let q16 = quantities(tail, schedule.beta(16 * n), 16 * n);
            let judge = |x0: f64, x1: f64, x2: f64| {
                let (r1, r2) = (x1 / x0, x2 / x1);
                if r1 > 1.05 && r2 > 1.05 {
                    Limit::Infinite
                } else if r1 < 0.95 && r2 < 0.95 {
                    Limit::Zero
                } else {
                    Limit::Finite(x2)
                }
            };
            (
                judge(now.q1, q4.q1, q16.q1),
                judge(now.q3, q4.q3, q16.q3),
                judge(now.q5, q4.q5, q16.q5),
                true,
            )
        }
    };
    let hn = solve_hn(n, beta_n, tail)?;
    let xi = match schedule {
        BetaSchedule::PowerLaw {
            gamma, log_power, ..
        } if *log_power == 0.0 => predicted_xi(a, *gamma),
        _ => None,
    };
    let finite = |l: Limit| match l {
        Limit::Finite(v) => Some(v),
        _ => None,
    };
    let mut report = RegimeReport {
        label: RegimeLabel::Boundary,
        alpha: a,
        n,
        beta_n,
        h_n: hn.h,
        h_clamp: hn.clamp,
        xi,
        q1,
        q3,
        q5,
        beta: None,
        normalizer: None,
        alternatives: vec![],
        boundary_ratio: None,
        heuristic,
    };
    if (a - 0.5).abs() < EXP_TOL {
        let nf = n as f64;
        report.boundary_ratio =
            Some(tail.m_of_unchecked_pub(nf * nf) / nf / tail.m_of_unchecked_pub(nf.powf(1.5)));
        return Ok(report);
    }
    let nrm = |l: RegimeLabel| normalizers(l, tail, beta_n, n, hn.h);
    if a < 0.5 {
        match q1 {
            Limit::Infinite => {
                report.label = RegimeLabel::R1;
                report.normalizer = Some(nrm(RegimeLabel::R1)?);
            }
            Limit::Finite(b) => {
                report.label = RegimeLabel::AlphaSmallNScale;
                report.beta = Some(b);
                report.normalizer = Some(nrm(RegimeLabel::AlphaSmallNScale)?);
                report.alternatives = vec![nrm(RegimeLabel::AlphaSmallSqrtScale)?];
            }
            Limit::Zero => {
                report.label = RegimeLabel::AlphaSmallSqrtScale;
                report.beta = Some(0.0);
                report.normalizer = Some(nrm(RegimeLabel::AlphaSmallSqrtScale)?);
            }
        }
        return Ok(report);
    }
    let label = match (q1, q3, q5) {
        (Limit::Infinite | Limit::Finite(_), _, _) => {
            report.beta = finite(q1);
            RegimeLabel::R1
        }
        (Limit::Zero, Limit::Infinite, _) => RegimeLabel::R2,
        (Limit::Zero, Limit::Finite(b), _) => {
            report.beta = Some(b);
            RegimeLabel::R3
        }
        (Limit::Zero, Limit::Zero, Limit::Infinite) => RegimeLabel::R4,
        (Limit::Zero, Limit::Zero, l) => {
            report.beta = Some(finite(l).unwrap_or(0.0));
            RegimeLabel::R5
        }
    };
    report.label = label;
    report.normalizer = Some(nrm(label)?);
    if label == RegimeLabel::R3 {
        report.alternatives = vec![nrm(RegimeLabel::R3a)?, nrm(RegimeLabel::R3b)?];
    }
    Ok(report)
}

/// Resolve R3 into R3a (β > β_c) or R3b (β < β_c) given an estimate of β_c.
pub fn split_r3(report: &RegimeReport, beta_c: f64) -> Result<RegimeReport> {
    if report.label != RegimeLabel::R3 {
        return domain("only an R3 report can be split");
    }
    let beta = report.beta.unwrap_or(f64::NAN);
    let label = if beta > beta_c {
        RegimeLabel::R3a
    } else {
        RegimeLabel::R3b
    };
    let mut out = report.clone();
    out.label = label;
    out.normalizer = report
        .alternatives
        .iter()
        .find(|n| {
            n.limit
                == if label == RegimeLabel::R3a {
                    LimitObject::TildeT
                } else {
                    LimitObject::TildeTAtLeastOne
                }
        })
        .cloned();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn xi_examples() {
        assert_eq!(predicted_xi(1.0, 1.25), Some(0.75));
        assert_eq!(predicted_xi(2.0, 0.0), Some(1.0));
        assert_eq!(predicted_xi(0.3, 6.0), Some(0.5));
        assert_eq!(predicted_xi(0.3, 2.0), Some(1.0));
        assert_eq!(predicted_xi(1.0, 3.0), Some(0.5));
        assert!((predicted_xi(6.0, 0.0).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn symbolic_limits() {
        assert_eq!(symbolic_limit(2.0, 0.0, 0.0), Limit::Finite(2.0));
        assert_eq!(symbolic_limit(2.0, 0.1, -5.0), Limit::Infinite);
        assert_eq!(symbolic_limit(2.0, 0.0, -0.5), Limit::Zero);
    }
}
