//! Heavy-tailed disorder: the tail law, its quantile function m(x), sampled
//! fields on lattice boxes and their ordered statistics.
//!
//! Weights are drawn by inverse transform, `ω = m(1/U)`, with `U` taken from
//! [`crate::rng::site_uniform`], a SplitMix64 counter hash of
//! `(seed, i, x)`. A field is therefore a pure function of
//! `(n, h, tail, seed)`, and fields on nested boxes agree where they overlap.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::numeric::{integrate, log_add};
use crate::rng::site_uniform;

/// sup_x x / ((e + x) ln(e + x)), rounded up.
const LOG_POWER_SLOPE_MAX: f64 = 0.317_844_43;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SlowlyVarying {
    /// L(x) = c
    Constant { c: f64 },
    /// L(x) = (ln(e + x))^b
    LogPower { b: f64 },
}

impl Default for SlowlyVarying {
    fn default() -> Self {
        SlowlyVarying::Constant { c: 1.0 }
    }
}

/// Tail law `P(ω > x) = min(1, L(x) x^{-α})`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TailSpec", into = "TailSpec")]
pub struct TailParams {
    alpha: f64,
    slowly_varying: SlowlyVarying,
    edge: f64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TailSpec {
    alpha: f64,
    #[serde(default)]
    slowly_varying: SlowlyVarying,
}

impl TryFrom<TailSpec> for TailParams {
    type Error = Error;
    fn try_from(s: TailSpec) -> Result<Self> {
        TailParams::new(s.alpha, s.slowly_varying)
    }
}

impl From<TailParams> for TailSpec {
    fn from(t: TailParams) -> Self {
        TailSpec {
            alpha: t.alpha,
            slowly_varying: t.slowly_varying,
        }
    }
}

/// ln(e + e^u) for any real u.
#[inline]
fn ln_e_plus_exp(u: f64) -> f64 {
    log_add(1.0, u)
}

impl TailParams {
    pub fn new(alpha: f64, slowly_varying: SlowlyVarying) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 2.0) {
            return domain(format!("tail exponent must lie in (0,2), got {alpha}"));
        }
        let edge = match slowly_varying {
            SlowlyVarying::Constant { c } => {
                if !(c > 0.0 && c.is_finite()) {
                    return domain(format!("constant L must be positive and finite, got {c}"));
                }
                c.powf(1.0 / alpha)
            }
            SlowlyVarying::LogPower { b } => {
                if !b.is_finite() || b * LOG_POWER_SLOPE_MAX >= alpha {
                    return domain(format!(
                        "log-power L with b={b} does not give a monotone survival function for alpha={alpha}"
                    ));
                }
                // solve b ln ln(e + e^u) = α u
                let f = |u: f64| b * ln_e_plus_exp(u).ln() - alpha * u;
                let (mut lo, mut hi) = (-1.0, 1.0);
                while f(lo) <= 0.0 {
                    lo *= 2.0;
                }
                while f(hi) >= 0.0 {
                    hi *= 2.0;
                }
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if f(mid) > 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                    if hi - lo <= 1e-15 * hi.abs().max(1.0) {
                        break;
                    }
                }
                (0.5 * (lo + hi)).exp()
            }
        };
        Ok(TailParams {
            alpha,
            slowly_varying,
            edge,
        })
    }

    /// Pure Pareto on `[1, ∞)`.
    pub fn pareto(alpha: f64) -> Result<Self> {
        Self::new(alpha, SlowlyVarying::Constant { c: 1.0 })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn slowly_varying(&self) -> SlowlyVarying {
        self.slowly_varying
    }

    /// Left edge of the support: the point where `L(x) x^{-α}` reaches 1.
    pub fn support_edge(&self) -> f64 {
        self.edge
    }

    /// ln L(x) - α ln x, without the clamp at 1.
    #[inline]
    fn ln_tail_unclamped(&self, x: f64) -> f64 {
        match self.slowly_varying {
            SlowlyVarying::Constant { c } => c.ln() - self.alpha * x.ln(),
            SlowlyVarying::LogPower { b } => b * ln_e_plus_exp(x.ln()).ln() - self.alpha * x.ln(),
        }
    }

    /// ln P(ω > x) for x > 0.
    pub fn ln_survival(&self, x: f64) -> Result<f64> {
        if !(x > 0.0) {
            return domain(format!("survival needs x > 0, got {x}"));
        }
        Ok(self.ln_survival_unchecked(x))
    }

    #[inline]
    fn ln_survival_unchecked(&self, x: f64) -> f64 {
        if x <= self.edge {
            0.0
        } else {
            self.ln_tail_unclamped(x).min(0.0)
        }
    }

    /// P(ω > x) for x > 0.
    pub fn survival(&self, x: f64) -> Result<f64> {
        if !(x > 0.0) {
            return domain(format!("survival needs x > 0, got {x}"));
        }
        Ok(self.survival_unchecked(x))
    }

    #[inline]
    fn survival_unchecked(&self, x: f64) -> f64 {
        if x <= self.edge {
            return 1.0;
        }
        match self.slowly_varying {
            SlowlyVarying::Constant { c } => (c * x.powf(-self.alpha)).min(1.0),
            SlowlyVarying::LogPower { .. } => self.ln_tail_unclamped(x).exp().min(1.0),
        }
    }

    /// The quantile `m(x) = F^{-1}(1 - 1/x)`, for x > 1.
    pub fn m_of(&self, x: f64) -> Result<f64> {
        if !(x > 1.0) || x.is_nan() {
            return domain(format!("m(x) needs x > 1, got {x}"));
        }
        Ok(self.m_of_unchecked(x))
    }

    /// m(x) without the domain check; callers guarantee x > 1.
    pub(crate) fn m_of_unchecked_pub(&self, x: f64) -> f64 {
        self.m_of_unchecked(x)
    }

    fn m_of_unchecked(&self, x: f64) -> f64 {
        match self.slowly_varying {
            SlowlyVarying::Constant { c } => {
                if c == 1.0 {
                    x.powf(1.0 / self.alpha)
                } else {
                    (c * x).powf(1.0 / self.alpha)
                }
            }
            SlowlyVarying::LogPower { b } => {
                // ln S(e^u) = -ln x, decreasing in u on [ln edge, ∞)
                let target = -x.ln();
                let alpha = self.alpha;
                let f = |u: f64| b * ln_e_plus_exp(u).ln() - alpha * u - target;
                let mut lo = self.edge.ln();
                let mut step = 1.0;
                let mut hi = lo + step;
                while f(hi) >= 0.0 {
                    lo = hi;
                    step *= 2.0;
                    hi = lo + step;
                }
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if f(mid) > 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                    if hi - lo <= 1e-14 {
                        break;
                    }
                }
                (0.5 * (lo + hi)).exp()
            }
        }
    }

    /// Draw a weight from a uniform variate on (0, 1).
    #[inline]
    pub fn weight_from_uniform(&self, u: f64) -> f64 {
        match self.slowly_varying {
            SlowlyVarying::Constant { c } => ((c / u).ln() / self.alpha).exp(),
            SlowlyVarying::LogPower { .. } => self.m_of_unchecked(1.0 / u),
        }
    }

    /// ∫_{edge}^{t} S(x) dx, for t ≥ edge.
    fn survival_integral(&self, t: f64) -> f64 {
        let x0 = self.edge;
        if t <= x0 {
            return 0.0;
        }
        match self.slowly_varying {
            SlowlyVarying::Constant { c } => {
                let a = self.alpha;
                if (a - 1.0).abs() < 1e-12 {
                    c * (t / x0).ln()
                } else {
                    c * (x0.powf(1.0 - a) - t.powf(1.0 - a)) / (a - 1.0)
                }
            }
            SlowlyVarying::LogPower { .. } => {
                let (u0, u1) = (x0.ln(), t.ln());
                integrate(
                    |u| (self.ln_tail_unclamped(u.exp()) + u).exp(),
                    u0,
                    u1,
                    1e-14 * x0.max(1.0),
                )
            }
        }
    }

    /// E[ω], defined for α > 1.
    pub fn mean(&self) -> Result<f64> {
        let a = self.alpha;
        if !(a > 1.0) {
            return domain(format!("the mean is infinite for alpha = {a} <= 1"));
        }
        let x0 = self.edge;
        Ok(match self.slowly_varying {
            SlowlyVarying::Constant { .. } => x0 * a / (a - 1.0),
            SlowlyVarying::LogPower { .. } => {
                // x = exp(u0 - ln v / (α-1)), v in (0, 1]
                let u0 = x0.ln();
                let pre = ((1.0 - a) * u0).exp() / (a - 1.0);
                let tail = integrate(
                    |v| {
                        if v <= 0.0 {
                            return 0.0;
                        }
                        let x = (u0 - v.ln() / (a - 1.0)).exp();
                        let ln_l = self.ln_tail_unclamped(x) + a * x.ln();
                        pre * ln_l.exp()
                    },
                    0.0,
                    1.0,
                    1e-14 * x0.max(1.0),
                );
                x0 + tail
            }
        })
    }

    /// E[ω 1{ω ≤ t}].
    pub fn truncated_mean(&self, t: f64) -> Result<f64> {
        if t.is_nan() {
            return domain("truncation level is NaN");
        }
        if t == f64::INFINITY {
            return self.mean();
        }
        let x0 = self.edge;
        if t < x0 {
            return Ok(0.0);
        }
        // ∫_0^t (S(x) - S(t)) dx
        let st = self.survival_unchecked(t);
        Ok(x0 + self.survival_integral(t) - t * st)
    }

    /// λ(β, k) = ln E[exp(β ω 1{ω ≤ k})].
    pub fn ln_truncated_mgf(&self, beta: f64, k: f64) -> Result<f64> {
        if !beta.is_finite() || k.is_nan() || k <= 0.0 {
            return domain(format!("invalid truncated mgf arguments beta={beta}, k={k}"));
        }
        let x0 = self.edge;
        if beta == 0.0 || k < x0 {
            return Ok(0.0);
        }
        if k == f64::INFINITY {
            return domain("untruncated exponential moment is infinite");
        }
        // E[(e^{βω} - 1) 1{ω ≤ k}] = ∫_0^k β e^{βx} (S(x) - S(k)) dx
        let sk = self.survival_unchecked(k);
        let flat = (beta * x0).exp_m1() * (1.0 - sk);
        let (u0, u1) = (x0.ln(), k.ln());
        let shift = if beta * k > 0.0 { beta * k } else { 0.0 };
        let scaled = integrate(
            |u| {
                let x = u.exp();
                let s = self.survival_unchecked(x) - sk;
                beta * (beta * x - shift).exp() * s * x
            },
            u0,
            u1,
            1e-16,
        );
        if shift < 600.0 {
            Ok((flat + shift.exp() * scaled).ln_1p())
        } else {
            // 1 + flat is finite because x0 < k
            let a = (flat).ln_1p();
            if scaled <= 0.0 {
                return Ok(a);
            }
            Ok(log_add(a, shift + scaled.ln()))
        }
    }
}

/// i.i.d. weights on Λ_{n,h} = [1,n] × [-h,h].
#[derive(Clone, Debug, PartialEq)]
pub struct DisorderField {
    n: usize,
    h: usize,
    tail: TailParams,
    seed: u64,
    weights: Vec<f64>,
}

impl DisorderField {
    fn check_dims(n: usize, h: usize) -> Result<usize> {
        if n == 0 {
            return domain("field needs n >= 1");
        }
        let width = 2usize
            .checked_mul(h)
            .and_then(|w| w.checked_add(1))
            .and_then(|w| w.checked_mul(n))
            .ok_or_else(|| Error::Domain("field box overflows usize".into()))?;
        if i32::try_from(h).is_err() || u32::try_from(n).is_err() {
            return domain("field extent exceeds 32-bit coordinates");
        }
        Ok(width)
    }

    /// Build a field from a weight function; used for loaded data and tests.
    pub fn from_fn(
        n: usize,
        h: usize,
        tail: TailParams,
        seed: u64,
        mut f: impl FnMut(usize, i64) -> f64,
    ) -> Result<Self> {
        let size = Self::check_dims(n, h)?;
        let mut weights = Vec::with_capacity(size);
        for i in 1..=n {
            for x in -(h as i64)..=(h as i64) {
                let w = f(i, x);
                if !(w.is_finite() && w >= 0.0) {
                    return domain(format!("weight at ({i},{x}) is {w}"));
                }
                weights.push(w);
            }
        }
        Ok(DisorderField {
            n,
            h,
            tail,
            seed,
            weights,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn tail(&self) -> &TailParams {
        &self.tail
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Row-major weights, rows `i = 1..=n`, columns `x = -h..=h`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    #[inline]
    fn index(&self, i: usize, x: i64) -> usize {
        (i - 1) * (2 * self.h + 1) + (x + self.h as i64) as usize
    }

    pub fn contains(&self, i: usize, x: i64) -> bool {
        i >= 1 && i <= self.n && x.unsigned_abs() as usize <= self.h
    }

    /// ω_{i,x}; panics outside the box.
    #[inline]
    pub fn weight(&self, i: usize, x: i64) -> f64 {
        assert!(self.contains(i, x), "site ({i},{x}) outside field box");
        self.weights[self.index(i, x)]
    }

    pub fn get(&self, i: usize, x: i64) -> Option<f64> {
        self.contains(i, x).then(|| self.weights[self.index(i, x)])
    }

    /// Error unless the field covers [1,n] × [-h,h].
    pub fn require_cover(&self, n: usize, h: usize) -> Result<()> {
        if n > self.n || h > self.h {
            return Err(Error::FieldTooSmall {
                n: self.n,
                h: self.h,
                need_n: n,
                need_h: h,
            });
        }
        Ok(())
    }
}

pub fn sample_field(n: usize, h: usize, tail: &TailParams, seed: u64) -> Result<DisorderField> {
    let tail = *tail;
    DisorderField::from_fn(n, h, tail, seed, |i, x| {
        tail.weight_from_uniform(site_uniform(seed, i as u64, x))
    })
}

/// One ordered-statistics entry: weight and lattice position.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedSite {
    pub weight: f64,
    pub i: usize,
    pub x: i64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderedStats {
    pub entries: Vec<RankedSite>,
}

/// Larger weight first; equal weights in lexicographic (i, x) order.
pub fn rank_order(a: &RankedSite, b: &RankedSite) -> Ordering {
    b.weight
        .total_cmp(&a.weight)
        .then(a.i.cmp(&b.i))
        .then(a.x.cmp(&b.x))
}

/// The ℓ largest weights of the whole field.
pub fn ordered_statistics(field: &DisorderField, ell: usize) -> Result<OrderedStats> {
    ordered_statistics_in(field, field.n, field.h, ell)
}

/// The ℓ largest weights over the sub-box Λ_{n,h} of the field.
pub fn ordered_statistics_in(
    field: &DisorderField,
    n: usize,
    h: usize,
    ell: usize,
) -> Result<OrderedStats> {
    field.require_cover(n, h)?;
    let size = n * (2 * h + 1);
    if ell == 0 || ell > size {
        return domain(format!("need 1 <= ell <= {size}, got {ell}"));
    }
    let mut all = Vec::with_capacity(size);
    for i in 1..=n {
        for x in -(h as i64)..=(h as i64) {
            all.push(RankedSite {
                weight: field.weight(i, x),
                i,
                x,
            });
        }
    }
    if ell < size {
        all.select_nth_unstable_by(ell - 1, rank_order);
        all.truncate(ell);
    }
    all.sort_unstable_by(rank_order);
    Ok(OrderedStats { entries: all })
}
