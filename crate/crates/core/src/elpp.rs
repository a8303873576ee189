//! Energy–entropy variational problems over finite chains of space-time
//! points.
//!
//! A chain starts implicitly at `(0, 0)` and visits points in increasing
//! time. Its value is `β Ω(Δ) − Ent(Δ) − κ|Δ|`, accumulated one point at a
//! time from the left. Both [`solve`] and [`brute_force`] use that same
//! accumulation order, so equal chains get bit-equal values.
//!
//! Ties: two values `a`, `b` are tied when `|a − b| ≤ 1e-12 · max(1, |a|, |b|)`.
//! Among tied chains the lexicographically smallest list of indices wins.
//! Indices refer to points sorted by `(t, x)`, and the empty chain comes
//! first.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::environment::{ordered_statistics_in, DisorderField};
use crate::error::{domain, Error, Result};

/// Largest point set accepted by [`solve`].
pub const MAX_POINTS: usize = 50_000;
/// Largest point set accepted by [`brute_force`].
pub const MAX_BRUTE_FORCE_POINTS: usize = 20;

const TIE_RTOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedPoint {
    pub t: f64,
    pub x: f64,
    pub w: f64,
}

impl WeightedPoint {
    pub fn new(t: f64, x: f64, w: f64) -> Self {
        WeightedPoint { t, x, w }
    }

    fn validate(&self) -> Result<()> {
        if !(self.t.is_finite() && self.t > 0.0) {
            return domain(format!("point time must be positive and finite, got {}", self.t));
        }
        if !self.x.is_finite() {
            return domain(format!("point position must be finite, got {}", self.x));
        }
        if !(self.w.is_finite() && self.w >= 0.0) {
            return domain(format!("point weight must be nonnegative and finite, got {}", self.w));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropyKind {
    /// ½ (Δx)² / Δt per step
    Quadratic,
    /// Δt · e(Δx / Δt) per step, infinite above slope 1
    Lipschitz,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "k")]
pub enum Cardinality {
    Any,
    Exactly(usize),
    AtLeast(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "l")]
pub enum WeightWindow {
    All,
    /// Only the ℓ heaviest points may be used.
    TopL(usize),
    /// The ℓ heaviest points stay available but carry weight 0.
    BeyondL(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveParams {
    pub beta: f64,
    pub kappa: f64,
    pub cardinality: Cardinality,
    pub weight_window: WeightWindow,
    pub entropy_kind: EntropyKind,
}

impl SolveParams {
    /// Plain quadratic problem with no penalty and no restriction.
    pub fn quadratic(beta: f64) -> Self {
        SolveParams {
            beta,
            kappa: 0.0,
            cardinality: Cardinality::Any,
            weight_window: WeightWindow::All,
            entropy_kind: EntropyKind::Quadratic,
        }
    }

    pub fn with_kappa(mut self, kappa: f64) -> Self {
        self.kappa = kappa;
        self
    }

    pub fn with_cardinality(mut self, c: Cardinality) -> Self {
        self.cardinality = c;
        self
    }

    pub fn with_window(mut self, w: WeightWindow) -> Self {
        self.weight_window = w;
        self
    }

    pub fn with_entropy(mut self, e: EntropyKind) -> Self {
        self.entropy_kind = e;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return domain(format!("beta must be finite and >= 0, got {}", self.beta));
        }
        if !(self.kappa.is_finite() && self.kappa >= 0.0) {
            return domain(format!("kappa must be finite and >= 0, got {}", self.kappa));
        }
        Ok(())
    }
}

/// Optimal value and a chain attaining it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub value: f64,
    /// Indices into the input slice, in chain order.
    pub chain: Vec<usize>,
}

impl Solution {
    pub fn points<'a>(&self, points: &'a [WeightedPoint]) -> Vec<&'a WeightedPoint> {
        self.chain.iter().map(|&k| &points[k]).collect()
    }
}

/// e(u) = ½(1+u)ln(1+u) + ½(1−u)ln(1−u) on [−1, 1], +∞ outside.
pub fn lipschitz_rate(u: f64) -> f64 {
    let a = u.abs();
    if a > 1.0 || a.is_nan() {
        return f64::INFINITY;
    }
    if a == 1.0 {
        return std::f64::consts::LN_2;
    }
    0.5 * ((1.0 + a) * a.ln_1p() + (1.0 - a) * (-a).ln_1p())
}

/// Cost of one step of the chain.
#[inline]
pub fn step_entropy(kind: EntropyKind, t0: f64, x0: f64, t1: f64, x1: f64) -> f64 {
    let dt = t1 - t0;
    let dx = x1 - x0;
    if dt <= 0.0 {
        return if dx == 0.0 && dt == 0.0 { 0.0 } else { f64::INFINITY };
    }
    match kind {
        EntropyKind::Quadratic => 0.5 * dx * dx / dt,
        EntropyKind::Lipschitz => {
            if dx.abs() > dt {
                f64::INFINITY
            } else {
                dt * lipschitz_rate(dx / dt)
            }
        }
    }
}

fn chain_entropy(kind: EntropyKind, chain: &[WeightedPoint]) -> f64 {
    let (mut t, mut x) = (0.0, 0.0);
    let mut acc = 0.0;
    for p in chain {
        if p.t < t {
            return f64::INFINITY;
        }
        acc += step_entropy(kind, t, x, p.t, p.x);
        t = p.t;
        x = p.x;
    }
    acc
}

/// ½ Σ (x_i − x_{i−1})² / (t_i − t_{i−1}) from (0, 0). Equal times with
/// different positions cost +∞. Chains that go back in time cost +∞.
pub fn entropy(chain: &[WeightedPoint]) -> f64 {
    chain_entropy(EntropyKind::Quadratic, chain)
}

/// Σ (t_i − t_{i−1}) e((x_i − x_{i−1}) / (t_i − t_{i−1})) from (0, 0).
pub fn lipschitz_entropy(chain: &[WeightedPoint]) -> f64 {
    chain_entropy(EntropyKind::Lipschitz, chain)
}

/// Total weight Ω(Δ).
pub fn energy(chain: &[WeightedPoint]) -> f64 {
    chain.iter().map(|p| p.w).sum()
}

fn tied(a: f64, b: f64) -> bool {
    if a == b {
        return true;
    }
    if !a.is_finite() || !b.is_finite() {
        return false;
    }
    (a - b).abs() <= TIE_RTOL * 1f64.max(a.abs()).max(b.abs())
}

/// Is (va, chain a) strictly preferred to (vb, chain b)?
fn better(va: f64, a: &[usize], vb: f64, b: &[usize]) -> bool {
    if tied(va, vb) {
        a.cmp(b) == Ordering::Less
    } else {
        va > vb
    }
}

/// Points in (t, x) order after applying the weight window, with their
/// original indices.
struct Prepared {
    pts: Vec<WeightedPoint>,
    orig: Vec<usize>,
}

fn prepare(points: &[WeightedPoint], window: WeightWindow) -> Result<Prepared> {
    for p in points {
        p.validate()?;
    }
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        points[a]
            .t
            .total_cmp(&points[b].t)
            .then(points[a].x.total_cmp(&points[b].x))
    });
    for w in order.windows(2) {
        let (p, q) = (&points[w[0]], &points[w[1]]);
        if p.t == q.t && p.x == q.x {
            return domain(format!("duplicate point at (t={}, x={})", p.t, p.x));
        }
    }
    // rank by weight, heaviest first, (t, x) order among equal weights
    let heavy = |l: usize| -> Vec<bool> {
        let mut by_weight: Vec<usize> = (0..order.len()).collect();
        by_weight.sort_by(|&a, &b| points[order[b]].w.total_cmp(&points[order[a]].w).then(a.cmp(&b)));
        let mut mark = vec![false; order.len()];
        for &k in by_weight.iter().take(l) {
            mark[k] = true;
        }
        mark
    };
    let mut pts = Vec::with_capacity(order.len());
    let mut orig = Vec::with_capacity(order.len());
    match window {
        WeightWindow::All => {
            for &k in &order {
                pts.push(points[k]);
                orig.push(k);
            }
        }
        WeightWindow::TopL(l) => {
            let mark = heavy(l);
            for (s, &k) in order.iter().enumerate() {
                if mark[s] {
                    pts.push(points[k]);
                    orig.push(k);
                }
            }
        }
        WeightWindow::BeyondL(l) => {
            let mark = heavy(l);
            for (s, &k) in order.iter().enumerate() {
                let mut p = points[k];
                if mark[s] {
                    p.w = 0.0;
                }
                pts.push(p);
                orig.push(k);
            }
        }
    }
    Ok(Prepared { pts, orig })
}

/// Number of count classes and the class reached from class `c` by adding
/// a point; classes are 0 (empty) ..= cap.
fn count_cap(card: Cardinality, npts: usize) -> usize {
    match card {
        Cardinality::Any => 1,
        Cardinality::Exactly(k) => k.min(npts).max(1),
        Cardinality::AtLeast(r) => r.max(1),
    }
}

fn accepting(card: Cardinality, class: usize, cap: usize) -> bool {
    match card {
        Cardinality::Any => true,
        Cardinality::Exactly(k) => class == k,
        Cardinality::AtLeast(r) => class >= r.min(cap).max(1) || r == 0,
    }
}

fn check_cardinality(card: Cardinality, npts: usize) -> Result<()> {
    match card {
        Cardinality::Exactly(k) | Cardinality::AtLeast(k) if k > npts => {
            domain(format!("cardinality {k} exceeds the number of points {npts}"))
        }
        _ => Ok(()),
    }
}

fn empty_admissible(card: Cardinality) -> bool {
    matches!(
        card,
        Cardinality::Any | Cardinality::Exactly(0) | Cardinality::AtLeast(0)
    )
}

/// Exact optimum of `β Ω(Δ) − Ent(Δ) − κ|Δ|` by dynamic programming over
/// chains. O(k² · K) for k points and K count classes.
pub fn solve(points: &[WeightedPoint], params: &SolveParams) -> Result<Solution> {
    params.validate()?;
    if points.len() > MAX_POINTS {
        return Err(Error::TooLarge {
            what: "points",
            got: points.len(),
            cap: MAX_POINTS,
        });
    }
    check_cardinality(params.cardinality, points.len())?;
    let prep = prepare(points, params.weight_window)?;
    let pts = &prep.pts;
    let m = pts.len();
    let card = params.cardinality;
    let empty_ok = empty_admissible(card);
    if matches!(card, Cardinality::Exactly(0)) || m == 0 {
        return Ok(if empty_ok {
            Solution { value: 0.0, chain: vec![] }
        } else {
            Solution { value: f64::NEG_INFINITY, chain: vec![] }
        });
    }
    let cap = count_cap(card, m);
    let kind = params.entropy_kind;
    let (beta, kappa) = (params.beta, params.kappa);

    // state s = j * cap + (class - 1), class in 1..=cap
    let nstates = m * cap;
    let mut val = vec![f64::NEG_INFINITY; nstates];
    let mut parent = vec![usize::MAX; nstates];
    let mut length = vec![0usize; nstates];

    let chain_of = |s: usize, parent: &[usize], length: &[usize]| -> Vec<usize> {
        let mut out = vec![0; length[s]];
        let mut cur = s;
        let mut k = length[s];
        while cur != usize::MAX {
            k -= 1;
            out[k] = cur / cap;
            cur = parent[cur];
        }
        out
    };

    let first_time_end = |j: usize| -> usize {
        // points with index < returned value have t < t_j
        let tj = pts[j].t;
        pts[..j].partition_point(|p| p.t < tj)
    };

    for j in 0..m {
        let pj = pts[j];
        let gain = beta * pj.w - kappa;
        // from the origin
        {
            let step = step_entropy(kind, 0.0, 0.0, pj.t, pj.x);
            let v = 0.0 + (gain - step);
            let s = j * cap;
            if v > f64::NEG_INFINITY {
                val[s] = v;
                parent[s] = usize::MAX;
                length[s] = 1;
            }
        }
        let end = first_time_end(j);
        for i in 0..end {
            let pi = pts[i];
            let step = step_entropy(kind, pi.t, pi.x, pj.t, pj.x);
            if step == f64::INFINITY {
                continue;
            }
            let inc = gain - step;
            for c in 0..cap {
                let si = i * cap + c;
                let vi = val[si];
                if vi == f64::NEG_INFINITY {
                    continue;
                }
                let cj = match card {
                    Cardinality::Any => 0,
                    Cardinality::Exactly(_) => {
                        if c + 1 >= cap {
                            continue;
                        }
                        c + 1
                    }
                    Cardinality::AtLeast(_) => (c + 1).min(cap - 1),
                };
                let sj = j * cap + cj;
                let v = vi + inc;
                let cur = val[sj];
                let replace = if cur == f64::NEG_INFINITY {
                    v > f64::NEG_INFINITY
                } else if tied(v, cur) {
                    let mut a = chain_of(si, &parent, &length);
                    a.push(j);
                    let b = chain_of(sj, &parent, &length);
                    a < b
                } else {
                    v > cur
                };
                if replace {
                    val[sj] = v;
                    parent[sj] = si;
                    length[sj] = length[si] + 1;
                }
            }
        }
    }

    let mut best_v = if empty_ok { 0.0 } else { f64::NEG_INFINITY };
    let mut best_c: Vec<usize> = vec![];
    for j in 0..m {
        for c in 0..cap {
            let class = c + 1;
            if !accepting(card, class, cap) {
                continue;
            }
            let s = j * cap + c;
            let v = val[s];
            if v == f64::NEG_INFINITY {
                continue;
            }
            if !tied(v, best_v) && v < best_v {
                continue;
            }
            let ch = chain_of(s, &parent, &length);
            if better(v, &ch, best_v, &best_c) {
                best_v = v;
                best_c = ch;
            }
        }
    }
    Ok(Solution {
        value: best_v,
        chain: best_c.into_iter().map(|k| prep.orig[k]).collect(),
    })
}

/// Exhaustive search over all subsets, used as a reference for [`solve`].
pub fn brute_force(points: &[WeightedPoint], params: &SolveParams) -> Result<Solution> {
    params.validate()?;
    if points.len() > MAX_BRUTE_FORCE_POINTS {
        return Err(Error::TooLarge {
            what: "points",
            got: points.len(),
            cap: MAX_BRUTE_FORCE_POINTS,
        });
    }
    check_cardinality(params.cardinality, points.len())?;
    let prep = prepare(points, params.weight_window)?;
    let pts = &prep.pts;
    let m = pts.len();
    let card = params.cardinality;
    let admissible = |k: usize| match card {
        Cardinality::Any => true,
        Cardinality::Exactly(e) => k == e,
        Cardinality::AtLeast(r) => k >= r,
    };
    let mut best_v = f64::NEG_INFINITY;
    let mut best_c: Option<Vec<usize>> = None;
    for mask in 0u32..(1u32 << m) {
        let chain: Vec<usize> = (0..m).filter(|&k| mask >> k & 1 == 1).collect();
        if !admissible(chain.len()) {
            continue;
        }
        let (mut t, mut x) = (0.0, 0.0);
        let mut v = 0.0;
        for &k in &chain {
            let p = pts[k];
            let step = if p.t > t {
                step_entropy(params.entropy_kind, t, x, p.t, p.x)
            } else {
                f64::INFINITY
            };
            v += params.beta * p.w - params.kappa - step;
            t = p.t;
            x = p.x;
        }
        if v == f64::NEG_INFINITY {
            continue;
        }
        let take = match &best_c {
            None => true,
            Some(bc) => better(v, &chain, best_v, bc),
        };
        if take {
            best_v = v;
            best_c = Some(chain);
        }
    }
    let chain = best_c.unwrap_or_default();
    Ok(Solution {
        value: best_v,
        chain: chain.into_iter().map(|k| prep.orig[k]).collect(),
    })
}

/// Lattice sites of Λ_{n,h} as points `(i, x, ω)`.
fn field_points(field: &DisorderField, h: usize) -> Vec<WeightedPoint> {
    let mut out = Vec::with_capacity(field.n() * (2 * h + 1));
    for i in 1..=field.n() {
        for x in -(h as i64)..=(h as i64) {
            out.push(WeightedPoint::new(i as f64, x as f64, field.weight(i, x)));
        }
    }
    out
}

/// The discrete problem over Λ_{n,h} with `n = field.n()`.
///
/// `params.beta` plays the role of β_{n,h}. `TopL(ℓ)` keeps the ℓ largest
/// weights only. `BeyondL(ℓ)` zeroes them and keeps every site.
pub fn discrete_t(field: &DisorderField, h: usize, params: &SolveParams) -> Result<Solution> {
    field.require_cover(field.n(), h)?;
    let size = field.n() * (2 * h + 1);
    match params.weight_window {
        WeightWindow::TopL(0) => {
            let p = params.with_window(WeightWindow::All);
            solve(&[], &p)
        }
        WeightWindow::TopL(l) => {
            let os = ordered_statistics_in(field, field.n(), h, l.min(size))?;
            let pts: Vec<WeightedPoint> = os
                .entries
                .iter()
                .map(|e| WeightedPoint::new(e.i as f64, e.x as f64, e.weight))
                .collect();
            solve(&pts, &params.with_window(WeightWindow::All))
        }
        WeightWindow::All | WeightWindow::BeyondL(_) => {
            if size > MAX_POINTS {
                return Err(Error::TooLarge {
                    what: "points",
                    got: size,
                    cap: MAX_POINTS,
                });
            }
            solve(&field_points(field, h), params)
        }
    }
}

/// max { ω − x²/(2 β_n i) } over i ∈ [δn, n], |x| ≤ A h_n and β_n ω ≥ 1;
/// `−∞` when no site qualifies.
pub fn w_n_delta_a(field: &DisorderField, beta_n: f64, delta: f64, a: f64, h_n: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return domain(format!("delta must lie in (0,1), got {delta}"));
    }
    if !(a > 0.0 && a.is_finite()) || !(h_n > 0.0 && h_n.is_finite()) {
        return domain("A and h_n must be positive and finite");
    }
    if !(beta_n > 0.0 && beta_n.is_finite()) {
        return domain(format!("beta_n must be positive, got {beta_n}"));
    }
    let n = field.n();
    let xmax = (a * h_n).floor() as usize;
    field.require_cover(n, xmax)?;
    let i0 = ((delta * n as f64).ceil() as usize).max(1);
    let mut best = f64::NEG_INFINITY;
    for i in i0..=n {
        for x in -(xmax as i64)..=(xmax as i64) {
            let w = field.weight(i, x);
            if beta_n * w >= 1.0 {
                let v = w - (x * x) as f64 / (2.0 * beta_n * i as f64);
                if v > best {
                    best = v;
                }
            }
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(t: f64, x: f64, w: f64) -> WeightedPoint {
        WeightedPoint::new(t, x, w)
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy(&[p(4.0, 2.0, 0.0)]), 0.5);
        assert_eq!(entropy(&[p(2.0, 2.0, 0.0), p(4.0, 0.0, 0.0)]), 2.0);
        assert_eq!(entropy(&[p(1.0, 1.0, 0.0), p(1.0, -1.0, 0.0)]), f64::INFINITY);
    }

    #[test]
    fn lipschitz_examples() {
        assert_eq!(lipschitz_entropy(&[p(1.0, 0.0, 0.0)]), 0.0);
        assert!((lipschitz_entropy(&[p(1.0, 1.0, 0.0)]) - 2f64.ln()).abs() < 1e-15);
        let v = lipschitz_entropy(&[p(0.5, 0.25, 0.0)]);
        assert!((v - 0.065_406_0).abs() < 5e-7, "{v}");
        assert_eq!(lipschitz_entropy(&[p(1.0, 1.5, 0.0)]), f64::INFINITY);
    }

    #[test]
    fn empty_and_single() {
        let prm = SolveParams::quadratic(1.0);
        assert_eq!(solve(&[], &prm).unwrap(), Solution { value: 0.0, chain: vec![] });
        let s = solve(&[p(10.0, 0.0, 3.0)], &prm.with_kappa(0.0)).unwrap();
        assert_eq!(s.value, 3.0);
        assert_eq!(s.chain, vec![0]);
    }

    #[test]
    fn exactly_k_infeasible_is_neg_inf() {
        // two points at equal time cannot both be used
        let pts = [p(1.0, 0.0, 1.0), p(1.0, 0.5, 1.0)];
        let prm = SolveParams::quadratic(1.0).with_cardinality(Cardinality::Exactly(2));
        let s = solve(&pts, &prm).unwrap();
        assert_eq!(s.value, f64::NEG_INFINITY);
        assert!(s.chain.is_empty());
        assert_eq!(brute_force(&pts, &prm).unwrap(), s);
    }

    #[test]
    fn duplicates_rejected() {
        let pts = [p(1.0, 0.0, 1.0), p(1.0, 0.0, 2.0)];
        assert!(solve(&pts, &SolveParams::quadratic(1.0)).is_err());
    }

    #[test]
    fn rate_dominates_quadratic() {
        for k in -1000..=1000 {
            let u = k as f64 / 1000.0;
            assert!(lipschitz_rate(u) >= 0.5 * u * u - 1e-16);
        }
    }
}
