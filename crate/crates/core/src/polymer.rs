//! Exact polymer partition functions by log-domain transfer matrices.
//!
//! The walk starts at `S_0 = 0` and takes ±1 steps. At time `i` it picks up
//! the factor `exp(β f(ω_{i,S_i}) − β c)`, where `f` is the weight filter and
//! `c` the centering constant. The centering is paid on every step whether
//! or not the filter keeps the weight. Filter thresholds compare against
//! `|β| ω`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::environment::{DisorderField, TailParams};
use crate::error::{domain, Error, Result};
use crate::numeric::{log_add, LnFactorials, LN_HALF};
use crate::rng::stream;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum WeightFilter {
    #[default]
    All,
    /// keep ω when |β|ω > t
    Above { t: f64 },
    /// keep ω when a < |β|ω ≤ b
    Between { a: f64, b: f64 },
    /// keep ω when |β|ω ≤ t
    AtMost { t: f64 },
}

impl WeightFilter {
    #[inline]
    pub fn keeps(&self, bw: f64) -> bool {
        match *self {
            WeightFilter::All => true,
            WeightFilter::Above { t } => bw > t,
            WeightFilter::Between { a, b } => bw > a && bw <= b,
            WeightFilter::AtMost { t } => bw <= t,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            WeightFilter::Above { t } | WeightFilter::AtMost { t } if t.is_nan() => {
                domain("filter threshold is NaN")
            }
            WeightFilter::Between { a, b } if !(a < b) => {
                domain(format!("filter interval ({a}, {b}] is empty or unordered"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Centering {
    #[default]
    None,
    /// subtract β E[ω] per step
    Mean,
    /// subtract β E[ω 1{ω ≤ 1/|β|}] per step
    TruncatedMean,
    /// subtract β E[ω 1{ω ≤ k}] per step
    TruncatedMeanAt { k: f64 },
}

impl Centering {
    /// Per-step constant c, so that the factor is exp(β f(ω) − β c).
    pub fn constant(&self, tail: &TailParams, beta: f64) -> Result<f64> {
        match *self {
            Centering::None => Ok(0.0),
            Centering::Mean => tail.mean(),
            Centering::TruncatedMean => {
                if beta == 0.0 {
                    return Ok(0.0);
                }
                tail.truncated_mean(1.0 / beta.abs())
            }
            Centering::TruncatedMeanAt { k } => tail.truncated_mean(k),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct PathConstraint {
    /// max_i |S_i| ≤ band
    pub band: Option<usize>,
    /// max_i |S_i| ∈ [lo, hi)
    pub window: Option<(usize, usize)>,
    pub filter: WeightFilter,
    pub centering: Centering,
}

impl PathConstraint {
    pub fn free() -> Self {
        Self::default()
    }

    pub fn with_band(mut self, h: usize) -> Self {
        self.band = Some(h);
        self
    }

    pub fn with_window(mut self, lo: usize, hi: usize) -> Self {
        self.window = Some((lo, hi));
        self
    }

    pub fn with_filter(mut self, f: WeightFilter) -> Self {
        self.filter = f;
        self
    }

    pub fn with_centering(mut self, c: Centering) -> Self {
        self.centering = c;
        self
    }

    /// Half-width of the set of sites the walk may visit.
    pub fn reach(&self, n: usize) -> usize {
        let mut w = n;
        if let Some(h) = self.band {
            w = w.min(h);
        }
        if let Some((_, hi)) = self.window {
            w = w.min(hi.saturating_sub(1));
        }
        w
    }

    fn covers_all_paths(&self, n: usize) -> bool {
        self.band.is_none_or(|h| h >= n)
            && self.window.is_none_or(|(lo, hi)| lo == 0 && hi > n)
    }
}

/// `log Z` together with a flag that is false when no path satisfies the
/// constraint (then `log_z = −∞`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionValue {
    pub log_z: f64,
    pub feasible: bool,
}

/// Exact simple random walk kernel p(i, x) = C(i, (i+x)/2) 2^{−i}.
#[derive(Clone, Debug)]
pub struct WalkKernel {
    lf: LnFactorials,
}

impl WalkKernel {
    pub fn new(n: usize) -> Self {
        WalkKernel {
            lf: LnFactorials::new(n),
        }
    }

    pub fn max_steps(&self) -> usize {
        self.lf.max_n()
    }

    /// ln p(i, x); −∞ for wrong parity or |x| > i.
    #[inline]
    pub fn ln_p(&self, i: usize, x: i64) -> f64 {
        let ax = x.unsigned_abs() as usize;
        if ax > i || (i + ax) % 2 == 1 {
            return f64::NEG_INFINITY;
        }
        self.lf.ln_binomial(i, (i + ax) / 2) + i as f64 * LN_HALF
    }

    #[inline]
    pub fn p(&self, i: usize, x: i64) -> f64 {
        if i == 0 {
            return if x == 0 { 1.0 } else { 0.0 };
        }
        self.ln_p(i, x).exp()
    }
}

/// P(S_i = x) for the simple random walk; 0 for wrong parity or |x| > i.
pub fn walk_kernel(i: usize, x: i64) -> f64 {
    if x.unsigned_abs() as usize > i {
        return 0.0;
    }
    WalkKernel::new(i).p(i, x)
}

struct Pass<'a> {
    field: &'a DisorderField,
    beta: f64,
    shift: f64,
    filter: WeightFilter,
    n: usize,
    width: usize,
    lo: usize,
    windowed: bool,
}

impl<'a> Pass<'a> {
    fn new(field: &'a DisorderField, beta: f64, c: &PathConstraint) -> Result<Self> {
        if !beta.is_finite() {
            return domain(format!("beta must be finite, got {beta}"));
        }
        if beta < 0.0 && !matches!(c.filter, WeightFilter::AtMost { .. }) {
            return domain("negative beta is only meaningful with the AtMost filter");
        }
        c.filter.validate()?;
        if let Some((lo, hi)) = c.window {
            if lo >= hi {
                return domain(format!("window [{lo}, {hi}) is empty"));
            }
        }
        let n = field.n();
        let width = c.reach(n);
        field.require_cover(n, width)?;
        let cst = c.centering.constant(field.tail(), beta)?;
        let (lo, windowed) = match c.window {
            Some((lo, _)) if lo > 0 => (lo, true),
            _ => (0, false),
        };
        Ok(Pass {
            field,
            beta,
            shift: beta * cst,
            filter: c.filter,
            n,
            width,
            lo,
            windowed,
        })
    }

    #[inline]
    fn potential(&self, i: usize, x: i64) -> f64 {
        let w = self.field.weight(i, x);
        let kept = if self.filter.keeps(self.beta.abs() * w) {
            self.beta * w
        } else {
            0.0
        };
        kept - self.shift
    }

    fn len(&self) -> usize {
        2 * self.width + 1
    }

    /// Forward recursion. `layers` receives the reached-layer vector after
    /// every step when provided. Returns log Z.
    fn forward(&self, mut layers: Option<&mut Vec<Vec<f64>>>) -> f64 {
        let w = self.width as i64;
        let len = self.len();
        let off = self.width;
        let mut a1 = vec![f64::NEG_INFINITY; len];
        let mut b1 = vec![f64::NEG_INFINITY; len];
        let (mut a0, mut b0) = if self.windowed {
            (vec![f64::NEG_INFINITY; len], vec![f64::NEG_INFINITY; len])
        } else {
            (Vec::new(), Vec::new())
        };
        if self.windowed {
            a0[off] = 0.0;
        } else {
            a1[off] = 0.0;
        }
        let lo = self.lo as i64;
        for i in 1..=self.n {
            let reach = (i as i64).min(w);
            b1.fill(f64::NEG_INFINITY);
            if self.windowed {
                b0.fill(f64::NEG_INFINITY);
            }
            let mut x = -reach;
            if (x + i as i64) % 2 != 0 {
                x += 1;
            }
            while x <= reach {
                let k = (x + off as i64) as usize;
                let l1 = if x > -w { a1[k - 1] } else { f64::NEG_INFINITY };
                let r1 = if x < w { a1[k + 1] } else { f64::NEG_INFINITY };
                let pot = self.potential(i, x) + LN_HALF;
                let from1 = log_add(l1, r1);
                if self.windowed {
                    let l0 = if x > -w { a0[k - 1] } else { f64::NEG_INFINITY };
                    let r0 = if x < w { a0[k + 1] } else { f64::NEG_INFINITY };
                    let from0 = log_add(l0, r0);
                    if x.abs() >= lo {
                        b1[k] = log_add(from0, from1) + pot;
                    } else {
                        b0[k] = from0 + pot;
                        b1[k] = from1 + pot;
                    }
                } else {
                    b1[k] = from1 + pot;
                }
                x += 2;
            }
            std::mem::swap(&mut a1, &mut b1);
            if self.windowed {
                std::mem::swap(&mut a0, &mut b0);
            }
            if let Some(store) = layers.as_deref_mut() {
                store.push(a1.clone());
            }
        }
        crate::numeric::log_sum_exp(&a1)
    }
}

/// log Z of the constrained polymer over the whole time extent of the field.
pub fn log_partition(field: &DisorderField, beta: f64, c: &PathConstraint) -> Result<PartitionValue> {
    let pass = Pass::new(field, beta, c)?;
    if beta == 0.0 && c.covers_all_paths(field.n()) {
        return Ok(PartitionValue {
            log_z: 0.0,
            feasible: true,
        });
    }
    let log_z = pass.forward(None);
    Ok(PartitionValue {
        log_z,
        feasible: log_z > f64::NEG_INFINITY,
    })
}

/// Gibbs probability that max_i |S_i| ∈ [lo, hi).
pub fn gibbs_band_probability(field: &DisorderField, beta: f64, lo: usize, hi: usize) -> Result<f64> {
    let n = field.n();
    if lo >= hi || hi > n + 1 {
        return domain(format!("need 0 <= lo < hi <= n + 1, got [{lo}, {hi}) with n = {n}"));
    }
    if beta < 0.0 {
        return domain("negative beta is not supported here");
    }
    let full = log_partition(field, beta, &PathConstraint::free())?;
    if lo == 0 && hi > n {
        return Ok(1.0);
    }
    let part = log_partition(field, beta, &PathConstraint::free().with_window(lo, hi))?;
    Ok((part.log_z - full.log_z).exp().clamp(0.0, 1.0))
}

/// Exact sample of (S_1, …, S_n) under the constrained Gibbs measure, by
/// backward sampling from the stored forward vectors. Windows are not
/// supported here.
pub fn sample_gibbs_path(
    field: &DisorderField,
    beta: f64,
    c: &PathConstraint,
    seed: u64,
) -> Result<Vec<i64>> {
    if c.window.is_some_and(|(lo, _)| lo > 0) {
        return Err(Error::Unsupported("path sampling with a lower window bound".into()));
    }
    let pass = Pass::new(field, beta, c)?;
    let mut layers = Vec::with_capacity(pass.n);
    let log_z = pass.forward(Some(&mut layers));
    if log_z == f64::NEG_INFINITY {
        return domain("no path satisfies the constraint");
    }
    let mut rng = stream(seed);
    let off = pass.width as i64;
    let draw = |rng: &mut rand_chacha::ChaCha8Rng, cands: &[(i64, f64)]| -> i64 {
        let m = cands.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
        let ws: Vec<f64> = cands.iter().map(|c| (c.1 - m).exp()).collect();
        let tot: f64 = ws.iter().sum();
        let mut u = rng.random::<f64>() * tot;
        for (k, w) in ws.iter().enumerate() {
            if u < *w {
                return cands[k].0;
            }
            u -= w;
        }
        cands.iter().rev().find(|c| c.1 > f64::NEG_INFINITY).unwrap().0
    };
    let n = pass.n;
    let mut path = vec![0i64; n];
    let last: Vec<(i64, f64)> = layers[n - 1]
        .iter()
        .enumerate()
        .filter(|(_, v)| **v > f64::NEG_INFINITY)
        .map(|(k, v)| (k as i64 - off, *v))
        .collect();
    path[n - 1] = draw(&mut rng, &last);
    for i in (1..n).rev() {
        let x = path[i];
        let mut cands = Vec::with_capacity(2);
        for y in [x - 1, x + 1] {
            if y.abs() <= off {
                let v = layers[i - 1][(y + off) as usize];
                if v > f64::NEG_INFINITY {
                    cands.push((y, v));
                }
            }
        }
        path[i - 1] = draw(&mut rng, &cands);
    }
    Ok(path)
}

/// Site marginals P^ω(S_i = x) by a forward–backward pass.
#[derive(Clone, Debug)]
pub struct SiteMarginals {
    pub n: usize,
    pub width: usize,
    probs: Vec<f64>,
}

impl SiteMarginals {
    pub fn get(&self, i: usize, x: i64) -> f64 {
        if i == 0 {
            return if x == 0 { 1.0 } else { 0.0 };
        }
        if i > self.n || x.unsigned_abs() as usize > self.width {
            return 0.0;
        }
        self.probs[(i - 1) * (2 * self.width + 1) + (x + self.width as i64) as usize]
    }
}

pub fn site_marginals(field: &DisorderField, beta: f64, c: &PathConstraint) -> Result<SiteMarginals> {
    if c.window.is_some_and(|(lo, _)| lo > 0) {
        return Err(Error::Unsupported("marginals with a lower window bound".into()));
    }
    let pass = Pass::new(field, beta, c)?;
    let mut layers = Vec::with_capacity(pass.n);
    let log_z = pass.forward(Some(&mut layers));
    if log_z == f64::NEG_INFINITY {
        return domain("no path satisfies the constraint");
    }
    let n = pass.n;
    let w = pass.width as i64;
    let len = pass.len();
    let mut probs = vec![0.0; n * len];
    let mut back = vec![0.0f64; len];
    let mut next = vec![f64::NEG_INFINITY; len];
    for i in (1..=n).rev() {
        for k in 0..len {
            let f = layers[i - 1][k];
            if f > f64::NEG_INFINITY {
                probs[(i - 1) * len + k] = (f + back[k] - log_z).exp();
            }
        }
        if i == 1 {
            break;
        }
        // backward vector at time i − 1
        next.fill(f64::NEG_INFINITY);
        for k in 0..len {
            let x = k as i64 - w;
            let mut acc = f64::NEG_INFINITY;
            for y in [x - 1, x + 1] {
                if y.abs() <= w {
                    let ky = (y + w) as usize;
                    if layers[i - 1][ky] > f64::NEG_INFINITY {
                        acc = log_add(acc, pass.potential(i, y) + back[ky]);
                    }
                }
            }
            next[k] = acc + LN_HALF;
        }
        std::mem::swap(&mut back, &mut next);
    }
    Ok(SiteMarginals {
        n,
        width: pass.width,
        probs,
    })
}

/// Terms of the first-order chaos expansion of the truncated partition
/// function `Z̃` (weights `ω̃ = ω 1{ω ≤ k}`), restricted to the band `H`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChaosTerms {
    pub truncation: f64,
    /// λ = ln E[exp(β ω̃)]
    pub lambda: f64,
    /// Σ (e^{βω̃} − 1) p(i, x) over the band
    pub v: f64,
    /// (e^λ − 1)(1 − Σ p(i, x))
    pub w: f64,
    /// residual e^{−nλ} Z̃ − 1 − Σ (e^{βω̃ − λ} − 1) p(i, x)
    pub r: f64,
    /// Σ (e^{βω̃ − λ} − 1) p(i, x)
    pub first_chaos: f64,
    pub log_z_truncated: f64,
    /// Σ p(i, x) over the band
    pub kernel_mass: f64,
}

impl ChaosTerms {
    /// e^{−(n−1)λ} Z̃ reassembled as 1 + V + W + e^λ R.
    pub fn reassembled(&self) -> f64 {
        1.0 + self.v + self.w + self.lambda.exp() * self.r
    }
}

/// Default truncation level m(n^{3/2} ln n).
pub fn default_truncation(tail: &TailParams, n: usize) -> Result<f64> {
    if n < 2 {
        return domain("default truncation needs n >= 2; pass an explicit level");
    }
    let n = n as f64;
    tail.m_of(n.powf(1.5) * n.ln())
}

pub fn chaos_terms(
    field: &DisorderField,
    beta: f64,
    band: usize,
    truncation: Option<f64>,
) -> Result<ChaosTerms> {
    if !(beta >= 0.0 && beta.is_finite()) {
        return domain(format!("beta must be finite and >= 0, got {beta}"));
    }
    let n = field.n();
    let tail = field.tail();
    let k = match truncation {
        Some(k) if k > 0.0 => k,
        Some(k) => return domain(format!("truncation must be positive, got {k}")),
        None => default_truncation(tail, n)?,
    };
    let h = band.min(n);
    field.require_cover(n, h)?;
    let lambda = tail.ln_truncated_mgf(beta, k)?;
    let filter = if beta > 0.0 {
        WeightFilter::AtMost { t: beta * k }
    } else {
        WeightFilter::All
    };
    let zt = log_partition(field, beta, &PathConstraint::free().with_band(h).with_filter(filter))?;
    let kern = WalkKernel::new(n);
    let (mut v, mut first, mut mass) = (0.0, 0.0, 0.0);
    for i in 1..=n {
        let r = (i.min(h)) as i64;
        let mut x = -r;
        if (x + i as i64) % 2 != 0 {
            x += 1;
        }
        while x <= r {
            let p = kern.p(i, x);
            let w = field.weight(i, x);
            let wt = if w <= k { w } else { 0.0 };
            v += (beta * wt).exp_m1() * p;
            first += (beta * wt - lambda).exp_m1() * p;
            mass += p;
            x += 2;
        }
    }
    let w = lambda.exp_m1() * (1.0 - mass);
    let normalized = (zt.log_z - n as f64 * lambda).exp();
    let r = normalized - 1.0 - first;
    Ok(ChaosTerms {
        truncation: k,
        lambda,
        v,
        w,
        r,
        first_chaos: first,
        log_z_truncated: zt.log_z,
        kernel_mass: mass,
    })
}

/// Largest set size accepted by [`heavy_site_decomposition`].
pub const MAX_HEAVY_SITES: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeavySiteDecomposition {
    /// Υ: the retained heavy sites `(i, x, ω)`, sorted by time then space.
    pub sites: Vec<(usize, i64, f64)>,
    /// false when more than ℓ reachable sites have βω > 1
    pub complete: bool,
    /// U_k = Σ_{|Δ| = k} e^{βΩ(Δ)} P(S ∩ Υ = Δ)
    pub u: Vec<f64>,
    /// U_k⁻ = Σ_{|Δ| = k} (e^{βΩ(Δ)} − 1) P(S ∩ Υ = Δ)
    pub u_minus: Vec<f64>,
}

/// Decompose the heavy part of the partition function by the set of heavy
/// sites the walk visits.
///
/// Υ holds the sites with `|x| ≤ H`, `i + x` even and `βω > 1`, at most ℓ of
/// them (the heaviest). `P(S ∩ Υ = Δ)` comes from a superset Möbius
/// transform of `P(Γ ⊂ S)`, the latter being a product of walk kernels.
/// Cost is O(ℓ 2^ℓ).
pub fn heavy_site_decomposition(
    field: &DisorderField,
    beta: f64,
    band: usize,
    ell: usize,
) -> Result<HeavySiteDecomposition> {
    if ell > MAX_HEAVY_SITES {
        return Err(Error::TooLarge {
            what: "heavy sites",
            got: ell,
            cap: MAX_HEAVY_SITES,
        });
    }
    if !(beta >= 0.0 && beta.is_finite()) {
        return domain(format!("beta must be finite and >= 0, got {beta}"));
    }
    let n = field.n();
    let h = band.min(n);
    field.require_cover(n, h)?;
    let mut heavy: Vec<crate::environment::RankedSite> = Vec::new();
    for i in 1..=n {
        let r = i.min(h) as i64;
        for x in -r..=r {
            if (x + i as i64) % 2 != 0 {
                continue;
            }
            let w = field.weight(i, x);
            if beta * w > 1.0 {
                heavy.push(crate::environment::RankedSite { weight: w, i, x });
            }
        }
    }
    heavy.sort_by(crate::environment::rank_order);
    let complete = heavy.len() <= ell;
    heavy.truncate(ell);
    let mut sites: Vec<(usize, i64, f64)> = heavy.iter().map(|s| (s.i, s.x, s.weight)).collect();
    sites.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));
    let l = sites.len();
    let kern = WalkKernel::new(n);
    let full = 1usize << l;
    // g[mask] = P(sites in mask ⊂ S); the top bit of a mask is its latest site
    let mut g = vec![0.0f64; full];
    g[0] = 1.0;
    for mask in 1..full {
        let top = usize::BITS as usize - 1 - mask.leading_zeros() as usize;
        let rest = mask & !(1 << top);
        let (ti, tx, _) = sites[top];
        let (pi, px) = if rest == 0 {
            (0usize, 0i64)
        } else {
            let prev = usize::BITS as usize - 1 - rest.leading_zeros() as usize;
            (sites[prev].0, sites[prev].1)
        };
        g[mask] = if ti > pi {
            g[rest] * kern.p(ti - pi, tx - px)
        } else {
            0.0
        };
    }
    // superset Möbius: f[Δ] = Σ_{Γ ⊇ Δ} (−1)^{|Γ∖Δ|} g[Γ]
    let mut f = g;
    for b in 0..l {
        for mask in 0..full {
            if mask & (1 << b) == 0 {
                f[mask] -= f[mask | (1 << b)];
            }
        }
    }
    let mut u = vec![0.0; ell + 1];
    let mut u_minus = vec![0.0; ell + 1];
    for (mask, &prob) in f.iter().enumerate() {
        let mut omega = 0.0;
        for (b, s) in sites.iter().enumerate() {
            if mask >> b & 1 == 1 {
                omega += s.2;
            }
        }
        let k = mask.count_ones() as usize;
        u[k] += (beta * omega).exp() * prob;
        u_minus[k] += (beta * omega).exp_m1() * prob;
    }
    Ok(HeavySiteDecomposition {
        sites,
        complete,
        u,
        u_minus,
    })
}
