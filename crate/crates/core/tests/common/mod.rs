//! Independent reference implementations used by the integration tests.
//! None of these call into the code under test except to read inputs.
#![allow(dead_code)]

use heavy_polymer::elpp::WeightedPoint;
use heavy_polymer::environment::DisorderField;

/// Every ±1 path of length n, as the list of positions S_1..S_n.
pub fn all_paths(n: usize) -> impl Iterator<Item = Vec<i64>> {
    (0u64..(1u64 << n)).map(move |bits| {
        let mut x = 0i64;
        (0..n)
            .map(|k| {
                x += if bits >> k & 1 == 1 { 1 } else { -1 };
                x
            })
            .collect()
    })
}

fn logsumexp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// log of 2^{-n} Σ_paths exp(Σ_i (β f(ω) − shift)) over paths accepted by
/// `accept`, by explicit enumeration.
pub fn enumerate_log_z(
    field: &DisorderField,
    beta: f64,
    keep: impl Fn(f64) -> bool,
    shift: f64,
    accept: impl Fn(&[i64]) -> bool,
) -> f64 {
    let n = field.n();
    let mut terms = Vec::new();
    for path in all_paths(n) {
        if !accept(&path) {
            continue;
        }
        let mut e = 0.0;
        for (k, &x) in path.iter().enumerate() {
            let w = field.weight(k + 1, x);
            if keep(beta.abs() * w) {
                e += beta * w;
            }
            e -= shift;
        }
        terms.push(e - n as f64 * std::f64::consts::LN_2);
    }
    logsumexp(&terms)
}

pub fn max_abs(path: &[i64]) -> usize {
    path.iter().map(|x| x.unsigned_abs() as usize).max().unwrap_or(0)
}

/// Simple random walk law at time i by repeated convolution.
pub fn kernel_by_convolution(i: usize) -> Vec<f64> {
    // index x + i
    let mut p = vec![0.0; 2 * i + 1];
    p[i] = 1.0;
    for _ in 0..i {
        let mut q = vec![0.0; 2 * i + 1];
        for k in 0..p.len() {
            if p[k] == 0.0 {
                continue;
            }
            if k > 0 {
                q[k - 1] += 0.5 * p[k];
            }
            if k + 1 < p.len() {
                q[k + 1] += 0.5 * p[k];
            }
        }
        p = q;
    }
    p
}

/// E[ω] for a Pareto(α) law on [1, ∞).
pub fn pareto_mean(alpha: f64) -> f64 {
    alpha / (alpha - 1.0)
}

/// E[ω 1{ω ≤ k}] for a Pareto(α) law on [1, ∞).
pub fn pareto_truncated_mean(alpha: f64, k: f64) -> f64 {
    if k < 1.0 {
        0.0
    } else if (alpha - 1.0).abs() < 1e-15 {
        k.ln()
    } else {
        alpha / (alpha - 1.0) * (1.0 - k.powf(1.0 - alpha))
    }
}

/// ln E[exp(β ω 1{ω ≤ k})] for Pareto(α), by composite Simpson in s = ln w.
pub fn pareto_ln_truncated_mgf(alpha: f64, beta: f64, k: f64) -> f64 {
    let upper = k.ln();
    let panels = 200_000;
    let h = upper / panels as f64;
    let f = |s: f64| (beta * s.exp()).exp_m1() * alpha * (-alpha * s).exp();
    let mut acc = f(0.0) + f(upper);
    for j in 1..panels {
        acc += f(j as f64 * h) * if j % 2 == 1 { 4.0 } else { 2.0 };
    }
    (acc * h / 3.0).ln_1p()
}

/// Linear-domain layered transfer of ∏ (1 + η_{i,S_i}) over band paths, with
/// η = e^{β ω̃ − λ} − 1, split by the number of chaos factors picked up:
/// returns [order 0, order 1, order ≥ 2].
pub fn layered_chaos(field: &DisorderField, beta: f64, lambda: f64, k: f64, band: usize) -> [f64; 3] {
    let n = field.n();
    let h = band.min(n) as i64;
    let len = (2 * h + 1) as usize;
    let mut layer = vec![[0.0f64; 3]; len];
    layer[h as usize][0] = 1.0;
    for i in 1..=n {
        let mut next = vec![[0.0f64; 3]; len];
        for x in -h..=h {
            let k_idx = (x + h) as usize;
            let mut inc = [0.0; 3];
            for dx in [-1i64, 1] {
                let y = x + dx;
                if y.abs() <= h {
                    for o in 0..3 {
                        inc[o] += 0.5 * layer[(y + h) as usize][o];
                    }
                }
            }
            if inc == [0.0; 3] {
                continue;
            }
            let w = field.weight(i, x);
            let wt = if w <= k { w } else { 0.0 };
            let eta = (beta * wt - lambda).exp_m1();
            next[k_idx][0] += inc[0];
            next[k_idx][1] += inc[1] + eta * inc[0];
            next[k_idx][2] += inc[2] + eta * (inc[1] + inc[2]);
        }
        layer = next;
    }
    let mut out = [0.0; 3];
    for c in &layer {
        for o in 0..3 {
            out[o] += c[o];
        }
    }
    out
}

/// Brute force over chains, written as a recursion over the next point in
/// time order. Returns the best value only.
pub fn chain_oracle(
    points: &[WeightedPoint],
    beta: f64,
    kappa: f64,
    step: &dyn Fn(f64, f64, f64, f64) -> f64,
    admissible: &dyn Fn(usize) -> bool,
) -> f64 {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.x.total_cmp(&b.x)));
    fn rec(
        pts: &[WeightedPoint],
        from: usize,
        t: f64,
        x: f64,
        len: usize,
        acc: f64,
        beta: f64,
        kappa: f64,
        step: &dyn Fn(f64, f64, f64, f64) -> f64,
        admissible: &dyn Fn(usize) -> bool,
    ) -> f64 {
        let mut best = if admissible(len) { acc } else { f64::NEG_INFINITY };
        for j in from..pts.len() {
            let p = pts[j];
            if p.t <= t {
                continue;
            }
            let c = step(t, x, p.t, p.x);
            if c.is_infinite() {
                continue;
            }
            let v = rec(pts, j + 1, p.t, p.x, len + 1, acc + beta * p.w - kappa - c, beta, kappa, step, admissible);
            best = best.max(v);
        }
        best
    }
    rec(&pts, 0, 0.0, 0.0, 0, 0.0, beta, kappa, step, admissible)
}

pub fn quadratic_step(t0: f64, x0: f64, t1: f64, x1: f64) -> f64 {
    let dx = x1 - x0;
    0.5 * dx * dx / (t1 - t0)
}

/// Δt e(Δx/Δt) with e(u) = ½(1+u)ln(1+u) + ½(1−u)ln(1−u), +∞ above slope 1.
pub fn lipschitz_step(t0: f64, x0: f64, t1: f64, x1: f64) -> f64 {
    let dt = t1 - t0;
    let u = ((x1 - x0) / dt).abs();
    if u > 1.0 {
        return f64::INFINITY;
    }
    let term = |v: f64| if v == 0.0 { 0.0 } else { v * v.ln() };
    dt * 0.5 * (term(1.0 + u) + term(1.0 - u))
}

/// Empirical CDF distance to a reference CDF, computed by brute force.
pub fn ks_reference(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let mut d: f64 = 0.0;
    for (k, &x) in s.iter().enumerate() {
        let f = cdf(x);
        d = d.max((f - k as f64 / n).abs()).max(((k + 1) as f64 / n - f).abs());
    }
    d
}

/// Fréchet-type law P(M ≤ u) = exp(−q u^{−α}).
pub fn frechet_cdf(alpha: f64, q: f64) -> impl Fn(f64) -> f64 {
    move |u| if u > 0.0 { (-q * u.powf(-alpha)).exp() } else { 0.0 }
}
