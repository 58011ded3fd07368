//! Scalar functionals of clusters: discrepancy pairings against test
//! functions, the quadratic-variation statistics `Q_N`/`W_N`, martingale
//! traces, and the closed-form bound evaluators.

use crate::error::{Error, Result};
use crate::harmonic::{HarmonicExtension, LayerHitFunction};
use crate::idla::{Cluster, TrajectoryLog};
use crate::stats::{ln_gamma, KahanSum};

/// Normalization of a pairing value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    /// Divide by `sqrt(N a_N)` (the averaged-fluctuation scaling).
    SqrtNaN,
    /// Divide by `N` (the martingale scaling).
    ByN,
}

#[derive(Debug, Clone)]
pub struct PairingResult {
    pub raw: f64,
    pub normalized: f64,
    pub mode_count: usize,
    pub t: u64,
    pub a_n: f64,
}

impl PairingResult {
    pub fn new(raw: f64, n: usize, a_n: f64, t: u64, mode_count: usize, norm: Normalization) -> Self {
        let normalized = match norm {
            Normalization::SqrtNaN => raw / (n as f64 * a_n).sqrt(),
            Normalization::ByN => raw / n as f64,
        };
        PairingResult {
            raw,
            normalized,
            mode_count,
            t,
            a_n,
        }
    }
}

/// Fast-path pairing for zero-horizontal-average functions: every complete
/// layer contributes nothing, so the pairing collapses to the sum over the
/// occupied sites above level zero.
pub fn pairing_fast(cluster: &Cluster, f: impl Fn(usize, i64) -> f64) -> f64 {
    let mut acc = KahanSum::new();
    for (x, y) in cluster.sites_sorted() {
        acc.add(f(x, y));
    }
    acc.value()
}

/// General discrepancy pairing at particle count `t`:
/// `sum_{A \ R_{t/N}} f - sum_{R_{t/N} \ A} f` over the levels above zero.
pub fn pairing_general(cluster: &Cluster, f: impl Fn(usize, i64) -> f64, t: u64) -> f64 {
    let level = (t / cluster.n() as u64) as i64;
    let mut acc = KahanSum::new();
    for (x, y) in cluster.sites_sorted() {
        if y > level {
            acc.add(f(x, y));
        }
    }
    for y in 1..=level {
        for x in 0..cluster.n() {
            if !cluster.contains(x, y) {
                acc.add(-f(x, y));
            }
        }
    }
    acc.value()
}

/// True when `max_y |sum_x f(x, y)|` over the sampled levels stays below
/// `1e-9 N`.
pub fn zero_average_check(
    f: impl Fn(usize, i64) -> f64,
    n: usize,
    levels: impl IntoIterator<Item = i64>,
) -> bool {
    for y in levels {
        let total: f64 = (0..n).map(|x| f(x, y)).sum();
        if total.abs() > 1e-9 * n as f64 {
            return false;
        }
    }
    true
}

/// Quadratic variation `Q_N = (1/(N a_N)) sum_{A_+} psi^2`. Layers filled up
/// to the inner radius use the orthonormality shortcut; partial layers are
/// summed sitewise.
pub fn q_n_statistic(cluster: &Cluster, ext: &HarmonicExtension) -> f64 {
    let inner = cluster.inner_radius();
    let mut acc = KahanSum::new();
    for y in 1..=inner {
        acc.add(ext.layer_square_sum(y));
    }
    for (x, y) in cluster.sites_sorted() {
        if y > inner {
            let v = ext.psi_eval(x, y);
            acc.add(v * v);
        }
    }
    acc.value() / (cluster.n() as f64 * ext.a_n())
}

/// Deterministic proxy `W_N`: the same sum over the exact rectangle,
/// in closed form through the geometric series per mode.
pub fn w_n_closed_form(ext: &HarmonicExtension) -> f64 {
    let n = ext.n() as f64;
    let a_n = ext.a_n();
    let t = ext.t() as f64;
    let mut acc = 0.0;
    for (_, alpha, q) in ext.mode_data() {
        let decay = (-2.0 * q * t / (n * a_n)).exp();
        let denom = a_n * (1.0 - (-2.0 * q / a_n).exp());
        acc += alpha * alpha * (1.0 - decay) / denom;
    }
    acc
}

/// Martingale trace of the harmonic extension along a run:
/// `M(t) = (1/N) sum_{s <= t} psi(settlement_s)`, with `M(0) = 0` first.
pub fn martingale_trace_psi(log: &TrajectoryLog, ext: &HarmonicExtension) -> Vec<f64> {
    let n = ext.n() as f64;
    let mut out = Vec::with_capacity(log.entries.len() + 1);
    let mut acc = KahanSum::new();
    out.push(0.0);
    for &(_, (x, y)) in &log.entries {
        acc.add(ext.psi_eval(x, y) / n);
        out.push(acc.value());
    }
    out
}

/// Martingale trace of the layer-hitting function along a stopped run:
/// `M(t) = sum_{s <= t} (H_zeta(settlement_s) - 1/N)`.
pub fn martingale_trace_hzeta(log: &TrajectoryLog, h: &LayerHitFunction, n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(log.entries.len() + 1);
    let mut acc = KahanSum::new();
    out.push(0.0);
    for &(_, (x, y)) in &log.entries {
        acc.add(h.eval(x, y) - 1.0 / n as f64);
        out.push(acc.value());
    }
    out
}

/// `log_+(s) = max(log s, 0)`.
fn log_plus(s: f64) -> f64 {
    s.ln().max(0.0)
}

/// Deviation time scale `T# = N sqrt(tau_mix) (log N)^2`.
pub fn t_sharp(n: usize, tau_mix: u64) -> f64 {
    let nf = n as f64;
    nf * (tau_mix as f64).sqrt() * nf.ln().powi(2)
}

/// Corridor half-width
/// `Delta_N = C max(log N, sqrt(((T and T#)/N) (log N + log_+(T/N))))`.
pub fn delta_n(n: usize, t: u64, tau_mix: u64, c: f64) -> f64 {
    let nf = n as f64;
    let tf = t as f64;
    let t_eff = tf.min(t_sharp(n, tau_mix));
    let l = nf.ln() + log_plus(tf / nf);
    c * nf.ln().max((t_eff / nf * l).sqrt())
}

/// Inner-bound width `l* = C_1 sqrt((T/N)(log N + log_+(T/N)))` with the
/// default constant `C_1 = 2 sqrt(nu + 4)`.
pub fn ell_star(n: usize, t: u64, nu: f64) -> f64 {
    let c1 = 2.0 * (nu + 4.0).sqrt();
    let nf = n as f64;
    let tf = t as f64;
    c1 * (tf / nf * (nf.ln() + log_plus(tf / nf))).sqrt()
}

/// Natural log of the binomial coefficient. Small `m` is summed directly;
/// large `m` goes through log-gamma.
pub fn ln_binomial(t: u64, m: u64) -> f64 {
    if m > t {
        return f64::NEG_INFINITY;
    }
    let m = m.min(t - m);
    if m == 0 {
        return 0.0;
    }
    if m <= 64 {
        let mut acc = 0.0;
        for i in 0..m {
            acc += ((t - i) as f64).ln() - ((i + 1) as f64).ln();
        }
        acc
    } else {
        ln_gamma(t as f64 + 1.0) - ln_gamma(m as f64 + 1.0) - ln_gamma((t - m) as f64 + 1.0)
    }
}

/// Closed-form tail bound on the cluster exceeding height `h`:
/// `min(1, N^{-floor(h)} binom(T, floor(h)+1))`, evaluated in log space so
/// particle counts up to 1e9 stay finite.
pub fn apriori_tail_bound(n: usize, t: u64, h: f64) -> Result<f64> {
    if h < 0.0 {
        return Err(Error::invalid(format!("height {h} must be nonnegative")));
    }
    if n < 1 {
        return Err(Error::invalid("base size must be positive"));
    }
    let floor_h = h.floor() as u64;
    let m = floor_h + 1;
    if t < m {
        return Ok(0.0);
    }
    let log_bound = ln_binomial(t, m) - floor_h as f64 * (n as f64).ln();
    Ok(log_bound.exp().min(1.0))
}

/// The bound evaluators packaged for reporting.
#[derive(Debug, Clone, serde::Serialize)]
pub struct BoundReport {
    pub n: usize,
    pub t: u64,
    pub nu: f64,
    pub c: f64,
    pub tau_mix: u64,
    pub t_sharp: f64,
    pub delta_n: f64,
    pub ell_star: f64,
    /// `(h, bound)` rows when heights were requested.
    pub apriori: Vec<(f64, f64)>,
}

impl BoundReport {
    pub fn compute(
        n: usize,
        t: u64,
        nu: f64,
        c: f64,
        tau_mix: u64,
        heights: &[f64],
    ) -> Result<Self> {
        let apriori = heights
            .iter()
            .map(|&h| Ok((h, apriori_tail_bound(n, t, h)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(BoundReport {
            n,
            t,
            nu,
            c,
            tau_mix,
            t_sharp: t_sharp(n, tau_mix),
            delta_n: delta_n(n, t, tau_mix, c),
            ell_star: ell_star(n, t, nu),
            apriori,
        })
    }
}
