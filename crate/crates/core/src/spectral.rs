//! Eigendecomposition of the lazy kernel `P_N` and the scaling quantities
//! derived from its spectrum.
//!
//! Eigenvectors are normalized in the averaged inner product
//! `<f, g> = (1/N) sum_x f(x) g(x)`, so the constant eigenvector is
//! identically 1 and Parseval reads `sum_k f_k(x)^2 = N`.

use crate::error::{Error, Result};
use crate::graphs::{BaseGraph, Family};

/// Largest graph the dense eigensolver accepts.
pub const SPECTRAL_SIZE_CAP: usize = 4096;

/// Relative tolerance grouping numerically equal eigenvalues into one
/// multiplicity block.
pub const BLOCK_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    ClosedForm,
    Numeric,
}

/// Eigenvalues (descending) and eigenvectors of `P_N`.
#[derive(Debug, Clone)]
pub struct Spectrum {
    eigenvalues: Vec<f64>,
    /// `eigenvectors[k][x]`, with `(1/N) sum_x f_k(x)^2 = 1`.
    eigenvectors: Vec<Vec<f64>>,
    provenance: Provenance,
}

impl Spectrum {
    pub fn n(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `lambda_k`, 1-based: `eigenvalue(1) = 1`.
    pub fn eigenvalue(&self, k: usize) -> f64 {
        self.eigenvalues[k - 1]
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// `f_k`, 1-based.
    pub fn eigenvector(&self, k: usize) -> &[f64] {
        &self.eigenvectors[k - 1]
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    /// Spectral gap `1 - lambda_2`.
    pub fn gap(&self) -> f64 {
        1.0 - self.eigenvalue(2)
    }

    /// Relaxation time `1 / (1 - lambda_2)`.
    pub fn tau_rel(&self) -> f64 {
        1.0 / self.gap()
    }

    /// Group indices (0-based) into multiplicity blocks at [`BLOCK_TOL`].
    pub fn blocks(&self) -> Vec<std::ops::Range<usize>> {
        let mut out = Vec::new();
        let mut start = 0usize;
        for i in 1..self.eigenvalues.len() {
            let scale = self.eigenvalues[start].abs().max(1.0);
            if (self.eigenvalues[i] - self.eigenvalues[start]).abs() > BLOCK_TOL * scale {
                out.push(start..i);
                start = i;
            }
        }
        out.push(start..self.eigenvalues.len());
        out
    }

    /// Projector onto the block spanned by eigenvectors `range` (0-based),
    /// as the matrix `p[x][y] = (1/N) sum_{k in range} f_k(x) f_k(y)`.
    pub fn block_projector(&self, range: std::ops::Range<usize>) -> Vec<Vec<f64>> {
        let n = self.n();
        let mut p = vec![vec![0.0; n]; n];
        for k in range {
            let f = &self.eigenvectors[k];
            for x in 0..n {
                for y in 0..n {
                    p[x][y] += f[x] * f[y] / n as f64;
                }
            }
        }
        p
    }

    /// Verify the type invariants at tolerance `tol`: descending order,
    /// `lambda_1 = 1` simple, nonnegative spectrum, orthonormality,
    /// eigen-residuals, constant first eigenvector.
    pub fn check(&self, g: &BaseGraph, tol: f64) -> Result<()> {
        let n = self.n();
        if n != g.n() {
            return Err(Error::Validation("spectrum size mismatch".into()));
        }
        for w in self.eigenvalues.windows(2) {
            if w[1] > w[0] + tol {
                return Err(Error::Validation("eigenvalues not descending".into()));
            }
        }
        if (self.eigenvalue(1) - 1.0).abs() > tol {
            return Err(Error::Validation(format!(
                "lambda_1 = {} != 1",
                self.eigenvalue(1)
            )));
        }
        if n > 1 && self.eigenvalue(2) >= 1.0 - BLOCK_TOL {
            return Err(Error::Validation("lambda_1 is not simple".into()));
        }
        if self.eigenvalues[n - 1] < -tol {
            return Err(Error::Validation(format!(
                "negative eigenvalue {} violates laziness",
                self.eigenvalues[n - 1]
            )));
        }
        for x in 0..n {
            if (self.eigenvectors[0][x] - 1.0).abs() > tol {
                return Err(Error::Validation("f_1 is not the constant 1".into()));
            }
        }
        for j in 0..n {
            for k in j..n {
                let mut dot = 0.0;
                for x in 0..n {
                    dot += self.eigenvectors[j][x] * self.eigenvectors[k][x];
                }
                dot /= n as f64;
                let expect = if j == k { 1.0 } else { 0.0 };
                if (dot - expect).abs() > tol {
                    return Err(Error::Validation(format!(
                        "orthonormality violated at ({j},{k}): {dot}"
                    )));
                }
            }
        }
        let residual = self.max_eigen_residual(g);
        if residual > tol {
            return Err(Error::Validation(format!(
                "eigen-residual {residual} exceeds {tol}"
            )));
        }
        Ok(())
    }

    /// `max_k max_x |(P f_k)(x) - lambda_k f_k(x)|`.
    pub fn max_eigen_residual(&self, g: &BaseGraph) -> f64 {
        let n = self.n();
        let d = g.degree() as f64;
        let mut worst: f64 = 0.0;
        for k in 0..n {
            let f = &self.eigenvectors[k];
            let lam = self.eigenvalues[k];
            for x in 0..n {
                let mut pf = 0.5 * f[x];
                for &v in g.neighbors(x) {
                    pf += f[v] / (2.0 * d);
                }
                worst = worst.max((pf - lam * f[x]).abs());
            }
        }
        worst
    }

    /// `max_x |sum_k f_k(x)^2 - N|`.
    pub fn max_parseval_defect(&self) -> f64 {
        let n = self.n();
        let mut worst: f64 = 0.0;
        for x in 0..n {
            let s: f64 = (0..n).map(|k| self.eigenvectors[k][x].powi(2)).sum();
            worst = worst.max((s - n as f64).abs());
        }
        worst
    }
}

fn kernel_matrix(g: &BaseGraph) -> Vec<f64> {
    let n = g.n();
    let d = g.degree() as f64;
    let mut a = vec![0.0; n * n];
    for x in 0..n {
        a[x * n + x] = 0.5;
        for &v in g.neighbors(x) {
            a[x * n + v] = 1.0 / (2.0 * d);
        }
    }
    a
}

/// Cyclic Jacobi rotations on a dense symmetric matrix, returning
/// `(eigenvalues, eigenvector columns)` in standard Euclidean normalization.
fn jacobi_eigen(mut a: Vec<f64>, n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    const MAX_SWEEPS: usize = 64;
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let frob: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let target = 1e-14 * frob.max(f64::MIN_POSITIVE);

    for _sweep in 0..MAX_SWEEPS {
        let mut off: f64 = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[p * n + q] * a[p * n + q];
            }
        }
        if off.sqrt() <= target {
            let eig: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
            return Ok((eig, v));
        }
        for p in 0..n - 1 {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = 0.5 * (aqq - app) / apq;
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    let sign = if theta >= 0.0 { 1.0 } else { -1.0 };
                    sign / (theta.abs() + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                let tau = s / (1.0 + c);

                a[p * n + p] = app - t * apq;
                a[q * n + q] = aqq + t * apq;
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for j in 0..n {
                    if j != p && j != q {
                        let ajp = a[j * n + p];
                        let ajq = a[j * n + q];
                        let new_p = ajp - s * (ajq + tau * ajp);
                        let new_q = ajq + s * (ajp - tau * ajq);
                        a[j * n + p] = new_p;
                        a[p * n + j] = new_p;
                        a[j * n + q] = new_q;
                        a[q * n + j] = new_q;
                    }
                }
                for j in 0..n {
                    let vjp = v[j * n + p];
                    let vjq = v[j * n + q];
                    v[j * n + p] = vjp - s * (vjq + tau * vjp);
                    v[j * n + q] = vjq + s * (vjp - tau * vjq);
                }
            }
        }
    }
    Err(Error::NumericFailure(format!(
        "Jacobi rotations did not converge in {MAX_SWEEPS} sweeps (n = {n})"
    )))
}

/// Deterministic orthonormal basis of a multiplicity block: project the
/// coordinate seeds `e_0, e_1, ...` onto the block subspace in index order,
/// Gram-Schmidt the projections, and fix each sign so the lowest-index
/// coordinate of visible magnitude is positive. Columns come in and out in
/// standard Euclidean normalization.
fn canonicalize_block(cols: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let r = cols.len();
    let n = cols[0].len();
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(r);
    for seed in 0..n {
        if out.len() == r {
            break;
        }
        // Projection of e_seed onto span(cols): sum_j cols[j][seed] * cols[j].
        let mut p = vec![0.0; n];
        for col in cols {
            let w = col[seed];
            for (pi, ci) in p.iter_mut().zip(col.iter()) {
                *pi += w * ci;
            }
        }
        for prev in &out {
            let dot: f64 = p.iter().zip(prev.iter()).map(|(a, b)| a * b).sum();
            for (pi, qi) in p.iter_mut().zip(prev.iter()) {
                *pi -= dot * qi;
            }
        }
        let norm: f64 = p.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-6 {
            continue;
        }
        for pi in p.iter_mut() {
            *pi /= norm;
        }
        fix_sign(&mut p);
        out.push(p);
    }
    debug_assert_eq!(out.len(), r, "coordinate seeds must span the block");
    out
}

fn fix_sign(v: &mut [f64]) {
    for &x in v.iter() {
        if x.abs() > 1e-9 {
            if x < 0.0 {
                for y in v.iter_mut() {
                    *y = -*y;
                }
            }
            return;
        }
    }
}

/// Dense eigendecomposition of `P_N` by cyclic Jacobi rotations, with a
/// deterministic basis inside each multiplicity block.
pub fn decompose(g: &BaseGraph, tol: f64) -> Result<Spectrum> {
    let n = g.n();
    if n > SPECTRAL_SIZE_CAP {
        return Err(Error::invalid(format!(
            "graph size {n} exceeds dense eigensolver cap {SPECTRAL_SIZE_CAP}"
        )));
    }
    let (eig, vmat) = jacobi_eigen(kernel_matrix(g), n)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig[j].partial_cmp(&eig[i]).unwrap());
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig[i]).collect();
    let columns: Vec<Vec<f64>> = order
        .iter()
        .map(|&i| (0..n).map(|row| vmat[row * n + i]).collect())
        .collect();

    let mut spectrum = Spectrum {
        eigenvalues,
        eigenvectors: columns,
        provenance: Provenance::Numeric,
    };

    // Make each multiplicity block deterministic, then rescale to the
    // averaged inner product.
    let blocks = spectrum.blocks();
    let sqrt_n = (n as f64).sqrt();
    let mut fixed: Vec<Vec<f64>> = Vec::with_capacity(n);
    for block in blocks {
        let cols = &spectrum.eigenvectors[block.clone()];
        for mut col in canonicalize_block(cols) {
            for x in col.iter_mut() {
                *x *= sqrt_n;
            }
            fixed.push(col);
        }
    }
    spectrum.eigenvectors = fixed;
    spectrum.check(g, tol)?;
    Ok(spectrum)
}

/// Exact spectrum of the lazy walk on the cycle `Z_N`:
/// `f_1 = 1`, paired modes `sqrt(2) cos(2 pi j x / N)`, `sqrt(2) sin(...)`
/// with eigenvalue `1/2 + cos(2 pi j / N)/2`, plus the alternating vector
/// `(-1)^x` at eigenvalue 0 when `N` is even.
pub fn closed_form_cycle(n: usize) -> Result<Spectrum> {
    if n < 3 {
        return Err(Error::invalid(format!("cycle needs N >= 3, got {n}")));
    }
    let mut eigenvalues = Vec::with_capacity(n);
    let mut eigenvectors = Vec::with_capacity(n);
    eigenvalues.push(1.0);
    eigenvectors.push(vec![1.0; n]);
    let sqrt2 = std::f64::consts::SQRT_2;
    for j in 1..=(n - 1) / 2 {
        let lam = 0.5 + 0.5 * (2.0 * std::f64::consts::PI * j as f64 / n as f64).cos();
        let cosv: Vec<f64> = (0..n)
            .map(|x| sqrt2 * (2.0 * std::f64::consts::PI * (j * x) as f64 / n as f64).cos())
            .collect();
        let sinv: Vec<f64> = (0..n)
            .map(|x| sqrt2 * (2.0 * std::f64::consts::PI * (j * x) as f64 / n as f64).sin())
            .collect();
        eigenvalues.push(lam);
        eigenvectors.push(cosv);
        eigenvalues.push(lam);
        eigenvectors.push(sinv);
    }
    if n % 2 == 0 {
        eigenvalues.push(0.0);
        eigenvectors.push((0..n).map(|x| if x % 2 == 0 { 1.0 } else { -1.0 }).collect());
    }
    Ok(Spectrum {
        eigenvalues,
        eigenvectors,
        provenance: Provenance::ClosedForm,
    })
}

/// Exact spectrum of the lazy walk on `Z_n^dim`: tensor products of cycle
/// eigenfunctions with eigenvalue `1/2 + (1/(2 dim)) sum_i cos(2 pi m_i / n)`.
/// Sorted descending; ties broken by the lexicographic frequency vector and
/// trig pattern, so the basis is reproducible.
pub fn closed_form_torus(n: usize, dim: usize) -> Result<Spectrum> {
    if n < 3 {
        return Err(Error::invalid(format!("torus needs n >= 3, got {n}")));
    }
    if dim < 1 {
        return Err(Error::invalid("torus needs dim >= 1"));
    }

    // 1D factor functions on Z_n with their frequency and adjacency weight.
    struct Factor {
        freq: usize,
        trig: u8, // 0 = cos/constant/alternating, 1 = sin
        values: Vec<f64>,
        cos_term: f64,
    }
    let sqrt2 = std::f64::consts::SQRT_2;
    let mut factors: Vec<Factor> = Vec::with_capacity(n);
    factors.push(Factor {
        freq: 0,
        trig: 0,
        values: vec![1.0; n],
        cos_term: 1.0,
    });
    for j in 1..=(n - 1) / 2 {
        let angle = 2.0 * std::f64::consts::PI * j as f64 / n as f64;
        factors.push(Factor {
            freq: j,
            trig: 0,
            values: (0..n).map(|x| sqrt2 * (angle * x as f64).cos()).collect(),
            cos_term: angle.cos(),
        });
        factors.push(Factor {
            freq: j,
            trig: 1,
            values: (0..n).map(|x| sqrt2 * (angle * x as f64).sin()).collect(),
            cos_term: angle.cos(),
        });
    }
    if n % 2 == 0 {
        factors.push(Factor {
            freq: n / 2,
            trig: 0,
            values: (0..n).map(|x| if x % 2 == 0 { 1.0 } else { -1.0 }).collect(),
            cos_term: -1.0,
        });
    }

    let n_total = n.pow(dim as u32);
    struct Entry {
        lambda: f64,
        freqs: Vec<usize>,
        trigs: Vec<u8>,
        vector: Vec<f64>,
    }
    let mut entries: Vec<Entry> = Vec::with_capacity(n_total);
    let mut index = vec![0usize; dim];
    loop {
        let mut lambda_sum = 0.0;
        for &fi in &index {
            lambda_sum += factors[fi].cos_term;
        }
        let lambda = 0.5 + lambda_sum / (2.0 * dim as f64);
        let mut vector = vec![1.0; n_total];
        for (v, val) in vector.iter_mut().enumerate() {
            let mut rest = v;
            for fi in index.iter() {
                let digit = rest % n;
                rest /= n;
                *val *= factors[*fi].values[digit];
            }
        }
        entries.push(Entry {
            lambda,
            freqs: index.iter().map(|&fi| factors[fi].freq).collect(),
            trigs: index.iter().map(|&fi| factors[fi].trig).collect(),
            vector,
        });
        // Advance the mixed-radix index over factor choices.
        let mut axis = 0;
        loop {
            if axis == dim {
                break;
            }
            index[axis] += 1;
            if index[axis] < factors.len() {
                break;
            }
            index[axis] = 0;
            axis += 1;
        }
        if axis == dim {
            break;
        }
    }

    entries.sort_by(|a, b| {
        b.lambda
            .partial_cmp(&a.lambda)
            .unwrap()
            .then_with(|| a.freqs.cmp(&b.freqs))
            .then_with(|| a.trigs.cmp(&b.trigs))
    });

    Ok(Spectrum {
        eigenvalues: entries.iter().map(|e| e.lambda).collect(),
        eigenvectors: entries.into_iter().map(|e| e.vector).collect(),
        provenance: Provenance::ClosedForm,
    })
}

/// Vertical decay rate `q` solving `cosh(q) = 2 - lambda`.
pub fn vertical_rate(lambda: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!(
            "eigenvalue {lambda} outside [0, 1]"
        )));
    }
    Ok((2.0 - lambda).acosh())
}

/// Rescaled rate `q^N = a_N acosh(2 - lambda)`, solving
/// `cosh(q^N / a_N) = 2 - lambda`.
pub fn rescaled_rate(lambda: f64, a_n: f64) -> Result<f64> {
    if a_n <= 0.0 {
        return Err(Error::invalid(format!("vertical scale a_N = {a_n} <= 0")));
    }
    Ok(a_n * vertical_rate(lambda)?)
}

/// Family-canonical vertical scale: `N` for cycles, `n` for tori, and the
/// gap-normalizing fallback `1/sqrt(2(1 - lambda_2))` otherwise.
pub fn default_a_n(g: &BaseGraph, spectrum: &Spectrum) -> f64 {
    match g.family() {
        Family::Cycle { n } => *n as f64,
        Family::Torus { n, .. } => *n as f64,
        _ => 1.0 / (2.0 * spectrum.gap()).sqrt(),
    }
}

/// Total-variation distance of `row` from uniform.
fn tv_from_uniform(row: &[f64]) -> f64 {
    let u = 1.0 / row.len() as f64;
    0.5 * row.iter().map(|p| (p - u).abs()).sum::<f64>()
}

fn apply_kernel_steps(g: &BaseGraph, row: &mut Vec<f64>, steps: u64) {
    let n = g.n();
    let d = g.degree() as f64;
    let mut next = vec![0.0; n];
    for _ in 0..steps {
        for x in next.iter_mut() {
            *x = 0.0;
        }
        for x in 0..n {
            let p = row[x];
            if p == 0.0 {
                continue;
            }
            next[x] += 0.5 * p;
            let w = p / (2.0 * d);
            for &v in g.neighbors(x) {
                next[v] += w;
            }
        }
        std::mem::swap(row, &mut next);
    }
}

fn tv_at(g: &BaseGraph, start: usize, t: u64) -> f64 {
    let mut row = vec![0.0; g.n()];
    row[start] = 1.0;
    apply_kernel_steps(g, &mut row, t);
    tv_from_uniform(&row)
}

fn worst_tv_at(g: &BaseGraph, t: u64) -> f64 {
    if g.is_transitive() {
        // All rows coincide by transitivity.
        tv_at(g, 0, t)
    } else {
        (0..g.n())
            .map(|x| tv_at(g, x, t))
            .fold(0.0f64, |a, b| a.max(b))
    }
}

/// Threshold slack absorbing f64 rounding when the exact TV lands on 1/4,
/// as it does for the complete graph on four vertices after one step.
const TV_SLACK: f64 = 1e-12;

/// Total-variation mixing time at threshold 1/4: the smallest `t` with
/// `max_x ||P^t(x, .) - uniform||_TV <= 1/4`. Doubling search followed by
/// bisection; TV distance to stationarity is nonincreasing in `t`.
pub fn mixing_time(g: &BaseGraph, spectrum: &Spectrum) -> Result<u64> {
    if worst_tv_at(g, 0) <= 0.25 + TV_SLACK {
        return Ok(0);
    }
    let cap = (64.0 * spectrum.tau_rel() * (4.0 * g.n() as f64).ln()).ceil() as u64;
    let mut hi = 1u64;
    while worst_tv_at(g, hi) > 0.25 + TV_SLACK {
        hi *= 2;
        if hi > cap {
            return Err(Error::NumericFailure(format!(
                "mixing-time search exceeded cap {cap}; the relaxation-time bound is violated"
            )));
        }
    }
    let mut lo = hi / 2; // TV(lo) > 1/4 (or lo = 0 handled above)
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if worst_tv_at(g, mid) <= 0.25 + TV_SLACK {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// The vertical scale, decay rates and time scales bundled per graph.
#[derive(Debug, Clone)]
pub struct ScalingBundle {
    pub a_n: f64,
    /// `a_N sqrt(2 (1 - lambda_k))` for `k = 2..=K`.
    pub gammas: Vec<f64>,
    /// `q_k^N` for `k = 2..=K`.
    pub q_rates: Vec<f64>,
    pub tau_rel: f64,
    pub tau_mix: u64,
    pub t_sharp: f64,
}

impl ScalingBundle {
    pub fn new(
        g: &BaseGraph,
        spectrum: &Spectrum,
        a_n_override: Option<f64>,
        k_max: usize,
    ) -> Result<Self> {
        if k_max < 2 || k_max > spectrum.n() {
            return Err(Error::invalid(format!(
                "mode cap K = {k_max} outside 2..=N"
            )));
        }
        let a_n = a_n_override.unwrap_or_else(|| default_a_n(g, spectrum));
        if a_n <= 0.0 {
            return Err(Error::invalid("a_N must be positive"));
        }
        let mut gammas = Vec::with_capacity(k_max - 1);
        let mut q_rates = Vec::with_capacity(k_max - 1);
        for k in 2..=k_max {
            let lam = spectrum.eigenvalue(k);
            gammas.push(a_n * (2.0 * (1.0 - lam)).sqrt());
            q_rates.push(rescaled_rate(lam, a_n)?);
        }
        let tau_mix = mixing_time(g, spectrum)?;
        let n = g.n() as f64;
        Ok(ScalingBundle {
            a_n,
            gammas,
            q_rates,
            tau_rel: spectrum.tau_rel(),
            tau_mix,
            t_sharp: n * (tau_mix as f64).sqrt() * n.ln().powi(2),
        })
    }

    /// `gamma_k` estimate, 2-based like the eigenvalue index.
    pub fn gamma(&self, k: usize) -> f64 {
        self.gammas[k - 2]
    }

    /// `q_k^N`, 2-based.
    pub fn q_rate(&self, k: usize) -> f64 {
        self.q_rates[k - 2]
    }

    /// Eigenvalue of the rescaled horizontal operator, `2 a_N^2 (1 - lambda_k)`.
    pub fn rescaled_operator_eigenvalue(&self, spectrum: &Spectrum, k: usize) -> f64 {
        2.0 * self.a_n * self.a_n * (1.0 - spectrum.eigenvalue(k))
    }
}

/// Convergence report for the rescaled low spectrum across a size sweep.
#[derive(Debug, Clone)]
pub struct AssumptionReport {
    pub sizes: Vec<usize>,
    /// `per_mode[k - 2][i]` = `a_N sqrt(2 (1 - lambda_k))` at `sizes[i]`.
    pub per_mode: Vec<Vec<f64>>,
    /// Last-gap Cauchy estimate per mode.
    pub last_gaps: Vec<f64>,
    /// Extrapolated limit per mode (the value at the largest size).
    pub gamma_estimates: Vec<f64>,
    /// Spectral gaps `1 - lambda_2` per size.
    pub spectral_gaps: Vec<f64>,
    /// Set when the spectral gap does not vanish along the sweep, so no
    /// diverging `a_N` exists and the rescaled limit is meaningless.
    pub gap_does_not_vanish: bool,
    /// Per mode: estimate collapsing to zero or wandering away.
    pub flagged_modes: Vec<usize>,
}

/// Check eigenvalue convergence of the rescaled operator over a family
/// sweep: for each `k <= K`, the sequence `a_N sqrt(2 (1 - lambda_k))`, its
/// last gap, and divergence/collapse flags.
pub fn check_assumption_spectral(
    build: impl Fn(usize) -> Result<BaseGraph>,
    sizes: &[usize],
    k_max: usize,
) -> Result<AssumptionReport> {
    if sizes.len() < 2 {
        return Err(Error::invalid("assumption check needs at least two sizes"));
    }
    if sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("sizes must be strictly increasing"));
    }
    let mut per_mode = vec![Vec::with_capacity(sizes.len()); k_max - 1];
    let mut spectral_gaps = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let g = build(size)?;
        let spectrum = match g.family() {
            Family::Cycle { n } => closed_form_cycle(*n)?,
            Family::Torus { n, dim } => closed_form_torus(*n, *dim)?,
            _ => decompose(&g, 1e-8)?,
        };
        if k_max > spectrum.n() {
            return Err(Error::invalid(format!(
                "mode cap {k_max} exceeds graph size {}",
                spectrum.n()
            )));
        }
        let a_n = default_a_n(&g, &spectrum);
        spectral_gaps.push(spectrum.gap());
        for k in 2..=k_max {
            per_mode[k - 2].push(a_n * (2.0 * (1.0 - spectrum.eigenvalue(k))).sqrt());
        }
    }
    let last_gaps: Vec<f64> = per_mode
        .iter()
        .map(|seq| (seq[seq.len() - 1] - seq[seq.len() - 2]).abs())
        .collect();
    let gamma_estimates: Vec<f64> = per_mode.iter().map(|seq| seq[seq.len() - 1]).collect();
    let gap_does_not_vanish =
        spectral_gaps[spectral_gaps.len() - 1] > 0.5 * spectral_gaps[0];
    let mut flagged_modes = Vec::new();
    for (i, seq) in per_mode.iter().enumerate() {
        let last = seq[seq.len() - 1];
        let first_gap = (seq[1] - seq[0]).abs();
        let collapsing = last < 1e-9;
        let diverging = last_gaps[i] > first_gap.max(1e-12) && last_gaps[i] > 0.05 * last.abs();
        if collapsing || diverging {
            flagged_modes.push(i + 2);
        }
    }
    Ok(AssumptionReport {
        sizes: sizes.to_vec(),
        per_mode,
        last_gaps,
        gamma_estimates,
        spectral_gaps,
        gap_does_not_vanish,
        flagged_modes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::{build_complete, build_cycle, build_torus};

    fn match_blocks(a: &Spectrum, b: &Spectrum, value_tol: f64, projector_tol: f64) {
        assert_eq!(a.n(), b.n());
        for (x, y) in a.eigenvalues().iter().zip(b.eigenvalues()) {
            assert!((x - y).abs() <= value_tol, "eigenvalue mismatch {x} vs {y}");
        }
        let blocks_a = a.blocks();
        let blocks_b = b.blocks();
        assert_eq!(blocks_a.len(), blocks_b.len(), "block structure differs");
        for (ba, bb) in blocks_a.into_iter().zip(blocks_b) {
            assert_eq!(ba, bb);
            let pa = a.block_projector(ba.clone());
            let pb = b.block_projector(bb);
            for (ra, rb) in pa.iter().zip(&pb) {
                for (ea, eb) in ra.iter().zip(rb) {
                    assert!(
                        (ea - eb).abs() <= projector_tol,
                        "projector entries differ: {ea} vs {eb}"
                    );
                }
            }
        }
    }

    #[test]
    fn decompose_cycle4_matches_hand_values() {
        let g = build_cycle(4).unwrap();
        let s = decompose(&g, 1e-9).unwrap();
        let expect = [1.0, 0.5, 0.5, 0.0];
        for (k, e) in expect.iter().enumerate() {
            assert!((s.eigenvalue(k + 1) - e).abs() < 1e-12);
        }
    }

    #[test]
    fn decompose_complete2_by_hand() {
        let g = build_complete(2).unwrap();
        let s = decompose(&g, 1e-9).unwrap();
        assert!((s.eigenvalue(1) - 1.0).abs() < 1e-14);
        assert!(s.eigenvalue(2).abs() < 1e-14);
    }

    #[test]
    fn decompose_matches_closed_form_on_cycle64() {
        let g = build_cycle(64).unwrap();
        let numeric = decompose(&g, 1e-9).unwrap();
        let exact = closed_form_cycle(64).unwrap();
        exact.check(&g, 1e-10).unwrap();
        match_blocks(&numeric, &exact, 1e-10, 1e-8);
    }

    #[test]
    fn decompose_matches_closed_form_on_torus() {
        let g = build_torus(4, 2).unwrap();
        let numeric = decompose(&g, 1e-9).unwrap();
        let exact = closed_form_torus(4, 2).unwrap();
        exact.check(&g, 1e-10).unwrap();
        match_blocks(&numeric, &exact, 1e-10, 1e-8);
    }

    #[test]
    fn closed_form_cycle_values() {
        let s = closed_form_cycle(64).unwrap();
        // j = 1 pair sits at indices 2 and 3.
        let expect = 0.5 + 0.5 * (2.0 * std::f64::consts::PI / 64.0).cos();
        assert!((s.eigenvalue(2) - expect).abs() < 1e-15);
        assert!((s.eigenvalue(3) - expect).abs() < 1e-15);
        assert!((expect - 0.9975923633360985).abs() < 1e-12);
        // Even N: alternating eigenvector at eigenvalue 0.
        assert!(s.eigenvalue(64).abs() < 1e-15);
        let f = s.eigenvector(64);
        for x in 0..64 {
            assert_eq!(f[x], if x % 2 == 0 { 1.0 } else { -1.0 });
        }
        // j = 0: constant at eigenvalue 1.
        assert!((s.eigenvalue(1) - 1.0).abs() < 1e-15);
        assert!(s.eigenvector(1).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn closed_form_torus_values() {
        let s = closed_form_torus(8, 2).unwrap();
        assert!((s.eigenvalue(1) - 1.0).abs() < 1e-15);
        // Lowest nonconstant block: |m| = 1, eigenvalue 1/2 + (cos(pi/4) + 1)/4.
        let expect = 0.5 + 0.25 * ((std::f64::consts::PI / 4.0).cos() + 1.0);
        assert!((expect - 0.9267766952966369).abs() < 1e-15);
        for k in 2..=5 {
            assert!((s.eigenvalue(k) - expect).abs() < 1e-14, "k = {k}");
        }
        assert!(s.eigenvalue(6) < expect - 1e-6);
    }

    #[test]
    fn torus_expansion_limit() {
        // n^2 (1 - lambda_m) -> pi^2 |m|^2 / dim for fixed m = (1, 0).
        let target = std::f64::consts::PI.powi(2) / 2.0;
        let mut last_err = f64::INFINITY;
        for n in [16usize, 32, 64] {
            let s = closed_form_torus(n, 2).unwrap();
            let v = (n * n) as f64 * (1.0 - s.eigenvalue(2));
            let err = (v - target).abs();
            assert!(err < last_err, "errors shrink along the sweep");
            last_err = err;
        }
        assert!(last_err < 0.01);
    }

    #[test]
    fn vertical_rate_values() {
        assert_eq!(vertical_rate(1.0).unwrap(), 0.0);
        assert!((vertical_rate(0.0).unwrap() - 1.3169578969248166).abs() < 1e-12);
        assert!((vertical_rate(0.5).unwrap() - 0.9624236501192069).abs() < 1e-12);
        assert!(vertical_rate(-0.1).is_err());
        assert!(vertical_rate(1.1).is_err());
    }

    #[test]
    fn vertical_rate_inverts_cosh() {
        let max_q = 2.0f64.acosh();
        for i in 0..=1000 {
            let q = max_q * i as f64 / 1000.0;
            let lambda = 2.0 - q.cosh();
            let back = vertical_rate(lambda).unwrap();
            assert!((back - q).abs() <= 1e-12, "q = {q}, back = {back}");
        }
    }

    #[test]
    fn rescaled_rate_properties() {
        let s = closed_form_cycle(64).unwrap();
        let q = rescaled_rate(s.eigenvalue(2), 64.0).unwrap();
        assert!((q - 4.440208348810909).abs() < 1e-9);
        let gamma2 = std::f64::consts::SQRT_2 * std::f64::consts::PI;
        assert!((q - gamma2).abs() < 0.01);

        assert_eq!(rescaled_rate(1.0, 17.0).unwrap(), 0.0);
        let q1 = rescaled_rate(0.7, 3.0).unwrap();
        let q2 = rescaled_rate(0.7, 6.0).unwrap();
        assert_eq!(q2, 2.0 * q1);
    }

    #[test]
    fn default_scale_per_family() {
        let g = build_cycle(64).unwrap();
        let s = closed_form_cycle(64).unwrap();
        assert_eq!(default_a_n(&g, &s), 64.0);

        let g = build_torus(8, 2).unwrap();
        let s = closed_form_torus(8, 2).unwrap();
        assert_eq!(default_a_n(&g, &s), 8.0);

        let g = crate::graphs::build_generalized_petersen(12, 5).unwrap();
        let s = decompose(&g, 1e-8).unwrap();
        let expect = 1.0 / (2.0 * (1.0 - s.eigenvalue(2))).sqrt();
        assert_eq!(default_a_n(&g, &s), expect);
    }

    #[test]
    fn mixing_times_small_graphs() {
        // K_3 and K_4 mix in one step, K_5 needs two; cycle(4) mixes in one.
        // Cross-checked against exact row powers below.
        for (g, expect) in [
            (build_complete(3).unwrap(), 1),
            (build_complete(4).unwrap(), 1),
            (build_complete(5).unwrap(), 2),
            (build_cycle(4).unwrap(), 1),
        ] {
            let s = decompose(&g, 1e-8).unwrap();
            let t = mixing_time(&g, &s).unwrap();
            assert_eq!(t, expect, "{}", g.label());
            assert!(worst_tv_at(&g, t) <= 0.25 + TV_SLACK);
            if t > 0 {
                assert!(worst_tv_at(&g, t - 1) > 0.25 + TV_SLACK);
            }
        }
    }

    #[test]
    fn mixing_time_within_relaxation_bound() {
        for g in [
            build_cycle(8).unwrap(),
            build_cycle(16).unwrap(),
            build_torus(4, 2).unwrap(),
            crate::graphs::build_generalized_petersen(12, 5).unwrap(),
        ] {
            let s = decompose(&g, 1e-8).unwrap();
            let t = mixing_time(&g, &s).unwrap();
            let bound = s.tau_rel() * (4.0 * g.n() as f64).ln() + 1.0;
            assert!(
                (t as f64) <= bound,
                "{}: tau_mix = {t} exceeds tau_rel log(4N) + 1 = {bound}",
                g.label()
            );
        }
    }

    #[test]
    fn scaling_bundle_consistency() {
        let g = build_cycle(16).unwrap();
        let s = closed_form_cycle(16).unwrap();
        let b = ScalingBundle::new(&g, &s, None, 5).unwrap();
        assert_eq!(b.a_n, 16.0);
        assert!(b.gammas.windows(2).all(|w| w[0] <= w[1] + 1e-12));
        assert!(b.q_rates.iter().all(|&q| q > 0.0));
        assert!(b.tau_rel >= 1.0);
        let n = 16f64;
        assert!((b.t_sharp - n * (b.tau_mix as f64).sqrt() * n.ln().powi(2)).abs() < 1e-9);
        // Rescaled operator eigenvalue agrees with gamma^2 through the
        // identity 2 a^2 (1 - lambda) = gamma^2.
        for k in 2..=5 {
            let op = b.rescaled_operator_eigenvalue(&s, k);
            assert!((op - b.gamma(k).powi(2)).abs() < 1e-9);
        }
    }

    #[test]
    fn assumption_check_on_cycles() {
        let report =
            check_assumption_spectral(|n| build_cycle(n), &[32, 64, 128, 256], 4).unwrap();
        let gamma2 = std::f64::consts::SQRT_2 * std::f64::consts::PI;
        assert!((report.gamma_estimates[0] - gamma2).abs() < 2e-3);
        // gamma_4 = 2 gamma_2 for the cycle (second frequency pair).
        assert!((report.gamma_estimates[2] - 2.0 * gamma2).abs() < 2e-2);
        assert!(!report.gap_does_not_vanish);
        assert!(report.flagged_modes.is_empty());
        for seq in &report.per_mode {
            let gaps: Vec<f64> = seq.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
            assert!(gaps.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        }
    }

    #[test]
    fn assumption_check_flags_complete_graphs() {
        let report = check_assumption_spectral(|n| build_complete(n), &[8, 16, 32], 3).unwrap();
        assert!(report.gap_does_not_vanish);
    }

    #[test]
    fn parseval_holds() {
        for s in [
            closed_form_cycle(16).unwrap(),
            closed_form_torus(4, 2).unwrap(),
            decompose(
                &crate::graphs::build_generalized_petersen(12, 5).unwrap(),
                1e-8,
            )
            .unwrap(),
        ] {
            let n = s.n() as f64;
            assert!(s.max_parseval_defect() <= 1e-8 * n);
        }
    }

    #[test]
    fn size_cap_enforced() {
        let res = build_cycle(SPECTRAL_SIZE_CAP + 1).and_then(|g| decompose(&g, 1e-8));
        assert!(matches!(res, Err(Error::InvalidParameter(_))));
    }
}
