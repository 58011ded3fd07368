//! Discrete harmonic functions on the cylinder: the harmonic extension of a
//! finite-mode test function from its anchor layer, the layer-hitting
//! probabilities, the replacement residual between a test function and its
//! extension, and the closed-form variance evaluators.
//!
//! A mode-`k` function `f_k(x) e^{q y}` is annihilated by the cylinder kernel
//! exactly when `cosh(q) = 2 - lambda_k`: one quarter of `e^q + e^{-q}` from
//! the vertical steps plus `lambda_k / 2` from the horizontal half must give
//! 1. Everything in this module is built from that identity.

use crate::error::{Error, Result};
use crate::graphs::BaseGraph;
use crate::spectral::{vertical_rate, Spectrum};

/// Coefficient function of one vertical mode.
#[derive(Debug, Clone, PartialEq)]
pub enum CoeffFn {
    Const(f64),
    /// Coefficients in increasing degree.
    Poly(Vec<f64>),
    /// Sorted `(y, value)` nodes with linear interpolation, constant beyond
    /// the ends.
    Table(Vec<(f64, f64)>),
}

impl CoeffFn {
    pub fn eval(&self, y: f64) -> f64 {
        match self {
            CoeffFn::Const(c) => *c,
            CoeffFn::Poly(coeffs) => {
                let mut acc = 0.0;
                for &c in coeffs.iter().rev() {
                    acc = acc * y + c;
                }
                acc
            }
            CoeffFn::Table(nodes) => {
                if nodes.is_empty() {
                    return 0.0;
                }
                if y <= nodes[0].0 {
                    return nodes[0].1;
                }
                if y >= nodes[nodes.len() - 1].0 {
                    return nodes[nodes.len() - 1].1;
                }
                let i = nodes.partition_point(|&(x, _)| x <= y);
                let (x0, v0) = nodes[i - 1];
                let (x1, v1) = nodes[i];
                v0 + (v1 - v0) * (y - x0) / (x1 - x0)
            }
        }
    }

    /// Upper bound on `|d/dy|` over `[lo, hi]`: exact for constants and
    /// tables, a dense grid scan for polynomials.
    pub fn derivative_bound(&self, lo: f64, hi: f64) -> f64 {
        match self {
            CoeffFn::Const(_) => 0.0,
            CoeffFn::Poly(coeffs) => {
                let deriv: Vec<f64> = coeffs
                    .iter()
                    .enumerate()
                    .skip(1)
                    .map(|(i, &c)| c * i as f64)
                    .collect();
                let eval = |y: f64| {
                    let mut acc = 0.0;
                    for &c in deriv.iter().rev() {
                        acc = acc * y + c;
                    }
                    acc
                };
                let mut worst: f64 = 0.0;
                let steps = 1024;
                for i in 0..=steps {
                    let y = lo + (hi - lo) * i as f64 / steps as f64;
                    worst = worst.max(eval(y).abs());
                }
                worst
            }
            CoeffFn::Table(nodes) => {
                let mut worst: f64 = 0.0;
                for w in nodes.windows(2) {
                    let (x0, v0) = w[0];
                    let (x1, v1) = w[1];
                    if x1 > x0 && x1 >= lo && x0 <= hi {
                        worst = worst.max(((v1 - v0) / (x1 - x0)).abs());
                    }
                }
                worst
            }
        }
    }
}

/// One mode of a test function: eigen index `k >= 2` and its coefficient.
#[derive(Debug, Clone)]
pub struct Mode {
    pub k: usize,
    pub coeff: CoeffFn,
}

/// Finite-mode test function `sum_k alpha_k(y) f_k(x)`; starting the sum at
/// `k = 2` gives the zero horizontal average on every layer.
#[derive(Debug, Clone)]
pub struct TestFunction {
    modes: Vec<Mode>,
}

impl TestFunction {
    pub fn new(modes: Vec<Mode>) -> Result<Self> {
        if modes.is_empty() {
            return Err(Error::invalid("test function needs at least one mode"));
        }
        for m in &modes {
            if m.k < 2 {
                return Err(Error::invalid(format!(
                    "mode index {} < 2 would break the zero horizontal average",
                    m.k
                )));
            }
        }
        let mut ks: Vec<usize> = modes.iter().map(|m| m.k).collect();
        ks.sort_unstable();
        ks.dedup();
        if ks.len() != modes.len() {
            return Err(Error::invalid("duplicate mode indices"));
        }
        Ok(TestFunction { modes })
    }

    /// Single mode with a constant coefficient.
    pub fn single_const(k: usize, value: f64) -> Result<Self> {
        TestFunction::new(vec![Mode {
            k,
            coeff: CoeffFn::Const(value),
        }])
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn max_k(&self) -> usize {
        self.modes.iter().map(|m| m.k).max().unwrap()
    }

    /// Lattice extension `phi(x, y) = sum_k alpha_k(y / a_N) f_k(x)`.
    pub fn phi_eval(&self, spectrum: &Spectrum, a_n: f64, x: usize, y: i64) -> f64 {
        let height = y as f64 / a_n;
        self.modes
            .iter()
            .map(|m| m.coeff.eval(height) * spectrum.eigenvector(m.k)[x])
            .sum()
    }
}

/// The discrete harmonic extension of a test function from its anchor layer
/// `y = T/N`: per mode, `alpha_k(T/(N a_N)) f_k(x) exp(q_k^N (y - T/N)/a_N)`.
#[derive(Debug, Clone)]
pub struct HarmonicExtension<'a> {
    spectrum: &'a Spectrum,
    a_n: f64,
    t: u64,
    n: usize,
    modes: Vec<ExtMode>,
}

#[derive(Debug, Clone)]
struct ExtMode {
    k: usize,
    alpha_anchor: f64,
    /// `q_k^N`.
    q_rescaled: f64,
}

impl<'a> HarmonicExtension<'a> {
    pub fn new(
        tf: &TestFunction,
        spectrum: &'a Spectrum,
        g: &BaseGraph,
        a_n: f64,
        t: u64,
    ) -> Result<Self> {
        if a_n <= 0.0 {
            return Err(Error::invalid("a_N must be positive"));
        }
        if tf.max_k() > spectrum.n() {
            return Err(Error::invalid(format!(
                "mode {} exceeds graph size {}",
                tf.max_k(),
                spectrum.n()
            )));
        }
        let n = g.n();
        let anchor_height = t as f64 / (n as f64 * a_n);
        let modes = tf
            .modes
            .iter()
            .map(|m| -> Result<ExtMode> {
                let lambda = spectrum.eigenvalue(m.k);
                Ok(ExtMode {
                    k: m.k,
                    alpha_anchor: m.coeff.eval(anchor_height),
                    q_rescaled: a_n * vertical_rate(lambda)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(HarmonicExtension {
            spectrum,
            a_n,
            t,
            n,
            modes,
        })
    }

    pub fn a_n(&self) -> f64 {
        self.a_n
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Anchor layer `T/N` in lattice units.
    pub fn anchor_level(&self) -> f64 {
        self.t as f64 / self.n as f64
    }

    /// Anchor height `T/(N a_N)` in rescaled units.
    pub fn anchor_height(&self) -> f64 {
        self.t as f64 / (self.n as f64 * self.a_n)
    }

    /// `(k, alpha_k at the anchor, q_k^N)` per mode.
    pub fn mode_data(&self) -> impl Iterator<Item = (usize, f64, f64)> + '_ {
        self.modes
            .iter()
            .map(|m| (m.k, m.alpha_anchor, m.q_rescaled))
    }

    pub fn psi_eval(&self, x: usize, y: i64) -> f64 {
        let shift = y as f64 - self.anchor_level();
        self.modes
            .iter()
            .map(|m| {
                m.alpha_anchor
                    * self.spectrum.eigenvector(m.k)[x]
                    * (m.q_rescaled * shift / self.a_n).exp()
            })
            .sum()
    }

    /// `sum_x psi(x, y)^2` for a full layer, through the orthonormality
    /// shortcut `N sum_k alpha_k^2 exp(2 q_k^N (y - T/N)/a_N)`.
    pub fn layer_square_sum(&self, y: i64) -> f64 {
        let shift = y as f64 - self.anchor_level();
        self.n as f64
            * self
                .modes
                .iter()
                .map(|m| {
                    m.alpha_anchor * m.alpha_anchor
                        * (2.0 * m.q_rescaled * shift / self.a_n).exp()
                })
                .sum::<f64>()
    }
}

/// Replacement residual of mode `k` at lattice level `y`:
/// `alpha_k(y/a_N) - alpha_k(T/(N a_N)) exp(q_k^N (y - T/N)/a_N)`.
/// Vanishes exactly on the anchor layer.
pub fn beta_eval(tf: &TestFunction, ext: &HarmonicExtension, k: usize, y: i64) -> Result<f64> {
    let mode = tf
        .modes
        .iter()
        .find(|m| m.k == k)
        .ok_or_else(|| Error::invalid(format!("mode {k} not present")))?;
    let ext_mode = ext
        .modes
        .iter()
        .find(|m| m.k == k)
        .ok_or_else(|| Error::invalid(format!("mode {k} not bound in the extension")))?;
    let direct = mode.coeff.eval(y as f64 / ext.a_n);
    let extended = ext_mode.alpha_anchor
        * (ext_mode.q_rescaled * (y as f64 - ext.anchor_level()) / ext.a_n).exp();
    Ok(direct - extended)
}

/// Probability that the cylinder walk from `(x, y)` first reaches the layer
/// of `zeta.1` at the vertex `zeta.0`; zero above the layer by convention.
///
/// Evaluated through the full spectral sum
/// `(1/N) sum_k f_k(x) f_k(zeta_1) e^{q_k (y - zeta_2)}` with
/// `cosh(q_k) = 2 - lambda_k` (the `q_1 = 0` term carries the deep-limit
/// mass `1/N`). The sum solves the same Dirichlet problem as the hitting
/// probability: it is bounded, discrete harmonic below the layer and matches
/// the delta data on it; the slab solver below and the Monte Carlo
/// frequencies in the test suite validate it independently.
#[derive(Debug, Clone)]
pub struct LayerHitFunction<'a> {
    spectrum: &'a Spectrum,
    zeta: (usize, i64),
    /// `f_k(zeta_1)` per eigen index.
    weights: Vec<f64>,
    /// `q_k = acosh(2 - lambda_k)`.
    rates: Vec<f64>,
}

impl<'a> LayerHitFunction<'a> {
    pub fn new(spectrum: &'a Spectrum, zeta: (usize, i64)) -> Result<Self> {
        if zeta.0 >= spectrum.n() {
            return Err(Error::invalid(format!("target column {} out of range", zeta.0)));
        }
        let n = spectrum.n();
        let mut weights = Vec::with_capacity(n);
        let mut rates = Vec::with_capacity(n);
        for k in 1..=n {
            weights.push(spectrum.eigenvector(k)[zeta.0]);
            rates.push(vertical_rate(spectrum.eigenvalue(k).clamp(0.0, 1.0))?);
        }
        Ok(LayerHitFunction {
            spectrum,
            zeta,
            weights,
            rates,
        })
    }

    pub fn zeta(&self) -> (usize, i64) {
        self.zeta
    }

    /// `H_zeta(x, y)`, clamped to `[0, 1]`. Negative values beyond `-1e-10`
    /// signal a corrupted spectrum and panic.
    pub fn eval(&self, x: usize, y: i64) -> f64 {
        if y > self.zeta.1 {
            return 0.0;
        }
        let n = self.spectrum.n();
        let shift = (y - self.zeta.1) as f64;
        let mut acc = 0.0;
        for k in 1..=n {
            acc += self.spectrum.eigenvector(k)[x]
                * self.weights[k - 1]
                * (self.rates[k - 1] * shift).exp();
        }
        let v = acc / n as f64;
        assert!(
            v >= -1e-10,
            "layer-hit value {v} below -1e-10 at ({x}, {y}); spectrum corrupted"
        );
        v.clamp(0.0, 1.0)
    }
}

/// Max residual of the cylinder kernel applied to `f` over the window
/// `y_lo..=y_hi` (all columns): `|(P f)(x, y) - f(x, y)|`. The function must
/// be evaluable one level beyond the window on both sides.
pub fn harmonicity_residual(
    f: impl Fn(usize, i64) -> f64,
    g: &BaseGraph,
    y_lo: i64,
    y_hi: i64,
) -> f64 {
    let d = g.degree() as f64;
    let mut worst: f64 = 0.0;
    for y in y_lo..=y_hi {
        for x in 0..g.n() {
            let mut applied = 0.25 * f(x, y + 1) + 0.25 * f(x, y - 1) + 0.25 * f(x, y);
            for &v in g.neighbors(x) {
                applied += f(v, y) / (4.0 * d);
            }
            worst = worst.max((applied - f(x, y)).abs());
        }
    }
    worst
}

/// Limit variance of the averaged fluctuation pairing:
/// `sum_k alpha_k(y0)^2 (1 - e^{-2 gamma_k y0}) / (2 gamma_k)`.
/// `gammas[i]` pairs with `tf.modes()[i]`.
pub fn variance_sigma2(tf: &TestFunction, gammas: &[f64], y0: f64) -> Result<f64> {
    if gammas.len() != tf.modes.len() {
        return Err(Error::invalid("one gamma per mode required"));
    }
    let mut acc = 0.0;
    for (mode, &gamma) in tf.modes.iter().zip(gammas) {
        if gamma <= 0.0 {
            return Err(Error::invalid(format!("gamma = {gamma} must be positive")));
        }
        let a = mode.coeff.eval(y0);
        acc += a * a * (1.0 - (-2.0 * gamma * y0).exp()) / (2.0 * gamma);
    }
    Ok(acc)
}

/// Dirichlet Green's function of `-d^2/dy^2 + mu` on the half-line, by the
/// method of images.
pub fn green_slice(mu: f64, y: f64, y_prime: f64) -> Result<f64> {
    if mu <= 0.0 {
        return Err(Error::invalid(format!("mu = {mu} must be positive")));
    }
    if y < 0.0 || y_prime < 0.0 {
        return Err(Error::invalid("heights must be nonnegative"));
    }
    let r = mu.sqrt();
    Ok(((-r * (y - y_prime).abs()).exp() - (-r * (y + y_prime)).exp()) / (2.0 * r))
}

/// Mode variance of the fractional field of order `s` on the base:
/// `sum_k coeff_k^2 nu_k^{-s}`.
pub fn fgf_variance(coeffs: &[f64], nus: &[f64], s: f64) -> Result<f64> {
    if coeffs.len() != nus.len() {
        return Err(Error::invalid("one eigenvalue per coefficient required"));
    }
    if s <= 0.0 {
        return Err(Error::invalid(format!("order s = {s} must be positive")));
    }
    let mut acc = 0.0;
    for (&c, &nu) in coeffs.iter().zip(nus) {
        if nu <= 0.0 {
            return Err(Error::invalid(format!("eigenvalue nu = {nu} must be positive")));
        }
        acc += c * c * nu.powf(-s);
    }
    Ok(acc)
}

/// Layer-hitting probabilities on a truncated slab, solved as a dense linear
/// system: unknowns on levels `y_bottom..zeta_2 - 1`, delta data on the
/// target layer, and the deep-limit value `1/N` imposed one level below the
/// slab. Fully independent of the spectral representation; truncation error
/// decays like `e^{-q_2 (depth below the window)}`.
#[derive(Debug, Clone)]
pub struct SlabSolution {
    pub zeta: (usize, i64),
    pub y_bottom: i64,
    /// `values[level - y_bottom][x]`.
    pub values: Vec<Vec<f64>>,
}

impl SlabSolution {
    pub fn value(&self, x: usize, y: i64) -> Option<f64> {
        if y == self.zeta.1 {
            return Some(if x == self.zeta.0 { 1.0 } else { 0.0 });
        }
        if y < self.y_bottom || y >= self.zeta.1 {
            return None;
        }
        Some(self.values[(y - self.y_bottom) as usize][x])
    }
}

pub fn slab_hit_solve(g: &BaseGraph, zeta: (usize, i64), y_bottom: i64) -> Result<SlabSolution> {
    if y_bottom >= zeta.1 {
        return Err(Error::invalid("slab bottom must lie below the target layer"));
    }
    let n = g.n();
    let levels = (zeta.1 - y_bottom) as usize;
    let size = n * levels;
    if size > 20_000 {
        return Err(Error::invalid(format!("slab system of size {size} too large")));
    }
    let idx = |x: usize, y: i64| -> usize { (y - y_bottom) as usize * n + x };
    let d = g.degree() as f64;
    let mut a = vec![0.0; size * size];
    let mut b = vec![0.0; size];
    for y in y_bottom..zeta.1 {
        for x in 0..n {
            let row = idx(x, y);
            // u(x,y) - (1/4)u(x,y+1) - (1/4)u(x,y-1) - (1/2)(P u)(x,y) = 0
            a[row * size + row] += 1.0 - 0.25; // lazy self within the horizontal half
            for &v in g.neighbors(x) {
                a[row * size + idx(v, y)] -= 1.0 / (4.0 * d);
            }
            if y + 1 == zeta.1 {
                if x == zeta.0 {
                    b[row] += 0.25;
                }
            } else {
                a[row * size + idx(x, y + 1)] -= 0.25;
            }
            if y - 1 < y_bottom {
                b[row] += 0.25 / n as f64;
            } else {
                a[row * size + idx(x, y - 1)] -= 0.25;
            }
        }
    }
    let u = solve_dense(&mut a, &mut b, size)?;
    let values = (0..levels)
        .map(|l| u[l * n..(l + 1) * n].to_vec())
        .collect();
    Ok(SlabSolution {
        zeta,
        y_bottom,
        values,
    })
}

/// Gaussian elimination with partial pivoting; `a` is row-major `n x n`.
fn solve_dense(a: &mut [f64], b: &mut [f64], n: usize) -> Result<Vec<f64>> {
    for col in 0..n {
        let mut pivot = col;
        let mut best = a[col * n + col].abs();
        for row in (col + 1)..n {
            let v = a[row * n + col].abs();
            if v > best {
                best = v;
                pivot = row;
            }
        }
        if best < 1e-300 {
            return Err(Error::NumericFailure("singular slab system".into()));
        }
        if pivot != col {
            for j in 0..n {
                a.swap(col * n + j, pivot * n + j);
            }
            b.swap(col, pivot);
        }
        let diag = a[col * n + col];
        for row in (col + 1)..n {
            let factor = a[row * n + col] / diag;
            if factor == 0.0 {
                continue;
            }
            a[row * n + col] = 0.0;
            for j in (col + 1)..n {
                a[row * n + j] -= factor * a[col * n + j];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for j in (row + 1)..n {
            acc -= a[row * n + j] * x[j];
        }
        x[row] = acc / a[row * n + row];
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::{build_cycle, build_torus};
    use crate::spectral::{closed_form_cycle, closed_form_torus};

    const GAMMA2: f64 = 4.442882938158366; // sqrt(2) pi

    #[test]
    fn coeff_functions_evaluate() {
        assert_eq!(CoeffFn::Const(2.5).eval(17.0), 2.5);
        let p = CoeffFn::Poly(vec![1.0, -2.0, 0.5]); // 1 - 2y + y^2/2
        assert!((p.eval(2.0) - (1.0 - 4.0 + 2.0)).abs() < 1e-15);
        assert!((p.derivative_bound(0.0, 2.0) - 2.0).abs() < 1e-9);

        let t = CoeffFn::Table(vec![(0.0, 0.0), (1.0, 2.0), (3.0, 2.0)]);
        assert_eq!(t.eval(0.5), 1.0);
        assert_eq!(t.eval(2.0), 2.0);
        assert_eq!(t.eval(-1.0), 0.0);
        assert_eq!(t.eval(9.0), 2.0);
        assert_eq!(t.derivative_bound(0.0, 3.0), 2.0);
    }

    #[test]
    fn test_function_validation() {
        assert!(TestFunction::single_const(1, 1.0).is_err());
        assert!(TestFunction::new(vec![]).is_err());
        assert!(TestFunction::new(vec![
            Mode { k: 2, coeff: CoeffFn::Const(1.0) },
            Mode { k: 2, coeff: CoeffFn::Const(2.0) },
        ])
        .is_err());
    }

    #[test]
    fn psi_matches_phi_on_anchor_layer() {
        let g = build_cycle(16).unwrap();
        let s = closed_form_cycle(16).unwrap();
        let tf = TestFunction::new(vec![
            Mode { k: 2, coeff: CoeffFn::Poly(vec![0.3, 0.5]) },
            Mode { k: 4, coeff: CoeffFn::Const(1.2) },
        ])
        .unwrap();
        let a_n = 16.0;
        let t = 16 * 16; // anchor layer at 16
        let ext = HarmonicExtension::new(&tf, &s, &g, a_n, t).unwrap();
        for x in 0..16 {
            let anchor_y = 16i64;
            let psi = ext.psi_eval(x, anchor_y);
            let phi = tf.phi_eval(&s, a_n, x, anchor_y);
            assert!((psi - phi).abs() < 1e-12, "x = {x}");
        }
        // Decay toward -infinity.
        assert!(ext.psi_eval(3, -200).abs() < 1e-12);
    }

    #[test]
    fn psi_is_discrete_harmonic() {
        let g = build_cycle(64).unwrap();
        let s = closed_form_cycle(64).unwrap();
        let tf = TestFunction::single_const(2, 1.0).unwrap();
        let ext = HarmonicExtension::new(&tf, &s, &g, 64.0, 64 * 64).unwrap();
        let res = harmonicity_residual(|x, y| ext.psi_eval(x, y), &g, -8, 70);
        assert!(res <= 1e-12, "residual {res}");
    }

    #[test]
    fn phi_itself_is_not_harmonic() {
        // Negative control: a generic coefficient leaves a visible residual.
        let g = build_cycle(16).unwrap();
        let s = closed_form_cycle(16).unwrap();
        let tf = TestFunction::new(vec![Mode {
            k: 2,
            coeff: CoeffFn::Poly(vec![0.0, 1.0]),
        }])
        .unwrap();
        let res = harmonicity_residual(|x, y| tf.phi_eval(&s, 16.0, x, y), &g, 1, 20);
        assert!(res > 1e-6, "residual {res} unexpectedly small");
    }

    #[test]
    fn layer_square_sum_identity() {
        let g = build_torus(4, 2).unwrap();
        let s = closed_form_torus(4, 2).unwrap();
        let tf = TestFunction::new(vec![
            Mode { k: 2, coeff: CoeffFn::Const(0.7) },
            Mode { k: 6, coeff: CoeffFn::Const(-1.1) },
        ])
        .unwrap();
        let ext = HarmonicExtension::new(&tf, &s, &g, 4.0, 16 * 4).unwrap();
        for y in [-3i64, 0, 2, 4, 7] {
            let direct: f64 = (0..16).map(|x| ext.psi_eval(x, y).powi(2)).sum();
            let shortcut = ext.layer_square_sum(y);
            assert!(
                (direct - shortcut).abs() <= 1e-9 * direct.abs().max(1.0),
                "y = {y}: {direct} vs {shortcut}"
            );
        }
    }

    #[test]
    fn beta_vanishes_on_anchor_and_matches_substitution() {
        let g = build_cycle(16).unwrap();
        let s = closed_form_cycle(16).unwrap();
        let tf = TestFunction::single_const(2, 1.0).unwrap();
        let a_n = 16.0;
        let t = 16 * 16;
        let ext = HarmonicExtension::new(&tf, &s, &g, a_n, t).unwrap();
        assert_eq!(beta_eval(&tf, &ext, 2, 16).unwrap(), 0.0);

        // Constant coefficient 1 at y = T/N + a_N: beta = 1 - e^{q_2^N}.
        let (_, _, q) = ext.mode_data().next().unwrap();
        let b = beta_eval(&tf, &ext, 2, 16 + 16).unwrap();
        assert!((b - (1.0 - q.exp())).abs() < 1e-12);
        assert!(beta_eval(&tf, &ext, 3, 0).is_err());
    }

    #[test]
    fn beta_obeys_lipschitz_window_bound() {
        // |beta_k(y)| <= C delta / a_N near the anchor, with C from the
        // coefficient's derivative bound and the mode rate.
        let g = build_cycle(32).unwrap();
        let s = closed_form_cycle(32).unwrap();
        let coeff = CoeffFn::Poly(vec![0.5, 0.25]);
        let tf = TestFunction::new(vec![Mode { k: 2, coeff: coeff.clone() }]).unwrap();
        let a_n = 32.0;
        let t = 32 * 32;
        let ext = HarmonicExtension::new(&tf, &s, &g, a_n, t).unwrap();
        let (_, alpha_anchor, q) = ext.mode_data().next().unwrap();
        let delta = 6i64;
        let anchor = 32i64;
        // Lipschitz constants of the two branches over the window.
        let lip = coeff.derivative_bound(
            (anchor - delta) as f64 / a_n,
            (anchor + delta) as f64 / a_n,
        ) + (alpha_anchor * q).abs() * (q * delta as f64 / a_n).exp();
        let c = lip;
        for y in (anchor - delta)..=(anchor + delta) {
            let b = beta_eval(&tf, &ext, 2, y).unwrap().abs();
            let bound = c * delta as f64 / a_n;
            assert!(b <= bound + 1e-12, "y = {y}: |beta| = {b} > {bound}");
        }
    }

    #[test]
    fn layer_hit_boundary_and_limits() {
        let g = build_cycle(8).unwrap();
        let s = closed_form_cycle(8).unwrap();
        let h = LayerHitFunction::new(&s, (2, 4)).unwrap();
        // Boundary delta.
        assert!((h.eval(2, 4) - 1.0).abs() < 1e-10);
        for x in 0..8 {
            if x != 2 {
                assert!(h.eval(x, 4).abs() < 1e-10, "x = {x}");
            }
            // Above the layer: zero by convention.
            assert_eq!(h.eval(x, 5), 0.0);
        }
        // Deep limit 1/N.
        for x in 0..8 {
            assert!((h.eval(x, -400) - 0.125).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_hit_normalization_and_average() {
        let g = build_cycle(8).unwrap();
        let s = closed_form_cycle(8).unwrap();
        let n = g.n();
        for y in [-9i64, -2, 0, 3] {
            for x in 0..n {
                let total: f64 = (0..n)
                    .map(|z| LayerHitFunction::new(&s, (z, 4)).unwrap().eval(x, y))
                    .sum();
                assert!((total - 1.0).abs() <= 1e-10, "x = {x}, y = {y}: {total}");
            }
            // Column-averaged hit probability is exactly 1/N below the layer.
            let h = LayerHitFunction::new(&s, (3, 4)).unwrap();
            let avg: f64 = (0..n).map(|x| h.eval(x, y)).sum::<f64>() / n as f64;
            assert!((avg - 1.0 / n as f64).abs() <= 1e-12, "y = {y}");
        }
    }

    #[test]
    fn layer_hit_is_harmonic_below_layer() {
        let g = build_torus(4, 2).unwrap();
        let s = closed_form_torus(4, 2).unwrap();
        let h = LayerHitFunction::new(&s, (5, 3)).unwrap();
        let res = harmonicity_residual(|x, y| h.eval(x, y), &g, -10, 2);
        assert!(res <= 1e-12, "residual {res}");
    }

    #[test]
    fn spectral_matches_slab_solve() {
        let g = build_cycle(8).unwrap();
        let s = closed_form_cycle(8).unwrap();
        let zeta = (2usize, 4i64);
        let h = LayerHitFunction::new(&s, zeta).unwrap();
        let slab = slab_hit_solve(&g, zeta, -60).unwrap();
        let mut worst: f64 = 0.0;
        for y in -12..=4 {
            for x in 0..8 {
                let a = h.eval(x, y);
                let b = slab.value(x, y).unwrap();
                worst = worst.max((a - b).abs());
            }
        }
        assert!(worst <= 1e-8, "max slab deviation {worst}");
    }

    #[test]
    fn sigma2_formula_values() {
        let tf = TestFunction::single_const(2, 1.0).unwrap();
        let v = variance_sigma2(&tf, &[GAMMA2], 1.0).unwrap();
        assert!((v - 0.11252397032864826).abs() < 1e-12);
        // Vanishes at height zero, saturates at the half-variance.
        assert!(variance_sigma2(&tf, &[GAMMA2], 1e-12).unwrap() < 1e-11);
        let v = variance_sigma2(&tf, &[GAMMA2], 1e6).unwrap();
        assert!((v - 1.0 / (2.0 * GAMMA2)).abs() < 1e-12);
        assert!(variance_sigma2(&tf, &[0.0], 1.0).is_err());
    }

    #[test]
    fn green_slice_values() {
        assert_eq!(green_slice(2.0, 0.0, 1.5).unwrap(), 0.0);
        assert_eq!(green_slice(2.0, 1.5, 0.0).unwrap(), 0.0);
        // At mu = gamma^2 and y = y' = y0 the slice variance matches the
        // per-mode factor of the limit formula.
        let v = green_slice(GAMMA2 * GAMMA2, 1.0, 1.0).unwrap();
        assert!((v - 0.11252397032864826).abs() < 1e-12);
        let mu = 2.0 * std::f64::consts::PI.powi(2);
        let v = green_slice(mu, 1.0, 1.0).unwrap();
        assert!((v - 0.11252397032864826).abs() < 1e-12);
        assert!(green_slice(0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn fgf_variance_values() {
        assert_eq!(fgf_variance(&[1.0], &[0.5], 1.0).unwrap(), 2.0);
        assert_eq!(fgf_variance(&[0.0, 0.0], &[0.3, 0.9], 1.0).unwrap(), 0.0);
        // Order 1/2 equals twice the deep-slice limit per mode at mu = nu.
        let nu = 0.37;
        let deep = green_slice(nu, 1e9, 1e9).unwrap();
        let f = fgf_variance(&[1.0], &[nu], 0.5).unwrap();
        assert!((f - 2.0 * deep).abs() < 1e-9);
        assert!(fgf_variance(&[1.0], &[-0.1], 1.0).is_err());
        assert!(fgf_variance(&[1.0], &[0.5], 0.0).is_err());
    }

    #[test]
    fn settlement_mean_of_harmonic_extension_is_zero() {
        // Optional stopping: one particle released into a fixed cluster has
        // E[psi(settlement)] = 0; Monte Carlo mean within 4 standard errors.
        use crate::idla::{Cluster, ParticleDriver, WalkConfig};
        use crate::walk::WalkStream;
        let g = build_cycle(16).unwrap();
        let s = closed_form_cycle(16).unwrap();
        let tf = TestFunction::single_const(2, 1.0).unwrap();
        let ext = HarmonicExtension::new(&tf, &s, &g, 16.0, 16 * 4).unwrap();

        let mut base = Cluster::new_filled_to(16, 2);
        for (x, y) in [(0usize, 3i64), (1, 3), (5, 3), (9, 3), (9, 4), (13, 3)] {
            base.insert_site(x, y);
        }
        let driver = ParticleDriver::new(&g, &s, WalkConfig::with_eps(1e-12)).unwrap();
        let trials = 100_000u64;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for i in 0..trials {
            let mut cluster = base.clone();
            let mut stream = WalkStream::new(777, i);
            let (x, y) = driver.add_particle(&mut cluster, &mut stream).unwrap();
            let v = ext.psi_eval(x, y);
            sum += v;
            sumsq += v * v;
        }
        let mean = sum / trials as f64;
        let var = (sumsq - sum * sum / trials as f64) / (trials as f64 - 1.0);
        let se = (var / trials as f64).sqrt();
        assert!(
            mean.abs() <= 4.0 * se,
            "settlement mean {mean} exceeds 4 x {se}"
        );
    }
}
