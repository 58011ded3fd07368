//! Monte Carlo experiment drivers.
//!
//! Every driver is a pure function of its config, including the master seed:
//! replicate `r` owns the stream indices `(r+1) << 32 + j`, results are
//! collected in replicate order and reduced sequentially with compensated
//! sums, so output bytes are identical no matter how many threads run the
//! replicates.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graphs::BaseGraph;
use crate::harmonic::{
    slab_hit_solve, HarmonicExtension, LayerHitFunction, TestFunction,
};
use crate::idla::{
    replay, resample_one, run, run_stopped, Cluster, ParticleDriver, StackRealization,
    StartRule, Trajectory, WalkConfig,
};
use crate::observables::{delta_n, pairing_fast, q_n_statistic, w_n_closed_form};
use crate::snapshot::{content_hash, write_snapshot};
use crate::spectral::{
    closed_form_cycle, closed_form_torus, decompose, default_a_n, mixing_time, Spectrum,
};
use crate::stats::{
    chi_square_p, chi_square_stat, fit_through_origin, quantile, KahanSum, StatSummary,
};
use crate::walk::{first_hit_level, CylinderState, HorizontalCap, WalkStream};

fn replicate_base(r: usize) -> u64 {
    (r as u64 + 1) << 32
}

/// Build the spectrum for a graph, preferring the closed forms.
pub fn spectrum_for(g: &BaseGraph) -> Result<Spectrum> {
    match g.family() {
        crate::graphs::Family::Cycle { n } => closed_form_cycle(*n),
        crate::graphs::Family::Torus { n, dim } => closed_form_torus(*n, *dim),
        _ => decompose(g, 1e-8),
    }
}

/// How the variance target of the averaged-fluctuation experiment is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarianceTarget {
    /// Limit formula with the closed-form rate limits (cycles only).
    ClosedForm,
    /// The finite-size proxy `W_N`, labeled as such in the summary.
    FiniteN,
}

#[derive(Debug, Clone)]
pub struct GffConfig {
    pub graph: BaseGraph,
    pub y0: f64,
    pub test_function: TestFunction,
    pub replicates: usize,
    pub seed: u64,
    pub walk: WalkConfig,
    pub a_n: Option<f64>,
    pub target: VarianceTarget,
}

#[derive(Debug, Clone)]
pub struct GffRow {
    pub replicate: usize,
    pub t: u64,
    pub pairing_phi: f64,
    pub pairing_psi: f64,
    pub inner_radius: i64,
    pub outer_height: i64,
    pub q_n: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct GffSummary {
    pub replicates: usize,
    pub n: usize,
    pub t: u64,
    pub a_n: f64,
    pub target_kind: String,
    pub sigma2_target: f64,
    pub w_n: f64,
    pub phi: StatSummary,
    pub psi: StatSummary,
    /// Sample variance of the normalized `phi - psi` pairing gap.
    pub gap_variance: f64,
    pub q_n_mean: f64,
    /// `a_N / (log N + log_+ a_N)`; the scaling regime is only meaningful
    /// when this ratio is large.
    pub assumption_ratio: f64,
    /// Largest `|Q_N - W_N| a_N / max(deviation, 1)` across replicates.
    pub qw_fit_c: f64,
}

#[derive(Debug, Clone)]
pub struct GffOutput {
    pub rows: Vec<GffRow>,
    pub summary: GffSummary,
}

/// Averaged-fluctuation experiment: `M` independent runs to `T = N floor(y0
/// a_N)` particles each, paired against the lattice test function and its
/// harmonic extension.
pub fn run_gff_clt(cfg: &GffConfig) -> Result<GffOutput> {
    if cfg.replicates < 2 {
        return Err(Error::invalid(
            "variance estimation needs at least two replicates",
        ));
    }
    let g = &cfg.graph;
    let spectrum = spectrum_for(g)?;
    let a_n = cfg.a_n.unwrap_or_else(|| default_a_n(g, &spectrum));
    if cfg.y0 <= 0.0 {
        return Err(Error::invalid("y0 must be positive"));
    }
    let t = g.n() as u64 * (cfg.y0 * a_n).floor() as u64;
    if t == 0 {
        return Err(Error::invalid("y0 a_N below one layer of particles"));
    }
    let ext = HarmonicExtension::new(&cfg.test_function, &spectrum, g, a_n, t)?;
    let norm = (g.n() as f64 * a_n).sqrt();

    let rows: Vec<GffRow> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| -> Result<GffRow> {
            let (cluster, _) = run(g, &spectrum, t, cfg.seed, replicate_base(r), cfg.walk, false)?;
            let phi = pairing_fast(&cluster, |x, y| {
                cfg.test_function.phi_eval(&spectrum, a_n, x, y)
            });
            let psi = pairing_fast(&cluster, |x, y| ext.psi_eval(x, y));
            Ok(GffRow {
                replicate: r,
                t,
                pairing_phi: phi / norm,
                pairing_psi: psi / norm,
                inner_radius: cluster.inner_radius(),
                outer_height: cluster.outer_height(),
                q_n: q_n_statistic(&cluster, &ext),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let w_n = w_n_closed_form(&ext);
    let (target_kind, sigma2_target) = match cfg.target {
        VarianceTarget::ClosedForm => {
            let gammas = closed_form_gammas(g, &cfg.test_function)?;
            (
                "closed-form".to_string(),
                crate::harmonic::variance_sigma2(&cfg.test_function, &gammas, cfg.y0)?,
            )
        }
        VarianceTarget::FiniteN => ("finite-N surrogate".to_string(), w_n),
    };

    let phi_samples: Vec<f64> = rows.iter().map(|r| r.pairing_phi).collect();
    let psi_samples: Vec<f64> = rows.iter().map(|r| r.pairing_psi).collect();
    let gaps: Vec<f64> = rows
        .iter()
        .map(|r| r.pairing_phi - r.pairing_psi)
        .collect();
    let phi = StatSummary::from_samples(&phi_samples, Some(sigma2_target))?;
    let psi = StatSummary::from_samples(&psi_samples, Some(sigma2_target))?;
    let gap_variance = StatSummary::from_samples(&gaps, None)?.variance;

    let mut qn_acc = KahanSum::new();
    let mut qw_fit_c: f64 = 0.0;
    let anchor = t as f64 / g.n() as f64;
    for row in &rows {
        qn_acc.add(row.q_n);
        let dev = (anchor - row.inner_radius as f64)
            .max(row.outer_height as f64 - anchor)
            .max(1.0);
        qw_fit_c = qw_fit_c.max((row.q_n - w_n).abs() * a_n / dev);
    }
    let nf = g.n() as f64;
    let assumption_ratio = a_n / (nf.ln() + a_n.ln().max(0.0));

    Ok(GffOutput {
        summary: GffSummary {
            replicates: cfg.replicates,
            n: g.n(),
            t,
            a_n,
            target_kind,
            sigma2_target,
            w_n,
            phi,
            psi,
            gap_variance,
            q_n_mean: qn_acc.value() / rows.len() as f64,
            assumption_ratio,
            qw_fit_c,
        },
        rows,
    })
}

/// Closed-form rate limits per mode (cycles: `sqrt(2) pi floor(k/2)`).
fn closed_form_gammas(g: &BaseGraph, tf: &TestFunction) -> Result<Vec<f64>> {
    match g.family() {
        crate::graphs::Family::Cycle { .. } => Ok(tf
            .modes()
            .iter()
            .map(|m| std::f64::consts::SQRT_2 * std::f64::consts::PI * (m.k / 2) as f64)
            .collect()),
        _ => Err(Error::invalid(
            "closed-form rate limits are only wired for cycle bases; use the finite-N target",
        )),
    }
}

pub fn gff_rows_to_csv(rows: &[GffRow]) -> String {
    let mut out =
        String::from("replicate,t,pairing_phi,pairing_psi,inner_radius,outer_height,q_n\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.replicate, r.t, r.pairing_phi, r.pairing_psi, r.inner_radius, r.outer_height, r.q_n
        ));
    }
    out
}

#[derive(Debug, Clone)]
pub struct MaxFluctConfig {
    /// Cycle sizes to sweep.
    pub sizes: Vec<usize>,
    pub replicates_per_size: usize,
    pub seed: u64,
    pub walk: WalkConfig,
    pub nu: f64,
    /// Corridor constant; `None` picks the pooled 99% quantile of the
    /// per-replicate required constants.
    pub corridor_c: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct FluctRow {
    pub replicate: usize,
    pub inner_deficit: f64,
    pub outer_excess: f64,
}

#[derive(Debug, Clone)]
pub struct SizeReport {
    pub n: usize,
    pub t: u64,
    pub tau_mix: u64,
    pub rows: Vec<FluctRow>,
    /// 99% quantile of the per-replicate max deviation.
    pub q99: f64,
}

#[derive(Debug, Clone)]
pub struct MaxFluctOutput {
    pub per_size: Vec<SizeReport>,
    /// Fit quality of `q99 ~ c sqrt((T/N) log N)`.
    pub sqrt_model_r2: f64,
    /// Fit quality of `q99 ~ c a_N`.
    pub linear_model_r2: f64,
    pub chosen_c: f64,
    /// Fraction of all replicates inside the corridor at `chosen_c`.
    pub corridor_coverage: f64,
    /// Corridor width over cluster height per size, at `chosen_c`.
    pub delta_over_height: Vec<f64>,
}

/// Maximal-fluctuation sweep on cycles at `T = N a_N = N^2`.
pub fn run_max_fluct(cfg: &MaxFluctConfig) -> Result<MaxFluctOutput> {
    if cfg.sizes.is_empty() {
        return Err(Error::invalid("sweep needs at least one size"));
    }
    let mut per_size = Vec::with_capacity(cfg.sizes.len());
    let mut pooled_required = Vec::new();
    let mut pooled_units = Vec::new();
    for (si, &n) in cfg.sizes.iter().enumerate() {
        let g = crate::graphs::build_cycle(n)?;
        let spectrum = spectrum_for(&g)?;
        let tau = mixing_time(&g, &spectrum)?;
        let t = (n * n) as u64;
        let rows: Vec<FluctRow> = (0..cfg.replicates_per_size)
            .into_par_iter()
            .map(|r| -> Result<FluctRow> {
                let base = replicate_base(si * cfg.replicates_per_size + r);
                let (cluster, _) = run(&g, &spectrum, t, cfg.seed, base, cfg.walk, false)?;
                let height = t as f64 / n as f64;
                Ok(FluctRow {
                    replicate: r,
                    inner_deficit: height - cluster.inner_radius() as f64,
                    outer_excess: cluster.outer_height() as f64 - height,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let unit = delta_n(n, t, tau, 1.0);
        let devs: Vec<f64> = rows
            .iter()
            .map(|row| row.inner_deficit.max(row.outer_excess))
            .collect();
        for &d in &devs {
            pooled_required.push(d / unit);
            pooled_units.push(unit);
        }
        let q99 = quantile(&devs, 0.99)?;
        per_size.push(SizeReport {
            n,
            t,
            tau_mix: tau,
            rows,
            q99,
        });
    }

    let q99s: Vec<f64> = per_size.iter().map(|s| s.q99).collect();
    let sqrt_model: Vec<f64> = per_size
        .iter()
        .map(|s| (s.t as f64 / s.n as f64 * (s.n as f64).ln()).sqrt())
        .collect();
    let linear_model: Vec<f64> = per_size.iter().map(|s| s.n as f64).collect();
    let (_, sqrt_model_r2) = fit_through_origin(&sqrt_model, &q99s)?;
    let (_, linear_model_r2) = fit_through_origin(&linear_model, &q99s)?;

    let chosen_c = match cfg.corridor_c {
        Some(c) => c,
        None => quantile(&pooled_required, 0.99)?,
    };
    let inside = pooled_required
        .iter()
        .filter(|&&req| req <= chosen_c)
        .count();
    let corridor_coverage = inside as f64 / pooled_required.len() as f64;
    let delta_over_height = per_size
        .iter()
        .map(|s| delta_n(s.n, s.t, s.tau_mix, chosen_c) / (s.t as f64 / s.n as f64))
        .collect();

    Ok(MaxFluctOutput {
        per_size,
        sqrt_model_r2,
        linear_model_r2,
        chosen_c,
        corridor_coverage,
        delta_over_height,
    })
}

pub fn fluct_rows_to_csv(report: &SizeReport) -> String {
    let mut out = String::from("replicate,n,t,inner_deficit,outer_excess\n");
    for r in &report.rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.replicate, report.n, report.t, r.inner_deficit, r.outer_excess
        ));
    }
    out
}

#[derive(Debug, Clone)]
pub struct AprioriConfig {
    pub graph: BaseGraph,
    pub t: u64,
    pub h_grid: Vec<i64>,
    pub replicates: usize,
    pub seed: u64,
    pub walk: WalkConfig,
}

#[derive(Debug, Clone)]
pub struct AprioriRow {
    pub h: i64,
    pub empirical: f64,
    pub bound: f64,
    pub empirical_se: f64,
    pub violation: bool,
}

#[derive(Debug, Clone)]
pub struct AprioriOutput {
    pub rows: Vec<AprioriRow>,
    pub max_outer_height: i64,
}

/// Empirical height tail against the closed-form binomial bound.
pub fn run_apriori_tail(cfg: &AprioriConfig) -> Result<AprioriOutput> {
    let g = &cfg.graph;
    let spectrum = spectrum_for(g)?;
    let heights: Vec<i64> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| -> Result<i64> {
            let (cluster, _) =
                run(g, &spectrum, cfg.t, cfg.seed, replicate_base(r), cfg.walk, false)?;
            Ok(cluster.outer_height())
        })
        .collect::<Result<Vec<_>>>()?;
    let m = cfg.replicates as f64;
    let rows = cfg
        .h_grid
        .iter()
        .map(|&h| -> Result<AprioriRow> {
            let exceed = heights.iter().filter(|&&y| y > h).count();
            let empirical = exceed as f64 / m;
            let bound = crate::observables::apriori_tail_bound(g.n(), cfg.t, h as f64)?;
            let empirical_se = (empirical * (1.0 - empirical) / m).sqrt();
            Ok(AprioriRow {
                h,
                empirical,
                bound,
                empirical_se,
                violation: empirical > bound + 3.0 * empirical_se,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AprioriOutput {
        rows,
        max_outer_height: heights.into_iter().max().unwrap_or(0),
    })
}

pub fn apriori_rows_to_csv(out: &AprioriOutput, t: u64) -> String {
    let mut s = String::from("h,t,empirical,bound,empirical_se,violation\n");
    for r in &out.rows {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.h, t, r.empirical, r.bound, r.empirical_se, r.violation
        ));
    }
    s
}

#[derive(Debug, Clone)]
pub struct HitConfig {
    pub graph: BaseGraph,
    pub level: i64,
    pub walks: u64,
    pub seed: u64,
    pub walk: WalkConfig,
    /// Debug negative control: grossly overweight column 0 at release.
    pub biased_release: bool,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct HitOutput {
    pub counts: Vec<u64>,
    pub chi_square: f64,
    pub p_value: f64,
}

/// First-hit column frequencies at a level, against the uniform law.
pub fn run_hit_uniformity(cfg: &HitConfig) -> Result<HitOutput> {
    let g = &cfg.graph;
    if cfg.level < 1 {
        return Err(Error::invalid("target level must be at least 1"));
    }
    let spectrum = spectrum_for(g)?;
    let cap = HorizontalCap::from_eps(cfg.walk.eps.max(1e-12), &spectrum)?;
    let n = g.n();
    let chunk = 4096u64;
    let chunks = cfg.walks.div_ceil(chunk);
    let partial: Vec<Vec<u64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut counts = vec![0u64; n];
            let lo = c * chunk;
            let hi = (lo + chunk).min(cfg.walks);
            for i in lo..hi {
                let mut stream = WalkStream::new(cfg.seed, i + 1);
                let x0 = if cfg.biased_release {
                    let v = stream.uniform(2 * n);
                    if v < n {
                        v
                    } else {
                        0
                    }
                } else {
                    stream.uniform(n)
                };
                let start = CylinderState { x: x0, y: 0 };
                let hit = first_hit_level(start, g, &mut stream, cfg.level, cap).unwrap();
                counts[hit] += 1;
            }
            counts
        })
        .collect();
    let mut counts = vec![0u64; n];
    for part in partial {
        for (acc, v) in counts.iter_mut().zip(part) {
            *acc += v;
        }
    }
    if n == 1 {
        return Ok(HitOutput {
            counts,
            chi_square: 0.0,
            p_value: 1.0,
        });
    }
    let expected = vec![cfg.walks as f64 / n as f64; n];
    let chi_square = chi_square_stat(&counts, &expected)?;
    let p_value = chi_square_p(chi_square, (n - 1) as f64)?;
    Ok(HitOutput {
        counts,
        chi_square,
        p_value,
    })
}

#[derive(Debug, Clone)]
pub struct AbelianConfig {
    pub seed: u64,
    pub exchange_trials: usize,
    pub permutations: usize,
    pub coupling_trials: usize,
    pub walk: WalkConfig,
}

impl Default for AbelianConfig {
    fn default() -> Self {
        AbelianConfig {
            seed: 0x1D1A,
            exchange_trials: 1000,
            permutations: 100,
            coupling_trials: 100,
            walk: WalkConfig::default(),
        }
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct AbelianOutput {
    pub exchange_trials: usize,
    pub exchange_max_diff: usize,
    pub exchange_odd_diffs: usize,
    pub permutations: usize,
    pub permutation_distinct_hashes: usize,
    pub coupling_trials: usize,
    pub stopped_free_violations: usize,
    pub height_mono_violations: usize,
    pub init_mono_violations: usize,
}

impl AbelianOutput {
    pub fn all_passed(&self) -> bool {
        self.exchange_max_diff <= 2
            && self.exchange_odd_diffs == 0
            && self.permutation_distinct_hashes == 1
            && self.stopped_free_violations == 0
            && self.height_mono_violations == 0
            && self.init_mono_violations == 0
    }
}

/// The four structural property suites: single-trajectory exchange,
/// processing-order invariance on the stack realization, the two
/// stopped-process couplings, and monotonicity in the initial cluster.
pub fn run_abelian_suite(cfg: &AbelianConfig) -> Result<AbelianOutput> {
    let combos: Vec<(BaseGraph, u64)> = {
        let mut v = Vec::new();
        for t in [16u64, 64] {
            v.push((crate::graphs::build_cycle(8)?, t));
            v.push((crate::graphs::build_torus(3, 2)?, t));
            v.push((crate::graphs::build_generalized_petersen(12, 5)?, t));
        }
        v
    };
    let spectra: Vec<Spectrum> = combos
        .iter()
        .map(|(g, _)| spectrum_for(g))
        .collect::<Result<Vec<_>>>()?;

    // Exchange: one redrawn trajectory moves at most two sites.
    let mut exchange_max_diff = 0usize;
    let mut exchange_odd_diffs = 0usize;
    for trial in 0..cfg.exchange_trials {
        let (g, t) = &combos[trial % combos.len()];
        let spectrum = &spectra[trial % combos.len()];
        let seed = cfg.seed.wrapping_add(trial as u64);
        let j = (trial as u64 % t) + 1;
        let (a, b) = resample_one(g, spectrum, *t, seed, j, seed ^ 0x5EED_F00D, cfg.walk)?;
        let d = a.symmetric_difference(&b);
        exchange_max_diff = exchange_max_diff.max(d);
        if d % 2 == 1 {
            exchange_odd_diffs += 1;
        }
    }

    // Order invariance on the stack realization.
    let g8 = crate::graphs::build_cycle(8)?;
    let engine = StackRealization::new(&g8, cfg.seed ^ 0x0DDE_77);
    let starts = vec![StartRule::Uniform; 64];
    let identity: Vec<usize> = (0..starts.len()).collect();
    let mut hashes = std::collections::BTreeSet::new();
    let reference = engine.run_with_order(&starts, &identity)?;
    hashes.insert(content_hash(&write_snapshot(&reference, &g8)));
    let mut shuffler = WalkStream::new(cfg.seed ^ 0x5811_FF1E, 0);
    for _ in 0..cfg.permutations {
        let mut order = identity.clone();
        for i in (1..order.len()).rev() {
            order.swap(i, shuffler.uniform(i + 1));
        }
        let cluster = engine.run_with_order(&starts, &order)?;
        hashes.insert(content_hash(&write_snapshot(&cluster, &g8)));
    }

    // Couplings on shared streams, checked after every settlement.
    let spectrum8 = spectrum_for(&g8)?;
    let driver = ParticleDriver::new(&g8, &spectrum8, cfg.walk)?;
    let mut stopped_free_violations = 0usize;
    let mut height_mono_violations = 0usize;
    let mut init_mono_violations = 0usize;
    for trial in 0..cfg.coupling_trials {
        let seed = cfg.seed.wrapping_add(0x9000 + trial as u64);
        let t = 48u64;
        let h_low = 2 + (trial as i64 % 3);
        let h_high = h_low + 3;

        let mut free = Cluster::new_flat(8);
        let mut stopped = Cluster::new_flat(8);
        let mut low = Cluster::new_flat(8);
        let mut high = Cluster::new_flat(8);
        for j in 1..=t {
            let mut s1 = WalkStream::new(seed, j);
            driver.add_particle(&mut free, &mut s1)?;
            let mut s2 = WalkStream::new(seed, j);
            driver.add_particle_stopped(&mut stopped, h_high, &mut s2)?;
            if !stopped.is_subset_of(&free) {
                stopped_free_violations += 1;
            }
            let mut s3 = WalkStream::new(seed, j);
            driver.add_particle_stopped(&mut low, h_low, &mut s3)?;
            let mut s4 = WalkStream::new(seed, j);
            driver.add_particle_stopped(&mut high, h_high, &mut s4)?;
            if !low.is_subset_of(&high) {
                height_mono_violations += 1;
            }
        }

        // Monotonicity in the initial cluster under shared trajectories.
        let trajectories: Vec<Trajectory> = (1..=32u64)
            .map(|index| Trajectory {
                seed: seed ^ 0xAAAA,
                index,
                start: StartRule::Uniform,
            })
            .collect();
        let small = replay(&g8, &spectrum8, Cluster::new_flat(8), &trajectories, cfg.walk)?;
        let large = replay(
            &g8,
            &spectrum8,
            Cluster::new_filled_to(8, 5),
            &trajectories,
            cfg.walk,
        )?;
        if !small.is_subset_of(&large) {
            init_mono_violations += 1;
        }
    }

    Ok(AbelianOutput {
        exchange_trials: cfg.exchange_trials,
        exchange_max_diff,
        exchange_odd_diffs,
        permutations: cfg.permutations,
        permutation_distinct_hashes: hashes.len(),
        coupling_trials: cfg.coupling_trials,
        stopped_free_violations,
        height_mono_violations,
        init_mono_violations,
    })
}

#[derive(Debug, Clone)]
pub struct HzetaConfig {
    pub graph: BaseGraph,
    pub zeta: (usize, i64),
    /// Window floor for the spectral-versus-slab comparison.
    pub window_lo: i64,
    pub walks_per_start: u64,
    pub starts: Vec<CylinderState>,
    pub seed: u64,
    pub walk: WalkConfig,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct HzetaOutput {
    pub max_spectral_vs_slab: f64,
    /// Chi-square p-value of the Monte Carlo first-hit counts per start.
    pub mc_p_values: Vec<f64>,
    /// Worst per-cell deviation in multinomial sigmas across starts.
    pub mc_worst_sigma: f64,
    pub normalization_max_err: f64,
    pub boundary_exact: bool,
}

/// Three-way validation of the layer-hitting function: spectral form versus
/// the truncated-slab linear solve versus Monte Carlo frequencies.
pub fn run_hzeta_validation(cfg: &HzetaConfig) -> Result<HzetaOutput> {
    let g = &cfg.graph;
    if g.n() > 16 {
        return Err(Error::invalid("slab oracle is wired for N <= 16"));
    }
    let spectrum = spectrum_for(g)?;
    let hit = LayerHitFunction::new(&spectrum, cfg.zeta)?;

    // Slab bottom far enough below the window for the truncation to be
    // invisible at 1e-8: depth scaled by the slowest vertical rate.
    let q2 = crate::spectral::vertical_rate(spectrum.eigenvalue(2))?;
    let depth = (21.0 / q2).ceil() as i64 + 8;
    let slab = slab_hit_solve(g, cfg.zeta, cfg.window_lo - depth)?;
    let mut max_spectral_vs_slab: f64 = 0.0;
    for y in cfg.window_lo..=cfg.zeta.1 {
        for x in 0..g.n() {
            let a = hit.eval(x, y);
            let b = slab.value(x, y).unwrap();
            max_spectral_vs_slab = max_spectral_vs_slab.max((a - b).abs());
        }
    }

    // Boundary row and normalization.
    let mut boundary_exact = true;
    for x in 0..g.n() {
        let expect = if x == cfg.zeta.0 { 1.0 } else { 0.0 };
        if (hit.eval(x, cfg.zeta.1) - expect).abs() > 1e-10 {
            boundary_exact = false;
        }
    }
    let mut normalization_max_err: f64 = 0.0;
    for y in [cfg.window_lo, cfg.window_lo / 2, 0, cfg.zeta.1 - 1] {
        if y > cfg.zeta.1 {
            continue;
        }
        for x in 0..g.n() {
            let total: f64 = (0..g.n())
                .map(|z| {
                    LayerHitFunction::new(&spectrum, (z, cfg.zeta.1))
                        .unwrap()
                        .eval(x, y)
                })
                .sum();
            normalization_max_err = normalization_max_err.max((total - 1.0).abs());
        }
    }

    // Monte Carlo first-hit columns from each start.
    let cap = HorizontalCap::from_eps(cfg.walk.eps.max(1e-12), &spectrum)?;
    let mut mc_p_values = Vec::with_capacity(cfg.starts.len());
    let mut mc_worst_sigma: f64 = 0.0;
    for (si, &start) in cfg.starts.iter().enumerate() {
        if start.y >= cfg.zeta.1 {
            return Err(Error::invalid("starts must lie below the target layer"));
        }
        let chunk = 4096u64;
        let chunks = cfg.walks_per_start.div_ceil(chunk);
        let partial: Vec<Vec<u64>> = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut counts = vec![0u64; g.n()];
                let lo = c * chunk;
                let hi = (lo + chunk).min(cfg.walks_per_start);
                for i in lo..hi {
                    let mut stream =
                        WalkStream::new(cfg.seed ^ (si as u64) << 48, i + 1);
                    let hit_col =
                        first_hit_level(start, g, &mut stream, cfg.zeta.1, cap).unwrap();
                    counts[hit_col] += 1;
                }
                counts
            })
            .collect();
        let mut counts = vec![0u64; g.n()];
        for part in partial {
            for (acc, v) in counts.iter_mut().zip(part) {
                *acc += v;
            }
        }
        let probs: Vec<f64> = (0..g.n())
            .map(|z| {
                LayerHitFunction::new(&spectrum, (z, cfg.zeta.1))
                    .unwrap()
                    .eval(start.x, start.y)
            })
            .collect();
        let walks = cfg.walks_per_start as f64;
        for (z, (&c, &p)) in counts.iter().zip(&probs).enumerate() {
            if p > 1e-12 {
                let sigma = (p * (1.0 - p) / walks).sqrt();
                mc_worst_sigma = mc_worst_sigma.max((c as f64 / walks - p).abs() / sigma);
            } else if c > 0 {
                return Err(Error::Validation(format!(
                    "hits at column {z} with vanishing probability"
                )));
            }
        }
        let expected: Vec<f64> = probs.iter().map(|p| p * walks).collect();
        let (obs, exp): (Vec<u64>, Vec<f64>) = counts
            .iter()
            .zip(&expected)
            .filter(|(_, &e)| e > 1e-9)
            .map(|(&o, &e)| (o, e))
            .unzip();
        let stat = chi_square_stat(&obs, &exp)?;
        mc_p_values.push(chi_square_p(stat, (obs.len() - 1) as f64)?);
    }

    Ok(HzetaOutput {
        max_spectral_vs_slab,
        mc_p_values,
        mc_worst_sigma,
        normalization_max_err,
        boundary_exact,
    })
}

#[derive(Debug, Clone)]
pub struct MartingaleConfig {
    pub graph: BaseGraph,
    pub t: u64,
    pub stop_level: i64,
    pub zeta_column: usize,
    pub test_function: TestFunction,
    pub a_n: Option<f64>,
    pub replicates: usize,
    pub seed: u64,
    pub walk: WalkConfig,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct MartingaleOutput {
    pub replicates: usize,
    pub mzeta_mean: f64,
    pub mzeta_se: f64,
    pub mpsi_mean: f64,
    pub mpsi_se: f64,
}

impl MartingaleOutput {
    /// Both ensemble means within `k` standard errors of zero.
    pub fn within_sigmas(&self, k: f64) -> bool {
        self.mzeta_mean.abs() <= k * self.mzeta_se && self.mpsi_mean.abs() <= k * self.mpsi_se
    }
}

/// Ensemble zero-mean check of the two martingales: the layer-hit trace over
/// stopped runs and the harmonic-extension trace over free runs.
pub fn run_martingale_check(cfg: &MartingaleConfig) -> Result<MartingaleOutput> {
    let g = &cfg.graph;
    let spectrum = spectrum_for(g)?;
    let a_n = cfg.a_n.unwrap_or_else(|| default_a_n(g, &spectrum));
    let ext = HarmonicExtension::new(&cfg.test_function, &spectrum, g, a_n, cfg.t)?;
    let hit = LayerHitFunction::new(&spectrum, (cfg.zeta_column, cfg.stop_level))?;

    let finals: Vec<(f64, f64)> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| -> Result<(f64, f64)> {
            let base = replicate_base(r);
            let (_, _, log) = run_stopped(
                g,
                &spectrum,
                cfg.t,
                cfg.stop_level,
                cfg.seed,
                base,
                cfg.walk,
                true,
            )?;
            let mzeta = crate::observables::martingale_trace_hzeta(
                &log.unwrap(),
                &hit,
                g.n(),
            )
            .pop()
            .unwrap();
            let (_, log) = run(
                g,
                &spectrum,
                cfg.t,
                cfg.seed ^ 0x3333,
                base,
                cfg.walk,
                true,
            )?;
            let mpsi = crate::observables::martingale_trace_psi(&log.unwrap(), &ext)
                .pop()
                .unwrap();
            Ok((mzeta, mpsi))
        })
        .collect::<Result<Vec<_>>>()?;

    let mzeta: Vec<f64> = finals.iter().map(|f| f.0).collect();
    let mpsi: Vec<f64> = finals.iter().map(|f| f.1).collect();
    let sz = StatSummary::from_samples(&mzeta, None)?;
    let sp = StatSummary::from_samples(&mpsi, None)?;
    Ok(MartingaleOutput {
        replicates: cfg.replicates,
        mzeta_mean: sz.mean,
        mzeta_se: sz.mean_se(),
        mpsi_mean: sp.mean,
        mpsi_se: sp.mean_se(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::{build_cycle, build_torus};

    #[test]
    fn gff_smoke_run() {
        let cfg = GffConfig {
            graph: build_cycle(16).unwrap(),
            y0: 1.0,
            test_function: TestFunction::single_const(2, 1.0).unwrap(),
            replicates: 8,
            seed: 5,
            walk: WalkConfig::default(),
            a_n: None,
            target: VarianceTarget::ClosedForm,
        };
        let out = run_gff_clt(&cfg).unwrap();
        assert_eq!(out.rows.len(), 8);
        assert_eq!(out.summary.t, 16 * 16);
        assert!(out.summary.sigma2_target > 0.0);
        assert!(out.summary.phi.variance.is_finite());
        let csv = gff_rows_to_csv(&out.rows);
        assert_eq!(csv.lines().count(), 9);
        assert!(csv.starts_with("replicate,"));

        // Degenerate replicate count is rejected.
        let bad = GffConfig {
            replicates: 1,
            ..cfg
        };
        assert!(run_gff_clt(&bad).is_err());
    }

    #[test]
    fn gff_is_thread_count_independent() {
        let cfg = GffConfig {
            graph: build_cycle(16).unwrap(),
            y0: 1.0,
            test_function: TestFunction::single_const(2, 1.0).unwrap(),
            replicates: 8,
            seed: 5,
            walk: WalkConfig::default(),
            a_n: None,
            target: VarianceTarget::ClosedForm,
        };
        let single = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| run_gff_clt(&cfg))
            .unwrap();
        let multi = rayon::ThreadPoolBuilder::new()
            .num_threads(8)
            .build()
            .unwrap()
            .install(|| run_gff_clt(&cfg))
            .unwrap();
        assert_eq!(gff_rows_to_csv(&single.rows), gff_rows_to_csv(&multi.rows));
        assert_eq!(
            serde_json::to_string(&single.summary).unwrap(),
            serde_json::to_string(&multi.summary).unwrap()
        );
    }

    #[test]
    fn torus_uses_finite_n_target() {
        let cfg = GffConfig {
            graph: build_torus(4, 2).unwrap(),
            y0: 1.0,
            test_function: TestFunction::single_const(2, 1.0).unwrap(),
            replicates: 4,
            seed: 1,
            walk: WalkConfig::default(),
            a_n: None,
            target: VarianceTarget::FiniteN,
        };
        let out = run_gff_clt(&cfg).unwrap();
        assert_eq!(out.summary.target_kind, "finite-N surrogate");
        assert!((out.summary.sigma2_target - out.summary.w_n).abs() < 1e-15);
        // Closed-form gammas are not wired for tori.
        let bad = GffConfig {
            target: VarianceTarget::ClosedForm,
            ..cfg
        };
        assert!(run_gff_clt(&bad).is_err());
    }

    #[test]
    fn max_fluct_trivial_single_layer() {
        // One layer of particles: the inner deficit never exceeds 1.
        let g = build_cycle(8).unwrap();
        let spectrum = spectrum_for(&g).unwrap();
        for r in 0..50 {
            let (c, _) = run(
                &g,
                &spectrum,
                8,
                77,
                replicate_base(r),
                WalkConfig::default(),
                false,
            )
            .unwrap();
            let deficit = 1.0 - c.inner_radius() as f64;
            assert!(deficit <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn apriori_smoke() {
        let cfg = AprioriConfig {
            graph: build_cycle(8).unwrap(),
            t: 40,
            h_grid: vec![3, 5, 8, 41],
            replicates: 400,
            seed: 9,
            walk: WalkConfig::default(),
        };
        let out = run_apriori_tail(&cfg).unwrap();
        assert_eq!(out.rows.len(), 4);
        // Above the deterministic ceiling the tail is exactly zero.
        let last = out.rows.last().unwrap();
        assert_eq!(last.empirical, 0.0);
        assert!(out.max_outer_height <= 40);
        let csv = apriori_rows_to_csv(&out, cfg.t);
        assert!(csv.starts_with("h,t,"));
    }

    #[test]
    fn hit_uniformity_and_negative_control() {
        let base = HitConfig {
            graph: build_torus(3, 2).unwrap(),
            level: 4,
            walks: 20_000,
            seed: 3,
            walk: WalkConfig::default(),
            biased_release: false,
        };
        let out = run_hit_uniformity(&base).unwrap();
        assert!(out.p_value > 0.001, "p = {}", out.p_value);
        let biased = HitConfig {
            biased_release: true,
            ..base
        };
        let out = run_hit_uniformity(&biased).unwrap();
        assert!(out.p_value < 0.001, "p = {}", out.p_value);
    }

    #[test]
    fn abelian_suite_small() {
        let cfg = AbelianConfig {
            exchange_trials: 60,
            permutations: 10,
            coupling_trials: 10,
            ..Default::default()
        };
        let out = run_abelian_suite(&cfg).unwrap();
        assert!(out.all_passed(), "{out:?}");
    }

    #[test]
    fn hzeta_validation_small() {
        let cfg = HzetaConfig {
            graph: build_cycle(8).unwrap(),
            zeta: (2, 4),
            window_lo: -12,
            walks_per_start: 20_000,
            starts: vec![
                CylinderState { x: 0, y: 0 },
                CylinderState { x: 3, y: -2 },
            ],
            seed: 12,
            walk: WalkConfig::default(),
        };
        let out = run_hzeta_validation(&cfg).unwrap();
        assert!(out.max_spectral_vs_slab <= 1e-8, "{}", out.max_spectral_vs_slab);
        assert!(out.boundary_exact);
        assert!(out.normalization_max_err <= 1e-10);
        for p in &out.mc_p_values {
            assert!(*p > 0.001, "p = {p}");
        }
        assert!(out.mc_worst_sigma < 4.0, "{} sigmas", out.mc_worst_sigma);
    }

    #[test]
    fn martingale_check_small() {
        let cfg = MartingaleConfig {
            graph: build_cycle(8).unwrap(),
            t: 48,
            stop_level: 4,
            zeta_column: 0,
            test_function: TestFunction::single_const(2, 1.0).unwrap(),
            a_n: None,
            replicates: 200,
            seed: 31,
            walk: WalkConfig::default(),
        };
        let out = run_martingale_check(&cfg).unwrap();
        assert!(out.within_sigmas(4.0), "{out:?}");
    }
}
