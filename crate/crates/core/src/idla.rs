//! Aggregation processes on the cylinder: the free process grown from the
//! flat configuration, the stopped process with its frozen-particle ledger,
//! the balanced per-column release, and the replay/resampling engines that
//! drive the coupling tests.
//!
//! A particle is an infinite walk addressed by `(seed, index)`; its path is a
//! pure function of the stream and never depends on the cluster, so
//! processing the same trajectory multiset in any order yields the same
//! final cluster and swapping one trajectory moves at most two sites.

use std::collections::HashSet;
use std::hash::{BuildHasherDefault, Hasher};

use crate::error::{Error, Result};
use crate::graphs::BaseGraph;
use crate::spectral::Spectrum;
use crate::walk::{
    first_hit_column, release_site, step, CylinderState, HorizontalCap, WalkStream,
};

/// Default per-particle step budget. Excursions below the cluster are the
/// only unbounded part of a walk and the fast-forward removes them, so
/// hitting this budget signals a misconfiguration rather than bad luck.
pub const DEFAULT_STEP_BUDGET: u64 = 1_000_000_000;

/// Multiplicative word hash for packed sites; membership is the hot path
/// and SipHash is needlessly slow for it.
#[derive(Default)]
pub struct SiteHasher {
    state: u64,
}

impl Hasher for SiteHasher {
    fn finish(&self) -> u64 {
        self.state
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.state = (self.state ^ b as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        }
    }

    fn write_u64(&mut self, v: u64) {
        self.state = (self.state ^ v).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        self.state ^= self.state >> 29;
    }
}

type SiteSet = HashSet<u64, BuildHasherDefault<SiteHasher>>;

const COLUMN_BITS: u32 = 12;

#[inline]
fn pack(x: usize, y: i64) -> u64 {
    debug_assert!(y >= 1);
    ((y as u64) << COLUMN_BITS) | x as u64
}

/// Occupancy state of the cylinder: the half-cylinder at levels <= 0 plus an
/// explicit site set above, with per-column filled heights for O(1)
/// membership along the bulk and O(N) inner radius.
#[derive(Debug, Clone)]
pub struct Cluster {
    n: usize,
    occupied: SiteSet,
    filled: Vec<i64>,
    particles: u64,
    max_level: i64,
    initial_above: usize,
}

impl Cluster {
    /// The flat configuration: levels <= 0 occupied, nothing above.
    pub fn new_flat(n: usize) -> Self {
        Cluster {
            n,
            occupied: SiteSet::default(),
            filled: vec![0; n],
            particles: 0,
            max_level: 0,
            initial_above: 0,
        }
    }

    /// The half-cylinder of height `k >= 0` as an initial configuration.
    pub fn new_filled_to(n: usize, k: i64) -> Self {
        let mut c = Cluster::new_flat(n);
        for y in 1..=k {
            for x in 0..n {
                c.insert_site(x, y);
            }
        }
        c.initial_above = c.occupied.len();
        c
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of particles settled into this cluster.
    pub fn particles(&self) -> u64 {
        self.particles
    }

    /// Occupied sites strictly above level zero.
    pub fn above_zero_count(&self) -> usize {
        self.occupied.len()
    }

    /// Sites above level zero present at construction time.
    pub fn initial_above(&self) -> usize {
        self.initial_above
    }

    /// Restore the particle counter when rebuilding from a snapshot.
    pub(crate) fn set_particles(&mut self, t: u64) {
        self.particles = t;
    }

    #[inline]
    pub fn contains(&self, x: usize, y: i64) -> bool {
        y <= self.filled[x] || (y >= 1 && self.occupied.contains(&pack(x, y)))
    }

    #[inline]
    pub fn contains_state(&self, s: CylinderState) -> bool {
        self.contains(s.x, s.y)
    }

    /// Insert a site above level zero; returns whether it was new. Advances
    /// the column's filled height through any extras sitting right above.
    pub fn insert_site(&mut self, x: usize, y: i64) -> bool {
        assert!(y >= 1, "sites at level <= 0 are always occupied");
        assert!(x < self.n);
        if self.contains(x, y) {
            return false;
        }
        self.occupied.insert(pack(x, y));
        self.max_level = self.max_level.max(y);
        if y == self.filled[x] + 1 {
            let mut h = y;
            while self.occupied.contains(&pack(x, h + 1)) {
                h += 1;
            }
            self.filled[x] = h;
        }
        true
    }

    /// Largest `h >= 0` with the half-cylinder of height `h` fully occupied.
    pub fn inner_radius(&self) -> i64 {
        self.filled.iter().copied().min().unwrap_or(0)
    }

    /// Highest occupied level, 0 when nothing has settled above zero.
    pub fn outer_height(&self) -> i64 {
        self.max_level
    }

    pub fn filled_height(&self, x: usize) -> i64 {
        self.filled[x]
    }

    /// Occupied sites above level zero, sorted by `(y, x)`.
    pub fn sites_sorted(&self) -> Vec<(usize, i64)> {
        let mut sites: Vec<(usize, i64)> = self
            .occupied
            .iter()
            .map(|&p| ((p & ((1 << COLUMN_BITS) - 1)) as usize, (p >> COLUMN_BITS) as i64))
            .collect();
        sites.sort_unstable_by_key(|&(x, y)| (y, x));
        sites
    }

    /// True when every above-zero site of `self` is occupied in `other`.
    pub fn is_subset_of(&self, other: &Cluster) -> bool {
        if self.n != other.n {
            return false;
        }
        self.occupied.iter().all(|&p| {
            let x = (p & ((1 << COLUMN_BITS) - 1)) as usize;
            let y = (p >> COLUMN_BITS) as i64;
            other.contains(x, y)
        })
    }

    /// Sites in exactly one of the two clusters (above level zero).
    pub fn symmetric_difference(&self, other: &Cluster) -> usize {
        let only_a = self
            .occupied
            .iter()
            .filter(|p| !other.occupied.contains(p))
            .count();
        let only_b = other
            .occupied
            .iter()
            .filter(|p| !self.occupied.contains(p))
            .count();
        only_a + only_b
    }

    /// Recompute the per-column summaries from the raw set and check them
    /// against the cached ones.
    pub fn audit(&self) -> Result<()> {
        let mut filled = vec![0i64; self.n];
        let mut max_level = 0i64;
        for &p in &self.occupied {
            let y = (p >> COLUMN_BITS) as i64;
            max_level = max_level.max(y);
        }
        for x in 0..self.n {
            let mut h = 0i64;
            while self.occupied.contains(&pack(x, h + 1)) {
                h += 1;
            }
            filled[x] = h;
        }
        if filled != self.filled {
            return Err(Error::Validation("filled-height cache out of sync".into()));
        }
        if max_level.max(0) != self.max_level.max(0) {
            return Err(Error::Validation("max-level cache out of sync".into()));
        }
        Ok(())
    }
}

/// Walk parameters shared by every particle of a run.
#[derive(Debug, Clone, Copy)]
pub struct WalkConfig {
    /// Total-variation tolerance of the sub-level fast-forward; 0 selects
    /// exact mode.
    pub eps: f64,
    pub step_budget: u64,
}

impl Default for WalkConfig {
    fn default() -> Self {
        WalkConfig {
            eps: 1e-9,
            step_budget: DEFAULT_STEP_BUDGET,
        }
    }
}

impl WalkConfig {
    pub fn exact() -> Self {
        WalkConfig {
            eps: 0.0,
            ..Default::default()
        }
    }

    pub fn with_eps(eps: f64) -> Self {
        WalkConfig {
            eps,
            ..Default::default()
        }
    }
}

/// Per-run driver: the graph, the fast-forward cap and the step budget.
#[derive(Clone, Copy)]
pub struct ParticleDriver<'a> {
    g: &'a BaseGraph,
    cap: HorizontalCap,
    budget: u64,
}

impl<'a> ParticleDriver<'a> {
    pub fn new(g: &'a BaseGraph, spectrum: &Spectrum, cfg: WalkConfig) -> Result<Self> {
        Ok(ParticleDriver {
            g,
            cap: HorizontalCap::from_eps(cfg.eps, spectrum)?,
            budget: cfg.step_budget,
        })
    }

    pub fn graph(&self) -> &'a BaseGraph {
        self.g
    }

    /// Walk one particle from `start` until it exits `cluster`, settle it
    /// there, and return the settlement site.
    pub fn add_particle_from(
        &self,
        cluster: &mut Cluster,
        start: CylinderState,
        stream: &mut WalkStream,
    ) -> Result<(usize, i64)> {
        let site = self.walk_to_exit(cluster, start, stream, None)?;
        cluster.insert_site(site.0, site.1);
        cluster.particles += 1;
        Ok(site)
    }

    /// Release uniformly on level 0 and settle one particle.
    pub fn add_particle(
        &self,
        cluster: &mut Cluster,
        stream: &mut WalkStream,
    ) -> Result<(usize, i64)> {
        let start = release_site(stream, self.g.n());
        self.add_particle_from(cluster, start, stream)
    }

    /// Stopped-process variant: the particle halts on its first visit to
    /// level `h`, which counts as its settlement even if that site is
    /// already occupied.
    pub fn add_particle_stopped(
        &self,
        cluster: &mut Cluster,
        h: i64,
        stream: &mut WalkStream,
    ) -> Result<(usize, i64)> {
        let start = release_site(stream, self.g.n());
        let site = self.walk_to_exit(cluster, start, stream, Some(h))?;
        cluster.insert_site(site.0, site.1);
        cluster.particles += 1;
        Ok(site)
    }

    /// First site of the walk outside `cluster` (or at the stopping level).
    /// Excursions below level 1 are fast-forwarded; each consumes at most
    /// O(cap) steps and the exit column is law-preserving within the cap's
    /// tolerance.
    fn walk_to_exit(
        &self,
        cluster: &Cluster,
        start: CylinderState,
        stream: &mut WalkStream,
        stop_level: Option<i64>,
    ) -> Result<(usize, i64)> {
        let mut s = start;
        let mut steps = 0u64;
        loop {
            if s.y <= 0 {
                let (x, used) = first_hit_column(s, self.g, stream, 1, self.cap);
                s = CylinderState { x, y: 1 };
                steps = steps.saturating_add(used);
            }
            if let Some(h) = stop_level {
                if s.y >= h {
                    debug_assert_eq!(s.y, h, "vertical steps are nearest-neighbor");
                    return Ok((s.x, s.y));
                }
            }
            if !cluster.contains_state(s) {
                return Ok((s.x, s.y));
            }
            s = step(s, self.g, stream);
            steps += 1;
            if steps > self.budget {
                return Err(Error::BudgetExceeded(format!(
                    "particle exceeded {} steps without settling",
                    self.budget
                )));
            }
        }
    }
}

/// Settlement record of one particle: its stream address and where it
/// settled. Replaying a log reproduces the identical cluster.
#[derive(Debug, Clone)]
pub struct TrajectoryLog {
    pub seed: u64,
    pub entries: Vec<(u64, (usize, i64))>,
}

/// Frozen-particle counts per column of the stopping layer.
#[derive(Debug, Clone)]
pub struct FrozenLedger {
    pub h: i64,
    pub counts: Vec<u64>,
}

impl FrozenLedger {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Run the free process for `t` particles from the flat configuration.
/// Particle `j` (1-based) uses stream `(seed, index_base + j)`.
pub fn run(
    g: &BaseGraph,
    spectrum: &Spectrum,
    t: u64,
    seed: u64,
    index_base: u64,
    cfg: WalkConfig,
    want_log: bool,
) -> Result<(Cluster, Option<TrajectoryLog>)> {
    let driver = ParticleDriver::new(g, spectrum, cfg)?;
    let mut cluster = Cluster::new_flat(g.n());
    let mut log = want_log.then(|| TrajectoryLog {
        seed,
        entries: Vec::with_capacity(t as usize),
    });
    for j in 1..=t {
        let index = index_base + j;
        let mut stream = WalkStream::new(seed, index);
        let site = driver.add_particle(&mut cluster, &mut stream)?;
        debug_assert_eq!(cluster.above_zero_count() as u64, j);
        debug_assert!(cluster.outer_height() <= j as i64);
        if let Some(log) = log.as_mut() {
            log.entries.push((index, site));
        }
    }
    Ok((cluster, log))
}

/// Run the stopped process: particles halt at level `h >= 1`, arrivals there
/// are tallied per column. When a log is requested it records every
/// settlement, including repeated arrivals at occupied stopping sites.
pub fn run_stopped(
    g: &BaseGraph,
    spectrum: &Spectrum,
    t: u64,
    h: i64,
    seed: u64,
    index_base: u64,
    cfg: WalkConfig,
    want_log: bool,
) -> Result<(Cluster, FrozenLedger, Option<TrajectoryLog>)> {
    if h < 1 {
        return Err(Error::invalid(format!("stopping level {h} must be >= 1")));
    }
    let driver = ParticleDriver::new(g, spectrum, cfg)?;
    let mut cluster = Cluster::new_flat(g.n());
    let mut ledger = FrozenLedger {
        h,
        counts: vec![0; g.n()],
    };
    let mut log = want_log.then(|| TrajectoryLog {
        seed,
        entries: Vec::with_capacity(t as usize),
    });
    for j in 1..=t {
        let index = index_base + j;
        let mut stream = WalkStream::new(seed, index);
        let site = driver.add_particle_stopped(&mut cluster, h, &mut stream)?;
        debug_assert!(site.1 <= h);
        if site.1 == h {
            ledger.counts[site.0] += 1;
        }
        if let Some(log) = log.as_mut() {
            log.entries.push((index, site));
        }
    }
    debug_assert!(cluster.outer_height() <= h);
    Ok((cluster, ledger, log))
}

/// Balanced release: exactly `m` particles from every column of level 0,
/// processed in column-major order. Slot `i` of column `x` uses stream
/// index `x * m + i + 1`; the abelian property makes the processing order
/// irrelevant, which the test suite exercises by permutation.
pub fn run_balanced(
    g: &BaseGraph,
    spectrum: &Spectrum,
    m: u64,
    seed: u64,
    cfg: WalkConfig,
) -> Result<Cluster> {
    if m < 1 {
        return Err(Error::invalid("balanced release needs m >= 1"));
    }
    let driver = ParticleDriver::new(g, spectrum, cfg)?;
    let mut cluster = Cluster::new_flat(g.n());
    for x in 0..g.n() {
        for i in 0..m {
            let index = x as u64 * m + i + 1;
            let mut stream = WalkStream::new(seed, index);
            let start = CylinderState { x, y: 0 };
            driver.add_particle_from(&mut cluster, start, &mut stream)?;
        }
    }
    Ok(cluster)
}

/// How a replayed trajectory picks its release column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StartRule {
    /// Drawn uniformly from the trajectory's own stream, as in the free
    /// process.
    Uniform,
    Fixed(usize),
}

/// Address of one infinite walk for the replay engine.
#[derive(Debug, Clone, Copy)]
pub struct Trajectory {
    pub seed: u64,
    pub index: u64,
    pub start: StartRule,
}

/// Deterministically replay `trajectories` onto `initial`, in order.
pub fn replay(
    g: &BaseGraph,
    spectrum: &Spectrum,
    initial: Cluster,
    trajectories: &[Trajectory],
    cfg: WalkConfig,
) -> Result<Cluster> {
    let driver = ParticleDriver::new(g, spectrum, cfg)?;
    let mut cluster = initial;
    for traj in trajectories {
        let mut stream = WalkStream::new(traj.seed, traj.index);
        let start = match traj.start {
            StartRule::Uniform => release_site(&mut stream, g.n()),
            StartRule::Fixed(x) => CylinderState { x, y: 0 },
        };
        driver.add_particle_from(&mut cluster, start, &mut stream)?;
    }
    Ok(cluster)
}

/// The site-stack realization of the aggregation.
///
/// Instructions are attached to sites, not particles: a particle standing on
/// an occupied site pops the next instruction from that site's stream. Under
/// this realization the final cluster is a deterministic function of the
/// stacks and release columns alone -- the processing order genuinely never
/// matters (Diaconis-Fulton), and the order-invariance tests run here.
///
/// Per-particle trajectories do NOT have that property: two walks can
/// compete for one site and carry different continuations, so permuting
/// their processing order can move later settlements. Single-trajectory
/// resampling, which needs per-particle addressing, therefore lives on the
/// path engine above, where the two-site exchange bound holds by induction
/// for any fixed processing order.
pub struct StackRealization<'a> {
    g: &'a BaseGraph,
    seed: u64,
    budget: u64,
}

const SITE_STREAM_SALT: u64 = 0x5349_5445_5354_4B53;

impl<'a> StackRealization<'a> {
    pub fn new(g: &'a BaseGraph, seed: u64) -> Self {
        StackRealization {
            g,
            seed,
            budget: DEFAULT_STEP_BUDGET,
        }
    }

    fn site_stream(&self, x: usize, y: i64) -> WalkStream {
        let code = (((y + (1 << 40)) as u64) << COLUMN_BITS) | x as u64;
        WalkStream::new(self.seed ^ SITE_STREAM_SALT, code)
    }

    /// Release column of particle `label` (0-based), fixed independently of
    /// the processing order.
    fn start_column(&self, label: usize, rule: StartRule) -> usize {
        match rule {
            StartRule::Fixed(x) => x,
            StartRule::Uniform => {
                WalkStream::new(self.seed, label as u64 + 1).uniform(self.g.n())
            }
        }
    }

    /// Aggregate the labelled particles in the given processing order.
    /// `order` must be a permutation of `0..starts.len()`. Sub-cluster
    /// excursions are simulated in full; the instruction stacks are the
    /// randomness and any shortcut would break their bookkeeping.
    pub fn run_with_order(&self, starts: &[StartRule], order: &[usize]) -> Result<Cluster> {
        let mut seen = vec![false; starts.len()];
        for &label in order {
            if label >= starts.len() || seen[label] {
                return Err(Error::invalid("order must be a permutation of the labels"));
            }
            seen[label] = true;
        }
        if order.len() != starts.len() {
            return Err(Error::invalid("order must cover every label"));
        }

        let mut stacks: std::collections::HashMap<
            (usize, i64),
            WalkStream,
            BuildHasherDefault<SiteHasher>,
        > = std::collections::HashMap::default();
        let mut cluster = Cluster::new_flat(self.g.n());
        for &label in order {
            let mut s = CylinderState {
                x: self.start_column(label, starts[label]),
                y: 0,
            };
            let mut steps = 0u64;
            while cluster.contains_state(s) {
                let stream = stacks
                    .entry((s.x, s.y))
                    .or_insert_with(|| self.site_stream(s.x, s.y));
                let mv = crate::walk::draw_move(stream, self.g.degree());
                s = crate::walk::apply_move(s, mv, self.g);
                steps += 1;
                if steps > self.budget {
                    return Err(Error::BudgetExceeded(format!(
                        "stack-realization particle exceeded {} steps",
                        self.budget
                    )));
                }
            }
            cluster.insert_site(s.x, s.y);
            cluster.particles += 1;
        }
        Ok(cluster)
    }
}

/// Build the cluster twice from identical streams, except trajectory `j`
/// (1-based) is redrawn under `seed_prime` in the second run.
pub fn resample_one(
    g: &BaseGraph,
    spectrum: &Spectrum,
    t: u64,
    seed: u64,
    j: u64,
    seed_prime: u64,
    cfg: WalkConfig,
) -> Result<(Cluster, Cluster)> {
    if j == 0 || j > t {
        return Err(Error::invalid(format!("trajectory index {j} outside 1..={t}")));
    }
    let original: Vec<Trajectory> = (1..=t)
        .map(|i| Trajectory {
            seed,
            index: i,
            start: StartRule::Uniform,
        })
        .collect();
    let mut resampled = original.clone();
    resampled[(j - 1) as usize].seed = seed_prime;
    let base = Cluster::new_flat(g.n());
    let a = replay(g, spectrum, base.clone(), &original, cfg)?;
    let b = replay(g, spectrum, base, &resampled, cfg)?;
    Ok((a, b))
}
