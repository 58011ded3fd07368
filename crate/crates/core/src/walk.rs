//! The cylinder random walk: vertical step up/down with probability 1/4
//! each, horizontal move through the lazy kernel with probability 1/2.
//!
//! Randomness is counter-based: a trajectory is addressed by
//! `(master seed, trajectory index)` and regenerating a stream from that pair
//! replays the identical walk, bit for bit, regardless of scheduling. This is
//! what makes single-trajectory resampling and permutation couplings exact.
//!
//! Excursions below the filled half-cylinder have infinite expected length,
//! so the walk is never simulated there to completion. Once an excursion has
//! made more horizontal moves than the mixing cap, the horizontal law is
//! uniform up to the configured total-variation tolerance and the exit column
//! is drawn uniformly instead (uniform is stationary, so everything after the
//! cap is law-preserving).

use crate::error::{Error, Result};
use crate::graphs::BaseGraph;
use crate::spectral::Spectrum;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Position on the cylinder: base vertex and signed level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CylinderState {
    pub x: usize,
    pub y: i64,
}

/// A reproducible random stream addressed by `(seed, index)`.
#[derive(Debug, Clone)]
pub struct WalkStream {
    seed: u64,
    index: u64,
    draws: u64,
    rng: ChaCha8Rng,
}

impl WalkStream {
    pub fn new(seed: u64, index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index);
        WalkStream {
            seed,
            index,
            draws: 0,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn index(&self) -> u64 {
        self.index
    }

    /// Number of 32-bit draws consumed so far.
    pub fn draws(&self) -> u64 {
        self.draws
    }

    #[inline]
    fn next_u32(&mut self) -> u32 {
        self.draws += 1;
        self.rng.next_u32()
    }

    /// Uniform draw on `0..n` by multiply-shift; consumes exactly one word.
    #[inline]
    pub fn uniform(&mut self, n: usize) -> usize {
        ((self.next_u32() as u64 * n as u64) >> 32) as usize
    }
}

/// One decoded walk instruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Move {
    Up,
    Down,
    Stay,
    /// Index into the sorted neighbor list.
    Neighbor(usize),
}

/// Decode one instruction from a stream: quadrants 0 and 1 are the vertical
/// steps, the upper half splits evenly between staying put and a uniform
/// neighbor. Consumes exactly one 32-bit word.
#[inline]
pub fn draw_move(stream: &mut WalkStream, degree: usize) -> Move {
    let u = stream.next_u32();
    match u >> 30 {
        0 => Move::Up,
        1 => Move::Down,
        _ => {
            let w = u & 0x7FFF_FFFF;
            if w < (1 << 30) {
                Move::Stay
            } else {
                let z = (w - (1 << 30)) as u64;
                Move::Neighbor(((z * degree as u64) >> 30) as usize)
            }
        }
    }
}

/// Apply a decoded instruction at `s`.
#[inline]
pub fn apply_move(s: CylinderState, mv: Move, g: &BaseGraph) -> CylinderState {
    match mv {
        Move::Up => CylinderState { x: s.x, y: s.y + 1 },
        Move::Down => CylinderState { x: s.x, y: s.y - 1 },
        Move::Stay => s,
        Move::Neighbor(i) => CylinderState {
            x: g.neighbors(s.x)[i],
            y: s.y,
        },
    }
}

/// One step of the cylinder walk: vertical up/down with probability 1/4
/// each (self 1/2, neighbor 1/(2d) within the horizontal half). Consumes
/// exactly one 32-bit word.
#[inline]
pub fn step(s: CylinderState, g: &BaseGraph, stream: &mut WalkStream) -> CylinderState {
    apply_move(s, draw_move(stream, g.degree()), g)
}

/// Release site of a fresh particle: uniform column at level 0.
#[inline]
pub fn release_site(stream: &mut WalkStream, n: usize) -> CylinderState {
    CylinderState {
        x: stream.uniform(n),
        y: 0,
    }
}

/// Cap on horizontal moves per sub-level excursion, derived from the
/// requested total-variation tolerance.
#[derive(Debug, Clone, Copy)]
pub struct HorizontalCap {
    cap: u64,
}

impl HorizontalCap {
    /// For `eps > 0`: `ceil(tau_rel ln(2/eps))` horizontal steps, after which
    /// the column law is within TV `eps` of uniform (empirically validated
    /// heuristic; the eigenvalue bound gives `TV <= lambda_2^s` up to
    /// constants and the factor 2 absorbs them).
    ///
    /// For `eps = 0`: exact mode. The cap is the f64-exactness horizon, the
    /// smallest `s` with `lambda_2^s < 2^-1075`; past it every representable
    /// transition probability equals `1/N` exactly, so the uniform draw is
    /// not an approximation in double precision. Literally uncapped
    /// simulation would have unbounded running time (excursion lengths have
    /// infinite mean), while the residual here is below any statistical
    /// resolution.
    pub fn from_eps(eps: f64, spectrum: &Spectrum) -> Result<Self> {
        if !(0.0..1.0).contains(&eps) {
            return Err(Error::invalid(format!(
                "fast-forward tolerance {eps} outside [0, 1)"
            )));
        }
        let lambda2 = spectrum.eigenvalue(2).max(0.0);
        let cap = if eps == 0.0 {
            if lambda2 <= 0.0 {
                1
            } else {
                (1075.0 * std::f64::consts::LN_2 / -lambda2.ln()).ceil() as u64
            }
        } else {
            (spectrum.tau_rel() * (2.0 / eps).ln()).ceil().max(1.0) as u64
        };
        Ok(HorizontalCap { cap })
    }

    pub fn horizontal_steps(&self) -> u64 {
        self.cap
    }
}

/// Walk from `s` until the first visit to level `target`, returning the
/// column there. Counts horizontal moves; past the cap the column is drawn
/// uniformly and the walk returns immediately (the remaining horizontal law
/// is uniform to within the cap's tolerance, and level `target` is reached
/// almost surely by vertical recurrence). Returns the hit column and the
/// number of steps consumed.
pub fn first_hit_column(
    s: CylinderState,
    g: &BaseGraph,
    stream: &mut WalkStream,
    target: i64,
    cap: HorizontalCap,
) -> (usize, u64) {
    debug_assert!(s.y < target);
    let n = g.n();
    let d = g.degree();
    let mut x = s.x;
    let mut y = s.y;
    let mut horizontal = 0u64;
    let mut steps = 0u64;
    loop {
        let u = stream.next_u32();
        steps += 1;
        match u >> 30 {
            0 => {
                y += 1;
                if y == target {
                    return (x, steps);
                }
            }
            1 => y -= 1,
            _ => {
                let w = u & 0x7FFF_FFFF;
                if w >= (1 << 30) {
                    let z = (w - (1 << 30)) as u64;
                    x = g.neighbors(x)[((z * d as u64) >> 30) as usize];
                }
                horizontal += 1;
                if horizontal > cap.cap {
                    return (stream.uniform(n), steps);
                }
            }
        }
    }
}

/// Fast-forward a walk at level `y <= 0` to its first visit to level 1.
/// With `eps = 0` the run is exact to double precision (see
/// [`HorizontalCap::from_eps`]); with `eps > 0` the exit column law is
/// within total variation `eps` of the exact law.
pub fn fastforward_subzero(
    s: CylinderState,
    g: &BaseGraph,
    stream: &mut WalkStream,
    cap: HorizontalCap,
) -> Result<CylinderState> {
    if s.y > 0 {
        return Err(Error::invalid(format!(
            "fast-forward requires level <= 0, got {}",
            s.y
        )));
    }
    let (x, _steps) = first_hit_column(s, g, stream, 1, cap);
    Ok(CylinderState { x, y: 1 })
}

/// Column at the first visit to level `m > s.y`, fast-forwarded below the
/// target with the same uniformization rule.
pub fn first_hit_level(
    s: CylinderState,
    g: &BaseGraph,
    stream: &mut WalkStream,
    m: i64,
    cap: HorizontalCap,
) -> Result<usize> {
    if m <= s.y {
        return Err(Error::invalid(format!(
            "target level {m} not above start {}",
            s.y
        )));
    }
    Ok(first_hit_column(s, g, stream, m, cap).0)
}
