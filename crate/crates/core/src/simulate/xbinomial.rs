//! Impact-fraction sampler for the `x_binomial` backend.
//!
//! From state `b` an event of the `ν`-part arrives at rate
//! `R(b) = ∫ P_b(x) x^{-2} Λ'(dx)` with `P_b(x) = P(Bin(b,x) >= 2)` and `Λ'`
//! the measure without its atom at 0. Rows of rates are never built: for
//! `b' = 2^ℓ >= b` proposals come at rate `R(b')` with `x` drawn from
//! `P_{b'}(x) x^{-2} Λ'(dx)` and are kept with probability `P_b(x)/P_{b'}(x)`.
//!
//! Each level tabulates that density on `(0, η)` in 4096 cells, uniform in
//! `ln x` on the lower half and in `ln(η - x)` on the upper half, plus two
//! end cells so no mass is dropped; the one at `η` is extrapolated. Within a cell `x` is drawn by rejection
//! against a sampled envelope.

use std::sync::OnceLock;

use rand::Rng;
use rand_distr::{Binomial, Distribution};

use crate::error::{Error, Result};
use crate::measure::LambdaSpec;
use crate::numeric::{compensated_sum, pair_or_more_over_x2};
use crate::quad::{adaptive, Tolerance};
use crate::rates::total_rate_identity;

const CELLS_PER_HALF: usize = 2048;
const ENVELOPE_PROBES: usize = 17;
const ENVELOPE_MARGIN: f64 = 1.25;
/// Lower end cell `(0, x_lo)` with `b' x_lo` this small: inside it `K = 2`
/// up to probability `~1e-12`.
const LOW_CELL_SCALE: f64 = 1e-12;
/// Upper end cell `(η - y_lo, η)` with `y_lo = η ·` this.
const HIGH_CELL_SCALE: f64 = 1e-12;
const LEVEL_CHECK: f64 = 1e-8;
pub(crate) const RETRY_BUDGET: usize = 100_000;

#[derive(Debug, Clone, Copy)]
enum Coord {
    /// `x = e^s`.
    LogX,
    /// `x = η - e^s`.
    LogGap,
    /// `x` uniform on `[s0, s1]`.
    Linear,
}

#[derive(Debug, Clone)]
struct Cell {
    coord: Coord,
    s0: f64,
    s1: f64,
    envelope: f64,
}

#[derive(Debug)]
enum Component {
    Cell(Cell),
    Atom(f64),
}

#[derive(Debug)]
pub(crate) struct Level {
    b_level: u64,
    rate: f64,
    components: Vec<Component>,
    cumulative: Vec<f64>,
}

impl Level {
    fn build(spec: &LambdaSpec, b_level: u64) -> Result<Self> {
        let bl = b_level as f64;
        let eta = spec.eta();
        let g = |x: f64| pair_or_more_over_x2(bl, x) * spec.density_at(x);
        let weighted = |coord: Coord, s: f64| -> f64 {
            match coord {
                Coord::LogX => {
                    let x = s.exp();
                    g(x) * x
                }
                Coord::LogGap => {
                    let y = s.exp();
                    g(eta - y) * y
                }
                Coord::Linear => g(s),
            }
        };

        let identity = total_rate_identity(spec, bl)? - spec.atom_zero() * 0.5 * bl * (bl - 1.0);
        // Near x = η the density is evaluated at `η - y` and carries relative
        // noise ~ eps/y, so cells get an absolute floor tied to the total.
        let cell_tol = Tolerance::new(identity.abs() * 1e-13, 1e-10);
        let mut components = Vec::new();
        let mut masses = Vec::new();
        if spec.has_density() && spec.weight() > 0.0 {
            let mid = 0.5 * eta;
            let x_lo = (LOW_CELL_SCALE / bl).min(0.5 * mid);
            let y_lo = HIGH_CELL_SCALE * eta;
            let mut cells = vec![(Coord::Linear, 0.0, x_lo)];
            let (a, b) = (x_lo.ln(), mid.ln());
            for i in 0..CELLS_PER_HALF {
                let s0 = a + (b - a) * i as f64 / CELLS_PER_HALF as f64;
                let s1 = a + (b - a) * (i + 1) as f64 / CELLS_PER_HALF as f64;
                cells.push((Coord::LogX, s0, s1));
            }
            let (a, b) = (mid.ln(), y_lo.ln());
            for i in 0..CELLS_PER_HALF {
                let s0 = a + (b - a) * (i + 1) as f64 / CELLS_PER_HALF as f64;
                let s1 = a + (b - a) * i as f64 / CELLS_PER_HALF as f64;
                cells.push((Coord::LogGap, s0, s1));
            }
            cells.push((Coord::Linear, eta - y_lo, eta));

            let mut gap_masses = Vec::with_capacity(CELLS_PER_HALF);
            for (coord, s0, s1) in cells {
                let mass = match coord {
                    Coord::Linear if s0 == 0.0 => {
                        spec.integrate_density_between(|x| pair_or_more_over_x2(bl, x), s0, s1, cell_tol)?.value
                    }
                    // x that close to η is below the resolution of the density,
                    // so the last cell continues the decay of the log-gap cells.
                    Coord::Linear => upper_tail(&gap_masses),
                    Coord::LogX => adaptive(&mut |s| weighted(coord, s), s0, s1, cell_tol, 64)?.value,
                    Coord::LogGap => {
                        let noise = 1e3 * f64::EPSILON * eta / s0.exp();
                        let tol = Tolerance::new(cell_tol.abs, cell_tol.rel.max(noise));
                        adaptive(&mut |s| weighted(coord, s), s0, s1, tol, 64)?.value
                    }
                };
                if let Coord::LogGap = coord {
                    gap_masses.push(mass);
                }
                let envelope = match coord {
                    // End cells are sampled uniformly in x and accepted outright.
                    Coord::Linear => f64::INFINITY,
                    _ => {
                        let top = (0..ENVELOPE_PROBES)
                            .map(|j| weighted(coord, s0 + (s1 - s0) * j as f64 / (ENVELOPE_PROBES - 1) as f64))
                            .fold(0.0, f64::max);
                        ENVELOPE_MARGIN * top
                    }
                };
                if mass > 0.0 {
                    components.push(Component::Cell(Cell {
                        coord,
                        s0,
                        s1,
                        envelope,
                    }));
                    masses.push(mass);
                }
            }
        }
        for (x, m) in spec.interior_atoms() {
            components.push(Component::Atom(x));
            masses.push(m * pair_or_more_over_x2(bl, x));
        }
        if spec.atom_one() > 0.0 {
            components.push(Component::Atom(1.0));
            masses.push(spec.atom_one());
        }

        let rate = compensated_sum(masses.iter().copied());
        let gap = (rate - identity).abs() / identity.abs();
        if !(gap <= LEVEL_CHECK) {
            return Err(Error::NumericalInconsistency {
                what: format!("x_binomial proposal rate at level b' = {b_level}"),
                first: rate,
                second: identity,
                relative_gap: gap,
            });
        }
        let mut acc = crate::numeric::Neumaier::default();
        let cumulative = masses
            .iter()
            .map(|m| {
                acc.add(m / rate);
                acc.total()
            })
            .collect::<Vec<_>>();
        Ok(Self {
            b_level,
            rate,
            components,
            cumulative,
        })
    }

    fn sample_x<R: Rng>(&self, spec: &LambdaSpec, rng: &mut R) -> Result<f64> {
        let eta = spec.eta();
        let bl = self.b_level as f64;
        for _ in 0..RETRY_BUDGET {
            let u: f64 = rng.random();
            let i = self.cumulative.partition_point(|&c| c <= u).min(self.components.len() - 1);
            let cell = match &self.components[i] {
                Component::Atom(x) => return Ok(*x),
                Component::Cell(c) => c,
            };
            let s = cell.s0 + (cell.s1 - cell.s0) * rng.random::<f64>();
            let (x, jac) = match cell.coord {
                Coord::Linear => return Ok(s),
                Coord::LogX => (s.exp(), s.exp()),
                Coord::LogGap => (eta - s.exp(), s.exp()),
            };
            let w = pair_or_more_over_x2(bl, x) * spec.density_at(x) * jac;
            if w > cell.envelope {
                return Err(Error::Sampling(format!(
                    "envelope violated at x = {x:e} on level b' = {}: weight {w:e} > envelope {:e}",
                    self.b_level, cell.envelope
                )));
            }
            if rng.random::<f64>() * cell.envelope <= w {
                return Ok(x);
            }
        }
        Err(Error::Sampling(format!(
            "no x accepted within {RETRY_BUDGET} proposals on level b' = {}",
            self.b_level
        )))
    }
}

/// Mass beyond the last of equally wide log-gap cells, assuming the decay
/// rate over the last `TAIL_SPAN` cells persists (a power law in the gap).
/// The wide span keeps rounding noise in single cells out of the ratio.
fn upper_tail(gap_masses: &[f64]) -> f64 {
    const TAIL_SPAN: usize = 64;
    let n = gap_masses.len();
    if n <= TAIL_SPAN {
        return 0.0;
    }
    let (a, b) = (gap_masses[n - 1 - TAIL_SPAN], gap_masses[n - 1]);
    if !(a > 0.0 && b > 0.0 && b < a) {
        return 0.0;
    }
    let r = (b / a).powf(1.0 / TAIL_SPAN as f64);
    b * r / (1.0 - r)
}

/// Dyadic levels built on first use; safe to share between workers.
#[derive(Debug)]
pub(crate) struct XSampler {
    levels: Vec<OnceLock<std::result::Result<Level, String>>>,
}

impl XSampler {
    pub(crate) fn new() -> Self {
        Self {
            levels: (0..64).map(|_| OnceLock::new()).collect(),
        }
    }

    pub(crate) fn level(&self, spec: &LambdaSpec, b: u64) -> Result<&Level> {
        let l = (64 - (b - 1).leading_zeros()) as usize;
        let built = self.levels[l].get_or_init(|| Level::build(spec, 1u64 << l).map_err(|e| e.to_string()));
        built.as_ref().map_err(|e| Error::Sampling(format!("level 2^{l} unavailable: {e}")))
    }
}

/// Outcome of one proposal from state `b`.
pub(crate) enum Proposal {
    Merge(u64),
    Rejected,
}

impl Level {
    pub(crate) fn rate(&self) -> f64 {
        self.rate
    }

    /// Draws `x`, thins to state `b`, then draws `K | K >= 2`.
    pub(crate) fn propose<R: Rng>(&self, spec: &LambdaSpec, b: u64, rng: &mut R) -> Result<Proposal> {
        let x = self.sample_x(spec, rng)?;
        let bf = b as f64;
        if b != self.b_level {
            let keep = pair_or_more_over_x2(bf, x) / pair_or_more_over_x2(self.b_level as f64, x);
            if rng.random::<f64>() >= keep {
                return Ok(Proposal::Rejected);
            }
        }
        sample_k_given_x(b, x, rng).map(Proposal::Merge)
    }
}

/// `K ~ Binomial(b, x)` conditioned on `K >= 2`.
///
/// Plain rejection when `P(K >= 2) > 1/4`; otherwise inverse CDF of the
/// conditional law walked upward from `k = 2`, which costs `O(K)`.
pub fn sample_k_given_x<R: Rng>(b: u64, x: f64, rng: &mut R) -> Result<u64> {
    let bf = b as f64;
    if x >= 1.0 {
        return Ok(b);
    }
    let scaled = pair_or_more_over_x2(bf, x);
    if x * x * scaled > 0.25 {
        let bin = Binomial::new(b, x).map_err(|e| Error::Sampling(format!("binomial({b}, {x}): {e}")))?;
        for _ in 0..RETRY_BUDGET {
            let k = bin.sample(rng);
            if k >= 2 {
                return Ok(k);
            }
        }
        return Err(Error::Sampling(format!("K >= 2 not reached for Binomial({b}, {x})")));
    }
    let u: f64 = rng.random();
    // P(K = 2 | K >= 2) = C(b,2) (1-x)^{b-2} / (P(K >= 2) / x^2)
    let mut p = 0.5 * bf * (bf - 1.0) * ((bf - 2.0) * (-x).ln_1p()).exp() / scaled;
    let ratio = x / (1.0 - x);
    let mut k = 2u64;
    let mut cum = p;
    while cum < u && k < b {
        p *= (bf - k as f64) / (k as f64 + 1.0) * ratio;
        k += 1;
        cum += p;
    }
    Ok(k)
}
