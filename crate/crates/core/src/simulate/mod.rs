//! Exact simulation of the block-counting chain `N^{Λ,n}`.

mod xbinomial;

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::LambdaSpec;
use crate::numeric::splitmix64;
use crate::rates::RateCache;
use xbinomial::{Proposal, XSampler, RETRY_BUDGET};

pub use xbinomial::sample_k_given_x as binomial_at_least_two;

/// Above this initial size `auto` switches from `direct_k` to `x_binomial`.
pub const AUTO_DIRECT_K_MAX: u64 = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Auto,
    DirectK,
    XBinomial,
}

impl std::str::FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(Backend::Auto),
            "direct_k" => Ok(Backend::DirectK),
            "x_binomial" => Ok(Backend::XBinomial),
            other => Err(Error::Config(format!(
                "unknown backend '{other}' (expected auto, direct_k or x_binomial)"
            ))),
        }
    }
}

/// Seed of replica `r`: `master ^ splitmix64(r)`.
pub fn replica_seed(master: u64, replica: u64) -> u64 {
    master ^ splitmix64(replica)
}

/// One realisation of the block-counting chain.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockCountPath {
    pub initial_n: u64,
    /// `(jump time, count after the jump)`, times increasing, counts decreasing.
    pub events: Vec<(f64, u64)>,
    pub seed: u64,
    pub measure_id: String,
    pub backend: Backend,
    /// Simulation stopped at this time without absorption, if finite.
    pub horizon: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HittingTime {
    At(f64),
    NotReached,
}

impl BlockCountPath {
    /// `N(t)`, right-continuous.
    pub fn count_at(&self, t: f64) -> u64 {
        let i = self.events.partition_point(|e| e.0 <= t);
        if i == 0 {
            self.initial_n
        } else {
            self.events[i - 1].1
        }
    }

    pub fn final_count(&self) -> u64 {
        self.events.last().map_or(self.initial_n, |e| e.1)
    }

    pub fn is_absorbed(&self) -> bool {
        self.final_count() == 1
    }

    /// `inf{t : N(t) <= n0}`.
    pub fn hitting_time(&self, n0: u64) -> HittingTime {
        if self.initial_n <= n0 {
            return HittingTime::At(0.0);
        }
        match self.events.iter().find(|e| e.1 <= n0) {
            Some(e) => HittingTime::At(e.0),
            None => HittingTime::NotReached,
        }
    }

    /// `∫_a^b N(t) dt`; the last recorded count is held beyond the final event.
    pub fn tree_length(&self, a: f64, b: f64) -> f64 {
        if !(b > a) {
            return 0.0;
        }
        let mut acc = crate::numeric::Neumaier::default();
        let mut start = 0.0f64;
        let mut count = self.initial_n;
        for &(t, next) in &self.events {
            let (lo, hi) = (start.max(a), t.min(b));
            if hi > lo {
                acc.add(count as f64 * (hi - lo));
            }
            if t >= b {
                return acc.total();
            }
            start = t;
            count = next;
        }
        let lo = start.max(a);
        if b > lo {
            acc.add(count as f64 * (b - lo));
        }
        acc.total()
    }

    /// CSV with columns `time,count`, starting with the row `0,n`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["time", "count"])?;
        w.write_record([format!("{:e}", 0.0), self.initial_n.to_string()])?;
        for (t, c) in &self.events {
            w.write_record([format!("{t:e}"), c.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Shared, read-mostly simulation state for one measure.
#[derive(Debug)]
pub struct Simulator {
    spec: LambdaSpec,
    measure_id: String,
    rates: RateCache,
    levels: XSampler,
}

impl Simulator {
    pub fn new(spec: &LambdaSpec) -> Result<Self> {
        spec.require_no_atom_at_one()?;
        Ok(Self {
            spec: spec.clone(),
            measure_id: spec.measure_id(),
            rates: RateCache::new(spec.clone()),
            levels: XSampler::new(),
        })
    }

    pub fn spec(&self) -> &LambdaSpec {
        &self.spec
    }

    /// The backend actually used for a request.
    pub fn resolve(&self, n: u64, backend: Backend) -> Backend {
        match backend {
            _ if self.spec.is_kingman() => Backend::DirectK,
            Backend::Auto if n <= AUTO_DIRECT_K_MAX => Backend::DirectK,
            Backend::Auto => Backend::XBinomial,
            other => other,
        }
    }

    /// Builds the tables a run from `n` will need, so workers only read.
    pub fn prepare(&self, n: u64, backend: Backend) -> Result<()> {
        if n < 2 {
            return Ok(());
        }
        match self.resolve(n, backend) {
            Backend::DirectK if !self.spec.is_kingman() => self.rates.prefill(n),
            Backend::XBinomial => {
                let mut b = n;
                loop {
                    self.levels.level(&self.spec, b)?;
                    if b <= 2 {
                        return Ok(());
                    }
                    b = b.div_ceil(2);
                }
            }
            _ => Ok(()),
        }
    }

    /// Simulates from `n` blocks until absorption or `horizon`.
    pub fn simulate(&self, n: u64, horizon: Option<f64>, seed: u64, backend: Backend) -> Result<BlockCountPath> {
        if n < 1 {
            return Err(Error::Domain("initial block count must be at least 1".into()));
        }
        if let Some(h) = horizon {
            if !(h > 0.0) {
                return Err(Error::Domain(format!("horizon must be positive, got {h}")));
            }
        }
        let backend = self.resolve(n, backend);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let limit = horizon.unwrap_or(f64::INFINITY);
        let mut events = Vec::new();
        let mut t = 0.0;
        let mut b = n;
        let c = self.spec.atom_zero();
        let mut stalls = 0usize;
        while b > 1 {
            let pairs = 0.5 * (b as f64) * (b as f64 - 1.0);
            let (jump, next_b) = match backend {
                Backend::DirectK if self.spec.is_kingman() => {
                    let e: f64 = Exp1.sample(&mut rng);
                    (e / (c * pairs), b - 1)
                }
                Backend::DirectK => {
                    let row = self.rates.row(b)?;
                    let e: f64 = Exp1.sample(&mut rng);
                    let k = row.sample_k(rng.random());
                    (e / row.total_rate, b - k + 1)
                }
                _ => {
                    let level = self.levels.level(&self.spec, b)?;
                    let kingman = c * pairs;
                    let total = kingman + level.rate();
                    let e: f64 = Exp1.sample(&mut rng);
                    if rng.random::<f64>() * total < kingman {
                        (e / total, b - 1)
                    } else {
                        match level.propose(&self.spec, b, &mut rng)? {
                            Proposal::Merge(k) => (e / total, b - k + 1),
                            Proposal::Rejected => (e / total, b),
                        }
                    }
                }
            };
            t += jump;
            if t > limit {
                break;
            }
            if next_b == b {
                stalls += 1;
                if stalls > RETRY_BUDGET {
                    return Err(Error::Sampling(format!(
                        "{RETRY_BUDGET} consecutive thinning rejections at b = {b}"
                    )));
                }
                continue;
            }
            stalls = 0;
            b = next_b;
            events.push((t, b));
        }
        Ok(BlockCountPath {
            initial_n: n,
            events,
            seed,
            measure_id: self.measure_id.clone(),
            backend,
            horizon: if b > 1 { horizon } else { None },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(n: u64, events: Vec<(f64, u64)>) -> BlockCountPath {
        BlockCountPath {
            initial_n: n,
            events,
            seed: 0,
            measure_id: String::new(),
            backend: Backend::DirectK,
            horizon: None,
        }
    }

    #[test]
    fn tree_length_examples() {
        let p = path(2, vec![(0.3, 1)]);
        assert!((p.tree_length(0.0, 1.0) - 1.3).abs() < 1e-15);
        assert_eq!(p.tree_length(0.5, 0.5), 0.0);
        let p = path(5, vec![(0.1, 3), (0.4, 2), (1.0, 1)]);
        let want = 5.0 * 0.05 + 3.0 * 0.3 + 2.0 * 0.6 + 1.0 * 0.5;
        assert!((p.tree_length(0.05, 1.5) - want).abs() < 1e-14);
    }

    #[test]
    fn hitting_time_examples() {
        let p = path(5, vec![(0.1, 3), (0.4, 2), (1.0, 1)]);
        assert_eq!(p.hitting_time(10), HittingTime::At(0.0));
        assert_eq!(p.hitting_time(1), HittingTime::At(1.0));
        assert_eq!(p.hitting_time(3), HittingTime::At(0.1));
        let cut = path(5, vec![(0.1, 3)]);
        assert_eq!(cut.hitting_time(2), HittingTime::NotReached);
    }

    #[test]
    fn count_at_is_right_continuous() {
        let p = path(5, vec![(0.1, 3), (0.4, 2)]);
        assert_eq!(p.count_at(0.0), 5);
        assert_eq!(p.count_at(0.1), 3);
        assert_eq!(p.count_at(0.39), 3);
        assert_eq!(p.count_at(7.0), 2);
    }

    #[test]
    fn kingman_two_blocks_single_event() {
        let sim = Simulator::new(&LambdaSpec::kingman()).unwrap();
        let p = sim.simulate(2, None, 9, Backend::XBinomial).unwrap();
        assert_eq!(p.events.len(), 1);
        assert_eq!(p.final_count(), 1);
        assert_eq!(p.backend, Backend::DirectK);
    }

    #[test]
    fn same_seed_same_path() {
        let sim = Simulator::new(&LambdaSpec::beta(1.5).unwrap()).unwrap();
        for backend in [Backend::DirectK, Backend::XBinomial] {
            let a = sim.simulate(40, None, 123, backend).unwrap();
            let b = sim.simulate(40, None, 123, backend).unwrap();
            assert_eq!(a, b);
            assert!(a.is_absorbed());
            for w in a.events.windows(2) {
                assert!(w[1].0 > w[0].0 && w[1].1 < w[0].1);
            }
        }
    }

    #[test]
    fn horizon_stops_early() {
        let sim = Simulator::new(&LambdaSpec::kingman()).unwrap();
        let p = sim.simulate(1000, Some(0.01), 1, Backend::Auto).unwrap();
        assert!(p.events.last().unwrap().0 <= 0.01);
        assert_eq!(p.horizon, Some(0.01));
        assert!(p.final_count() > 1);
    }

    #[test]
    fn csv_has_initial_row() {
        let p = path(2, vec![(0.25, 1)]);
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "time,count\n0e0,2\n2.5e-1,1\n");
    }
}
