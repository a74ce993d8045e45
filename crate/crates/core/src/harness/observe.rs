//! Path functionals in the shifted frame `t ↦ v(t_n + t)`, `t_n = u(n)`.
//!
//! `N` is constant between jumps while `v` decreases, so on every holding
//! interval `N(t)/v(t_n + t)` and `(t_n + t) N(t)` increase. Their extremes
//! over a window are therefore attained at the window ends or at jump times
//! (left and right values), and those points are all evaluated in addition
//! to the geometric observation grid.

use crate::error::{Error, Result};
use crate::simulate::BlockCountPath;
use crate::speed::SpeedModel;

pub const POINTS_PER_DECADE: usize = 32;
/// The window starts at this multiple of `u(n)`.
pub const WINDOW_START_FACTOR: f64 = 10.0;

/// `v` seen from a chain started with `n` blocks.
#[derive(Debug, Clone, Copy)]
pub struct Frame<'a> {
    pub speed: &'a SpeedModel,
    pub n: u64,
    pub t_n: f64,
}

impl<'a> Frame<'a> {
    pub fn new(speed: &'a SpeedModel, n: u64) -> Result<Self> {
        Ok(Self {
            speed,
            n,
            t_n: speed.u(n as f64)?,
        })
    }

    pub fn v(&self, t: f64) -> Result<f64> {
        self.speed.v(self.t_n + t)
    }

    /// `[max(10 u(n), table floor), s]`; an empty window is an error.
    pub fn window(&self, s: f64) -> Result<(f64, f64)> {
        let lo = (WINDOW_START_FACTOR * self.t_n).max(self.speed.t_floor());
        if !(lo < s) {
            return Err(Error::Domain(format!(
                "observation window empty for n = {}: starts at {lo:e} (10 u(n)) but s = {s:e}",
                self.n
            )));
        }
        Ok((lo, s))
    }

    /// `∫_0^s v(t_n + t) dt`.
    pub fn integral_v(&self, s: f64) -> Result<f64> {
        self.speed.integral_v(self.t_n, self.t_n + s)
    }
}

/// Geometric grid from `lo` to `hi` inclusive, 32 points per decade.
pub fn observation_grid(lo: f64, hi: f64) -> Vec<f64> {
    let decades = (hi / lo).log10();
    let steps = ((decades * POINTS_PER_DECADE as f64).ceil() as usize).max(1);
    let mut grid: Vec<f64> = (0..steps)
        .map(|i| lo * (hi / lo).powf(i as f64 / steps as f64))
        .collect();
    grid.push(hi);
    grid
}

fn jumps_within<'p>(path: &'p BlockCountPath, lo: f64, hi: f64) -> impl Iterator<Item = (f64, u64, u64)> + 'p {
    let start = path.events.partition_point(|e| e.0 <= lo);
    let end = path.events.partition_point(|e| e.0 <= hi);
    (start..end).map(move |i| {
        let before = if i == 0 { path.initial_n } else { path.events[i - 1].1 };
        (path.events[i].0, before, path.events[i].1)
    })
}

/// `sup |N(t) / v(t_n + t) - 1|` over `window`.
pub fn sup_deviation(path: &BlockCountPath, frame: &Frame, window: (f64, f64), grid: &[f64]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for &t in grid {
        worst = worst.max((path.count_at(t) as f64 / frame.v(t)? - 1.0).abs());
    }
    for (t, before, after) in jumps_within(path, window.0, window.1) {
        let v = frame.v(t)?;
        worst = worst.max((before as f64 / v - 1.0).abs());
        worst = worst.max((after as f64 / v - 1.0).abs());
    }
    Ok(worst)
}

/// `min (t_n + t) N(t) / 2` over `window`.
pub fn min_kingman_ratio(path: &BlockCountPath, frame: &Frame, window: (f64, f64), grid: &[f64]) -> f64 {
    let mut best = f64::INFINITY;
    for &t in grid {
        best = best.min((frame.t_n + t) * path.count_at(t) as f64 / 2.0);
    }
    for (t, _, after) in jumps_within(path, window.0, window.1) {
        best = best.min((frame.t_n + t) * after as f64 / 2.0);
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::Backend;

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
    fn grid_is_geometric_and_closed() {
        let g = observation_grid(1e-3, 1e-1);
        assert_eq!(g.len(), 65);
        assert_eq!(g[0], 1e-3);
        assert_eq!(*g.last().unwrap(), 1e-1);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn sup_sees_jump_between_grid_points() {
        // v(t) = 2/t with t_n = 2/n = 0.2; a deep dip and recovery between grid points
        let speed = SpeedModel::Kingman { c: 1.0 };
        let frame = Frame::new(&speed, 10).unwrap();
        assert!((frame.t_n - 0.2).abs() < 1e-15);
        let p = path(10, vec![(0.30001, 4), (0.30002, 3)]);
        let grid = [0.25, 0.35];
        let sup = sup_deviation(&p, &frame, (0.25, 0.35), &grid).unwrap();
        // right before the first jump: N = 10, v(0.50001) = 3.99992
        assert!((sup - (10.0 / (2.0 / 0.50001) - 1.0)).abs() < 1e-12);
        let min = min_kingman_ratio(&p, &frame, (0.25, 0.35), &grid);
        assert!((min - 0.50002 * 3.0 / 2.0).abs() < 1e-12);
    }

    #[test]
    fn empty_window_is_reported() {
        let speed = SpeedModel::Kingman { c: 1.0 };
        let frame = Frame::new(&speed, 10).unwrap();
        assert!(frame.window(0.1).is_err());
        assert!(frame.window(5.0).is_ok());
    }
}
