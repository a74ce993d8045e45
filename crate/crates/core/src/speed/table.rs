use serde::Serialize;

use super::PsiEvaluator;
use crate::error::{Error, Result};
use crate::numeric::Neumaier;
use crate::quad::gk15;

/// Minimum local exponent of ψ at `q_max` for the power tail to be trusted.
pub const MIN_TAIL_EXPONENT: f64 = 1.05;

/// Power-law continuation `ψ(q) ≈ ψ(q_max) (q / q_max)^θ` beyond the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailModel {
    pub theta: f64,
    pub psi_at_q_max: f64,
    /// Exponent one decade below `q_max`, used for the tail error estimate.
    pub theta_decade_below: f64,
}

/// What a table was built from and how accurate it claims to be.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableProvenance {
    pub measure_id: String,
    pub q_min: f64,
    pub q_max: f64,
    pub points_per_decade: usize,
    pub tail_theta: f64,
    /// Claimed bound on `|error of u(q_min)|` (quadrature plus tail model).
    pub u_abs_error: f64,
    /// Claimed relative error of the tail integral `u(q_max)`.
    pub tail_rel_error: f64,
    /// `two_term` or `power`; see [`two_term_tail`].
    pub tail_model: &'static str,
}

/// `u(q)` from `ψ(q)/q ≈ A q^β + B` fitted through `q`, `q/ρ`, `q/ρ²`.
///
/// The increments of `ψ(q)/q` along the three points are in ratio `ρ^{-β}`,
/// which fixes `β`, then `A` and `B`; `∫ dq/(q (A q^β + B))` is closed form.
/// `None` when the increments are not those of an increasing power.
fn two_term_tail(eval: &PsiEvaluator, q: f64, rho: f64) -> Result<Option<f64>> {
    let r = |q: f64| eval.psi(q).map(|p| p / q);
    let (r0, r1, r2) = (r(q)?, r(q / rho)?, r(q / (rho * rho))?);
    let w = (r1 - r2) / (r0 - r1);
    if !(w > 0.0 && w < 1.0 && r0 > r1) {
        return Ok(None);
    }
    let beta = -w.ln() / rho.ln();
    let y = (r0 - r1) / (1.0 - w);
    let b = r0 - y;
    let ratio = b / y;
    let tail = if ratio.abs() < 1e-12 {
        (1.0 - 0.5 * ratio) / (beta * y)
    } else {
        ratio.ln_1p() / (beta * b)
    };
    Ok((tail > 0.0 && tail.is_finite()).then_some(tail))
}

/// Tabulated `u(q) = ∫_q^∞ dq'/ψ(q')` on a geometric grid and its inverse `v`.
#[derive(Debug, Clone)]
pub struct SpeedTable {
    ln_q: Vec<f64>,
    ln_u: Vec<f64>,
    /// `d ln u / d ln q = -q / (ψ(q) u(q))` at each node.
    slopes: Vec<f64>,
    q_grid: Vec<f64>,
    u_values: Vec<f64>,
    tail: TailModel,
    provenance: TableProvenance,
}

impl SpeedTable {
    pub const DEFAULT_Q_MIN: f64 = 1.0;
    pub const DEFAULT_Q_MAX: f64 = 1e10;
    pub const DEFAULT_POINTS_PER_DECADE: usize = 64;

    pub fn build_default(eval: &PsiEvaluator) -> Result<Self> {
        Self::build(eval, Self::DEFAULT_Q_MIN, Self::DEFAULT_Q_MAX, Self::DEFAULT_POINTS_PER_DECADE)
    }

    pub fn build(eval: &PsiEvaluator, q_min: f64, q_max: f64, points_per_decade: usize) -> Result<Self> {
        if !(q_min >= 1.0 && q_max > q_min && q_max.is_finite()) {
            return Err(Error::Domain(format!(
                "speed table needs 1 <= q_min < q_max < inf, got [{q_min}, {q_max}]"
            )));
        }
        if points_per_decade < 2 {
            return Err(Error::Domain("speed table needs at least 2 points per decade".into()));
        }
        eval.spec().require_no_atom_at_one()?;

        let h = std::f64::consts::LN_10 / points_per_decade as f64;
        let theta = eval.local_exponent(q_max, 0.5 * h)?;
        let theta_below = eval.local_exponent(q_max / 10.0, 0.5 * h)?;
        if !(theta > MIN_TAIL_EXPONENT) {
            return Err(Error::TailNotResolved { q_max, theta });
        }
        let psi_max = eval.psi(q_max)?;
        let (tail, tail_rel_error, tail_model) = match (
            two_term_tail(eval, q_max, 10.0)?,
            two_term_tail(eval, q_max / 10.0, 10.0)?,
        ) {
            (Some(tail), Some(below)) => {
                // The same fit a decade lower, carried up to q_max by quadrature.
                let mut failure = None;
                let mut f = |s: f64| {
                    let q = s.exp();
                    eval.psi(q).map(|p| q / p).unwrap_or_else(|e| {
                        failure.get_or_insert(e);
                        0.0
                    })
                };
                let h = std::f64::consts::LN_10 / points_per_decade as f64;
                let lo = (q_max / 10.0).ln();
                let between: f64 = (0..points_per_decade)
                    .map(|i| gk15(&mut f, lo + h * i as f64, lo + h * (i + 1) as f64).0)
                    .sum();
                if let Some(e) = failure {
                    return Err(e);
                }
                (tail, ((below - between - tail) / tail).abs().min(1.0), "two_term")
            }
            _ => {
                // A local exponent drifting by Δθ shifts q/((θ-1)ψ) by about Δθ/(θ-1).
                let err = ((theta - theta_below).abs() / (theta - 1.0)).min(1.0);
                (q_max / ((theta - 1.0) * psi_max), err, "power")
            }
        };

        let (ln_lo, ln_hi) = (q_min.ln(), q_max.ln());
        let steps = ((ln_hi - ln_lo) / h).ceil().max(1.0) as usize;
        let step = (ln_hi - ln_lo) / steps as f64;
        let ln_q: Vec<f64> = (0..=steps)
            .map(|i| if i == steps { ln_hi } else { ln_lo + step * i as f64 })
            .collect();
        let q_grid: Vec<f64> = ln_q.iter().map(|l| l.exp()).collect();

        // ∫ dq/ψ = ∫ q/ψ(q) d ln q, one GK15 rule per cell.
        let mut failure = None;
        let mut integrand = |s: f64| {
            let q = s.exp();
            match eval.psi(q) {
                Ok(p) => q / p,
                Err(e) => {
                    failure.get_or_insert(e);
                    0.0
                }
            }
        };
        let mut pieces = vec![(0.0, 0.0); steps];
        for i in 0..steps {
            pieces[i] = gk15(&mut integrand, ln_q[i], ln_q[i + 1]);
        }
        if let Some(e) = failure {
            return Err(e);
        }

        let mut u_values = vec![0.0; steps + 1];
        u_values[steps] = tail;
        let mut acc = Neumaier::default();
        acc.add(tail);
        let mut quad_err = 0.0;
        for i in (0..steps).rev() {
            acc.add(pieces[i].0);
            quad_err += pieces[i].1;
            u_values[i] = acc.total();
        }
        for w in u_values.windows(2) {
            if !(w[1] < w[0]) {
                return Err(Error::NumericalInconsistency {
                    what: "u must be strictly decreasing on the grid".into(),
                    first: w[0],
                    second: w[1],
                    relative_gap: (w[0] - w[1]) / w[0],
                });
            }
        }
        let slopes = q_grid
            .iter()
            .zip(&u_values)
            .map(|(&q, &u)| Ok(-q / (eval.psi(q)? * u)))
            .collect::<Result<Vec<_>>>()?;

        let provenance = TableProvenance {
            measure_id: eval.spec().measure_id(),
            q_min,
            q_max,
            points_per_decade,
            tail_theta: theta,
            u_abs_error: quad_err + tail * tail_rel_error,
            tail_rel_error,
            tail_model,
        };
        Ok(Self {
            ln_u: u_values.iter().map(|u| u.ln()).collect(),
            ln_q,
            slopes,
            q_grid,
            u_values,
            tail: TailModel {
                theta,
                psi_at_q_max: psi_max,
                theta_decade_below: theta_below,
            },
            provenance,
        })
    }

    pub fn q_grid(&self) -> &[f64] {
        &self.q_grid
    }

    pub fn u_values(&self) -> &[f64] {
        &self.u_values
    }

    pub fn tail(&self) -> TailModel {
        self.tail
    }

    pub fn provenance(&self) -> &TableProvenance {
        &self.provenance
    }

    pub fn q_min(&self) -> f64 {
        self.q_grid[0]
    }

    pub fn q_max(&self) -> f64 {
        *self.q_grid.last().expect("nonempty grid")
    }

    /// Smallest `t` the table resolves without extrapolation, `u(q_max)`.
    pub fn t_floor(&self) -> f64 {
        *self.u_values.last().expect("nonempty grid")
    }

    /// Largest `t` the table resolves, `u(q_min)`.
    pub fn t_ceiling(&self) -> f64 {
        self.u_values[0]
    }

    /// Hermite data on cell `i` with Fritsch–Carlson limited slopes.
    fn cell(&self, i: usize) -> (f64, f64, f64, f64, f64) {
        let (x0, x1) = (self.ln_q[i], self.ln_q[i + 1]);
        let (y0, y1) = (self.ln_u[i], self.ln_u[i + 1]);
        let h = x1 - x0;
        let delta = (y1 - y0) / h;
        let (mut m0, mut m1) = (self.slopes[i], self.slopes[i + 1]);
        let (a, b) = (m0 / delta, m1 / delta);
        if a < 0.0 || b < 0.0 {
            m0 = delta;
            m1 = delta;
        } else if a * a + b * b > 9.0 {
            let tau = 3.0 / (a * a + b * b).sqrt();
            m0 *= tau;
            m1 *= tau;
        }
        (y0, y1, h * m0, h * m1, h)
    }

    fn hermite(y0: f64, y1: f64, d0: f64, d1: f64, s: f64) -> f64 {
        let s2 = s * s;
        let s3 = s2 * s;
        (2.0 * s3 - 3.0 * s2 + 1.0) * y0 + (s3 - 2.0 * s2 + s) * d0 + (-2.0 * s3 + 3.0 * s2) * y1 + (s3 - s2) * d1
    }

    /// `u(q)`; beyond `q_max` only with `extrapolate`.
    pub fn u(&self, q: f64, extrapolate: bool) -> Result<f64> {
        let (lo, hi) = (self.q_min(), self.q_max());
        if q > hi && extrapolate {
            return Ok(self.t_floor() * (q / hi).powf(1.0 - self.tail.theta));
        }
        if !(q >= lo && q <= hi) {
            return Err(Error::Range {
                t: q,
                lo,
                hi,
            });
        }
        let x = q.ln();
        let i = self.ln_q.partition_point(|&v| v <= x).clamp(1, self.ln_q.len() - 1) - 1;
        let (y0, y1, d0, d1, h) = self.cell(i);
        let s = ((x - self.ln_q[i]) / h).clamp(0.0, 1.0);
        Ok(Self::hermite(y0, y1, d0, d1, s).exp())
    }

    /// `v(t)`, the inverse of `u`; below `u(q_max)` only with `extrapolate`.
    pub fn v(&self, t: f64, extrapolate: bool) -> Result<f64> {
        let (floor, ceiling) = (self.t_floor(), self.t_ceiling());
        if t > 0.0 && t < floor && extrapolate {
            return Ok(self.q_max() * (t / floor).powf(1.0 / (1.0 - self.tail.theta)));
        }
        if !(t >= floor && t <= ceiling) {
            return Err(Error::Range {
                t,
                lo: floor,
                hi: ceiling,
            });
        }
        let y = t.ln();
        // ln_u is decreasing: find i with ln_u[i] >= y >= ln_u[i + 1].
        let i = self.ln_u.partition_point(|&v| v > y).clamp(1, self.ln_u.len() - 1) - 1;
        let (y0, y1, d0, d1, h) = self.cell(i);
        // Monotone cubic on [0, 1]: safeguarded Newton.
        let (mut a, mut b) = (0.0, 1.0);
        let mut s = ((y - y0) / (y1 - y0)).clamp(0.0, 1.0);
        for _ in 0..60 {
            let f = Self::hermite(y0, y1, d0, d1, s) - y;
            if f > 0.0 {
                a = s;
            } else {
                b = s;
            }
            let s2 = s * s;
            let df = (6.0 * s2 - 6.0 * s) * y0 + (3.0 * s2 - 4.0 * s + 1.0) * d0 + (-6.0 * s2 + 6.0 * s) * y1
                + (3.0 * s2 - 2.0 * s) * d1;
            let mut next = if df < 0.0 { s - f / df } else { f64::NAN };
            if !(next > a && next < b) {
                next = 0.5 * (a + b);
            }
            if (next - s).abs() <= 1e-16 || b - a <= 1e-16 {
                s = next;
                break;
            }
            s = next;
        }
        Ok((self.ln_q[i] + s * h).exp())
    }
}
