//! Merger rates `λ_{b,k} = ∫ x^{k-2} (1-x)^{b-k} Λ(dx)`, the functional
//! `γ_b`, per-state merger-size distributions and the coming-down criteria.

mod cdi;

pub use cdi::{cdi_classify, grey_partial, schweinsberg_partial, CdiVerdict, Confidence, CriterionFit};

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use crate::error::{Error, Result};
use crate::measure::LambdaSpec;
use crate::numeric::{block_loss_over_x2, compensated_sum, ln_binomial, log_sum_exp, pair_or_more_over_x2};
use crate::quad::Tolerance;

/// Accuracy target for rates computed internally (rows, identities).
pub const RATE_TOL: Tolerance = Tolerance { abs: 0.0, rel: 1e-12 };
/// Agreement required between a row total and the single-quadrature identity.
pub const TOTAL_RATE_CHECK: f64 = 1e-8;
/// Agreement required between summed and identity forms of `γ_b`.
pub const GAMMA_CHECK: f64 = 1e-6;

fn check_bk(b: u64, k: u64) -> Result<()> {
    if b < 2 || k < 2 || k > b {
        Err(Error::Domain(format!("need 2 <= k <= b, got b = {b}, k = {k}")))
    } else {
        Ok(())
    }
}

/// `ln λ_{b,k}`, or `-inf` when the rate vanishes.
///
/// The continuous part is integrated after dividing by the peak of
/// `x^{k-2} (1-x)^{b-k}`, so the result stays representable for large `b`.
pub fn log_lambda_bk(spec: &LambdaSpec, b: u64, k: u64, tol: Tolerance) -> Result<f64> {
    check_bk(b, k)?;
    let a = (k - 2) as f64;
    let c = (b - k) as f64;
    let mut terms = Vec::with_capacity(4);
    if k == 2 && spec.atom_zero() > 0.0 {
        terms.push(spec.atom_zero().ln());
    }
    if k == b && spec.atom_one() > 0.0 {
        terms.push(spec.atom_one().ln());
    }
    for (x, m) in spec.interior_atoms() {
        terms.push(m.ln() + a * x.ln() + c * (-x).ln_1p());
    }
    if spec.has_density() && spec.weight() > 0.0 {
        let eta = spec.eta();
        let peak = if a + c > 0.0 { a / (a + c) } else { 0.5 };
        let at = peak.min(eta);
        let ln_peak = xlogy(a, at) + if c > 0.0 { c * (-at).ln_1p() } else { 0.0 };
        let phi = |x: f64| xlogy(a, x) + c * (-x).ln_1p() - ln_peak;
        let g = |x: f64| phi(x).exp();
        // ln g is concave, so g underflows outside one bracket around `at`;
        // the walk toward an endpoint would otherwise cross long runs of zeros.
        let lo = if a > 0.0 && phi(TINY) < -UNDERFLOW {
            let (mut l, mut h) = (TINY.ln(), at.ln());
            for _ in 0..100 {
                let m = 0.5 * (l + h);
                if phi(m.exp()) < -UNDERFLOW {
                    l = m;
                } else {
                    h = m;
                }
            }
            l.exp()
        } else {
            0.0
        };
        let hi = if at < eta && phi(eta) < -UNDERFLOW {
            let (mut l, mut h) = (at, eta);
            for _ in 0..100 {
                let m = 0.5 * (l + h);
                if phi(m) < -UNDERFLOW {
                    h = m;
                } else {
                    l = m;
                }
            }
            h
        } else {
            eta
        };
        // The exponent is a sum of terms of size up to `|ln_peak|`, so each
        // evaluation of `g` carries relative rounding of that many ulps.
        let noise = 16.0 * f64::EPSILON * (xlogy(a, at).abs() + (c * (-at).ln_1p()).abs() + 1.0);
        let tol = Tolerance::new(tol.abs, tol.rel.max(noise));
        // The density may be singular only at 0 and 1.
        let mut scaled = spec.integrate_density_refined(g, lo, at, lo == 0.0, at >= 1.0, tol)?.value;
        if at < hi {
            scaled += spec.integrate_density_refined(g, at, hi, at == 0.0, hi >= 1.0, tol)?.value;
        }
        if scaled > 0.0 {
            terms.push(ln_peak + scaled.ln());
        }
    }
    Ok(log_sum_exp(&terms))
}

/// `g < e^{-UNDERFLOW}` is zero in double precision.
const UNDERFLOW: f64 = 745.0;
const TINY: f64 = 1e-300;

fn xlogy(a: f64, x: f64) -> f64 {
    if a == 0.0 {
        0.0
    } else {
        a * x.ln()
    }
}

/// `λ_{b,k}` including atom contributions.
pub fn lambda_bk(spec: &LambdaSpec, b: u64, k: u64, tol: Tolerance) -> Result<f64> {
    Ok(log_lambda_bk(spec, b, k, tol)?.exp())
}

/// `λ_b = Σ_k C(b,k) λ_{b,k}` by the single-quadrature identity
/// `Σ_k C(b,k) x^{k-2} (1-x)^{b-k} = x^{-2} P(Bin(b,x) >= 2)`.
pub fn total_rate_identity(spec: &LambdaSpec, b: f64) -> Result<f64> {
    spec.nu_integrate_scaled(|x| pair_or_more_over_x2(b, x), Some(0.5 * b * (b - 1.0)), RATE_TOL)
}

/// `γ_b` by the identity `Σ_k (k-1) C(b,k) x^{k-2} (1-x)^{b-k} = x^{-2} (bx - 1 + (1-x)^b)`.
///
/// Defined for real `b >= 2` through the right-hand side.
pub fn gamma_identity(spec: &LambdaSpec, b: f64, tol: Tolerance) -> Result<f64> {
    spec.nu_integrate_scaled(|x| block_loss_over_x2(b, x), Some(0.5 * b * (b - 1.0)), tol)
}

/// `γ_b` by summation over the merger-size row, cross-checked against
/// [`gamma_identity`].
pub fn gamma_b(spec: &LambdaSpec, b: u64) -> Result<f64> {
    Ok(merger_distribution(spec, b)?.gamma)
}

/// Merger-size distribution from state `b`.
#[derive(Debug, Clone)]
pub struct RateRow {
    pub b: u64,
    /// `ln(C(b,k) λ_{b,k})` at index `k - 2`.
    pub log_weights: Vec<f64>,
    pub total_rate: f64,
    pub gamma: f64,
    cumulative: Vec<f64>,
}

impl RateRow {
    fn from_log_lambdas(spec: &LambdaSpec, b: u64, log_lambdas: &[f64]) -> Result<Self> {
        let bf = b as f64;
        let log_weights: Vec<f64> = log_lambdas
            .iter()
            .enumerate()
            .map(|(i, &l)| ln_binomial(bf, (i + 2) as f64) + l)
            .collect();
        let top = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if top == f64::NEG_INFINITY {
            return Err(Error::InvalidMeasure(format!("all merger rates vanish at b = {b}")));
        }
        let weights: Vec<f64> = log_weights.iter().map(|w| (w - top).exp()).collect();
        let scaled_total = compensated_sum(weights.iter().copied());
        let total_rate = top.exp() * scaled_total;
        let gamma = top.exp() * compensated_sum(weights.iter().enumerate().map(|(i, w)| (i + 1) as f64 * w));

        let identity = total_rate_identity(spec, bf)?;
        let gap = (total_rate - identity).abs() / identity.abs();
        if !(gap <= TOTAL_RATE_CHECK) {
            return Err(Error::NumericalInconsistency {
                what: format!("total merger rate at b = {b}"),
                first: total_rate,
                second: identity,
                relative_gap: gap,
            });
        }
        let gamma_id = gamma_identity(spec, bf, RATE_TOL)?;
        let gap = (gamma - gamma_id).abs() / gamma_id.abs();
        if !(gap <= GAMMA_CHECK) {
            return Err(Error::NumericalInconsistency {
                what: format!("gamma_b at b = {b}"),
                first: gamma,
                second: gamma_id,
                relative_gap: gap,
            });
        }

        let mut acc = crate::numeric::Neumaier::default();
        let mut cumulative = Vec::with_capacity(weights.len());
        let mut prev = 0.0f64;
        for w in &weights {
            acc.add(*w / scaled_total);
            // Rounding must not make a cell negative.
            prev = acc.total().clamp(prev, 1.0);
            cumulative.push(prev);
        }
        if let Some(last) = cumulative.last_mut() {
            *last = 1.0;
        }
        Ok(Self {
            b,
            log_weights,
            total_rate,
            gamma,
            cumulative,
        })
    }

    /// `P(merger of k blocks)`.
    pub fn prob(&self, k: u64) -> f64 {
        if k < 2 || k > self.b {
            return 0.0;
        }
        let i = (k - 2) as usize;
        let prev = if i == 0 { 0.0 } else { self.cumulative[i - 1] };
        self.cumulative[i] - prev
    }

    /// Smallest `k` with `P(K <= k) >= u`, for `u` uniform on `[0, 1)`.
    pub fn sample_k(&self, u: f64) -> u64 {
        let i = self.cumulative.partition_point(|&c| c < u);
        (i.min(self.cumulative.len() - 1) + 2) as u64
    }
}

/// Merger-size row at `b`, each rate by its own quadrature.
pub fn merger_distribution(spec: &LambdaSpec, b: u64) -> Result<RateRow> {
    check_bk(b, 2)?;
    let logs = (2..=b)
        .map(|k| log_lambda_bk(spec, b, k, RATE_TOL))
        .collect::<Result<Vec<_>>>()?;
    RateRow::from_log_lambdas(spec, b, &logs)
}

/// Read-mostly cache of merger-size rows keyed by `b`.
///
/// [`RateCache::prefill`] integrates only the top row and derives lower
/// rows from `λ_{b,k} = λ_{b+1,k} + λ_{b+1,k+1}`, a sum of nonnegative terms
/// that keeps relative accuracy. Each derived row is still checked against
/// the total-rate and `γ_b` identities.
#[derive(Debug)]
pub struct RateCache {
    spec: LambdaSpec,
    rows: RwLock<HashMap<u64, Arc<RateRow>>>,
}

impl RateCache {
    pub fn new(spec: LambdaSpec) -> Self {
        Self {
            spec,
            rows: RwLock::new(HashMap::new()),
        }
    }

    pub fn spec(&self) -> &LambdaSpec {
        &self.spec
    }

    pub fn row(&self, b: u64) -> Result<Arc<RateRow>> {
        if let Some(r) = self.rows.read().expect("rate cache lock").get(&b) {
            return Ok(Arc::clone(r));
        }
        let row = Arc::new(merger_distribution(&self.spec, b)?);
        let mut w = self.rows.write().expect("rate cache lock");
        Ok(Arc::clone(w.entry(b).or_insert(row)))
    }

    /// Fills rows `2..=b_top`.
    pub fn prefill(&self, b_top: u64) -> Result<()> {
        check_bk(b_top, 2)?;
        let missing = {
            let r = self.rows.read().expect("rate cache lock");
            (2..=b_top).any(|b| !r.contains_key(&b))
        };
        if !missing {
            return Ok(());
        }
        let mut logs = (2..=b_top)
            .map(|k| log_lambda_bk(&self.spec, b_top, k, RATE_TOL))
            .collect::<Result<Vec<_>>>()?;
        let mut built = Vec::with_capacity(b_top as usize);
        built.push(RateRow::from_log_lambdas(&self.spec, b_top, &logs)?);
        for b in (2..b_top).rev() {
            // logs holds row b + 1 (index k - 2); row b has one fewer entry.
            let next: Vec<f64> = (0..(b - 1) as usize)
                .map(|i| log_sum_exp(&[logs[i], logs[i + 1]]))
                .collect();
            logs = next;
            built.push(RateRow::from_log_lambdas(&self.spec, b, &logs)?);
        }
        let mut w = self.rows.write().expect("rate cache lock");
        for row in built {
            w.entry(row.b).or_insert_with(|| Arc::new(row));
        }
        Ok(())
    }
}
