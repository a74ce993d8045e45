//! Numerical reading of the Schweinsberg (`Σ 1/γ_b < ∞`) and Grey
//! (`∫^∞ dq/ψ < ∞`) criteria.
//!
//! Neither criterion can be decided from finitely many evaluations. Both
//! functions grow at least linearly, so we look at the local exponent
//! `θ = d ln f / d ln x` at the end of the evaluated range and at
//! `κ = (θ - 1) ln x`. For `f(x) ≈ x (ln x)^p` one has `κ ≈ p`, and the
//! tail integral converges iff `p > 1`; for a genuine power `θ > 1`, `κ`
//! grows without bound. We call the tail convergent when `θ > 1.05` and
//! `κ > 1.5` at every probe over the last decade, divergent when `κ < 1.2`,
//! and otherwise fall back to `κ > 1.35` with heuristic confidence.

use serde::Serialize;

use super::{gamma_identity, RATE_TOL};
use crate::error::{Error, Result};
use crate::measure::LambdaSpec;
use crate::numeric::Neumaier;
use crate::quad::{self, gk15, Tolerance};
use crate::speed::PsiEvaluator;

const STABLE_THETA: f64 = 1.05;
const CONVERGENT_KAPPA: f64 = 1.5;
const DIVERGENT_KAPPA: f64 = 1.2;
const UNDECIDED_SPLIT: f64 = 1.35;
/// Probes per decade below the endpoint (the endpoint itself included).
const PROBES: usize = 5;
const DIFF_STEP: f64 = 0.05;
/// Below this `b` every `1/γ_b` is summed; above it the sum is replaced by
/// the Euler–Maclaurin form built on the real-`b` continuation of `γ`.
pub const SCHWEINSBERG_EXACT_UP_TO: u64 = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Confidence {
    ProvedNumeric,
    Heuristic,
}

/// Tail diagnostics for one criterion.
#[derive(Debug, Clone, Serialize)]
pub struct CriterionFit {
    pub partial: f64,
    /// Local exponents at `x_end · 10^{-j/4}`, `j = 0..4`.
    pub exponents: Vec<f64>,
    pub kappa: f64,
    pub converges: bool,
    pub stable: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CdiVerdict {
    pub comes_down: bool,
    pub schweinsberg_partial: f64,
    pub grey_partial: f64,
    pub confidence: Confidence,
    pub b_max: u64,
    pub q_max: f64,
    pub schweinsberg: CriterionFit,
    pub grey: CriterionFit,
}

fn fit<F: Fn(f64) -> Result<f64>>(partial: f64, x_end: f64, ln_f: F) -> Result<CriterionFit> {
    let mut exponents = Vec::with_capacity(PROBES);
    let mut kappas = Vec::with_capacity(PROBES);
    for j in 0..PROBES {
        let x = x_end * 10f64.powf(-(j as f64) / (PROBES - 1) as f64);
        let up = ln_f(x * DIFF_STEP.exp())?;
        let down = ln_f(x * (-DIFF_STEP).exp())?;
        let theta = (up - down) / (2.0 * DIFF_STEP);
        exponents.push(theta);
        kappas.push((theta - 1.0) * x.ln());
    }
    let kappa = kappas[0];
    let stable = exponents.iter().all(|&t| t > STABLE_THETA) && kappas.iter().all(|&k| k > CONVERGENT_KAPPA);
    let converges = if stable {
        true
    } else if kappa < DIVERGENT_KAPPA {
        false
    } else {
        kappa > UNDECIDED_SPLIT
    };
    Ok(CriterionFit {
        partial,
        exponents,
        kappa,
        converges,
        stable,
    })
}

/// `∫_1^{q_max} dq / ψ(q)`, one GK15 rule per eighth of a decade in `ln q`.
pub fn grey_partial(psi: &PsiEvaluator, q_max: f64) -> Result<f64> {
    if !(q_max > 1.0) {
        return Err(Error::Domain(format!("q_max must exceed 1, got {q_max}")));
    }
    let cells = ((q_max.log10() * 8.0).ceil() as usize).max(1);
    let step = q_max.ln() / cells as f64;
    let mut failure = None;
    let mut f = |s: f64| {
        let q = s.exp();
        match psi.psi(q) {
            Ok(p) => q / p,
            Err(e) => {
                failure.get_or_insert(e);
                0.0
            }
        }
    };
    let mut sum = Neumaier::default();
    for i in 0..cells {
        sum.add(gk15(&mut f, step * i as f64, step * (i + 1) as f64).0);
    }
    match failure {
        Some(e) => Err(e),
        None => Ok(sum.total()),
    }
}

/// `Σ_{b=2}^{b_max} 1/γ_b` with `γ_b` from its single-quadrature identity.
///
/// Terms up to [`SCHWEINSBERG_EXACT_UP_TO`] are summed one by one. The rest
/// uses `Σ_{b=B}^{N} f(b) ≈ ∫_B^N f + (f(B) + f(N))/2 + (f'(N) - f'(B))/12`
/// for the smooth, slowly varying `f = 1/γ`.
pub fn schweinsberg_partial(spec: &LambdaSpec, b_max: u64) -> Result<f64> {
    if b_max < 2 {
        return Err(Error::Domain(format!("b_max must be at least 2, got {b_max}")));
    }
    let tol = Tolerance::relative(1e-10);
    let inv = |b: f64| gamma_identity(spec, b, tol).map(|g| 1.0 / g);
    let exact_top = b_max.min(SCHWEINSBERG_EXACT_UP_TO);
    let mut sum = Neumaier::default();
    for b in 2..=exact_top {
        sum.add(inv(b as f64)?);
    }
    if b_max > exact_top {
        let (lo, hi) = ((exact_top + 1) as f64, b_max as f64);
        let mut failure = None;
        let mut f = |s: f64| {
            let b = s.exp();
            match inv(b) {
                Ok(v) => v * b,
                Err(e) => {
                    failure.get_or_insert(e);
                    0.0
                }
            }
        };
        let integral = quad::adaptive(&mut f, lo.ln(), hi.ln(), Tolerance::relative(1e-10), 500)?.value;
        if let Some(e) = failure {
            return Err(e);
        }
        let d = |b: f64| -> Result<f64> { Ok((inv(b + 0.5)? - inv(b - 0.5)?) / 1.0) };
        sum.add(integral);
        sum.add(0.5 * (inv(lo)? + inv(hi)?));
        sum.add((d(hi)? - d(lo)?) / 12.0);
    }
    Ok(sum.total())
}

/// Classifies `Λ` as coming down from infinity or not using both criteria.
pub fn cdi_classify(spec: &LambdaSpec, b_max: u64, q_max: f64) -> Result<CdiVerdict> {
    if b_max < 100 {
        return Err(Error::Domain(format!("b_max must be at least 100, got {b_max}")));
    }
    if !(q_max >= 1e3) || !q_max.is_finite() {
        return Err(Error::Domain(format!("q_max must be at least 1e3, got {q_max}")));
    }
    spec.require_no_atom_at_one()?;
    let psi = PsiEvaluator::new(spec);

    let grey = fit(grey_partial(&psi, q_max)?, q_max, |q| psi.psi(q).map(f64::ln))?;
    let schweinsberg = fit(schweinsberg_partial(spec, b_max)?, b_max as f64, |b| {
        gamma_identity(spec, b, RATE_TOL).map(f64::ln)
    })?;

    if grey.converges != schweinsberg.converges {
        return Err(Error::CriteriaDisagreement {
            schweinsberg_verdict: schweinsberg.converges,
            grey_verdict: grey.converges,
            schweinsberg_partial: schweinsberg.partial,
            grey_partial: grey.partial,
        });
    }
    let confidence = if grey.stable && schweinsberg.stable {
        Confidence::ProvedNumeric
    } else {
        Confidence::Heuristic
    };
    Ok(CdiVerdict {
        comes_down: grey.converges,
        schweinsberg_partial: schweinsberg.partial,
        grey_partial: grey.partial,
        confidence,
        b_max,
        q_max,
        schweinsberg,
        grey,
    })
}
