use crate::error::{Error, Result};
use crate::measure::LambdaSpec;
use crate::numeric::exp_remainder_over_sq;
use crate::quad::Tolerance;

/// Evaluates `ψ(q) = (c/2) q² + ∫ (e^{-qx} - 1 + qx) x^{-2} Λ(dx)`.
#[derive(Debug, Clone)]
pub struct PsiEvaluator {
    spec: LambdaSpec,
    tol: Tolerance,
}

impl PsiEvaluator {
    /// Absolute floor `1e-10` with relative accuracy `1e-12`; `ψ(q)` grows
    /// like `q²`, so a purely absolute target is unreachable for large `q`.
    pub const DEFAULT_TOL: Tolerance = Tolerance { abs: 1e-10, rel: 1e-12 };

    pub fn new(spec: &LambdaSpec) -> Self {
        Self::with_tolerance(spec, Self::DEFAULT_TOL)
    }

    pub fn with_tolerance(spec: &LambdaSpec, tol: Tolerance) -> Self {
        Self {
            spec: spec.clone(),
            tol,
        }
    }

    pub fn spec(&self) -> &LambdaSpec {
        &self.spec
    }

    pub fn atom_c(&self) -> f64 {
        self.spec.atom_zero()
    }

    pub fn tolerance(&self) -> Tolerance {
        self.tol
    }

    pub fn psi(&self, q: f64) -> Result<f64> {
        if !(q >= 0.0) || !q.is_finite() {
            return Err(Error::Domain(format!("psi needs finite q >= 0, got {q}")));
        }
        if q == 0.0 {
            return Ok(0.0);
        }
        let q2 = q * q;
        self.spec
            .nu_integrate_scaled(|x| q2 * exp_remainder_over_sq(q * x), Some(0.5 * q2), self.tol)
    }

    /// Local power `d ln ψ / d ln q` by a central difference with step `h` in `ln q`.
    pub fn local_exponent(&self, q: f64, h: f64) -> Result<f64> {
        let up = self.psi(q * h.exp())?;
        let down = self.psi(q * (-h).exp())?;
        Ok((up.ln() - down.ln()) / (2.0 * h))
    }
}
