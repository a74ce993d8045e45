//! Finite measures `Λ` on `[0, 1]` and integration against `Λ` and against
//! `ν(dx) = x^{-2} Λ(dx)`.
//!
//! A measure is an atom at zero (the Kingman component), an optional atom at
//! one, and a continuous-or-atomic part on `(0, η]` scaled by a weight.

mod expr;
mod file;

pub use expr::{parse_density, DensityExpr};
pub use file::{Family, MeasureFile};

use std::cell::Cell;
use std::fmt;
use std::sync::Arc;

use sha2::{Digest, Sha256};
use statrs::function::beta::beta_reg;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::numeric::compensated_sum;
use crate::quad::{self, QuadEstimate, Tolerance};

/// Pointwise-evaluable density on `(0, 1)`.
#[derive(Clone)]
pub struct Density {
    label: String,
    f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl Density {
    pub fn new(label: impl Into<String>, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            label: label.into(),
            f: Arc::new(f),
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn eval(&self, x: f64) -> f64 {
        (self.f)(x)
    }
}

impl fmt::Debug for Density {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Density").field("label", &self.label).finish()
    }
}

/// `Beta(2 - α, α)` probability density on `(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaFamily {
    alpha: f64,
    ln_norm: f64,
}

impl BetaFamily {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 2.0) {
            return Err(Error::InvalidMeasure(format!("beta family needs alpha in (0, 2), got {alpha}")));
        }
        Ok(Self {
            alpha,
            ln_norm: -ln_gamma(2.0 - alpha) - ln_gamma(alpha),
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn density(&self, x: f64) -> f64 {
        (self.ln_norm + (1.0 - self.alpha) * x.ln() + (self.alpha - 1.0) * (-x).ln_1p()).exp()
    }

    /// `Λ((0, x])` for the unit-mass family.
    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else if x >= 1.0 {
            1.0
        } else {
            beta_reg(2.0 - self.alpha, self.alpha, x)
        }
    }
}

/// The part of `Λ` living on `(0, 1)`.
#[derive(Debug, Clone)]
pub enum ContinuousPart {
    None,
    Beta(BetaFamily),
    Uniform,
    Density(Density),
    /// Interior atoms `(x_i, m_i)` with `x_i ∈ (0, 1)`, `m_i > 0`.
    Atoms(Vec<(f64, f64)>),
}

impl ContinuousPart {
    fn describe(&self) -> String {
        match self {
            ContinuousPart::None => "none".into(),
            ContinuousPart::Beta(b) => format!("beta({:?})", b.alpha),
            ContinuousPart::Uniform => "uniform".into(),
            ContinuousPart::Density(d) => format!("density({})", d.label),
            ContinuousPart::Atoms(a) => {
                let items: Vec<String> = a.iter().map(|(x, m)| format!("{x:?}:{m:?}")).collect();
                format!("atoms[{}]", items.join(","))
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct LambdaSpec {
    atom_zero: f64,
    atom_one: f64,
    continuous: ContinuousPart,
    weight: f64,
    eta: f64,
    total_mass: f64,
}

impl LambdaSpec {
    /// General constructor. The continuous part is multiplied by `weight`
    /// and restricted to `(0, eta]`; the atom at one survives only if `eta = 1`.
    pub fn new(atom_zero: f64, atom_one: f64, continuous: ContinuousPart, weight: f64, eta: f64) -> Result<Self> {
        if !(atom_zero >= 0.0 && atom_zero.is_finite()) {
            return Err(Error::InvalidMeasure(format!("atom at 0 must be finite and >= 0, got {atom_zero}")));
        }
        if !(atom_one >= 0.0 && atom_one.is_finite()) {
            return Err(Error::InvalidMeasure(format!("atom at 1 must be finite and >= 0, got {atom_one}")));
        }
        if !(weight >= 0.0 && weight.is_finite()) {
            return Err(Error::InvalidMeasure(format!("weight must be finite and >= 0, got {weight}")));
        }
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(Error::Domain(format!("eta must lie in (0, 1], got {eta}")));
        }
        if let ContinuousPart::Atoms(atoms) = &continuous {
            for &(x, m) in atoms {
                if !(x > 0.0 && x < 1.0) || !(m > 0.0 && m.is_finite()) {
                    return Err(Error::InvalidMeasure(format!(
                        "interior atoms need x in (0,1) and mass > 0, got ({x}, {m})"
                    )));
                }
            }
        }
        let continuous = if weight == 0.0 { ContinuousPart::None } else { continuous };
        let atom_one = if eta < 1.0 { 0.0 } else { atom_one };
        let mut spec = Self {
            atom_zero,
            atom_one,
            continuous,
            weight,
            eta,
            total_mass: 0.0,
        };
        let cont = spec.continuous_mass()?;
        spec.total_mass = atom_zero + atom_one + cont;
        if !(spec.total_mass > 0.0 && spec.total_mass.is_finite()) {
            return Err(Error::InvalidMeasure(format!(
                "total mass must be positive and finite, got {}",
                spec.total_mass
            )));
        }
        Ok(spec)
    }

    /// `δ_0`: Kingman's coalescent.
    pub fn kingman() -> Self {
        Self::new(1.0, 0.0, ContinuousPart::None, 0.0, 1.0).expect("unit atom is valid")
    }

    pub fn beta(alpha: f64) -> Result<Self> {
        Self::new(0.0, 0.0, ContinuousPart::Beta(BetaFamily::new(alpha)?), 1.0, 1.0)
    }

    /// Lebesgue measure on `(0, 1)`: the Bolthausen–Sznitman coalescent.
    pub fn uniform() -> Self {
        Self::new(0.0, 0.0, ContinuousPart::Uniform, 1.0, 1.0).expect("uniform is valid")
    }

    pub fn atoms(atoms: Vec<(f64, f64)>) -> Result<Self> {
        Self::new(0.0, 0.0, ContinuousPart::Atoms(atoms), 1.0, 1.0)
    }

    pub fn density(density: Density) -> Result<Self> {
        Self::new(0.0, 0.0, ContinuousPart::Density(density), 1.0, 1.0)
    }

    /// `c δ_0 + (1 - c) · part` for a unit-mass `part`.
    pub fn mixture(c: f64, part: ContinuousPart) -> Result<Self> {
        if !(0.0..=1.0).contains(&c) {
            return Err(Error::InvalidMeasure(format!("mixture weight must lie in [0,1], got {c}")));
        }
        Self::new(c, 0.0, part, 1.0 - c, 1.0)
    }

    /// `m · Λ`.
    pub fn scaled(&self, m: f64) -> Result<Self> {
        if !(m > 0.0 && m.is_finite()) {
            return Err(Error::InvalidMeasure(format!("mass scale must be positive, got {m}")));
        }
        let mut out = self.clone();
        out.atom_zero *= m;
        out.atom_one *= m;
        out.weight *= m;
        out.total_mass *= m;
        Ok(out)
    }

    /// Rescales to unit total mass and returns the original mass.
    ///
    /// With `s` the returned scale, `u_Λ(q) = u_norm(q) / s` and
    /// `v_Λ(t) = v_norm(s t)`.
    pub fn normalize(&self) -> Result<(Self, f64)> {
        let scale = self.total_mass;
        if !(scale > 0.0) {
            return Err(Error::InvalidMeasure("zero-mass measure cannot be normalized".into()));
        }
        let mut out = self.scaled(1.0 / scale)?;
        out.total_mass = 1.0;
        Ok((out, scale))
    }

    /// `Λ_η(dx) = Λ(dx) 1_{[0, η]}(x)`.
    pub fn truncate(&self, eta: f64) -> Result<Self> {
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(Error::Domain(format!("truncation level must lie in (0, 1], got {eta}")));
        }
        Self::new(
            self.atom_zero,
            self.atom_one,
            self.continuous.clone(),
            self.weight,
            self.eta.min(eta),
        )
    }

    pub fn atom_zero(&self) -> f64 {
        self.atom_zero
    }

    pub fn atom_one(&self) -> f64 {
        self.atom_one
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn continuous_part(&self) -> &ContinuousPart {
        &self.continuous
    }

    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    /// True when the measure is a (scaled) atom at zero.
    pub fn is_kingman(&self) -> bool {
        self.atom_zero == self.total_mass
    }

    /// True when `ν` has mass away from zero (anything besides the atom at 0).
    pub fn has_nu_part(&self) -> bool {
        !self.is_kingman()
    }

    /// True when the part on `(0, 1)` has a density.
    pub fn has_density(&self) -> bool {
        matches!(
            self.continuous,
            ContinuousPart::Beta(_) | ContinuousPart::Uniform | ContinuousPart::Density(_)
        )
    }

    /// Rejects measures outside the scope of the coming-down analysis.
    pub fn require_no_atom_at_one(&self) -> Result<()> {
        if self.atom_one > 0.0 {
            Err(Error::UnsupportedMeasure(format!(
                "measure has an atom of mass {} at 1; the coming-down analysis assumes Λ({{1}}) = 0",
                self.atom_one
            )))
        } else {
            Ok(())
        }
    }

    /// Density of the continuous part at `x`, weight included; zero outside `(0, η]`.
    pub fn density_at(&self, x: f64) -> f64 {
        if !(x > 0.0 && x <= self.eta && x < 1.0) {
            return 0.0;
        }
        let raw = match &self.continuous {
            ContinuousPart::Beta(b) => b.density(x),
            ContinuousPart::Uniform => 1.0,
            ContinuousPart::Density(d) => d.eval(x),
            ContinuousPart::None | ContinuousPart::Atoms(_) => 0.0,
        };
        self.weight * raw
    }

    /// Interior atoms inside `(0, η]`, weight included.
    pub fn interior_atoms(&self) -> Vec<(f64, f64)> {
        match &self.continuous {
            ContinuousPart::Atoms(a) => a
                .iter()
                .filter(|(x, _)| *x <= self.eta)
                .map(|&(x, m)| (x, m * self.weight))
                .collect(),
            _ => Vec::new(),
        }
    }

    /// Mass of `Λ` on `(0, 1)`.
    pub fn continuous_mass(&self) -> Result<f64> {
        let raw = match &self.continuous {
            ContinuousPart::None => 0.0,
            ContinuousPart::Beta(b) => b.cdf(self.eta),
            ContinuousPart::Uniform => self.eta.min(1.0),
            ContinuousPart::Atoms(a) => compensated_sum(a.iter().filter(|(x, _)| *x <= self.eta).map(|(_, m)| *m)),
            ContinuousPart::Density(_) => {
                let w = self.weight;
                if w == 0.0 {
                    return Ok(0.0);
                }
                let est = self.integrate_density(|_| 1.0, Tolerance::new(1e-13, 1e-12))?;
                return Ok(est.value);
            }
        };
        Ok(self.weight * raw)
    }

    /// `Λ((0, x])`: mass of the part on `(0, 1)` below `x`.
    pub fn mass_below(&self, x: f64, tol: Tolerance) -> Result<f64> {
        let x = x.min(self.eta);
        if x <= 0.0 {
            return Ok(0.0);
        }
        let atoms = compensated_sum(self.interior_atoms().iter().filter(|(a, _)| *a <= x).map(|(_, m)| *m));
        let cont = match &self.continuous {
            ContinuousPart::Beta(b) => self.weight * b.cdf(x),
            ContinuousPart::Uniform => self.weight * x,
            ContinuousPart::Density(_) => self.integrate_density_between(|_| 1.0, 0.0, x, tol)?.value,
            _ => 0.0,
        };
        Ok(atoms + cont)
    }

    /// `∫_{(0,η]} h(x) ρ(x) dx` over the density part only.
    pub fn integrate_density<F: Fn(f64) -> f64>(&self, h: F, tol: Tolerance) -> Result<QuadEstimate> {
        self.integrate_density_between(h, 0.0, self.eta, tol)
    }

    /// `∫_lo^hi h(x) ρ(x) dx` with `(lo, hi)` clipped to `(0, η)`.
    pub fn integrate_density_between<F: Fn(f64) -> f64>(
        &self,
        h: F,
        lo: f64,
        hi: f64,
        tol: Tolerance,
    ) -> Result<QuadEstimate> {
        self.integrate_density_refined(h, lo, hi, true, true, tol)
    }

    /// As [`integrate_density_between`](Self::integrate_density_between),
    /// but dyadic endpoint refinement is applied only toward the flagged
    /// ends. Use it when `h ρ` is known to be smooth at the other end.
    pub fn integrate_density_refined<F: Fn(f64) -> f64>(
        &self,
        h: F,
        lo: f64,
        hi: f64,
        singular_lo: bool,
        singular_hi: bool,
        tol: Tolerance,
    ) -> Result<QuadEstimate> {
        let (lo, hi) = (lo.max(0.0), hi.min(self.eta));
        if !self.has_density() || self.weight == 0.0 || !(hi > lo) {
            return Ok(QuadEstimate::ZERO);
        }
        tol.validate()?;
        let bad = Cell::new(None::<f64>);
        let mut integrand = |x: f64| {
            let rho = self.density_at(x);
            if !(rho >= 0.0) || !rho.is_finite() {
                if bad.get().is_none() {
                    bad.set(Some(x));
                }
                return 0.0;
            }
            if rho == 0.0 {
                return 0.0;
            }
            h(x) * rho
        };
        let est = quad::refine_ends(&mut integrand, lo, hi, singular_lo, singular_hi, tol)?;
        if let Some(x) = bad.get() {
            return Err(Error::InvalidMeasure(format!(
                "density is negative or not finite at x = {x:e} ({})",
                self.density_at(x)
            )));
        }
        Ok(est)
    }

    /// `∫ f dΛ` including every atom.
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F, tol: Tolerance) -> Result<f64> {
        let mut parts = vec![self.atom_zero * nonzero(self.atom_zero, || f(0.0))];
        parts.push(self.atom_one * nonzero(self.atom_one, || f(1.0)));
        for (x, m) in self.interior_atoms() {
            parts.push(m * f(x));
        }
        parts.push(self.integrate_density(&f, tol)?.value);
        Ok(compensated_sum(parts))
    }

    /// `∫ g(x) x^{-2} Λ(dx)` where the atom at zero contributes
    /// `c · lim_{x→0} g(x)/x^2`; the limit must be supplied when `c > 0`.
    pub fn nu_integrate<F: Fn(f64) -> f64>(&self, g: F, limit_at_zero: Option<f64>, tol: Tolerance) -> Result<f64> {
        self.nu_integrate_scaled(|x| g(x) / (x * x), limit_at_zero, tol)
    }

    /// As [`nu_integrate`](Self::nu_integrate) but `h(x) = g(x)/x^2` is
    /// supplied directly so the caller can evaluate it without cancellation.
    pub fn nu_integrate_scaled<F: Fn(f64) -> f64>(
        &self,
        h: F,
        limit_at_zero: Option<f64>,
        tol: Tolerance,
    ) -> Result<f64> {
        let mut parts = Vec::with_capacity(4);
        if self.atom_zero > 0.0 {
            let limit = limit_at_zero.ok_or_else(|| {
                Error::Contract("measure has an atom at 0 but no x -> 0 limit of g(x)/x^2 was supplied".into())
            })?;
            parts.push(self.atom_zero * limit);
        }
        if self.atom_one > 0.0 {
            parts.push(self.atom_one * h(1.0));
        }
        for (x, m) in self.interior_atoms() {
            parts.push(m * h(x));
        }
        parts.push(self.integrate_density(&h, tol)?.value);
        Ok(compensated_sum(parts))
    }

    /// Content hash of the measure description (first 16 hex digits of SHA-256).
    pub fn measure_id(&self) -> String {
        let desc = format!(
            "atom_zero={:?};atom_one={:?};part={};weight={:?};eta={:?}",
            self.atom_zero,
            self.atom_one,
            self.continuous.describe(),
            self.weight,
            self.eta
        );
        let digest = Sha256::digest(desc.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Short human-readable description.
    pub fn describe(&self) -> String {
        format!(
            "{}·δ0 + {}·{} on (0,{}]{}",
            self.atom_zero,
            self.weight,
            self.continuous.describe(),
            self.eta,
            if self.atom_one > 0.0 {
                format!(" + {}·δ1", self.atom_one)
            } else {
                String::new()
            }
        )
    }
}

fn nonzero(mass: f64, f: impl FnOnce() -> f64) -> f64 {
    if mass > 0.0 {
        f()
    } else {
        0.0
    }
}
