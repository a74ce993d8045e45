//! `ψ`, `u(q) = ∫_q^∞ dq'/ψ(q')` and the speed function `v = u^{-1}`.

mod psi;
mod table;

pub use psi::PsiEvaluator;
pub use table::{SpeedTable, TableProvenance, TailModel, MIN_TAIL_EXPONENT};

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::measure::LambdaSpec;
use crate::quad::{self, Tolerance};

/// Speed function of a measure: closed form for `c δ0`, tabulated otherwise.
#[derive(Debug, Clone)]
pub enum SpeedModel {
    /// `ψ(q) = c q²/2`, `u(q) = 2/(c q)`, `v(t) = 2/(c t)`.
    Kingman { c: f64 },
    Table(Arc<SpeedTable>),
}

/// Serializable description of where `v` came from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpeedProvenance {
    pub kind: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub atom_c: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub table: Option<TableProvenance>,
}

impl SpeedModel {
    /// Closed form when the measure is a pure atom at 0, default table otherwise.
    pub fn for_spec(spec: &LambdaSpec) -> Result<Self> {
        if spec.is_kingman() {
            Ok(SpeedModel::Kingman { c: spec.atom_zero() })
        } else {
            Self::tabulated(spec)
        }
    }

    /// Always builds a table, even for `c δ0`.
    pub fn tabulated(spec: &LambdaSpec) -> Result<Self> {
        let table = SpeedTable::build_default(&PsiEvaluator::new(spec))?;
        Ok(SpeedModel::Table(Arc::new(table)))
    }

    pub fn u(&self, q: f64) -> Result<f64> {
        match self {
            SpeedModel::Kingman { c } => positive(q).map(|q| 2.0 / (c * q)),
            SpeedModel::Table(t) => t.u(q, false),
        }
    }

    pub fn v(&self, t: f64) -> Result<f64> {
        match self {
            SpeedModel::Kingman { c } => positive(t).map(|t| 2.0 / (c * t)),
            SpeedModel::Table(table) => table.v(t, false),
        }
    }

    /// Smallest `t` at which `v` is available without extrapolation.
    pub fn t_floor(&self) -> f64 {
        match self {
            SpeedModel::Kingman { .. } => 0.0,
            SpeedModel::Table(t) => t.t_floor(),
        }
    }

    /// `∫_a^b v(t) dt`.
    pub fn integral_v(&self, a: f64, b: f64) -> Result<f64> {
        if !(a > 0.0 && b >= a) {
            return Err(Error::Domain(format!("integral of v needs 0 < a <= b, got [{a}, {b}]")));
        }
        if a == b {
            return Ok(0.0);
        }
        match self {
            SpeedModel::Kingman { c } => Ok(2.0 / c * (b / a).ln()),
            SpeedModel::Table(table) => {
                let mut failure = None;
                let mut f = |s: f64| {
                    let t = s.exp();
                    match table.v(t.clamp(a, b), false) {
                        Ok(v) => v * t,
                        Err(e) => {
                            failure.get_or_insert(e);
                            0.0
                        }
                    }
                };
                let est = quad::adaptive(&mut f, a.ln(), b.ln(), Tolerance::relative(1e-10), 2000)?;
                match failure {
                    Some(e) => Err(e),
                    None => Ok(est.value),
                }
            }
        }
    }

    pub fn provenance(&self) -> SpeedProvenance {
        match self {
            SpeedModel::Kingman { c } => SpeedProvenance {
                kind: "analytic_kingman",
                atom_c: Some(*c),
                table: None,
            },
            SpeedModel::Table(t) => SpeedProvenance {
                kind: "table",
                atom_c: None,
                table: Some(t.provenance().clone()),
            },
        }
    }
}

fn positive(x: f64) -> Result<f64> {
    if x > 0.0 && x.is_finite() {
        Ok(x)
    } else {
        Err(Error::Range {
            t: x,
            lo: 0.0,
            hi: f64::INFINITY,
        })
    }
}

/// `v(t) / v_η(t)` on `t_grid`, where `v_η` is the speed of `Λ` restricted to `[0, η]`.
pub fn truncation_speed_ratio(spec: &LambdaSpec, eta: f64, t_grid: &[f64]) -> Result<Vec<f64>> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::Domain(format!("truncation level must lie in (0, 1), got {eta}")));
    }
    let full = SpeedModel::for_spec(spec)?;
    let cut = SpeedModel::for_spec(&spec.truncate(eta)?)?;
    t_grid.iter().map(|&t| Ok(full.v(t)? / cut.v(t)?)).collect()
}
