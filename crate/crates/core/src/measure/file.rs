//! JSON measure files.
//!
//! ```json
//! {"atom_zero": 0.5, "family": "beta", "alpha": 1.5, "eta": 0.25, "mass_scale": 2.0}
//! ```
//!
//! For `beta` and `uniform` the family part has weight `1 - atom_zero`
//! unless `weight` is given, so `atom_zero = c` describes the mixture
//! `c δ0 + (1 - c) F`. For `atoms` and `density_expr` the weight defaults
//! to 1 and masses/density are taken as written. `dirac0` is `δ0` with mass
//! `atom_zero` (default 1). The whole measure is finally multiplied by
//! `mass_scale`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{parse_density, BetaFamily, ContinuousPart, Density, LambdaSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Beta,
    Uniform,
    Dirac0,
    Atoms,
    DensityExpr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub atom_zero: Option<f64>,
    pub family: Family,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub atoms: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expr: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mass_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub atom_one: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
}

impl MeasureFile {
    pub fn family(family: Family) -> Self {
        Self {
            atom_zero: None,
            family,
            alpha: None,
            atoms: None,
            expr: None,
            eta: None,
            mass_scale: None,
            atom_one: None,
            weight: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidMeasure(format!("malformed measure file: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidMeasure(format!("cannot read measure file {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_spec(&self) -> Result<LambdaSpec> {
        let c = self.atom_zero.unwrap_or(match self.family {
            Family::Dirac0 => 1.0,
            _ => 0.0,
        });
        let atom_one = self.atom_one.unwrap_or(0.0);
        let (part, default_weight) = match self.family {
            Family::Beta => {
                let alpha = self
                    .alpha
                    .ok_or_else(|| Error::InvalidMeasure("family \"beta\" requires \"alpha\"".into()))?;
                (ContinuousPart::Beta(BetaFamily::new(alpha)?), 1.0 - c)
            }
            Family::Uniform => (ContinuousPart::Uniform, 1.0 - c),
            Family::Dirac0 => (ContinuousPart::None, 0.0),
            Family::Atoms => {
                let atoms = self
                    .atoms
                    .as_ref()
                    .ok_or_else(|| Error::InvalidMeasure("family \"atoms\" requires \"atoms\"".into()))?;
                (ContinuousPart::Atoms(atoms.iter().map(|a| (a[0], a[1])).collect()), 1.0)
            }
            Family::DensityExpr => {
                let src = self
                    .expr
                    .as_ref()
                    .ok_or_else(|| Error::InvalidMeasure("family \"density_expr\" requires \"expr\"".into()))?;
                let parsed = parse_density(src)?;
                let label = parsed.source().to_string();
                (ContinuousPart::Density(Density::new(label, move |x| parsed.eval(x))), 1.0)
            }
        };
        let weight = self.weight.unwrap_or(default_weight);
        if weight < 0.0 {
            return Err(Error::InvalidMeasure(format!(
                "family weight {weight} is negative (atom_zero above 1?)"
            )));
        }
        let spec = LambdaSpec::new(c, atom_one, part, weight, self.eta.unwrap_or(1.0))?;
        match self.mass_scale {
            Some(m) => spec.scaled(m),
            None => Ok(spec),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_all_families() {
        let k = MeasureFile::from_json(r#"{"family": "dirac0"}"#).unwrap().to_spec().unwrap();
        assert!(k.is_kingman());
        assert_eq!(k.total_mass(), 1.0);

        let m = MeasureFile::from_json(r#"{"family": "uniform", "atom_zero": 0.5}"#)
            .unwrap()
            .to_spec()
            .unwrap();
        assert_eq!(m.atom_zero(), 0.5);
        assert!((m.total_mass() - 1.0).abs() < 1e-15);

        let b = MeasureFile::from_json(r#"{"family": "beta", "alpha": 1.5, "eta": 0.25, "mass_scale": 2}"#)
            .unwrap()
            .to_spec()
            .unwrap();
        assert_eq!(b.eta(), 0.25);
        let unit = LambdaSpec::beta(1.5).unwrap().truncate(0.25).unwrap();
        assert!((b.total_mass() - 2.0 * unit.total_mass()).abs() < 1e-14);

        let a = MeasureFile::from_json(r#"{"family": "atoms", "atoms": [[0.1, 0.5], [0.3, 0.25]]}"#)
            .unwrap()
            .to_spec()
            .unwrap();
        assert_eq!(a.total_mass(), 0.75);

        let d = MeasureFile::from_json(r#"{"family": "density_expr", "expr": "2 * x"}"#)
            .unwrap()
            .to_spec()
            .unwrap();
        assert!((d.total_mass() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn rejects_malformed() {
        assert!(matches!(MeasureFile::from_json(r#"{"family": "beta"}"#).unwrap().to_spec(), Err(Error::InvalidMeasure(_))));
        assert!(matches!(MeasureFile::from_json(r#"{"family": "cauchy"}"#), Err(Error::InvalidMeasure(_))));
        assert!(matches!(MeasureFile::from_json(r#"{"family": "uniform", "bogus": 1}"#), Err(Error::InvalidMeasure(_))));
        assert!(matches!(
            MeasureFile::from_json(r#"{"family": "density_expr", "expr": "x +"}"#).unwrap().to_spec(),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn round_trips_through_json() {
        let f = MeasureFile::from_json(r#"{"family": "beta", "alpha": 1.2, "atom_zero": 0.3}"#).unwrap();
        let again = MeasureFile::from_json(&serde_json::to_string(&f).unwrap()).unwrap();
        assert_eq!(f, again);
    }
}
