//! Experiment configuration files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{LambdaSpec, MeasureFile};
use crate::simulate::Backend;

pub const CONFIG_SCHEMA: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    SpeedRatio,
    MomentRatio,
    TreeLengthRatio,
    KingmanExtremal,
    DriftCheck,
    TruncationRatio,
}

/// A measure given by file path (relative to the config file) or inline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MeasureRef {
    Path(PathBuf),
    Inline(MeasureFile),
}

impl MeasureRef {
    pub fn resolve(&self, base: &Path) -> Result<LambdaSpec> {
        match self {
            MeasureRef::Path(p) => MeasureFile::load(base.join(p))?.to_spec(),
            MeasureRef::Inline(m) => m.to_spec(),
        }
    }

    pub fn label(&self) -> String {
        match self {
            MeasureRef::Path(p) => p.display().to_string(),
            MeasureRef::Inline(m) => serde_json::to_string(m).unwrap_or_else(|_| "inline".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    pub experiment: ExperimentKind,
    pub measure: MeasureRef,
    /// Further measures, used by `kingman_extremal` only.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub suite: Vec<MeasureRef>,
    /// Initial block count; the top rung of any `n` ladder.
    pub n: u64,
    /// Lower rungs; defaults to the powers `10^3, 10^4, ...` below `n`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_ladder: Option<Vec<u64>>,
    /// Observation window `[.., s]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<f64>,
    /// Windows for `moment_ratio`; defaults to `0.2, 0.1, 0.05`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_ladder: Option<Vec<f64>>,
    #[serde(default = "default_replicas")]
    pub replicas: u64,
    /// Moment order for `moment_ratio`.
    #[serde(default = "default_d")]
    pub d: f64,
    /// Pass threshold; each experiment documents its default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_backend")]
    pub backend: Backend,
    /// Truncation level for `truncation_ratio`; default `1/4`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    /// Evaluation times for `truncation_ratio`; default `[1e-4]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_values: Option<Vec<f64>>,
}

fn default_replicas() -> u64 {
    1
}

fn default_d() -> f64 {
    1.0
}

fn default_backend() -> Backend {
    Backend::Auto
}

impl ExperimentConfig {
    /// A config with every optional field at its default.
    pub fn new(experiment: ExperimentKind, measure: MeasureRef, n: u64) -> Self {
        Self {
            schema: CONFIG_SCHEMA,
            experiment,
            measure,
            suite: Vec::new(),
            n,
            n_ladder: None,
            s: None,
            s_ladder: None,
            replicas: default_replicas(),
            d: default_d(),
            epsilon: None,
            master_seed: 0,
            backend: default_backend(),
            eta: None,
            t_values: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != CONFIG_SCHEMA {
            return Err(Error::Config(format!(
                "unsupported config schema {} (this build reads {CONFIG_SCHEMA})",
                self.schema
            )));
        }
        if self.replicas < 1 {
            return Err(Error::Config("replicas must be at least 1".into()));
        }
        if !(self.d >= 1.0 && self.d.is_finite()) {
            return Err(Error::Config(format!("moment order d must be at least 1, got {}", self.d)));
        }
        if self.n < 2 {
            return Err(Error::Config(format!("n must be at least 2, got {}", self.n)));
        }
        if let Some(s) = self.s {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Config(format!("s must be positive, got {s}")));
            }
        }
        if let Some(l) = &self.s_ladder {
            if l.is_empty() || l.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
                return Err(Error::Config("s_ladder must be a nonempty list of positive times".into()));
            }
        }
        if let Some(l) = &self.n_ladder {
            if l.iter().any(|&n| n < 2 || n > self.n) {
                return Err(Error::Config("n_ladder entries must lie in [2, n]".into()));
            }
        }
        if let Some(e) = self.epsilon {
            if !(e > 0.0 && e.is_finite()) {
                return Err(Error::Config(format!("epsilon must be positive, got {e}")));
            }
        }
        let needs_s = matches!(
            self.experiment,
            ExperimentKind::SpeedRatio | ExperimentKind::TreeLengthRatio | ExperimentKind::KingmanExtremal
        );
        if needs_s && self.s.is_none() {
            return Err(Error::Config(format!("{:?} needs an observation window s", self.experiment)));
        }
        Ok(())
    }

    pub fn require_s(&self) -> Result<f64> {
        self.s
            .ok_or_else(|| Error::Config(format!("{:?} needs an observation window s", self.experiment)))
    }

    /// `n_ladder` (sorted, with `n` on top) or the default powers of ten below `n`.
    pub fn ladder(&self, default_bottom: u64) -> Vec<u64> {
        let mut rungs = match &self.n_ladder {
            Some(l) => l.clone(),
            None => std::iter::successors(Some(default_bottom), |r| r.checked_mul(10))
                .take_while(|&r| r < self.n)
                .collect(),
        };
        rungs.push(self.n);
        rungs.sort_unstable();
        rungs.dedup();
        rungs
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_config() {
        let cfg = ExperimentConfig::from_json(
            r#"{"schema": 1, "experiment": "speed_ratio", "measure": "kingman.json", "n": 100000, "s": 0.1}"#,
        )
        .unwrap();
        assert_eq!(cfg.replicas, 1);
        assert_eq!(cfg.backend, Backend::Auto);
        assert_eq!(cfg.ladder(1000), vec![1000, 10_000, 100_000]);
        assert_eq!(cfg.measure, MeasureRef::Path("kingman.json".into()));
    }

    #[test]
    fn inline_measure_and_errors() {
        let cfg = ExperimentConfig::from_json(
            r#"{"schema": 1, "experiment": "drift_check", "measure": {"family": "dirac0"}, "n": 1000}"#,
        )
        .unwrap();
        assert!(matches!(cfg.measure, MeasureRef::Inline(_)));
        assert!(cfg.measure.resolve(Path::new(".")).unwrap().is_kingman());
        for bad in [
            r#"{"schema": 2, "experiment": "drift_check", "measure": "k.json", "n": 10}"#,
            r#"{"schema": 1, "experiment": "speed_ratio", "measure": "k.json", "n": 10}"#,
            r#"{"schema": 1, "experiment": "drift_check", "measure": "k.json", "n": 10, "colour": 1}"#,
            r#"{"schema": 1, "experiment": "moment_ratio", "measure": "k.json", "n": 10, "d": 0.5}"#,
        ] {
            assert!(matches!(ExperimentConfig::from_json(bad), Err(Error::Config(_))), "{bad}");
        }
    }

    #[test]
    fn small_n_ladder_is_just_n() {
        let cfg = ExperimentConfig::new(ExperimentKind::SpeedRatio, MeasureRef::Path("k".into()), 10);
        assert_eq!(cfg.ladder(1000), vec![10]);
    }
}
