use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stmle::design::{MeanModelSpec, Term};
use stmle::simlab::{EstimatorKind, ScenarioSpec};
use stmle::tmle::ScoreKind;

use crate::CliError;

/// Column transform applied at ingestion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnTransform {
    Identity,
    Asinh,
    Log1p,
    /// Subtract the mean over retained rows.
    Center,
}

fn all_estimators() -> Vec<EstimatorKind> {
    vec![EstimatorKind::Tmle, EstimatorKind::Ols, EstimatorKind::Aipw]
}

fn default_folds() -> usize {
    5
}

fn default_splits() -> usize {
    20
}

fn default_reruns() -> usize {
    20
}

fn default_seed() -> u64 {
    20240601
}

fn default_score() -> ScoreKind {
    ScoreKind::Kernel
}

fn default_bounds() -> (f64, f64) {
    (0.02, 0.98)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub scenarios: Vec<ScenarioSpec>,
    #[serde(default = "all_estimators")]
    pub estimators: Vec<EstimatorKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    /// CSV path; relative paths are resolved against the config file.
    pub input: PathBuf,
    pub outcome: String,
    pub treatment: String,
    pub covariates: Vec<String>,
    #[serde(default)]
    pub transforms: BTreeMap<String, ColumnTransform>,
    /// Mean-model terms over the covariate columns.
    pub terms: Vec<Term>,
    #[serde(default = "all_estimators")]
    pub estimators: Vec<EstimatorKind>,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_splits")]
    pub splits: usize,
    /// Independent reruns used for the split standard deviation.
    #[serde(default = "default_reruns")]
    pub reruns: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_score")]
    pub score: ScoreKind,
    #[serde(default = "default_bounds")]
    pub propensity_bounds: (f64, f64),
}

/// One document drives every subcommand; each reads its own section.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analyze: Option<AnalysisConfig>,
}

impl Config {
    /// Parses a JSON document. Errors carry the line, column and field path.
    pub fn parse(text: &str, origin: &str) -> Result<Config, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Config = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.inner();
            CliError::Config(format!(
                "{origin}:{}:{}: field `{path}`: {inner}",
                inner.line(),
                inner.column()
            ))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Config, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Config::parse(&text, &path.display().to_string())?;
        if let Some(a) = cfg.analyze.as_mut() {
            if a.input.is_relative() {
                if let Some(dir) = path.parent() {
                    a.input = dir.join(&a.input);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if let Some(s) = &self.simulate {
            s.validate()?;
        }
        if let Some(a) = &self.analyze {
            a.validate()?;
        }
        Ok(())
    }
}

impl SimulateConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.scenarios.is_empty() {
            return Err(CliError::Config("field `simulate.scenarios`: at least one scenario is required".into()));
        }
        if self.estimators.is_empty() {
            return Err(CliError::Config("field `simulate.estimators`: must not be empty".into()));
        }
        for (i, s) in self.scenarios.iter().enumerate() {
            s.validate()
                .map_err(|e| CliError::Config(format!("field `simulate.scenarios[{i}]`: {e}")))?;
        }
        let mut labels: Vec<String> = self.scenarios.iter().map(ScenarioSpec::label).collect();
        labels.sort();
        if let Some(w) = labels.windows(2).find(|w| w[0] == w[1]) {
            return Err(CliError::Config(format!(
                "field `simulate.scenarios`: duplicate scenario label `{}`; set `name` to disambiguate",
                w[0]
            )));
        }
        Ok(())
    }
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |field: &str, msg: String| Err(CliError::Config(format!("field `analyze.{field}`: {msg}")));
        if self.outcome == self.treatment {
            return bad("treatment", "outcome and treatment columns must differ".into());
        }
        for c in &self.covariates {
            if c == &self.outcome || c == &self.treatment {
                return bad("covariates", format!("`{c}` is already the outcome or treatment"));
            }
        }
        for col in self.transforms.keys() {
            if col == &self.treatment {
                return bad("transforms", "the treatment column cannot be transformed".into());
            }
            if col != &self.outcome && !self.covariates.contains(col) {
                return bad("transforms", format!("`{col}` is not a declared column"));
            }
        }
        if self.estimators.is_empty() {
            return bad("estimators", "must not be empty".into());
        }
        if self.folds < 2 {
            return bad("folds", "must be at least 2".into());
        }
        if self.splits < 2 {
            return bad("splits", "must be at least 2".into());
        }
        if self.reruns < 1 {
            return bad("reruns", "must be at least 1".into());
        }
        let (lo, hi) = self.propensity_bounds;
        if !(0.0 < lo && lo < hi && hi < 1.0) {
            return bad("propensity_bounds", format!("need 0 < lower < upper < 1, got ({lo}, {hi})"));
        }
        self.mean_model()?;
        Ok(())
    }

    pub fn mean_model(&self) -> Result<MeanModelSpec, CliError> {
        MeanModelSpec::new(self.covariates.clone(), self.terms.clone())
            .map_err(|e| CliError::Config(format!("field `analyze.terms`: {e}")))
    }

    pub fn transform_of(&self, col: &str) -> ColumnTransform {
        self.transforms.get(col).copied().unwrap_or(ColumnTransform::Identity)
    }
}
