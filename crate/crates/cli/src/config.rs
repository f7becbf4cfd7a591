use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use poresurr::fomlite::CdrParams;
use poresurr::modelselect::FeatureKind;
use poresurr::pipeline::{ExperimentConfig, Layers, StudyDesign};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub geometry_dir: PathBuf,
    pub features: PathBuf,
    pub pca_dir: PathBuf,
    pub dataset_dir: PathBuf,
    pub models_dir: PathBuf,
    pub reports_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            geometry_dir: "geoms".into(),
            features: "features.csv".into(),
            pca_dir: "pca".into(),
            dataset_dir: "data".into(),
            models_dir: "models".into(),
            reports_dir: "reports".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub feature_modes: Vec<FeatureKind>,
    pub layers: Vec<Layers>,
    pub design: StudyDesign,
    pub experiment: ExperimentConfig,
    pub cdr: CdrParams,
    pub u_in: f64,
    pub sweep_nf: Vec<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            paths: Paths::default(),
            feature_modes: vec![FeatureKind::Mf, FeatureKind::Pca],
            layers: vec![Layers::One, Layers::Two],
            design: StudyDesign::default(),
            experiment: ExperimentConfig::default(),
            cdr: CdrParams::default(),
            u_in: 1.0,
            sweep_nf: vec![1, 2, 4, 6, 8, 12],
        }
    }
}

impl PipelineConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let e = &self.experiment;
        if e.pca_components == 0 {
            return Err(CliError::Config("n_f must be at least 1".into()));
        }
        if e.split_seeds.is_empty() {
            return Err(CliError::Config("at least one split seed is required".into()));
        }
        if e.n_greedy == 0 {
            return Err(CliError::Config("n_greedy must be at least 1".into()));
        }
        if self.sweep_nf.contains(&0) {
            return Err(CliError::Config("sweep n_f values must be at least 1".into()));
        }
        self.cdr
            .validate()
            .map_err(|err| CliError::Config(err.to_string()))?;
        if !(self.u_in > 0.0 && self.u_in.is_finite()) {
            return Err(CliError::Config("u_in must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_config_fills_defaults() {
        let cfg: PipelineConfig =
            serde_json::from_str(r#"{"experiment":{"train_count":10},"cdr":{"n_t":20}}"#).unwrap();
        assert_eq!(cfg.experiment.train_count, 10);
        assert_eq!(cfg.experiment.split_seeds, vec![0, 1, 2]);
        assert_eq!(cfg.cdr.n_t, 20);
        assert_eq!(cfg.cdr.pe, 5.0);
        cfg.validate().unwrap();
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let mut cfg = PipelineConfig::default();
        cfg.experiment.pca_components = 0;
        assert_eq!(cfg.validate().unwrap_err().exit_code(), 2);
    }
}
