//! One train/predict/save contract over every regressor family.
//!
//! A [`TrainedModel`] carries the encoder fitted on its training rows, so it
//! predicts straight from [`FeatureRow`]s and round-trips through JSON.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Direction;
use crate::features::{self, EncodeDiagnostics, EncodedMatrix, Encoder, EncodingScheme, FeatureError, FeatureRow};
use crate::forest::{self, ForestError, ForestModel, ForestParams, GbtModel, GbtParams, ImportanceEntry};
use crate::linear::{self, LassoParams, LinearError, LinearModel};
use crate::mlp::{self, MlpError, MlpModel, MlpParams};
use crate::scalar::Scalar;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Linear(#[from] LinearError),
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error(transparent)]
    Mlp(#[from] MlpError),
    #[error("{0} models have no split-gain importance")]
    NoImportance(ModelKind),
    #[error("unsupported model format version {0}")]
    UnsupportedVersion(u32),
    #[error("malformed model file: {0}")]
    Malformed(String),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Ols,
    Lasso,
    Rf,
    Gbt,
    Mlp,
}

impl ModelKind {
    /// Report order: linear models, then ensembles, then the network.
    pub const ALL: [ModelKind; 5] = [ModelKind::Ols, ModelKind::Lasso, ModelKind::Rf, ModelKind::Gbt, ModelKind::Mlp];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Ols => "ols",
            ModelKind::Lasso => "lasso",
            ModelKind::Rf => "rf",
            ModelKind::Gbt => "gbt",
            ModelKind::Mlp => "mlp",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Ols => "Linear Regression",
            ModelKind::Lasso => "Lasso",
            ModelKind::Rf => "Random Forest",
            ModelKind::Gbt => "XGBoost",
            ModelKind::Mlp => "MLP",
        }
    }

    /// Trees take target-ordered ordinals; the rest take standardized one-hot.
    pub fn default_scheme(self) -> EncodingScheme {
        match self {
            ModelKind::Rf | ModelKind::Gbt => EncodingScheme::TargetOrderedOrdinal,
            _ => EncodingScheme::OneHot,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown model {s:?}"))
    }
}

/// Hyperparameters for every family; only the chosen family's are used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ModelConfig {
    pub lasso: LassoParams,
    pub forest: ForestParams,
    pub gbt: GbtParams,
    pub mlp: MlpParams,
    /// Replaces the family's default encoding when set.
    pub scheme: Option<EncodingScheme>,
}

impl ModelConfig {
    /// Sets the seed of every seeded learner.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.forest.seed = seed;
        self.gbt.seed = seed;
        self.mlp.seed = seed;
        self
    }

    pub fn scheme_for(&self, kind: ModelKind) -> EncodingScheme {
        self.scheme.unwrap_or(kind.default_scheme())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", tag = "family", content = "model", rename_all = "lowercase")]
pub enum Predictor<T> {
    Linear(LinearModel<T>),
    Forest(ForestModel<T>),
    Gbt(GbtModel<T>),
    Mlp(MlpModel<T>),
}

impl<T: Scalar> Predictor<T> {
    pub fn predict(&self, m: &EncodedMatrix<T>) -> Result<Vec<T>> {
        Ok(match self {
            Predictor::Linear(model) => linear::predict_linear(model, m)?,
            Predictor::Forest(model) => forest::predict_forest(model, m)?,
            Predictor::Gbt(model) => forest::predict_gbt(model, m)?,
            Predictor::Mlp(model) => mlp::predict_mlp(model, m)?,
        })
    }
}

/// Fits one family on an already encoded matrix.
pub fn fit_predictor<T: Scalar>(kind: ModelKind, m: &EncodedMatrix<T>, cfg: &ModelConfig) -> Result<Predictor<T>> {
    Ok(match kind {
        ModelKind::Ols => Predictor::Linear(linear::fit_ols(m)?),
        ModelKind::Lasso => Predictor::Linear(linear::fit_lasso(m, &cfg.lasso)?),
        ModelKind::Rf => Predictor::Forest(forest::fit_forest(m, &cfg.forest)?),
        ModelKind::Gbt => Predictor::Gbt(forest::fit_gbt(m, &cfg.gbt)?),
        ModelKind::Mlp => Predictor::Mlp(mlp::train_mlp(m, &cfg.mlp)?),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TrainedModel<T> {
    pub format_version: u32,
    pub kind: ModelKind,
    /// Direction the training rows were restricted to, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Direction>,
    pub encoder: Encoder,
    pub predictor: Predictor<T>,
}

/// Fits the encoder and the model on `rows`.
pub fn train<T: Scalar>(kind: ModelKind, rows: &[FeatureRow], cfg: &ModelConfig) -> Result<TrainedModel<T>> {
    let encoder = features::fit_encoder(rows, cfg.scheme_for(kind))?;
    let (m, _) = encoder.encode_matrix::<T>(rows);
    let predictor = fit_predictor(kind, &m, cfg)?;
    Ok(TrainedModel {
        format_version: MODEL_FORMAT_VERSION,
        kind,
        direction: None,
        encoder,
        predictor,
    })
}

impl<T: Scalar> TrainedModel<T> {
    pub fn encode(&self, rows: &[FeatureRow]) -> (EncodedMatrix<T>, EncodeDiagnostics) {
        self.encoder.encode_matrix(rows)
    }

    pub fn predict_rows(&self, rows: &[FeatureRow]) -> Result<Vec<T>> {
        let (m, _) = self.encode(rows);
        self.predictor.predict(&m)
    }

    /// Normalized split-gain importance per original feature.
    pub fn importance(&self) -> Result<Vec<ImportanceEntry>> {
        let (_, groups) = self.encoder.layout();
        let trees = match &self.predictor {
            Predictor::Forest(f) => &f.trees,
            Predictor::Gbt(g) => &g.trees,
            _ => return Err(ModelError::NoImportance(self.kind)),
        };
        Ok(forest::gain_importance(trees, &groups)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| ModelError::Malformed(e.to_string()))?;
        let version = value
            .get("format_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| ModelError::Malformed("missing format_version".into()))?;
        if version != u64::from(MODEL_FORMAT_VERSION) {
            return Err(ModelError::UnsupportedVersion(version as u32));
        }
        serde_json::from_value(value).map_err(|e| ModelError::Malformed(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, SynthSpec};
    use crate::tokenizer::BpeVocab;

    fn rows() -> Vec<FeatureRow> {
        let (records, meta) = generate_synthetic(&SynthSpec {
            n_languages: 6,
            rows_per_language: 20,
            noise_sd: 2.0,
            seed: 5,
        })
        .unwrap();
        features::build_rows(&records, &meta, &BpeVocab::toy()).unwrap()
    }

    fn quick() -> ModelConfig {
        let mut cfg = ModelConfig::default();
        cfg.forest.n_trees = 5;
        cfg.gbt.n_rounds = 10;
        cfg.mlp.epochs = 3;
        cfg.mlp.hidden_layers = vec![4];
        cfg
    }

    #[test]
    fn every_family_round_trips() {
        let rows = rows();
        for kind in ModelKind::ALL {
            let model = train::<f64>(kind, &rows, &quick()).unwrap();
            let back = TrainedModel::<f64>::from_json(&model.to_json()).unwrap();
            assert_eq!(back, model, "{kind}");
            assert_eq!(back.predict_rows(&rows).unwrap(), model.predict_rows(&rows).unwrap());
        }
    }

    #[test]
    fn importance_only_for_trees() {
        let rows = rows();
        let gbt = train::<f64>(ModelKind::Gbt, &rows, &quick()).unwrap();
        let imp = gbt.importance().unwrap();
        assert_eq!(imp.len(), 9);
        assert!((imp.iter().map(|e| e.weight).sum::<f64>() - 1.0).abs() < 1e-9);
        let ols = train::<f64>(ModelKind::Ols, &rows, &quick()).unwrap();
        assert_eq!(ols.importance(), Err(ModelError::NoImportance(ModelKind::Ols)));
    }

    #[test]
    fn version_is_checked() {
        let model = train::<f64>(ModelKind::Ols, &rows(), &quick()).unwrap();
        let text = model.to_json().replacen("\"format_version\": 1", "\"format_version\": 9", 1);
        assert_eq!(TrainedModel::<f64>::from_json(&text), Err(ModelError::UnsupportedVersion(9)));
    }

    #[test]
    fn kind_names_parse() {
        for kind in ModelKind::ALL {
            assert_eq!(kind.name().parse::<ModelKind>().unwrap(), kind);
        }
        assert!("svm".parse::<ModelKind>().is_err());
    }
}
