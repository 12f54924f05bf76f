//! Classifier configurations and the serialized form of trained models.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{LabeledDataset, Preprocessing};
use crate::ensemble::{
    ensemble_predict, train_bagging, train_boosting, train_learner, EnsembleModel, TrainedLearner,
    DEFAULT_BAGGING_BUDGET, DEFAULT_BAGGING_DEPTH, DEFAULT_BAGGING_LEARNERS, DEFAULT_BOOSTING_BUDGET,
    DEFAULT_BOOSTING_CAP, DEFAULT_BOOSTING_DEPTH,
};
use crate::error::{Error, Result};
use crate::qaum::{proba_to_label, QaumCircuit};
use crate::seed::{derive_seed, Stream};

/// Current version of every JSON document this crate writes.
pub const SCHEMA_VERSION: u32 = 1;

/// What to train: a lone QAUM circuit or one of the two ensembles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelSpec {
    Single { depth: usize, budget: usize },
    Bagging { learners: usize, depth: usize, budget: usize },
    Boosting { max_learners: usize, depth: usize, budget: usize },
}

impl ModelSpec {
    pub fn single(depth: usize, budget: usize) -> Self {
        ModelSpec::Single { depth, budget }
    }

    pub fn bagging_default() -> Self {
        ModelSpec::Bagging {
            learners: DEFAULT_BAGGING_LEARNERS,
            depth: DEFAULT_BAGGING_DEPTH,
            budget: DEFAULT_BAGGING_BUDGET,
        }
    }

    pub fn boosting_default() -> Self {
        ModelSpec::Boosting {
            max_learners: DEFAULT_BOOSTING_CAP,
            depth: DEFAULT_BOOSTING_DEPTH,
            budget: DEFAULT_BOOSTING_BUDGET,
        }
    }

    /// Defaults for a kind name: `single`, `bagging` or `boosting`.
    pub fn default_for(kind: &str) -> Result<Self> {
        match kind {
            "single" => Ok(ModelSpec::single(2, 100)),
            "bagging" => Ok(ModelSpec::bagging_default()),
            "boosting" => Ok(ModelSpec::boosting_default()),
            other => Err(Error::invalid(format!(
                "unknown model kind {other:?}; expected single, bagging or boosting"
            ))),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ModelSpec::Single { .. } => "single",
            ModelSpec::Bagging { .. } => "bagging",
            ModelSpec::Boosting { .. } => "boosting",
        }
    }

    pub fn depth(&self) -> usize {
        match *self {
            ModelSpec::Single { depth, .. } | ModelSpec::Bagging { depth, .. } | ModelSpec::Boosting { depth, .. } => {
                depth
            }
        }
    }

    pub fn budget(&self) -> usize {
        match *self {
            ModelSpec::Single { budget, .. }
            | ModelSpec::Bagging { budget, .. }
            | ModelSpec::Boosting { budget, .. } => budget,
        }
    }

    /// Learner count for bagging, cap for boosting, 1 for a single circuit.
    pub fn learners(&self) -> usize {
        match *self {
            ModelSpec::Single { .. } => 1,
            ModelSpec::Bagging { learners, .. } => learners,
            ModelSpec::Boosting { max_learners, .. } => max_learners,
        }
    }

    pub fn with_depth(mut self, value: usize) -> Self {
        match &mut self {
            ModelSpec::Single { depth, .. } | ModelSpec::Bagging { depth, .. } | ModelSpec::Boosting { depth, .. } => {
                *depth = value
            }
        }
        self
    }

    pub fn with_budget(mut self, value: usize) -> Self {
        match &mut self {
            ModelSpec::Single { budget, .. }
            | ModelSpec::Bagging { budget, .. }
            | ModelSpec::Boosting { budget, .. } => *budget = value,
        }
        self
    }

    /// Sets the learner count or cap; an error for a single circuit unless `value` is 1.
    pub fn with_learners(mut self, value: usize) -> Result<Self> {
        match &mut self {
            ModelSpec::Single { .. } if value != 1 => {
                return Err(Error::invalid("a single circuit has exactly one learner"));
            }
            ModelSpec::Single { .. } => {}
            ModelSpec::Bagging { learners, .. } => *learners = value,
            ModelSpec::Boosting { max_learners, .. } => *max_learners = value,
        }
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [("depth", self.depth()), ("budget", self.budget()), ("learners", self.learners())];
        for (name, v) in fields {
            if v == 0 {
                return Err(Error::invalid(format!("{} {name} must be positive", self.kind())));
            }
        }
        Ok(())
    }

    /// Trains on an already preprocessed dataset.
    pub fn train(&self, dataset: &LabeledDataset, seed: u64) -> Result<TrainedModel> {
        self.validate()?;
        let preprocessing = dataset.preprocessing().cloned();
        Ok(match *self {
            ModelSpec::Single { depth, budget } => TrainedModel::Single {
                learner: train_learner(dataset, depth, budget, derive_seed(seed, Stream::Init, 0))?,
                preprocessing,
            },
            ModelSpec::Bagging { learners, depth, budget } => {
                TrainedModel::Ensemble(train_bagging(dataset, learners, depth, budget, seed)?)
            }
            ModelSpec::Boosting { max_learners, depth, budget } => {
                TrainedModel::Ensemble(train_boosting(dataset, max_learners, depth, budget, seed)?)
            }
        })
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            ModelSpec::Single { depth, budget } => write!(f, "single:depth={depth},budget={budget}"),
            ModelSpec::Bagging { learners, depth, budget } => {
                write!(f, "bagging:learners={learners},depth={depth},budget={budget}")
            }
            ModelSpec::Boosting { max_learners, depth, budget } => {
                write!(f, "boosting:learners={max_learners},depth={depth},budget={budget}")
            }
        }
    }
}

/// `kind[:key=value,...]` with keys `depth`, `budget` and `learners`;
/// missing keys take the kind's defaults.
impl FromStr for ModelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
        let mut spec = ModelSpec::default_for(kind.trim())?;
        for pair in rest.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = pair
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("expected key=value, got {pair:?}")))?;
            let value: usize = value
                .trim()
                .parse()
                .map_err(|_| Error::invalid(format!("{key} must be a positive integer, got {value:?}")))?;
            spec = match key.trim() {
                "depth" => spec.with_depth(value),
                "budget" => spec.with_budget(value),
                "learners" => spec.with_learners(value)?,
                other => return Err(Error::invalid(format!("unknown model option {other:?}"))),
            };
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum TrainedModel {
    Single {
        learner: TrainedLearner,
        preprocessing: Option<Preprocessing>,
    },
    Ensemble(EnsembleModel),
}

impl TrainedModel {
    pub fn preprocessing(&self) -> Option<&Preprocessing> {
        match self {
            TrainedModel::Single { preprocessing, .. } => preprocessing.as_ref(),
            TrainedModel::Ensemble(e) => e.preprocessing.as_ref(),
        }
    }

    pub fn learner_count(&self) -> usize {
        match self {
            TrainedModel::Single { .. } => 1,
            TrainedModel::Ensemble(e) => e.learners.len(),
        }
    }

    /// Mean final training loss over learners.
    pub fn mean_final_loss(&self) -> f64 {
        match self {
            TrainedModel::Single { learner, .. } => learner.final_loss,
            TrainedModel::Ensemble(e) => {
                e.learners.iter().map(|l| l.final_loss).sum::<f64>() / e.learners.len() as f64
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let learners: Vec<&TrainedLearner> = match self {
            TrainedModel::Single { learner, .. } => vec![learner],
            TrainedModel::Ensemble(e) => {
                e.validate()?;
                e.learners.iter().collect()
            }
        };
        for l in learners {
            QaumCircuit::new(l.circuit.num_features(), l.circuit.depth())?;
            l.validate()?;
            if let Some(p) = self.preprocessing() {
                if p.output_features() != l.circuit.num_features() {
                    return Err(Error::invalid("preprocessing output does not match circuit width"));
                }
            }
        }
        Ok(())
    }

    /// Probability for an already preprocessed input.
    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        match self {
            TrainedModel::Single { learner, .. } => learner.predict_proba(x),
            TrainedModel::Ensemble(e) => Ok(ensemble_predict(e, x)?.0),
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<u8> {
        self.predict_proba(x).map(proba_to_label)
    }

    /// Probabilities for every row of a preprocessed dataset.
    pub fn probabilities(&self, dataset: &LabeledDataset) -> Result<Vec<f64>> {
        match self {
            TrainedModel::Single { learner, .. } => learner.probabilities(dataset),
            TrainedModel::Ensemble(e) => e.probabilities(dataset),
        }
    }

    pub fn predictions(&self, dataset: &LabeledDataset) -> Result<Vec<u8>> {
        Ok(self.probabilities(dataset)?.into_iter().map(proba_to_label).collect())
    }

    /// Applies the stored preprocessing to a raw row, then predicts.
    pub fn predict_raw(&self, raw: &[f64]) -> Result<(f64, u8)> {
        let x = match self.preprocessing() {
            Some(p) => p.apply_row(raw)?,
            None => raw.to_vec(),
        };
        let p = self.predict_proba(&x)?;
        Ok((p, proba_to_label(p)))
    }
}

/// The model file: a trained model plus what produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub schema: u32,
    pub spec: ModelSpec,
    pub seed: u64,
    pub model: TrainedModel,
}

impl ModelDocument {
    pub fn new(spec: ModelSpec, seed: u64, model: TrainedModel) -> Self {
        ModelDocument { schema: SCHEMA_VERSION, spec, seed, model }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(text)?;
        if doc.schema != SCHEMA_VERSION {
            return Err(Error::invalid(format!("unsupported model schema {}", doc.schema)));
        }
        doc.model.validate()?;
        Ok(doc)
    }
}
