//! Bagging and boosting ensembles of QAUM learners, combined by a
//! logistic-regression metalearner fitted on the learners' probabilities.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{bootstrap_sample, weighted_resample, LabeledDataset, Preprocessing, SampleWeights};
use crate::error::{Error, Result};
use crate::optim::{minimize, weighted_bce_objective, TrustRegion};
use crate::qaum::{encoding_phases, proba_to_label, ParameterVector, QaumCircuit};
use crate::seed::{derive_seed, rng_from_seed, Stream};

/// L2 penalty on all metalearner coefficients.
pub const METALEARNER_L2: f64 = 1e-4;
pub const METALEARNER_GRAD_TOL: f64 = 1e-6;
pub const METALEARNER_MAX_STEPS: usize = 10_000;

/// Boosting stops once the weighted error is this close to 0 or 1.
pub const BOOST_TERMINATION_TOL: f64 = 1e-12;

pub const DEFAULT_BAGGING_LEARNERS: usize = 7;
pub const DEFAULT_BAGGING_DEPTH: usize = 2;
pub const DEFAULT_BAGGING_BUDGET: usize = 1714;
pub const DEFAULT_BOOSTING_CAP: usize = 50;
pub const DEFAULT_BOOSTING_DEPTH: usize = 1;
pub const DEFAULT_BOOSTING_BUDGET: usize = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedLearner {
    pub circuit: QaumCircuit,
    pub params: ParameterVector,
    /// Seed of the parameter initialisation.
    pub init_seed: u64,
    /// Seed of the bootstrap or weighted resample this learner saw, if any.
    pub sample_seed: Option<u64>,
    pub budget: usize,
    pub evaluations: usize,
    pub final_loss: f64,
}

impl TrainedLearner {
    pub fn validate(&self) -> Result<()> {
        if self.params.len() != self.circuit.param_count() {
            return Err(Error::invalid(format!(
                "learner has {} parameters, circuit needs {}",
                self.params.len(),
                self.circuit.param_count()
            )));
        }
        Ok(())
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        self.circuit.predict_proba(&self.params, x)
    }

    pub fn predict(&self, x: &[f64]) -> Result<u8> {
        self.circuit.predict(&self.params, x)
    }

    /// Probabilities for every row of `dataset`.
    pub fn probabilities(&self, dataset: &LabeledDataset) -> Result<Vec<f64>> {
        if dataset.num_features() != self.circuit.num_features() {
            return Err(Error::invalid(format!(
                "learner takes {} features, dataset has {}",
                self.circuit.num_features(),
                dataset.num_features()
            )));
        }
        let compiled = self.circuit.compile(&self.params)?;
        Ok(dataset.rows().map(|r| compiled.proba_with_phases(&encoding_phases(r))).collect())
    }
}

/// Parameters drawn uniformly from `[0, 2π)`.
pub fn random_parameters(circuit: &QaumCircuit, seed: u64) -> Vec<f64> {
    let mut rng = rng_from_seed(seed);
    (0..circuit.param_count()).map(|_| rng.random_range(0.0..2.0 * PI)).collect()
}

/// Uniform `[0, 2π)` initialisation from `rng_seed`, then COBYLA on the
/// uniformly weighted cross-entropy.
pub fn train_learner(
    dataset: &LabeledDataset,
    depth: usize,
    budget: usize,
    rng_seed: u64,
) -> Result<TrainedLearner> {
    if budget == 0 {
        return Err(Error::invalid("learner budget must be at least 1"));
    }
    let circuit = QaumCircuit::new(dataset.num_features(), depth)?;
    let objective = weighted_bce_objective(&circuit, dataset, &SampleWeights::uniform(dataset.len()))?;
    let init = random_parameters(&circuit, rng_seed);
    let result = minimize(|p| objective.loss(p), &init, budget, TrustRegion::default())?;
    Ok(TrainedLearner {
        circuit,
        params: ParameterVector::new(result.best_params),
        init_seed: rng_seed,
        sample_seed: None,
        budget,
        evaluations: result.evaluations_used,
        final_loss: result.best_value,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnsembleKind {
    Bagging,
    Boosting,
}

/// Weighted error and learner weight of one boosting round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoostRound {
    pub error: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub kind: EnsembleKind,
    pub learners: Vec<TrainedLearner>,
    /// One coefficient per learner, bias last.
    pub metalearner: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rounds: Vec<BoostRound>,
    #[serde(default)]
    pub preprocessing: Option<Preprocessing>,
}

impl EnsembleModel {
    pub fn validate(&self) -> Result<()> {
        if self.learners.is_empty() {
            return Err(Error::invalid("ensemble has no learners"));
        }
        if self.metalearner.len() != self.learners.len() + 1 {
            return Err(Error::invalid(format!(
                "{} metalearner coefficients for {} learners",
                self.metalearner.len(),
                self.learners.len()
            )));
        }
        let n = self.learners[0].circuit.num_features();
        for l in &self.learners {
            l.validate()?;
            if l.circuit.num_features() != n {
                return Err(Error::invalid("learners disagree on feature count"));
            }
        }
        Ok(())
    }

    pub fn num_features(&self) -> usize {
        self.learners[0].circuit.num_features()
    }

    /// Metalearner output for one vector of learner probabilities.
    pub fn combine(&self, learner_probas: &[f64]) -> f64 {
        logistic_proba(&self.metalearner, learner_probas)
    }

    /// Per-row learner probabilities, `m × N`.
    pub fn learner_outputs(&self, dataset: &LabeledDataset) -> Result<Vec<Vec<f64>>> {
        learner_output_matrix(&self.learners, dataset)
    }

    pub fn probabilities(&self, dataset: &LabeledDataset) -> Result<Vec<f64>> {
        Ok(self.learner_outputs(dataset)?.iter().map(|z| self.combine(z)).collect())
    }
}

/// `(probability, label)` for a preprocessed input.
pub fn ensemble_predict(model: &EnsembleModel, x: &[f64]) -> Result<(f64, u8)> {
    if x.len() != model.num_features() {
        return Err(Error::invalid(format!(
            "ensemble takes {} features, got {}",
            model.num_features(),
            x.len()
        )));
    }
    let probas = model
        .learners
        .iter()
        .map(|l| l.predict_proba(x))
        .collect::<Result<Vec<_>>>()?;
    let p = model.combine(&probas);
    Ok((p, proba_to_label(p)))
}

fn learner_output_matrix(learners: &[TrainedLearner], dataset: &LabeledDataset) -> Result<Vec<Vec<f64>>> {
    let columns = learners.iter().map(|l| l.probabilities(dataset)).collect::<Result<Vec<_>>>()?;
    Ok((0..dataset.len()).map(|i| columns.iter().map(|c| c[i]).collect()).collect())
}

/// Each learner sees its own bootstrap sample; seeds are derived up front so
/// learners can be trained concurrently without changing the result.
pub fn train_bagging(
    dataset: &LabeledDataset,
    n_learners: usize,
    depth: usize,
    budget_per_learner: usize,
    rng_seed: u64,
) -> Result<EnsembleModel> {
    if n_learners == 0 {
        return Err(Error::invalid("bagging needs at least one learner"));
    }
    let learners = (0..n_learners as u64)
        .into_par_iter()
        .map(|i| {
            let sample_seed = derive_seed(rng_seed, Stream::Bootstrap, i);
            let init_seed = derive_seed(rng_seed, Stream::Init, i);
            let sample = bootstrap_sample(dataset, sample_seed);
            let mut learner = train_learner(&sample, depth, budget_per_learner, init_seed)?;
            learner.sample_seed = Some(sample_seed);
            Ok(learner)
        })
        .collect::<Result<Vec<_>>>()?;
    let outputs = learner_output_matrix(&learners, dataset)?;
    let metalearner = fit_metalearner(&outputs, dataset.labels())?;
    Ok(EnsembleModel {
        kind: EnsembleKind::Bagging,
        learners,
        metalearner,
        rounds: Vec::new(),
        preprocessing: dataset.preprocessing().cloned(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoostState {
    pub weights: SampleWeights,
    /// Rounds completed so far.
    pub round: usize,
    pub rounds: Vec<BoostRound>,
}

impl BoostState {
    pub fn new(m: usize) -> Self {
        BoostState { weights: SampleWeights::uniform(m), round: 0, rounds: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BoostStep {
    Continue(BoostState),
    /// The learner was entirely correct or entirely incorrect under the current weights.
    Terminated { error: f64 },
}

/// AdaBoost reweighting: `ε = Σ w_i` over misclassified rows,
/// `α = ½ ln((1 − ε)/ε)`, misclassified weights scaled by `e^α`, correct
/// ones by `e^−α`, then renormalized.
pub fn boost_update_weights(state: &BoostState, correct: &[bool]) -> Result<BoostStep> {
    let w = state.weights.as_slice();
    if correct.len() != w.len() {
        return Err(Error::invalid(format!("{} flags for {} weights", correct.len(), w.len())));
    }
    let error: f64 = w.iter().zip(correct).filter(|(_, &c)| !c).map(|(wi, _)| wi).sum::<f64>().clamp(0.0, 1.0);
    if error <= BOOST_TERMINATION_TOL || error >= 1.0 - BOOST_TERMINATION_TOL {
        return Ok(BoostStep::Terminated { error });
    }
    let alpha = 0.5 * ((1.0 - error) / error).ln();
    let (up, down) = (alpha.exp(), (-alpha).exp());
    let updated = w.iter().zip(correct).map(|(wi, &c)| wi * if c { down } else { up }).collect();
    let mut rounds = state.rounds.clone();
    rounds.push(BoostRound { error, alpha });
    Ok(BoostStep::Continue(BoostState {
        weights: SampleWeights::normalized(updated)?,
        round: state.round + 1,
        rounds,
    }))
}

/// Sequential boosting. The first learner trains on the original data; each
/// later one on a resample drawn with the current weights. Errors are always
/// measured on the original data.
pub fn train_boosting(
    dataset: &LabeledDataset,
    max_learners: usize,
    depth: usize,
    budget_per_learner: usize,
    rng_seed: u64,
) -> Result<EnsembleModel> {
    if max_learners == 0 {
        return Err(Error::invalid("boosting needs a cap of at least one learner"));
    }
    let mut state = BoostState::new(dataset.len());
    let mut learners = Vec::new();
    let mut rounds = Vec::new();
    for t in 0..max_learners as u64 {
        let init_seed = derive_seed(rng_seed, Stream::Init, t);
        let (sample, sample_seed) = if t == 0 {
            (dataset.clone(), None)
        } else {
            let s = derive_seed(rng_seed, Stream::Resample, t);
            (weighted_resample(dataset, &state.weights, s)?, Some(s))
        };
        let mut learner = train_learner(&sample, depth, budget_per_learner, init_seed)?;
        learner.sample_seed = sample_seed;
        let correct: Vec<bool> = learner
            .probabilities(dataset)?
            .into_iter()
            .zip(dataset.labels())
            .map(|(p, &y)| proba_to_label(p) == y)
            .collect();
        learners.push(learner);
        match boost_update_weights(&state, &correct)? {
            BoostStep::Continue(next) => {
                rounds.push(*next.rounds.last().expect("round recorded"));
                state = next;
            }
            BoostStep::Terminated { error } => {
                rounds.push(BoostRound { error, alpha: f64::NAN });
                break;
            }
        }
    }
    let outputs = learner_output_matrix(&learners, dataset)?;
    let metalearner = fit_metalearner(&outputs, dataset.labels())?;
    Ok(EnsembleModel {
        kind: EnsembleKind::Boosting,
        learners,
        metalearner,
        rounds: rounds.into_iter().filter(|r| r.alpha.is_finite()).collect(),
        preprocessing: dataset.preprocessing().cloned(),
    })
}

fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^s)` without overflow.
fn softplus(s: f64) -> f64 {
    if s > 0.0 {
        s + (-s).exp().ln_1p()
    } else {
        s.exp().ln_1p()
    }
}

fn linear_score(coef: &[f64], z: &[f64]) -> f64 {
    let (bias, w) = coef.split_last().expect("bias present");
    bias + w.iter().zip(z).map(|(a, b)| a * b).sum::<f64>()
}

/// `σ(bias + Σ coef_j z_j)` with the bias stored last.
pub fn logistic_proba(coef: &[f64], z: &[f64]) -> f64 {
    sigmoid(linear_score(coef, z))
}

/// Penalised mean log-loss minimised by [`fit_metalearner`]:
/// `(1/m) Σ log-loss + (λ/2) ‖coef‖²`, bias included in the penalty.
pub fn metalearner_objective(coef: &[f64], outputs: &[Vec<f64>], labels: &[u8]) -> f64 {
    let m = labels.len() as f64;
    let data: f64 = outputs
        .iter()
        .zip(labels)
        .map(|(z, &y)| {
            let s = linear_score(coef, z);
            if y == 1 {
                softplus(-s)
            } else {
                softplus(s)
            }
        })
        .sum::<f64>()
        / m;
    data + 0.5 * METALEARNER_L2 * coef.iter().map(|c| c * c).sum::<f64>()
}

fn metalearner_gradient(coef: &[f64], outputs: &[Vec<f64>], labels: &[u8]) -> Vec<f64> {
    let m = labels.len() as f64;
    let mut g: Vec<f64> = coef.iter().map(|c| METALEARNER_L2 * c).collect();
    let last = coef.len() - 1;
    for (z, &y) in outputs.iter().zip(labels) {
        let r = (sigmoid(linear_score(coef, z)) - f64::from(y)) / m;
        for (gj, zj) in g.iter_mut().zip(z) {
            *gj += r * zj;
        }
        g[last] += r;
    }
    g
}

/// Logistic regression on learner outputs by damped Newton iteration.
///
/// Stops when the gradient norm falls below 1e-6 or after 10⁴ steps.
/// Single-class labels get a bias-only model predicting that class.
pub fn fit_metalearner(outputs: &[Vec<f64>], labels: &[u8]) -> Result<Vec<f64>> {
    let m = labels.len();
    if m == 0 || outputs.len() != m {
        return Err(Error::invalid(format!("{} output rows for {m} labels", outputs.len())));
    }
    let k = outputs[0].len();
    if outputs.iter().any(|r| r.len() != k) {
        return Err(Error::invalid("ragged learner output matrix"));
    }
    if let Some(bad) = outputs.iter().flatten().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::invalid(format!("learner output {bad} outside [0, 1]")));
    }
    let ones = labels.iter().filter(|&&y| y == 1).count();
    if ones == 0 || ones == m {
        let mut coef = vec![0.0; k + 1];
        let p: f64 = 1.0 - 1e-9;
        coef[k] = if ones == m { (p / (1.0 - p)).ln() } else { -(p / (1.0 - p)).ln() };
        return Ok(coef);
    }

    let dim = k + 1;
    let design = DMatrix::from_fn(m, dim, |i, j| if j < k { outputs[i][j] } else { 1.0 });
    let mut coef = vec![0.0; dim];
    let mut value = metalearner_objective(&coef, outputs, labels);
    for _ in 0..METALEARNER_MAX_STEPS {
        let grad = metalearner_gradient(&coef, outputs, labels);
        if grad.iter().map(|g| g * g).sum::<f64>().sqrt() < METALEARNER_GRAD_TOL {
            break;
        }
        let weights: Vec<f64> = (0..m)
            .map(|i| {
                let p = sigmoid(linear_score(&coef, &outputs[i]));
                p * (1.0 - p) / m as f64
            })
            .collect();
        let mut hessian = DMatrix::from_diagonal_element(dim, dim, METALEARNER_L2);
        for (i, w) in weights.iter().enumerate() {
            let row = design.row(i);
            hessian += *w * row.transpose() * row;
        }
        let g = DVector::from_vec(grad);
        let step = match hessian.cholesky() {
            Some(ch) => ch.solve(&g),
            None => g.clone(),
        };

        // Backtracking on the penalised objective.
        let slope: f64 = step.dot(&g);
        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-12 {
            let trial: Vec<f64> = coef.iter().zip(step.iter()).map(|(c, s)| c - t * s).collect();
            let v = metalearner_objective(&trial, outputs, labels);
            if v <= value - 1e-4 * t * slope {
                coef = trial;
                value = v;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok(coef)
}
