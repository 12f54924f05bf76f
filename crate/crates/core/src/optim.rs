//! Derivative-free minimization with Powell's COBYLA, specialised to the
//! unconstrained case, plus the training objective for QAUM learners.
//!
//! The method keeps a simplex of `n + 1` evaluated points, fits the linear
//! interpolant through them and steps to the minimizer of that model inside a
//! trust region of radius `rho`. Poorly shaped simplices are repaired with
//! geometry steps, and `rho` shrinks from `initial` to `final` as progress
//! stalls. Without constraints the trust-region subproblem reduces to a
//! steepest-descent step of length `rho` on the linear model.

use num_complex::Complex64;

use crate::data::{LabeledDataset, SampleWeights};
use crate::error::{Error, Result};
use crate::qaum::{encoding_phases, QaumCircuit};

/// Probability clip applied before taking logarithms.
pub const PROBA_CLIP: f64 = 1e-9;

/// Stand-in objective value for non-finite evaluations inside the solver.
const NON_FINITE_SURROGATE: f64 = 1e100;

// Powell's simplex acceptability and step constants.
const ALPHA: f64 = 0.25;
const BETA: f64 = 2.1;
const GAMMA: f64 = 0.5;
const DELTA: f64 = 1.1;

/// Initial and final trust-region radii.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrustRegion {
    pub initial: f64,
    pub final_radius: f64,
}

impl Default for TrustRegion {
    fn default() -> Self {
        TrustRegion { initial: 1.0, final_radius: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationResult {
    pub best_params: Vec<f64>,
    pub best_value: f64,
    pub evaluations_used: usize,
    /// Every evaluation as `(1-based index, value)`; non-finite values are recorded as `+∞`.
    pub history: Vec<(usize, f64)>,
}

struct Evaluator<F> {
    objective: F,
    budget: usize,
    history: Vec<(usize, f64)>,
    best: Option<(Vec<f64>, f64)>,
}

impl<F: FnMut(&[f64]) -> f64> Evaluator<F> {
    fn exhausted(&self) -> bool {
        self.history.len() >= self.budget
    }

    /// Returns the value the solver should see.
    fn eval(&mut self, x: &[f64]) -> f64 {
        debug_assert!(!self.exhausted());
        let raw = (self.objective)(x);
        let recorded = if raw.is_finite() { raw } else { f64::INFINITY };
        self.history.push((self.history.len() + 1, recorded));
        if self.best.as_ref().is_none_or(|(_, b)| recorded < *b) {
            self.best = Some((x.to_vec(), recorded));
        }
        if raw.is_finite() {
            raw
        } else {
            NON_FINITE_SURROGATE
        }
    }
}

/// Simplex state: a base point plus `n` vertices stored as displacements.
struct Simplex {
    n: usize,
    /// The initial point. `base` is stored relative to it so that the
    /// solver's arithmetic does not depend on where the search starts.
    origin: Vec<f64>,
    base: Vec<f64>,
    f_base: f64,
    /// `disp[j]` is vertex `j` minus the base.
    disp: Vec<Vec<f64>>,
    f_vertex: Vec<f64>,
    /// Rows of the inverse of the displacement matrix: `inv[j] · disp[k] = δ_jk`.
    inv: Vec<Vec<f64>>,
    updates_since_refresh: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

impl Simplex {
    fn gradient(&self) -> Vec<f64> {
        let mut g = vec![0.0; self.n];
        for (row, f) in self.inv.iter().zip(&self.f_vertex) {
            let df = f - self.f_base;
            for (gi, ri) in g.iter_mut().zip(row) {
                *gi += df * ri;
            }
        }
        g
    }

    /// Moves the lowest vertex into the base position.
    fn promote_best(&mut self) {
        let Some((j, &fj)) = self
            .f_vertex
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
        else {
            return;
        };
        if fj >= self.f_base {
            return;
        }
        let shift = self.disp[j].clone();
        for (b, s) in self.base.iter_mut().zip(&shift) {
            *b += s;
        }
        for (k, d) in self.disp.iter_mut().enumerate() {
            if k == j {
                d.iter_mut().for_each(|v| *v = -*v);
            } else {
                for (v, s) in d.iter_mut().zip(&shift) {
                    *v -= s;
                }
            }
        }
        let mut new_row = vec![0.0; self.n];
        for row in &self.inv {
            for (acc, r) in new_row.iter_mut().zip(row) {
                *acc -= r;
            }
        }
        self.inv[j] = new_row;
        std::mem::swap(&mut self.f_base, &mut self.f_vertex[j]);
    }

    /// Puts a new vertex at displacement `d` in slot `j`.
    fn replace(&mut self, j: usize, d: Vec<f64>, f: f64) {
        let pivot = dot(&self.inv[j], &d);
        let row_j: Vec<f64> = self.inv[j].iter().map(|v| v / pivot).collect();
        for (k, row) in self.inv.iter_mut().enumerate() {
            if k != j {
                let t = dot(row, &d);
                for (v, rj) in row.iter_mut().zip(&row_j) {
                    *v -= t * rj;
                }
            }
        }
        self.inv[j] = row_j;
        self.disp[j] = d;
        self.f_vertex[j] = f;
        self.updates_since_refresh += 1;
        if self.updates_since_refresh >= 2 * self.n {
            self.refresh_inverse();
        }
    }

    fn refresh_inverse(&mut self) {
        self.updates_since_refresh = 0;
        let n = self.n;
        let m = nalgebra::DMatrix::from_fn(n, n, |i, j| self.disp[j][i]);
        if let Some(inv) = m.try_inverse() {
            for (j, row) in self.inv.iter_mut().enumerate() {
                for (i, v) in row.iter_mut().enumerate() {
                    *v = inv[(j, i)];
                }
            }
        }
    }

    fn point(&self, d: &[f64]) -> Vec<f64> {
        self.origin.iter().zip(&self.base).zip(d).map(|((o, b), s)| o + (b + s)).collect()
    }
}

/// Minimizes `objective` from `initial`, never spending more than `budget`
/// evaluations.
pub fn minimize<F>(
    objective: F,
    initial: &[f64],
    budget: usize,
    trust_region: TrustRegion,
) -> Result<OptimizationResult>
where
    F: FnMut(&[f64]) -> f64,
{
    let TrustRegion { initial: rho_begin, final_radius: rho_end } = trust_region;
    if !(rho_end > 0.0 && rho_begin > rho_end && rho_begin.is_finite()) {
        return Err(Error::invalid(format!(
            "trust region needs initial > final > 0, got ({rho_begin}, {rho_end})"
        )));
    }
    if budget == 0 {
        return Err(Error::invalid("evaluation budget must be at least 1"));
    }
    if initial.is_empty() {
        return Err(Error::invalid("initial point is empty"));
    }
    if let Some(bad) = initial.iter().find(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("initial point has non-finite entry {bad}")));
    }

    let n = initial.len();
    let mut ev = Evaluator { objective, budget, history: Vec::new(), best: None };
    run_cobyla(&mut ev, initial, n, rho_begin, rho_end);

    let (best_params, best_value) = ev.best.expect("at least one evaluation");
    Ok(OptimizationResult {
        best_params,
        best_value,
        evaluations_used: ev.history.len(),
        history: ev.history,
    })
}

fn run_cobyla<F: FnMut(&[f64]) -> f64>(
    ev: &mut Evaluator<F>,
    initial: &[f64],
    n: usize,
    rho_begin: f64,
    rho_end: f64,
) {
    let mut rho = rho_begin;
    let f0 = ev.eval(initial);

    let mut simplex = Simplex {
        n,
        origin: initial.to_vec(),
        base: vec![0.0; n],
        f_base: f0,
        disp: Vec::with_capacity(n),
        f_vertex: Vec::with_capacity(n),
        inv: Vec::with_capacity(n),
        updates_since_refresh: 0,
    };
    for j in 0..n {
        if ev.exhausted() {
            return;
        }
        let mut d = vec![0.0; n];
        d[j] = rho;
        let f = ev.eval(&simplex.point(&d));
        let mut inv_row = vec![0.0; n];
        inv_row[j] = 1.0 / rho;
        simplex.disp.push(d);
        simplex.f_vertex.push(f);
        simplex.inv.push(inv_row);
    }

    // True once the last evaluation came from a trust-region step.
    let mut after_trust_step = false;
    loop {
        if ev.exhausted() {
            return;
        }
        simplex.promote_best();

        let par_sig = ALPHA * rho;
        let par_eta = BETA * rho;
        let vsig: Vec<f64> = simplex.inv.iter().map(|r| 1.0 / norm(r)).collect();
        let veta: Vec<f64> = simplex.disp.iter().map(|d| norm(d)).collect();
        let acceptable = vsig.iter().zip(&veta).all(|(&s, &e)| s >= par_sig && e <= par_eta);
        let g = simplex.gradient();

        if !after_trust_step && !acceptable {
            // Geometry step: replace the worst-shaped vertex.
            let far = (0..n).filter(|&j| veta[j] > par_eta).max_by(|&a, &b| veta[a].total_cmp(&veta[b]));
            let jdrop = far.unwrap_or_else(|| {
                (0..n).min_by(|&a, &b| vsig[a].total_cmp(&vsig[b])).unwrap_or(0)
            });
            let scale = GAMMA * rho * vsig[jdrop];
            let mut d: Vec<f64> = simplex.inv[jdrop].iter().map(|v| scale * v).collect();
            if dot(&d, &g) > 0.0 {
                d.iter_mut().for_each(|v| *v = -*v);
            }
            let f = ev.eval(&simplex.point(&d));
            simplex.replace(jdrop, d, f);
            continue;
        }

        let gnorm = norm(&g);
        let mut sufficient = false;
        if gnorm > 0.0 && gnorm.is_finite() {
            let d: Vec<f64> = g.iter().map(|v| -rho * v / gnorm).collect();
            let predicted = rho * gnorm;
            let f_new = ev.eval(&simplex.point(&d));
            after_trust_step = true;
            let actual = simplex.f_base - f_new;

            // Pick the vertex to drop in favour of the trial point.
            let mut ratio = if actual <= 0.0 { 1.0 } else { 0.0 };
            let mut jdrop = None;
            let mut sigbar = vec![0.0; n];
            for j in 0..n {
                let t = dot(&simplex.inv[j], &d).abs();
                if t > ratio {
                    jdrop = Some(j);
                    ratio = t;
                }
                sigbar[j] = t * vsig[j];
            }
            let mut edge_max = DELTA * rho;
            let mut far = None;
            for j in 0..n {
                if sigbar[j] >= par_sig || sigbar[j] >= vsig[j] {
                    let t = if actual > 0.0 {
                        d.iter().zip(&simplex.disp[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
                    } else {
                        veta[j]
                    };
                    if t > edge_max {
                        far = Some(j);
                        edge_max = t;
                    }
                }
            }
            if far.is_some() {
                jdrop = far;
            }
            if let Some(j) = jdrop {
                simplex.replace(j, d, f_new);
                sufficient = actual > 0.0 && actual >= 0.1 * predicted;
            }
        }
        if sufficient {
            continue;
        }

        if !acceptable {
            after_trust_step = false;
            continue;
        }
        if rho <= rho_end {
            return;
        }
        rho *= 0.5;
        if rho <= 1.5 * rho_end {
            rho = rho_end;
        }
    }
}

/// Weighted binary cross-entropy of a QAUM circuit over a fixed dataset.
///
/// Encoding phases are computed once at construction, so each call costs one
/// circuit compilation plus one pass over the rows.
#[derive(Debug, Clone)]
pub struct WeightedBce {
    circuit: QaumCircuit,
    phases: Vec<Vec<Complex64>>,
    labels: Vec<u8>,
    weights: Vec<f64>,
}

pub fn weighted_bce_objective(
    circuit: &QaumCircuit,
    dataset: &LabeledDataset,
    weights: &SampleWeights,
) -> Result<WeightedBce> {
    if dataset.is_empty() {
        return Err(Error::invalid("objective needs a non-empty dataset"));
    }
    if dataset.num_features() != circuit.num_features() {
        return Err(Error::invalid(format!(
            "circuit takes {} features, dataset has {}",
            circuit.num_features(),
            dataset.num_features()
        )));
    }
    if weights.len() != dataset.len() {
        return Err(Error::invalid(format!("{} weights for {} rows", weights.len(), dataset.len())));
    }
    Ok(WeightedBce {
        circuit: *circuit,
        phases: dataset.rows().map(encoding_phases).collect(),
        labels: dataset.labels().to_vec(),
        weights: weights.as_slice().to_vec(),
    })
}

impl WeightedBce {
    pub fn num_params(&self) -> usize {
        self.circuit.param_count()
    }

    /// Loss at `params`; `NaN` if the length is wrong.
    pub fn loss(&self, params: &[f64]) -> f64 {
        if params.len() != self.circuit.param_count() {
            return f64::NAN;
        }
        let compiled = self.circuit.compile_unchecked(params);
        self.phases
            .iter()
            .zip(&self.labels)
            .zip(&self.weights)
            .map(|((ph, &y), &w)| w * bce_term(y, compiled.proba_with_phases(ph)))
            .sum()
    }
}

/// `−[y ln p + (1 − y) ln(1 − p)]` with `p` clipped to `[1e-9, 1 − 1e-9]`.
pub fn bce_term(label: u8, p: f64) -> f64 {
    let p = p.clamp(PROBA_CLIP, 1.0 - PROBA_CLIP);
    if label == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

pub fn weighted_bce(labels: &[u8], probas: &[f64], weights: &[f64]) -> f64 {
    labels
        .iter()
        .zip(probas)
        .zip(weights)
        .map(|((&y, &p), &w)| w * bce_term(y, p))
        .sum()
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;
    use crate::qaum::ParameterVector;
    use crate::seed::rng_from_seed;

    fn sphere(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum()
    }

    fn rosenbrock(x: &[f64]) -> f64 {
        100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2)
    }

    #[test]
    fn sphere_converges() {
        let r = minimize(sphere, &[1.0, 1.0], 200, TrustRegion::default()).unwrap();
        assert!(r.best_value < 1e-6, "{}", r.best_value);
        assert!(r.evaluations_used <= 200);
    }

    #[test]
    fn budget_of_one_returns_initial() {
        let r = minimize(sphere, &[0.3, -0.2], 1, TrustRegion::default()).unwrap();
        assert_eq!(r.evaluations_used, 1);
        assert_eq!(r.best_params, vec![0.3, -0.2]);
        assert!((r.best_value - 0.13).abs() < 1e-15);
    }

    fn reference_cobyla(f: fn(&[f64]) -> f64, x0: &[f64], budget: usize) -> f64 {
        let bounds = vec![(-10.0, 10.0); x0.len()];
        let run = cobyla::minimize(
            |x: &[f64], _: &mut ()| f(x),
            x0,
            &bounds,
            &[] as &[fn(&[f64], &mut ()) -> f64],
            (),
            budget,
            cobyla::RhoBeg::All(1.0),
            Some(cobyla::StopTols { xtol_abs: vec![1e-4; x0.len()], ..Default::default() }),
        );
        match run {
            Ok((_, _, v)) | Err((_, _, v)) => v,
        }
    }

    #[test]
    fn rosenbrock_tracks_reference_cobyla() {
        let mine = minimize(rosenbrock, &[-1.2, 1.0], 2000, TrustRegion::default()).unwrap();
        let reference = reference_cobyla(rosenbrock, &[-1.2, 1.0], 2000);
        assert!(mine.best_value < 24.2 / 100.0, "{}", mine.best_value);
        assert!(mine.best_value < 4.0 * reference, "{} vs {reference}", mine.best_value);
    }

    #[test]
    fn rosenbrock_below_1e_3_in_2000() {
        let mine = minimize(rosenbrock, &[-1.2, 1.0], 2000, TrustRegion::default()).unwrap();
        assert!(mine.best_value < 1e-3, "{}", mine.best_value);
    }

    #[test]
    fn quadratic_with_coupling() {
        let f = |x: &[f64]| {
            let a = x[0] - 2.0;
            let b = x[1] + 1.0;
            let c = x[2] - 0.5;
            3.0 * a * a + b * b + 2.0 * c * c + a * b
        };
        let r = minimize(f, &[0.0, 0.0, 0.0], 1000, TrustRegion::default()).unwrap();
        assert!(r.best_value < 1e-6, "{}", r.best_value);
    }

    #[test]
    fn non_finite_values_are_recorded_as_infinity() {
        let f = |x: &[f64]| if x[0] > 0.5 { f64::NAN } else { sphere(x) };
        let r = minimize(f, &[0.0, 0.3], 100, TrustRegion::default()).unwrap();
        assert!(r.history.iter().any(|&(_, v)| v == f64::INFINITY));
        assert!(r.best_value.is_finite());
    }

    #[test]
    fn invalid_trust_region_rejected() {
        for (a, b) in [(1e-4, 1.0), (1.0, 0.0), (1.0, 1.0), (f64::NAN, 1e-4)] {
            let tr = TrustRegion { initial: a, final_radius: b };
            assert!(minimize(sphere, &[1.0], 10, tr).is_err());
        }
        assert!(minimize(sphere, &[1.0], 0, TrustRegion::default()).is_err());
    }

    #[test]
    fn best_value_is_history_minimum() {
        let r = minimize(rosenbrock, &[0.0, 0.0], 300, TrustRegion::default()).unwrap();
        let min = r.history.iter().map(|h| h.1).fold(f64::INFINITY, f64::min);
        assert_eq!(min, r.best_value);
        assert_eq!(rosenbrock(&r.best_params), r.best_value);
    }

    #[test]
    fn budget_and_monotone_best_on_random_quadratics() {
        let mut rng = rng_from_seed(21);
        for _ in 0..40 {
            let n = rng.random_range(1..12);
            let centre: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let scale: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..10.0)).collect();
            let budget = rng.random_range(1..300);
            let f = |x: &[f64]| x.iter().zip(&centre).zip(&scale).map(|((v, c), s)| s * (v - c).powi(2)).sum();
            let r = minimize(f, &vec![0.0; n], budget, TrustRegion::default()).unwrap();
            assert!(r.evaluations_used <= budget);
            assert_eq!(r.history.len(), r.evaluations_used);
            let mut running = f64::INFINITY;
            let mut prev = f64::INFINITY;
            for &(_, v) in &r.history {
                running = running.min(v);
                assert!(running <= prev);
                prev = running;
            }
            assert_eq!(running, r.best_value);
        }
    }

    #[test]
    fn translation_invariance() {
        let shift = [0.75, -1.25, 0.5];
        let f = |x: &[f64]| (x[0] - 1.0).powi(2) + 2.0 * (x[1] + 0.5).powi(2) + (x[2] * x[0]).sin() + x[2].powi(2);
        let g = |x: &[f64]| {
            let y: Vec<f64> = x.iter().zip(&shift).map(|(a, c)| a - c).collect();
            f(&y)
        };
        let start = [0.2, 0.4, -0.3];
        let shifted: Vec<f64> = start.iter().zip(&shift).map(|(a, c)| a + c).collect();
        let a = minimize(f, &start, 400, TrustRegion::default()).unwrap();
        let b = minimize(g, &shifted, 400, TrustRegion::default()).unwrap();
        assert_eq!(a.evaluations_used, b.evaluations_used);
        assert!((a.best_value - b.best_value).abs() < 1e-8);
        for (ha, hb) in a.history.iter().zip(&b.history) {
            assert!((ha.1 - hb.1).abs() < 1e-8, "{ha:?} vs {hb:?}");
        }
    }

    #[test]
    fn bce_examples() {
        let v = weighted_bce(&[1, 0], &[0.8, 0.4], &[0.25, 0.75]);
        let hand = 0.25 * -(0.8f64.ln()) + 0.75 * -(0.6f64.ln());
        assert!((v - hand).abs() < 1e-15);
        assert!((v - 0.438_904_6).abs() < 1e-6);

        let uniform = weighted_bce(&[0, 1, 1, 0], &[0.5; 4], &[0.25; 4]);
        assert!((uniform - std::f64::consts::LN_2).abs() < 1e-15);

        let perfect = weighted_bce(&[1, 0, 1], &[1.0, 0.0, 1.0], &[0.2, 0.3, 0.5]);
        assert!(perfect <= -(1.0 - PROBA_CLIP).ln() + 1e-15);
    }

    #[test]
    fn objective_matches_direct_evaluation() {
        let circuit = QaumCircuit::new(2, 2).unwrap();
        let ds = LabeledDataset::new(
            vec![vec![0.1, 2.0], vec![1.5, 0.3], vec![3.0, 3.0]],
            vec![0, 1, 1],
        )
        .unwrap();
        let w = SampleWeights::new(vec![0.5, 0.25, 0.25]).unwrap();
        let obj = weighted_bce_objective(&circuit, &ds, &w).unwrap();
        let mut rng = rng_from_seed(4);
        let params: Vec<f64> = (0..circuit.param_count()).map(|_| rng.random_range(0.0..6.0)).collect();
        let pv = ParameterVector::new(params.clone());
        let probas: Vec<f64> = ds.rows().map(|r| circuit.predict_proba(&pv, r).unwrap()).collect();
        let direct = weighted_bce(ds.labels(), &probas, w.as_slice());
        assert!((obj.loss(&params) - direct).abs() < 1e-12);
        assert_eq!(obj.loss(&params).to_bits(), obj.loss(&params).to_bits());
    }
}
