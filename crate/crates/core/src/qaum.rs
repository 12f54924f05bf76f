//! QAUM circuits: Z-rotation feature encodings interleaved with ZXZ
//! trainable blocks on a single qubit.
//!
//! Layout for `n` features and depth `d`:
//!
//! ```text
//! B0 · [ Rz(x1) B · Rz(x2) B · … · Rz(xn) B ] × d
//! ```
//!
//! giving `d·n` encoding gates and `d·n + 1` blocks. Block `b` reads its
//! angles from `params[3b..3b+3]` as `(z1, x, z2)` and applies
//! `Rz(z1)`, then `Rx(x)`, then `Rz(z2)`.
//!
//! Each encoding gate is `Rz(x_j)` with `x_j` already scaled into `[0, π]`,
//! so one repetition adds one unit of integer frequency in `x_j`. The
//! readout is the Pauli-Z expectation; swapping in another observable would
//! only touch [`CompiledCircuit::expectation_with_phases`].

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{rotation_matrix_unchecked, Axis, Matrix2, QubitState, RotationGate};

/// Value given to the features that are not being swept by the spectrum probe.
pub const HELD_FEATURE_VALUE: f64 = FRAC_PI_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaumCircuit {
    num_features: usize,
    depth: usize,
}

pub fn build_circuit(num_features: usize, depth: usize) -> Result<QaumCircuit> {
    QaumCircuit::new(num_features, depth)
}

impl QaumCircuit {
    pub fn new(num_features: usize, depth: usize) -> Result<Self> {
        if num_features == 0 || depth == 0 {
            return Err(Error::invalid(format!(
                "circuit needs at least one feature and one repetition, got n={num_features}, d={depth}"
            )));
        }
        Ok(QaumCircuit { num_features, depth })
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn encoding_count(&self) -> usize {
        self.depth * self.num_features
    }

    pub fn block_count(&self) -> usize {
        self.encoding_count() + 1
    }

    pub fn param_count(&self) -> usize {
        3 * self.block_count()
    }

    fn check_params(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        if let Some(bad) = params.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("parameter {bad} is not finite")));
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.num_features {
            return Err(Error::invalid(format!(
                "expected {} features, got {}",
                self.num_features,
                x.len()
            )));
        }
        if let Some(bad) = x.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("feature value {bad} is not finite")));
        }
        Ok(())
    }

    /// The full gate sequence in application order.
    pub fn gates(&self, params: &ParameterVector, x: &[f64]) -> Result<Vec<RotationGate>> {
        self.check_params(params.as_slice())?;
        self.check_input(x)?;
        let p = params.as_slice();
        let block = |b: usize| {
            [
                RotationGate::rz(p[3 * b]),
                RotationGate::rx(p[3 * b + 1]),
                RotationGate::rz(p[3 * b + 2]),
            ]
        };
        let mut gates = Vec::with_capacity(3 * self.block_count() + self.encoding_count());
        gates.extend(block(0));
        for rep in 0..self.depth {
            for (j, &xj) in x.iter().enumerate() {
                gates.push(RotationGate::rz(xj));
                gates.extend(block(1 + rep * self.num_features + j));
            }
        }
        Ok(gates)
    }

    pub fn compile(&self, params: &ParameterVector) -> Result<CompiledCircuit> {
        self.check_params(params.as_slice())?;
        Ok(self.compile_unchecked(params.as_slice()))
    }

    pub(crate) fn compile_unchecked(&self, params: &[f64]) -> CompiledCircuit {
        let blocks = params
            .chunks_exact(3)
            .map(|t| block_unitary(t[0], t[1], t[2]))
            .collect();
        CompiledCircuit { num_features: self.num_features, depth: self.depth, blocks }
    }

    /// Z-expectation of the final state.
    pub fn evaluate(&self, params: &ParameterVector, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        Ok(self.compile(params)?.expectation(x))
    }

    pub fn predict_proba(&self, params: &ParameterVector, x: &[f64]) -> Result<f64> {
        self.evaluate(params, x).map(expectation_to_proba)
    }

    pub fn predict(&self, params: &ParameterVector, x: &[f64]) -> Result<u8> {
        self.predict_proba(params, x).map(proba_to_label)
    }

    pub fn fourier_spectrum(
        &self,
        params: &ParameterVector,
        feature_index: usize,
        grid_size: usize,
    ) -> Result<FrequencySpectrum> {
        let base = vec![HELD_FEATURE_VALUE; self.num_features];
        self.fourier_spectrum_at(params, feature_index, grid_size, &base)
    }

    /// Discrete Fourier coefficients of the expectation as a function of one
    /// feature, sampled on `grid_size` points over `[0, 2π)` with the other
    /// features fixed at `base`.
    pub fn fourier_spectrum_at(
        &self,
        params: &ParameterVector,
        feature_index: usize,
        grid_size: usize,
        base: &[f64],
    ) -> Result<FrequencySpectrum> {
        if feature_index >= self.num_features {
            return Err(Error::invalid(format!(
                "feature index {feature_index} out of range for {} features",
                self.num_features
            )));
        }
        let min_grid = min_spectrum_grid(self.depth);
        if grid_size < min_grid {
            return Err(Error::invalid(format!(
                "grid size {grid_size} aliases depth {}; need at least {min_grid}",
                self.depth
            )));
        }
        self.check_input(base)?;
        let compiled = self.compile(params)?;

        let mut x = base.to_vec();
        let mut samples: Vec<Complex64> = (0..grid_size)
            .map(|i| {
                x[feature_index] = 2.0 * PI * i as f64 / grid_size as f64;
                Complex64::new(compiled.expectation(&x), 0.0)
            })
            .collect();
        FftPlanner::new().plan_fft_forward(grid_size).process(&mut samples);

        let scale = 1.0 / grid_size as f64;
        let entries = samples
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let k = if i <= grid_size / 2 { i as i64 } else { i as i64 - grid_size as i64 };
                (k, c.norm() * scale)
            })
            .collect();
        Ok(FrequencySpectrum { entries })
    }
}

/// Smallest grid the spectrum probe accepts for a given depth.
pub fn min_spectrum_grid(depth: usize) -> usize {
    4 * depth + 1
}

/// `p = (1 − ⟨Z⟩) / 2`
pub fn expectation_to_proba(expectation: f64) -> f64 {
    (0.5 * (1.0 - expectation)).clamp(0.0, 1.0)
}

/// Threshold at 0.5; ties go to class 1.
pub fn proba_to_label(p: f64) -> u8 {
    u8::from(p >= 0.5)
}

fn block_unitary(z1: f64, x: f64, z2: f64) -> Matrix2 {
    rotation_matrix_unchecked(Axis::Z, z2)
        * rotation_matrix_unchecked(Axis::X, x)
        * rotation_matrix_unchecked(Axis::Z, z1)
}

/// Trainable angles, laid out block by block as `(z1, x, z2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParameterVector(Vec<f64>);

impl ParameterVector {
    pub fn new(values: Vec<f64>) -> Self {
        ParameterVector(values)
    }

    pub fn zeros(circuit: &QaumCircuit) -> Self {
        ParameterVector(vec![0.0; circuit.param_count()])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl From<Vec<f64>> for ParameterVector {
    fn from(v: Vec<f64>) -> Self {
        ParameterVector(v)
    }
}

/// Per-feature encoding phases `e^{-i x_j / 2}` for one input.
pub fn encoding_phases(x: &[f64]) -> Vec<Complex64> {
    x.iter().map(|&v| Complex64::from_polar(1.0, -0.5 * v)).collect()
}

/// A circuit with its block unitaries multiplied out for fast repeated evaluation.
#[derive(Debug, Clone)]
pub struct CompiledCircuit {
    num_features: usize,
    depth: usize,
    blocks: Vec<Matrix2>,
}

impl CompiledCircuit {
    pub fn expectation(&self, x: &[f64]) -> f64 {
        self.expectation_with_phases(&encoding_phases(x))
    }

    /// `phases[j] = e^{-i x_j / 2}` as produced by [`encoding_phases`].
    pub fn expectation_with_phases(&self, phases: &[Complex64]) -> f64 {
        debug_assert_eq!(phases.len(), self.num_features);
        let mut state = self.blocks[0].apply(&QubitState::ZERO);
        let mut b = 1;
        for _ in 0..self.depth {
            for phase in phases {
                state.amp0 *= phase;
                state.amp1 *= phase.conj();
                state = self.blocks[b].apply(&state);
                b += 1;
            }
        }
        crate::sim::expectation_z(&state)
    }

    pub fn proba_with_phases(&self, phases: &[Complex64]) -> f64 {
        expectation_to_proba(self.expectation_with_phases(phases))
    }
}

/// Magnitudes `|c_k|` of the discrete Fourier coefficients, keyed by integer frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencySpectrum {
    pub entries: BTreeMap<i64, f64>,
}

impl FrequencySpectrum {
    pub fn magnitude(&self, k: i64) -> f64 {
        self.entries.get(&k).copied().unwrap_or(0.0)
    }

    pub fn total_mass(&self) -> f64 {
        self.entries.values().sum()
    }

    pub fn out_of_band_mass(&self, max_frequency: i64) -> f64 {
        self.entries
            .iter()
            .filter(|(k, _)| k.abs() > max_frequency)
            .map(|(_, m)| m)
            .sum()
    }

    /// Out-of-band mass relative to the total; zero for an all-zero spectrum.
    pub fn out_of_band_fraction(&self, max_frequency: i64) -> f64 {
        let total = self.total_mass();
        if total == 0.0 {
            0.0
        } else {
            self.out_of_band_mass(max_frequency) / total
        }
    }
}
