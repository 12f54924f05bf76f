//! Exact single-qubit statevector simulation.
//!
//! Rotations use the half-angle convention `R_P(θ) = exp(-i θ P / 2)`.

use std::ops::Mul;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Norm deviation tolerated on gate inputs before they are rejected.
pub const NORM_TOLERANCE: f64 = 1e-6;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QubitState {
    pub amp0: Complex64,
    pub amp1: Complex64,
}

impl QubitState {
    /// `|0⟩`
    pub const ZERO: QubitState = QubitState { amp0: ONE, amp1: ZERO };
    /// `|1⟩`
    pub const ONE: QubitState = QubitState { amp0: ZERO, amp1: ONE };

    /// Builds a state from raw amplitudes. No normalization is enforced here;
    /// gate application rejects states that drift outside [`NORM_TOLERANCE`].
    pub fn from_amplitudes(amp0: Complex64, amp1: Complex64) -> Self {
        QubitState { amp0, amp1 }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amp0.norm_sqr() + self.amp1.norm_sqr()
    }

    pub fn is_normalized(&self) -> bool {
        (self.norm_sqr() - 1.0).abs() <= NORM_TOLERANCE
    }

    /// `|⟨self|other⟩|²`
    pub fn fidelity(&self, other: &QubitState) -> f64 {
        (self.amp0.conj() * other.amp0 + self.amp1.conj() * other.amp1).norm_sqr()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    X,
    Y,
    Z,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationGate {
    pub axis: Axis,
    pub angle: f64,
}

impl RotationGate {
    pub fn new(axis: Axis, angle: f64) -> Self {
        RotationGate { axis, angle }
    }

    pub fn rx(angle: f64) -> Self {
        Self::new(Axis::X, angle)
    }

    pub fn ry(angle: f64) -> Self {
        Self::new(Axis::Y, angle)
    }

    pub fn rz(angle: f64) -> Self {
        Self::new(Axis::Z, angle)
    }
}

/// A 2×2 complex matrix in row-major order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Matrix2(pub [[Complex64; 2]; 2]);

impl Matrix2 {
    pub const IDENTITY: Matrix2 = Matrix2([[ONE, ZERO], [ZERO, ONE]]);

    pub fn adjoint(&self) -> Matrix2 {
        let m = &self.0;
        Matrix2([[m[0][0].conj(), m[1][0].conj()], [m[0][1].conj(), m[1][1].conj()]])
    }

    pub fn apply(&self, state: &QubitState) -> QubitState {
        let m = &self.0;
        QubitState {
            amp0: m[0][0] * state.amp0 + m[0][1] * state.amp1,
            amp1: m[1][0] * state.amp0 + m[1][1] * state.amp1,
        }
    }

    /// Largest entrywise modulus of `self - other`.
    pub fn max_abs_diff(&self, other: &Matrix2) -> f64 {
        let mut worst = 0.0_f64;
        for r in 0..2 {
            for c in 0..2 {
                worst = worst.max((self.0[r][c] - other.0[r][c]).norm());
            }
        }
        worst
    }
}

impl Mul for Matrix2 {
    type Output = Matrix2;

    fn mul(self, rhs: Matrix2) -> Matrix2 {
        let (a, b) = (&self.0, &rhs.0);
        let mut out = [[ZERO; 2]; 2];
        for (r, row) in out.iter_mut().enumerate() {
            for (c, cell) in row.iter_mut().enumerate() {
                *cell = a[r][0] * b[0][c] + a[r][1] * b[1][c];
            }
        }
        Matrix2(out)
    }
}

pub(crate) fn rotation_matrix_unchecked(axis: Axis, angle: f64) -> Matrix2 {
    let (s, c) = (0.5 * angle).sin_cos();
    match axis {
        Axis::X => Matrix2([
            [Complex64::new(c, 0.0), Complex64::new(0.0, -s)],
            [Complex64::new(0.0, -s), Complex64::new(c, 0.0)],
        ]),
        Axis::Y => Matrix2([
            [Complex64::new(c, 0.0), Complex64::new(-s, 0.0)],
            [Complex64::new(s, 0.0), Complex64::new(c, 0.0)],
        ]),
        Axis::Z => Matrix2([
            [Complex64::new(c, -s), ZERO],
            [ZERO, Complex64::new(c, s)],
        ]),
    }
}

/// `exp(-i · angle · P / 2)` for the gate's Pauli axis `P`.
pub fn rotation_matrix(gate: &RotationGate) -> Result<Matrix2> {
    if !gate.angle.is_finite() {
        return Err(Error::invalid(format!("rotation angle must be finite, got {}", gate.angle)));
    }
    Ok(rotation_matrix_unchecked(gate.axis, gate.angle))
}

pub fn apply_gate(state: &QubitState, gate: &RotationGate) -> Result<QubitState> {
    if !state.is_normalized() {
        return Err(Error::InvalidState(format!(
            "state norm² is {}, expected 1",
            state.norm_sqr()
        )));
    }
    Ok(rotation_matrix(gate)?.apply(state))
}

/// `⟨ψ|Z|ψ⟩ = |amp0|² − |amp1|²`, clamped into `[-1, 1]` against rounding.
pub fn expectation_z(state: &QubitState) -> f64 {
    (state.amp0.norm_sqr() - state.amp1.norm_sqr()).clamp(-1.0, 1.0)
}

#[cfg(test)]
mod tests {
    use std::f64::consts::{FRAC_1_SQRT_2, PI};

    use proptest::prelude::*;

    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    /// Matrix exponential by truncated Taylor series, independent of the
    /// closed form used in `rotation_matrix`.
    fn expm_series(generator: Matrix2) -> Matrix2 {
        let mut term = Matrix2::IDENTITY;
        let mut sum = Matrix2::IDENTITY;
        for k in 1..40 {
            term = term * generator;
            let scale = 1.0 / (k as f64);
            for r in 0..2 {
                for col in 0..2 {
                    term.0[r][col] *= scale;
                }
            }
            for r in 0..2 {
                for col in 0..2 {
                    sum.0[r][col] += term.0[r][col];
                }
            }
        }
        sum
    }

    fn pauli(axis: Axis) -> Matrix2 {
        match axis {
            Axis::X => Matrix2([[c(0., 0.), c(1., 0.)], [c(1., 0.), c(0., 0.)]]),
            Axis::Y => Matrix2([[c(0., 0.), c(0., -1.)], [c(0., 1.), c(0., 0.)]]),
            Axis::Z => Matrix2([[c(1., 0.), c(0., 0.)], [c(0., 0.), c(-1., 0.)]]),
        }
    }

    fn generator(axis: Axis, angle: f64) -> Matrix2 {
        let mut g = pauli(axis);
        let k = c(0.0, -0.5 * angle);
        for r in 0..2 {
            for col in 0..2 {
                g.0[r][col] *= k;
            }
        }
        g
    }

    #[test]
    fn rz_zero_is_identity() {
        let m = rotation_matrix(&RotationGate::rz(0.0)).unwrap();
        assert!(m.max_abs_diff(&Matrix2::IDENTITY) < 1e-15);
    }

    #[test]
    fn rx_pi_flips_zero_to_minus_i_one() {
        let m = rotation_matrix(&RotationGate::rx(PI)).unwrap();
        let out = m.apply(&QubitState::ZERO);
        assert!(out.amp0.norm() < 1e-15);
        assert!((out.amp1 - c(0.0, -1.0)).norm() < 1e-15);
        assert!((expectation_z(&out) + 1.0).abs() < 1e-15);
    }

    #[test]
    fn ry_matches_series_exponential() {
        let m = rotation_matrix(&RotationGate::ry(0.8)).unwrap();
        let oracle = expm_series(generator(Axis::Y, 0.8));
        assert!(m.max_abs_diff(&oracle) < 1e-14);
        let (s, co) = 0.4_f64.sin_cos();
        let expected = Matrix2([[c(co, 0.), c(-s, 0.)], [c(s, 0.), c(co, 0.)]]);
        assert!(m.max_abs_diff(&expected) < 1e-15);
    }

    #[test]
    fn all_axes_match_series_exponential() {
        for axis in [Axis::X, Axis::Y, Axis::Z] {
            for &angle in &[-3.0, -0.2, 0.0, 0.7, 2.5, 6.0] {
                let m = rotation_matrix(&RotationGate::new(axis, angle)).unwrap();
                assert!(m.max_abs_diff(&expm_series(generator(axis, angle))) < 1e-13);
            }
        }
    }

    #[test]
    fn non_finite_angle_is_rejected() {
        for bad in [f64::NAN, f64::INFINITY, f64::NEG_INFINITY] {
            assert!(matches!(
                rotation_matrix(&RotationGate::rx(bad)),
                Err(Error::InvalidArgument(_))
            ));
        }
    }

    #[test]
    fn apply_gate_examples() {
        let out = apply_gate(&QubitState::ZERO, &RotationGate::rz(0.7)).unwrap();
        assert!((out.amp0.norm_sqr() - 1.0).abs() < 1e-15);

        let out = apply_gate(&QubitState::ZERO, &RotationGate::rx(PI)).unwrap();
        assert!((expectation_z(&out) + 1.0).abs() < 1e-15);

        // Direct matrix-vector product: amp0 = cos(1/2), amp1 = -i sin(1/2).
        let out = apply_gate(&QubitState::ZERO, &RotationGate::rx(1.0)).unwrap();
        let oracle = 0.5_f64.cos().powi(2) - 0.5_f64.sin().powi(2);
        assert!((expectation_z(&out) - oracle).abs() < 1e-15);
        assert!((expectation_z(&out) - 0.540_302_305_868_139_8).abs() < 1e-12);
    }

    #[test]
    fn unnormalized_state_is_rejected() {
        let s = QubitState::from_amplitudes(c(1.0, 0.0), c(0.01, 0.0));
        assert!(matches!(apply_gate(&s, &RotationGate::rx(0.3)), Err(Error::InvalidState(_))));
    }

    #[test]
    fn expectation_examples() {
        assert_eq!(expectation_z(&QubitState::ZERO), 1.0);
        assert_eq!(expectation_z(&QubitState::ONE), -1.0);
        let plus = QubitState::from_amplitudes(c(FRAC_1_SQRT_2, 0.), c(FRAC_1_SQRT_2, 0.));
        assert!(expectation_z(&plus).abs() < 1e-15);
    }

    fn arb_state() -> impl Strategy<Value = QubitState> {
        (0.0..PI, 0.0..2.0 * PI, 0.0..2.0 * PI).prop_map(|(theta, phi, g)| {
            let (s, co) = (0.5 * theta).sin_cos();
            QubitState::from_amplitudes(
                Complex64::from_polar(co, g),
                Complex64::from_polar(s, g + phi),
            )
        })
    }

    fn arb_gate() -> impl Strategy<Value = RotationGate> {
        (prop_oneof![Just(Axis::X), Just(Axis::Y), Just(Axis::Z)], -20.0..20.0f64)
            .prop_map(|(axis, angle)| RotationGate::new(axis, angle))
    }

    proptest! {
        #[test]
        fn gates_preserve_norm(state in arb_state(), gate in arb_gate()) {
            let out = apply_gate(&state, &gate).unwrap();
            prop_assert!((out.norm_sqr() - 1.0).abs() < 1e-10);
            let e = expectation_z(&out);
            prop_assert!((-1.0..=1.0).contains(&e));
        }

        #[test]
        fn rotation_matrices_are_unitary(gate in arb_gate()) {
            let m = rotation_matrix(&gate).unwrap();
            prop_assert!((m.adjoint() * m).max_abs_diff(&Matrix2::IDENTITY) < 1e-12);
        }

        #[test]
        fn z_rotations_compose(state in arb_state(), a in -10.0..10.0f64, b in -10.0..10.0f64) {
            let two = apply_gate(&apply_gate(&state, &RotationGate::rz(a)).unwrap(), &RotationGate::rz(b)).unwrap();
            let one = apply_gate(&state, &RotationGate::rz(a + b)).unwrap();
            prop_assert!((two.amp0 - one.amp0).norm() < 1e-10);
            prop_assert!((two.amp1 - one.amp1).norm() < 1e-10);
        }
    }
}
