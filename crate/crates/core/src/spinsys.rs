//! Spin Hamiltonian plus singlet/triplet projectors.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{ComplexMatrix, ComplexVector};

/// Tolerance applied when validating user-supplied operators.
pub const INPUT_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct SpinSystem {
    hamiltonian: ComplexMatrix,
    q_singlet: ComplexMatrix,
    q_triplet: ComplexMatrix,
}

/// First-order reaction rate constants in reciprocal time units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateConstants {
    pub k_s: f64,
    pub k_t: f64,
}

impl RateConstants {
    pub fn new(k_s: f64, k_t: f64) -> Result<Self> {
        let r = Self { k_s, k_t };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, value) in [("k_s", self.k_s), ("k_t", self.k_t)] {
            if !value.is_finite() {
                return Err(Error::NonFinite(name));
            }
            if value < 0.0 {
                return Err(Error::NegativeRate { name, value });
            }
        }
        Ok(())
    }

    pub fn total(&self) -> f64 {
        self.k_s + self.k_t
    }
}

impl SpinSystem {
    /// Two-level model in the basis (|S⟩, |T⟩) with `⟨S|H|T⟩ = omega`.
    pub fn minimal_two_level(omega: f64) -> Result<Self> {
        if !omega.is_finite() {
            return Err(Error::NonFinite("omega"));
        }
        Ok(Self {
            hamiltonian: ComplexMatrix::from_real_rows(&[&[0.0, omega], &[omega, 0.0]]),
            q_singlet: ComplexMatrix::from_real_diagonal(&[1.0, 0.0]),
            q_triplet: ComplexMatrix::from_real_diagonal(&[0.0, 1.0]),
        })
    }

    /// General entry point; the triplet projector is `E - q_s`.
    pub fn from_matrices(h: ComplexMatrix, q_s: ComplexMatrix) -> Result<Self> {
        let n = h.ensure_square()?;
        let m = q_s.ensure_square()?;
        if n != m {
            return Err(Error::DimensionMismatch { expected: n, found: m });
        }
        if !h.all_finite() {
            return Err(Error::NonFinite("hamiltonian"));
        }
        if !q_s.all_finite() {
            return Err(Error::NonFinite("q_singlet"));
        }
        let q_t = &ComplexMatrix::identity(n) - &q_s;
        let sys = Self { hamiltonian: h, q_singlet: q_s, q_triplet: q_t };
        sys.validate_with(INPUT_TOL)?;
        Ok(sys)
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_with(INPUT_TOL)
    }

    fn validate_with(&self, tol: f64) -> Result<()> {
        let h_scale = self.hamiltonian.max_abs().max(1.0);
        let herm = self.hamiltonian.hermiticity_defect();
        if herm > tol * h_scale {
            return Err(Error::NonHermitian(herm));
        }
        let defect = self.projector_defect();
        if defect > tol {
            return Err(Error::NotProjector(defect));
        }
        Ok(())
    }

    /// Worst residual of the projector algebra: idempotency, Hermiticity,
    /// completeness `Q_S + Q_T = E` and orthogonality `Q_S Q_T = 0`.
    pub fn projector_defect(&self) -> f64 {
        self.projector_residuals().into_iter().map(|(_, r)| r).fold(0.0, f64::max)
    }

    /// Named projector-algebra residuals.
    pub fn projector_residuals(&self) -> Vec<(&'static str, f64)> {
        let qs = &self.q_singlet;
        let qt = &self.q_triplet;
        let eye = ComplexMatrix::identity(self.dim());
        vec![
            ("q_singlet_idempotency", (&(qs * qs) - qs).max_abs()),
            ("q_triplet_idempotency", (&(qt * qt) - qt).max_abs()),
            ("q_singlet_hermiticity", qs.hermiticity_defect()),
            ("projector_completeness", (&(qs + qt) - &eye).max_abs()),
            ("projector_orthogonality", (qs * qt).max_abs().max((qt * qs).max_abs())),
        ]
    }

    pub fn dim(&self) -> usize {
        self.hamiltonian.nrows()
    }

    pub fn hamiltonian(&self) -> &ComplexMatrix {
        &self.hamiltonian
    }

    pub fn q_singlet(&self) -> &ComplexMatrix {
        &self.q_singlet
    }

    pub fn q_triplet(&self) -> &ComplexMatrix {
        &self.q_triplet
    }

    /// Whether this is the (|S⟩, |T⟩) model with projectors diag(1,0), diag(0,1).
    pub fn is_minimal_basis(&self) -> bool {
        self.dim() == 2
            && (&self.q_singlet - &ComplexMatrix::from_real_diagonal(&[1.0, 0.0])).max_abs()
                <= INPUT_TOL
    }

    /// Pure singlet initial state `Q_S / Tr(Q_S)`.
    pub fn singlet_state(&self) -> Result<ComplexMatrix> {
        let tr = self.q_singlet.trace().re;
        if tr <= INPUT_TOL {
            return Err(Error::InvalidDensityMatrix("singlet projector has zero trace".into()));
        }
        Ok(self.q_singlet.scale_real(1.0 / tr))
    }
}

/// Singlet projector `|S⟩⟨S|` of two spins-½ in the product basis
/// (|↑↑⟩, |↑↓⟩, |↓↑⟩, |↓↓⟩), with `|S⟩ = (|↑↓⟩ − |↓↑⟩)/√2`.
pub fn two_spin_singlet_projector() -> ComplexMatrix {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let s = ComplexVector::from_slice(&[
        Complex64::new(0.0, 0.0),
        Complex64::new(h, 0.0),
        Complex64::new(-h, 0.0),
        Complex64::new(0.0, 0.0),
    ]);
    ComplexMatrix::outer(&s, &s)
}
