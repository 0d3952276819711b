//! Kinetic superoperators in Liouville space.
//!
//! Both generators act as `d vec(ρ)/dt = -S vec(ρ)`:
//!
//! * Haberkorn: `V = iH⁻ + ½k_S Q_S⁺ + ½k_T Q_T⁺`
//! * measurement: `W = iH⁻ + (k_S + k_T)E − k_S Q_T⊗Q_Tᵀ − k_T Q_S⊗Q_Sᵀ`
//!
//! where `A^± = A⊗E ± E⊗Aᵀ` in the row-stacking convention. The two differ
//! only by extra dephasing, `W − V = ½k_S (Q_S⁻)² + ½k_T (Q_T⁻)²`.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{kron, ComplexMatrix, I};
use crate::spinsys::{RateConstants, SpinSystem};

/// The two competing reaction models.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Approach {
    Haberkorn,
    Measurement,
}

impl Approach {
    pub const BOTH: [Approach; 2] = [Approach::Haberkorn, Approach::Measurement];

    pub fn as_str(self) -> &'static str {
        match self {
            Approach::Haberkorn => "haberkorn",
            Approach::Measurement => "measurement",
        }
    }
}

impl fmt::Display for Approach {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Approach {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "haberkorn" => Ok(Approach::Haberkorn),
            "measurement" => Ok(Approach::Measurement),
            other => Err(format!("unknown approach `{other}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SuperoperatorKind {
    Haberkorn,
    Measurement,
    CoherentOnly,
}

impl From<Approach> for SuperoperatorKind {
    fn from(a: Approach) -> Self {
        match a {
            Approach::Haberkorn => SuperoperatorKind::Haberkorn,
            Approach::Measurement => SuperoperatorKind::Measurement,
        }
    }
}

/// A materialized n²×n² generator together with the system it was built from.
#[derive(Clone, Debug)]
pub struct Superoperator {
    matrix: ComplexMatrix,
    kind: SuperoperatorKind,
    system: SpinSystem,
    rates: RateConstants,
}

impl Superoperator {
    pub fn build(
        kind: SuperoperatorKind,
        sys: &SpinSystem,
        rates: RateConstants,
    ) -> Result<Superoperator> {
        match kind {
            SuperoperatorKind::Haberkorn => haberkorn_superop(sys, rates),
            SuperoperatorKind::Measurement => measurement_superop(sys, rates),
            SuperoperatorKind::CoherentOnly => Ok(coherent_superop(sys)),
        }
    }

    pub fn for_approach(
        approach: Approach,
        sys: &SpinSystem,
        rates: RateConstants,
    ) -> Result<Superoperator> {
        Self::build(approach.into(), sys, rates)
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn kind(&self) -> SuperoperatorKind {
        self.kind
    }

    pub fn system(&self) -> &SpinSystem {
        &self.system
    }

    /// Rates folded into the generator; zero for the coherent-only kind.
    pub fn rates(&self) -> RateConstants {
        self.rates
    }

    pub fn hilbert_dim(&self) -> usize {
        self.system.dim()
    }
}

/// `A⁻ = A⊗E − E⊗Aᵀ`; `unvec(A⁻ vec ρ) = Aρ − ρA`.
pub fn commutator_superop(a: &ComplexMatrix) -> ComplexMatrix {
    let eye = ComplexMatrix::identity(a.nrows());
    &kron(a, &eye) - &kron(&eye, &a.transpose())
}

/// `A⁺ = A⊗E + E⊗Aᵀ`; `unvec(A⁺ vec ρ) = Aρ + ρA`.
pub fn anticommutator_superop(a: &ComplexMatrix) -> ComplexMatrix {
    let eye = ComplexMatrix::identity(a.nrows());
    &kron(a, &eye) + &kron(&eye, &a.transpose())
}

fn coherent_part(sys: &SpinSystem) -> ComplexMatrix {
    commutator_superop(sys.hamiltonian()).scale(I)
}

/// `iH⁻` alone.
pub fn coherent_superop(sys: &SpinSystem) -> Superoperator {
    Superoperator {
        matrix: coherent_part(sys),
        kind: SuperoperatorKind::CoherentOnly,
        system: sys.clone(),
        rates: RateConstants { k_s: 0.0, k_t: 0.0 },
    }
}

pub fn haberkorn_superop(sys: &SpinSystem, rates: RateConstants) -> Result<Superoperator> {
    rates.validate()?;
    let mut v = coherent_part(sys);
    v += &anticommutator_superop(sys.q_singlet()).scale_real(0.5 * rates.k_s);
    v += &anticommutator_superop(sys.q_triplet()).scale_real(0.5 * rates.k_t);
    Ok(Superoperator { matrix: v, kind: SuperoperatorKind::Haberkorn, system: sys.clone(), rates })
}

pub fn measurement_superop(sys: &SpinSystem, rates: RateConstants) -> Result<Superoperator> {
    rates.validate()?;
    let n = sys.dim();
    let qs = sys.q_singlet();
    let qt = sys.q_triplet();
    let mut w = coherent_part(sys);
    w += &ComplexMatrix::identity(n * n).scale_real(rates.total());
    w += &kron(qt, &qt.transpose()).scale_real(-rates.k_s);
    w += &kron(qs, &qs.transpose()).scale_real(-rates.k_t);
    Ok(Superoperator {
        matrix: w,
        kind: SuperoperatorKind::Measurement,
        system: sys.clone(),
        rates,
    })
}

/// The extra dephasing `½k_S (Q_S⁻)² + ½k_T (Q_T⁻)²` separating `W` from `V`.
pub fn decoherence_gap(sys: &SpinSystem, rates: RateConstants) -> ComplexMatrix {
    let cs = commutator_superop(sys.q_singlet());
    let ct = commutator_superop(sys.q_triplet());
    &(&cs * &cs).scale_real(0.5 * rates.k_s) + &(&ct * &ct).scale_real(0.5 * rates.k_t)
}

/// `max |W − V − gap|`, which vanishes identically for any valid system.
pub fn decoherence_gap_residual(sys: &SpinSystem, rates: RateConstants) -> Result<f64> {
    let v = haberkorn_superop(sys, rates)?;
    let w = measurement_superop(sys, rates)?;
    let gap = decoherence_gap(sys, rates);
    Ok((&(w.matrix() - v.matrix()) - &gap).max_abs())
}

/// Closed-form `exp(−S t)` of the two-level model with `H = 0`, in the
/// Liouville basis {|S⟩⟨S|, |S⟩⟨T|, |T⟩⟨S|, |T⟩⟨T|}.
pub fn analytic_propagator(
    sys: &SpinSystem,
    kind: SuperoperatorKind,
    rates: RateConstants,
    t: f64,
) -> Result<ComplexMatrix> {
    if !sys.is_minimal_basis() {
        return Err(Error::UnsupportedSystem(format!("dimension {} basis", sys.dim())));
    }
    if sys.hamiltonian().max_abs() != 0.0 {
        return Err(Error::UnsupportedSystem("hamiltonian is nonzero".into()));
    }
    rates.validate()?;
    if !(t >= 0.0) {
        return Err(Error::NegativeTime(t));
    }
    let (ks, kt) = (rates.k_s, rates.k_t);
    let coherence_rate = match kind {
        SuperoperatorKind::Haberkorn => 0.5 * (ks + kt),
        SuperoperatorKind::Measurement => ks + kt,
        SuperoperatorKind::CoherentOnly => return Ok(ComplexMatrix::identity(4)),
    };
    let d = [(-ks * t).exp(), (-coherence_rate * t).exp(), (-coherence_rate * t).exp(), (-kt * t).exp()];
    Ok(ComplexMatrix::from_diagonal(&d.map(|x| Complex64::new(x, 0.0))))
}
