//! Deterministic propagation, observables and product yields.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{expm, unvec, vec, ComplexMatrix, ComplexVector};
use crate::spinsys::{RateConstants, SpinSystem};
use crate::superop::{Approach, Superoperator};

/// Fixed validation tolerance for initial density matrices.
pub const RHO_TOL: f64 = 1e-10;

/// Condition-number bound above which the generator is treated as singular
/// and yields fall back to quadrature.
pub const SINGULAR_COND: f64 = 1e12;

const SIMPSON_RTOL: f64 = 1e-8;
const SIMPSON_MAX_PANELS: usize = 1 << 16;

#[derive(Clone, Debug, PartialEq)]
pub struct EvolutionResult {
    pub times: Vec<f64>,
    pub rho_t: Vec<ComplexMatrix>,
    pub pop_s: Vec<f64>,
    pub pop_t: Vec<f64>,
    pub yield_s: Vec<f64>,
    pub yield_t: Vec<f64>,
    pub trace: Vec<f64>,
    pub coherence_st: Vec<f64>,
}

impl EvolutionResult {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Worst `|pop_s + pop_t + yield_s + yield_t − 1|` over the grid.
    pub fn conservation_defect(&self) -> f64 {
        (0..self.len())
            .map(|i| (self.pop_s[i] + self.pop_t[i] + self.yield_s[i] + self.yield_t[i] - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Checks Hermiticity, unit trace and positivity of a candidate `ρ(0)`.
pub fn validate_density_matrix(rho: &ComplexMatrix, dim: usize) -> Result<()> {
    let n = rho.ensure_square()?;
    if n != dim {
        return Err(Error::DimensionMismatch { expected: dim, found: n });
    }
    if !rho.all_finite() {
        return Err(Error::InvalidDensityMatrix("non-finite entries".into()));
    }
    let herm = rho.hermiticity_defect();
    if herm > RHO_TOL {
        return Err(Error::InvalidDensityMatrix(format!("not Hermitian (defect {herm:e})")));
    }
    let tr = rho.trace();
    if (tr.re - 1.0).abs() > RHO_TOL || tr.im.abs() > RHO_TOL {
        return Err(Error::InvalidDensityMatrix(format!("trace {tr} is not 1")));
    }
    let min_eig = rho.min_hermitian_eigenvalue()?;
    if min_eig < -RHO_TOL {
        return Err(Error::InvalidDensityMatrix(format!("negative eigenvalue {min_eig:e}")));
    }
    Ok(())
}

pub fn validate_time_grid(times: &[f64]) -> Result<()> {
    let ok = times.iter().all(|t| t.is_finite() && *t >= 0.0)
        && times.windows(2).all(|w| w[0] <= w[1]);
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidTimeGrid)
    }
}

/// `(Tr(Q_S ρ), Tr(Q_T ρ))`.
pub fn populations(sys: &SpinSystem, rho: &ComplexMatrix) -> Result<(f64, f64)> {
    let n = rho.ensure_square()?;
    if n != sys.dim() {
        return Err(Error::DimensionMismatch { expected: sys.dim(), found: n });
    }
    let ps = (sys.q_singlet() * rho).trace();
    let pt = (sys.q_triplet() * rho).trace();
    for p in [ps, pt] {
        if p.im.abs() > RHO_TOL {
            return Err(Error::ComplexPopulation(p.im));
        }
    }
    Ok((ps.re, pt.re))
}

/// `|⟨S|ρ|T⟩|` for the minimal model, otherwise the largest entry of
/// `Q_S ρ Q_T`.
pub fn coherence_magnitude(sys: &SpinSystem, rho: &ComplexMatrix) -> f64 {
    if sys.is_minimal_basis() {
        rho[(0, 1)].norm()
    } else {
        (&(sys.q_singlet() * rho) * sys.q_triplet()).max_abs()
    }
}

/// `ρ(tᵢ) = unvec(exp(−S tᵢ) vec ρ₀)` with populations, coherences and yields.
pub fn propagate(
    superop: &Superoperator,
    rho0: &ComplexMatrix,
    times: &[f64],
) -> Result<EvolutionResult> {
    let sys = superop.system();
    validate_density_matrix(rho0, sys.dim())?;
    validate_time_grid(times)?;

    let v0 = vec(rho0);
    let generator = superop.matrix();
    let rho_t = times
        .par_iter()
        .map(|&t| {
            let prop = expm(&generator.scale_real(-t))?;
            unvec(&prop.mat_vec(&v0))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut pop_s = Vec::with_capacity(times.len());
    let mut pop_t = Vec::with_capacity(times.len());
    let mut trace = Vec::with_capacity(times.len());
    let mut coherence_st = Vec::with_capacity(times.len());
    for rho in &rho_t {
        let (ps, pt) = populations(sys, rho)?;
        pop_s.push(ps);
        pop_t.push(pt);
        trace.push(rho.trace().re);
        coherence_st.push(coherence_magnitude(sys, rho));
    }

    let mut result = EvolutionResult {
        times: times.to_vec(),
        rho_t,
        pop_s,
        pop_t,
        yield_s: vec![0.0; times.len()],
        yield_t: vec![0.0; times.len()],
        trace,
        coherence_st,
    };
    yields(superop, rho0, &mut result)?;
    Ok(result)
}

/// Fills `yield_s = k_S ∫₀ᵗ ⟨Q_S⟩` and `yield_t = k_T ∫₀ᵗ ⟨Q_T⟩`.
///
/// Uses the resolvent `S⁻¹(vec ρ₀ − vec ρ(t))` when the generator is well
/// conditioned, and adaptive composite Simpson quadrature otherwise.
pub fn yields(
    superop: &Superoperator,
    rho0: &ComplexMatrix,
    result: &mut EvolutionResult,
) -> Result<()> {
    validate_time_grid(&result.times)?;
    let sys = superop.system();
    let rates = superop.rates();
    let n = result.len();
    if rates.total() == 0.0 {
        result.yield_s = vec![0.0; n];
        result.yield_t = vec![0.0; n];
        return Ok(());
    }

    let generator = superop.matrix();
    if generator.condition_number()? <= SINGULAR_COND {
        let v0 = vec(rho0);
        let vt: Vec<ComplexVector> = result.rho_t.iter().map(vec).collect();
        let lost = ComplexMatrix::from_fn(v0.len(), n, |i, j| v0[i] - vt[j][i]);
        let integrals = generator.solve(&lost)?;
        for j in 0..n {
            let col: Vec<Complex64> = (0..v0.len()).map(|i| integrals[(i, j)]).collect();
            let int_rho = unvec(&ComplexVector::from_slice(&col))?;
            let (is, it) = populations_unchecked(sys, &int_rho);
            result.yield_s[j] = rates.k_s * is;
            result.yield_t[j] = rates.k_t * it;
        }
        return Ok(());
    }

    let v0 = vec(rho0);
    let pops_at = |t: f64| -> Result<(f64, f64)> {
        let rho = unvec(&expm(&generator.scale_real(-t))?.mat_vec(&v0))?;
        Ok(populations_unchecked(sys, &rho))
    };
    let mut acc = (0.0, 0.0);
    let mut prev = 0.0;
    for j in 0..n {
        let (a, b) = (prev, result.times[j]);
        if b > a {
            let (is, it) = adaptive_simpson(&pops_at, a, b)?;
            acc.0 += is;
            acc.1 += it;
        }
        result.yield_s[j] = rates.k_s * acc.0;
        result.yield_t[j] = rates.k_t * acc.1;
        prev = b;
    }
    Ok(())
}

fn populations_unchecked(sys: &SpinSystem, rho: &ComplexMatrix) -> (f64, f64) {
    ((sys.q_singlet() * rho).trace().re, (sys.q_triplet() * rho).trace().re)
}

fn simpson(f: &[(f64, f64)], h: f64) -> (f64, f64) {
    let m = f.len() - 1;
    let mut s = (f[0].0 + f[m].0, f[0].1 + f[m].1);
    for (k, v) in f.iter().enumerate().take(m).skip(1) {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        s.0 += w * v.0;
        s.1 += w * v.1;
    }
    (s.0 * h / 3.0, s.1 * h / 3.0)
}

fn adaptive_simpson(
    f: &impl Fn(f64) -> Result<(f64, f64)>,
    a: f64,
    b: f64,
) -> Result<(f64, f64)> {
    let mut panels = 2;
    let mut samples = vec![f(a)?, f(0.5 * (a + b))?, f(b)?];
    let mut estimate = simpson(&samples, (b - a) / panels as f64);
    loop {
        let next_panels = panels * 2;
        let h = (b - a) / next_panels as f64;
        let mut refined = Vec::with_capacity(next_panels + 1);
        for (k, s) in samples.iter().enumerate() {
            refined.push(*s);
            if k + 1 < samples.len() {
                refined.push(f(a + (2 * k + 1) as f64 * h)?);
            }
        }
        let next = simpson(&refined, h);
        let change = (next.0 - estimate.0).abs().max((next.1 - estimate.1).abs());
        let scale = next.0.abs().max(next.1.abs());
        samples = refined;
        estimate = next;
        panels = next_panels;
        if change <= SIMPSON_RTOL * scale || change <= 1e-15 || panels >= SIMPSON_MAX_PANELS {
            return Ok(estimate);
        }
    }
}

fn commutator(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    &(a * b) - &(b * a)
}

fn anticommutator(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    &(a * b) + &(b * a)
}

fn check_dims(sys: &SpinSystem, rho: &ComplexMatrix) -> Result<()> {
    let n = rho.ensure_square()?;
    if n != sys.dim() {
        return Err(Error::DimensionMismatch { expected: sys.dim(), found: n });
    }
    Ok(())
}

fn coherent_rhs(sys: &SpinSystem, rho: &ComplexMatrix) -> ComplexMatrix {
    commutator(sys.hamiltonian(), rho).scale(Complex64::new(0.0, -1.0))
}

/// `−i[H,ρ] − ½k_S{Q_S,ρ} − ½k_T{Q_T,ρ}`
pub fn rhs_haberkorn(
    sys: &SpinSystem,
    rates: RateConstants,
    rho: &ComplexMatrix,
) -> Result<ComplexMatrix> {
    check_dims(sys, rho)?;
    let mut out = coherent_rhs(sys, rho);
    out += &anticommutator(sys.q_singlet(), rho).scale_real(-0.5 * rates.k_s);
    out += &anticommutator(sys.q_triplet(), rho).scale_real(-0.5 * rates.k_t);
    Ok(out)
}

/// `−i[H,ρ] − (k_S+k_T)ρ + k_S Q_T ρ Q_T + k_T Q_S ρ Q_S`
pub fn rhs_measurement(
    sys: &SpinSystem,
    rates: RateConstants,
    rho: &ComplexMatrix,
) -> Result<ComplexMatrix> {
    check_dims(sys, rho)?;
    let (qs, qt) = (sys.q_singlet(), sys.q_triplet());
    let mut out = coherent_rhs(sys, rho);
    out += &rho.scale_real(-rates.total());
    out += &(&(qt * rho) * qt).scale_real(rates.k_s);
    out += &(&(qs * rho) * qs).scale_real(rates.k_t);
    Ok(out)
}

/// Projection form of the measurement equation:
/// `−i[H,ρ] − k_S(Q_SρQ_S + Q_SρQ_T + Q_TρQ_S) − k_T(Q_TρQ_T + Q_SρQ_T + Q_TρQ_S)`.
pub fn rhs_measurement_projective(
    sys: &SpinSystem,
    rates: RateConstants,
    rho: &ComplexMatrix,
) -> Result<ComplexMatrix> {
    check_dims(sys, rho)?;
    let (qs, qt) = (sys.q_singlet(), sys.q_triplet());
    let ss = &(qs * rho) * qs;
    let tt = &(qt * rho) * qt;
    let cross = &(&(qs * rho) * qt) + &(&(qt * rho) * qs);
    let mut out = coherent_rhs(sys, rho);
    out += &(&ss + &cross).scale_real(-rates.k_s);
    out += &(&tt + &cross).scale_real(-rates.k_t);
    Ok(out)
}

pub fn rhs(
    approach: Approach,
    sys: &SpinSystem,
    rates: RateConstants,
    rho: &ComplexMatrix,
) -> Result<ComplexMatrix> {
    match approach {
        Approach::Haberkorn => rhs_haberkorn(sys, rates, rho),
        Approach::Measurement => rhs_measurement(sys, rates, rho),
    }
}

/// `|d Tr ρ/dt + k_S⟨Q_S⟩ + k_T⟨Q_T⟩|` evaluated from the direct right-hand side.
pub fn trace_loss_residual(
    approach: Approach,
    sys: &SpinSystem,
    rates: RateConstants,
    rho: &ComplexMatrix,
) -> Result<f64> {
    let d = rhs(approach, sys, rates, rho)?.trace();
    let (ps, pt) = populations_unchecked(sys, rho);
    Ok((d + Complex64::new(rates.k_s * ps + rates.k_t * pt, 0.0)).norm())
}

/// One term `p_k A_k ρ A_k†` of an operator-sum update.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorSumTerm {
    pub weight: f64,
    pub op: ComplexMatrix,
}

/// The infinitesimal measurement update over `dt`: no reaction with weight
/// `1 − (k_S+k_T)dt`, and the complements `E − Q_S`, `E − Q_T` with weights
/// `k_S dt`, `k_T dt`.
pub fn measurement_operator_sum(
    sys: &SpinSystem,
    rates: RateConstants,
    dt: f64,
) -> Vec<OperatorSumTerm> {
    let eye = ComplexMatrix::identity(sys.dim());
    vec![
        OperatorSumTerm { weight: 1.0 - rates.total() * dt, op: eye.clone() },
        OperatorSumTerm { weight: rates.k_s * dt, op: &eye - sys.q_singlet() },
        OperatorSumTerm { weight: rates.k_t * dt, op: &eye - sys.q_triplet() },
    ]
}

pub fn apply_operator_sum(terms: &[OperatorSumTerm], rho: &ComplexMatrix) -> ComplexMatrix {
    let mut out = ComplexMatrix::zeros(rho.nrows(), rho.ncols());
    for term in terms {
        out += &(&(&term.op * rho) * &term.op.adjoint()).scale_real(term.weight);
    }
    out
}

/// `E − Σ p_k A_k† A_k`; zero for a trace-preserving process.
pub fn trace_condition_defect(terms: &[OperatorSumTerm]) -> ComplexMatrix {
    let n = terms.first().map_or(0, |t| t.op.nrows());
    let mut out = ComplexMatrix::identity(n);
    for term in terms {
        out += &(&term.op.adjoint() * &term.op).scale_real(-term.weight);
    }
    out
}
