#![allow(dead_code)]

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use radpair::evolve::EvolutionResult;
use radpair::spinsys::two_spin_singlet_projector;
use radpair::{ComplexMatrix, SpinSystem};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut impl Rng, n: usize) -> ComplexMatrix {
    ComplexMatrix::from_fn(n, n, |_, _| {
        Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    })
}

pub fn random_hermitian(rng: &mut impl Rng, n: usize) -> ComplexMatrix {
    let a = random_matrix(rng, n);
    (&a + &a.adjoint()).scale_real(0.5)
}

pub fn random_density(rng: &mut impl Rng, n: usize) -> ComplexMatrix {
    let g = random_matrix(rng, n);
    let p = &g * &g.adjoint();
    let tr = p.trace().re;
    p.scale_real(1.0 / tr)
}

/// Random two-level system or random Hamiltonian on two spins-½.
pub fn random_system(rng: &mut impl Rng, dim: usize) -> SpinSystem {
    match dim {
        2 => SpinSystem::minimal_two_level(rng.random_range(0.5..2.0)).unwrap(),
        4 => SpinSystem::from_matrices(random_hermitian(rng, 4), two_spin_singlet_projector())
            .unwrap(),
        _ => panic!("unsupported test dimension {dim}"),
    }
}

/// `(Q ρ − ρ Q)` as an n²×n² matrix in row-stacked coordinates, entry by entry.
pub fn commutator_matrix(q: &ComplexMatrix) -> ComplexMatrix {
    let n = q.nrows();
    let delta = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
    ComplexMatrix::from_fn(n * n, n * n, |r, c| {
        let (i, j) = (r / n, r % n);
        let (k, l) = (c / n, c % n);
        q[(i, k)] * delta(j, l) - q[(l, j)] * delta(i, k)
    })
}

pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

/// Running extremes of positivity and Hermiticity over many density matrices.
#[derive(Debug, Clone, Copy)]
pub struct StateHealth {
    pub min_eigenvalue: f64,
    pub max_hermiticity_defect: f64,
    pub states: usize,
}

impl Default for StateHealth {
    fn default() -> Self {
        Self { min_eigenvalue: f64::INFINITY, max_hermiticity_defect: 0.0, states: 0 }
    }
}

impl StateHealth {
    pub fn observe(&mut self, rho: &ComplexMatrix) {
        self.max_hermiticity_defect = self.max_hermiticity_defect.max(rho.hermiticity_defect());
        self.min_eigenvalue = self.min_eigenvalue.min(rho.min_hermitian_eigenvalue().unwrap());
        self.states += 1;
    }

    pub fn observe_run(&mut self, res: &EvolutionResult) {
        for rho in &res.rho_t {
            self.observe(rho);
        }
    }
}
