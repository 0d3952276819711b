//! Quantum-jump unravelings of both master equations.
//!
//! Each trajectory is a pure state sampled from the eigen-decomposition of
//! `ρ(0)` and advanced on a grid of step `dt`.
//!
//! Measurement scheme, per step: coherent update `exp(−iH dt)`, then a
//! singlet measurement firing with probability `k_S dt` and a triplet
//! measurement with probability `k_T dt`. A firing singlet measurement
//! reacts with probability `⟨Q_S⟩`; otherwise the state is projected onto
//! `E − Q_S` and renormalized. The triplet channel is the mirror image.
//! Because nothing but coherent motion happens between firings, the firing
//! steps are drawn directly from geometric distributions, which reproduces
//! the per-step Bernoulli process exactly at a cost proportional to the
//! number of firings.
//!
//! Haberkorn scheme, per step: reaction with probability
//! `dt (k_S⟨Q_S⟩ + k_T⟨Q_T⟩)`, channel chosen in proportion, otherwise
//! the non-Hermitian no-jump step `exp((−iH − ½(k_S Q_S + k_T Q_T)) dt)`
//! followed by renormalization. The no-jump path from a given initial
//! state is deterministic, so it is computed once and the reaction step of
//! each trajectory is drawn by inverting the per-step survival product.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolve::validate_density_matrix;
use crate::linalg::{expm, ComplexMatrix};
use crate::spinsys::{RateConstants, SpinSystem};
use crate::superop::Approach;

/// Largest admissible `dt` as a fraction of the fastest time scale.
pub const DT_FRACTION: f64 = 0.01;
pub const DEFAULT_RECORDS: usize = 101;
/// Default step as a fraction of the stability bound. The per-step laws
/// carry an O(dt) bias that is comparable to the sampling error of 10⁵
/// trajectories at the bound itself; the samplers' cost does not grow with
/// the step count, so the default sits well inside it.
pub const DEFAULT_DT_DIVISOR: f64 = 10.0;
const MAX_STEPS: u64 = 50_000_000;
const CHUNK: usize = 512;
const NEVER: u64 = u64::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryConfig {
    pub dt: f64,
    pub t_max: f64,
    pub n_traj: usize,
    pub seed: u64,
    pub scheme: Approach,
    /// Number of evenly spaced record points on `[0, t_max]`.
    pub n_records: usize,
}

impl TrajectoryConfig {
    pub fn new(dt: f64, t_max: f64, n_traj: usize, seed: u64, scheme: Approach) -> Self {
        Self { dt, t_max, n_traj, seed, scheme, n_records: DEFAULT_RECORDS }
    }

    /// `0.01 · min(1/‖H‖₂, 1/(k_S+k_T))` over the positive terms, or `None`
    /// when both vanish.
    pub fn max_stable_dt(sys: &SpinSystem, rates: RateConstants) -> Result<Option<f64>> {
        let h = sys.hamiltonian().hermitian_spectral_radius()?;
        let k = rates.total();
        let fastest = h.max(k);
        Ok((fastest > 0.0).then(|| DT_FRACTION / fastest))
    }

    /// `max_stable_dt / DEFAULT_DT_DIVISOR`.
    pub fn default_dt(sys: &SpinSystem, rates: RateConstants) -> Result<Option<f64>> {
        Ok(Self::max_stable_dt(sys, rates)?.map(|b| b / DEFAULT_DT_DIVISOR))
    }

    pub fn validate(&self, sys: &SpinSystem, rates: RateConstants) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidTrajectoryConfig(m));
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.t_max.is_finite() && self.t_max > 0.0) {
            return bad(format!("t_max must be positive, got {}", self.t_max));
        }
        if self.n_traj == 0 {
            return bad("n_traj must be at least 1".into());
        }
        if self.n_records < 2 {
            return bad("n_records must be at least 2".into());
        }
        if let Some(limit) = Self::max_stable_dt(sys, rates)? {
            if self.dt > limit * (1.0 + 1e-9) {
                return bad(format!("dt = {} exceeds the stability bound {limit}", self.dt));
            }
        }
        if self.n_steps() > MAX_STEPS {
            return bad(format!("t_max/dt = {} steps exceeds {MAX_STEPS}", self.n_steps()));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> u64 {
        ((self.t_max / self.dt) - 1e-9).ceil().max(1.0) as u64
    }

    /// Step indices at which the ensemble is recorded (always includes 0
    /// and the final step).
    pub fn record_steps(&self) -> Vec<u64> {
        let n = self.n_steps();
        let mut steps: Vec<u64> = (0..self.n_records)
            .map(|j| ((j as f64) * (n as f64) / ((self.n_records - 1) as f64)).round() as u64)
            .collect();
        steps.dedup();
        steps
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEnsemble {
    pub scheme: Approach,
    pub n_traj: usize,
    pub dt: f64,
    pub times: Vec<f64>,
    pub surviving_fraction: Vec<f64>,
    pub pop_s_est: Vec<f64>,
    pub pop_s_stderr: Vec<Option<f64>>,
    pub pop_t_est: Vec<f64>,
    pub pop_t_stderr: Vec<Option<f64>>,
    pub singlet_reactions: u64,
    pub triplet_reactions: u64,
    pub survivors: u64,
    /// Bin edges of the reaction-time histograms.
    pub histogram_edges: Vec<f64>,
    pub singlet_histogram: Vec<u64>,
    pub triplet_histogram: Vec<u64>,
}

impl TrajectoryEnsemble {
    pub fn yield_s_final(&self) -> f64 {
        self.singlet_reactions as f64 / self.n_traj as f64
    }

    pub fn yield_t_final(&self) -> f64 {
        self.triplet_reactions as f64 / self.n_traj as f64
    }

    pub fn yield_s_stderr(&self) -> Option<f64> {
        bernoulli_stderr(self.singlet_reactions, self.n_traj)
    }

    pub fn yield_t_stderr(&self) -> Option<f64> {
        bernoulli_stderr(self.triplet_reactions, self.n_traj)
    }

    /// Fraction of record points where both population estimates lie within
    /// `sigmas` standard errors of the reference curves.
    pub fn agreement_fraction(&self, ref_pop_s: &[f64], ref_pop_t: &[f64], sigmas: f64) -> f64 {
        let within = |est: f64, se: Option<f64>, r: f64| {
            (est - r).abs() <= sigmas * se.unwrap_or(0.0) + 1e-12
        };
        let hits = (0..self.times.len())
            .filter(|&i| {
                within(self.pop_s_est[i], self.pop_s_stderr[i], ref_pop_s[i])
                    && within(self.pop_t_est[i], self.pop_t_stderr[i], ref_pop_t[i])
            })
            .count();
        hits as f64 / self.times.len() as f64
    }
}

fn bernoulli_stderr(count: u64, n: usize) -> Option<f64> {
    (n >= 2).then(|| {
        let p = count as f64 / n as f64;
        (p * (1.0 - p) / (n as f64 - 1.0)).sqrt()
    })
}

/// Per-chunk accumulator; chunks are merged in index order so the result
/// does not depend on scheduling.
#[derive(Clone, Debug)]
struct Tally {
    alive: Vec<u64>,
    sum_s: Vec<f64>,
    sumsq_s: Vec<f64>,
    sum_t: Vec<f64>,
    sumsq_t: Vec<f64>,
    singlet: u64,
    triplet: u64,
    hist_s: Vec<u64>,
    hist_t: Vec<u64>,
}

impl Tally {
    fn new(records: usize, bins: usize) -> Self {
        Self {
            alive: vec![0; records],
            sum_s: vec![0.0; records],
            sumsq_s: vec![0.0; records],
            sum_t: vec![0.0; records],
            sumsq_t: vec![0.0; records],
            singlet: 0,
            triplet: 0,
            hist_s: vec![0; bins],
            hist_t: vec![0; bins],
        }
    }

    fn record(&mut self, idx: usize, ps: f64, pt: f64) {
        self.alive[idx] += 1;
        self.sum_s[idx] += ps;
        self.sumsq_s[idx] += ps * ps;
        self.sum_t[idx] += pt;
        self.sumsq_t[idx] += pt * pt;
    }

    fn merge(&mut self, other: &Tally) {
        for i in 0..self.alive.len() {
            self.alive[i] += other.alive[i];
            self.sum_s[i] += other.sum_s[i];
            self.sumsq_s[i] += other.sumsq_s[i];
            self.sum_t[i] += other.sum_t[i];
            self.sumsq_t[i] += other.sumsq_t[i];
        }
        self.singlet += other.singlet;
        self.triplet += other.triplet;
        for (a, b) in self.hist_s.iter_mut().zip(&other.hist_s) {
            *a += b;
        }
        for (a, b) in self.hist_t.iter_mut().zip(&other.hist_t) {
            *a += b;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Channel {
    Singlet,
    Triplet,
}

/// Shared, read-only context for one ensemble run.
struct Setup {
    dim: usize,
    dt: f64,
    n_steps: u64,
    records: Vec<u64>,
    bins: usize,
    /// Initial pure states with their ensemble weights (cumulative).
    components: Vec<ComplexVec>,
    cumulative_weights: Vec<f64>,
}

type ComplexVec = Vec<Complex64>;

impl Setup {
    fn bin_of(&self, step: u64) -> usize {
        let b = (step as f64 / self.n_steps as f64 * self.bins as f64) as usize;
        b.min(self.bins - 1)
    }

    fn pick_component(&self, rng: &mut ChaCha8Rng) -> usize {
        let u: f64 = rng.random::<f64>() * self.cumulative_weights.last().copied().unwrap_or(1.0);
        self.cumulative_weights.partition_point(|&w| w <= u).min(self.components.len() - 1)
    }

    fn react(&self, tally: &mut Tally, channel: Channel, step: u64) {
        let bin = self.bin_of(step);
        match channel {
            Channel::Singlet => {
                tally.singlet += 1;
                tally.hist_s[bin] += 1;
            }
            Channel::Triplet => {
                tally.triplet += 1;
                tally.hist_t[bin] += 1;
            }
        }
    }
}

fn trajectory_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn to_flat(m: &ComplexMatrix) -> Vec<Complex64> {
    m.to_row_major()
}

fn mat_vec_into(m: &[Complex64], v: &[Complex64], out: &mut [Complex64]) {
    let n = v.len();
    for i in 0..n {
        let row = &m[i * n..(i + 1) * n];
        out[i] = row.iter().zip(v).map(|(a, b)| a * b).sum();
    }
}

/// `⟨v|M|v⟩` for Hermitian `M`.
fn expectation(m: &[Complex64], v: &[Complex64]) -> f64 {
    let n = v.len();
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..n {
        let row = &m[i * n..(i + 1) * n];
        let mv: Complex64 = row.iter().zip(v).map(|(a, b)| a * b).sum();
        acc += v[i].conj() * mv;
    }
    acc.re
}

fn norm_sqr(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

/// Steps until the first success of a Bernoulli(`p`) sequence, ≥ 1.
fn geometric(rng: &mut ChaCha8Rng, p: f64) -> u64 {
    if p <= 0.0 {
        return NEVER;
    }
    if p >= 1.0 {
        return 1;
    }
    let u = 1.0 - rng.random::<f64>();
    let g = (u.ln() / (-p).ln_1p()).floor();
    if g >= 1e18 {
        NEVER
    } else {
        1 + g as u64
    }
}

/// Runs the ensemble; deterministic for fixed `(seed, cfg)` regardless of
/// the number of worker threads.
pub fn run_ensemble(
    sys: &SpinSystem,
    rates: RateConstants,
    rho0: &ComplexMatrix,
    cfg: &TrajectoryConfig,
) -> Result<TrajectoryEnsemble> {
    rates.validate()?;
    validate_density_matrix(rho0, sys.dim())?;
    cfg.validate(sys, rates)?;

    let records = cfg.record_steps();
    let bins = (records.len() - 1).max(1);
    let (weights, vectors) = rho0.hermitian_eigen()?;
    let dim = sys.dim();
    let mut components = Vec::new();
    let mut cumulative_weights = Vec::new();
    let mut acc = 0.0;
    for (k, &w) in weights.iter().enumerate() {
        if w > 1e-14 {
            acc += w;
            components.push((0..dim).map(|i| vectors[(i, k)]).collect::<ComplexVec>());
            cumulative_weights.push(acc);
        }
    }
    let setup = Setup {
        dim,
        dt: cfg.dt,
        n_steps: cfg.n_steps(),
        records,
        bins,
        components,
        cumulative_weights,
    };

    let tally = match cfg.scheme {
        Approach::Measurement => {
            let model = MeasurementModel::new(sys, rates, &setup)?;
            reduce(cfg, &setup, |rng, tally| model.run(&setup, rng, tally))
        }
        Approach::Haberkorn => {
            let model = HaberkornModel::new(sys, rates, &setup)?;
            reduce(cfg, &setup, |rng, tally| model.run(&setup, rng, tally))
        }
    };

    let n = cfg.n_traj as f64;
    let stats = |sum: &[f64], sumsq: &[f64]| -> (Vec<f64>, Vec<Option<f64>>) {
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let se = sum
            .iter()
            .zip(sumsq)
            .map(|(s, q)| {
                (cfg.n_traj >= 2).then(|| {
                    let m = s / n;
                    ((q - n * m * m).max(0.0) / (n - 1.0) / n).sqrt()
                })
            })
            .collect();
        (mean, se)
    };
    let (pop_s_est, pop_s_stderr) = stats(&tally.sum_s, &tally.sumsq_s);
    let (pop_t_est, pop_t_stderr) = stats(&tally.sum_t, &tally.sumsq_t);
    let t_end = setup.n_steps as f64 * cfg.dt;
    Ok(TrajectoryEnsemble {
        scheme: cfg.scheme,
        n_traj: cfg.n_traj,
        dt: cfg.dt,
        times: setup.records.iter().map(|&s| s as f64 * cfg.dt).collect(),
        surviving_fraction: tally.alive.iter().map(|&a| a as f64 / n).collect(),
        pop_s_est,
        pop_s_stderr,
        pop_t_est,
        pop_t_stderr,
        singlet_reactions: tally.singlet,
        triplet_reactions: tally.triplet,
        survivors: cfg.n_traj as u64 - tally.singlet - tally.triplet,
        histogram_edges: (0..=bins).map(|b| t_end * b as f64 / bins as f64).collect(),
        singlet_histogram: tally.hist_s,
        triplet_histogram: tally.hist_t,
    })
}

fn reduce(
    cfg: &TrajectoryConfig,
    setup: &Setup,
    run_one: impl Fn(&mut ChaCha8Rng, &mut Tally) + Sync,
) -> Tally {
    let n_chunks = cfg.n_traj.div_ceil(CHUNK);
    let partials: Vec<Tally> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut tally = Tally::new(setup.records.len(), setup.bins);
            let end = ((c + 1) * CHUNK).min(cfg.n_traj);
            for i in c * CHUNK..end {
                let mut rng = trajectory_rng(cfg.seed, i as u64);
                run_one(&mut rng, &mut tally);
            }
            tally
        })
        .collect();
    let mut total = Tally::new(setup.records.len(), setup.bins);
    for p in &partials {
        total.merge(p);
    }
    total
}

/// Measurement unraveling, carried out in the eigenbasis of `H` so that
/// coherent motion over any interval is a diagonal phase.
struct MeasurementModel {
    energies: Vec<f64>,
    /// `U† Q U` and `U† (E − Q) U` for both channels, row-major.
    q_s: Vec<Complex64>,
    q_t: Vec<Complex64>,
    not_s: Vec<Complex64>,
    not_t: Vec<Complex64>,
    p_s: f64,
    p_t: f64,
    /// Initial components expressed in the eigenbasis.
    initial: Vec<ComplexVec>,
}

impl MeasurementModel {
    fn new(sys: &SpinSystem, rates: RateConstants, setup: &Setup) -> Result<Self> {
        let (energies, u) = sys.hamiltonian().hermitian_eigen()?;
        let ud = u.adjoint();
        let rotate = |m: &ComplexMatrix| to_flat(&(&(&ud * m) * &u));
        let eye = ComplexMatrix::identity(sys.dim());
        let initial = setup
            .components
            .iter()
            .map(|c| {
                (0..setup.dim)
                    .map(|i| (0..setup.dim).map(|k| ud[(i, k)] * c[k]).sum())
                    .collect()
            })
            .collect();
        Ok(Self {
            energies,
            q_s: rotate(sys.q_singlet()),
            q_t: rotate(sys.q_triplet()),
            not_s: rotate(&(&eye - sys.q_singlet())),
            not_t: rotate(&(&eye - sys.q_triplet())),
            p_s: rates.k_s * setup.dt,
            p_t: rates.k_t * setup.dt,
            initial,
        })
    }

    fn advance(&self, phi: &mut [Complex64], tau: f64) {
        if tau == 0.0 {
            return;
        }
        for (z, &e) in phi.iter_mut().zip(&self.energies) {
            *z *= Complex64::from_polar(1.0, -e * tau);
        }
    }

    /// Fires one measurement; returns `true` if the pair reacted.
    fn measure(
        &self,
        phi: &mut [Complex64],
        scratch: &mut [Complex64],
        q: &[Complex64],
        complement: &[Complex64],
        rng: &mut ChaCha8Rng,
    ) -> bool {
        let p_react = expectation(q, phi);
        let v: f64 = rng.random();
        if v < p_react {
            return true;
        }
        mat_vec_into(complement, phi, scratch);
        let nrm = norm_sqr(scratch);
        if nrm <= 1e-300 {
            return true;
        }
        let inv = 1.0 / nrm.sqrt();
        for (p, s) in phi.iter_mut().zip(scratch.iter()) {
            *p = s * inv;
        }
        false
    }

    fn run(&self, setup: &Setup, rng: &mut ChaCha8Rng, tally: &mut Tally) {
        let comp = setup.pick_component(rng);
        let mut phi = self.initial[comp].clone();
        let mut scratch = vec![Complex64::new(0.0, 0.0); setup.dim];
        let mut probe = vec![Complex64::new(0.0, 0.0); setup.dim];
        let mut now = 0u64;
        let mut next_s = geometric(rng, self.p_s);
        let mut next_t = geometric(rng, self.p_t);
        let mut ri = 0usize;
        loop {
            let next_event = next_s.min(next_t);
            while ri < setup.records.len() && setup.records[ri] < next_event {
                probe.copy_from_slice(&phi);
                self.advance(&mut probe, (setup.records[ri] - now) as f64 * setup.dt);
                tally.record(ri, expectation(&self.q_s, &probe), expectation(&self.q_t, &probe));
                ri += 1;
            }
            if next_event > setup.n_steps {
                return;
            }
            self.advance(&mut phi, (next_event - now) as f64 * setup.dt);
            now = next_event;
            if next_s == now {
                if self.measure(&mut phi, &mut scratch, &self.q_s, &self.not_s, rng) {
                    setup.react(tally, Channel::Singlet, now);
                    return;
                }
                next_s = now.saturating_add(geometric(rng, self.p_s));
            }
            if next_t == now {
                if self.measure(&mut phi, &mut scratch, &self.q_t, &self.not_t, rng) {
                    setup.react(tally, Channel::Triplet, now);
                    return;
                }
                next_t = now.saturating_add(geometric(rng, self.p_t));
            }
        }
    }
}

/// Precomputed no-jump path for one initial component.
struct NoJumpPath {
    /// `survival[j] = Π_{i≤j} (1 − dt Γ_i)`, `survival[0] = 1`.
    survival: Vec<f64>,
    /// Singlet share `k_S⟨Q_S⟩/Γ` of the reaction probability at step j (index j−1).
    singlet_share: Vec<f64>,
    /// Normalized populations at each record point.
    record_pops: Vec<(f64, f64)>,
}

struct HaberkornModel {
    paths: Vec<NoJumpPath>,
}

impl HaberkornModel {
    fn new(sys: &SpinSystem, rates: RateConstants, setup: &Setup) -> Result<Self> {
        let generator = &sys.hamiltonian().scale(Complex64::new(0.0, -1.0))
            - &(&sys.q_singlet().scale_real(0.5 * rates.k_s)
                + &sys.q_triplet().scale_real(0.5 * rates.k_t));
        let step = to_flat(&expm(&generator.scale_real(setup.dt))?);
        let q_s = to_flat(sys.q_singlet());
        let q_t = to_flat(sys.q_triplet());
        let n = setup.n_steps as usize;
        let paths = setup
            .components
            .iter()
            .map(|c| {
                let mut psi = c.clone();
                let mut next = vec![Complex64::new(0.0, 0.0); setup.dim];
                let mut survival = Vec::with_capacity(n + 1);
                let mut singlet_share = Vec::with_capacity(n);
                let mut record_pops = Vec::with_capacity(setup.records.len());
                survival.push(1.0);
                let mut ri = 0;
                for j in 0..=n {
                    let ps = expectation(&q_s, &psi);
                    let pt = expectation(&q_t, &psi);
                    while ri < setup.records.len() && setup.records[ri] as usize == j {
                        record_pops.push((ps, pt));
                        ri += 1;
                    }
                    if j == n {
                        break;
                    }
                    let gs = rates.k_s * ps.max(0.0);
                    let gt = rates.k_t * pt.max(0.0);
                    let gamma = gs + gt;
                    let last = survival[j];
                    survival.push(last * (1.0 - setup.dt * gamma).max(0.0));
                    singlet_share.push(if gamma > 0.0 { gs / gamma } else { 0.0 });
                    mat_vec_into(&step, &psi, &mut next);
                    let inv = 1.0 / norm_sqr(&next).sqrt();
                    for (p, x) in psi.iter_mut().zip(&next) {
                        *p = x * inv;
                    }
                }
                NoJumpPath { survival, singlet_share, record_pops }
            })
            .collect();
        Ok(Self { paths })
    }

    fn run(&self, setup: &Setup, rng: &mut ChaCha8Rng, tally: &mut Tally) {
        let path = &self.paths[setup.pick_component(rng)];
        let u = 1.0 - rng.random::<f64>();
        // first step whose survival drops below u
        let react_step = path.survival.partition_point(|&s| s >= u) as u64;
        let reacted = react_step <= setup.n_steps;
        for (ri, &rs) in setup.records.iter().enumerate() {
            if reacted && rs >= react_step {
                break;
            }
            let (ps, pt) = path.record_pops[ri];
            tally.record(ri, ps, pt);
        }
        if reacted {
            let share = path.singlet_share[react_step as usize - 1];
            let channel = if rng.random::<f64>() < share { Channel::Singlet } else { Channel::Triplet };
            setup.react(tally, channel, react_step);
        }
    }
}
