//! Zeno-limit rate fits, regime classification and the k_T × time sweep.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolve::propagate;
use crate::spinsys::{RateConstants, SpinSystem};
use crate::superop::{Approach, Superoperator};

/// Population band used for the exponential-tail fit.
pub const FIT_WINDOW: (f64, f64) = (0.05, 0.5);
/// Fits below this coefficient of determination are flagged.
pub const MIN_R_SQUARED: f64 = 0.999;
/// Local maxima must exceed this to count towards oscillation.
pub const OSCILLATION_FLOOR: f64 = 1e-3;
pub const MIN_OSCILLATION_PEAKS: usize = 2;
/// Allowed upward step for a curve still to count as monotone.
pub const MONOTONE_TOL: f64 = 1e-6;
/// Zeno when the fitted rate is below this fraction of `min(k_S+k_T, ω)`.
pub const ZENO_RATE_FRACTION: f64 = 0.5;
pub const MIN_CLASSIFY_SAMPLES: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub rate: f64,
    pub r_squared: f64,
    pub window: (f64, f64),
    pub n_points: usize,
    /// `r_squared ≥ MIN_R_SQUARED`.
    pub good_fit: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Oscillatory,
    MonotoneDecay,
    Zeno,
}

/// Least-squares line through `(t, ln p)`.
fn log_linear_fit(points: &[(f64, f64)]) -> Option<RateFit> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let xs = points.iter().map(|p| p.0);
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = xs.clone().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.zip(&ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let ss_res = (syy - slope * sxy).max(0.0);
    let r_squared = if syy > 0.0 { (1.0 - ss_res / syy).clamp(0.0, 1.0) } else { 1.0 };
    let lo = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    Some(RateFit {
        rate: (-slope).max(0.0),
        r_squared,
        window: (lo, hi),
        n_points: points.len(),
        good_fit: r_squared >= MIN_R_SQUARED && slope <= 0.0,
    })
}

/// Single-exponential fit of `pop_s` over the samples with
/// `0.05 ≤ pop_s ≤ 0.5`.
pub fn zeno_rate_fit(times: &[f64], pop_s: &[f64]) -> Result<RateFit> {
    if times.len() != pop_s.len() {
        return Err(Error::DimensionMismatch { expected: times.len(), found: pop_s.len() });
    }
    let points: Vec<(f64, f64)> = times
        .iter()
        .zip(pop_s)
        .filter(|(_, &p)| (FIT_WINDOW.0..=FIT_WINDOW.1).contains(&p))
        .map(|(&t, &p)| (t, p))
        .collect();
    log_linear_fit(&points).ok_or(Error::EmptyFitWindow)
}

/// Oscillatory, monotone decay or Zeno-suppressed, for a singlet
/// population curve of a system with total rate `k_S + k_T` and mixing
/// frequency `omega`.
pub fn classify_regime(times: &[f64], pop_s: &[f64], total_rate: f64, omega: f64) -> Result<Regime> {
    if times.len() != pop_s.len() {
        return Err(Error::DimensionMismatch { expected: times.len(), found: pop_s.len() });
    }
    if pop_s.len() < MIN_CLASSIFY_SAMPLES {
        return Err(Error::TooFewSamples { got: pop_s.len(), need: MIN_CLASSIFY_SAMPLES });
    }
    let peaks = pop_s
        .windows(3)
        .filter(|w| w[1] > w[0] && w[1] > w[2] && w[1] > OSCILLATION_FLOOR)
        .count();
    if peaks >= MIN_OSCILLATION_PEAKS {
        return Ok(Regime::Oscillatory);
    }
    let monotone = pop_s.windows(2).all(|w| w[1] <= w[0] + MONOTONE_TOL);
    if monotone {
        // the tail window may never be reached when suppression is strong
        let rate = match zeno_rate_fit(times, pop_s) {
            Ok(fit) => Some(fit.rate),
            Err(_) => {
                let pts: Vec<(f64, f64)> = times
                    .iter()
                    .zip(pop_s)
                    .filter(|(_, &p)| p > 0.0)
                    .map(|(&t, &p)| (t, p))
                    .collect();
                log_linear_fit(&pts).map(|f| f.rate)
            }
        };
        let scale = total_rate.min(omega.abs());
        if let Some(rate) = rate {
            if rate < ZENO_RATE_FRACTION * scale {
                return Ok(Regime::Zeno);
            }
        }
    }
    Ok(Regime::MonotoneDecay)
}

pub fn linspace(start: f64, stop: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![start],
        _ => (0..count)
            .map(|i| start + (stop - start) * i as f64 / (count - 1) as f64)
            .collect(),
    }
}

/// `10^x` for `x` evenly spaced on `[log10_start, log10_stop]`.
pub fn log_space(log10_start: f64, log10_stop: f64, count: usize) -> Vec<f64> {
    linspace(log10_start, log10_stop, count).into_iter().map(|x| 10f64.powf(x)).collect()
}

/// `k_T/ω` from 10⁻² to 10³ at 51 points.
pub fn default_kt_grid() -> Vec<f64> {
    log_space(-2.0, 3.0, 51)
}

/// `t·ω` from 0 to 20 at 401 points.
pub fn default_time_grid() -> Vec<f64> {
    linspace(0.0, 20.0, 401)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApproachSurface {
    pub approach: Approach,
    /// `pop_s[k][t]` on the sweep grids.
    pub pop_s: Vec<Vec<f64>>,
    /// Tail fit per `k_T` column, rate in units of ω.
    pub fits: Vec<Option<RateFit>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub omega: f64,
    pub kt_over_omega: Vec<f64>,
    pub t_omega: Vec<f64>,
    pub surfaces: Vec<ApproachSurface>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfaceDifference {
    pub kt_index: usize,
    pub t_index: usize,
    pub log10_kt_over_omega: f64,
    pub t_omega: f64,
    pub value: f64,
}

impl SweepResult {
    pub fn log10_kt_over_omega(&self) -> Vec<f64> {
        self.kt_over_omega.iter().map(|k| k.log10()).collect()
    }

    pub fn surface(&self, approach: Approach) -> Option<&ApproachSurface> {
        self.surfaces.iter().find(|s| s.approach == approach)
    }

    /// Location of the largest pointwise `|pop_s(Haberkorn) − pop_s(measurement)|`.
    pub fn max_difference(&self) -> Option<SurfaceDifference> {
        let h = self.surface(Approach::Haberkorn)?;
        let m = self.surface(Approach::Measurement)?;
        let mut best: Option<SurfaceDifference> = None;
        for (k, (hr, mr)) in h.pop_s.iter().zip(&m.pop_s).enumerate() {
            for (t, (a, b)) in hr.iter().zip(mr).enumerate() {
                let d = (a - b).abs();
                if best.is_none_or(|b| d > b.value) {
                    best = Some(SurfaceDifference {
                        kt_index: k,
                        t_index: t,
                        log10_kt_over_omega: self.kt_over_omega[k].log10(),
                        t_omega: self.t_omega[t],
                        value: d,
                    });
                }
            }
        }
        best
    }

    /// Per-column time-integrated `|Δpop_s|` (trapezoidal, in units of 1/ω).
    pub fn integrated_difference(&self) -> Option<Vec<f64>> {
        let h = self.surface(Approach::Haberkorn)?;
        let m = self.surface(Approach::Measurement)?;
        Some(
            h.pop_s
                .iter()
                .zip(&m.pop_s)
                .map(|(hr, mr)| {
                    let d: Vec<f64> = hr.iter().zip(mr).map(|(a, b)| (a - b).abs()).collect();
                    self.t_omega
                        .windows(2)
                        .zip(d.windows(2))
                        .map(|(t, y)| 0.5 * (t[1] - t[0]) * (y[0] + y[1]))
                        .sum()
                })
                .collect(),
        )
    }
}

/// Singlet population surfaces over `k_T/ω` × `t·ω` for a singlet-born
/// pair with `k_S = 0`.
pub fn figure2_sweep(
    omega: f64,
    kt_over_omega: &[f64],
    t_omega: &[f64],
    approaches: &[Approach],
) -> Result<SweepResult> {
    if !omega.is_finite() || omega == 0.0 {
        return Err(Error::UnsupportedSystem("sweep needs a finite nonzero omega".into()));
    }
    if kt_over_omega.is_empty() || t_omega.is_empty() {
        return Err(Error::TooFewSamples { got: 0, need: 1 });
    }
    let sys = SpinSystem::minimal_two_level(omega)?;
    let rho0 = sys.singlet_state()?;
    let scale = omega.abs();
    let times: Vec<f64> = t_omega.iter().map(|x| x / scale).collect();

    let surfaces = approaches
        .iter()
        .map(|&approach| {
            let columns = kt_over_omega
                .par_iter()
                .map(|&ratio| {
                    let rates = RateConstants::new(0.0, ratio * scale)?;
                    let s = Superoperator::for_approach(approach, &sys, rates)?;
                    let res = propagate(&s, &rho0, &times)?;
                    // no reaction, nothing decays: a fit would only track cos²
                    let fit = if ratio > 0.0 { zeno_rate_fit(t_omega, &res.pop_s).ok() } else { None };
                    Ok((res.pop_s, fit))
                })
                .collect::<Result<Vec<_>>>()?;
            let (pop_s, fits) = columns.into_iter().unzip();
            Ok(ApproachSurface { approach, pop_s, fits })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(SweepResult {
        omega,
        kt_over_omega: kt_over_omega.to_vec(),
        t_omega: t_omega.to_vec(),
        surfaces,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn singlet_curve(approach: Approach, kt: f64, t_stop: f64, count: usize) -> (Vec<f64>, Vec<f64>) {
        let sys = SpinSystem::minimal_two_level(1.0).unwrap();
        let s = Superoperator::for_approach(approach, &sys, RateConstants::new(0.0, kt).unwrap())
            .unwrap();
        let times = linspace(0.0, t_stop, count);
        let res = propagate(&s, &sys.singlet_state().unwrap(), &times).unwrap();
        (times, res.pop_s)
    }

    #[test]
    fn exact_exponential_fit() {
        let t = linspace(0.0, 20.0, 401);
        let p: Vec<f64> = t.iter().map(|x| (-0.3 * x).exp()).collect();
        let fit = zeno_rate_fit(&t, &p).unwrap();
        assert!((fit.rate - 0.3).abs() < 1e-6);
        assert!(fit.r_squared > 1.0 - 1e-9);
        assert!(fit.good_fit);
        assert!(fit.window.0 >= 2.3 && fit.window.1 <= 10.0);
    }

    #[test]
    fn empty_window_is_an_error() {
        let t = linspace(0.0, 1.0, 10);
        let p = vec![0.9; 10];
        assert_eq!(zeno_rate_fit(&t, &p), Err(Error::EmptyFitWindow));
    }

    #[test]
    fn zeno_limit_rates() {
        let (t, m) = singlet_curve(Approach::Measurement, 100.0, 200.0, 2001);
        let fm = zeno_rate_fit(&t, &m).unwrap();
        assert!((fm.rate - 0.02).abs() <= 0.05 * 0.02, "measurement {}", fm.rate);
        let (t, h) = singlet_curve(Approach::Haberkorn, 100.0, 200.0, 2001);
        let fh = zeno_rate_fit(&t, &h).unwrap();
        assert!((fh.rate - 0.04).abs() <= 0.05 * 0.04, "haberkorn {}", fh.rate);
    }

    #[test]
    fn regimes() {
        let (t, p) = singlet_curve(Approach::Measurement, 0.01, 20.0, 401);
        assert_eq!(classify_regime(&t, &p, 0.01, 1.0).unwrap(), Regime::Oscillatory);
        for approach in Approach::BOTH {
            let (t, p) = singlet_curve(approach, 1000.0, 10.0, 401);
            assert_eq!(classify_regime(&t, &p, 1000.0, 1.0).unwrap(), Regime::Zeno);
            let kt = 10f64.powf(0.5);
            let (t, p) = singlet_curve(approach, kt, 20.0, 401);
            assert_eq!(classify_regime(&t, &p, kt, 1.0).unwrap(), Regime::MonotoneDecay);
        }
        let t = linspace(0.0, 10.0, 200);
        let p: Vec<f64> = t.iter().map(|x| (-x).exp()).collect();
        assert_eq!(classify_regime(&t, &p, 1.0, 1.0).unwrap(), Regime::MonotoneDecay);
        assert!(matches!(
            classify_regime(&t[..50], &p[..50], 1.0, 1.0),
            Err(Error::TooFewSamples { .. })
        ));
    }

    #[test]
    fn sweep_zero_kt_column_is_free_rotation() {
        let t = linspace(0.0, 20.0, 201);
        let sweep = figure2_sweep(1.0, &[0.0, 1.0], &t, &Approach::BOTH).unwrap();
        for s in &sweep.surfaces {
            for (x, p) in t.iter().zip(&s.pop_s[0]) {
                assert!((p - x.cos().powi(2)).abs() < 1e-9);
            }
            assert!(s.fits[0].is_none());
        }
    }

    #[test]
    fn sweep_scales_with_omega() {
        let t = linspace(0.0, 10.0, 51);
        let a = figure2_sweep(1.0, &[3.0], &t, &[Approach::Measurement]).unwrap();
        let b = figure2_sweep(2.5, &[3.0], &t, &[Approach::Measurement]).unwrap();
        for (x, y) in a.surfaces[0].pop_s[0].iter().zip(&b.surfaces[0].pop_s[0]) {
            assert!((x - y).abs() < 1e-10);
        }
        assert!(figure2_sweep(0.0, &[1.0], &t, &[Approach::Haberkorn]).is_err());
    }

    #[test]
    fn zeno_band_ordering_and_rate_ratio() {
        let t = linspace(0.0, 400.0, 801);
        let kt = log_space(2.0, 3.0, 6);
        let sweep = figure2_sweep(1.0, &kt, &t, &Approach::BOTH).unwrap();
        let h = sweep.surface(Approach::Haberkorn).unwrap();
        let m = sweep.surface(Approach::Measurement).unwrap();
        for (hr, mr) in h.pop_s.iter().zip(&m.pop_s) {
            assert!(hr.iter().zip(mr).all(|(a, b)| b >= &(a - 1e-12)));
        }
        let ratio = h.fits[0].unwrap().rate / m.fits[0].unwrap().rate;
        assert!((ratio - 2.0).abs() <= 0.2, "ratio {ratio}");
        // stronger reaction, slower singlet loss
        let rates: Vec<f64> = h.fits.iter().flatten().map(|f| f.rate).collect();
        assert!(rates.windows(2).all(|w| w[1] < w[0]));
    }
}
