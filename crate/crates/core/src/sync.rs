//! Clock synchronization between the two remote sources.
//!
//! The clock offset is a random walk (white frequency noise) whose
//! one-second increment has the standard deviation of the quoted Allan
//! deviation times one second. A feedback loop observes the offset with
//! additive Gaussian estimator noise every `update_interval` and removes
//! `feedback_gain` times the estimate.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{check_positive, check_range, Error, Result};
use crate::seed::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClockModel {
    /// Fractional frequency stability at 1 s.
    pub allan_dev: f64,
    /// Time between feedback corrections (s).
    pub update_interval: f64,
    pub feedback_gain: f64,
    /// Standard deviation of each offset estimate (s).
    pub estimator_noise: f64,
}

impl Default for ClockModel {
    fn default() -> Self {
        Self {
            allan_dev: 8e-14,
            update_interval: 1.0,
            feedback_gain: 0.5,
            estimator_noise: 20e-12,
        }
    }
}

impl ClockModel {
    pub fn validate(&self) -> Result<()> {
        check_positive("allan_dev", self.allan_dev)?;
        check_positive("update_interval", self.update_interval)?;
        if !(self.feedback_gain > 0.0 && self.feedback_gain <= 1.0) {
            return Err(Error::domain(
                "feedback_gain",
                format!("{} not in (0, 1]", self.feedback_gain),
            ));
        }
        check_range("estimator_noise", self.estimator_noise, 0.0, f64::MAX)
    }
}

/// Offset traces sampled once per update interval, before each correction.
#[derive(Debug, Clone, PartialEq)]
pub struct OffsetSeries {
    pub t: Vec<f64>,
    pub free_running: Vec<f64>,
    pub corrected: Vec<f64>,
}

fn std_dev(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

impl OffsetSeries {
    /// Standard deviation of the free-running trace about its mean.
    pub fn free_std(&self) -> f64 {
        std_dev(&self.free_running)
    }

    /// Standard deviation of the corrected trace about its mean.
    pub fn residual_std(&self) -> f64 {
        std_dev(&self.corrected)
    }
}

/// Simulates free-running and feedback-corrected offsets driven by the same
/// noise realization.
pub fn simulate_offset(model: &ClockModel, duration: f64, seed: u64) -> Result<OffsetSeries> {
    model.validate()?;
    if !(duration >= 10.0 * model.update_interval) {
        return Err(Error::domain(
            "duration",
            format!("{duration} shorter than ten update intervals"),
        ));
    }
    let steps = (duration / model.update_interval).floor() as usize;
    let step_std = model.allan_dev * (model.update_interval * 1.0).sqrt();
    let mut rng = rng_from_seed(seed);
    let mut out = OffsetSeries {
        t: Vec::with_capacity(steps),
        free_running: Vec::with_capacity(steps),
        corrected: Vec::with_capacity(steps),
    };
    let (mut free, mut corr) = (0.0, 0.0);
    for k in 1..=steps {
        let w: f64 = rng.sample::<f64, _>(StandardNormal) * step_std;
        let noise: f64 = rng.sample::<f64, _>(StandardNormal) * model.estimator_noise;
        free += w;
        corr += w;
        out.t.push(k as f64 * model.update_interval);
        out.free_running.push(free);
        out.corrected.push(corr);
        corr -= model.feedback_gain * (corr + noise);
    }
    Ok(out)
}

/// Residual timing and frequency mismatch plus pulse parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyncBudget {
    /// Residual timing standard deviation δt (s).
    pub delta_t: f64,
    /// Residual carrier detuning δν (Hz).
    pub delta_nu: f64,
    /// Pulse RMS width Δt (s).
    pub pulse_width: f64,
    /// Spectral RMS width Δν (Hz).
    pub spectral_width: f64,
    /// Detuning of the phase-reference lasers Δν_r (Hz).
    pub ref_detuning: f64,
    /// Separation of the two time bins ΔT (s).
    pub pulse_separation: f64,
}

impl Default for SyncBudget {
    fn default() -> Self {
        let pulse_width = 150e-12;
        Self {
            delta_t: 32e-12,
            delta_nu: 10e6,
            pulse_width,
            // transform limited Gaussian
            spectral_width: 1.0 / (4.0 * PI * pulse_width),
            ref_detuning: 10e6,
            pulse_separation: 3e-9,
        }
    }
}

impl SyncBudget {
    pub fn validate(&self) -> Result<()> {
        check_range("delta_t", self.delta_t, 0.0, f64::MAX)?;
        check_range("delta_nu", self.delta_nu, 0.0, f64::MAX)?;
        check_positive("pulse_width", self.pulse_width)?;
        check_positive("spectral_width", self.spectral_width)?;
        check_range("ref_detuning", self.ref_detuning, 0.0, f64::MAX)?;
        check_positive("pulse_separation", self.pulse_separation)?;
        let tb = self.pulse_width * self.spectral_width;
        if tb < 1.0 / (4.0 * PI) - 1e-6 {
            return Err(Error::domain(
                "spectral_width",
                format!("time-bandwidth product {tb} below 1/(4π)"),
            ));
        }
        Ok(())
    }
}

/// `δt·δν` and whether it sits an order of magnitude under `1/(4π)`.
pub fn budget_product(delta_t: f64, delta_nu: f64) -> (f64, bool) {
    let p = delta_t * delta_nu;
    (p, p < 1.0 / (40.0 * PI))
}

/// Phase drift `2π Δν_r ΔT` (rad) between the two time bins.
pub fn phase_reference_error(ref_detuning: f64, pulse_separation: f64) -> f64 {
    2.0 * PI * ref_detuning * pulse_separation
}

impl SyncBudget {
    pub fn product(&self) -> (f64, bool) {
        budget_product(self.delta_t, self.delta_nu)
    }

    pub fn phase_error(&self) -> f64 {
        phase_reference_error(self.ref_detuning, self.pulse_separation)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn budget_arithmetic() {
        let (p, ok) = budget_product(32e-12, 10e6);
        assert!((p - 3.2e-4).abs() < 1e-16);
        assert!(ok);
        assert_eq!(budget_product(0.0, 5e9), (0.0, true));
        let (p, ok) = budget_product(1e-9, 100e6);
        assert!((p - 0.1).abs() < 1e-15);
        assert!(!ok);
    }

    #[test]
    fn product_is_scale_covariant() {
        let (a, _) = budget_product(32e-12, 10e6);
        let (b, _) = budget_product(32e-12 * 7.3, 10e6 / 7.3);
        assert!((a - b).abs() / a < 1e-12);
        assert_eq!(budget_product(3.0, 5.0).0, budget_product(5.0, 3.0).0);
    }

    #[test]
    fn phase_reference_examples() {
        assert!((phase_reference_error(10e6, 3e-9) - 0.1885).abs() < 5e-5);
        assert_eq!(phase_reference_error(0.0, 3e-9), 0.0);
        assert!((phase_reference_error(5e6, 3e-9) - 0.0942).abs() < 5e-5);
    }

    #[test]
    fn default_budget_is_valid_and_narrow_spectra_rejected() {
        SyncBudget::default().validate().unwrap();
        let b = SyncBudget {
            spectral_width: 1e6,
            ..SyncBudget::default()
        };
        assert!(b.validate().is_err());
    }

    #[test]
    fn perfect_feedback_leaves_one_interval_of_drift() {
        let m = ClockModel {
            feedback_gain: 1.0,
            estimator_noise: 0.0,
            ..ClockModel::default()
        };
        let s = simulate_offset(&m, 20_000.0, 4).unwrap();
        let rms = (s.corrected.iter().map(|x| x * x).sum::<f64>() / s.corrected.len() as f64).sqrt();
        let want = m.allan_dev * m.update_interval.sqrt();
        assert!((rms / want - 1.0).abs() < 0.03, "{rms} vs {want}");
    }

    #[test]
    fn rejects_short_runs_and_bad_gain() {
        assert!(simulate_offset(&ClockModel::default(), 5.0, 1).is_err());
        let m = ClockModel {
            feedback_gain: 0.0,
            ..ClockModel::default()
        };
        assert!(simulate_offset(&m, 100.0, 1).is_err());
    }
}
