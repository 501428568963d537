//! Two-pulse (Hong-Ou-Mandel) interference of independent phase-randomized
//! weak coherent pulses.
//!
//! For coherent states the coincidence dip is bounded by one half: with
//! intensities `I_a`, `I_b` the visibility is `ξ·pol·2 I_a I_b/(I_a+I_b)²`.
//! A delay scan accumulates, slot by slot, the coincidence rate
//! `(I_a+I_b)² (1 - V·dip(δ))`; since sums of independent Poisson counts are
//! Poisson, each delay's total is drawn once from the accumulated mean.

use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::channel::FadingSeries;
use crate::error::{check_range, Error, Result};
use crate::seed::rng_from_seed;
use crate::sync::SyncBudget;

/// Squared overlap of two Gaussian wave packets of RMS duration `sigma`
/// offset by `delta_t` in time and `delta_nu` in carrier frequency.
pub fn mode_overlap(delta_t: f64, delta_nu: f64, pulse_sigma: f64) -> Result<f64> {
    if !(pulse_sigma > 0.0) || !pulse_sigma.is_finite() {
        return Err(Error::domain("pulse_sigma", format!("{pulse_sigma} must be positive")));
    }
    let temporal = (-delta_t * delta_t / (4.0 * pulse_sigma * pulse_sigma)).exp();
    let spectral = (-(2.0 * PI * delta_nu * pulse_sigma).powi(2)).exp();
    Ok(temporal * spectral)
}

/// Inputs of the intensity-level visibility formula.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterferenceInput {
    pub intensity_a: f64,
    pub intensity_b: f64,
    pub overlap_xi: f64,
    pub polarization_overlap: f64,
}

pub fn hom_visibility(input: &InterferenceInput) -> Result<f64> {
    check_range("intensity_a", input.intensity_a, 0.0, f64::MAX)?;
    check_range("intensity_b", input.intensity_b, 0.0, f64::MAX)?;
    check_range("overlap_xi", input.overlap_xi, 0.0, 1.0)?;
    check_range("polarization_overlap", input.polarization_overlap, 0.0, 1.0)?;
    let sum = input.intensity_a + input.intensity_b;
    if sum == 0.0 {
        return Err(Error::Undefined("both intensities are zero".into()));
    }
    Ok(input.overlap_xi * input.polarization_overlap * 2.0 * input.intensity_a * input.intensity_b / (sum * sum))
}

/// `min(p1, p2) / max(p1, p2)`.
pub fn intensity_ratio(p1: f64, p2: f64) -> Result<f64> {
    check_range("p1", p1, 0.0, f64::MAX)?;
    check_range("p2", p2, 0.0, f64::MAX)?;
    let hi = p1.max(p2);
    if hi == 0.0 {
        return Err(Error::Undefined("both powers are zero".into()));
    }
    Ok(p1.min(p2) / hi)
}

/// Options of a delay scan beyond the fading series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HomScanConfig {
    /// Delay offsets (s); must include 0.
    pub delays: Vec<f64>,
    /// Mean photon number per pulse at the beam splitter.
    pub mean_photon: f64,
    pub polarization_overlap: f64,
    /// Expected coincidences per slot at large delay for mean intensities.
    pub coincidences_per_slot: f64,
    pub duration_slots: usize,
    pub ratio_threshold: Option<f64>,
}

impl Default for HomScanConfig {
    fn default() -> Self {
        Self {
            delays: (-10..=10).map(|k| k as f64 * 100e-12).collect(),
            mean_photon: 0.1,
            polarization_overlap: 0.96,
            coincidences_per_slot: 50.0,
            duration_slots: 200_000,
            ratio_threshold: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HomScanResult {
    pub delays: Vec<f64>,
    pub coincidences: Vec<u64>,
    pub visibility: f64,
    pub visibility_error: f64,
    pub retained_fraction: f64,
}

/// Simulates a coincidence-versus-delay scan over fading slots.
pub fn simulate_hom_scan(
    fading_a: &FadingSeries,
    fading_b: &FadingSeries,
    budget: &SyncBudget,
    config: &HomScanConfig,
    seed: u64,
) -> Result<HomScanResult> {
    budget.validate()?;
    let n = config.duration_slots;
    if n == 0 || fading_a.len() < n || fading_b.len() < n {
        return Err(Error::domain(
            "duration_slots",
            format!("{n} slots requested from series of {} / {}", fading_a.len(), fading_b.len()),
        ));
    }
    let zero = config
        .delays
        .iter()
        .position(|&d| d == 0.0)
        .ok_or_else(|| Error::domain("delays", "grid must include zero delay"))?;
    if config.delays.len() < 2 {
        return Err(Error::domain("delays", "need a far delay as reference"));
    }
    check_range("mean_photon", config.mean_photon, f64::MIN_POSITIVE, f64::MAX)?;
    check_range("coincidences_per_slot", config.coincidences_per_slot, f64::MIN_POSITIVE, f64::MAX)?;
    if let Some(t) = config.ratio_threshold {
        check_range("ratio_threshold", t, 0.0, 1.0)?;
    }
    let far = config
        .delays
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .map(|(i, _)| i)
        .expect("non-empty");

    let sigma = budget.pulse_width;
    let xi = mode_overlap(budget.delta_t, budget.delta_nu, sigma)?;
    let dips: Vec<f64> = config
        .delays
        .iter()
        .map(|d| (-d * d / (4.0 * sigma * sigma)).exp())
        .collect();

    // each link normalized to its own mean, so arrivals are balanced on average
    let ta = &fading_a.transmittances[..n];
    let tb = &fading_b.transmittances[..n];
    let mean_a = ta.iter().sum::<f64>() / n as f64;
    let mean_b = tb.iter().sum::<f64>() / n as f64;
    let scale = config.coincidences_per_slot / (4.0 * config.mean_photon * config.mean_photon);

    let mut weight = 0.0;
    let mut dip_weight = 0.0;
    let mut kept = 0usize;
    for (&a, &b) in ta.iter().zip(tb) {
        let ia = config.mean_photon * a / mean_a;
        let ib = config.mean_photon * b / mean_b;
        if let Some(t) = config.ratio_threshold {
            if intensity_ratio(ia, ib)? < t {
                continue;
            }
        }
        let v = hom_visibility(&InterferenceInput {
            intensity_a: ia,
            intensity_b: ib,
            overlap_xi: xi,
            polarization_overlap: config.polarization_overlap,
        })?;
        let s = (ia + ib) * (ia + ib);
        weight += s;
        dip_weight += s * v;
        kept += 1;
    }
    if kept == 0 {
        return Err(Error::EmptySelection(format!(
            "threshold {:?} discarded all {n} slots",
            config.ratio_threshold
        )));
    }

    let mut rng = rng_from_seed(seed);
    let mut coincidences = Vec::with_capacity(dips.len());
    for dip in &dips {
        let mean = scale * (weight - dip_weight * dip);
        let c = if mean > 0.0 {
            Poisson::new(mean)
                .map_err(|e| Error::NonFinite(format!("coincidence mean {mean}: {e}")))?
                .sample(&mut rng) as u64
        } else {
            0
        };
        coincidences.push(c);
    }
    let (c0, cf) = (coincidences[zero] as f64, coincidences[far] as f64);
    if cf == 0.0 {
        return Err(Error::Undefined("no coincidences at the reference delay".into()));
    }
    let ratio = c0 / cf;
    let err = if c0 > 0.0 {
        ratio * (1.0 / c0 + 1.0 / cf).sqrt()
    } else {
        1.0 / cf
    };
    Ok(HomScanResult {
        delays: config.delays.clone(),
        coincidences,
        visibility: 1.0 - ratio,
        visibility_error: err,
        retained_fraction: kept as f64 / n as f64,
    })
}
