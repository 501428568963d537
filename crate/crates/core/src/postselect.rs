//! Slot-level experiment runner and intensity-ratio post-selection.
//!
//! Every slot scales both channel transmittances by that slot's fading
//! samples, evaluates the sixteen pair gains and draws Poisson counts for
//! the expected number of pulse pairs sent in the slot. A slot is kept when
//! the expected X-basis arrival photon numbers of the two sides, inferred
//! from the reference powers, have a min/max ratio at or above the
//! threshold.
//!
//! Records are produced lazily so runs of 10⁷ slots stay in constant
//! memory.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::channel::FadingSeries;
use crate::decoy::{
    analyze, gain_table, ChannelState, DeviceParams, Intensity, ObservedStatistics, SourceParams,
    DEFAULT_N_CUT,
};
use crate::error::{check_range, Error, Result};
use crate::hom::intensity_ratio;
use crate::seed::rng_from_seed;

/// One slot of synthetic experiment data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeSlotRecord {
    pub slot_index: u64,
    /// Reference-laser powers (linear, arbitrary units).
    pub power_a: f64,
    pub power_b: f64,
    /// Successful announcements per sent intensity pair `[alice][bob]`.
    pub counts: [[u32; 4]; 4],
    pub errors: [[u32; 4]; 4],
}

/// Factor applied to Alice's reference power so that, compared with Bob's,
/// the ratio is that of the expected X-basis arrival photon numbers.
pub fn power_calibration(alice: &SourceParams, bob: &SourceParams) -> f64 {
    alice.mu_x / bob.mu_x
}

impl TimeSlotRecord {
    pub fn ratio(&self, calib: f64) -> f64 {
        intensity_ratio(self.power_a * calib, self.power_b).unwrap_or(0.0)
    }
}

/// Fixed inputs of a slot simulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotModel {
    pub alice: SourceParams,
    pub bob: SourceParams,
    pub device: DeviceParams,
    /// Mode overlap of the interfering pulses (timing, spectrum, polarization).
    pub xi: f64,
    pub pulses_per_slot: f64,
}

impl SlotModel {
    pub fn validate(&self) -> Result<()> {
        self.alice.validate()?;
        self.bob.validate()?;
        self.device.validate()?;
        check_range("xi", self.xi, 0.0, 1.0)?;
        check_range("pulses_per_slot", self.pulses_per_slot, 0.0, f64::MAX)
    }

    /// Expected pulse pairs per intensity pair in one slot.
    pub fn sent_per_slot(&self) -> [[f64; 4]; 4] {
        let mut out = [[0.0; 4]; 4];
        for a in Intensity::ALL {
            for b in Intensity::ALL {
                out[a.index()][b.index()] = self.pulses_per_slot * self.alice.prob(a) * self.bob.prob(b);
            }
        }
        out
    }
}

fn poisson<R: Rng>(mean: f64, rng: &mut R) -> u32 {
    if mean <= 0.0 {
        return 0;
    }
    match Poisson::new(mean) {
        Ok(d) => d.sample(rng) as u32,
        Err(_) => 0,
    }
}

/// Lazy stream of slot records.
pub struct SlotRecords<'a> {
    model: SlotModel,
    fading_a: &'a FadingSeries,
    fading_b: &'a FadingSeries,
    /// Channel at each link's mean transmittance.
    base: ChannelState,
    mean_a: f64,
    mean_b: f64,
    sent: [[f64; 4]; 4],
    next: usize,
    rng: ChaCha8Rng,
}

impl Iterator for SlotRecords<'_> {
    type Item = TimeSlotRecord;

    fn next(&mut self) -> Option<TimeSlotRecord> {
        let i = self.next;
        if i >= self.fading_a.len() {
            return None;
        }
        self.next += 1;
        let (ta, tb) = (self.fading_a.transmittances[i], self.fading_b.transmittances[i]);
        let chan = self.base.faded(ta / self.mean_a, tb / self.mean_b);
        let table = gain_table(&self.model.alice, &self.model.bob, &self.model.device, &chan);
        let mut counts = [[0u32; 4]; 4];
        let mut errors = [[0u32; 4]; 4];
        for a in 0..4 {
            for b in 0..4 {
                let n = self.sent[a][b];
                let g = table[a][b];
                let e = poisson(n * g.error_gain, &mut self.rng);
                let ok = poisson(n * (g.gain - g.error_gain).max(0.0), &mut self.rng);
                errors[a][b] = e;
                counts[a][b] = e + ok;
            }
        }
        Some(TimeSlotRecord {
            slot_index: i as u64,
            power_a: ta,
            power_b: tb,
            counts,
            errors,
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.fading_a.len() - self.next;
        (left, Some(left))
    }
}

/// Streams one record per fading slot. The fading series carry the
/// absolute transmittance of each link; the device losses are the mean
/// levels they fluctuate around.
pub fn generate_slot_records<'a>(
    fading_a: &'a FadingSeries,
    fading_b: &'a FadingSeries,
    model: &SlotModel,
    seed: u64,
) -> Result<SlotRecords<'a>> {
    model.validate()?;
    if fading_a.len() != fading_b.len() {
        return Err(Error::domain(
            "fading",
            format!("series lengths differ: {} vs {}", fading_a.len(), fading_b.len()),
        ));
    }
    if fading_a.is_empty() {
        return Err(Error::domain("fading", "no slots"));
    }
    let (mean_a, mean_b) = (fading_a.mean(), fading_b.mean());
    if !(mean_a > 0.0 && mean_b > 0.0) {
        return Err(Error::domain("fading", "mean transmittance must be positive"));
    }
    Ok(SlotRecords {
        model: *model,
        fading_a,
        fading_b,
        base: ChannelState::from_device(&model.device, model.xi),
        mean_a,
        mean_b,
        sent: model.sent_per_slot(),
        next: 0,
        rng: rng_from_seed(seed),
    })
}

/// Keeps the records whose calibrated power ratio reaches `threshold`.
pub fn apply_threshold(
    records: &[TimeSlotRecord],
    threshold: f64,
    calib: f64,
) -> Result<(Vec<TimeSlotRecord>, f64)> {
    check_range("threshold", threshold, 0.0, 1.0)?;
    let kept: Vec<TimeSlotRecord> = records
        .iter()
        .filter(|r| r.ratio(calib) >= threshold)
        .copied()
        .collect();
    let fraction = if records.is_empty() {
        0.0
    } else {
        kept.len() as f64 / records.len() as f64
    };
    Ok((kept, fraction))
}

/// Summed counts over a set of slots.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SlotAggregate {
    pub slots: u64,
    pub counts: [[f64; 4]; 4],
    pub errors: [[f64; 4]; 4],
}

impl SlotAggregate {
    pub fn add(&mut self, r: &TimeSlotRecord) {
        self.slots += 1;
        for a in 0..4 {
            for b in 0..4 {
                self.counts[a][b] += r.counts[a][b] as f64;
                self.errors[a][b] += r.errors[a][b] as f64;
            }
        }
    }

    pub fn merge(&mut self, other: &SlotAggregate) {
        self.slots += other.slots;
        for a in 0..4 {
            for b in 0..4 {
                self.counts[a][b] += other.counts[a][b];
                self.errors[a][b] += other.errors[a][b];
            }
        }
    }

    pub fn statistics(&self, sent_per_slot: &[[f64; 4]; 4]) -> ObservedStatistics {
        let mut sent = [[0.0; 4]; 4];
        for a in 0..4 {
            for b in 0..4 {
                sent[a][b] = sent_per_slot[a][b] * self.slots as f64;
            }
        }
        ObservedStatistics::from_counts(&sent, &self.counts, &self.errors)
    }
}

/// Outcome of the decoy pipeline on one slot selection.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PostSelectionReport {
    pub threshold: f64,
    pub retained_slots: u64,
    pub retained_fraction: f64,
    pub qber_zz: f64,
    pub qber_xx: f64,
    pub rate_per_pulse_valid: f64,
    pub rate_per_pulse_overall: f64,
    /// Set when the selection was empty or the analysis failed.
    pub flag: Option<String>,
}

fn report(
    threshold: f64,
    agg: &SlotAggregate,
    total_slots: u64,
    model: &SlotModel,
) -> PostSelectionReport {
    let fraction = if total_slots > 0 {
        agg.slots as f64 / total_slots as f64
    } else {
        0.0
    };
    let mut out = PostSelectionReport {
        threshold,
        retained_slots: agg.slots,
        retained_fraction: fraction,
        qber_zz: 0.0,
        qber_xx: 0.0,
        rate_per_pulse_valid: 0.0,
        rate_per_pulse_overall: 0.0,
        flag: None,
    };
    if agg.slots == 0 {
        out.flag = Some("empty selection".into());
        return out;
    }
    let stats = agg.statistics(&model.sent_per_slot());
    out.qber_zz = stats.qber(Intensity::Z, Intensity::Z);
    out.qber_xx = stats.qber(Intensity::X, Intensity::X);
    match analyze(&model.alice, &model.bob, &model.device, &stats, DEFAULT_N_CUT) {
        Ok(r) => {
            out.rate_per_pulse_valid = r.rate_per_pulse;
            out.rate_per_pulse_overall = r.rate_per_pulse * fraction;
        }
        Err(e) => out.flag = Some(e.to_string()),
    }
    out
}

/// Aggregates a record stream for every threshold in one pass and runs the
/// decoy pipeline on each selection.
pub fn rates_vs_threshold<I: IntoIterator<Item = TimeSlotRecord>>(
    records: I,
    model: &SlotModel,
    thresholds: &[f64],
) -> Result<Vec<PostSelectionReport>> {
    if thresholds.is_empty() {
        return Err(Error::domain("thresholds", "empty grid"));
    }
    for &t in thresholds {
        check_range("threshold", t, 0.0, 1.0)?;
    }
    let mut sorted: Vec<f64> = thresholds.to_vec();
    sorted.sort_by(f64::total_cmp);
    let calib = power_calibration(&model.alice, &model.bob);
    // bin b holds slots passing exactly the b lowest thresholds
    let mut bins = vec![SlotAggregate::default(); sorted.len() + 1];
    let mut total = 0u64;
    for r in records {
        let ratio = r.ratio(calib);
        let b = sorted.partition_point(|&t| t <= ratio);
        bins[b].add(&r);
        total += 1;
    }
    let mut at = vec![SlotAggregate::default(); sorted.len()];
    let mut acc = SlotAggregate::default();
    for i in (0..sorted.len()).rev() {
        acc.merge(&bins[i + 1]);
        at[i] = acc;
    }
    Ok(thresholds
        .iter()
        .map(|&t| {
            let i = sorted.iter().position(|&s| s == t).expect("threshold present");
            report(t, &at[i], total, model)
        })
        .collect())
}

/// Settings of the full trade-off experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TradeoffConfig {
    pub thresholds: Vec<f64>,
    /// Threshold used for key generation.
    pub key_threshold: f64,
}

impl Default for TradeoffConfig {
    fn default() -> Self {
        Self {
            thresholds: vec![0.0, 0.2, 0.4, 0.5, 0.6, 0.7, 0.8, 0.85, 0.9, 0.95],
            key_threshold: 0.8,
        }
    }
}

/// Post-selected, unselected-baseline and sweep results of one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TradeoffReport {
    pub sweep: Vec<PostSelectionReport>,
    /// Selection at the key threshold.
    pub selected: PostSelectionReport,
    /// The first contiguous block with as many slots as were selected, no
    /// filtering.
    pub baseline: PostSelectionReport,
}

/// Runs the full trade-off: a pass over the powers fixes the selected slot
/// count, a second pass streams the records into the threshold bins and the
/// contiguous baseline block.
pub fn run_tradeoff(
    fading_a: &FadingSeries,
    fading_b: &FadingSeries,
    model: &SlotModel,
    config: &TradeoffConfig,
    seed: u64,
) -> Result<TradeoffReport> {
    check_range("key_threshold", config.key_threshold, 0.0, 1.0)?;
    let calib = power_calibration(&model.alice, &model.bob);
    let kept = fading_a
        .transmittances
        .iter()
        .zip(&fading_b.transmittances)
        .filter(|(&a, &b)| intensity_ratio(a * calib, b).unwrap_or(0.0) >= config.key_threshold)
        .count() as u64;

    let mut grid = config.thresholds.clone();
    if !grid.contains(&config.key_threshold) {
        grid.push(config.key_threshold);
    }
    let mut baseline = SlotAggregate::default();
    let records = generate_slot_records(fading_a, fading_b, model, seed)?.inspect(|r| {
        if r.slot_index < kept {
            baseline.add(r);
        }
    });
    let reports = rates_vs_threshold(records, model, &grid)?;
    let total = fading_a.len() as u64;
    let selected = reports
        .iter()
        .find(|r| r.threshold == config.key_threshold)
        .cloned()
        .expect("key threshold in grid");
    let sweep = reports
        .into_iter()
        .filter(|r| config.thresholds.contains(&r.threshold))
        .collect();
    let mut baseline = report(0.0, &baseline, total, model);
    // the block is a stand-in for the whole run, so its rate is per pulse of
    // its own duration
    baseline.rate_per_pulse_overall = baseline.rate_per_pulse_valid;
    baseline.retained_fraction = 1.0;
    baseline.retained_slots = kept;
    Ok(TradeoffReport {
        sweep,
        selected,
        baseline,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(pulses: f64) -> SlotModel {
        SlotModel {
            alice: SourceParams::TABLE1_ALICE,
            bob: SourceParams::TABLE1_BOB,
            device: DeviceParams::TABLE1,
            xi: 0.95,
            pulses_per_slot: pulses,
        }
    }

    fn series(v: &[f64]) -> FadingSeries {
        FadingSeries {
            transmittances: v.to_vec(),
        }
    }

    #[test]
    fn thirteen_hours_of_millisecond_slots() {
        let slots = (13.4f64 * 3600.0 / 1e-3).round() as u64;
        assert_eq!(slots, 48_240_000);
    }

    #[test]
    fn threshold_extremes() {
        let fa = series(&[0.02, 0.01, 0.03, 0.02]);
        let fb = series(&[0.01, 0.01, 0.02, 0.05]);
        let recs: Vec<_> = generate_slot_records(&fa, &fb, &model(1e4), 1).unwrap().collect();
        let calib = power_calibration(&SourceParams::TABLE1_ALICE, &SourceParams::TABLE1_BOB);
        let (all, f) = apply_threshold(&recs, 0.0, calib).unwrap();
        assert_eq!((all.len(), f), (4, 1.0));
        let (none, f) = apply_threshold(&recs, 1.0, calib).unwrap();
        assert!(none.is_empty() && f == 0.0);
        assert!(apply_threshold(&recs, 1.5, calib).is_err());
    }

    #[test]
    fn records_respect_invariants_and_are_deterministic() {
        let fa = series(&[0.02; 50]);
        let fb = series(&[0.01; 50]);
        let a: Vec<_> = generate_slot_records(&fa, &fb, &model(1e7), 9).unwrap().collect();
        let b: Vec<_> = generate_slot_records(&fa, &fb, &model(1e7), 9).unwrap().collect();
        assert_eq!(a, b);
        for r in &a {
            for x in 0..4 {
                for y in 0..4 {
                    assert!(r.errors[x][y] <= r.counts[x][y]);
                }
            }
            assert!(r.power_a >= 0.0 && r.power_b >= 0.0);
        }
        assert!(generate_slot_records(&fa, &series(&[0.01; 3]), &model(1.0), 1).is_err());
    }

    #[test]
    fn empty_selection_is_flagged() {
        let fa = series(&[0.02, 0.001]);
        let fb = series(&[0.001, 0.02]);
        let recs = generate_slot_records(&fa, &fb, &model(1e4), 1).unwrap();
        let out = rates_vs_threshold(recs, &model(1e4), &[0.99]).unwrap();
        assert_eq!(out[0].retained_slots, 0);
        assert!(out[0].flag.is_some());
        assert_eq!(out[0].rate_per_pulse_valid, 0.0);
    }
}
