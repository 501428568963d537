//! Four-intensity decoy-state MDI-QKD key-rate engine.
//!
//! The pipeline is `simulate_gains -> ObservedStatistics::with_intervals ->
//! decoy_bounds -> key_rate`. [`evaluate`] runs all of it for one parameter
//! set.

mod bounds;
pub mod finite;
pub mod gains;
pub mod lp;

use serde::{Deserialize, Serialize};

use crate::error::{check_range, Error, Result};

pub use bounds::{decoy_bounds, decoy_bounds_with_certificates, BoundsResult, Certificates, DEFAULT_N_CUT};
pub use finite::{binary_entropy, chernoff_interval, CountInterval};
pub use gains::{gain_table, pair_gain, ChannelState, Encoding, PairGain};

/// One of the four intensity settings `{o, x, y, z}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Intensity {
    O,
    X,
    Y,
    Z,
}

impl Intensity {
    pub const ALL: [Intensity; 4] = [Intensity::O, Intensity::X, Intensity::Y, Intensity::Z];
    /// Settings whose statistics feed the decoy bounds.
    pub const DECOY: [Intensity; 3] = [Intensity::O, Intensity::X, Intensity::Y];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> char {
        ['o', 'x', 'y', 'z'][self.index()]
    }
}

/// One party's intensities and sending probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceParams {
    pub mu_x: f64,
    pub mu_y: f64,
    pub mu_z: f64,
    pub p_o: f64,
    pub p_x: f64,
    pub p_y: f64,
    pub p_z: f64,
}

impl SourceParams {
    /// Alice's optimized source from the published device table.
    pub const TABLE1_ALICE: SourceParams = SourceParams {
        mu_x: 0.0394,
        mu_y: 0.155,
        mu_z: 0.335,
        p_o: 0.0327,
        p_x: 0.383,
        p_y: 0.0863,
        p_z: 0.498,
    };

    /// Bob's optimized source from the published device table.
    pub const TABLE1_BOB: SourceParams = SourceParams {
        mu_x: 0.0713,
        mu_y: 0.280,
        mu_z: 0.488,
        p_o: 0.0291,
        p_x: 0.381,
        p_y: 0.0859,
        p_z: 0.504,
    };

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("mu_x", self.mu_x), ("mu_y", self.mu_y), ("mu_z", self.mu_z)] {
            check_range(name, v, 0.0, f64::MAX)?;
        }
        if !(self.mu_x < self.mu_y && self.mu_y < self.mu_z) {
            return Err(Error::domain(
                "mu",
                format!(
                    "intensities must satisfy 0 <= mu_x < mu_y < mu_z, got {} {} {}",
                    self.mu_x, self.mu_y, self.mu_z
                ),
            ));
        }
        let probs = [
            ("p_o", self.p_o),
            ("p_x", self.p_x),
            ("p_y", self.p_y),
            ("p_z", self.p_z),
        ];
        for (name, p) in probs {
            check_range(name, p, 0.0, 1.0)?;
        }
        let total: f64 = probs.iter().map(|(_, p)| p).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::domain(
                "p",
                format!("sending probabilities must sum to 1, got {total}"),
            ));
        }
        Ok(())
    }

    pub fn mu(&self, i: Intensity) -> f64 {
        match i {
            Intensity::O => 0.0,
            Intensity::X => self.mu_x,
            Intensity::Y => self.mu_y,
            Intensity::Z => self.mu_z,
        }
    }

    pub fn prob(&self, i: Intensity) -> f64 {
        match i {
            Intensity::O => self.p_o,
            Intensity::X => self.p_x,
            Intensity::Y => self.p_y,
            Intensity::Z => self.p_z,
        }
    }
}

/// Detector, channel and post-processing constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceParams {
    /// Dark-count probability per detector per time bin.
    pub dark_rate: f64,
    pub misalign_z: f64,
    pub misalign_x: f64,
    pub loss_a_db: f64,
    pub loss_b_db: f64,
    /// Measurement-module loss, applied to both arrivals.
    pub loss_m_db: f64,
    pub ec_efficiency: f64,
    /// Failure probability per estimated observable.
    pub epsilon: f64,
    /// Total number of sent pulse pairs.
    pub n_pulses: f64,
}

impl DeviceParams {
    pub const TABLE1: DeviceParams = DeviceParams {
        dark_rate: 7e-7,
        misalign_z: 0.003,
        misalign_x: 0.03,
        loss_a_db: 17.0,
        loss_b_db: 20.0,
        loss_m_db: 3.0,
        ec_efficiency: 1.10,
        epsilon: 1e-7,
        n_pulses: 1e12,
    };

    pub fn validate(&self) -> Result<()> {
        check_range("dark_rate", self.dark_rate, 0.0, 1.0)?;
        check_range("misalign_z", self.misalign_z, 0.0, 1.0)?;
        check_range("misalign_x", self.misalign_x, 0.0, 1.0)?;
        check_range("loss_a_db", self.loss_a_db, 0.0, f64::MAX)?;
        check_range("loss_b_db", self.loss_b_db, 0.0, f64::MAX)?;
        check_range("loss_m_db", self.loss_m_db, 0.0, f64::MAX)?;
        check_range("ec_efficiency", self.ec_efficiency, 1.0, f64::MAX)?;
        check_range("epsilon", self.epsilon, f64::MIN_POSITIVE, 1.0)?;
        if self.epsilon >= 1.0 {
            return Err(Error::domain("epsilon", "must be < 1"));
        }
        check_range("n_pulses", self.n_pulses, 1.0, f64::MAX)?;
        Ok(())
    }

    pub fn eta_a(&self) -> f64 {
        db_to_linear(self.loss_a_db + self.loss_m_db)
    }

    pub fn eta_b(&self) -> f64 {
        db_to_linear(self.loss_b_db + self.loss_m_db)
    }

    /// Security parameter of the whole protocol, `16 ε`.
    pub fn epsilon_total(&self) -> f64 {
        16.0 * self.epsilon
    }
}

/// Linear transmittance of an attenuation in dB.
pub fn db_to_linear(loss_db: f64) -> f64 {
    10f64.powf(-loss_db / 10.0)
}

/// Combines two independent bit-flip probabilities.
pub fn combine_flips(e1: f64, e2: f64) -> f64 {
    e1 + e2 - 2.0 * e1 * e2
}

/// Flip probability equivalent to a residual reference-phase error `phase`.
pub fn phase_error_flip(phase: f64) -> f64 {
    (0.5 * phase).sin().powi(2)
}

/// Statistics of one sent intensity pair.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct PairStatistics {
    /// Number of pulse pairs sent with this setting.
    pub sent: f64,
    /// Successful-announcement probability `S`.
    pub gain: f64,
    /// `T = S·E`.
    pub error_gain: f64,
    pub count: f64,
    pub error_count: f64,
}

impl PairStatistics {
    pub fn qber(&self) -> f64 {
        if self.gain > 0.0 {
            self.error_gain / self.gain
        } else {
            0.0
        }
    }
}

/// Gains, error gains and counts for all sixteen intensity pairs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObservedStatistics {
    pub pairs: [[PairStatistics; 4]; 4],
}

impl ObservedStatistics {
    /// Expected statistics: counts are `N·p_α·p_β·S`.
    pub fn from_gains(
        table: &[[PairGain; 4]; 4],
        alice: &SourceParams,
        bob: &SourceParams,
        n_pulses: f64,
    ) -> Self {
        let mut pairs = [[PairStatistics::default(); 4]; 4];
        for ia in Intensity::ALL {
            for ib in Intensity::ALL {
                let g = table[ia.index()][ib.index()];
                let sent = n_pulses * alice.prob(ia) * bob.prob(ib);
                pairs[ia.index()][ib.index()] = PairStatistics {
                    sent,
                    gain: g.gain,
                    error_gain: g.error_gain,
                    count: sent * g.gain,
                    error_count: sent * g.error_gain,
                };
            }
        }
        Self { pairs }
    }

    /// Statistics from raw counts; `sent[a][b]` is the number of pairs sent.
    pub fn from_counts(sent: &[[f64; 4]; 4], counts: &[[f64; 4]; 4], errors: &[[f64; 4]; 4]) -> Self {
        let mut pairs = [[PairStatistics::default(); 4]; 4];
        for a in 0..4 {
            for b in 0..4 {
                let n = sent[a][b];
                let (gain, error_gain) = if n > 0.0 {
                    (counts[a][b] / n, errors[a][b] / n)
                } else {
                    (0.0, 0.0)
                };
                pairs[a][b] = PairStatistics {
                    sent: n,
                    gain,
                    error_gain,
                    count: counts[a][b],
                    error_count: errors[a][b],
                };
            }
        }
        Self { pairs }
    }

    pub fn get(&self, a: Intensity, b: Intensity) -> &PairStatistics {
        &self.pairs[a.index()][b.index()]
    }

    pub fn qber(&self, a: Intensity, b: Intensity) -> f64 {
        self.get(a, b).qber()
    }

    /// Applies a Chernoff interval to every count and error count.
    pub fn with_intervals(&self, epsilon: f64) -> Result<IntervalStatistics> {
        let mut pairs = [[PairInterval::default(); 4]; 4];
        for a in 0..4 {
            for b in 0..4 {
                let p = &self.pairs[a][b];
                let scale = if p.sent > 0.0 { 1.0 / p.sent } else { 0.0 };
                let s = chernoff_interval(p.count, epsilon)?.scaled(scale);
                let t = chernoff_interval(p.error_count, epsilon)?.scaled(scale);
                pairs[a][b] = PairInterval {
                    gain: (s.lower, s.upper.min(1.0)),
                    error_gain: (t.lower, t.upper.min(1.0)),
                };
            }
        }
        Ok(IntervalStatistics { pairs })
    }

    /// Zero-width intervals: the infinite-data limit.
    pub fn exact_intervals(&self) -> IntervalStatistics {
        let mut pairs = [[PairInterval::default(); 4]; 4];
        for a in 0..4 {
            for b in 0..4 {
                let p = &self.pairs[a][b];
                pairs[a][b] = PairInterval {
                    gain: (p.gain, p.gain),
                    error_gain: (p.error_gain, p.error_gain),
                };
            }
        }
        IntervalStatistics { pairs }
    }
}

/// Confidence ranges on a pair's gain and error gain.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct PairInterval {
    pub gain: (f64, f64),
    pub error_gain: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntervalStatistics {
    pub pairs: [[PairInterval; 4]; 4],
}

impl IntervalStatistics {
    pub fn get(&self, a: Intensity, b: Intensity) -> &PairInterval {
        &self.pairs[a.index()][b.index()]
    }
}

/// Analytic model of the observed statistics for a parameter set.
///
/// `xi` is the mode overlap of the interfering pulses.
pub fn simulate_gains(
    alice: &SourceParams,
    bob: &SourceParams,
    device: &DeviceParams,
    xi: f64,
) -> Result<ObservedStatistics> {
    alice.validate()?;
    bob.validate()?;
    device.validate()?;
    check_range("xi", xi, 0.0, 1.0)?;
    let chan = ChannelState::from_device(device, xi);
    Ok(simulate_gains_on(alice, bob, device, &chan))
}

/// As [`simulate_gains`] on an explicit channel state (no validation).
pub fn simulate_gains_on(
    alice: &SourceParams,
    bob: &SourceParams,
    device: &DeviceParams,
    chan: &ChannelState,
) -> ObservedStatistics {
    let table = gain_table(alice, bob, device, chan);
    ObservedStatistics::from_gains(&table, alice, bob, device.n_pulses)
}

/// Finite-key rate per pulse pair, clamped at zero.
///
/// `R = p_az p_bz [μ_az μ_bz e^{-(μ_az+μ_bz)} s11 (1 - H(e11)) - f S_zz H(E_zz)]`
pub fn key_rate(
    alice: &SourceParams,
    bob: &SourceParams,
    device: &DeviceParams,
    stats: &ObservedStatistics,
    bounds: &BoundsResult,
) -> f64 {
    let zz = stats.get(Intensity::Z, Intensity::Z);
    let (ma, mb) = (alice.mu_z, bob.mu_z);
    let e11 = bounds.e11ph_upper.clamp(0.0, 0.5);
    let single = ma * mb * (-(ma + mb)).exp() * bounds.s11_lower * (1.0 - finite::binary_entropy_unchecked(e11));
    let leak = device.ec_efficiency * zz.gain * finite::binary_entropy_unchecked(zz.qber().clamp(0.0, 1.0));
    let r = alice.p_z * bob.p_z * (single - leak);
    if r.is_finite() {
        r.max(0.0)
    } else {
        0.0
    }
}

/// Summary of one pass through the key-rate pipeline.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KeyRateReport {
    pub rate_per_pulse: f64,
    pub s11_lower: f64,
    pub e11ph_upper: f64,
    pub t11_upper: f64,
    pub gain_zz: f64,
    pub qber_zz: f64,
    pub qber_xx: f64,
}

/// Runs the decoy pipeline on given statistics.
pub fn analyze(
    alice: &SourceParams,
    bob: &SourceParams,
    device: &DeviceParams,
    stats: &ObservedStatistics,
    n_cut: usize,
) -> Result<KeyRateReport> {
    let intervals = stats.with_intervals(device.epsilon)?;
    let bounds = decoy_bounds(&intervals, alice, bob, n_cut)?;
    Ok(KeyRateReport {
        rate_per_pulse: key_rate(alice, bob, device, stats, &bounds),
        s11_lower: bounds.s11_lower,
        e11ph_upper: bounds.e11ph_upper,
        t11_upper: bounds.t11_upper,
        gain_zz: stats.get(Intensity::Z, Intensity::Z).gain,
        qber_zz: stats.qber(Intensity::Z, Intensity::Z),
        qber_xx: stats.qber(Intensity::X, Intensity::X),
    })
}

/// `simulate_gains` followed by [`analyze`].
pub fn evaluate(
    alice: &SourceParams,
    bob: &SourceParams,
    device: &DeviceParams,
    xi: f64,
) -> Result<KeyRateReport> {
    let stats = simulate_gains(alice, bob, device, xi)?;
    analyze(alice, bob, device, &stats, DEFAULT_N_CUT)
}
