//! Independent oracles shared by the integration suites.
#![allow(dead_code)]

use std::f64::consts::PI;

use fsmdi::decoy::{gains::misalignment_for, ChannelState, DeviceParams, Encoding, Intensity, PairGain, SourceParams};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

/// Monte-Carlo estimate of one pair's gain and error gain.
///
/// Each trial draws both global phases and both bits, forms the field at
/// the two beam-splitter outputs in each time bin, and samples photon
/// clicks and dark clicks as separate Bernoulli events.
pub fn mc_pair_gain(
    (mu_a, enc_a): (f64, Encoding),
    (mu_b, enc_b): (f64, Encoding),
    chan: &ChannelState,
    dark: f64,
    misalign: f64,
    trials: u64,
    seed: u64,
) -> PairGain {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ma = chan.eta_a * mu_a;
    let mb = chan.eta_b * mu_b;
    let sx = chan.xi.sqrt();
    let (mut ok, mut err) = (0u64, 0u64);
    for _ in 0..trials {
        let bit_a: u8 = rng.random_range(0..2);
        let bit_b: u8 = rng.random_range(0..2);
        let a = enc_a.amplitudes(ma, bit_a);
        let b = enc_b.amplitudes(mb, bit_b);
        let phi = rng.random::<f64>() * 2.0 * PI - rng.random::<f64>() * 2.0 * PI;
        let (c, s) = (phi.cos(), phi.sin());
        let mut click = [[false; 2]; 2];
        for k in 0..2 {
            // b's field relative to a's: b·e^{iφ}, split into the part that
            // interferes (√ξ) and the part that does not
            let (br, bi) = (sx * b[k] * c, sx * b[k] * s);
            let incoherent = 0.5 * (1.0 - chan.xi) * b[k] * b[k];
            let plus = 0.5 * ((a[k] + br).powi(2) + bi * bi) + incoherent;
            let minus = 0.5 * ((a[k] - br).powi(2) + bi * bi) + incoherent;
            for (d, mean) in [plus, minus].into_iter().enumerate() {
                let photon = rng.random::<f64>() < -(-mean).exp_m1();
                let dark_click = rng.random::<f64>() < dark;
                click[d][k] = photon || dark_click;
            }
        }
        let pattern = (click[0][0] && !click[1][0] && click[1][1] && !click[0][1])
            || (click[1][0] && !click[0][0] && click[0][1] && !click[1][1]);
        if pattern {
            ok += 1;
            let mut wrong = bit_a == bit_b;
            if rng.random::<f64>() < misalign {
                wrong = !wrong;
            }
            if wrong {
                err += 1;
            }
        }
    }
    PairGain {
        gain: ok as f64 / trials as f64,
        error_gain: err as f64 / trials as f64,
    }
}

/// Monte-Carlo gain table over all sixteen pairs.
pub fn mc_gain_table(
    alice: &SourceParams,
    bob: &SourceParams,
    device: &DeviceParams,
    chan: &ChannelState,
    trials: u64,
) -> [[PairGain; 4]; 4] {
    let mut out = [[PairGain::default(); 4]; 4];
    for ia in Intensity::ALL {
        for ib in Intensity::ALL {
            let (ea, eb) = (Encoding::of(ia), Encoding::of(ib));
            out[ia.index()][ib.index()] = mc_pair_gain(
                (alice.mu(ia), ea),
                (bob.mu(ib), eb),
                chan,
                device.dark_rate,
                misalignment_for(ea, eb, device),
                trials,
                1000 + (4 * ia.index() + ib.index()) as u64,
            );
        }
    }
    out
}

/// Photon-number-resolved channel with known yields and error rates.
pub struct SyntheticChannel {
    pub yields: Vec<Vec<f64>>,
    pub errors: Vec<Vec<f64>>,
}

pub const SYNTH_MAX: usize = 40;

fn poisson(mu: f64, n: usize) -> f64 {
    let mut p = (-mu).exp();
    for k in 1..=n {
        p *= mu / k as f64;
    }
    p
}

impl SyntheticChannel {
    /// Threshold-detector-like yields with random perturbations; vacuum on
    /// either side carries no bit correlation (error rate one half).
    pub fn random<R: Rng>(rng: &mut R) -> Self {
        let eta_a = 10f64.powf(-rng.random_range(0.3..3.0));
        let eta_b = 10f64.powf(-rng.random_range(0.3..3.0));
        let dark = 10f64.powf(-rng.random_range(2.0..7.0));
        let mut yields = vec![vec![0.0; SYNTH_MAX + 1]; SYNTH_MAX + 1];
        let mut errors = vec![vec![0.5; SYNTH_MAX + 1]; SYNTH_MAX + 1];
        for n in 0..=SYNTH_MAX {
            for m in 0..=SYNTH_MAX {
                let base = 0.5 * (1.0 - (1.0 - eta_a).powi(n as i32)) * (1.0 - (1.0 - eta_b).powi(m as i32))
                    + dark * (1.0 + n as f64 * eta_a + m as f64 * eta_b);
                yields[n][m] = (base * rng.random_range(0.5..1.5)).min(1.0);
                if n > 0 && m > 0 {
                    errors[n][m] = rng.random_range(0.0..0.5);
                }
            }
        }
        Self { yields, errors }
    }

    /// Expected gain and error gain for a pair of intensities.
    pub fn pair(&self, mu_a: f64, mu_b: f64) -> PairGain {
        let (mut s, mut t) = (0.0, 0.0);
        for n in 0..=SYNTH_MAX {
            let pn = poisson(mu_a, n);
            for m in 0..=SYNTH_MAX {
                let w = pn * poisson(mu_b, m) * self.yields[n][m];
                s += w;
                t += w * self.errors[n][m];
            }
        }
        PairGain { gain: s, error_gain: t }
    }

    pub fn table(&self, alice: &SourceParams, bob: &SourceParams) -> [[PairGain; 4]; 4] {
        let mut out = [[PairGain::default(); 4]; 4];
        for ia in Intensity::ALL {
            for ib in Intensity::ALL {
                out[ia.index()][ib.index()] = self.pair(alice.mu(ia), bob.mu(ib));
            }
        }
        out
    }
}

/// Random valid source with the decoy ordering.
pub fn random_source<R: Rng>(rng: &mut R) -> SourceParams {
    let mu_x = rng.random_range(0.01..0.1);
    let mu_y = mu_x + rng.random_range(0.05..0.3);
    let mu_z = mu_y + rng.random_range(0.05..0.5);
    let w: Vec<f64> = (0..4).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = w.iter().sum();
    SourceParams {
        mu_x,
        mu_y,
        mu_z,
        p_o: w[0] / total,
        p_x: w[1] / total,
        p_y: w[2] / total,
        p_z: 1.0 - (w[0] + w[1] + w[2]) / total,
    }
}

/// Mode overlap by direct quadrature of two Gaussian amplitudes whose
/// intensity has RMS duration `sigma`, offset by `dt` and detuned by `dnu`.
pub fn overlap_quadrature(dt: f64, dnu: f64, sigma: f64) -> f64 {
    let half = 12.0 * sigma + dt.abs();
    let n = 20_000;
    let h = 2.0 * half / n as f64;
    let amp = |t: f64| (-t * t / (4.0 * sigma * sigma)).exp();
    let (mut re, mut im, mut norm) = (0.0, 0.0, 0.0);
    for i in 0..=n {
        let t = -half + i as f64 * h;
        let w = if i == 0 || i == n { 0.5 } else { 1.0 };
        let p = amp(t) * amp(t - dt);
        let ph = 2.0 * PI * dnu * t;
        re += w * p * ph.cos();
        im += w * p * ph.sin();
        norm += w * amp(t) * amp(t);
    }
    (re * re + im * im) / (norm * norm)
}
