//! Expected Bell-state-measurement statistics for weak coherent pulses.
//!
//! Each party sends a phase-randomized coherent pulse pair in an early and a
//! late time bin. Z-basis states put the whole pulse in one bin; X-basis
//! states split it evenly with relative phase 0 or π; the vacuum sends
//! nothing. Charlie interferes the two arrivals on a balanced beam splitter
//! watched by two threshold detectors, and announces success when exactly
//! one detector clicks in each bin and the two clicks are on different
//! detectors. This pattern projects onto ψ⁻, so Bob flips his bit; a
//! success with equal bit values is an error.
//!
//! Conditional on the relative phase φ between the two pulses every
//! detector/bin output is an independent Poisson variable, so the click
//! probabilities factorize and the gain is a one-dimensional average over
//! φ. The integrand is an entire function of `cos φ`, so the periodic
//! trapezoidal rule converges super-exponentially; the node count is picked
//! from the interference strength so the aliasing error stays below 1e-17.

use std::f64::consts::PI;

use super::{DeviceParams, Intensity, SourceParams};

/// Per-side arrival transmittance and mode overlap for one evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelState {
    /// Alice-to-detector transmittance (channel and measurement module).
    pub eta_a: f64,
    pub eta_b: f64,
    /// Mode indistinguishability ξ ∈ [0, 1].
    pub xi: f64,
}

impl ChannelState {
    pub fn from_device(device: &DeviceParams, xi: f64) -> Self {
        Self {
            eta_a: device.eta_a(),
            eta_b: device.eta_b(),
            xi,
        }
    }

    /// Same channel with both transmittances multiplied by fading factors.
    pub fn faded(&self, fade_a: f64, fade_b: f64) -> Self {
        Self {
            eta_a: self.eta_a * fade_a,
            eta_b: self.eta_b * fade_b,
            xi: self.xi,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Encoding {
    Vacuum,
    Z,
    X,
}

impl Encoding {
    pub fn of(intensity: Intensity) -> Self {
        match intensity {
            Intensity::O => Encoding::Vacuum,
            Intensity::X | Intensity::Y => Encoding::X,
            Intensity::Z => Encoding::Z,
        }
    }

    /// Real (signed) field amplitudes in the (early, late) bins for a bit,
    /// given the mean photon number `m` arriving at the beam splitter.
    pub fn amplitudes(self, m: f64, bit: u8) -> [f64; 2] {
        match self {
            Encoding::Vacuum => [0.0, 0.0],
            Encoding::Z => {
                if bit == 0 {
                    [m.sqrt(), 0.0]
                } else {
                    [0.0, m.sqrt()]
                }
            }
            Encoding::X => {
                let h = (0.5 * m).sqrt();
                if bit == 0 {
                    [h, h]
                } else {
                    [h, -h]
                }
            }
        }
    }
}

/// Expected gain and error gain of one intensity pair.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PairGain {
    pub gain: f64,
    pub error_gain: f64,
}

/// Number of trapezoid nodes for an integrand whose `cos φ` coefficients sum
/// to at most `strength`.
fn node_count(strength: f64) -> usize {
    if strength == 0.0 {
        return 1;
    }
    let half = 0.5 * strength;
    let mut term = 1.0;
    for k in 1..200usize {
        term *= half / k as f64;
        if term < 1e-17 {
            return (k + 1).max(2);
        }
    }
    200
}

/// Success probability of the ψ⁻ pattern for fixed signed amplitudes,
/// averaged over the relative phase.
pub fn success_probability(a: [f64; 2], b: [f64; 2], xi: f64, dark: f64) -> f64 {
    // -ln(1 - d): folds the dark count into the Poisson no-click exponent
    let lambda = -(-dark).ln_1p();
    let c = [
        0.5 * (a[0] * a[0] + b[0] * b[0]),
        0.5 * (a[1] * a[1] + b[1] * b[1]),
    ];
    let sx = xi.sqrt();
    let g = [sx * a[0] * b[0], sx * a[1] * b[1]];
    let nodes = node_count(2.0 * (g[0].abs() + g[1].abs()));

    // integrand is even in φ: nodes k and n-k coincide
    let mut acc = 0.0;
    for k in 0..=nodes / 2 {
        let weight = if k == 0 || 2 * k == nodes { 1.0 } else { 2.0 };
        let cphi = (2.0 * PI * k as f64 / nodes as f64).cos();
        // expm1 of minus each mean; no-click = 1 + q, click = -q
        let q1e = (-(c[0] + g[0] * cphi + lambda)).exp_m1();
        let q2e = (-(c[0] - g[0] * cphi + lambda)).exp_m1();
        let q1l = (-(c[1] + g[1] * cphi + lambda)).exp_m1();
        let q2l = (-(c[1] - g[1] * cphi + lambda)).exp_m1();
        acc += weight
            * (q1e * (1.0 + q2e) * q2l * (1.0 + q1l) + q2e * (1.0 + q1e) * q1l * (1.0 + q2l));
    }
    acc / nodes as f64
}

/// Gain and error gain for intensities `mu_a`, `mu_b` with the given
/// encodings. `misalign` is the probability that a genuine coincidence is
/// recorded with the wrong bit relation.
pub fn pair_gain(
    (mu_a, enc_a): (f64, Encoding),
    (mu_b, enc_b): (f64, Encoding),
    chan: &ChannelState,
    dark: f64,
    misalign: f64,
) -> PairGain {
    let ma = chan.eta_a * mu_a;
    let mb = chan.eta_b * mu_b;
    // flipping both bits maps each configuration onto an equivalent one
    // (bin swap for Z, sign of the late amplitudes for X)
    let prob = |bit_b: u8| {
        success_probability(
            enc_a.amplitudes(ma, 0),
            enc_b.amplitudes(mb, bit_b),
            chan.xi,
            dark,
        )
    };
    let same = prob(0);
    let diff = prob(1);
    PairGain {
        gain: 0.5 * (same + diff),
        error_gain: 0.5 * (misalign * diff + (1.0 - misalign) * same),
    }
}

/// Misalignment that applies to a pair of encodings; pairs without a shared
/// basis carry no bit correlation, so their errors are fixed at one half.
pub fn misalignment_for(enc_a: Encoding, enc_b: Encoding, device: &DeviceParams) -> f64 {
    match (enc_a, enc_b) {
        (Encoding::Z, Encoding::Z) => device.misalign_z,
        (Encoding::X, Encoding::X) => device.misalign_x,
        _ => 0.5,
    }
}

/// Gain table over all sixteen intensity pairs.
pub fn gain_table(
    alice: &SourceParams,
    bob: &SourceParams,
    device: &DeviceParams,
    chan: &ChannelState,
) -> [[PairGain; 4]; 4] {
    let mut out = [[PairGain::default(); 4]; 4];
    for ia in Intensity::ALL {
        for ib in Intensity::ALL {
            let (ea, eb) = (Encoding::of(ia), Encoding::of(ib));
            out[ia.index()][ib.index()] = pair_gain(
                (alice.mu(ia), ea),
                (bob.mu(ib), eb),
                chan,
                device.dark_rate,
                misalignment_for(ea, eb, device),
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vacuum_without_darks_never_succeeds() {
        let p = success_probability([0.0; 2], [0.0; 2], 1.0, 0.0);
        assert_eq!(p, 0.0);
    }

    #[test]
    fn vacuum_pair_is_dark_coincidence() {
        let d: f64 = 3e-3;
        // one dark in each bin on opposite detectors, the other silent
        let expected = 2.0 * (d * (1.0 - d)).powi(2);
        let p = success_probability([0.0; 2], [0.0; 2], 1.0, d);
        assert!((p / expected - 1.0).abs() < 1e-12, "{p} vs {expected}");
    }

    #[test]
    fn z_basis_matches_closed_form() {
        // Alice early, Bob late: no interference, c_e = x/2, c_l = y/2
        let (x, y, d): (f64, f64, f64) = (0.3, 0.2, 1e-4);
        let q = 1.0 - d;
        let closed = 2.0
            * q
            * q
            * (-(x + y) / 2.0).exp()
            * (1.0 - q * (-x / 2.0).exp())
            * (1.0 - q * (-y / 2.0).exp());
        let p = success_probability([x.sqrt(), 0.0], [0.0, y.sqrt()], 1.0, d);
        assert!((p / closed - 1.0).abs() < 1e-12);
    }

    #[test]
    fn x_basis_matches_bessel_form() {
        // closed form: 2[q^2 e^{-(c_e+c_l)} I0(g_e-g_l) - q^3 e^{-(2c_e+c_l)} I0(g_l)
        //             - q^3 e^{-(c_e+2c_l)} I0(g_e) + q^4 e^{-2(c_e+c_l)}]
        fn i0(x: f64) -> f64 {
            let mut term = 1.0;
            let mut sum = 1.0;
            for k in 1..60 {
                term *= (x / 2.0) * (x / 2.0) / (k * k) as f64;
                sum += term;
            }
            sum
        }
        let (ma, mb, d, xi): (f64, f64, f64, f64) = (0.8, 0.5, 0.01, 0.9);
        for (sa, sb) in [(1.0, 1.0), (1.0, -1.0)] {
            let a = [(ma / 2.0).sqrt(), sa * (ma / 2.0).sqrt()];
            let b = [(mb / 2.0).sqrt(), sb * (mb / 2.0).sqrt()];
            let c = [0.5 * (a[0] * a[0] + b[0] * b[0]), 0.5 * (a[1] * a[1] + b[1] * b[1])];
            let g = [xi.sqrt() * a[0] * b[0], xi.sqrt() * a[1] * b[1]];
            let q = 1.0 - d;
            let closed = 2.0
                * (q * q * (-(c[0] + c[1])).exp() * i0(g[0] - g[1])
                    - q.powi(3) * (-(2.0 * c[0] + c[1])).exp() * i0(g[1])
                    - q.powi(3) * (-(c[0] + 2.0 * c[1])).exp() * i0(g[0])
                    + q.powi(4) * (-2.0 * (c[0] + c[1])).exp());
            let p = success_probability(a, b, xi, d);
            assert!((p / closed - 1.0).abs() < 1e-10, "{p} vs {closed}");
        }
    }

    #[test]
    fn balanced_x_pair_error_floor_is_quarter() {
        // low intensity, perfect overlap, no darks: E -> 1/4
        let chan = ChannelState {
            eta_a: 1.0,
            eta_b: 1.0,
            xi: 1.0,
        };
        let g = pair_gain((1e-4, Encoding::X), (1e-4, Encoding::X), &chan, 0.0, 0.0);
        assert!((g.error_gain / g.gain - 0.25).abs() < 1e-3);
    }

    #[test]
    fn flipping_both_bits_is_a_symmetry() {
        let (ma, mb, d, xi) = (0.4, 0.25, 1e-3, 0.93);
        for ea in [Encoding::Vacuum, Encoding::Z, Encoding::X] {
            for eb in [Encoding::Vacuum, Encoding::Z, Encoding::X] {
                for (ba, bb) in [(0, 0), (0, 1)] {
                    let p = success_probability(ea.amplitudes(ma, ba), eb.amplitudes(mb, bb), xi, d);
                    let q = success_probability(ea.amplitudes(ma, 1 - ba), eb.amplitudes(mb, 1 - bb), xi, d);
                    assert!((p - q).abs() <= 1e-15 * p.max(1e-300), "{ea:?} {eb:?}: {p} vs {q}");
                }
            }
        }
    }

    #[test]
    fn node_count_grows_with_strength() {
        assert_eq!(node_count(0.0), 1);
        assert!(node_count(1e-3) <= 8);
        assert!(node_count(5.0) > node_count(0.5));
    }
}
