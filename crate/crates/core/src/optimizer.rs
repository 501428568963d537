//! Source-parameter optimization for both parties.
//!
//! Downhill simplex over twelve unconstrained coordinates: per party, the
//! logarithms of `μ_x`, `μ_y - μ_x` and `μ_z - μ_y`, and three logits of
//! `(p_x, p_y, p_z)` against a fixed zero logit for `p_o`. Every point of
//! the search space is therefore a valid source (ordering and simplex hold
//! by construction); intensities above `mu_max` score as invalid.
//!
//! The key rate is zero over large regions, which stalls a simplex. The
//! search therefore ranks points by a continuous surrogate equal to the
//! rate where it is positive and, elsewhere, to the (negative) unclamped
//! rate with the single-photon term continued linearly past `e = 1/2`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::decoy::{evaluate, finite::binary_entropy_unchecked, DeviceParams, KeyRateReport, SourceParams};
use crate::error::{check_range, Error, Result};
use crate::seed::{derive_seed, rng_from_seed};

/// Outcome of one pipeline evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub rate: f64,
    /// Search score; equals `rate` whenever `rate > 0`.
    pub score: f64,
    /// Diagnostic when the pipeline failed (rate and score are then 0 and -inf).
    pub flag: Option<String>,
}

fn surrogate(alice: &SourceParams, bob: &SourceParams, device: &DeviceParams, r: &KeyRateReport) -> f64 {
    if r.rate_per_pulse > 0.0 {
        return r.rate_per_pulse;
    }
    // the bracket of the rate formula per signal-pair photon-pair weight;
    // it has no maximum at p_z -> 0 or μ_z -> 0, unlike the rate itself
    // unclamped ratio, so the score keeps a slope where the bound saturates
    let e = if r.s11_lower > 0.0 { r.t11_upper / r.s11_lower } else { f64::INFINITY };
    let (ma, mb) = (alice.mu_z, bob.mu_z);
    let weight = ma * mb * (-(ma + mb)).exp();
    // past e = 1/2 the penalty is scaled by the ideal single-photon yield
    // rather than s11, so a larger s11 never lowers the score
    let yield_term = if e <= 0.5 {
        r.s11_lower * (1.0 - binary_entropy_unchecked(e))
    } else {
        -(e - 0.5).min(1e3) * device.eta_a() * device.eta_b()
    };
    let leak = device.ec_efficiency * r.gain_zz * binary_entropy_unchecked(r.qber_zz.clamp(0.0, 1.0));
    let bracket = if weight > 0.0 { yield_term - leak / weight } else { f64::NEG_INFINITY };
    // keep non-positive so it never outranks a positive rate
    bracket.min(0.0)
}

/// Runs the decoy pipeline on a parameter set.
pub fn evaluate_candidate(alice: &SourceParams, bob: &SourceParams, device: &DeviceParams, xi: f64) -> Candidate {
    match evaluate(alice, bob, device, xi) {
        Ok(r) => Candidate {
            rate: r.rate_per_pulse,
            score: surrogate(alice, bob, device, &r),
            flag: None,
        },
        Err(e) => Candidate {
            rate: 0.0,
            score: f64::NEG_INFINITY,
            flag: Some(e.to_string()),
        },
    }
}

/// Twelve-coordinate encoding of both parties.
fn encode(s: &SourceParams) -> [f64; 6] {
    let lp = |p: f64| p.max(1e-12).ln() - s.p_o.max(1e-12).ln();
    [
        s.mu_x.max(1e-12).ln(),
        (s.mu_y - s.mu_x).max(1e-12).ln(),
        (s.mu_z - s.mu_y).max(1e-12).ln(),
        lp(s.p_x),
        lp(s.p_y),
        lp(s.p_z),
    ]
}

fn decode(v: &[f64]) -> SourceParams {
    let mu_x = v[0].exp();
    let mu_y = mu_x + v[1].exp();
    let mu_z = mu_y + v[2].exp();
    let m = v[3].max(v[4]).max(v[5]).max(0.0);
    let w = [(-m).exp(), (v[3] - m).exp(), (v[4] - m).exp(), (v[5] - m).exp()];
    let total: f64 = w.iter().sum();
    SourceParams {
        mu_x,
        mu_y,
        mu_z,
        p_o: w[0] / total,
        p_x: w[1] / total,
        p_y: w[2] / total,
        p_z: w[3] / total,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizationProblem {
    pub device: DeviceParams,
    /// Mode overlap assumed for the interference.
    pub xi: f64,
    /// Largest admissible intensity.
    pub mu_max: f64,
    /// Relative spread of simplex scores at which a local search stops.
    pub tolerance: f64,
    /// Evaluations per local search.
    pub max_evals: usize,
    /// Random restarts after the first search from `start`.
    pub restarts: usize,
    pub seed: u64,
    pub start_alice: SourceParams,
    pub start_bob: SourceParams,
}

impl Default for OptimizationProblem {
    fn default() -> Self {
        Self {
            device: DeviceParams::TABLE1,
            xi: 1.0,
            mu_max: 1.0,
            tolerance: 1e-6,
            max_evals: 2000,
            restarts: 7,
            seed: 1,
            start_alice: SourceParams::TABLE1_ALICE,
            start_bob: SourceParams::TABLE1_BOB,
        }
    }
}

impl OptimizationProblem {
    pub fn validate(&self) -> Result<()> {
        self.device.validate()?;
        self.start_alice.validate()?;
        self.start_bob.validate()?;
        check_range("xi", self.xi, 0.0, 1.0)?;
        check_range("mu_max", self.mu_max, f64::MIN_POSITIVE, f64::MAX)?;
        if !(self.tolerance > 0.0) {
            return Err(Error::domain("tolerance", format!("{} must be positive", self.tolerance)));
        }
        if self.max_evals == 0 {
            return Err(Error::domain("max_evals", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizationResult {
    pub alice: SourceParams,
    pub bob: SourceParams,
    pub rate: f64,
    pub start_rate: f64,
    pub evaluations: usize,
}

struct Search<'a> {
    problem: &'a OptimizationProblem,
    evaluations: usize,
    best: Option<(f64, SourceParams, SourceParams)>,
}

impl Search<'_> {
    fn score(&mut self, v: &[f64]) -> f64 {
        let (a, b) = (decode(&v[..6]), decode(&v[6..]));
        self.evaluations += 1;
        if !v.iter().all(|x| x.is_finite()) || a.mu_z > self.problem.mu_max || b.mu_z > self.problem.mu_max {
            return f64::NEG_INFINITY;
        }
        let c = evaluate_candidate(&a, &b, &self.problem.device, self.problem.xi);
        if c.rate > self.best.as_ref().map_or(0.0, |x| x.0) {
            self.best = Some((c.rate, a, b));
        }
        c.score
    }

    /// Nelder-Mead maximization from `x0`; returns evaluations used.
    fn nelder_mead(&mut self, x0: &[f64], step: f64) -> usize {
        let n = x0.len();
        let budget = self.problem.max_evals;
        let start = self.evaluations;
        let used = |s: &Self| s.evaluations - start;
        let mut pts: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
        let f0 = self.score(x0);
        pts.push((x0.to_vec(), f0));
        for i in 0..n {
            let mut x = x0.to_vec();
            x[i] += step;
            let f = self.score(&x);
            pts.push((x, f));
        }
        while used(self) < budget {
            // descending by score
            pts.sort_by(|a, b| b.1.total_cmp(&a.1));
            let (best, worst) = (pts[0].1, pts[n].1);
            if best.is_finite() && worst.is_finite() && (best - worst).abs() <= self.problem.tolerance * best.abs().max(1e-30) {
                break;
            }
            let centroid: Vec<f64> = (0..n)
                .map(|j| pts[..n].iter().map(|p| p.0[j]).sum::<f64>() / n as f64)
                .collect();
            let along = |t: f64, from: &[f64]| -> Vec<f64> {
                centroid.iter().zip(from).map(|(c, w)| c + t * (c - w)).collect()
            };
            let xr = along(1.0, &pts[n].0);
            let fr = self.score(&xr);
            if fr > pts[0].1 {
                let xe = along(2.0, &pts[n].0);
                let fe = self.score(&xe);
                pts[n] = if fe > fr { (xe, fe) } else { (xr, fr) };
            } else if fr > pts[n - 1].1 {
                pts[n] = (xr, fr);
            } else {
                let (xc, fc) = if fr > pts[n].1 {
                    let x = along(0.5, &pts[n].0);
                    let f = self.score(&x);
                    (x, f)
                } else {
                    let x = along(-0.5, &pts[n].0);
                    let f = self.score(&x);
                    (x, f)
                };
                if fc > pts[n].1.max(fr) {
                    pts[n] = (xc, fc);
                } else {
                    let x0 = pts[0].0.clone();
                    for p in pts.iter_mut().skip(1) {
                        let x: Vec<f64> = x0.iter().zip(&p.0).map(|(a, b)| a + 0.5 * (b - a)).collect();
                        let f = self.score(&x);
                        *p = (x, f);
                    }
                }
            }
        }
        used(self)
    }
}

fn random_start<R: Rng>(rng: &mut R) -> Vec<f64> {
    let mut v = Vec::with_capacity(12);
    for _ in 0..2 {
        // μ_x in [0.01, 0.3], increments in [0.03, 0.4] (log-uniform)
        let lu = |rng: &mut R, lo: f64, hi: f64| lo.ln() + rng.random::<f64>() * (hi / lo).ln();
        v.push(lu(rng, 0.01, 0.3));
        v.push(lu(rng, 0.03, 0.3));
        v.push(lu(rng, 0.03, 0.4));
        for _ in 0..3 {
            v.push(rng.sample::<f64, _>(StandardNormal) + 1.0);
        }
    }
    v
}

/// Maximizes the key rate over both parties' sources.
pub fn optimize(problem: &OptimizationProblem) -> Result<OptimizationResult> {
    problem.validate()?;
    let start_rate = evaluate_candidate(&problem.start_alice, &problem.start_bob, &problem.device, problem.xi).rate;
    let mut search = Search {
        problem,
        evaluations: 0,
        best: None,
    };
    let mut x0: Vec<f64> = encode(&problem.start_alice).to_vec();
    x0.extend(encode(&problem.start_bob));
    search.nelder_mead(&x0, 0.2);
    for k in 0..problem.restarts {
        let mut rng = rng_from_seed(derive_seed(problem.seed, "optimizer", k as u64));
        let x = random_start(&mut rng);
        search.nelder_mead(&x, 0.3);
    }
    // polish the best point found with a fresh, smaller simplex
    if let Some((_, a, b)) = search.best {
        let mut x: Vec<f64> = encode(&a).to_vec();
        x.extend(encode(&b));
        search.nelder_mead(&x, 0.05);
    }
    match search.best {
        Some((rate, alice, bob)) => Ok(OptimizationResult {
            alice,
            bob,
            rate,
            start_rate,
            evaluations: search.evaluations,
        }),
        None => Err(Error::NoPositiveRate {
            restarts: problem.restarts,
        }),
    }
}
