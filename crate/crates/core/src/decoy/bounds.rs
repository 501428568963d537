//! Linear-program bounds on the single-photon-pair yield and phase error.
//!
//! Unknowns are the yields `Y_nm` (and error yields `T_nm = e_nm·Y_nm`) for
//! photon numbers `n, m <= n_cut`. Every decoy intensity pair (α, β) over
//! `{o, x, y}²` contributes the constraint
//!
//! ```text
//! S_lo(α,β) - tail(α,β) <= Σ P_n(μ_α) P_m(μ_β) Y_nm <= S_hi(α,β)
//! ```
//!
//! where `tail` is the Poisson mass with `n > n_cut` or `m > n_cut`, whose
//! yields are only known to lie in `[0, 1]`. Z-basis pairs are excluded:
//! multi-photon yields differ between bases, only the single-photon pair is
//! basis independent.
//!
//! `s11_lower = min Y_11` and `e11ph_upper = max T_11 / s11_lower`.
//! Each variable is first given the tightest box implied by any single row
//! and rescaled to `[0, 1]`; each row is scaled by its upper end.

use serde::Serialize;

use super::lp::{LinearProgram, LpStatus, Row};
use super::{Intensity, IntervalStatistics, SourceParams};
use crate::error::{Error, Result};

pub const DEFAULT_N_CUT: usize = 10;

/// Bounds on the single-photon-pair quantities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundsResult {
    pub s11_lower: f64,
    pub e11ph_upper: f64,
    /// Upper bound on the single-photon-pair error yield, before division.
    pub t11_upper: f64,
}

/// Optimality certificates of the two linear programs, on their scaled form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Certificates {
    pub yield_primal_residual: f64,
    pub yield_duality_gap: f64,
    pub error_primal_residual: f64,
    pub error_duality_gap: f64,
}

fn poisson_pmf(mu: f64, n_cut: usize) -> Vec<f64> {
    let mut p = Vec::with_capacity(n_cut + 1);
    let mut term = (-mu).exp();
    p.push(term);
    for n in 1..=n_cut {
        term *= mu / n as f64;
        p.push(term);
    }
    p
}

/// Unscaled program over non-negative variables with unit upper bounds.
struct RawLp {
    n: usize,
    objective: Vec<f64>,
    rows: Vec<Row>,
}

impl RawLp {
    /// Appends the decoy rows for one family of observables whose variables
    /// start at column `offset`.
    fn push_pairs(
        &mut self,
        ranges: &[(Intensity, Intensity, f64, f64)],
        alice: &SourceParams,
        bob: &SourceParams,
        n_cut: usize,
        offset: usize,
        what: &str,
    ) {
        for &(a, b, lo, hi) in ranges {
            let pa = poisson_pmf(alice.mu(a), n_cut);
            let pb = poisson_pmf(bob.mu(b), n_cut);
            let tail = (1.0 - pa.iter().sum::<f64>() * pb.iter().sum::<f64>()).max(0.0);
            let mut coeffs = vec![0.0; self.n];
            for (n, pn) in pa.iter().enumerate() {
                for (m, pm) in pb.iter().enumerate() {
                    coeffs[offset + n * (n_cut + 1) + m] = pn * pm;
                }
            }
            self.rows.push(Row {
                coeffs,
                lo: (lo - tail).max(0.0),
                hi,
                label: format!("{what}_{}{} in [{lo:.6e}, {hi:.6e}]", a.label(), b.label()),
            });
        }
    }

    /// `coef_i x_i + coef_j x_j` in `[lo, hi]`.
    fn push_link(&mut self, i: usize, ci: f64, j: usize, cj: f64, lo: f64, hi: f64, label: String) {
        let mut coeffs = vec![0.0; self.n];
        coeffs[i] = ci;
        coeffs[j] = cj;
        self.rows.push(Row { coeffs, lo, hi, label });
    }

    /// Tightens each variable's box using rows with non-negative
    /// coefficients, rescales variables to `[0, 1]` and rows to unit size.
    fn scale(self) -> Scaled {
        let mut unit = vec![1.0; self.n];
        for row in &self.rows {
            if row.coeffs.iter().all(|&c| c >= 0.0) && row.hi.is_finite() {
                for (u, &c) in unit.iter_mut().zip(&row.coeffs) {
                    if c > 0.0 {
                        *u = f64::min(*u, row.hi / c);
                    }
                }
            }
        }
        let rows = self
            .rows
            .into_iter()
            .map(|row| {
                let coeffs: Vec<f64> = row.coeffs.iter().zip(&unit).map(|(c, u)| c * u).collect();
                let big = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
                let s = if row.hi.is_finite() && row.hi > 0.0 {
                    1.0 / row.hi
                } else if big > 0.0 {
                    1.0 / big
                } else {
                    1.0
                };
                Row {
                    coeffs: coeffs.into_iter().map(|c| c * s).collect(),
                    lo: row.lo * s,
                    hi: row.hi * s,
                    label: row.label,
                }
            })
            .collect();
        let objective = self.objective.iter().zip(&unit).map(|(c, u)| c * u).collect();
        let upper = unit.iter().map(|&u| if u > 0.0 { 1.0 } else { 0.0 }).collect();
        Scaled {
            lp: LinearProgram {
                objective,
                lower: vec![0.0; self.n],
                upper,
                rows,
            },
            unit,
        }
    }
}

struct Scaled {
    lp: LinearProgram,
    /// Physical value of each unit of the scaled variable.
    unit: Vec<f64>,
}

fn solve_target(scaled: &Scaled, target: usize) -> Result<(f64, (f64, f64))> {
    let sol = scaled.lp.solve();
    match sol.status {
        LpStatus::Optimal => {
            let cert = scaled.lp.certificate(&sol.x, &sol.duals);
            Ok((sol.x[target] * scaled.unit[target], cert))
        }
        LpStatus::Infeasible(labels) => Err(Error::Infeasible(format!(
            "violated constraint(s): {}",
            labels.join("; ")
        ))),
        other => Err(Error::Infeasible(format!("decoy LP ended with {other:?}"))),
    }
}

/// Lower bound on `Y_11` and upper bound on the single-photon phase error.
pub fn decoy_bounds(
    stats: &IntervalStatistics,
    alice: &SourceParams,
    bob: &SourceParams,
    n_cut: usize,
) -> Result<BoundsResult> {
    decoy_bounds_with_certificates(stats, alice, bob, n_cut).map(|(b, _)| b)
}

/// As [`decoy_bounds`], also returning the LP optimality certificates.
pub fn decoy_bounds_with_certificates(
    stats: &IntervalStatistics,
    alice: &SourceParams,
    bob: &SourceParams,
    n_cut: usize,
) -> Result<(BoundsResult, Certificates)> {
    if n_cut < 5 {
        return Err(Error::domain("n_cut", format!("{n_cut} < 5")));
    }
    let target = (n_cut + 1) + 1;
    let mut gains = Vec::new();
    let mut errors = Vec::new();
    for a in Intensity::DECOY {
        for b in Intensity::DECOY {
            let iv = stats.get(a, b);
            gains.push((a, b, iv.gain.0, iv.gain.1));
            errors.push((a, b, iv.error_gain.0, iv.error_gain.1));
        }
    }

    let k = (n_cut + 1) * (n_cut + 1);

    let mut y_lp = RawLp {
        n: k,
        objective: vec![0.0; k],
        rows: Vec::new(),
    };
    y_lp.objective[target] = -1.0;
    y_lp.push_pairs(&gains, alice, bob, n_cut, 0, "S");
    let (s11, y_cert) = solve_target(&y_lp.scale(), target)?;
    let s11 = s11.max(0.0);

    // joint program over (Y, T): errors are uncorrelated with a vacuum
    // partner, so T_0m = Y_0m / 2 and T_n0 = Y_n0 / 2; also T_11 <= Y_11
    let mut t_lp = RawLp {
        n: 2 * k,
        objective: vec![0.0; 2 * k],
        rows: Vec::new(),
    };
    t_lp.objective[k + target] = 1.0;
    t_lp.push_pairs(&gains, alice, bob, n_cut, 0, "S");
    t_lp.push_pairs(&errors, alice, bob, n_cut, k, "T");
    for n in 0..=n_cut {
        for m in 0..=n_cut {
            if n == 0 || m == 0 {
                let v = n * (n_cut + 1) + m;
                t_lp.push_link(k + v, 1.0, v, -0.5, 0.0, 0.0, format!("e_{n}{m} = 1/2"));
            }
        }
    }
    t_lp.push_link(k + target, 1.0, target, -1.0, f64::NEG_INFINITY, 0.0, "T_11 <= Y_11".into());
    let (t11, t_cert) = solve_target(&t_lp.scale(), k + target)?;

    let e11 = if s11 > 0.0 { (t11.max(0.0) / s11).min(1.0) } else { 1.0 };
    Ok((
        BoundsResult {
            s11_lower: s11,
            e11ph_upper: e11,
            t11_upper: t11.max(0.0),
        },
        Certificates {
            yield_primal_residual: y_cert.0,
            yield_duality_gap: y_cert.1,
            error_primal_residual: t_cert.0,
            error_duality_gap: t_cert.1,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoy::{DeviceParams, ObservedStatistics, PairGain};

    const A: SourceParams = SourceParams::TABLE1_ALICE;
    const B: SourceParams = SourceParams::TABLE1_BOB;

    #[test]
    fn poisson_pmf_sums_close_to_one() {
        let p = poisson_pmf(0.5, 20);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(poisson_pmf(0.0, 3), vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn zero_gains_give_zero_yield() {
        let table = [[PairGain::default(); 4]; 4];
        let stats = ObservedStatistics::from_gains(&table, &A, &B, 1e12);
        let iv = stats.with_intervals(1e-7).unwrap();
        let b = decoy_bounds(&iv, &A, &B, DEFAULT_N_CUT).unwrap();
        assert_eq!(b.s11_lower, 0.0);
    }

    #[test]
    fn rejects_small_cutoff() {
        let table = [[PairGain::default(); 4]; 4];
        let stats = ObservedStatistics::from_gains(&table, &A, &B, 1e12);
        let iv = stats.exact_intervals();
        assert!(decoy_bounds(&iv, &A, &B, 4).is_err());
    }

    #[test]
    fn inconsistent_statistics_are_reported() {
        let stats = crate::decoy::simulate_gains(&A, &B, &DeviceParams::TABLE1, 1.0).unwrap();
        let mut iv = stats.exact_intervals();
        // vacuum-vacuum gain far above anything the xx pair allows
        iv.pairs[0][0].gain = (0.5, 0.6);
        iv.pairs[1][1].gain = (0.0, 1e-9);
        match decoy_bounds(&iv, &A, &B, DEFAULT_N_CUT) {
            Err(Error::Infeasible(msg)) => assert!(msg.contains("S_"), "{msg}"),
            other => panic!("expected infeasible, got {other:?}"),
        }
    }
}
