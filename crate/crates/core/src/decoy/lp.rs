//! Small dense linear-program solver.
//!
//! Bounded-variable primal simplex on a full tableau. Problems have the form
//!
//! ```text
//! maximize   c·x
//! subject to lo_r <= a_r·x <= hi_r     for each row r
//!            l_j  <= x_j   <= u_j      for each column j
//! ```
//!
//! Each row gets a range slack `s_r = a_r·x`, so the working system is
//! `A x - s = 0` with every variable boxed. Phase one drives one artificial
//! per row to zero; phase two optimizes the real objective with the
//! artificials pinned at zero. Duals are read off the artificial columns,
//! which carry `±B⁻¹` throughout.

const PIVOT_TOL: f64 = 1e-11;
const COST_TOL: f64 = 1e-12;
const FEAS_TOL: f64 = 1e-9;
const MAX_DEGENERATE_DANTZIG: usize = 50;

/// One linear constraint `lo <= coeffs·x <= hi`.
#[derive(Debug, Clone)]
pub struct Row {
    pub coeffs: Vec<f64>,
    pub lo: f64,
    pub hi: f64,
    pub label: String,
}

#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub rows: Vec<Row>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpStatus {
    Optimal,
    /// Labels of rows still violated at the end of phase one.
    Infeasible(Vec<String>),
    Unbounded,
    IterationLimit,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    /// One multiplier per row.
    pub duals: Vec<f64>,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum At {
    Lower,
    Upper,
    Basic,
}

struct Tableau {
    m: usize,
    ncols: usize,
    // m x ncols, row-major: B^-1 [A | -I | D]
    t: Vec<f64>,
    basis: Vec<usize>,
    state: Vec<At>,
    value: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Tableau {
    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.t[i * self.ncols + j]
    }

    fn reduced_costs(&self, cost: &[f64]) -> Vec<f64> {
        let mut d = cost.to_vec();
        for i in 0..self.m {
            let cb = cost[self.basis[i]];
            if cb != 0.0 {
                let row = &self.t[i * self.ncols..(i + 1) * self.ncols];
                for (dj, &tij) in d.iter_mut().zip(row) {
                    *dj -= cb * tij;
                }
            }
        }
        d
    }

    fn pivot(&mut self, r: usize, q: usize) {
        let n = self.ncols;
        let p = self.t[r * n + q];
        for j in 0..n {
            self.t[r * n + j] /= p;
        }
        let pivot_row: Vec<f64> = self.t[r * n..(r + 1) * n].to_vec();
        for i in 0..self.m {
            if i == r {
                continue;
            }
            let f = self.t[i * n + q];
            if f != 0.0 {
                let row = &mut self.t[i * n..(i + 1) * n];
                for (tij, &prj) in row.iter_mut().zip(&pivot_row) {
                    *tij -= f * prj;
                }
                row[q] = 0.0;
            }
        }
    }

    /// Runs simplex iterations maximizing `cost`. Returns Ok(iterations) or
    /// an unbounded / iteration-limit status.
    fn optimize(&mut self, cost: &[f64], max_iter: usize) -> Result<usize, LpStatus> {
        let mut degenerate_run = 0usize;
        for iter in 0..max_iter {
            let d = self.reduced_costs(cost);
            let bland = degenerate_run > MAX_DEGENERATE_DANTZIG;
            let mut enter: Option<(usize, f64)> = None;
            for j in 0..self.ncols {
                let gain = match self.state[j] {
                    At::Basic => continue,
                    At::Lower if d[j] > COST_TOL && self.upper[j] > self.lower[j] => d[j],
                    At::Upper if d[j] < -COST_TOL && self.upper[j] > self.lower[j] => -d[j],
                    _ => continue,
                };
                match enter {
                    None => enter = Some((j, gain)),
                    Some((_, g)) if !bland && gain > g => enter = Some((j, gain)),
                    _ => {}
                }
                if bland && enter.is_some() {
                    break;
                }
            }
            let Some((q, _)) = enter else {
                return Ok(iter);
            };
            let dir = if self.state[q] == At::Lower { 1.0 } else { -1.0 };

            // ratio test; basic var i moves by -dir * theta * t[i][q]
            let mut theta = self.upper[q] - self.lower[q];
            let mut leave: Option<(usize, At)> = None;
            for i in 0..self.m {
                let a = dir * self.at(i, q);
                if a.abs() <= PIVOT_TOL {
                    continue;
                }
                let b = self.basis[i];
                let (room, hit) = if a > 0.0 {
                    (self.value[b] - self.lower[b], At::Lower)
                } else {
                    (self.upper[b] - self.value[b], At::Upper)
                };
                if !room.is_finite() {
                    continue;
                }
                let ratio = room.max(0.0) / a.abs();
                let better = match leave {
                    None => ratio < theta,
                    Some((li, _)) => {
                        ratio < theta - 1e-14
                            || (ratio <= theta + 1e-14
                                && (if bland {
                                    b < self.basis[li]
                                } else {
                                    a.abs() > (dir * self.at(li, q)).abs()
                                }))
                    }
                };
                if better {
                    theta = ratio;
                    leave = Some((i, hit));
                }
            }
            if !theta.is_finite() {
                return Err(LpStatus::Unbounded);
            }
            if theta <= 1e-14 {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
            }

            for i in 0..self.m {
                let b = self.basis[i];
                self.value[b] -= dir * theta * self.at(i, q);
            }
            self.value[q] += dir * theta;

            match leave {
                None => {
                    // bound flip
                    self.state[q] = if dir > 0.0 { At::Upper } else { At::Lower };
                    self.value[q] = if dir > 0.0 { self.upper[q] } else { self.lower[q] };
                }
                Some((r, hit)) => {
                    let out = self.basis[r];
                    self.state[out] = hit;
                    self.value[out] = if hit == At::Lower {
                        self.lower[out]
                    } else {
                        self.upper[out]
                    };
                    self.pivot(r, q);
                    self.basis[r] = q;
                    self.state[q] = At::Basic;
                }
            }
        }
        Err(LpStatus::IterationLimit)
    }
}

impl LinearProgram {
    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn solve(&self) -> LpSolution {
        let n = self.n_vars();
        let m = self.rows.len();
        assert_eq!(self.lower.len(), n);
        assert_eq!(self.upper.len(), n);
        for row in &self.rows {
            assert_eq!(row.coeffs.len(), n, "row `{}` has wrong width", row.label);
            assert!(
                row.lo.is_finite() || row.hi.is_finite(),
                "row `{}` is unconstrained",
                row.label
            );
        }
        // columns: x (n), slacks (m), artificials (m)
        let ncols = n + 2 * m;
        let mut lower = Vec::with_capacity(ncols);
        let mut upper = Vec::with_capacity(ncols);
        lower.extend_from_slice(&self.lower);
        upper.extend_from_slice(&self.upper);
        for row in &self.rows {
            lower.push(row.lo);
            upper.push(row.hi);
        }
        lower.extend(std::iter::repeat_n(0.0, m));
        upper.extend(std::iter::repeat_n(f64::INFINITY, m));

        let mut state = vec![At::Lower; ncols];
        let mut value = vec![0.0; ncols];
        for j in 0..n {
            if lower[j].is_finite() {
                value[j] = lower[j];
            } else if upper[j].is_finite() {
                value[j] = upper[j];
                state[j] = At::Upper;
            } else {
                panic!("free structural variables are not supported");
            }
        }

        let mut t = vec![0.0; m * ncols];
        let mut signs = vec![1.0; m];
        let mut basis = Vec::with_capacity(m);
        for (r, row) in self.rows.iter().enumerate() {
            let activity: f64 = row.coeffs.iter().zip(&value[..n]).map(|(a, x)| a * x).sum();
            // put the slack at the bound closest to the current activity
            let s = n + r;
            let (sval, sstate) = if activity < row.lo {
                (row.lo, At::Lower)
            } else if activity > row.hi {
                (row.hi, At::Upper)
            } else if row.lo.is_finite() {
                (row.lo, At::Lower)
            } else {
                (row.hi, At::Upper)
            };
            value[s] = sval;
            state[s] = sstate;
            // A x - s + sign * w = 0  ->  w = sign * (s - A x) >= 0
            let resid = sval - activity;
            let sign = if resid >= 0.0 { 1.0 } else { -1.0 };
            signs[r] = sign;
            let w = n + m + r;
            value[w] = resid.abs();
            state[w] = At::Basic;
            basis.push(w);
            // tableau row = B^-1 row, with B = diag(sign)
            let tr = &mut t[r * ncols..(r + 1) * ncols];
            for j in 0..n {
                tr[j] = sign * row.coeffs[j];
            }
            tr[s] = -sign;
            tr[w] = 1.0;
        }

        let mut tab = Tableau {
            m,
            ncols,
            t,
            basis,
            state,
            value,
            lower,
            upper,
        };

        let max_iter = 50 * (ncols + m) + 1000;
        let mut phase1 = vec![0.0; ncols];
        for c in phase1.iter_mut().skip(n + m) {
            *c = -1.0;
        }
        let it1 = match tab.optimize(&phase1, max_iter) {
            Ok(k) => k,
            Err(status) => return self.failed(status, n, m),
        };
        let infeas: f64 = (0..m).map(|r| tab.value[n + m + r]).sum();
        let scale = 1.0 + self.rows.iter().map(|r| finite_abs(r.lo).max(finite_abs(r.hi))).fold(0.0, f64::max);
        if infeas > FEAS_TOL * scale {
            let labels = (0..m)
                .filter(|&r| tab.value[n + m + r] > FEAS_TOL * scale / m.max(1) as f64)
                .map(|r| self.rows[r].label.clone())
                .collect();
            return LpSolution {
                status: LpStatus::Infeasible(labels),
                x: tab.value[..n].to_vec(),
                objective: f64::NAN,
                duals: vec![0.0; m],
                iterations: it1,
            };
        }
        // pin artificials at zero
        for r in 0..m {
            let w = n + m + r;
            tab.upper[w] = 0.0;
            if tab.state[w] != At::Basic {
                tab.state[w] = At::Lower;
                tab.value[w] = 0.0;
            }
        }

        let mut cost = vec![0.0; ncols];
        cost[..n].copy_from_slice(&self.objective);
        let it2 = match tab.optimize(&cost, max_iter) {
            Ok(k) => k,
            Err(status) => return self.failed(status, n, m),
        };

        let d = tab.reduced_costs(&cost);
        // column of w_r is sign_r * B^-1 e_r, so y_r = c_B B^-1 e_r = -sign_r * d_w
        let duals = (0..m).map(|r| -signs[r] * d[n + m + r]).collect();
        let x = tab.value[..n].to_vec();
        let objective = self.objective.iter().zip(&x).map(|(c, x)| c * x).sum();
        LpSolution {
            status: LpStatus::Optimal,
            x,
            objective,
            duals,
            iterations: it1 + it2,
        }
    }

    fn failed(&self, status: LpStatus, n: usize, m: usize) -> LpSolution {
        LpSolution {
            status,
            x: vec![f64::NAN; n],
            objective: f64::NAN,
            duals: vec![0.0; m],
            iterations: 0,
        }
    }

    /// Optimality certificate of a candidate primal/dual pair.
    ///
    /// Returns `(primal_residual, duality_gap)`. The primal residual is the
    /// largest bound or row violation. The gap is `D(y) - c·x` where
    /// `D(y) = Σ_j max(d_j l_j, d_j u_j) + Σ_r max(y_r lo_r, y_r hi_r)` with
    /// reduced costs `d = c - Aᵀy`; it is non-negative for any feasible `x`
    /// and zero exactly at an optimal pair.
    pub fn certificate(&self, x: &[f64], duals: &[f64]) -> (f64, f64) {
        let n = self.n_vars();
        let mut primal: f64 = 0.0;
        for j in 0..n {
            primal = primal.max(self.lower[j] - x[j]).max(x[j] - self.upper[j]);
        }
        let mut d = self.objective.clone();
        let mut dual_obj = 0.0;
        for (row, &y) in self.rows.iter().zip(duals) {
            let act: f64 = row.coeffs.iter().zip(x).map(|(a, x)| a * x).sum();
            primal = primal.max(row.lo - act).max(act - row.hi);
            for (dj, a) in d.iter_mut().zip(&row.coeffs) {
                *dj -= y * a;
            }
            dual_obj += support(y, row.lo, row.hi);
        }
        for j in 0..n {
            dual_obj += support(d[j], self.lower[j], self.upper[j]);
        }
        let primal_obj: f64 = self.objective.iter().zip(x).map(|(c, x)| c * x).sum();
        (primal.max(0.0), dual_obj - primal_obj)
    }
}

/// max over v in [lo, hi] of coef * v
fn support(coef: f64, lo: f64, hi: f64) -> f64 {
    if coef > 0.0 {
        if hi.is_finite() {
            coef * hi
        } else {
            f64::INFINITY
        }
    } else if coef < 0.0 {
        if lo.is_finite() {
            coef * lo
        } else {
            f64::INFINITY
        }
    } else {
        0.0
    }
}

fn finite_abs(v: f64) -> f64 {
    if v.is_finite() {
        v.abs()
    } else {
        0.0
    }
}
