//! Wavefront-sensorless adaptive optics.
//!
//! A deformable mirror with Gaussian influence functions is driven by
//! stochastic parallel gradient descent on the measured fiber-coupling
//! efficiency. The loop works in a modal space: each control coordinate is
//! a Zernike coefficient, realized on the mirror through the least-squares
//! actuator pattern that best reproduces that mode. Tip and tilt are taken
//! out by the tracking stage before the loop starts.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{generate_phase_screen, Coupler, PhaseScreen, ScreenGeometry, TurbulenceParams};
use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng_from_seed};

/// Noll index to radial order `n` and signed azimuthal order `m`
/// (positive for cosine terms, negative for sine terms).
pub fn noll_to_nm(j: usize) -> (usize, i64) {
    assert!(j >= 1);
    let mut n = 0usize;
    let mut rem = j - 1;
    while rem > n {
        n += 1;
        rem -= n;
    }
    let m_abs = (n % 2) + 2 * ((rem + (n + 1) % 2) / 2);
    let m = if m_abs == 0 {
        0
    } else if j % 2 == 0 {
        m_abs as i64
    } else {
        -(m_abs as i64)
    };
    (n, m)
}

fn radial(n: usize, m: usize, rho: f64) -> f64 {
    let mut sum = 0.0;
    for k in 0..=(n - m) / 2 {
        let num = factorial(n - k);
        let den = factorial(k) * factorial((n + m) / 2 - k) * factorial((n - m) / 2 - k);
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        sum += sign * num / den * rho.powi((n - 2 * k) as i32);
    }
    sum
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

/// Noll-normalized Zernike polynomial at polar coordinates on the unit disc.
pub fn zernike_value(j: usize, rho: f64, theta: f64) -> f64 {
    let (n, m) = noll_to_nm(j);
    let r = radial(n, m.unsigned_abs() as usize, rho);
    let norm = ((n + 1) as f64).sqrt();
    match m {
        0 => norm * r,
        m if m > 0 => norm * std::f64::consts::SQRT_2 * r * (m as f64 * theta).cos(),
        m => norm * std::f64::consts::SQRT_2 * r * ((-m) as f64 * theta).sin(),
    }
}

/// Zernike modes `Z_2 .. Z_{n_modes+1}` sampled on the aperture pixels of a
/// screen geometry. Inner products are means over the aperture.
#[derive(Debug, Clone)]
pub struct ZernikeBasis {
    pub n_modes: usize,
    pub geometry: ScreenGeometry,
    pub aperture_diameter: f64,
    /// Row-major grid indices touching the aperture.
    pub pixels: Vec<usize>,
    /// Area fraction of each pixel inside the aperture.
    pub weights: Vec<f64>,
    area: f64,
    /// `modes[i]` holds Noll mode `i + 2` on `pixels`.
    pub modes: Vec<Vec<f64>>,
}

impl ZernikeBasis {
    pub fn new(n_modes: usize, geometry: ScreenGeometry, aperture_diameter: f64) -> Result<Self> {
        if n_modes == 0 {
            return Err(Error::domain("n_modes", "need at least one mode"));
        }
        let coupler = Coupler::new(geometry, aperture_diameter, 1.0)?;
        let (pixels, weights, area) = (coupler.pixels, coupler.weights, coupler.area);
        let radius = 0.5 * aperture_diameter;
        let n = geometry.grid_size;
        let polar: Vec<(f64, f64)> = pixels
            .iter()
            .map(|&p| {
                let (x, y) = (geometry.coord(p % n), geometry.coord(p / n));
                ((x * x + y * y).sqrt() / radius, y.atan2(x))
            })
            .collect();
        let modes = (2..n_modes + 2)
            .map(|j| polar.iter().map(|&(r, t)| zernike_value(j, r, t)).collect())
            .collect();
        Ok(Self {
            n_modes,
            geometry,
            aperture_diameter,
            pixels,
            weights,
            area,
            modes,
        })
    }

    /// Mode `noll_index` on the full grid (zero outside the aperture).
    pub fn zernike_eval(&self, noll_index: usize) -> Result<Vec<f64>> {
        if noll_index == 1 {
            return Err(Error::domain("noll_index", "piston is not part of the basis"));
        }
        if noll_index < 2 || noll_index > self.n_modes + 1 {
            return Err(Error::domain(
                "noll_index",
                format!("{noll_index} outside 2..={}", self.n_modes + 1),
            ));
        }
        let size = self.geometry.grid_size;
        let mut grid = vec![0.0; size * size];
        for (&p, &v) in self.pixels.iter().zip(&self.modes[noll_index - 2]) {
            grid[p] = v;
        }
        Ok(grid)
    }

    /// Area-weighted mean over the aperture of `a·b`.
    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).zip(&self.weights).map(|((x, y), w)| w * x * y).sum::<f64>() / self.area
    }

    pub fn gather(&self, screen: &PhaseScreen) -> Vec<f64> {
        self.pixels.iter().map(|&i| screen.grid[i]).collect()
    }

    /// Projection coefficients `a_i = <screen, Z_i>` for Noll `i = 2..`.
    pub fn decompose_wavefront(&self, screen: &PhaseScreen) -> Result<Vec<f64>> {
        if screen.geometry() != self.geometry {
            return Err(Error::domain(
                "screen",
                "screen and basis sample different grids",
            ));
        }
        let values = self.gather(screen);
        Ok(self.modes.iter().map(|z| self.inner(&values, z)).collect())
    }

    /// Variance over the aperture left after removing piston and the first
    /// `count` modes with the given coefficients.
    pub fn residual_variance(&self, screen: &PhaseScreen, coeffs: &[f64], count: usize) -> f64 {
        let mut v = self.gather(screen);
        for (a, z) in coeffs.iter().zip(&self.modes).take(count) {
            for (x, zz) in v.iter_mut().zip(z) {
                *x -= a * zz;
            }
        }
        let mean = v.iter().zip(&self.weights).map(|(x, w)| w * x).sum::<f64>() / self.area;
        v.iter().zip(&self.weights).map(|(x, w)| w * (x - mean).powi(2)).sum::<f64>() / self.area
    }
}

/// Deformable mirror with Gaussian influence functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeformableMirror {
    pub n_actuators: usize,
    /// Actuator centers (m) in the aperture plane.
    pub actuator_positions: Vec<(f64, f64)>,
    /// Influence-function width (m): `exp(-(d/width)²)`.
    pub influence_width: f64,
    pub commands: Vec<f64>,
}

impl DeformableMirror {
    /// `n_actuators` points of a hexagonal lattice nearest the aperture
    /// center, scaled so the outermost sits at 90% of the radius.
    pub fn hexagonal(n_actuators: usize, aperture_diameter: f64, width_over_pitch: f64) -> Result<Self> {
        if n_actuators == 0 {
            return Err(Error::domain("n_actuators", "need at least one actuator"));
        }
        let rings = (n_actuators as f64).sqrt() as i64 + 2;
        let mut pts = Vec::new();
        for i in -rings..=rings {
            for j in -rings..=rings {
                let x = i as f64 + 0.5 * j as f64;
                let y = j as f64 * 3f64.sqrt() / 2.0;
                pts.push((x, y));
            }
        }
        pts.sort_by(|a, b| {
            let (ra, rb) = (a.0.hypot(a.1), b.0.hypot(b.1));
            (ra, a.1.atan2(a.0))
                .partial_cmp(&(rb, b.1.atan2(b.0)))
                .expect("finite lattice")
        });
        pts.truncate(n_actuators);
        let outer = pts.iter().map(|p| p.0.hypot(p.1)).fold(0.0f64, f64::max);
        let pitch = if outer > 0.0 {
            0.9 * 0.5 * aperture_diameter / outer
        } else {
            0.5 * aperture_diameter
        };
        Ok(Self {
            n_actuators,
            actuator_positions: pts.iter().map(|p| (p.0 * pitch, p.1 * pitch)).collect(),
            influence_width: width_over_pitch * pitch,
            commands: vec![0.0; n_actuators],
        })
    }

    fn influence(&self, k: usize, x: f64, y: f64) -> f64 {
        let (px, py) = self.actuator_positions[k];
        let d2 = (x - px).powi(2) + (y - py).powi(2);
        (-d2 / (self.influence_width * self.influence_width)).exp()
    }

    /// Influence matrix `[actuator][pixel]` over the given grid pixels.
    pub fn influence_matrix(&self, geometry: ScreenGeometry, pixels: &[usize]) -> Vec<Vec<f64>> {
        let n = geometry.grid_size;
        (0..self.n_actuators)
            .map(|k| {
                pixels
                    .iter()
                    .map(|&p| self.influence(k, geometry.coord(p % n), geometry.coord(p / n)))
                    .collect()
            })
            .collect()
    }
}

/// Mirror surface on a full grid.
pub fn dm_surface(dm: &DeformableMirror, geometry: ScreenGeometry) -> Result<Vec<f64>> {
    if dm.commands.len() != dm.n_actuators || dm.actuator_positions.len() != dm.n_actuators {
        return Err(Error::domain(
            "commands",
            format!(
                "{} commands / {} positions for {} actuators",
                dm.commands.len(),
                dm.actuator_positions.len(),
                dm.n_actuators
            ),
        ));
    }
    let n = geometry.grid_size;
    let mut out = vec![0.0; n * n];
    for (p, v) in out.iter_mut().enumerate() {
        let (x, y) = (geometry.coord(p % n), geometry.coord(p / n));
        *v = dm
            .commands
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != 0.0)
            .map(|(k, c)| c * dm.influence(k, x, y))
            .sum();
    }
    Ok(out)
}

/// SPGD loop settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpgdConfig {
    pub gain: f64,
    pub perturbation: f64,
    pub iterations: usize,
    /// Loop rate (Hz); sets the wall-clock length of a correction run.
    pub loop_rate: f64,
}

impl Default for SpgdConfig {
    fn default() -> Self {
        Self {
            gain: 3.0,
            perturbation: 0.15,
            iterations: 600,
            loop_rate: 1000.0,
        }
    }
}

impl SpgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gain >= 0.0 && self.gain.is_finite()) {
            return Err(Error::domain("gain", format!("{}", self.gain)));
        }
        if !(self.perturbation >= 0.0 && self.perturbation.is_finite()) {
            return Err(Error::domain("perturbation", format!("{}", self.perturbation)));
        }
        if self.iterations == 0 {
            return Err(Error::domain("iterations", "must be at least 1"));
        }
        if !(self.loop_rate > 0.0) {
            return Err(Error::domain("loop_rate", format!("{}", self.loop_rate)));
        }
        Ok(())
    }
}

/// One SPGD iteration on `u`: random signs `s`, two-sided probe
/// `J(u ± δs)`, update `u += γ (J+ - J-) δ s`. Returns `(J+, J-)`.
pub fn spgd_step<R: Rng, F: FnMut(&[f64]) -> f64>(
    u: &mut [f64],
    metric: &mut F,
    config: &SpgdConfig,
    rng: &mut R,
) -> Result<(f64, f64)> {
    let delta = config.perturbation;
    let signs: Vec<f64> = (0..u.len())
        .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
        .collect();
    let plus: Vec<f64> = u.iter().zip(&signs).map(|(x, s)| x + delta * s).collect();
    let minus: Vec<f64> = u.iter().zip(&signs).map(|(x, s)| x - delta * s).collect();
    let (jp, jm) = (metric(&plus), metric(&minus));
    if !jp.is_finite() || !jm.is_finite() {
        return Err(Error::NonFinite(format!("SPGD metric returned {jp} / {jm}")));
    }
    let step = config.gain * (jp - jm) * delta;
    for (x, s) in u.iter_mut().zip(&signs) {
        *x += step * s;
    }
    Ok((jp, jm))
}

/// Result of a full SPGD run.
#[derive(Debug, Clone, PartialEq)]
pub struct SpgdRun {
    /// Best control vector found.
    pub best: Vec<f64>,
    pub best_metric: f64,
    /// Best-so-far metric after each iteration (non-decreasing).
    pub history: Vec<f64>,
}

/// Runs `config.iterations` SPGD steps from `start`, keeping the best point
/// ever evaluated (probes included).
pub fn run_spgd<F: FnMut(&[f64]) -> f64>(
    start: &[f64],
    mut metric: F,
    config: &SpgdConfig,
    seed: u64,
) -> Result<SpgdRun> {
    config.validate()?;
    let mut rng = rng_from_seed(seed);
    let mut u = start.to_vec();
    let first = metric(&u);
    if !first.is_finite() {
        return Err(Error::NonFinite(format!("SPGD metric returned {first}")));
    }
    let mut best = (first, u.clone());
    let mut tracked = |x: &[f64]| -> f64 {
        let j = metric(x);
        if j > best.0 {
            best = (j, x.to_vec());
        }
        j
    };
    let mut history = Vec::with_capacity(config.iterations);
    for _ in 0..config.iterations {
        spgd_step(&mut u, &mut tracked, config, &mut rng)?;
        let j = tracked(&u);
        if !j.is_finite() {
            return Err(Error::NonFinite(format!("SPGD metric returned {j}")));
        }
        history.push(j);
    }
    // turn the iterate trace into the best-so-far trace
    let mut running = first;
    for h in history.iter_mut() {
        running = running.max(*h);
        *h = running;
    }
    let (best_metric, best) = best;
    if let Some(h) = history.last_mut() {
        *h = best_metric;
    }
    Ok(SpgdRun {
        best,
        best_metric,
        history,
    })
}

/// Gain/perturbation pair with the best final value on the quadratic test
/// metric `-||u - u*||²` in `n` dimensions.
pub fn tune_on_quadratic(n: usize, iterations: usize, seed: u64) -> SpgdConfig {
    let target: Vec<f64> = (0..n).map(|i| ((i as f64) * 0.7).sin()).collect();
    let mut best = (f64::NEG_INFINITY, SpgdConfig::default());
    for &gain in &[0.5, 1.0, 2.0, 4.0, 8.0, 16.0] {
        for &perturbation in &[0.01, 0.03, 0.1, 0.3] {
            let config = SpgdConfig {
                gain,
                perturbation,
                iterations,
                loop_rate: 1000.0,
            };
            let metric = |u: &[f64]| -> f64 {
                -u.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
            };
            let mut u = vec![0.0; n];
            let mut rng = rng_from_seed(seed);
            let mut m = metric;
            let mut ok = true;
            for _ in 0..iterations {
                if spgd_step(&mut u, &mut m, &config, &mut rng).is_err() {
                    ok = false;
                    break;
                }
            }
            let j = metric(&u);
            if ok && j.is_finite() && j > best.0 {
                best = (j, config);
            }
        }
    }
    best.1
}

/// Settings of a correction experiment over many screens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AoConfig {
    /// Zernike modes under control, from Noll index 2.
    pub n_modes: usize,
    pub n_actuators: usize,
    /// Influence width over actuator pitch.
    pub influence_width: f64,
    /// Fiber-mode waist over aperture radius.
    pub mode_waist_ratio: f64,
    pub grid_size: usize,
    /// Whether tip and tilt are removed by tracking before the loop starts.
    pub tilt_precorrected: bool,
    pub spgd: SpgdConfig,
}

impl Default for AoConfig {
    fn default() -> Self {
        Self {
            n_modes: 14,
            n_actuators: 40,
            influence_width: 0.75,
            mode_waist_ratio: crate::channel::OPTIMAL_WAIST_RATIO,
            grid_size: 128,
            tilt_precorrected: true,
            spgd: SpgdConfig::default(),
        }
    }
}

/// Per-screen outcome of [`run_ao_loop`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScreenOutcome {
    pub screen_index: usize,
    pub eff_before: f64,
    pub eff_after: f64,
    pub improvement_db: f64,
    /// Best-so-far coupling after each SPGD iteration.
    #[serde(skip)]
    pub history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AoReport {
    pub screens: Vec<ScreenOutcome>,
    pub mean_improvement_db: f64,
}

/// Solves the symmetric positive definite system `a x = b` in place.
fn cholesky_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for j in 0..n {
        let mut d = a[j][j];
        for k in 0..j {
            d -= a[j][k] * a[j][k];
        }
        let d = d.max(1e-300).sqrt();
        a[j][j] = d;
        for i in j + 1..n {
            let mut s = a[i][j];
            for k in 0..j {
                s -= a[i][k] * a[j][k];
            }
            a[i][j] = s / d;
        }
    }
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= a[i][k] * b[k];
        }
        b[i] = s / a[i][i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= a[k][i] * b[k];
        }
        b[i] = s / a[i][i];
    }
    b
}

/// Mirror realization of each controlled mode on the aperture pixels:
/// least-squares actuator fit (lightly regularized), then the resulting
/// surface.
fn modal_surfaces(basis: &ZernikeBasis, dm: &DeformableMirror) -> Vec<Vec<f64>> {
    let infl = dm.influence_matrix(basis.geometry, &basis.pixels);
    let na = dm.n_actuators;
    let mut gram = vec![vec![0.0; na]; na];
    for i in 0..na {
        for j in 0..=i {
            let v = basis.inner(&infl[i], &infl[j]);
            gram[i][j] = v;
            gram[j][i] = v;
        }
    }
    let ridge = 1e-6 * (0..na).map(|i| gram[i][i]).sum::<f64>() / na as f64;
    for (i, row) in gram.iter_mut().enumerate() {
        row[i] += ridge;
    }
    basis
        .modes
        .iter()
        .map(|z| {
            let rhs: Vec<f64> = infl.iter().map(|f| basis.inner(f, z)).collect();
            let cmd = cholesky_solve(gram.clone(), rhs);
            let mut surf = vec![0.0; basis.pixels.len()];
            for (c, f) in cmd.iter().zip(&infl) {
                for (s, v) in surf.iter_mut().zip(f) {
                    *s += c * v;
                }
            }
            surf
        })
        .collect()
}

/// Corrects `n_screens` independent static screens and reports the coupling
/// gain of each over its tilt-compensated starting point.
pub fn run_ao_loop(
    params: &TurbulenceParams,
    config: &AoConfig,
    n_screens: usize,
    seed: u64,
) -> Result<AoReport> {
    params.validate()?;
    config.spgd.validate()?;
    if n_screens == 0 {
        return Err(Error::domain("n_screens", "must be at least 1"));
    }
    let geometry = ScreenGeometry::around_aperture(params, config.grid_size);
    let basis = ZernikeBasis::new(config.n_modes.max(2), geometry, params.aperture_diameter)?;
    let coupler = Coupler::new(geometry, params.aperture_diameter, config.mode_waist_ratio)?;
    debug_assert_eq!(coupler.pixels, basis.pixels);
    let dm = DeformableMirror::hexagonal(config.n_actuators, params.aperture_diameter, config.influence_width)?;
    let surfaces = modal_surfaces(&basis, &dm);
    let controlled = config.n_modes.min(surfaces.len());

    let mut screens = Vec::with_capacity(n_screens);
    for index in 0..n_screens {
        let screen = generate_phase_screen(params, geometry, derive_seed(seed, "ao-screen", index as u64))?;
        let coeffs = basis.decompose_wavefront(&screen)?;
        let mut base = basis.gather(&screen);
        let tracked = if config.tilt_precorrected { 2 } else { 0 };
        for (a, z) in coeffs.iter().zip(&basis.modes).take(tracked) {
            for (v, zz) in base.iter_mut().zip(z) {
                *v -= a * zz;
            }
        }
        let eff_before = coupler.efficiency_of(&base);
        let mut work = vec![0.0; base.len()];
        let metric = |u: &[f64]| -> f64 {
            work.copy_from_slice(&base);
            for (c, s) in u.iter().zip(&surfaces) {
                if *c != 0.0 {
                    for (w, v) in work.iter_mut().zip(s) {
                        *w -= c * v;
                    }
                }
            }
            coupler.efficiency_of(&work)
        };
        let run = run_spgd(
            &vec![0.0; controlled],
            metric,
            &config.spgd,
            derive_seed(seed, "ao-spgd", index as u64),
        )?;
        let eff_after = run.best_metric.max(eff_before);
        screens.push(ScreenOutcome {
            screen_index: index,
            eff_before,
            eff_after,
            improvement_db: 10.0 * (eff_after / eff_before).log10(),
            history: run.history,
        });
    }
    let mean_improvement_db =
        screens.iter().map(|s| s.improvement_db).sum::<f64>() / screens.len() as f64;
    Ok(AoReport {
        screens,
        mean_improvement_db,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geometry(n: usize) -> ScreenGeometry {
        ScreenGeometry {
            grid_size: n,
            physical_extent: 0.1,
        }
    }

    #[test]
    fn noll_indices_match_table() {
        let table = [
            (1, (0, 0)),
            (2, (1, 1)),
            (3, (1, -1)),
            (4, (2, 0)),
            (5, (2, -2)),
            (6, (2, 2)),
            (7, (3, -1)),
            (8, (3, 1)),
            (9, (3, -3)),
            (10, (3, 3)),
            (11, (4, 0)),
            (12, (4, 2)),
            (13, (4, -2)),
            (14, (4, 4)),
            (15, (4, -4)),
            (22, (6, 0)),
        ];
        for (j, nm) in table {
            assert_eq!(noll_to_nm(j), nm, "j = {j}");
        }
    }

    #[test]
    fn tilt_vanishes_at_center_and_piston_is_rejected() {
        assert_eq!(zernike_value(2, 0.0, 0.0), 0.0);
        let b = ZernikeBasis::new(5, geometry(64), 0.1).unwrap();
        assert!(b.zernike_eval(1).is_err());
        assert!(b.zernike_eval(7).is_err());
        assert!(b.zernike_eval(6).is_ok());
    }

    #[test]
    fn modes_orthonormal_on_256_grid() {
        let b = ZernikeBasis::new(14, geometry(256), 0.1).unwrap();
        for i in 0..b.n_modes {
            for j in 0..b.n_modes {
                let v = b.inner(&b.modes[i], &b.modes[j]);
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((v - want).abs() < 1e-3, "<Z{}, Z{}> = {v}", i + 2, j + 2);
            }
        }
    }

    #[test]
    fn decomposition_recovers_single_mode() {
        let b = ZernikeBasis::new(10, geometry(128), 0.1).unwrap();
        let mut s = PhaseScreen::flat(b.geometry);
        for (v, z) in s.grid.iter_mut().zip(b.zernike_eval(5).unwrap()) {
            *v = 3.0 * z;
        }
        let a = b.decompose_wavefront(&s).unwrap();
        for (i, ai) in a.iter().enumerate() {
            let want = if i + 2 == 5 { 3.0 } else { 0.0 };
            assert!((ai - want).abs() < 1e-3, "a_{} = {ai}", i + 2);
        }
        let zero = b.decompose_wavefront(&PhaseScreen::flat(b.geometry)).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
        let other = PhaseScreen::flat(geometry(64));
        assert!(b.decompose_wavefront(&other).is_err());
    }

    #[test]
    fn mirror_is_linear_and_peaks_at_actuator() {
        let g = geometry(64);
        let mut dm = DeformableMirror::hexagonal(40, 0.1, 0.75).unwrap();
        assert_eq!(dm.actuator_positions.len(), 40);
        assert!(dm_surface(&dm, g).unwrap().iter().all(|&v| v == 0.0));
        dm.commands[0] = 1.0;
        let (px, py) = dm.actuator_positions[0];
        assert!((dm.influence(0, px, py) - 1.0).abs() < 1e-12);
        let one = dm_surface(&dm, g).unwrap();
        dm.commands[0] = 2.0;
        dm.commands[5] = -0.5;
        let two = dm_surface(&dm, g).unwrap();
        dm.commands.iter_mut().for_each(|c| *c *= 2.0);
        let four = dm_surface(&dm, g).unwrap();
        for (a, b) in two.iter().zip(&four) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
        assert!(one.iter().all(|v| v.is_finite()));
        dm.commands.pop();
        assert!(dm_surface(&dm, g).is_err());
    }

    #[test]
    fn zero_gain_never_moves() {
        let config = SpgdConfig {
            gain: 0.0,
            ..SpgdConfig::default()
        };
        let mut u = vec![0.3, -0.2];
        let mut rng = rng_from_seed(1);
        let mut m = |x: &[f64]| -x.iter().map(|v| v * v).sum::<f64>();
        for _ in 0..10 {
            spgd_step(&mut u, &mut m, &config, &mut rng).unwrap();
        }
        assert_eq!(u, vec![0.3, -0.2]);
    }

    #[test]
    fn non_finite_metric_aborts() {
        let mut u = vec![0.0];
        let mut rng = rng_from_seed(1);
        let mut m = |_: &[f64]| f64::NAN;
        assert!(spgd_step(&mut u, &mut m, &SpgdConfig::default(), &mut rng).is_err());
    }
}
