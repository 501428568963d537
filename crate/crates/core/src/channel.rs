//! Turbulent free-space link: phase screens, fiber coupling and fading.
//!
//! Screens are drawn by filtering complex white noise with the von Kármán
//! phase spectrum `0.023 r0^{-5/3} (f² + 1/L0²)^{-11/6}` on an FFT grid,
//! plus subharmonic levels down to a tenth of the outer-scale frequency to
//! restore the low-order power the periodic grid misses. The outer scale
//! defaults to ten times the grid extent.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{check_range, Error, Result};
use crate::seed::rng_from_seed;

/// Parameters of one turbulent link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TurbulenceParams {
    /// Fried parameter (m), at `wavelength`.
    pub fried_r0: f64,
    /// Receive aperture diameter (m).
    pub aperture_diameter: f64,
    /// Wavelength (m) at which screens are expressed in radians.
    pub wavelength: f64,
    /// Standard deviation of the log-intensity per slot.
    pub scintillation_sigma: f64,
    /// Mean channel loss (dB).
    pub mean_loss_db: f64,
    /// Length of one fading slot (s).
    pub slot_duration: f64,
    /// Von Kármán outer scale (m); ten screen extents when absent.
    #[serde(default)]
    pub outer_scale: Option<f64>,
}

impl Default for TurbulenceParams {
    fn default() -> Self {
        Self {
            fried_r0: 0.02,
            aperture_diameter: 0.1,
            wavelength: 1550e-9,
            scintillation_sigma: 0.5,
            mean_loss_db: 17.0,
            slot_duration: 1e-3,
            outer_scale: None,
        }
    }
}

impl TurbulenceParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("fried_r0", self.fried_r0),
            ("aperture_diameter", self.aperture_diameter),
            ("wavelength", self.wavelength),
            ("slot_duration", self.slot_duration),
        ] {
            if !(v > 0.0) || v.is_nan() {
                return Err(Error::domain(name, format!("{v} must be positive")));
            }
        }
        if let Some(l0) = self.outer_scale {
            if !(l0 > 0.0) || !l0.is_finite() {
                return Err(Error::domain("outer_scale", format!("{l0} must be positive")));
            }
        }
        check_range("scintillation_sigma", self.scintillation_sigma, 0.0, 10.0)?;
        check_range("mean_loss_db", self.mean_loss_db, 0.0, 1e3)?;
        Ok(())
    }

    /// Mean linear transmittance `10^(-mean_loss_db/10)`.
    pub fn mean_transmittance(&self) -> f64 {
        10f64.powf(-self.mean_loss_db / 10.0)
    }
}

/// Sampling grid of a phase screen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScreenGeometry {
    /// Samples per side, a power of two >= 64.
    pub grid_size: usize,
    /// Side length (m).
    pub physical_extent: f64,
}

impl ScreenGeometry {
    /// Grid of `grid_size` samples whose side is twice the aperture.
    pub fn around_aperture(params: &TurbulenceParams, grid_size: usize) -> Self {
        Self {
            grid_size,
            physical_extent: 2.0 * params.aperture_diameter,
        }
    }

    pub fn validate(&self, aperture_diameter: f64) -> Result<()> {
        if self.grid_size < 64 || !self.grid_size.is_power_of_two() {
            return Err(Error::domain(
                "grid_size",
                format!("{} is not a power of two >= 64", self.grid_size),
            ));
        }
        if !(self.physical_extent > 0.0) {
            return Err(Error::domain(
                "physical_extent",
                format!("{} must be positive", self.physical_extent),
            ));
        }
        if self.physical_extent < aperture_diameter {
            return Err(Error::domain(
                "physical_extent",
                format!("{} smaller than aperture {aperture_diameter}", self.physical_extent),
            ));
        }
        Ok(())
    }

    pub fn spacing(&self) -> f64 {
        self.physical_extent / self.grid_size as f64
    }

    /// Coordinate of sample `i` along either axis; the grid is centered on 0.
    pub fn coord(&self, i: usize) -> f64 {
        (i as f64 + 0.5 - 0.5 * self.grid_size as f64) * self.spacing()
    }
}

/// Sampled wavefront phase (rad), row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseScreen {
    pub grid: Vec<f64>,
    pub grid_size: usize,
    pub physical_extent: f64,
}

impl PhaseScreen {
    pub fn flat(geometry: ScreenGeometry) -> Self {
        Self {
            grid: vec![0.0; geometry.grid_size * geometry.grid_size],
            grid_size: geometry.grid_size,
            physical_extent: geometry.physical_extent,
        }
    }

    pub fn geometry(&self) -> ScreenGeometry {
        ScreenGeometry {
            grid_size: self.grid_size,
            physical_extent: self.physical_extent,
        }
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.grid[row * self.grid_size + col]
    }
}

fn von_karman_psd(f2: f64, r0: f64, outer: f64) -> f64 {
    0.023 * r0.powf(-5.0 / 3.0) * (f2 + 1.0 / (outer * outer)).powf(-11.0 / 6.0)
}

fn complex_normal<R: Rng>(rng: &mut R) -> Complex64 {
    Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
}

/// In-place 2-D inverse FFT without normalization.
fn ifft2(data: &mut [Complex64], n: usize) {
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_inverse(n);
    for row in data.chunks_mut(n) {
        fft.process(row);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); n];
    for c in 0..n {
        for r in 0..n {
            col[r] = data[r * n + c];
        }
        fft.process(&mut col);
        for r in 0..n {
            data[r * n + c] = col[r];
        }
    }
}

/// Draws a Kolmogorov (von Kármán) phase screen.
pub fn generate_phase_screen(
    params: &TurbulenceParams,
    geometry: ScreenGeometry,
    seed: u64,
) -> Result<PhaseScreen> {
    params.validate()?;
    geometry.validate(params.aperture_diameter)?;
    let n = geometry.grid_size;
    let extent = geometry.physical_extent;
    let outer = params.outer_scale.unwrap_or(10.0 * extent);
    let r0 = params.fried_r0;
    let mut rng = rng_from_seed(seed);

    let df = 1.0 / extent;
    let mut spec = vec![Complex64::new(0.0, 0.0); n * n];
    for r in 0..n {
        // FFT frequency ordering: 0, 1, ..., n/2-1, -n/2, ..., -1
        let fy = if r < n / 2 { r as f64 } else { r as f64 - n as f64 } * df;
        for c in 0..n {
            let fx = if c < n / 2 { c as f64 } else { c as f64 - n as f64 } * df;
            let noise = complex_normal(&mut rng);
            if r == 0 && c == 0 {
                continue;
            }
            let amp = von_karman_psd(fx * fx + fy * fy, r0, outer).sqrt() * df;
            spec[r * n + c] = noise * amp;
        }
    }
    ifft2(&mut spec, n);
    let mut grid: Vec<f64> = spec.iter().map(|z| z.re).collect();

    // subharmonics on 3x3 grids of spacing df / 3^p, down to a tenth of the
    // outer-scale frequency
    let levels = (1..=8).find(|&p| df / 3f64.powi(p) < 0.1 / outer).unwrap_or(8);
    let mut low = vec![0.0; n * n];
    for p in 1..=levels {
        let dfp = df / 3f64.powi(p);
        for i in -1i32..=1 {
            for j in -1i32..=1 {
                let noise = complex_normal(&mut rng);
                if i == 0 && j == 0 {
                    continue;
                }
                let (fx, fy) = (j as f64 * dfp, i as f64 * dfp);
                let cn = noise * von_karman_psd(fx * fx + fy * fy, r0, outer).sqrt() * dfp;
                let ex: Vec<Complex64> = (0..n)
                    .map(|c| Complex64::from_polar(1.0, 2.0 * PI * fx * geometry.coord(c)))
                    .collect();
                for r in 0..n {
                    let row = cn * Complex64::from_polar(1.0, 2.0 * PI * fy * geometry.coord(r));
                    for c in 0..n {
                        low[r * n + c] += (row * ex[c]).re;
                    }
                }
            }
        }
    }
    let mean_low = low.iter().sum::<f64>() / (n * n) as f64;
    for (g, l) in grid.iter_mut().zip(&low) {
        *g += l - mean_low;
    }
    if let Some(bad) = grid.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("phase screen sample {bad}")));
    }
    Ok(PhaseScreen {
        grid,
        grid_size: n,
        physical_extent: extent,
    })
}

/// Precomputed overlap of a uniformly illuminated disc with a Gaussian fiber
/// mode `exp(-r²/w²)` on a screen grid.
#[derive(Debug, Clone)]
pub struct Coupler {
    /// Row-major grid indices touching the aperture.
    pub pixels: Vec<usize>,
    /// Fraction of each pixel's area inside the aperture.
    pub weights: Vec<f64>,
    /// `Σ weights`, the aperture area in pixels.
    pub area: f64,
    /// Mode amplitude at each aperture pixel.
    mode: Vec<f64>,
    /// `Σ|mode|²` over an unbounded lattice with the grid's spacing.
    mode_norm: f64,
}

impl Coupler {
    pub fn new(geometry: ScreenGeometry, aperture_diameter: f64, mode_waist_ratio: f64) -> Result<Self> {
        if !(mode_waist_ratio > 0.0) || !mode_waist_ratio.is_finite() {
            return Err(Error::domain(
                "mode_waist_ratio",
                format!("{mode_waist_ratio} must be positive"),
            ));
        }
        if !(aperture_diameter > 0.0) {
            return Err(Error::domain(
                "aperture_diameter",
                format!("{aperture_diameter} must be positive"),
            ));
        }
        if geometry.physical_extent < aperture_diameter {
            return Err(Error::domain(
                "physical_extent",
                format!(
                    "screen {} smaller than aperture {aperture_diameter}",
                    geometry.physical_extent
                ),
            ));
        }
        let radius = 0.5 * aperture_diameter;
        let w = mode_waist_ratio * radius;
        let n = geometry.grid_size;
        let dx = geometry.spacing();
        let half_diag = std::f64::consts::FRAC_1_SQRT_2 * dx;
        let mut pixels = Vec::new();
        let mut weights = Vec::new();
        let mut mode = Vec::new();
        for r in 0..n {
            let y = geometry.coord(r);
            for c in 0..n {
                let x = geometry.coord(c);
                let rho = x.hypot(y);
                let cover = if rho + half_diag <= radius {
                    1.0
                } else if rho - half_diag > radius {
                    0.0
                } else {
                    edge_coverage(x, y, dx, radius)
                };
                if cover > 0.0 {
                    pixels.push(r * n + c);
                    weights.push(cover);
                    mode.push((-rho * rho / (w * w)).exp());
                }
            }
        }
        if pixels.is_empty() {
            return Err(Error::domain("aperture_diameter", "aperture covers no grid sample"));
        }
        // the same half-integer lattice, extended until the mode is negligible
        let reach = (6.0 * w / dx).ceil() as i64 + 1;
        let mut mode_norm = 0.0;
        for i in -reach..reach {
            let y = (i as f64 + 0.5) * dx;
            for j in -reach..reach {
                let x = (j as f64 + 0.5) * dx;
                mode_norm += (-2.0 * (x * x + y * y) / (w * w)).exp();
            }
        }
        let area = weights.iter().sum();
        Ok(Self {
            pixels,
            weights,
            area,
            mode,
            mode_norm,
        })
    }

    /// Coupling efficiency for phase values given at [`Coupler::pixels`].
    pub fn efficiency_of(&self, phase: &[f64]) -> f64 {
        debug_assert_eq!(phase.len(), self.pixels.len());
        let (mut re, mut im) = (0.0, 0.0);
        for ((&p, &m), &a) in phase.iter().zip(&self.mode).zip(&self.weights) {
            let (s, c) = p.sin_cos();
            re += a * m * c;
            im += a * m * s;
        }
        let eff = (re * re + im * im) / (self.area * self.mode_norm);
        eff.clamp(0.0, 1.0)
    }

    /// Screen values at the aperture pixels.
    pub fn gather(&self, screen: &PhaseScreen) -> Vec<f64> {
        self.pixels.iter().map(|&i| screen.grid[i]).collect()
    }

    pub fn efficiency(&self, screen: &PhaseScreen) -> f64 {
        self.efficiency_of(&self.gather(screen))
    }
}

/// Area fraction of the pixel centered at `(x, y)` inside the disc, by
/// 16 x 16 subsampling.
fn edge_coverage(x: f64, y: f64, dx: f64, radius: f64) -> f64 {
    const SUB: usize = 16;
    let mut inside = 0;
    for i in 0..SUB {
        let yy = y + ((i as f64 + 0.5) / SUB as f64 - 0.5) * dx;
        for j in 0..SUB {
            let xx = x + ((j as f64 + 0.5) / SUB as f64 - 0.5) * dx;
            if xx * xx + yy * yy <= radius * radius {
                inside += 1;
            }
        }
    }
    inside as f64 / (SUB * SUB) as f64
}

/// Single-mode-fiber coupling efficiency of a screen through a circular
/// aperture. `mode_waist_ratio` is the fiber-mode waist over the aperture
/// radius, referred to the aperture plane.
pub fn smf_coupling_efficiency(
    screen: &PhaseScreen,
    aperture_diameter: f64,
    mode_waist_ratio: f64,
) -> Result<f64> {
    Ok(Coupler::new(screen.geometry(), aperture_diameter, mode_waist_ratio)?.efficiency(screen))
}

/// Waist ratio maximizing coupling of a flat, uniformly lit disc.
pub const OPTIMAL_WAIST_RATIO: f64 = 0.89214;

/// Per-slot linear transmittances of one link.
#[derive(Debug, Clone, PartialEq)]
pub struct FadingSeries {
    pub transmittances: Vec<f64>,
}

impl FadingSeries {
    pub fn len(&self) -> usize {
        self.transmittances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transmittances.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.transmittances.iter().sum::<f64>() / self.len().max(1) as f64
    }
}

/// Log-normal fading: each slot is `min(exp(N(μ_ln, σ²)), 1)` with `μ_ln`
/// chosen so the unclamped mean is the configured mean transmittance.
pub fn sample_fading(params: &TurbulenceParams, n_slots: usize, seed: u64) -> Result<FadingSeries> {
    params.validate()?;
    if n_slots == 0 {
        return Err(Error::domain("n_slots", "must be at least 1"));
    }
    let mean = params.mean_transmittance();
    let sigma = params.scintillation_sigma;
    if sigma == 0.0 {
        return Ok(FadingSeries {
            transmittances: vec![mean; n_slots],
        });
    }
    let mu_ln = mean.ln() - 0.5 * sigma * sigma;
    let mut rng = rng_from_seed(seed);
    let transmittances = (0..n_slots)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            (mu_ln + sigma * z).exp().min(1.0)
        })
        .collect();
    Ok(FadingSeries { transmittances })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(r0: f64) -> TurbulenceParams {
        TurbulenceParams {
            fried_r0: r0,
            ..TurbulenceParams::default()
        }
    }

    fn geometry() -> ScreenGeometry {
        ScreenGeometry {
            grid_size: 64,
            physical_extent: 0.2,
        }
    }

    #[test]
    fn no_turbulence_screen_is_flat() {
        let s = generate_phase_screen(&params(1e6), geometry(), 3).unwrap();
        let mean = s.grid.iter().sum::<f64>() / s.grid.len() as f64;
        let var = s.grid.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / s.grid.len() as f64;
        assert!(var < 1e-6, "{var}");
    }

    #[test]
    fn screens_are_deterministic() {
        let a = generate_phase_screen(&params(0.02), geometry(), 11).unwrap();
        let b = generate_phase_screen(&params(0.02), geometry(), 11).unwrap();
        assert_eq!(a, b);
        let c = generate_phase_screen(&params(0.02), geometry(), 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn bad_geometry_rejected() {
        let mut g = geometry();
        g.grid_size = 100;
        assert!(generate_phase_screen(&params(0.02), g, 1).is_err());
        let g = ScreenGeometry {
            grid_size: 64,
            physical_extent: 0.05,
        };
        assert!(generate_phase_screen(&params(0.02), g, 1).is_err());
        assert!(generate_phase_screen(&params(-1.0), geometry(), 1).is_err());
    }

    #[test]
    fn flat_disc_coupling_near_analytic_optimum() {
        let g = ScreenGeometry {
            grid_size: 256,
            physical_extent: 0.2,
        };
        let flat = PhaseScreen::flat(g);
        let eff = smf_coupling_efficiency(&flat, 0.1, OPTIMAL_WAIST_RATIO).unwrap();
        // continuous optimum 0.8145
        assert!((eff - 0.8145).abs() < 0.005, "{eff}");
        for ratio in [0.7, 1.1] {
            assert!(smf_coupling_efficiency(&flat, 0.1, ratio).unwrap() < eff);
        }
    }

    #[test]
    fn piston_does_not_change_coupling() {
        let mut s = generate_phase_screen(&params(0.02), geometry(), 5).unwrap();
        let before = smf_coupling_efficiency(&s, 0.1, 0.9).unwrap();
        s.grid.iter_mut().for_each(|v| *v += 1.234);
        let after = smf_coupling_efficiency(&s, 0.1, 0.9).unwrap();
        assert!((before - after).abs() < 1e-12);
    }

    #[test]
    fn coupler_rejects_small_screen_and_bad_waist() {
        assert!(Coupler::new(geometry(), 0.3, 1.0).is_err());
        assert!(Coupler::new(geometry(), 0.1, 0.0).is_err());
    }

    #[test]
    fn zero_sigma_fading_is_constant() {
        let p = TurbulenceParams {
            scintillation_sigma: 0.0,
            ..TurbulenceParams::default()
        };
        let f = sample_fading(&p, 10, 1).unwrap();
        assert!(f.transmittances.iter().all(|&t| t == 10f64.powf(-1.7)));
    }

    #[test]
    fn fading_rejects_empty() {
        assert!(sample_fading(&TurbulenceParams::default(), 0, 1).is_err());
    }
}
