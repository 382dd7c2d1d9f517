//! Work distributions from echo series, and the Boltzmann weights derived
//! from them.
//!
//! The echo is Fourier transformed on the symmetric grid t_k = kΔt,
//! k = -N..N, under a Gaussian envelope e^{-(tδ)²/2}, with the frequency zero
//! shifted to E_ψ so the transform only has to resolve the width of the
//! distribution and not its position. The shift is restored analytically
//! when weights and moments are formed. Weights are kept in the log domain.

use std::f64::consts::PI;
use std::io;

use num_complex::Complex64;

use crate::dynamics::{EchoSeries, TimeGrid};
use crate::error::{Error, Result};

/// Above this imaginary residue the input was not conjugate-symmetric.
pub const IMAGINARY_WARNING: f64 = 1e-6;

/// Normal density N(x; 0, σ).
pub fn gaussian_density(x: f64, sigma: f64) -> f64 {
    (-(x * x) / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * PI).sqrt())
}

/// Whether the frequency span 2π/Δt covers ±3 standard deviations of a
/// work distribution of width √(g²L + δ²) on both sides.
pub fn frequency_coverage_ok(dt: f64, field: f64, sites: usize, delta: f64) -> bool {
    let width = (field * field * sites as f64 + delta * delta).sqrt();
    2.0 * PI / dt > 2.0 * 3.0 * width
}

/// p_ψ(ω) on the grid ω_n = 2πn/(Δt(2N+1)), n = -N..N, measured from
/// `shift_energy`.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkDistribution {
    pub omega: Vec<f64>,
    pub weights: Vec<f64>,
    pub spacing: f64,
    pub shift_energy: f64,
    pub delta: f64,
    /// Threshold applied by [`apply_cut`], 0 if none.
    pub cut: f64,
    /// Largest discarded imaginary part before taking the real part.
    pub imaginary_residue: f64,
}

impl WorkDistribution {
    pub fn frequency_grid(grid: &TimeGrid) -> Vec<f64> {
        let n = grid.n_steps as isize;
        let spacing = Self::grid_spacing(grid);
        (-n..=n).map(|i| i as f64 * spacing).collect()
    }

    pub fn grid_spacing(grid: &TimeGrid) -> f64 {
        2.0 * PI / (grid.dt * (2 * grid.n_steps + 1) as f64)
    }

    pub fn from_parts(omega: Vec<f64>, weights: Vec<f64>, shift_energy: f64, delta: f64) -> Self {
        assert_eq!(omega.len(), weights.len());
        assert!(omega.len() >= 2);
        let spacing = omega[1] - omega[0];
        Self {
            omega,
            weights,
            spacing,
            shift_energy,
            delta,
            cut: 0.0,
            imaginary_residue: 0.0,
        }
    }

    /// The transform saw an input that was not conjugate-symmetric.
    pub fn has_symmetry_warning(&self) -> bool {
        self.imaginary_residue > IMAGINARY_WARNING
    }

    /// Every weight is zero after the cut.
    pub fn is_degenerate(&self) -> bool {
        self.weights.iter().all(|w| *w <= 0.0)
    }

    /// Absolute frequency ω_n + shift.
    pub fn absolute_omega(&self) -> impl Iterator<Item = f64> + '_ {
        self.omega.iter().map(move |w| w + self.shift_energy)
    }

    /// CSV with header `omega_shifted,weight`.
    pub fn write_csv<W: io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["omega_shifted", "weight"])?;
        for (o, p) in self.omega.iter().zip(&self.weights) {
            w.write_record([o.to_string(), p.to_string()])?;
        }
        w.flush().map_err(|e| Error::Csv(e.to_string()))?;
        Ok(())
    }
}

/// Filtered discrete Fourier transform of an echo series.
///
/// p(ω_n) = Δt/2π Σ_{k=-N}^{N} e^{iω_n t_k} G(t_k) e^{i·shift·t_k} e^{-(t_k δ)²/2}
pub fn work_distribution(echo: &EchoSeries, delta: f64, shift: f64) -> WorkDistribution {
    assert!(delta > 0.0, "filter width must be positive");
    let grid = echo.grid;
    let n = grid.n_steps as isize;
    let filtered: Vec<Complex64> = (-n..=n)
        .map(|k| {
            let t = k as f64 * grid.dt;
            echo.at_signed_step(k) * Complex64::from_polar((-(t * delta).powi(2) / 2.0).exp(), shift * t)
        })
        .collect();
    let omega = WorkDistribution::frequency_grid(&grid);
    let prefactor = grid.dt / (2.0 * PI);
    let mut residue: f64 = 0.0;
    let weights = omega
        .iter()
        .map(|w| {
            let sum: Complex64 = filtered
                .iter()
                .zip(-n..=n)
                .map(|(h, k)| h * Complex64::from_polar(1.0, w * k as f64 * grid.dt))
                .sum();
            residue = residue.max((sum.im * prefactor).abs());
            sum.re * prefactor
        })
        .collect();
    let mut wd = WorkDistribution::from_parts(omega, weights, shift, delta);
    wd.imaginary_residue = residue;
    if wd.has_symmetry_warning() {
        log::warn!("work distribution has imaginary residue {residue:.2e}");
    }
    wd
}

/// Δω Σ ω^n p(ω) on the absolute frequency scale.
pub fn moment(wd: &WorkDistribution, n: u32) -> f64 {
    wd.spacing
        * wd
            .absolute_omega()
            .zip(&wd.weights)
            .map(|(w, p)| w.powi(n as i32) * p)
            .sum::<f64>()
}

/// Δω Σ (ω - ⟨ω⟩)^n p(ω), with ⟨ω⟩ the normalized first moment.
pub fn central_moment(wd: &WorkDistribution, n: u32) -> f64 {
    let mean = moment(wd, 1) / moment(wd, 0);
    wd.spacing
        * wd
            .absolute_omega()
            .zip(&wd.weights)
            .map(|(w, p)| (w - mean).powi(n as i32) * p)
            .sum::<f64>()
}

/// Zeroes every weight below `p_cut`, negative weights included.
pub fn apply_cut(wd: &WorkDistribution, p_cut: f64) -> WorkDistribution {
    assert!(p_cut >= 0.0, "cut must be non-negative");
    let mut out = wd.clone();
    for w in &mut out.weights {
        if *w < p_cut || *w < 0.0 {
            *w = 0.0;
        }
    }
    out.cut = p_cut;
    if out.is_degenerate() {
        log::debug!("cut {p_cut:e} removed every weight");
    }
    out
}

/// ln p_ψ(T) at temperature T.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ThermalWeight {
    pub log_weight: f64,
    pub temperature: f64,
}

impl ThermalWeight {
    pub fn is_degenerate(&self) -> bool {
        self.log_weight == f64::NEG_INFINITY
    }
}

/// Largest exponent -ω_n/T over positive bins, for max subtraction.
fn exponent_offset(wd: &WorkDistribution, temperature: f64) -> Option<f64> {
    wd.omega
        .iter()
        .zip(&wd.weights)
        .filter(|(_, p)| **p > 0.0)
        .map(|(w, _)| -w / temperature)
        .reduce(f64::max)
}

/// Σ_n ω_abs^k e^{-ω_n/T - offset} p_n for k = 0..=max_power.
fn tilted_sums(wd: &WorkDistribution, temperature: f64, offset: f64, max_power: u32) -> Vec<f64> {
    let mut sums = vec![0.0; max_power as usize + 1];
    for (w, p) in wd.omega.iter().zip(&wd.weights) {
        if *p == 0.0 {
            continue;
        }
        let factor = (-w / temperature - offset).exp() * p;
        let absolute = w + wd.shift_energy;
        let mut power = 1.0;
        for s in sums.iter_mut() {
            *s += factor * power;
            power *= absolute;
        }
    }
    sums
}

/// ln p_ψ(T) = -shift/T + ln(Δω Σ_n e^{-ω_n/T} p(ω_n)).
pub fn boltzmann_weight(wd: &WorkDistribution, temperature: f64) -> ThermalWeight {
    assert!(temperature > 0.0, "temperature must be positive");
    let log_weight = match exponent_offset(wd, temperature) {
        None => f64::NEG_INFINITY,
        Some(offset) => {
            let sum = tilted_sums(wd, temperature, offset, 0)[0];
            if sum > 0.0 {
                -wd.shift_energy / temperature + offset + (wd.spacing * sum).ln()
            } else {
                f64::NEG_INFINITY
            }
        }
    };
    ThermalWeight {
        log_weight,
        temperature,
    }
}

/// p̃_ψ(T)/p_ψ(T) with p̃_ψ(T) = ∫ω^n e^{-ω/T} p_ψ(ω). NaN for a degenerate
/// distribution.
pub fn hamiltonian_moment_weight(wd: &WorkDistribution, temperature: f64, n: u32) -> f64 {
    assert!(temperature > 0.0, "temperature must be positive");
    match exponent_offset(wd, temperature) {
        None => f64::NAN,
        Some(offset) => {
            let sums = tilted_sums(wd, temperature, offset, n);
            sums[n as usize] / sums[0]
        }
    }
}

/// Per-state estimators of H and H² with the Gaussian filter removed.
///
/// Tilting a line at E broadened by N(0, δ) with e^{-ω/T} gives a normal
/// distribution of mean E - δ²/T and variance δ², so the raw moments m₁,
/// m₂ map back to E and E² via E = m₁ + δ²/T and
/// E² = m₂ - δ² + 2(δ²/T)m₁ + δ⁴/T².
pub fn filter_corrected_energy_moments(wd: &WorkDistribution, temperature: f64) -> (f64, f64) {
    assert!(temperature > 0.0, "temperature must be positive");
    let Some(offset) = exponent_offset(wd, temperature) else {
        return (f64::NAN, f64::NAN);
    };
    let sums = tilted_sums(wd, temperature, offset, 2);
    let m1 = sums[1] / sums[0];
    let m2 = sums[2] / sums[0];
    let a = wd.delta * wd.delta / temperature;
    (m1 + a, m2 - wd.delta * wd.delta + 2.0 * a * m1 + a * a)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_line(energy: f64, grid: TimeGrid) -> EchoSeries {
        let values = grid.times().map(|t| Complex64::from_polar(1.0, -energy * t)).collect();
        EchoSeries::new(grid, values, energy)
    }

    #[test]
    fn single_line_becomes_gaussian() {
        let grid = TimeGrid::new(0.05, 80);
        let delta = 2.0;
        let wd = work_distribution(&single_line(-3.7, grid), delta, -3.7);
        assert!(wd.imaginary_residue < 1e-12);
        for (w, p) in wd.omega.iter().zip(&wd.weights) {
            assert!((p - gaussian_density(*w, delta)).abs() < 1e-8, "ω={w}");
        }
        assert!((moment(&wd, 0) - 1.0).abs() < 1e-12);
        assert!((moment(&wd, 1) + 3.7).abs() < 1e-6);
        assert!((central_moment(&wd, 2) - delta * delta).abs() < 1e-6);
    }

    #[test]
    fn cut_behaviour() {
        let wd = WorkDistribution::from_parts(vec![-1.0, 0.0, 1.0], vec![-0.1, 0.5, 0.01], 0.0, 1.0);
        let none = apply_cut(&wd, 0.0);
        assert_eq!(none.weights, vec![0.0, 0.5, 0.01]);
        let c = apply_cut(&wd, 0.05);
        assert_eq!(c.weights, vec![0.0, 0.5, 0.0]);
        assert_eq!(c.cut, 0.05);
        let all = apply_cut(&wd, 1.0);
        assert!(all.is_degenerate());
        let lw = boltzmann_weight(&all, 1.0);
        assert!(lw.is_degenerate());
        assert!(hamiltonian_moment_weight(&all, 1.0, 1).is_nan());
    }

    #[test]
    fn infinite_temperature_weight_is_normalization() {
        let grid = TimeGrid::new(0.05, 80);
        let wd = apply_cut(&work_distribution(&single_line(5.0, grid), 2.0, 5.0), 0.0);
        let lw = boltzmann_weight(&wd, f64::INFINITY);
        assert!(lw.log_weight.abs() < 1e-10);
    }

    #[test]
    fn shifted_energies_shift_log_weights() {
        let grid = TimeGrid::new(0.05, 160);
        let a = apply_cut(&work_distribution(&single_line(1.0, grid), 1.5, 1.0), 1e-9);
        let b = apply_cut(&work_distribution(&single_line(3.5, grid), 1.5, 3.5), 1e-9);
        for t in [0.5, 2.0, 10.0] {
            let d = boltzmann_weight(&b, t).log_weight - boltzmann_weight(&a, t).log_weight;
            assert!((d + 2.5 / t).abs() < 1e-9, "T={t} diff={}", d + 2.5 / t);
        }
    }

    #[test]
    fn single_line_moment_estimators() {
        let grid = TimeGrid::new(0.05, 160);
        let delta = 1.5;
        let e = -2.0;
        let wd = apply_cut(&work_distribution(&single_line(e, grid), delta, e), 1e-12);
        for t in [1.0, 3.0, 8.0] {
            assert_eq!(hamiltonian_moment_weight(&wd, t, 0), 1.0);
            let h1 = hamiltonian_moment_weight(&wd, t, 1);
            assert!((h1 - (e - delta * delta / t)).abs() < 1e-6, "T={t} h1={h1}");
            let (c1, c2) = filter_corrected_energy_moments(&wd, t);
            assert!((c1 - e).abs() < 1e-6);
            assert!((c2 - e * e).abs() < 1e-5);
            // Gaussian integral: log weight = -E/T + δ²/(2T²).
            let lw = boltzmann_weight(&wd, t).log_weight;
            assert!((lw - (-e / t + delta * delta / (2.0 * t * t))).abs() < 1e-6);
        }
    }

    #[test]
    fn asymmetric_input_raises_warning() {
        let grid = TimeGrid::new(0.1, 10);
        let mut echo = single_line(0.0, grid);
        echo.values[0] = Complex64::new(1.0, 0.3);
        let wd = work_distribution(&echo, 1.0, 0.0);
        assert!(wd.has_symmetry_warning());
    }

    #[test]
    fn coverage_rule() {
        assert!(frequency_coverage_ok(0.1, 1.0, 8, 2.0));
        assert!(!frequency_coverage_ok(1.0, 1.0, 16, 4.0));
    }

    #[test]
    fn csv_header() {
        let wd = WorkDistribution::from_parts(vec![-1.0, 0.0, 1.0], vec![0.1, 0.5, 0.25], 0.0, 1.0);
        let mut buf = Vec::new();
        wd.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "omega_shifted,weight\n-1,0.1\n0,0.5\n1,0.25\n");
    }
}
