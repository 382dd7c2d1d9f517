//! Exact-diagonalization references: thermal averages, partition sums and
//! stick-spectrum work distributions for chains of up to 14 sites.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::dynamics::TimeGrid;
use crate::model::{magnetization_moment, IsingModel, SpinConfiguration, StateVector, MAX_DENSE_SITES};
use crate::spectral::{gaussian_density, WorkDistribution};

/// Eigenvalues (ascending) and orthonormal eigenvectors (columns) of H.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    eigenvalues: Vec<f64>,
    vectors: DMatrix<f64>,
}

impl SpectralDecomposition {
    pub fn new(model: &IsingModel) -> Self {
        assert!(model.sites() <= MAX_DENSE_SITES, "exact diagonalization limited to {MAX_DENSE_SITES} sites");
        Self::from_matrix(model.dense_matrix())
    }

    pub fn from_matrix(h: DMatrix<f64>) -> Self {
        let eig = SymmetricEigen::new(h);
        let dim = eig.eigenvalues.len();
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let eigenvalues = order.iter().map(|&n| eig.eigenvalues[n]).collect();
        let vectors = DMatrix::from_fn(dim, dim, |x, n| eig.eigenvectors[(x, order[n])]);
        Self { eigenvalues, vectors }
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Column n is |n⟩.
    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    /// |⟨x|n⟩|² for every n, x a basis index.
    pub fn overlaps(&self, x: usize) -> Vec<f64> {
        self.vectors.row(x).iter().map(|v| v * v).collect()
    }

    /// Components ⟨n|v⟩.
    pub fn to_eigenbasis(&self, v: &StateVector) -> Vec<Complex64> {
        (0..self.dim())
            .map(|n| {
                self.vectors
                    .column(n)
                    .iter()
                    .zip(&v.0)
                    .map(|(a, b)| b * *a)
                    .sum()
            })
            .collect()
    }

    /// max |H - V E Vᵀ|.
    pub fn reconstruction_residual(&self, h: &DMatrix<f64>) -> f64 {
        let e = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&self.eigenvalues));
        (h - &self.vectors * e * self.vectors.transpose()).amax()
    }

    fn boltzmann_factors(&self, temperature: f64) -> (Vec<f64>, f64) {
        let e0 = self.eigenvalues[0];
        let w: Vec<f64> = self.eigenvalues.iter().map(|e| (-(e - e0) / temperature).exp()).collect();
        let log_z = e0 * -(1.0 / temperature) + w.iter().sum::<f64>().ln();
        (w, log_z)
    }
}

/// An observable for [`thermal_expectation`].
#[derive(Debug, Clone)]
pub enum Observable {
    /// Diagonal in the z basis, value per basis index.
    Diagonal(Vec<f64>),
    /// Dense real-symmetric matrix in the z basis.
    Matrix(DMatrix<f64>),
}

impl Observable {
    pub fn diagonal_from<F: Fn(&SpinConfiguration) -> f64>(sites: usize, f: F) -> Self {
        Observable::Diagonal(
            (0..1u64 << sites)
                .map(|x| f(&SpinConfiguration::new(sites, x)))
                .collect(),
        )
    }

    /// (S^z)^n
    pub fn magnetization_power(sites: usize, n: u32) -> Self {
        Self::diagonal_from(sites, |psi| magnetization_moment(psi, n))
    }

    /// ⟨n|O|n⟩ for every eigenstate.
    fn eigen_diagonal(&self, dec: &SpectralDecomposition) -> Vec<f64> {
        let v = dec.eigenvectors();
        match self {
            Observable::Diagonal(values) => {
                assert_eq!(values.len(), dec.dim());
                (0..dec.dim())
                    .map(|n| v.column(n).iter().zip(values).map(|(a, o)| a * a * o).sum())
                    .collect()
            }
            Observable::Matrix(m) => {
                assert_eq!(m.nrows(), dec.dim());
                let rotated = v.transpose() * m * v;
                rotated.diagonal().iter().copied().collect()
            }
        }
    }
}

/// Tr(O e^{-H/T}) / Z.
pub fn thermal_expectation(dec: &SpectralDecomposition, observable: &Observable, temperature: f64) -> f64 {
    let (w, _) = dec.boltzmann_factors(temperature);
    let o = observable.eigen_diagonal(dec);
    let z: f64 = w.iter().sum();
    w.iter().zip(&o).map(|(w, o)| w * o).sum::<f64>() / z
}

/// Z = Tr e^{-H/T}, returned as (Z, ln Z).
pub fn partition_sum(dec: &SpectralDecomposition, temperature: f64) -> (f64, f64) {
    let (_, log_z) = dec.boltzmann_factors(temperature);
    (log_z.exp(), log_z)
}

/// Σ_n |⟨ψ|n⟩|² N(ω; E_n, δ) on the same frequency grid that
/// [`crate::spectral::work_distribution`] produces for `grid` and `shift`.
pub fn stick_work_distribution(
    dec: &SpectralDecomposition,
    psi: &SpinConfiguration,
    delta: f64,
    grid: &TimeGrid,
    shift: f64,
) -> WorkDistribution {
    assert!(psi.len() <= 12, "stick spectra limited to 12 sites");
    assert_eq!(1usize << psi.len(), dec.dim());
    let overlaps = dec.overlaps(psi.index());
    let omega = WorkDistribution::frequency_grid(grid);
    let weights = omega
        .iter()
        .map(|w| {
            overlaps
                .iter()
                .zip(dec.eigenvalues())
                .map(|(c, e)| c * gaussian_density(w + shift - e, delta))
                .sum()
        })
        .collect();
    WorkDistribution::from_parts(omega, weights, shift, delta)
}

/// Reference curves for one temperature.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ReferencePoint {
    pub temperature: f64,
    /// ⟨(S^z/L)²⟩
    pub msq: f64,
    pub binder: f64,
    pub energy: f64,
    /// (⟨H²⟩ - ⟨H⟩²)/(L T²)
    pub cv: f64,
}

/// Thermal magnetization, Binder cumulant, energy and specific heat.
pub fn reference_curve(model: &IsingModel, dec: &SpectralDecomposition, temperatures: &[f64]) -> Vec<ReferencePoint> {
    let l = model.sites();
    let sz2 = Observable::magnetization_power(l, 2).eigen_diagonal(dec);
    let sz4 = Observable::magnetization_power(l, 4).eigen_diagonal(dec);
    temperatures
        .iter()
        .map(|&t| {
            let (w, _) = dec.boltzmann_factors(t);
            let z: f64 = w.iter().sum();
            let avg = |o: &[f64]| w.iter().zip(o).map(|(w, o)| w * o).sum::<f64>() / z;
            let m2 = avg(&sz2);
            let m4 = avg(&sz4);
            let e1 = w.iter().zip(dec.eigenvalues()).map(|(w, e)| w * e).sum::<f64>() / z;
            let e2 = w.iter().zip(dec.eigenvalues()).map(|(w, e)| w * e * e).sum::<f64>() / z;
            ReferencePoint {
                temperature: t,
                msq: m2 / (l * l) as f64,
                binder: 1.5 - m4 / (2.0 * m2 * m2),
                energy: e1,
                cv: (e2 - e1 * e1) / (l as f64 * t * t),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decomposition_reconstructs_hamiltonian() {
        let model = IsingModel::new(6, 1.0, 1.0, 1.5);
        let h = model.dense_matrix();
        let dec = SpectralDecomposition::new(&model);
        assert!(dec.reconstruction_residual(&h) < 1e-9 * h.amax());
        assert!(dec.eigenvalues().windows(2).all(|w| w[0] <= w[1]));
        let v = dec.eigenvectors();
        let id = v.transpose() * v;
        assert!((id - DMatrix::identity(64, 64)).amax() < 1e-9);
    }

    #[test]
    fn completeness_of_overlaps() {
        let dec = SpectralDecomposition::new(&IsingModel::new(5, 1.0, 0.7, 1.5));
        for x in 0..32 {
            assert!((dec.overlaps(x).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn infinite_temperature_limits() {
        let model = IsingModel::new(6, 1.0, 1.0, 1.5);
        let dec = SpectralDecomposition::new(&model);
        let (z, log_z) = partition_sum(&dec, 1e9);
        assert!((z - 64.0).abs() < 1e-6);
        assert!((log_z - 64f64.ln()).abs() < 1e-9);
        let msq = Observable::diagonal_from(6, |p| (p.magnetization() as f64 / 6.0).powi(2));
        assert!((thermal_expectation(&dec, &msq, 1e9) - 1.0 / 6.0).abs() < 1e-7);
    }

    #[test]
    fn two_spin_classical_correlator() {
        let model = IsingModel::new(2, 1.0, 0.0, 2.7);
        let dec = SpectralDecomposition::new(&model);
        let zz = Observable::diagonal_from(2, |p| p.spin(0) * p.spin(1));
        for t in [0.5, 1.0, 3.0] {
            assert!((thermal_expectation(&dec, &zz, t) - (1.0 / t).tanh()).abs() < 1e-12);
        }
    }

    #[test]
    fn single_spin_partition_sum() {
        let model = IsingModel::new(1, 1.0, 0.8, 1.5);
        let dec = SpectralDecomposition::new(&model);
        for t in [0.3, 1.0, 5.0] {
            let (z, _) = partition_sum(&dec, t);
            assert!((z - 2.0 * (0.8 / t).cosh()).abs() < 1e-12);
        }
    }

    #[test]
    fn classical_partition_sum_by_enumeration() {
        for l in [3, 7, 10] {
            let model = IsingModel::new(l, 1.0, 0.0, 1.5);
            let dec = SpectralDecomposition::new(&model);
            for t in [1.0, 4.0] {
                let direct: f64 = (0..1u64 << l)
                    .map(|x| (-model.diagonal_energy(&SpinConfiguration::new(l, x)) / t).exp())
                    .sum();
                let (z, _) = partition_sum(&dec, t);
                assert!((z - direct).abs() < 1e-9 * direct);
            }
        }
    }

    #[test]
    fn matrix_and_diagonal_observables_agree() {
        let model = IsingModel::new(4, 1.0, 1.0, 1.5);
        let dec = SpectralDecomposition::new(&model);
        let diag = Observable::magnetization_power(4, 2);
        let Observable::Diagonal(values) = &diag else { unreachable!() };
        let matrix = Observable::Matrix(DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(values)));
        let a = thermal_expectation(&dec, &diag, 2.0);
        let b = thermal_expectation(&dec, &matrix, 2.0);
        assert!((a - b).abs() < 1e-12);
    }
}
