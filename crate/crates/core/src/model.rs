//! The long-range transverse-field Ising chain
//!
//! H = -Σ_{i<j} J/|i-j|^α σᶻ_i σᶻ_j - g Σ_i σˣ_i
//!
//! on an open chain. Basis states are indexed by the bit pattern of their
//! σᶻ eigenvalues: bit `i` set means σᶻ_i = +1.

use std::fmt;
use std::ops::{AddAssign, Mul};
use std::str::FromStr;
use std::sync::OnceLock;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;

/// Largest chain for which the full diagonal table (2^L energies) is built.
pub const MAX_TABLE_SITES: usize = 26;
/// Largest chain for which a dense Hamiltonian may be assembled.
pub const MAX_DENSE_SITES: usize = 14;

const PARALLEL_THRESHOLD: usize = 1 << 15;
const BLOCK: usize = 1 << 12;

/// A z-basis product state of `len` spins.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct SpinConfiguration {
    bits: u64,
    len: usize,
}

impl SpinConfiguration {
    pub fn new(len: usize, bits: u64) -> Self {
        assert!((1..=63).contains(&len), "chain length {len} outside 1..=63");
        assert!(bits >> len == 0, "bit pattern {bits:#b} wider than {len} sites");
        Self { bits, len }
    }

    pub fn all_up(len: usize) -> Self {
        Self::new(len, (1u64 << len) - 1)
    }

    pub fn all_down(len: usize) -> Self {
        Self::new(len, 0)
    }

    /// ↑↓↑↓…, zero magnetization for even `len`.
    pub fn alternating(len: usize) -> Self {
        let bits = (0..len).step_by(2).fold(0u64, |acc, i| acc | (1 << i));
        Self::new(len, bits)
    }

    pub fn random<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Self {
        let mask = (1u64 << len) - 1;
        Self::new(len, rng.random::<u64>() & mask)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn bits(&self) -> u64 {
        self.bits
    }

    /// Basis index of this configuration in a 2^L state vector.
    pub fn index(&self) -> usize {
        self.bits as usize
    }

    pub fn is_up(&self, site: usize) -> bool {
        assert!(site < self.len);
        self.bits >> site & 1 == 1
    }

    /// σᶻ eigenvalue of `site`.
    pub fn spin(&self, site: usize) -> f64 {
        if self.is_up(site) {
            1.0
        } else {
            -1.0
        }
    }

    pub fn flipped(&self, site: usize) -> Self {
        assert!(site < self.len);
        Self {
            bits: self.bits ^ (1 << site),
            len: self.len,
        }
    }

    /// S^z = Σ_i σᶻ_i.
    pub fn magnetization(&self) -> i64 {
        2 * self.bits.count_ones() as i64 - self.len as i64
    }

    /// The `j` leftmost sites.
    pub fn prefix(&self, j: usize) -> Option<Self> {
        assert!(j <= self.len);
        if j == 0 {
            None
        } else {
            Some(Self::new(j, self.bits & ((1u64 << j) - 1)))
        }
    }

    /// Canonical representative of the orbit under global spin flip and
    /// chain reflection. Both are symmetries of the open-chain model, so
    /// every member of an orbit has the same Loschmidt echo.
    pub fn symmetry_representative(&self) -> u64 {
        let mask = (1u64 << self.len) - 1;
        let reflected = self.bits.reverse_bits() >> (64 - self.len);
        [self.bits, !self.bits & mask, reflected, !reflected & mask]
            .into_iter()
            .min()
            .unwrap()
    }
}

impl fmt::Debug for SpinConfiguration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SpinConfiguration({self})")
    }
}

/// Renders site 0 first, `1` for up and `0` for down.
impl fmt::Display for SpinConfiguration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.len {
            f.write_str(if self.is_up(i) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseConfigurationError(pub String);

impl fmt::Display for ParseConfigurationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid spin configuration: {}", self.0)
    }
}

impl std::error::Error for ParseConfigurationError {}

impl FromStr for SpinConfiguration {
    type Err = ParseConfigurationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.is_empty() || s.len() > 63 {
            return Err(ParseConfigurationError(format!(
                "expected 1 to 63 characters, got {}",
                s.len()
            )));
        }
        let mut bits = 0u64;
        for (i, c) in s.chars().enumerate() {
            match c {
                '1' | 'u' | 'U' => bits |= 1 << i,
                '0' | 'd' | 'D' => {}
                other => {
                    return Err(ParseConfigurationError(format!(
                        "unexpected character {other:?} at position {i}"
                    )))
                }
            }
        }
        Ok(Self::new(s.len(), bits))
    }
}

/// (S^z)^n for a product state.
pub fn magnetization_moment(psi: &SpinConfiguration, n: u32) -> f64 {
    (psi.magnetization() as f64).powi(n as i32)
}

/// A dense vector of 2^L amplitudes in the z basis.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector(pub Vec<Complex64>);

impl StateVector {
    pub fn zeros(sites: usize) -> Self {
        Self(vec![Complex64::new(0.0, 0.0); 1 << sites])
    }

    pub fn basis(psi: &SpinConfiguration) -> Self {
        let mut v = Self::zeros(psi.len());
        v.0[psi.index()] = Complex64::new(1.0, 0.0);
        v
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    /// ⟨self|other⟩
    pub fn inner(&self, other: &StateVector) -> Complex64 {
        assert_eq!(self.dim(), other.dim());
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.0
    }
}

/// The long-range transverse-field Ising model on an open chain.
#[derive(Debug)]
pub struct IsingModel {
    sites: usize,
    coupling: f64,
    field: f64,
    alpha: f64,
    /// K_ij = J/|i-j|^α, row-major, zero diagonal.
    couplings: Vec<f64>,
    diagonal: OnceLock<Vec<f64>>,
}

impl Clone for IsingModel {
    fn clone(&self) -> Self {
        Self {
            sites: self.sites,
            coupling: self.coupling,
            field: self.field,
            alpha: self.alpha,
            couplings: self.couplings.clone(),
            diagonal: self.diagonal.clone(),
        }
    }
}

impl PartialEq for IsingModel {
    fn eq(&self, other: &Self) -> bool {
        self.sites == other.sites
            && self.field == other.field
            && self.couplings == other.couplings
    }
}

impl IsingModel {
    /// `sites` may be zero: the empty model has a single basis state with
    /// energy zero.
    pub fn new(sites: usize, coupling: f64, field: f64, alpha: f64) -> Self {
        assert!(sites <= 63, "at most 63 sites are supported");
        let mut couplings = vec![0.0; sites * sites];
        for i in 0..sites {
            for j in 0..sites {
                if i != j {
                    let d = i.abs_diff(j) as f64;
                    couplings[i * sites + j] = coupling / d.powf(alpha);
                }
            }
        }
        Self {
            sites,
            coupling,
            field,
            alpha,
            couplings,
            diagonal: OnceLock::new(),
        }
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn coupling(&self) -> f64 {
        self.coupling
    }

    pub fn field(&self) -> f64 {
        self.field
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn dim(&self) -> usize {
        1 << self.sites
    }

    /// K_ij.
    pub fn pair_coupling(&self, i: usize, j: usize) -> f64 {
        self.couplings[i * self.sites + j]
    }

    /// E_ψ = ⟨ψ|H|ψ⟩ = -Σ_{i<j} K_ij σᶻ_i σᶻ_j.
    pub fn diagonal_energy(&self, psi: &SpinConfiguration) -> f64 {
        assert_eq!(psi.len(), self.sites, "configuration size does not match model");
        self.energy_of_bits(psi.bits())
    }

    fn energy_of_bits(&self, bits: u64) -> f64 {
        let spin = |i: usize| if bits >> i & 1 == 1 { 1.0 } else { -1.0 };
        let mut e = 0.0;
        for i in 0..self.sites {
            let row = &self.couplings[i * self.sites..(i + 1) * self.sites];
            let si = spin(i);
            for (j, k) in row.iter().enumerate().skip(i + 1) {
                e -= k * si * spin(j);
            }
        }
        e
    }

    /// Diagonal energies of all 2^L configurations, built on first use.
    pub fn diagonal_table(&self) -> &[f64] {
        self.diagonal.get_or_init(|| {
            assert!(
                self.sites <= MAX_TABLE_SITES,
                "diagonal table requested for {} sites",
                self.sites
            );
            let dim = self.dim();
            let mut table = vec![0.0; dim];
            table[0] = self.energy_of_bits(0);
            // Setting the lowest set bit k of x from its cleared partner
            // changes the energy by -2 σᶻ_k Σ_j K_kj σᶻ_j = -2 Σ_j K_kj σᶻ_j.
            for x in 1..dim {
                let k = x.trailing_zeros() as usize;
                let partner = x ^ (1 << k);
                let row = &self.couplings[k * self.sites..(k + 1) * self.sites];
                let mut field_on_k = 0.0;
                for (j, kj) in row.iter().enumerate() {
                    if j != k {
                        field_on_k += if x >> j & 1 == 1 { *kj } else { -*kj };
                    }
                }
                table[x] = table[partner] - 2.0 * field_on_k;
            }
            table
        })
    }

    /// out = H v. Works for real and complex amplitudes.
    pub fn apply_into<T>(&self, v: &[T], out: &mut [T])
    where
        T: Copy + Send + Sync + AddAssign + Mul<f64, Output = T>,
    {
        let dim = self.dim();
        assert_eq!(v.len(), dim, "vector dimension does not match model");
        assert_eq!(out.len(), dim, "output dimension does not match model");
        let diag = self.diagonal_table();
        let coeff = -self.field;
        let sites = self.sites;
        let block = dim.min(BLOCK);
        // Flips of bits below the block size stay inside a block; higher
        // bits pair the block with a partner block.
        let apply_block = |(b, out): (usize, &mut [T])| {
            let start = b * block;
            for ((o, x), d) in out.iter_mut().zip(&v[start..start + block]).zip(&diag[start..start + block]) {
                *o = *x * *d;
            }
            for k in 0..sites {
                let half = 1usize << k;
                if half < block {
                    let src = &v[start..start + block];
                    for (o_pair, v_pair) in out.chunks_exact_mut(2 * half).zip(src.chunks_exact(2 * half)) {
                        let (o_lo, o_hi) = o_pair.split_at_mut(half);
                        let (v_lo, v_hi) = v_pair.split_at(half);
                        for (o, x) in o_lo.iter_mut().zip(v_hi) {
                            *o += *x * coeff;
                        }
                        for (o, x) in o_hi.iter_mut().zip(v_lo) {
                            *o += *x * coeff;
                        }
                    }
                } else {
                    let partner = start ^ half;
                    for (o, x) in out.iter_mut().zip(&v[partner..partner + block]) {
                        *o += *x * coeff;
                    }
                }
            }
        };
        if dim >= PARALLEL_THRESHOLD {
            out.par_chunks_mut(block).enumerate().for_each(apply_block);
        } else {
            out.chunks_mut(block).enumerate().for_each(apply_block);
        }
    }

    /// H v as a new state.
    pub fn apply_hamiltonian(&self, v: &StateVector) -> StateVector {
        let mut out = StateVector(vec![Complex64::new(0.0, 0.0); v.dim()]);
        self.apply_into(&v.0, &mut out.0);
        out
    }

    /// Dense real-symmetric Hamiltonian assembled from the matrix-free action.
    pub fn dense_matrix(&self) -> DMatrix<f64> {
        assert!(
            self.sites <= MAX_DENSE_SITES,
            "dense matrix requested for {} sites (max {MAX_DENSE_SITES})",
            self.sites
        );
        let dim = self.dim();
        let diag = self.diagonal_table();
        let mut h = DMatrix::zeros(dim, dim);
        for x in 0..dim {
            h[(x, x)] = diag[x];
            for k in 0..self.sites {
                h[(x ^ (1 << k), x)] -= self.field;
            }
        }
        h
    }

    /// The model on the `j` leftmost sites; the remaining ions are shelved
    /// and do not interact.
    pub fn restricted(&self, j: usize) -> IsingModel {
        assert!(j <= self.sites, "restriction to {j} of {} sites", self.sites);
        let mut couplings = vec![0.0; j * j];
        for a in 0..j {
            couplings[a * j..(a + 1) * j]
                .copy_from_slice(&self.couplings[a * self.sites..a * self.sites + j]);
        }
        IsingModel {
            sites: j,
            coupling: self.coupling,
            field: self.field,
            alpha: self.alpha,
            couplings,
            diagonal: OnceLock::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_site_energies() {
        let m = IsingModel::new(2, 1.0, 1.0, 1.5);
        assert_eq!(m.diagonal_energy(&"11".parse().unwrap()), -1.0);
        assert_eq!(m.diagonal_energy(&"10".parse().unwrap()), 1.0);
    }

    #[test]
    fn eight_site_polarized_energy_matches_pair_sum() {
        let m = IsingModel::new(8, 1.0, 0.7, 1.5);
        let mut pairs = 0;
        let mut expected = 0.0;
        for i in 0..8 {
            for j in i + 1..8 {
                expected -= 1.0 / ((j - i) as f64).powf(1.5);
                pairs += 1;
            }
        }
        assert_eq!(pairs, 28);
        let e = m.diagonal_energy(&SpinConfiguration::all_up(8));
        assert!((e - expected).abs() < 1e-12);
    }

    #[test]
    fn table_matches_direct_energies() {
        let m = IsingModel::new(9, 1.3, 0.2, 1.1);
        let table = m.diagonal_table();
        for x in 0..m.dim() as u64 {
            assert!((table[x as usize] - m.energy_of_bits(x)).abs() < 1e-12);
        }
    }

    #[test]
    fn couplings_symmetric_and_decreasing() {
        let m = IsingModel::new(7, 1.0, 1.0, 1.5);
        for i in 0..7 {
            for j in 0..7 {
                assert_eq!(m.pair_coupling(i, j), m.pair_coupling(j, i));
                if i != j {
                    assert!(m.pair_coupling(i, j) > 0.0);
                }
            }
        }
        for d in 1..6 {
            assert!(m.pair_coupling(0, d) > m.pair_coupling(0, d + 1));
        }
    }

    #[test]
    fn zero_field_basis_state_is_eigenvector() {
        let m = IsingModel::new(5, 1.0, 0.0, 1.5);
        let psi: SpinConfiguration = "10110".parse().unwrap();
        let hv = m.apply_hamiltonian(&StateVector::basis(&psi));
        let e = m.diagonal_energy(&psi);
        for (x, a) in hv.0.iter().enumerate() {
            let want = if x == psi.index() { e } else { 0.0 };
            assert!((a.re - want).abs() < 1e-14 && a.im == 0.0);
        }
    }

    #[test]
    fn restriction_edge_cases() {
        let m = IsingModel::new(5, 1.0, 0.8, 1.5);
        assert_eq!(m.restricted(5), m);
        let one = m.restricted(1);
        assert_eq!(one.dim(), 2);
        let h = one.dense_matrix();
        assert_eq!(h[(0, 0)], 0.0);
        assert_eq!(h[(0, 1)], -0.8);
        let three = m.restricted(3);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(three.pair_coupling(i, j), m.pair_coupling(i, j));
            }
        }
        let empty = m.restricted(0);
        assert_eq!(empty.dim(), 1);
        assert_eq!(empty.diagonal_table(), &[0.0]);
    }

    #[test]
    #[should_panic]
    fn restriction_out_of_range() {
        IsingModel::new(3, 1.0, 1.0, 1.5).restricted(4);
    }

    #[test]
    #[should_panic(expected = "does not match")]
    fn energy_size_mismatch_panics() {
        IsingModel::new(3, 1.0, 1.0, 1.5).diagonal_energy(&SpinConfiguration::all_up(4));
    }

    #[test]
    fn magnetization_moments() {
        assert_eq!(magnetization_moment(&SpinConfiguration::all_up(8), 2), 64.0);
        assert_eq!(magnetization_moment(&SpinConfiguration::alternating(8), 1), 0.0);
        assert_eq!(magnetization_moment(&"110".parse().unwrap(), 4), 1.0);
    }

    #[test]
    fn bitstring_round_trip_and_errors() {
        let psi: SpinConfiguration = "1101".parse().unwrap();
        assert_eq!(psi.to_string(), "1101");
        assert!(psi.is_up(0) && psi.is_up(1) && !psi.is_up(2));
        assert!("10x1".parse::<SpinConfiguration>().is_err());
        assert!("".parse::<SpinConfiguration>().is_err());
    }

    #[test]
    fn symmetry_orbit_shares_representative() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let psi = SpinConfiguration::random(9, &mut rng);
            let flipped = SpinConfiguration::new(9, !psi.bits() & 0x1ff);
            let reflected =
                SpinConfiguration::new(9, psi.bits().reverse_bits() >> (64 - 9));
            let r = psi.symmetry_representative();
            assert_eq!(flipped.symmetry_representative(), r);
            assert_eq!(reflected.symmetry_representative(), r);
        }
    }

    #[test]
    fn prefix_keeps_leftmost_sites() {
        let psi: SpinConfiguration = "10110".parse().unwrap();
        assert_eq!(psi.prefix(0), None);
        assert_eq!(psi.prefix(3).unwrap().to_string(), "101");
    }
}
