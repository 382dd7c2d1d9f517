//! Glue between echoes and chains: a [`StateWeigher`] that turns the echo of
//! a configuration into its filtered, cut work distribution and from there
//! into ln p_ψ(T) and per-state energy estimators.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{EchoEngine, EchoSeries, StateCache, TimeGrid};
use crate::error::{Error, Result};
use crate::model::SpinConfiguration;
use crate::protocol::{stream_rng, NoiseModel, ProtocolKind, RamseySimulator};
use crate::sampler::{StateWeigher, WeightedState};
use crate::spectral::{apply_cut, boltzmann_weight, filter_corrected_energy_moments, work_distribution, WorkDistribution};

/// Energy the work distribution is shifted by before the transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShiftPolicy {
    /// E_ψ, centering each distribution on its own mean.
    #[default]
    Energy,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpectralSettings {
    pub grid: TimeGrid,
    pub delta: f64,
    pub p_cut: f64,
    pub shift: ShiftPolicy,
}

impl SpectralSettings {
    pub fn new(grid: TimeGrid, delta: f64, p_cut: f64) -> Self {
        Self {
            grid,
            delta,
            p_cut,
            shift: ShiftPolicy::Energy,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::InvalidParameter {
                field: "spectral.delta".into(),
                reason: format!("must be positive, got {}", self.delta),
            });
        }
        if !(self.p_cut >= 0.0 && self.p_cut.is_finite()) {
            return Err(Error::InvalidParameter {
                field: "spectral.p_cut".into(),
                reason: format!("must be non-negative, got {}", self.p_cut),
            });
        }
        Ok(())
    }

    /// Cut work distribution of an echo series.
    pub fn distribution(&self, echo: &EchoSeries) -> WorkDistribution {
        let shift = match self.shift {
            ShiftPolicy::Energy => echo.source_energy,
            ShiftPolicy::Zero => 0.0,
        };
        apply_cut(&work_distribution(echo, self.delta, shift), self.p_cut)
    }

    /// ln p_ψ(T) and the filter-corrected energy estimators.
    pub fn weigh(&self, echo: &EchoSeries, temperature: f64) -> WeightedState {
        let wd = self.distribution(echo);
        let weight = boltzmann_weight(&wd, temperature);
        let (energy, energy_sq) = if weight.is_degenerate() {
            (f64::NAN, f64::NAN)
        } else {
            filter_corrected_energy_moments(&wd, temperature)
        };
        WeightedState {
            log_weight: weight.log_weight,
            energy,
            energy_sq,
        }
    }
}

/// Where echoes come from.
#[derive(Debug, Clone)]
pub enum EchoSource {
    Exact(Arc<EchoEngine>),
    /// Simulated Ramsey measurement. The measurement of each configuration
    /// is seeded from `seed` and the configuration bits, so it does not
    /// depend on the order in which states are visited.
    Measured {
        simulator: Arc<RamseySimulator>,
        noise: NoiseModel,
        kind: ProtocolKind,
        seed: u64,
    },
}

impl EchoSource {
    /// Echo series of ψ and the shots spent on it.
    pub fn series(&self, psi: &SpinConfiguration, grid: &TimeGrid) -> Result<(EchoSeries, u64)> {
        match self {
            EchoSource::Exact(engine) => Ok((engine.loschmidt_series(psi, grid)?, 0)),
            EchoSource::Measured {
                simulator,
                noise,
                kind,
                seed,
            } => {
                let mut rng: ChaCha8Rng = stream_rng(*seed, psi.bits());
                let noisy = simulator.noisy_loschmidt_series(psi, grid, noise, *kind, &mut rng)?;
                Ok((noisy.series, noisy.shots_used))
            }
        }
    }

    /// Cache key: measured echoes differ between symmetric partners.
    fn key(&self, psi: &SpinConfiguration) -> u64 {
        match self {
            EchoSource::Exact(_) => psi.symmetry_representative(),
            EchoSource::Measured { .. } => psi.bits(),
        }
    }
}

/// Weigher for one chain at one temperature, with its own cache.
pub struct EchoWeigher {
    source: EchoSource,
    settings: SpectralSettings,
    temperature: f64,
    cache: StateCache<WeightedState>,
    shots_used: u64,
    flagged_points: usize,
}

impl EchoWeigher {
    pub fn new(source: EchoSource, settings: SpectralSettings, temperature: f64) -> Self {
        Self::with_capacity(source, settings, temperature, StateCache::<WeightedState>::DEFAULT_CAPACITY)
    }

    pub fn with_capacity(source: EchoSource, settings: SpectralSettings, temperature: f64, capacity: usize) -> Self {
        assert!(temperature > 0.0, "temperature must be positive");
        Self {
            source,
            settings,
            temperature,
            cache: StateCache::new(capacity),
            shots_used: 0,
            flagged_points: 0,
        }
    }

    /// Shots spent on distinct configurations. The nominal budget that
    /// charges every iteration is [`crate::protocol::shot_budget`].
    pub fn shots_used(&self) -> u64 {
        self.shots_used
    }

    /// Time points zeroed for lack of Ramsey contrast.
    pub fn flagged_points(&self) -> usize {
        self.flagged_points
    }

    /// (hits, misses)
    pub fn cache_stats(&self) -> (u64, u64) {
        self.cache.stats()
    }
}

impl StateWeigher for EchoWeigher {
    fn evaluate(&mut self, psi: &SpinConfiguration) -> Result<WeightedState> {
        let key = self.source.key(psi);
        let Self {
            source,
            settings,
            temperature,
            cache,
            shots_used,
            flagged_points,
        } = self;
        cache.get_or_compute_keyed(key, || {
            let (echo, shots) = source.series(psi, &settings.grid)?;
            *shots_used += shots;
            *flagged_points += echo.flagged.len();
            Ok(settings.weigh(&echo, *temperature))
        })
    }
}

/// p_ψ(T) summed over all 2^L configurations; Σ_ψ p_ψ(T) ≈ Z e^{δ²/2T²}.
pub fn total_weight(source: &EchoSource, settings: &SpectralSettings, sites: usize, temperature: f64) -> Result<f64> {
    let mut total = 0.0;
    for bits in 0..1u64 << sites {
        let psi = SpinConfiguration::new(sites, bits);
        let (echo, _) = source.series(&psi, &settings.grid)?;
        total += settings.weigh(&echo, temperature).log_weight.exp();
    }
    Ok(total)
}

/// Deterministic per-chain seed from a base seed, chain index and
/// temperature index.
pub fn chain_seed(base: u64, temperature_index: usize, chain: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(((temperature_index as u64) << 32) | chain as u64);
    rand::Rng::random(&mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::EchoMethod;
    use crate::model::IsingModel;

    fn exact(model: IsingModel) -> EchoSource {
        EchoSource::Exact(Arc::new(EchoEngine::new(Arc::new(model), EchoMethod::Eigen).unwrap()))
    }

    #[test]
    fn classical_weight_is_boltzmann_factor() {
        // At g = 0 the distribution is one filtered line at E_ψ.
        let model = IsingModel::new(4, 1.0, 0.0, 1.5);
        let source = exact(model.clone());
        let settings = SpectralSettings::new(TimeGrid::new(0.05, 160), 1.5, 0.0);
        let psi: SpinConfiguration = "1101".parse().unwrap();
        let e = model.diagonal_energy(&psi);
        let t = 3.0;
        let (echo, _) = source.series(&psi, &settings.grid).unwrap();
        let w = settings.weigh(&echo, t);
        let expected = -e / t + 1.5f64.powi(2) / (2.0 * t * t);
        assert!((w.log_weight - expected).abs() < 1e-6, "{} vs {expected}", w.log_weight);
        assert!((w.energy - e).abs() < 1e-5, "{} vs {e}", w.energy);
        assert!((w.energy_sq - e * e).abs() < 1e-4);
    }

    #[test]
    fn shift_policy_does_not_change_weight() {
        let model = IsingModel::new(4, 1.0, 1.0, 1.5);
        let source = exact(model);
        let mut settings = SpectralSettings::new(TimeGrid::new(0.05, 160), 1.5, 0.0);
        let psi: SpinConfiguration = "1001".parse().unwrap();
        let (echo, _) = source.series(&psi, &settings.grid).unwrap();
        let a = settings.weigh(&echo, 4.0).log_weight;
        settings.shift = ShiftPolicy::Zero;
        let b = settings.weigh(&echo, 4.0).log_weight;
        assert!((a - b).abs() < 1e-8, "{a} vs {b}");
    }

    #[test]
    fn weigher_caches_symmetric_partners() {
        let source = exact(IsingModel::new(4, 1.0, 1.0, 1.5));
        let settings = SpectralSettings::new(TimeGrid::new(0.1, 20), 2.0, 1e-6);
        let mut weigher = EchoWeigher::new(source, settings, 3.0);
        let a = weigher.evaluate(&"1000".parse().unwrap()).unwrap();
        let b = weigher.evaluate(&"1110".parse().unwrap()).unwrap();
        assert_eq!(a, b);
        assert_eq!(weigher.cache_stats(), (1, 1));
    }

    #[test]
    fn measured_source_is_reproducible() {
        let model = Arc::new(IsingModel::new(3, 1.0, 1.0, 1.5));
        let source = EchoSource::Measured {
            simulator: Arc::new(RamseySimulator::new(model).unwrap()),
            noise: NoiseModel::with_shots(64),
            kind: ProtocolKind::Sequential,
            seed: 11,
        };
        let grid = TimeGrid::new(0.1, 10);
        let psi: SpinConfiguration = "101".parse().unwrap();
        let (a, shots) = source.series(&psi, &grid).unwrap();
        let (b, _) = source.series(&psi, &grid).unwrap();
        assert_eq!(a.values, b.values);
        assert_eq!(shots, 10 * 2 * 3 * 64);
    }

    #[test]
    fn chain_seeds_are_distinct() {
        let mut seeds: Vec<u64> = (0..4).flat_map(|t| (0..10).map(move |c| chain_seed(7, t, c))).collect();
        seeds.sort_unstable();
        seeds.dedup();
        assert_eq!(seeds.len(), 40);
        assert_eq!(chain_seed(7, 2, 3), chain_seed(7, 2, 3));
    }
}
