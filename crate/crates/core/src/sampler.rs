//! Metropolis importance sampling of product states and jackknife error
//! analysis.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{IsingModel, SpinConfiguration};

const MAX_INITIAL_DRAWS: usize = 100;
/// Smallest bin count considered by the automatic binning scan.
pub const MIN_BINS: usize = 16;
const PLATEAU_TOLERANCE: f64 = 0.05;

/// What a chain needs to know about a state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedState {
    /// ln p_ψ(T); -∞ rejects the state.
    pub log_weight: f64,
    /// Per-state estimator of ⟨H⟩_T.
    pub energy: f64,
    /// Per-state estimator of ⟨H²⟩_T.
    pub energy_sq: f64,
}

impl WeightedState {
    /// A state known only by its log weight.
    pub fn from_log_weight(log_weight: f64) -> Self {
        Self {
            log_weight,
            energy: f64::NAN,
            energy_sq: f64::NAN,
        }
    }
}

/// Source of state weights. Must be deterministic per state within a run.
pub trait StateWeigher {
    fn evaluate(&mut self, psi: &SpinConfiguration) -> Result<WeightedState>;
}

impl<F> StateWeigher for F
where
    F: FnMut(&SpinConfiguration) -> Result<WeightedState>,
{
    fn evaluate(&mut self, psi: &SpinConfiguration) -> Result<WeightedState> {
        self(psi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    Random,
    AllUp,
    #[serde(serialize_with = "serialize_configuration")]
    User(SpinConfiguration),
}

fn serialize_configuration<S: serde::Serializer>(psi: &SpinConfiguration, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_str(psi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChainConfig {
    pub temperature: f64,
    /// Total proposals, burn-in included.
    pub n_mc: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub initial: InitialState,
}

impl ChainConfig {
    pub fn new(temperature: f64, n_mc: usize, burn_in: usize, seed: u64) -> Self {
        Self {
            temperature,
            n_mc,
            burn_in,
            seed,
            initial: InitialState::Random,
        }
    }

    pub fn samples(&self) -> usize {
        self.n_mc - self.burn_in
    }
}

/// Observables recorded along a chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Observable {
    /// (S^z/L)²
    MagnetizationSquared,
    /// (S^z)²
    Sz2,
    /// (S^z)⁴
    Sz4,
    Energy,
    EnergySquared,
}

impl Observable {
    pub const ALL: [Observable; 5] = [
        Observable::MagnetizationSquared,
        Observable::Sz2,
        Observable::Sz4,
        Observable::Energy,
        Observable::EnergySquared,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Observable::MagnetizationSquared => "msq",
            Observable::Sz2 => "sz2",
            Observable::Sz4 => "sz4",
            Observable::Energy => "energy",
            Observable::EnergySquared => "energy_sq",
        }
    }

    fn value(&self, record: &SampleRecord, sites: usize) -> f64 {
        let sz = record.sz as f64;
        match self {
            Observable::MagnetizationSquared => (sz / sites as f64).powi(2),
            Observable::Sz2 => sz * sz,
            Observable::Sz4 => sz.powi(4),
            Observable::Energy => record.energy_estimate,
            Observable::EnergySquared => record.energy_sq_estimate,
        }
    }
}

/// One post-burn-in iteration; describes the current state after the
/// acceptance step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SampleRecord {
    pub bits: u64,
    /// E_ψ = ⟨ψ|H|ψ⟩.
    pub diagonal_energy: f64,
    pub sz: i64,
    pub accepted: bool,
    pub log_weight: f64,
    pub energy_estimate: f64,
    pub energy_sq_estimate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub error: f64,
    pub bin_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainResult {
    pub sites: usize,
    pub config: ChainConfig,
    pub samples: Vec<SampleRecord>,
    pub acceptance_rate: f64,
    pub estimates: BTreeMap<String, Estimate>,
    /// (bin size, jackknife error) of ⟨(S^z/L)²⟩ from the doubling scan.
    pub binning_scan: Vec<(usize, f64)>,
}

impl ChainResult {
    pub fn series(&self, observable: Observable) -> Vec<f64> {
        self.samples.iter().map(|r| observable.value(r, self.sites)).collect()
    }

    /// Per-iteration trace, header
    /// `iteration,state,diagonal_energy,sz,accepted,log_weight`.
    pub fn write_trace<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["iteration", "state", "diagonal_energy", "sz", "accepted", "log_weight"])?;
        for (i, r) in self.samples.iter().enumerate() {
            w.write_record([
                (i + self.config.burn_in).to_string(),
                SpinConfiguration::new(self.sites, r.bits).to_string(),
                r.diagonal_energy.to_string(),
                r.sz.to_string(),
                (r.accepted as u8).to_string(),
                r.log_weight.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::Csv(e.to_string()))?;
        Ok(())
    }
}

/// Flips one uniformly chosen spin.
pub fn propose<R: Rng + ?Sized>(psi: &SpinConfiguration, rng: &mut R) -> SpinConfiguration {
    psi.flipped(rng.random_range(0..psi.len()))
}

/// Metropolis probability of moving a → b under single-spin-flip proposals
/// when b is one flip away from a.
pub fn transition_probability(log_weight_from: f64, log_weight_to: f64, sites: usize) -> f64 {
    let ratio = (log_weight_to - log_weight_from).exp().min(1.0);
    ratio / sites as f64
}

fn accept<R: Rng + ?Sized>(current: f64, proposed: f64, rng: &mut R) -> bool {
    if proposed == f64::NEG_INFINITY {
        return false;
    }
    let u: f64 = rng.random();
    proposed >= current || u < (proposed - current).exp()
}

/// Runs one Metropolis chain.
pub fn run_chain<W: StateWeigher + ?Sized>(
    model: &IsingModel,
    config: &ChainConfig,
    weigher: &mut W,
    observables: &[Observable],
) -> Result<ChainResult> {
    assert!(config.burn_in < config.n_mc, "burn-in must be shorter than the chain");
    let sites = model.sites();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut current = match config.initial {
        InitialState::Random => SpinConfiguration::random(sites, &mut rng),
        InitialState::AllUp => SpinConfiguration::all_up(sites),
        InitialState::User(psi) => {
            assert_eq!(psi.len(), sites, "initial state size does not match model");
            psi
        }
    };
    let mut current_weight = weigher.evaluate(&current)?;
    let mut draws = 0;
    while current_weight.log_weight == f64::NEG_INFINITY {
        if draws == MAX_INITIAL_DRAWS {
            return Err(Error::NoFiniteInitialState { attempts: draws });
        }
        current = SpinConfiguration::random(sites, &mut rng);
        current_weight = weigher.evaluate(&current)?;
        draws += 1;
    }

    let mut accepted_total = 0usize;
    let mut samples = Vec::with_capacity(config.samples());
    for iteration in 0..config.n_mc {
        let proposal = propose(&current, &mut rng);
        let proposal_weight = weigher.evaluate(&proposal)?;
        let accepted = accept(current_weight.log_weight, proposal_weight.log_weight, &mut rng);
        if accepted {
            current = proposal;
            current_weight = proposal_weight;
            accepted_total += 1;
        }
        if iteration >= config.burn_in {
            samples.push(SampleRecord {
                bits: current.bits(),
                diagonal_energy: model.diagonal_energy(&current),
                sz: current.magnetization(),
                accepted,
                log_weight: current_weight.log_weight,
                energy_estimate: current_weight.energy,
                energy_sq_estimate: current_weight.energy_sq,
            });
        }
    }

    let mut result = ChainResult {
        sites,
        config: *config,
        samples,
        acceptance_rate: accepted_total as f64 / config.n_mc as f64,
        estimates: BTreeMap::new(),
        binning_scan: Vec::new(),
    };
    result.binning_scan = binning_scan(&result.series(Observable::MagnetizationSquared));
    for obs in observables {
        let est = auto_jackknife(&result.series(*obs))?;
        result.estimates.insert(obs.name().to_string(), est);
    }
    let has = |o: Observable| observables.contains(&o);
    if has(Observable::Sz2) && has(Observable::Sz4) {
        let (value, error, bin_size) = binder_with_bin(&result)?;
        result.estimates.insert(
            "binder".into(),
            Estimate {
                mean: value,
                error,
                bin_size,
            },
        );
    }
    if has(Observable::Energy) && has(Observable::EnergySquared) {
        result.estimates.insert("cv".into(), specific_heat(&result)?);
    }
    Ok(result)
}

/// Bin means of the last `bins·bin_size` samples; the remainder is dropped
/// from the front.
fn bin_means(samples: &[f64], bin_size: usize) -> Vec<f64> {
    let bins = samples.len() / bin_size;
    let start = samples.len() - bins * bin_size;
    samples[start..]
        .chunks_exact(bin_size)
        .map(|c| c.iter().sum::<f64>() / bin_size as f64)
        .collect()
}

/// Jackknife mean and standard error with the given bin size.
pub fn jackknife(samples: &[f64], bin_size: usize) -> Result<(f64, f64)> {
    jackknife_function(&[samples], bin_size, |m| m[0])
}

/// Jackknife estimate of f(⟨x₁⟩, ⟨x₂⟩, …) over parallel series. The value
/// is f of the full means; the error comes from the leave-one-bin-out
/// evaluations of f.
pub fn jackknife_function<F>(series: &[&[f64]], bin_size: usize, f: F) -> Result<(f64, f64)>
where
    F: Fn(&[f64]) -> f64,
{
    assert!(bin_size >= 1);
    assert!(!series.is_empty());
    let len = series[0].len();
    assert!(series.iter().all(|s| s.len() == len), "series lengths differ");
    let bins = len / bin_size;
    if bins < 2 {
        return Err(Error::TooFewBins { bins });
    }
    let means: Vec<Vec<f64>> = series.iter().map(|s| bin_means(s, bin_size)).collect();
    let totals: Vec<f64> = means.iter().map(|m| m.iter().sum()).collect();
    let nb = bins as f64;
    let full: Vec<f64> = totals.iter().map(|t| t / nb).collect();
    let value = f(&full);
    let mut leave_out = Vec::with_capacity(bins);
    let mut args = vec![0.0; series.len()];
    for i in 0..bins {
        for (a, (t, m)) in args.iter_mut().zip(totals.iter().zip(&means)) {
            *a = (t - m[i]) / (nb - 1.0);
        }
        leave_out.push(f(&args));
    }
    let avg = leave_out.iter().sum::<f64>() / nb;
    let var = leave_out.iter().map(|x| (x - avg).powi(2)).sum::<f64>() * (nb - 1.0) / nb;
    Ok((value, var.sqrt()))
}

/// Jackknife errors for bin sizes 1, 2, 4, … while at least [`MIN_BINS`]
/// bins remain.
pub fn binning_scan(samples: &[f64]) -> Vec<(usize, f64)> {
    let mut scan = Vec::new();
    let mut b = 1;
    while samples.len() / b >= MIN_BINS {
        if let Ok((_, err)) = jackknife(samples, b) {
            scan.push((b, err));
        }
        b *= 2;
    }
    scan
}

/// First bin size whose error grows by less than 5% on doubling, or the
/// largest scanned size when no plateau is reached.
pub fn plateau_bin_size(scan: &[(usize, f64)]) -> usize {
    for w in scan.windows(2) {
        let (b, e) = w[0];
        let (_, e2) = w[1];
        if e2 <= e * (1.0 + PLATEAU_TOLERANCE) {
            return b;
        }
    }
    scan.last().map(|(b, _)| *b).unwrap_or(1)
}

/// Jackknife with the bin size picked by the doubling scan.
pub fn auto_jackknife(samples: &[f64]) -> Result<Estimate> {
    let scan = binning_scan(samples);
    if scan.is_empty() {
        return Err(Error::TooFewBins {
            bins: samples.len(),
        });
    }
    let bin_size = plateau_bin_size(&scan);
    let (mean, error) = jackknife(samples, bin_size)?;
    Ok(Estimate { mean, error, bin_size })
}

fn binder_with_bin(chain: &ChainResult) -> Result<(f64, f64, usize)> {
    let sz2 = chain.series(Observable::Sz2);
    let sz4 = chain.series(Observable::Sz4);
    if sz2.iter().all(|x| *x == 0.0) {
        return Err(Error::ZeroSecondMoment);
    }
    let b2 = plateau_bin_size(&binning_scan(&sz2));
    let b4 = plateau_bin_size(&binning_scan(&sz4));
    let bin_size = b2.max(b4);
    let (value, error) = jackknife_function(&[&sz2, &sz4], bin_size, |m| 1.5 - m[1] / (2.0 * m[0] * m[0]))?;
    Ok((value, error, bin_size))
}

/// U = 3/2 - ⟨(S^z)⁴⟩/(2⟨(S^z)²⟩²), jackknifed on the ratio.
pub fn binder_cumulant(chain: &ChainResult) -> Result<(f64, f64)> {
    binder_with_bin(chain).map(|(v, e, _)| (v, e))
}

/// C_V = (⟨H²⟩ - ⟨H⟩²)/(L T²), jackknifed on the combination.
pub fn specific_heat(chain: &ChainResult) -> Result<Estimate> {
    let e1 = chain.series(Observable::Energy);
    let e2 = chain.series(Observable::EnergySquared);
    let bin_size = plateau_bin_size(&binning_scan(&e1)).max(plateau_bin_size(&binning_scan(&e2)));
    let scale = chain.sites as f64 * chain.config.temperature.powi(2);
    let (mean, error) = jackknife_function(&[&e1, &e2], bin_size, |m| (m[1] - m[0] * m[0]) / scale)?;
    Ok(Estimate { mean, error, bin_size })
}

/// Outcome of one chain of an ensemble.
#[derive(Debug)]
pub struct ChainOutcome {
    pub seed: u64,
    pub result: Result<ChainResult>,
}

#[derive(Debug)]
pub struct EnsembleResult {
    pub chains: Vec<ChainOutcome>,
    /// Unweighted average of chain means; error from their scatter.
    pub pooled: BTreeMap<String, Estimate>,
}

impl EnsembleResult {
    pub fn is_complete(&self) -> bool {
        self.chains.iter().all(|c| c.result.is_ok())
    }

    pub fn successful(&self) -> impl Iterator<Item = &ChainResult> {
        self.chains.iter().filter_map(|c| c.result.as_ref().ok())
    }

    pub fn mean_acceptance(&self) -> f64 {
        let rates: Vec<f64> = self.successful().map(|c| c.acceptance_rate).collect();
        rates.iter().sum::<f64>() / rates.len().max(1) as f64
    }
}

/// Pools per-chain estimates: mean of means, standard error of the means.
/// A single chain keeps its own jackknife error.
pub fn pool_estimates(chains: &[&ChainResult]) -> BTreeMap<String, Estimate> {
    let mut pooled = BTreeMap::new();
    let Some(first) = chains.first() else {
        return pooled;
    };
    for name in first.estimates.keys() {
        let ests: Vec<&Estimate> = chains.iter().filter_map(|c| c.estimates.get(name)).collect();
        let n = ests.len();
        let mean = ests.iter().map(|e| e.mean).sum::<f64>() / n as f64;
        let error = if n >= 2 {
            let var = ests.iter().map(|e| (e.mean - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            ests[0].error
        };
        let bin_size = ests.iter().map(|e| e.bin_size).max().unwrap_or(1);
        pooled.insert(name.clone(), Estimate { mean, error, bin_size });
    }
    pooled
}

/// Runs independent chains concurrently. `make_weigher` builds a fresh
/// chain-local weigher for each chain index.
pub fn run_ensemble<W, F>(
    model: &IsingModel,
    configs: &[ChainConfig],
    make_weigher: F,
    observables: &[Observable],
) -> EnsembleResult
where
    W: StateWeigher,
    F: Fn(usize) -> W + Sync,
{
    let chains: Vec<ChainOutcome> = configs
        .par_iter()
        .enumerate()
        .map(|(i, config)| {
            let mut weigher = make_weigher(i);
            ChainOutcome {
                seed: config.seed,
                result: run_chain(model, config, &mut weigher, observables),
            }
        })
        .collect();
    let ok: Vec<&ChainResult> = chains.iter().filter_map(|c| c.result.as_ref().ok()).collect();
    let pooled = pool_estimates(&ok);
    EnsembleResult { chains, pooled }
}

/// Jackknife error of the mean over runs of each length in `lengths`,
/// averaged over every disjoint window of that length in every series. One
/// bin size, fixed by the binning scan of the longest window and capped so
/// the shortest window keeps [`MIN_BINS`] bins, is used throughout; any
/// residual binning bias is then a common factor that leaves the log-log
/// slope unchanged.
pub fn error_scaling(series: &[Vec<f64>], lengths: &[usize]) -> Result<Vec<(usize, f64)>> {
    let longest = *lengths.iter().max().expect("no lengths");
    let bin_sizes: Vec<usize> = series
        .iter()
        .map(|s| plateau_bin_size(&binning_scan(&s[..longest])))
        .collect();
    let mut sorted = bin_sizes.clone();
    sorted.sort_unstable();
    let shortest = *lengths.iter().min().unwrap();
    let bin_size = sorted[sorted.len() / 2].min((shortest / MIN_BINS).max(1));
    lengths
        .iter()
        .map(|&n| {
            let (mut total, mut windows) = (0.0, 0usize);
            for s in series {
                for window in s.chunks_exact(n) {
                    total += jackknife(window, bin_size)?.1;
                    windows += 1;
                }
            }
            Ok((n, total / windows as f64))
        })
        .collect()
}

/// Least-squares slope of ln(error) against ln(n).
pub fn log_log_slope(points: &[(usize, f64)]) -> f64 {
    let xs: Vec<f64> = points.iter().map(|(n, _)| (*n as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|(_, e)| e.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn single_site_proposal_always_flips() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let psi = SpinConfiguration::all_up(1);
        for _ in 0..10 {
            assert_eq!(propose(&psi, &mut rng).bits(), 0);
        }
    }

    #[test]
    fn proposal_is_one_flip_away() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut psi = SpinConfiguration::alternating(11);
        for _ in 0..200 {
            let next = propose(&psi, &mut rng);
            assert_eq!((next.bits() ^ psi.bits()).count_ones(), 1);
            psi = next;
        }
    }

    #[test]
    fn proposal_site_frequencies_are_uniform() {
        // Binomial(n, 1/8) counts per site within 4σ.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let psi = SpinConfiguration::all_down(8);
        let n = 100_000;
        let mut counts = [0usize; 8];
        for _ in 0..n {
            let next = propose(&psi, &mut rng);
            counts[next.bits().trailing_zeros() as usize] += 1;
        }
        let p = 1.0 / 8.0;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 * p).abs() < 4.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn jackknife_of_constant_series() {
        let (m, e) = jackknife(&[2.5; 100], 4).unwrap();
        assert_eq!(m, 2.5);
        assert_eq!(e, 0.0);
    }

    #[test]
    fn jackknife_needs_two_bins() {
        assert_eq!(jackknife(&[1.0, 2.0, 3.0], 2), Err(Error::TooFewBins { bins: 1 }));
    }

    #[test]
    fn jackknife_drops_remainder_from_front() {
        // The leading 100.0 is discarded with bin size 2.
        let (m, _) = jackknife(&[100.0, 1.0, 1.0, 3.0, 3.0], 2).unwrap();
        assert_eq!(m, 2.0);
    }

    #[test]
    fn jackknife_iid_matches_naive_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let xs: Vec<f64> = (0..20_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let (_, err) = jackknife(&xs, 1).unwrap();
        assert!((err / (std / n.sqrt()) - 1.0).abs() < 0.1);
    }

    #[test]
    fn binning_captures_autocorrelation() {
        // AR(1) with ρ = 0.9: the true error of the mean is √((1+ρ)/(1-ρ))
        // times the naive one.
        let rho: f64 = 0.9;
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut x = 0.0;
        let xs: Vec<f64> = (0..200_000)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                x = rho * x + (1.0 - rho * rho).sqrt() * z;
                x
            })
            .collect();
        let (_, naive) = jackknife(&xs, 1).unwrap();
        let est = auto_jackknife(&xs).unwrap();
        let expected = naive * ((1.0 + rho) / (1.0 - rho)).sqrt();
        assert!(est.error > 2.0 * naive);
        assert!((est.error / expected - 1.0).abs() < 0.2, "{} vs {}", est.error, expected);
        assert!(est.bin_size >= 16);
    }

    fn chain_from_sz(values: &[i64], sites: usize) -> ChainResult {
        ChainResult {
            sites,
            config: ChainConfig::new(1.0, values.len() + 1, 1, 0),
            samples: values
                .iter()
                .map(|&sz| SampleRecord {
                    bits: 0,
                    diagonal_energy: 0.0,
                    sz,
                    accepted: true,
                    log_weight: 0.0,
                    energy_estimate: 0.0,
                    energy_sq_estimate: 0.0,
                })
                .collect(),
            acceptance_rate: 1.0,
            estimates: BTreeMap::new(),
            binning_scan: Vec::new(),
        }
    }

    #[test]
    fn binder_of_ordered_samples_is_one() {
        let values: Vec<i64> = (0..400).map(|i| if i % 3 == 0 { 8 } else { -8 }).collect();
        let (u, err) = binder_cumulant(&chain_from_sz(&values, 8)).unwrap();
        assert!((u - 1.0).abs() < 1e-12);
        assert!(err < 1e-12);
    }

    #[test]
    fn binder_of_gaussian_samples_is_zero() {
        // Rounded Gaussian magnetizations with large spread.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let values: Vec<i64> = (0..200_000)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                (z * 300.0).round() as i64
            })
            .collect();
        let (u, err) = binder_cumulant(&chain_from_sz(&values, 1000)).unwrap();
        assert!(u.abs() < 4.0 * err + 1e-3, "U = {u} ± {err}");
    }

    #[test]
    fn binder_needs_nonzero_moment() {
        assert_eq!(binder_cumulant(&chain_from_sz(&[0; 64], 4)), Err(Error::ZeroSecondMoment));
    }

    #[test]
    fn pooled_error_shrinks_with_chain_count() {
        // Ten i.i.d. chains: scatter of means ≈ single-chain error/√10.
        let mut chains = Vec::new();
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let xs: Vec<f64> = (0..4000).map(|_| StandardNormal.sample(&mut rng)).collect();
            let mut c = chain_from_sz(&[0; 1], 1);
            c.estimates.insert("x".into(), auto_jackknife(&xs).unwrap());
            chains.push(c);
        }
        let refs: Vec<&ChainResult> = chains.iter().collect();
        let pooled = pool_estimates(&refs);
        let single = chains[0].estimates["x"].error;
        let ratio = pooled["x"].error / (single / 10f64.sqrt());
        assert!((0.4..2.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn infinite_temperature_chain_samples_uniformly() {
        let model = IsingModel::new(6, 1.0, 1.0, 1.5);
        let mut flat = |_: &SpinConfiguration| Ok(WeightedState::from_log_weight(0.0));
        let config = ChainConfig::new(f64::INFINITY, 60_000, 1000, 3);
        let chain = run_chain(&model, &config, &mut flat, &[Observable::MagnetizationSquared]).unwrap();
        assert_eq!(chain.acceptance_rate, 1.0);
        assert_eq!(chain.samples.len(), 59_000);
        let est = chain.estimates["msq"];
        assert!((est.mean - 1.0 / 6.0).abs() < 4.0 * est.error + 1e-3);
    }

    #[test]
    fn chain_is_deterministic_per_seed() {
        let model = IsingModel::new(5, 1.0, 1.0, 1.5);
        let weigher = |psi: &SpinConfiguration| Ok(WeightedState::from_log_weight(-model.diagonal_energy(psi) / 2.0));
        let config = ChainConfig::new(2.0, 3000, 100, 77);
        let a = run_chain(&model, &config, &mut weigher.clone(), &[Observable::Sz2]).unwrap();
        let b = run_chain(&model, &config, &mut weigher.clone(), &[Observable::Sz2]).unwrap();
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
    }

    #[test]
    fn impossible_initial_state_fails() {
        let model = IsingModel::new(3, 1.0, 1.0, 1.5);
        let mut dead = |_: &SpinConfiguration| Ok(WeightedState::from_log_weight(f64::NEG_INFINITY));
        let err = run_chain(&model, &ChainConfig::new(1.0, 10, 1, 0), &mut dead, &[]).unwrap_err();
        assert_eq!(err, Error::NoFiniteInitialState { attempts: 100 });
    }

    #[test]
    fn dead_all_up_start_is_redrawn() {
        let model = IsingModel::new(4, 1.0, 1.0, 1.5);
        let mut w = |psi: &SpinConfiguration| {
            Ok(WeightedState::from_log_weight(if psi.bits() == 0b1111 { f64::NEG_INFINITY } else { 0.0 }))
        };
        let mut config = ChainConfig::new(1.0, 100, 10, 4);
        config.initial = InitialState::AllUp;
        let chain = run_chain(&model, &config, &mut w, &[]).unwrap();
        assert!(chain.samples.iter().all(|s| s.bits != 0b1111));
    }

    #[test]
    fn ensemble_with_identical_seeds_is_identical() {
        let model = IsingModel::new(5, 1.0, 1.0, 1.5);
        let configs = vec![ChainConfig::new(3.0, 2000, 100, 11); 10];
        let make = |_| {
            let m = &model;
            move |psi: &SpinConfiguration| Ok(WeightedState::from_log_weight(-m.diagonal_energy(psi) / 3.0))
        };
        let ens = run_ensemble(&model, &configs, make, &[Observable::Sz2]);
        assert!(ens.is_complete());
        let first = ens.chains[0].result.as_ref().unwrap();
        for c in &ens.chains {
            assert_eq!(format!("{:?}", c.result.as_ref().unwrap()), format!("{first:?}"));
        }
        assert_eq!(ens.pooled["sz2"].error, 0.0);
    }

    #[test]
    fn ensemble_reports_failed_chains() {
        let model = IsingModel::new(3, 1.0, 1.0, 1.5);
        let configs: Vec<ChainConfig> = (0..3).map(|s| ChainConfig::new(1.0, 500, 10, s)).collect();
        let make = |i: usize| {
            move |_: &SpinConfiguration| {
                Ok(WeightedState::from_log_weight(if i == 1 { f64::NEG_INFINITY } else { 0.0 }))
            }
        };
        let ens = run_ensemble(&model, &configs, make, &[Observable::Sz2]);
        assert!(!ens.is_complete());
        assert!(ens.chains[1].result.is_err());
        assert_eq!(ens.successful().count(), 2);
        assert!(ens.pooled.contains_key("sz2"));
    }

    #[test]
    fn slope_of_exact_power_law() {
        let pts: Vec<(usize, f64)> = [100, 200, 400, 800].iter().map(|&n| (n, 3.0 / (n as f64).sqrt())).collect();
        assert!((log_log_slope(&pts) + 0.5).abs() < 1e-12);
    }
}
