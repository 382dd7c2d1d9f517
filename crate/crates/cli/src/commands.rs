use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use echotherm::dynamics::{EchoEngine, EchoMethod};
use echotherm::model::{IsingModel, SpinConfiguration, MAX_DENSE_SITES};
use echotherm::oracle::{reference_curve, SpectralDecomposition};
use echotherm::pipeline::{chain_seed, EchoSource, EchoWeigher, SpectralSettings};
use echotherm::protocol::{shot_budget, write_counts_csv, RamseySimulator};
use echotherm::sampler::{
    error_scaling, log_log_slope, pool_estimates, run_chain, ChainConfig, ChainResult, Estimate, Observable,
};

use crate::config::{ConfigError, ModelBlock, RunConfig};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Runtime(String),
}

impl From<echotherm::Error> for CliError {
    fn from(e: echotherm::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Complete,
    Partial,
}

const OBSERVABLES: [Observable; 5] = [
    Observable::MagnetizationSquared,
    Observable::Sz2,
    Observable::Sz4,
    Observable::Energy,
    Observable::EnergySquared,
];

#[derive(Serialize)]
struct Summary<'a> {
    command: &'a str,
    version: &'a str,
    status: &'a str,
    model: &'a ModelBlock,
    warnings: Vec<String>,
    runs: Vec<RunSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error_scaling: Option<ScalingSummary>,
}

#[derive(Serialize)]
struct RunSummary {
    label: String,
    source: &'static str,
    shots: Option<u64>,
    p_cut: f64,
    /// N_MC (t_max/Δt) 2 L N_s or N_MC (t_max/Δt) N_s, summed over chains
    /// and temperatures.
    nominal_shot_budget: Option<u64>,
    /// Shots actually simulated for distinct configurations.
    measured_shots: u64,
    points: Vec<PointSummary>,
}

#[derive(Serialize)]
struct PointSummary {
    temperature: f64,
    chains: usize,
    failed_chains: usize,
    acceptance_rate: f64,
    estimates: BTreeMap<String, Estimate>,
    flagged_time_points: usize,
    errors: Vec<String>,
}

#[derive(Serialize)]
struct ScalingSummary {
    temperature: f64,
    observable: &'static str,
    slope: f64,
    points: Vec<ScalingPoint>,
}

#[derive(Serialize)]
struct ScalingPoint {
    n_mc: usize,
    error: f64,
}

#[derive(Serialize)]
struct SeedRecord {
    run: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    temperature: Option<f64>,
    chain: usize,
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    measurement_seed: Option<u64>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    config: &'a RunConfig,
    seeds: Vec<SeedRecord>,
}

struct PointRun {
    temperature: f64,
    chains: Vec<Result<ChainResult, String>>,
    shots: u64,
    flagged: usize,
    seeds: Vec<(u64, Option<u64>)>,
}

/// Chooses the echo source for a chain.
enum SourcePlan {
    Exact(EchoSource),
    Measured {
        simulator: Arc<RamseySimulator>,
        noise: echotherm::protocol::NoiseModel,
        kind: echotherm::protocol::ProtocolKind,
        base_seed: u64,
    },
}

impl SourcePlan {
    fn for_chain(&self, ti: usize, chain: usize) -> (EchoSource, Option<u64>) {
        match self {
            SourcePlan::Exact(source) => (source.clone(), None),
            SourcePlan::Measured {
                simulator,
                noise,
                kind,
                base_seed,
            } => {
                let seed = chain_seed(*base_seed, ti, chain);
                (
                    EchoSource::Measured {
                        simulator: simulator.clone(),
                        noise: *noise,
                        kind: *kind,
                        seed,
                    },
                    Some(seed),
                )
            }
        }
    }
}

fn sweep(config: &RunConfig, model: &IsingModel, plan: &SourcePlan, settings: SpectralSettings) -> Vec<PointRun> {
    let s = &config.sampler;
    s.temperatures
        .par_iter()
        .enumerate()
        .map(|(ti, &t)| {
            let outcomes: Vec<_> = (0..s.n_chains)
                .into_par_iter()
                .map(|c| {
                    let seed = chain_seed(s.seed, ti, c);
                    let (source, measurement_seed) = plan.for_chain(ti, c);
                    let mut weigher = EchoWeigher::new(source, settings, t);
                    let chain_config = ChainConfig::new(t, s.n_mc, s.burn_in, seed);
                    let result = run_chain(model, &chain_config, &mut weigher, &OBSERVABLES).map_err(|e| {
                        log::error!("chain {c} at T = {t} failed: {e}");
                        e.to_string()
                    });
                    (result, weigher.shots_used(), weigher.flagged_points(), (seed, measurement_seed))
                })
                .collect();
            let mut point = PointRun {
                temperature: t,
                chains: Vec::new(),
                shots: 0,
                flagged: 0,
                seeds: Vec::new(),
            };
            for (result, shots, flagged, seeds) in outcomes {
                point.chains.push(result);
                point.shots += shots;
                point.flagged += flagged;
                point.seeds.push(seeds);
            }
            log::info!("T = {t} done");
            point
        })
        .collect()
}

fn summarize(points: &[PointRun]) -> Vec<PointSummary> {
    points
        .iter()
        .map(|p| {
            let ok: Vec<&ChainResult> = p.chains.iter().filter_map(|c| c.as_ref().ok()).collect();
            let acceptance = ok.iter().map(|c| c.acceptance_rate).sum::<f64>() / ok.len().max(1) as f64;
            PointSummary {
                temperature: p.temperature,
                chains: p.chains.len(),
                failed_chains: p.chains.len() - ok.len(),
                acceptance_rate: acceptance,
                estimates: pool_estimates(&ok),
                flagged_time_points: p.flagged,
                errors: p.chains.iter().filter_map(|c| c.as_ref().err().cloned()).collect(),
            }
        })
        .collect()
}

fn fmt(x: Option<&Estimate>, error: bool) -> String {
    match x {
        Some(e) if error => e.error.to_string(),
        Some(e) => e.mean.to_string(),
        None => "NaN".into(),
    }
}

/// CSV with header `T,msq,msq_err,binder,binder_err,energy,cv`.
fn write_curves(path: &Path, points: &[PointSummary]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Runtime(e.to_string()))?;
    let csv_err = |e: csv::Error| CliError::Runtime(e.to_string());
    w.write_record(["T", "msq", "msq_err", "binder", "binder_err", "energy", "cv"]).map_err(csv_err)?;
    for p in points {
        let get = |k: &str| p.estimates.get(k);
        w.write_record([
            p.temperature.to_string(),
            fmt(get("msq"), false),
            fmt(get("msq"), true),
            fmt(get("binder"), false),
            fmt(get("binder"), true),
            fmt(get("energy"), false),
            fmt(get("cv"), false),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn write_traces(dir: &Path, label: &str, points: &[PointRun]) -> Result<(), CliError> {
    let traces = dir.join("traces");
    fs::create_dir_all(&traces)?;
    for (ti, p) in points.iter().enumerate() {
        for (c, chain) in p.chains.iter().enumerate() {
            if let Ok(chain) = chain {
                let file = File::create(traces.join(format!("{label}_T{ti}_chain{c}.csv")))?;
                chain.write_trace(BufWriter::new(file))?;
            }
        }
    }
    Ok(())
}

fn build_model(config: &RunConfig) -> Arc<IsingModel> {
    let m = &config.model;
    Arc::new(IsingModel::new(m.sites, m.coupling, m.field, m.alpha))
}

fn exact_engine(model: &Arc<IsingModel>) -> Result<EchoEngine, CliError> {
    Ok(EchoEngine::new(model.clone(), EchoMethod::auto(model.sites()))?)
}

fn seeds_of(label: &str, points: &[PointRun]) -> Vec<SeedRecord> {
    points
        .iter()
        .flat_map(|p| {
            p.seeds.iter().enumerate().map(move |(c, (seed, m))| SeedRecord {
                run: label.to_string(),
                temperature: Some(p.temperature),
                chain: c,
                seed: *seed,
                measurement_seed: *m,
            })
        })
        .collect()
}

fn scaling(config: &RunConfig, points: &[PointRun], out: &Path) -> Result<Option<ScalingSummary>, CliError> {
    let Some(lengths) = &config.sampler.error_scaling else {
        return Ok(None);
    };
    let first = &points[0];
    let series: Vec<Vec<f64>> = first
        .chains
        .iter()
        .filter_map(|c| c.as_ref().ok())
        .map(|c| c.series(Observable::Sz2))
        .collect();
    if series.is_empty() {
        return Ok(None);
    }
    let errors = error_scaling(&series, lengths)?;
    let mut w = csv::Writer::from_path(out.join("error_scaling.csv")).map_err(|e| CliError::Runtime(e.to_string()))?;
    w.write_record(["n_mc", "error"]).map_err(|e| CliError::Runtime(e.to_string()))?;
    for (n, e) in &errors {
        w.write_record([n.to_string(), e.to_string()])
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    w.flush()?;
    Ok(Some(ScalingSummary {
        temperature: first.temperature,
        observable: "sz2",
        slope: log_log_slope(&errors),
        points: errors.into_iter().map(|(n_mc, error)| ScalingPoint { n_mc, error }).collect(),
    }))
}

fn status_of(runs: &[RunSummary]) -> Status {
    if runs.iter().flat_map(|r| &r.points).any(|p| p.failed_chains > 0) {
        Status::Partial
    } else {
        Status::Complete
    }
}

fn status_name(status: Status) -> &'static str {
    match status {
        Status::Complete => "complete",
        Status::Partial => "partial",
    }
}

/// Noiseless sweep: summary.json, curves.csv, manifest.json and, when
/// configured, error_scaling.csv and traces.
pub fn cmd_run(config: &RunConfig, out: &Path) -> Result<Status, CliError> {
    fs::create_dir_all(out)?;
    let model = build_model(config);
    let plan = SourcePlan::Exact(EchoSource::Exact(Arc::new(exact_engine(&model)?)));
    let settings = config.spectral_settings(None);
    let points = sweep(config, &model, &plan, settings);
    let summaries = summarize(&points);
    write_curves(&out.join("curves.csv"), &summaries)?;
    if config.output.traces {
        write_traces(out, "exact", &points)?;
    }
    let error_scaling = scaling(config, &points, out)?;
    let runs = vec![RunSummary {
        label: "exact".into(),
        source: "exact",
        shots: None,
        p_cut: settings.p_cut,
        nominal_shot_budget: None,
        measured_shots: 0,
        points: summaries,
    }];
    let status = status_of(&runs);
    write_json(
        &out.join("summary.json"),
        &Summary {
            command: "run",
            version: VERSION,
            status: status_name(status),
            model: &config.model,
            warnings: config.warnings(),
            runs,
            error_scaling,
        },
    )?;
    write_json(
        &out.join("manifest.json"),
        &Manifest {
            command: "run",
            version: VERSION,
            config,
            seeds: seeds_of("exact", &points),
        },
    )?;
    Ok(status)
}

/// As [`cmd_run`] with echoes from the simulated Ramsey protocol, one run
/// per shot level, curves in curves_<label>.csv.
pub fn cmd_protocol(config: &RunConfig, out: &Path) -> Result<Status, CliError> {
    let Some(protocol) = &config.protocol else {
        return Err(ConfigError::Invalid {
            field: "protocol".into(),
            reason: "the protocol command needs a [protocol] block".into(),
        }
        .into());
    };
    fs::create_dir_all(out)?;
    let model = build_model(config);
    let simulator = Arc::new(RamseySimulator::with_full_engine(exact_engine(&model)?)?);
    let mut runs = Vec::new();
    let mut seeds = Vec::new();
    for (li, level) in protocol.levels.iter().enumerate() {
        let label = level.label();
        let plan = SourcePlan::Measured {
            simulator: simulator.clone(),
            noise: config.noise_model(protocol, level),
            kind: protocol.kind,
            base_seed: chain_seed(config.sampler.seed, usize::MAX - li, 0),
        };
        let settings = config.spectral_settings(level.p_cut);
        let points = sweep(config, &model, &plan, settings);
        let summaries = summarize(&points);
        write_curves(&out.join(format!("curves_{label}.csv")), &summaries)?;
        if config.output.traces {
            write_traces(out, &label, &points)?;
        }
        let chains = config.sampler.temperatures.len() * config.sampler.n_chains;
        let budget = level.shots.map(|n| {
            let per_chain = shot_budget(protocol.kind, config.sampler.n_mc, &config.grid(), model.sites(), n);
            u64::try_from(per_chain * chains as u128).unwrap_or(u64::MAX)
        });
        seeds.extend(seeds_of(&label, &points));
        runs.push(RunSummary {
            label,
            source: "measured",
            shots: level.shots,
            p_cut: settings.p_cut,
            nominal_shot_budget: budget,
            measured_shots: points.iter().map(|p| p.shots).sum(),
            points: summaries,
        });
    }
    let status = status_of(&runs);
    write_json(
        &out.join("summary.json"),
        &Summary {
            command: "protocol",
            version: VERSION,
            status: status_name(status),
            model: &config.model,
            warnings: config.warnings(),
            runs,
            error_scaling: None,
        },
    )?;
    write_json(
        &out.join("manifest.json"),
        &Manifest {
            command: "protocol",
            version: VERSION,
            config,
            seeds,
        },
    )?;
    Ok(status)
}

/// Exact-diagonalization curves in oracle.csv, header `T,msq,binder,energy,cv`.
pub fn cmd_oracle(config: &RunConfig, out: &Path) -> Result<Status, CliError> {
    if config.model.sites > MAX_DENSE_SITES {
        return Err(ConfigError::Invalid {
            field: "model.sites".into(),
            reason: format!(
                "exact diagonalization is limited to {MAX_DENSE_SITES} sites, got {}",
                config.model.sites
            ),
        }
        .into());
    }
    fs::create_dir_all(out)?;
    let model = build_model(config);
    let dec = SpectralDecomposition::new(&model);
    let curve = reference_curve(&model, &dec, &config.sampler.temperatures);
    let mut w = csv::Writer::from_path(out.join("oracle.csv")).map_err(|e| CliError::Runtime(e.to_string()))?;
    for point in &curve {
        w.serialize(OracleRow {
            t: point.temperature,
            msq: point.msq,
            binder: point.binder,
            energy: point.energy,
            cv: point.cv,
        })
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    w.flush()?;
    write_json(
        &out.join("manifest.json"),
        &Manifest {
            command: "oracle",
            version: VERSION,
            config,
            seeds: Vec::new(),
        },
    )?;
    Ok(Status::Complete)
}

#[derive(Serialize)]
struct OracleRow {
    #[serde(rename = "T")]
    t: f64,
    msq: f64,
    binder: f64,
    energy: f64,
    cv: f64,
}

/// Echo and work distribution of the polarized state, the alternating
/// state and any extra states: echo_<bits>.csv and work_<bits>.csv. With a
/// protocol block, each shot level adds echo_<bits>_<label>.csv,
/// work_<bits>_<label>.csv and counts_<bits>_<label>.csv.
pub fn cmd_echo(config: &RunConfig, states: &[String], out: &Path) -> Result<Status, CliError> {
    let sites = config.model.sites;
    let mut configurations = vec![SpinConfiguration::all_up(sites), SpinConfiguration::alternating(sites)];
    for text in states {
        let psi: SpinConfiguration = text.parse().map_err(|e| ConfigError::Invalid {
            field: "state".into(),
            reason: format!("{text:?}: {e}"),
        })?;
        if psi.len() != sites {
            return Err(ConfigError::Invalid {
                field: "state".into(),
                reason: format!("{text:?} has {} sites, the model has {sites}", psi.len()),
            }
            .into());
        }
        if !configurations.contains(&psi) {
            configurations.push(psi);
        }
    }
    fs::create_dir_all(out)?;
    let model = build_model(config);
    let engine = exact_engine(&model)?;
    let grid = config.grid();
    let settings = config.spectral_settings(None);
    for psi in &configurations {
        let echo = engine.loschmidt_series(psi, &grid)?;
        echo.write_csv(BufWriter::new(File::create(out.join(format!("echo_{psi}.csv")))?))?;
        settings
            .distribution(&echo)
            .write_csv(BufWriter::new(File::create(out.join(format!("work_{psi}.csv")))?))?;
    }
    let mut seeds = Vec::new();
    if let Some(protocol) = &config.protocol {
        let simulator = RamseySimulator::with_full_engine(engine)?;
        for (li, level) in protocol.levels.iter().enumerate() {
            let label = level.label();
            let settings = config.spectral_settings(level.p_cut);
            for (si, psi) in configurations.iter().enumerate() {
                let seed = chain_seed(config.sampler.seed, usize::MAX - li, si);
                let mut rng = echotherm::protocol::stream_rng(seed, 0);
                let noisy =
                    simulator.noisy_loschmidt_series(psi, &grid, &config.noise_model(protocol, level), protocol.kind, &mut rng)?;
                let stem = format!("{psi}_{label}");
                noisy
                    .series
                    .write_csv(BufWriter::new(File::create(out.join(format!("echo_{stem}.csv")))?))?;
                settings
                    .distribution(&noisy.series)
                    .write_csv(BufWriter::new(File::create(out.join(format!("work_{stem}.csv")))?))?;
                write_counts_csv(&noisy.counts, BufWriter::new(File::create(out.join(format!("counts_{stem}.csv")))?))?;
                seeds.push(SeedRecord {
                    run: stem,
                    temperature: None,
                    chain: 0,
                    seed,
                    measurement_seed: None,
                });
            }
        }
    }
    write_json(
        &out.join("manifest.json"),
        &Manifest {
            command: "echo",
            version: VERSION,
            config,
            seeds,
        },
    )?;
    Ok(Status::Complete)
}

pub fn output_dir(config: &RunConfig, flag: Option<PathBuf>) -> PathBuf {
    flag.unwrap_or_else(|| config.output.directory.clone())
}
