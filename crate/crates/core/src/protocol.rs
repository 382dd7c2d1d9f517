//! Simulated trapped-ion measurement of Loschmidt echoes.
//!
//! The modulus r = |G_ψ(t)| is a return probability. The phase comes from
//! Ramsey interference against the shelving state |s⟩, which does not
//! evolve: either one GHZ-type experiment per time point, or a chain of
//! single-ion experiments between |ψ_j⟩ and |ψ_{j+1}⟩, where |ψ_j⟩ has the
//! j leftmost ions in the qubit state of ψ and the rest shelved. The phase
//! differences of the chain add up to the phase of G_ψ because G of the
//! fully shelved state is 1.
//!
//! Noise sources are binomial projection noise at a finite shot count,
//! uncorrelated single-qubit assignment errors (SPAM), and dephasing as an
//! envelope e^{-γ n t} on the echo of n active ions. Both error models have
//! an optional mitigation.

use std::f64::consts::PI;
use std::io;
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::Serialize;

use crate::dynamics::{EchoEngine, EchoMethod, EchoSeries, TimeGrid};
use crate::error::{Error, Result};
use crate::model::{IsingModel, SpinConfiguration};

/// The four Ramsey phases, equally spaced in [0, π].
pub const THETAS: [f64; 4] = [0.0, PI / 3.0, 2.0 * PI / 3.0, PI];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NoiseModel {
    /// Shots per amplitude measurement; `None` uses exact probabilities.
    pub shots: Option<u64>,
    /// Per-qubit assignment error probability.
    pub spam_p: f64,
    /// Dephasing rate per ion.
    pub gamma: f64,
    /// Divide measured probabilities by the SPAM survival factor.
    pub spam_inversion: bool,
    /// Multiply measured amplitudes by e^{γ n t}.
    pub dephasing_rescale: bool,
}

impl NoiseModel {
    pub fn noiseless() -> Self {
        Self {
            shots: None,
            spam_p: 0.0,
            gamma: 0.0,
            spam_inversion: false,
            dephasing_rescale: false,
        }
    }

    pub fn with_shots(shots: u64) -> Self {
        Self {
            shots: Some(shots),
            ..Self::noiseless()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: String| Error::InvalidParameter {
            field: field.into(),
            reason,
        };
        if self.shots == Some(0) {
            return Err(bad("protocol.shots", "must be at least 1".into()));
        }
        if !(0.0..0.5).contains(&self.spam_p) {
            return Err(bad("protocol.spam_p", format!("must lie in [0, 0.5), got {}", self.spam_p)));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(bad("protocol.gamma", format!("must be non-negative, got {}", self.gamma)));
        }
        Ok(())
    }

    /// Probability that none of `ions` is misread.
    pub fn spam_survival(&self, ions: usize) -> f64 {
        (1.0 - self.spam_p).powi(ions as i32)
    }

    /// Relative error on a return probability of `ions` qubits due to SPAM,
    /// 1 - (1-p)^n.
    pub fn spam_error(&self, ions: usize) -> f64 {
        1.0 - self.spam_survival(ions)
    }

    fn envelope(&self, ions: usize, t: f64) -> f64 {
        (-self.gamma * ions as f64 * t).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProtocolKind {
    Sequential,
    Ghz,
}

/// One batch of shots.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ShotCount {
    /// Number of active ions: j for the amplitude of ψ_j, j for the
    /// segment between ψ_j and ψ_{j+1}.
    pub j: usize,
    /// Ramsey phase, `None` for an amplitude measurement.
    pub theta: Option<f64>,
    pub t: f64,
    pub hits: u64,
    pub shots: u64,
}

/// Writes counts as CSV with header `j,theta,t,hits,shots`; `theta` is
/// empty for amplitude measurements.
pub fn write_counts_csv<W: io::Write>(counts: &[ShotCount], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["j", "theta", "t", "hits", "shots"])?;
    for c in counts {
        w.write_record([
            c.j.to_string(),
            c.theta.map(|x| x.to_string()).unwrap_or_default(),
            c.t.to_string(),
            c.hits.to_string(),
            c.shots.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::Csv(e.to_string()))?;
    Ok(())
}

/// Everything measured for one time point of the sequential protocol.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RamseyRecord {
    /// r̂_j for j = 0..=L, with r̂_0 = 1.
    pub amplitudes: Vec<f64>,
    /// Δφ̂_{j+1} for j = 0..L; NaN where the segment had no contrast.
    pub phase_differences: Vec<f64>,
    pub thetas: Vec<f64>,
    pub counts: Vec<ShotCount>,
}

/// Wraps into (-π, π].
pub fn wrap_phase(x: f64) -> f64 {
    let y = x.rem_euclid(2.0 * PI);
    if y > PI {
        y - 2.0 * PI
    } else {
        y
    }
}

/// ¼|G_j + e^{iθ} G_{j+1}|², the return probability of a single-ion Ramsey
/// experiment.
pub fn interference_probability(g_j: Complex64, g_next: Complex64, theta: f64) -> f64 {
    0.25 * (g_j + Complex64::from_polar(1.0, theta) * g_next).norm_sqr()
}

/// ¼(r_j² + r_{j+1}² + 2 r_{j+1} r_j cos(θ + Δφ_{j+1})).
pub fn ramsey_return_probability(r_j: f64, r_next: f64, phase_difference: f64, theta: f64) -> f64 {
    0.25 * (r_j * r_j + r_next * r_next + 2.0 * r_next * r_j * (theta + phase_difference).cos())
}

/// Least-squares fit of y(θ) = cos(θ + φ) over φ alone. The linear fit
/// y ≈ a cos θ + b sin θ seeds the phase, Newton steps refine it.
pub fn fit_cosine_phase(thetas: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(thetas.len(), ys.len());
    let (mut scc, mut sss, mut scs, mut syc, mut sys) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (th, y) in thetas.iter().zip(ys) {
        let (s, c) = th.sin_cos();
        scc += c * c;
        sss += s * s;
        scs += c * s;
        syc += y * c;
        sys += y * s;
    }
    let det = scc * sss - scs * scs;
    let a = (syc * sss - sys * scs) / det;
    let b = (sys * scc - syc * scs) / det;
    let mut phi = (-b).atan2(a);
    for _ in 0..20 {
        let (mut grad, mut curv) = (0.0, 0.0);
        for (th, y) in thetas.iter().zip(ys) {
            let (s, c) = (th + phi).sin_cos();
            grad += (y - c) * s;
            curv += s * s + (y - c) * c;
        }
        if curv <= 0.0 {
            break;
        }
        let step = grad / curv;
        phi -= step;
        if step.abs() < 1e-15 {
            break;
        }
    }
    wrap_phase(phi)
}

fn shots_per_theta(shots: u64, split: u64) -> u64 {
    (shots / split).max(1)
}

/// Measures a probability with SPAM, shot noise and SPAM inversion.
/// Returns the estimate and the raw (hits, shots) if shots were taken.
fn measure_probability<R: Rng + ?Sized>(
    probability: f64,
    ions: usize,
    shots: Option<u64>,
    noise: &NoiseModel,
    rng: &mut R,
) -> (f64, Option<(u64, u64)>) {
    let survival = noise.spam_survival(ions);
    let corrupted = (probability * survival).clamp(0.0, 1.0);
    let (mut estimate, raw) = match shots {
        None => (corrupted, None),
        Some(n) => {
            let hits = Binomial::new(n, corrupted).expect("valid binomial").sample(rng);
            (hits as f64 / n as f64, Some((hits, n)))
        }
    };
    if noise.spam_inversion {
        estimate /= survival;
    }
    (estimate, raw)
}

/// r̂ = |G| measured on `ions` active ions at time t. Clamped to [0, 1].
pub fn amplitude_measurement<R: Rng + ?Sized>(
    echo: Complex64,
    ions: usize,
    t: f64,
    noise: &NoiseModel,
    rng: &mut R,
) -> (f64, Option<(u64, u64)>) {
    amplitude_with_shots(echo, ions, t, noise.shots, noise, rng)
}

fn amplitude_with_shots<R: Rng + ?Sized>(
    echo: Complex64,
    ions: usize,
    t: f64,
    shots: Option<u64>,
    noise: &NoiseModel,
    rng: &mut R,
) -> (f64, Option<(u64, u64)>) {
    let envelope = noise.envelope(ions, t);
    let q = echo.norm_sqr() * envelope * envelope;
    let (q_hat, raw) = measure_probability(q, ions, shots, noise, rng);
    let mut r = q_hat.max(0.0).sqrt();
    if noise.dephasing_rescale {
        r /= envelope;
    }
    (r.min(1.0), raw)
}

/// Phase estimate of y(θ) = (4P̂(θ) - a² - b²)/(2ab) from the four Ramsey
/// points, or `None` without contrast.
fn phase_from_ramsey(a: f64, b: f64, probabilities: &[f64]) -> Option<f64> {
    let denom = 2.0 * a * b;
    if !(denom > 0.0) {
        return None;
    }
    let ys: Vec<f64> = probabilities
        .iter()
        .map(|p| (4.0 * p - a * a - b * b) / denom)
        .collect();
    Some(fit_cosine_phase(&THETAS, &ys))
}

/// Runs the sequential protocol for one time point.
///
/// `prefix_echoes[j]` is the exact G_{ψ_j}(t) for j = 0..=L (index 0 is the
/// fully shelved state). Each r̂_j is measured once with N_s shots and reused
/// by both adjacent segments; each segment spends N_s/4 shots per θ. Returns
/// (r̂_L, φ̂) with φ̂ `None` when some segment lacked contrast.
pub fn sequential_ramsey_phase<R: Rng + ?Sized>(
    prefix_echoes: &[Complex64],
    t: f64,
    noise: &NoiseModel,
    rng: &mut R,
) -> (f64, Option<f64>, RamseyRecord) {
    let sites = prefix_echoes.len() - 1;
    let mut record = RamseyRecord {
        thetas: THETAS.to_vec(),
        ..Default::default()
    };
    record.amplitudes.push(1.0);
    for (j, g) in prefix_echoes.iter().enumerate().skip(1) {
        let (r, raw) = amplitude_measurement(*g, j, t, noise, rng);
        if let Some((hits, shots)) = raw {
            record.counts.push(ShotCount { j, theta: None, t, hits, shots });
        }
        record.amplitudes.push(r);
    }

    let theta_shots = noise.shots.map(|n| shots_per_theta(n, 4));
    let mut phase = 0.0;
    let mut defined = true;
    for j in 0..sites {
        let g_j = prefix_echoes[j] * noise.envelope(j, t);
        let g_next = prefix_echoes[j + 1] * noise.envelope(j + 1, t);
        let mut probabilities = [0.0; 4];
        for (p, theta) in probabilities.iter_mut().zip(THETAS) {
            let exact = interference_probability(g_j, g_next, theta);
            let (estimate, raw) = measure_probability(exact, j + 1, theta_shots, noise, rng);
            if let Some((hits, shots)) = raw {
                record.counts.push(ShotCount { j, theta: Some(theta), t, hits, shots });
            }
            *p = estimate;
        }
        let (r_j, r_next) = (record.amplitudes[j], record.amplitudes[j + 1]);
        // Undo the dephasing envelope on M̂ consistently with the amplitudes.
        if noise.dephasing_rescale {
            let scale = noise.envelope(j, t) * noise.envelope(j + 1, t);
            let (e_j, e_next) = (noise.envelope(j, t), noise.envelope(j + 1, t));
            for p in probabilities.iter_mut() {
                // 4M = e_j² r_j² + e_{j+1}² r_{j+1}² + 2 e_j e_{j+1} r_j r_{j+1} cos
                let cross = 4.0 * *p - e_j * e_j * r_j * r_j - e_next * e_next * r_next * r_next;
                *p = (r_j * r_j + r_next * r_next + cross / scale) / 4.0;
            }
        }
        match phase_from_ramsey(r_j, r_next, &probabilities) {
            Some(dphi) => {
                record.phase_differences.push(dphi);
                phase += dphi;
            }
            None => {
                record.phase_differences.push(f64::NAN);
                defined = false;
            }
        }
    }
    let phase = defined.then(|| wrap_phase(phase));
    (record.amplitudes[sites], phase, record)
}

/// Runs the GHZ protocol for one time point on `sites` ions: N_s/2 shots for
/// r̂, N_s/8 for each of the four Ramsey phases. Returns (r̂, φ̂, counts).
pub fn ghz_ramsey_phase<R: Rng + ?Sized>(
    echo: Complex64,
    sites: usize,
    t: f64,
    noise: &NoiseModel,
    rng: &mut R,
) -> (f64, Option<f64>, Vec<ShotCount>) {
    let mut counts = Vec::new();
    let amp_shots = noise.shots.map(|n| shots_per_theta(n, 2));
    let (r, raw) = amplitude_with_shots(echo, sites, t, amp_shots, noise, rng);
    if let Some((hits, shots)) = raw {
        counts.push(ShotCount { j: sites, theta: None, t, hits, shots });
    }
    let envelope = noise.envelope(sites, t);
    let g = echo * envelope;
    let theta_shots = noise.shots.map(|n| shots_per_theta(n, 8));
    let mut probabilities = [0.0; 4];
    for (p, theta) in probabilities.iter_mut().zip(THETAS) {
        let exact = interference_probability(Complex64::new(1.0, 0.0), g, theta);
        let (estimate, raw) = measure_probability(exact, sites, theta_shots, noise, rng);
        if let Some((hits, shots)) = raw {
            counts.push(ShotCount { j: sites, theta: Some(theta), t, hits, shots });
        }
        *p = estimate;
    }
    if noise.dephasing_rescale {
        for p in probabilities.iter_mut() {
            let cross = 4.0 * *p - 1.0 - envelope * envelope * r * r;
            *p = (1.0 + r * r + cross / envelope) / 4.0;
        }
    }
    let phase = phase_from_ramsey(1.0, r, &probabilities);
    (r, phase, counts)
}

/// Independent generator for stream `index` of a master seed.
pub fn stream_rng(master: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index);
    rng
}

/// Total shots of a sampling run, N_MC (t_max/Δt) 2 L N_s for the
/// sequential protocol and N_MC (t_max/Δt) N_s for GHZ.
pub fn shot_budget(kind: ProtocolKind, n_mc: usize, grid: &TimeGrid, sites: usize, shots: u64) -> u128 {
    let base = n_mc as u128 * grid.n_steps as u128 * shots as u128;
    match kind {
        ProtocolKind::Sequential => base * 2 * sites as u128,
        ProtocolKind::Ghz => base,
    }
}

/// A measured echo series with its raw data.
#[derive(Debug, Clone)]
pub struct NoisyEcho {
    pub series: EchoSeries,
    pub counts: Vec<ShotCount>,
    pub shots_used: u64,
}

/// Exact echoes of every left prefix of a model, the inputs of the
/// simulated measurement.
#[derive(Debug)]
pub struct RamseySimulator {
    model: Arc<IsingModel>,
    /// Engine for the j-site prefix at index j - 1.
    prefixes: Vec<EchoEngine>,
}

impl RamseySimulator {
    pub fn new(model: Arc<IsingModel>) -> Result<Self> {
        let sites = model.sites();
        let mut prefixes = Vec::with_capacity(sites);
        for j in 1..sites {
            let restricted = Arc::new(model.restricted(j));
            prefixes.push(EchoEngine::new(restricted, EchoMethod::auto(j))?);
        }
        prefixes.push(EchoEngine::new(model.clone(), EchoMethod::auto(sites))?);
        Ok(Self { model, prefixes })
    }

    /// Reuses `full` for the complete chain.
    pub fn with_full_engine(full: EchoEngine) -> Result<Self> {
        let model = full.model().clone();
        let sites = model.sites();
        let mut prefixes = Vec::with_capacity(sites);
        for j in 1..sites {
            let restricted = Arc::new(model.restricted(j));
            prefixes.push(EchoEngine::new(restricted, EchoMethod::auto(j))?);
        }
        prefixes.push(full);
        Ok(Self { model, prefixes })
    }

    pub fn model(&self) -> &Arc<IsingModel> {
        &self.model
    }

    pub fn full_engine(&self) -> &EchoEngine {
        self.prefixes.last().unwrap()
    }

    /// Exact G_{ψ_j}(t_k), indexed [k][j] with j = 0..=L.
    pub fn prefix_echoes(&self, psi: &SpinConfiguration, grid: &TimeGrid) -> Result<Vec<Vec<Complex64>>> {
        let mut table = vec![vec![Complex64::new(1.0, 0.0); psi.len() + 1]; grid.len()];
        for (j, engine) in self.prefixes.iter().enumerate() {
            let prefix = psi.prefix(j + 1).unwrap();
            let series = engine.loschmidt_series(&prefix, grid)?;
            for (row, g) in table.iter_mut().zip(series.values) {
                row[j + 1] = g;
            }
        }
        Ok(table)
    }

    /// Simulates the measurement of G_ψ on every grid point. t = 0 is 1
    /// without measurement; time points without contrast are set to zero
    /// and listed in `series.flagged`. Each time point draws from its own
    /// stream of a master seed taken from `rng`.
    pub fn noisy_loschmidt_series<R: Rng + ?Sized>(
        &self,
        psi: &SpinConfiguration,
        grid: &TimeGrid,
        noise: &NoiseModel,
        kind: ProtocolKind,
        rng: &mut R,
    ) -> Result<NoisyEcho> {
        assert_eq!(psi.len(), self.model.sites());
        let master: u64 = rng.random();
        let sites = psi.len();
        let prefix_table = match kind {
            ProtocolKind::Sequential => self.prefix_echoes(psi, grid)?,
            ProtocolKind::Ghz => {
                let full = self.full_engine().loschmidt_series(psi, grid)?;
                full.values.into_iter().map(|g| vec![g]).collect()
            }
        };
        let mut values = vec![Complex64::new(1.0, 0.0)];
        let mut counts = Vec::new();
        let mut flagged = Vec::new();
        for (k, row) in prefix_table.iter().enumerate().skip(1) {
            let t = grid.time(k);
            let mut point_rng = stream_rng(master, k as u64);
            let (r, phase, point_counts) = match kind {
                ProtocolKind::Sequential => {
                    let (r, phase, record) = sequential_ramsey_phase(row, t, noise, &mut point_rng);
                    (r, phase, record.counts)
                }
                ProtocolKind::Ghz => ghz_ramsey_phase(row[0], sites, t, noise, &mut point_rng),
            };
            counts.extend(point_counts);
            match phase {
                Some(phi) => values.push(Complex64::from_polar(r, phi)),
                None => {
                    log::debug!("no Ramsey contrast for {psi} at t = {t}");
                    flagged.push(k);
                    values.push(Complex64::new(0.0, 0.0));
                }
            }
        }
        let shots_used = counts.iter().map(|c| c.shots).sum();
        let mut series = EchoSeries::new(*grid, values, self.model.diagonal_energy(psi));
        series.flagged = flagged;
        Ok(NoisyEcho {
            series,
            counts,
            shots_used,
        })
    }
}
