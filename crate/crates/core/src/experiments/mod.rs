//! Disorder ensembles and the observables measured on them. Every headline observable is
//! computed from the dense spectrum of `H`.

pub mod commands;
pub mod tables;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eigenflow::{completeness_from_reports, efp_all, pooled_eigenpairs, EfpConfig};
use crate::error::{invalid, Error, Result};
use crate::influence::{run_trial, StrictConfig, TrialParts};
use crate::lattice::{trial_seed, Geometry, Hamiltonian};
use crate::multiscale::{decompose, Schedule, ScheduleKind, ScheduleParams};
use crate::schur::{dense_spectrum, eigenvalues, Spectrum};

/// `N(I_delta(E))`: eigenvalues of `H` in `[E - delta, E + delta]`.
pub fn dos_observable(h: &Hamiltonian, e: f64, delta: f64) -> usize {
    dos_count(&eigenvalues(h.matrix()), e, delta)
}

pub fn dos_count(spectrum: &[f64], e: f64, delta: f64) -> usize {
    spectrum.iter().filter(|&&l| (l - e).abs() <= delta).count()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlator {
    /// `sum_b |phi_b(x) phi_b(y)|`.
    pub value: f64,
    /// `value * gamma^(-|x - y| / 5)`, zero when `gamma = 0` and `x != y`.
    pub weighted: f64,
}

pub fn correlator_observable(h: &Hamiltonian, x: usize, y: usize) -> Result<Correlator> {
    if x >= h.len() || y >= h.len() {
        return invalid("site outside lattice");
    }
    let spectrum = dense_spectrum(h.matrix())?;
    Ok(correlator_from(&spectrum, h.gamma(), h.geometry().dist(x, y), x, y))
}

pub fn correlator_from(spectrum: &Spectrum, gamma: f64, dist: usize, x: usize, y: usize) -> Correlator {
    let v = &spectrum.vectors;
    let value: f64 = (0..v.ncols()).map(|b| (v[(x, b)] * v[(y, b)]).abs()).sum();
    Correlator { value, weighted: weight(value, gamma, dist) }
}

fn weight(value: f64, gamma: f64, dist: usize) -> f64 {
    if dist == 0 {
        value
    } else if gamma == 0.0 {
        0.0
    } else {
        value * gamma.powf(-(dist as f64) / 5.0)
    }
}

pub fn min_spacing_observable(h: &Hamiltonian) -> Result<f64> {
    if h.len() < 2 {
        return invalid("level spacing needs at least two sites");
    }
    Ok(min_spacing(&eigenvalues(h.matrix())))
}

/// Smallest gap between any two of the values.
pub fn min_spacing(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
    pub trials: usize,
}

impl Estimate {
    /// Sample mean and `s / sqrt(n)`; a single sample has zero error.
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len();
        if n == 0 {
            return Estimate { mean: f64::NAN, std_error: f64::NAN, trials: 0 };
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        let std_error = if n < 2 {
            0.0
        } else {
            let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        };
        Estimate { mean, std_error, trials: n }
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Observables {
    pub dos: bool,
    pub correlator: bool,
    pub spacing: bool,
    pub blocks: bool,
    pub strict: bool,
    /// Correlators from pooled EFP eigenpairs against the dense ones.
    pub cross_check: bool,
}

impl Default for Observables {
    fn default() -> Self {
        Observables { dos: true, correlator: true, spacing: true, blocks: false, strict: false, cross_check: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dim: usize,
    pub sides: Vec<usize>,
    pub n_levels: u32,
    pub gamma: f64,
    pub l0: u32,
    pub alpha: f64,
    pub schedule: ScheduleKind,
    /// Probe energies for the DOS and the block statistics.
    pub energies: Vec<f64>,
    pub deltas: Vec<f64>,
    pub spacing_deltas: Vec<f64>,
    /// Correlator bins `0..=max_distance`.
    pub max_distance: usize,
    /// Exceedance of `X(x, y) > 1` is counted over pairs at least this far apart.
    pub exceedance_from: usize,
    pub trials: usize,
    pub base_seed: u64,
    pub observables: Observables,
    /// Extra spacing ensembles, one per `N`, for the comparison table.
    pub compare_levels: Vec<u32>,
    pub focus_delta: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dim: 1,
            sides: vec![64],
            n_levels: 16,
            gamma: 0.01,
            l0: 1,
            alpha: 1.5,
            schedule: ScheduleKind::geometric_default(),
            energies: vec![0.5],
            deltas: vec![1e-3, 1e-2, 1e-1],
            spacing_deltas: vec![1e-8, 1e-6, 1e-4],
            max_distance: 12,
            exceedance_from: 8,
            trials: 100,
            base_seed: 0,
            observables: Observables::default(),
            compare_levels: vec![],
            focus_delta: 1e-6,
        }
    }
}

impl ExperimentConfig {
    pub fn geometry(&self) -> Result<Geometry> {
        Geometry::new(self.dim, &self.sides)
    }

    pub fn validate(&self) -> Result<Geometry> {
        let g = self.geometry()?;
        if self.trials < 1 {
            return Err(Error::InvalidExperiment("trial count must be at least 1".into()));
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::InvalidExperiment("gamma must be non-negative".into()));
        }
        let diam = g.diam() as f64;
        let check = |deltas: &[f64], lo: f64, what: &str| -> Result<()> {
            for &d in deltas {
                if !(d >= lo && d <= 1.0) {
                    return Err(Error::InvalidExperiment(format!("{what} delta {d:e} outside [{lo:e}, 1]")));
                }
            }
            Ok(())
        };
        if self.observables.dos {
            check(&self.deltas, self.gamma.powf(diam / 2.0), "DOS")?;
        }
        if self.observables.spacing {
            check(&self.spacing_deltas, self.gamma.powf(diam), "spacing")?;
        }
        if (self.observables.strict || self.observables.cross_check) && self.dim != 1 {
            return Err(Error::InvalidExperiment("strict and cross-check observables run on chains only".into()));
        }
        if self.observables.spacing && g.len() < 2 {
            return Err(Error::InvalidExperiment("level spacing needs at least two sites".into()));
        }
        Ok(g)
    }

    fn schedule_for(&self, h: &Hamiltonian) -> Result<Schedule> {
        let mut params = ScheduleParams::for_hamiltonian(h, self.l0, self.schedule);
        params.alpha = self.alpha;
        Schedule::new(params)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DosRow {
    pub energy: f64,
    pub delta: f64,
    pub count: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelatorRow {
    pub distance: usize,
    /// Mean over all pairs at this distance, per trial.
    pub mean: Estimate,
    /// Median over trials of the pair centred on the first axis.
    pub central_median: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelatorReport {
    pub rows: Vec<CorrelatorRow>,
    pub exceedance_from: usize,
    pub exceedance_pairs: usize,
    pub exceedances: usize,
    pub exceedance_rate: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpacingRow {
    pub delta: f64,
    /// `P(min spacing < delta)`.
    pub probability: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpacingReport {
    pub rows: Vec<SpacingRow>,
    pub min_spacing: Estimate,
    /// Per-trial minimum spacing in trial order.
    pub samples: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleStats {
    pub scale: usize,
    /// `P(x in R^(k))` averaged over sites.
    pub resonant_fraction: Estimate,
    pub block_sizes: BTreeMap<usize, usize>,
    pub block_diameters: BTreeMap<usize, usize>,
    /// Mean `n^` over blocks tested against the next energy.
    pub mean_n_hat: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockReport {
    pub energy: f64,
    pub scales: Vec<ScaleStats>,
    pub non_increasing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrictRates {
    pub valid: usize,
    pub kernel_pairs: usize,
    pub kernel_violations: usize,
    pub lipschitz_samples: usize,
    pub lipschitz_violations: usize,
    pub truncation_ok: usize,
    pub bound_ok: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossCheck {
    pub matched_fraction: f64,
    pub max_residual: f64,
    /// Largest `|C_efp(x, y) - C(x, y)|` over pairs within `max_distance`.
    pub max_discrepancy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossCheckReport {
    pub matched_fraction: Estimate,
    pub max_discrepancy: Estimate,
    pub worst_discrepancy: f64,
    pub worst_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub index: u64,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleReport {
    pub config: ExperimentConfig,
    pub trials: usize,
    pub completed: usize,
    pub failures: Vec<TrialFailure>,
    pub dos: Option<Vec<DosRow>>,
    /// Mean DOS count is non-decreasing in delta at every energy.
    pub dos_monotone: Option<bool>,
    pub correlator: Option<CorrelatorReport>,
    pub spacing: Option<SpacingReport>,
    pub blocks: Option<Vec<BlockReport>>,
    pub strict: Option<StrictRates>,
    pub cross_check: Option<CrossCheckReport>,
}

#[derive(Debug, Clone, Default)]
struct TrialSample {
    dos: Vec<usize>,
    corr_mean: Vec<Option<f64>>,
    corr_central: Vec<Option<f64>>,
    exceed: (usize, usize),
    min_spacing: f64,
    /// Per energy: per scale `(resonant fraction, [(size, diameter, n_hat)])`.
    blocks: Vec<Vec<(f64, Vec<(usize, usize, Option<usize>)>)>>,
    strict: Option<StrictRates>,
    cross: Option<CrossCheck>,
}

/// Pair `(x, x + r e_0)` centred in the lattice.
fn central_pair(g: &Geometry, r: usize) -> Option<(usize, usize)> {
    let sides = g.sides();
    if r + 1 > sides[0] {
        return None;
    }
    let mut c: Vec<usize> = sides.iter().map(|s| s / 2).collect();
    c[0] = (sides[0] - 1 - r) / 2;
    let x = g.index(&c)?;
    c[0] += r;
    Some((x, g.index(&c)?))
}

fn sample_trial(cfg: &ExperimentConfig, g: &Geometry, seed: u64, index: u64) -> Result<TrialSample> {
    let h = Hamiltonian::sample(g.clone(), cfg.n_levels, cfg.gamma, seed)?;
    let obs = cfg.observables;
    let mut out = TrialSample::default();
    let need_vectors = obs.correlator || obs.cross_check;
    let spectrum = if need_vectors { Some(dense_spectrum(h.matrix())?) } else { None };
    let values = match &spectrum {
        Some(s) => s.values.clone(),
        None => eigenvalues(h.matrix()),
    };
    if obs.dos {
        for &e in &cfg.energies {
            for &d in &cfg.deltas {
                out.dos.push(dos_count(&values, e, d));
            }
        }
    }
    if obs.spacing {
        out.min_spacing = min_spacing(&values);
    }
    if obs.correlator {
        let s = spectrum.as_ref().expect("vectors");
        let n = h.len();
        let mut sums = vec![(0.0, 0usize); cfg.max_distance + 1];
        for x in 0..n {
            for y in x..n {
                let r = g.dist(x, y);
                if r > cfg.max_distance && r < cfg.exceedance_from {
                    continue;
                }
                let c = correlator_from(s, cfg.gamma, r, x, y);
                if r <= cfg.max_distance {
                    sums[r].0 += c.value;
                    sums[r].1 += 1;
                }
                if r >= cfg.exceedance_from {
                    out.exceed.1 += 1;
                    if c.weighted > 1.0 {
                        out.exceed.0 += 1;
                    }
                }
            }
        }
        out.corr_mean = sums.iter().map(|&(s, n)| (n > 0).then(|| s / n as f64)).collect();
        out.corr_central = (0..=cfg.max_distance)
            .map(|r| central_pair(g, r).map(|(x, y)| correlator_from(s, cfg.gamma, r, x, y).value))
            .collect();
    }
    if obs.blocks || obs.cross_check {
        let schedule = cfg.schedule_for(&h)?;
        if obs.blocks {
            for &e in &cfg.energies {
                let cascade = decompose(&h, &schedule, e, None)?;
                let per_scale = (1..=schedule.k_bar)
                    .map(|k| match cascade.levels().get(k - 1) {
                        Some(level) => (
                            level.resonant.len() as f64 / h.len() as f64,
                            level.blocks.iter().map(|b| (b.sites.len(), b.diameter, b.n_hat)).collect(),
                        ),
                        None => (0.0, vec![]),
                    })
                    .collect();
                out.blocks.push(per_scale);
            }
        }
        if obs.cross_check {
            let reports = efp_all(&h, &schedule, &EfpConfig::default())?;
            let completeness = completeness_from_reports(&h, &schedule, &reports);
            let pairs: Vec<_> = reports.iter().flat_map(|r| &r.pairs).collect();
            let pooled = pooled_eigenpairs(&h, &pairs, completeness.tolerance);
            let s = spectrum.as_ref().expect("vectors");
            let n = h.len();
            let mut worst = 0.0f64;
            for x in 0..n {
                for y in x..n {
                    let r = g.dist(x, y);
                    if r > cfg.max_distance {
                        continue;
                    }
                    let efp: f64 = pooled.iter().map(|(_, v)| (v[x] * v[y]).abs()).sum();
                    worst = worst.max((efp - correlator_from(s, cfg.gamma, r, x, y).value).abs());
                }
            }
            out.cross = Some(CrossCheck {
                matched_fraction: completeness.matched_fraction,
                max_residual: completeness.max_residual,
                max_discrepancy: worst,
            });
        }
    }
    if obs.strict {
        let strict = StrictConfig { sites: g.len(), n_levels: cfg.n_levels, gamma: cfg.gamma, l0: cfg.l0, kind: cfg.schedule };
        let report =
            run_trial(&strict, &strict.schedule()?, cfg.base_seed, index, TrialParts { diagnostics: true, decomposition: false, sweep: false })?;
        out.strict = Some(match report.diagnostics {
            Some(d) => StrictRates {
                valid: 1,
                kernel_pairs: d.kernel_decay.0,
                kernel_violations: d.kernel_decay.1,
                lipschitz_samples: d.lipschitz.0,
                lipschitz_violations: d.lipschitz.1,
                truncation_ok: d.truncation_ok as usize,
                bound_ok: d.bound_ok as usize,
            },
            None => StrictRates {
                valid: 0,
                kernel_pairs: 0,
                kernel_violations: 0,
                lipschitz_samples: 0,
                lipschitz_violations: 0,
                truncation_ok: 0,
                bound_ok: 0,
            },
        });
    }
    Ok(out)
}

/// Trial `i` uses the seed `trial_seed(base_seed, i)`. Trials run in parallel and are
/// folded in index order.
pub fn run_ensemble(config: &ExperimentConfig) -> Result<EnsembleReport> {
    let g = config.validate()?;
    let results: Vec<(u64, u64, Result<TrialSample>)> = (0..config.trials as u64)
        .into_par_iter()
        .map(|i| {
            let seed = trial_seed(config.base_seed, i);
            (i, seed, sample_trial(config, &g, seed, i))
        })
        .collect();
    let mut failures = vec![];
    let mut samples = vec![];
    for (index, seed, r) in results {
        match r {
            Ok(s) => samples.push(s),
            Err(e) => failures.push(TrialFailure { index, seed, error: e.to_string() }),
        }
    }
    let obs = config.observables;
    let mut report = EnsembleReport {
        config: config.clone(),
        trials: config.trials,
        completed: samples.len(),
        failures,
        dos: None,
        dos_monotone: None,
        correlator: None,
        spacing: None,
        blocks: None,
        strict: None,
        cross_check: None,
    };
    if obs.dos {
        let mut rows = vec![];
        let nd = config.deltas.len();
        for (ie, &energy) in config.energies.iter().enumerate() {
            for (id, &delta) in config.deltas.iter().enumerate() {
                let xs: Vec<f64> = samples.iter().map(|s| s.dos[ie * nd + id] as f64).collect();
                rows.push(DosRow { energy, delta, count: Estimate::from_samples(&xs) });
            }
        }
        report.dos_monotone = Some(dos_monotone(&rows));
        report.dos = Some(rows);
    }
    if obs.correlator {
        let rows = (0..=config.max_distance)
            .filter_map(|r| {
                let means: Vec<f64> = samples.iter().filter_map(|s| s.corr_mean[r]).collect();
                if means.is_empty() {
                    return None;
                }
                let central: Vec<f64> = samples.iter().filter_map(|s| s.corr_central[r]).collect();
                Some(CorrelatorRow { distance: r, mean: Estimate::from_samples(&means), central_median: median(&central) })
            })
            .collect();
        let rates: Vec<f64> =
            samples.iter().filter(|s| s.exceed.1 > 0).map(|s| s.exceed.0 as f64 / s.exceed.1 as f64).collect();
        report.correlator = Some(CorrelatorReport {
            rows,
            exceedance_from: config.exceedance_from,
            exceedance_pairs: samples.iter().map(|s| s.exceed.1).sum(),
            exceedances: samples.iter().map(|s| s.exceed.0).sum(),
            exceedance_rate: Estimate::from_samples(&rates),
        });
    }
    if obs.spacing {
        let spacings: Vec<f64> = samples.iter().map(|s| s.min_spacing).collect();
        let rows = config
            .spacing_deltas
            .iter()
            .map(|&delta| {
                let hits: Vec<f64> = spacings.iter().map(|&m| f64::from(u8::from(m < delta))).collect();
                SpacingRow { delta, probability: Estimate::from_samples(&hits) }
            })
            .collect();
        report.spacing = Some(SpacingReport { rows, min_spacing: Estimate::from_samples(&spacings), samples: spacings });
    }
    if obs.blocks {
        report.blocks = Some(
            config
                .energies
                .iter()
                .enumerate()
                .map(|(ie, &energy)| block_report(energy, samples.iter().map(|s| &s.blocks[ie])))
                .collect(),
        );
    }
    if obs.strict {
        let mut total = StrictRates {
            valid: 0,
            kernel_pairs: 0,
            kernel_violations: 0,
            lipschitz_samples: 0,
            lipschitz_violations: 0,
            truncation_ok: 0,
            bound_ok: 0,
        };
        for s in samples.iter().filter_map(|s| s.strict.as_ref()) {
            total.valid += s.valid;
            total.kernel_pairs += s.kernel_pairs;
            total.kernel_violations += s.kernel_violations;
            total.lipschitz_samples += s.lipschitz_samples;
            total.lipschitz_violations += s.lipschitz_violations;
            total.truncation_ok += s.truncation_ok;
            total.bound_ok += s.bound_ok;
        }
        report.strict = Some(total);
    }
    if obs.cross_check {
        let cross: Vec<&CrossCheck> = samples.iter().filter_map(|s| s.cross.as_ref()).collect();
        let fractions: Vec<f64> = cross.iter().map(|c| c.matched_fraction).collect();
        let discrepancies: Vec<f64> = cross.iter().map(|c| c.max_discrepancy).collect();
        report.cross_check = Some(CrossCheckReport {
            matched_fraction: Estimate::from_samples(&fractions),
            max_discrepancy: Estimate::from_samples(&discrepancies),
            worst_discrepancy: discrepancies.iter().copied().fold(0.0, f64::max),
            worst_residual: cross.iter().map(|c| c.max_residual).fold(0.0, f64::max),
        });
    }
    Ok(report)
}

fn dos_monotone(rows: &[DosRow]) -> bool {
    let mut by_energy: BTreeMap<u64, Vec<&DosRow>> = BTreeMap::new();
    for r in rows {
        by_energy.entry(r.energy.to_bits()).or_default().push(r);
    }
    by_energy.values_mut().all(|rs| {
        rs.sort_by(|a, b| a.delta.total_cmp(&b.delta));
        rs.windows(2).all(|w| w[0].count.mean <= w[1].count.mean)
    })
}

fn block_report<'a>(
    energy: f64,
    trials: impl Iterator<Item = &'a Vec<(f64, Vec<(usize, usize, Option<usize>)>)>>,
) -> BlockReport {
    let trials: Vec<_> = trials.collect();
    let n_scales = trials.first().map_or(0, |t| t.len());
    let scales: Vec<ScaleStats> = (0..n_scales)
        .map(|k| {
            let fractions: Vec<f64> = trials.iter().map(|t| t[k].0).collect();
            let mut block_sizes = BTreeMap::new();
            let mut block_diameters = BTreeMap::new();
            let mut n_hats = vec![];
            for t in &trials {
                for &(size, diam, n_hat) in &t[k].1 {
                    *block_sizes.entry(size).or_insert(0) += 1;
                    *block_diameters.entry(diam).or_insert(0) += 1;
                    n_hats.extend(n_hat.map(|n| n as f64));
                }
            }
            ScaleStats {
                scale: k + 1,
                resonant_fraction: Estimate::from_samples(&fractions),
                block_sizes,
                block_diameters,
                mean_n_hat: (!n_hats.is_empty()).then(|| n_hats.iter().sum::<f64>() / n_hats.len() as f64),
            }
        })
        .collect();
    let non_increasing = scales.windows(2).all(|w| w[1].resonant_fraction.mean <= w[0].resonant_fraction.mean);
    BlockReport { energy, scales, non_increasing }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpacingVsNRow {
    pub n_levels: u32,
    pub report: SpacingReport,
    /// `P(min spacing < delta)` non-decreasing in delta.
    pub monotone_in_delta: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpacingTable {
    pub rows: Vec<SpacingVsNRow>,
    pub failures: usize,
    /// Probabilities at `spacing_deltas[focus]` strictly decrease with `N`; absent for one row.
    pub decreasing_in_n: Option<bool>,
    pub focus_delta: f64,
}

/// One spacing ensemble per `N` with otherwise identical settings.
pub fn spacing_vs_n(config: &ExperimentConfig, levels: &[u32], focus_delta: f64) -> Result<SpacingTable> {
    if levels.is_empty() {
        return invalid("need at least one N");
    }
    let mut cfg = config.clone();
    cfg.observables = Observables { dos: false, correlator: false, spacing: true, blocks: false, strict: false, cross_check: false };
    if !cfg.spacing_deltas.iter().any(|&d| d == focus_delta) {
        cfg.spacing_deltas.push(focus_delta);
        cfg.spacing_deltas.sort_by(f64::total_cmp);
    }
    let mut sorted = levels.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut rows = vec![];
    let mut failures = 0;
    for n in sorted {
        cfg.n_levels = n;
        let r = run_ensemble(&cfg)?;
        failures += r.failures.len();
        let report = r.spacing.expect("spacing requested");
        let monotone_in_delta = report.rows.windows(2).all(|w| w[0].probability.mean <= w[1].probability.mean);
        rows.push(SpacingVsNRow { n_levels: n, report, monotone_in_delta });
    }
    let at_focus = |row: &SpacingVsNRow| {
        row.report.rows.iter().find(|r| r.delta == focus_delta).expect("focus delta").probability.mean
    };
    let decreasing_in_n = (rows.len() > 1).then(|| rows.windows(2).all(|w| at_focus(&w[1]) < at_focus(&w[0])));
    Ok(SpacingTable { rows, failures, decreasing_in_n, focus_delta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Disorder;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn chain(levels: Vec<u32>, n_levels: u32, gamma: f64) -> Hamiltonian {
        Hamiltonian::new(Geometry::chain(levels.len()).unwrap(), Disorder::from_levels(n_levels, levels).unwrap(), gamma)
            .unwrap()
    }

    fn small_config() -> ExperimentConfig {
        ExperimentConfig {
            sides: vec![16],
            n_levels: 8,
            gamma: 0.02,
            trials: 6,
            base_seed: 5,
            max_distance: 6,
            exceedance_from: 4,
            deltas: vec![0.01, 0.05, 0.2],
            energies: vec![0.33, 0.75],
            observables: Observables { blocks: true, ..Observables::default() },
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn dos_examples() {
        let h = Hamiltonian::sample(Geometry::chain(32).unwrap(), 16, 0.05, 3).unwrap();
        let range = h.spectral_bound() * 2.0 + 1.0;
        assert_eq!(dos_observable(&h, 0.5, range), 32);
        let direct = eigenvalues(h.matrix()).iter().filter(|&&l| l >= 0.49 && l <= 0.51).count();
        assert_eq!(dos_observable(&h, 0.5, 0.01), direct);
        let h0 = chain(vec![0, 1, 2, 3], 4, 0.0);
        assert_eq!(dos_observable(&h0, 0.5, 0.1), 0);
    }

    #[test]
    fn correlator_examples() {
        let h = Hamiltonian::sample(Geometry::chain(12).unwrap(), 8, 0.1, 9).unwrap();
        for x in [0, 5, 11] {
            assert_abs_diff_eq!(correlator_observable(&h, x, x).unwrap().value, 1.0, epsilon = 1e-12);
        }
        let h0 = chain(vec![0, 3, 1, 2], 4, 0.0);
        let c = correlator_observable(&h0, 0, 2).unwrap();
        assert_eq!((c.value, c.weighted), (0.0, 0.0));
        assert!(correlator_observable(&h0, 0, 9).is_err());
    }

    #[test]
    fn correlator_weighting() {
        assert_abs_diff_eq!(weight(1e-4, 0.01, 10), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(weight(0.3, 0.01, 0), 0.3);
    }

    #[test]
    fn spacing_examples() {
        assert_abs_diff_eq!(min_spacing(&[0.1, 0.2, 0.35]), 0.1, epsilon = 1e-15);
        assert_eq!(min_spacing(&[0.4, 0.1, 0.4]), 0.0);
        let h = chain(vec![0, 1, 0, 1], 2, 0.0);
        assert_eq!(min_spacing_observable(&h).unwrap(), 0.0);
        assert!(min_spacing_observable(&chain(vec![0], 2, 0.0)).is_err());
    }

    #[test]
    fn estimates() {
        let e = Estimate::from_samples(&[2.0]);
        assert_eq!((e.mean, e.std_error, e.trials), (2.0, 0.0, 1));
        let e = Estimate::from_samples(&[1.0, 2.0, 3.0, 4.0]);
        assert_abs_diff_eq!(e.mean, 2.5);
        assert_abs_diff_eq!(e.std_error, (5.0f64 / 12.0).sqrt() / 1.0, epsilon = 1e-12);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn single_trial_matches_observables() {
        let cfg = ExperimentConfig { trials: 1, ..small_config() };
        let r = run_ensemble(&cfg).unwrap();
        let h = Hamiltonian::sample(Geometry::chain(16).unwrap(), 8, 0.02, trial_seed(5, 0)).unwrap();
        let dos = r.dos.unwrap();
        assert_eq!(dos[1].count.mean, dos_observable(&h, 0.3, 0.05) as f64);
        assert_eq!(dos[1].count.std_error, 0.0);
        assert_eq!(r.spacing.unwrap().min_spacing.mean, min_spacing_observable(&h).unwrap());
        let corr = r.correlator.unwrap();
        let (x, y) = central_pair(h.geometry(), 3).unwrap();
        assert_eq!((x, y), (6, 9));
        assert_abs_diff_eq!(corr.rows[3].central_median, correlator_observable(&h, x, y).unwrap().value, epsilon = 1e-15);
    }

    #[test]
    fn ensemble_is_deterministic_and_monotone() {
        let cfg = small_config();
        let a = serde_json::to_string(&run_ensemble(&cfg).unwrap()).unwrap();
        let b = serde_json::to_string(&run_ensemble(&cfg).unwrap()).unwrap();
        assert_eq!(a, b);
        let r = run_ensemble(&cfg).unwrap();
        assert_eq!(r.dos_monotone, Some(true));
        assert!(r.failures.is_empty());
        for b in r.blocks.unwrap() {
            assert!(b.non_increasing);
            assert!(b.scales[0].resonant_fraction.mean > 0.0);
        }
        let other = ExperimentConfig { base_seed: 6, ..small_config() };
        assert_ne!(a, serde_json::to_string(&run_ensemble(&other).unwrap()).unwrap());
    }

    #[test]
    fn config_validation() {
        let bad = ExperimentConfig { trials: 0, ..small_config() };
        assert!(bad.validate().is_err());
        let bad = ExperimentConfig { deltas: vec![2.0], ..small_config() };
        assert!(bad.validate().is_err());
        // gamma^(diam / 2) = 0.02^7.5 ~ 1.9e-13
        let bad = ExperimentConfig { deltas: vec![1e-14], ..small_config() };
        assert!(bad.validate().is_err());
        let ok = ExperimentConfig { deltas: vec![1e-12], ..small_config() };
        assert!(ok.validate().is_ok());
    }

    #[test]
    fn spacing_table_rows() {
        let cfg = ExperimentConfig { sides: vec![8], gamma: 1e-3, trials: 20, ..ExperimentConfig::default() };
        let t = spacing_vs_n(&cfg, &[4], 1e-6).unwrap();
        assert_eq!(t.rows.len(), 1);
        assert_eq!(t.decreasing_in_n, None);
        let sat = ExperimentConfig { spacing_deltas: vec![1.0], ..cfg.clone() };
        let t = spacing_vs_n(&sat, &[2, 64], 1.0).unwrap();
        assert!(t.rows.iter().all(|r| r.report.rows[0].probability.mean == 1.0));
        assert!(t.rows.iter().all(|r| r.monotone_in_delta));
    }

    #[test]
    fn cross_check_agrees_at_small_gamma() {
        let cfg = ExperimentConfig {
            sides: vec![16],
            n_levels: 8,
            gamma: 1e-3,
            trials: 2,
            base_seed: 1,
            observables: Observables { cross_check: true, ..Observables::default() },
            ..ExperimentConfig::default()
        };
        let r = run_ensemble(&cfg).unwrap();
        let c = r.cross_check.unwrap();
        assert_eq!(c.matched_fraction.mean, 1.0);
        assert!(c.worst_discrepancy < 1e-6, "{}", c.worst_discrepancy);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn dos_partition_is_additive(seed in any::<u64>(), n_levels in 2u32..12, gamma in 0.0f64..0.1, cuts in 2usize..9) {
            let h = Hamiltonian::sample(Geometry::chain(10).unwrap(), n_levels, gamma, seed).unwrap();
            let spec = eigenvalues(h.matrix());
            let top = 1.0 + 4.0 * gamma;
            let edges: Vec<f64> = (0..=cuts).map(|i| top * i as f64 / cuts as f64).collect();
            let total: usize = edges
                .windows(2)
                .enumerate()
                .map(|(i, w)| spec.iter().filter(|&&l| l >= w[0] && (l < w[1] || (i + 1 == cuts && l <= w[1]))).count())
                .sum();
            prop_assert_eq!(total, 10);
        }

        #[test]
        fn correlator_symmetric_and_complete(seed in any::<u64>(), gamma in 0.0f64..0.3, x in 0usize..9) {
            let h = Hamiltonian::sample(Geometry::chain(9).unwrap(), 5, gamma, seed).unwrap();
            let s = dense_spectrum(h.matrix()).unwrap();
            let mut row = 0.0;
            for y in 0..9 {
                let a = correlator_from(&s, gamma, h.geometry().dist(x, y), x, y).value;
                let b = correlator_from(&s, gamma, h.geometry().dist(x, y), y, x).value;
                prop_assert!((a - b).abs() < 1e-15);
                row += a;
            }
            prop_assert!(row >= 1.0 - 1e-12);
        }

        #[test]
        fn dos_monotone_in_delta(seed in any::<u64>(), e in 0.0f64..1.0, d1 in 0.0f64..0.5, d2 in 0.0f64..0.5) {
            let h = Hamiltonian::sample(Geometry::chain(8).unwrap(), 6, 0.05, seed).unwrap();
            let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
            prop_assert!(dos_observable(&h, e, lo) <= dos_observable(&h, e, hi));
        }
    }
}
