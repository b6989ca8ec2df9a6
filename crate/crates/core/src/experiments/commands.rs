//! One entry point per CLI subcommand. Each produces a JSON report and a set of CSV
//! tables, deterministic in its spec.

use serde::{Deserialize, Serialize};

use super::tables;
use super::{run_ensemble, spacing_vs_n, EnsembleReport, ExperimentConfig, SpacingTable};
use crate::eigenflow::{completeness_from_reports, efp_run, CompletenessReport, EfpConfig, EfpReport, DEFAULT_FAN_OUT};
use crate::error::{invalid, Error, Result};
use crate::influence::{run_corpus, Corpus, StrictConfig, TrialParts};
use crate::lattice::{Geometry, Hamiltonian, HamiltonianRecord};
use crate::multiscale::{decompose, CascadeDump, Schedule, ScheduleKind, ScheduleParams};
use crate::schur::eigenvalues;
use crate::verify::{run_suite, SuiteReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Command {
    Sample(SampleSpec),
    Decompose(DecomposeSpec),
    Efp(EfpSpec),
    Sweep(SweepSpec),
    Stats(ExperimentConfig),
    Verify(VerifySpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleSpec {
    pub dim: usize,
    pub sides: Vec<usize>,
    pub n_levels: u32,
    pub gamma: f64,
    pub seed: u64,
}

impl Default for SampleSpec {
    fn default() -> Self {
        SampleSpec { dim: 1, sides: vec![64], n_levels: 16, gamma: 0.02, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecomposeSpec {
    pub dim: usize,
    pub sides: Vec<usize>,
    pub n_levels: u32,
    pub gamma: f64,
    pub seed: u64,
    pub l0: u32,
    pub alpha: f64,
    pub schedule: ScheduleKind,
    /// Fixed energy; defaults to `v_x + 2 d gamma` at `site`.
    pub energy: Option<f64>,
    /// Defaults to the central site.
    pub site: Option<usize>,
    pub max_scale: Option<usize>,
}

impl Default for DecomposeSpec {
    fn default() -> Self {
        DecomposeSpec {
            dim: 1,
            sides: vec![64],
            n_levels: 16,
            gamma: 0.02,
            seed: 0,
            l0: 1,
            alpha: 1.5,
            schedule: ScheduleKind::geometric_default(),
            energy: None,
            site: None,
            max_scale: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EfpSpec {
    pub dim: usize,
    pub sides: Vec<usize>,
    pub n_levels: u32,
    pub gamma: f64,
    pub seed: u64,
    pub l0: u32,
    pub alpha: f64,
    pub schedule: ScheduleKind,
    pub sites: Vec<usize>,
    pub all_sites: bool,
    pub fan_out_cap: usize,
    pub max_scale: Option<usize>,
    /// Keep eigenvectors in the JSON report.
    pub vectors: bool,
}

impl Default for EfpSpec {
    fn default() -> Self {
        EfpSpec {
            dim: 1,
            sides: vec![64],
            n_levels: 16,
            gamma: 0.02,
            seed: 0,
            l0: 1,
            alpha: 1.5,
            schedule: ScheduleKind::geometric_default(),
            sites: vec![],
            all_sites: false,
            fan_out_cap: DEFAULT_FAN_OUT,
            max_scale: None,
            vectors: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub sites: usize,
    pub n_levels: u32,
    pub gamma: f64,
    pub l0: u32,
    pub schedule: ScheduleKind,
    /// Valid trials wanted.
    pub trials: usize,
    pub max_attempts: usize,
    pub seed: u64,
    pub diagnostics: bool,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            sites: 64,
            n_levels: 64,
            gamma: 1e-3,
            l0: 1,
            schedule: ScheduleKind::Standard,
            trials: 500,
            max_attempts: 5000,
            seed: 0,
            diagnostics: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySpec {
    pub filter: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Output {
    pub json: String,
    /// `(file stem, CSV text)`.
    pub tables: Vec<(String, String)>,
    /// False only when a verify run has a failing gated check.
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleReport {
    pub hamiltonian: HamiltonianRecord,
    pub spectral_bound: f64,
    pub spectrum: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecomposeReport {
    pub spec: DecomposeSpec,
    pub site: Option<usize>,
    pub energy: f64,
    pub cascade: CascadeDump,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfpCommandReport {
    pub spec: EfpSpec,
    pub schedule: Schedule,
    pub reports: Vec<EfpReport>,
    /// Present when every site was a start site.
    pub completeness: Option<CompletenessReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub ensemble: EnsembleReport,
    pub spacing_vs_n: Option<SpacingTable>,
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn model(dim: usize, sides: &[usize], n_levels: u32, gamma: f64, seed: u64) -> Result<Hamiltonian> {
    Hamiltonian::sample(Geometry::new(dim, sides)?, n_levels, gamma, seed)
}

fn schedule(h: &Hamiltonian, l0: u32, alpha: f64, kind: ScheduleKind) -> Result<Schedule> {
    Schedule::new(ScheduleParams { alpha, ..ScheduleParams::for_hamiltonian(h, l0, kind) })
}

pub fn run_command(command: &Command) -> Result<Output> {
    match command {
        Command::Sample(s) => sample(s),
        Command::Decompose(s) => decompose_cmd(s),
        Command::Efp(s) => efp(s),
        Command::Sweep(s) => sweep(s),
        Command::Stats(c) => stats(c),
        Command::Verify(s) => verify(s),
    }
}

fn sample(spec: &SampleSpec) -> Result<Output> {
    let h = model(spec.dim, &spec.sides, spec.n_levels, spec.gamma, spec.seed)?;
    let report = SampleReport { hamiltonian: h.record(), spectral_bound: h.spectral_bound(), spectrum: eigenvalues(h.matrix()) };
    Ok(Output {
        json: to_json(&report)?,
        tables: vec![("sites".into(), tables::sites(&h)?), ("spectrum".into(), tables::spectrum(&report.spectrum)?)],
        success: true,
    })
}

fn decompose_cmd(spec: &DecomposeSpec) -> Result<Output> {
    let h = model(spec.dim, &spec.sides, spec.n_levels, spec.gamma, spec.seed)?;
    let s = schedule(&h, spec.l0, spec.alpha, spec.schedule)?;
    let (site, energy) = match (spec.energy, spec.site) {
        (Some(e), site) => (site, e),
        (None, site) => {
            let x = site.unwrap_or(h.len() / 2);
            if x >= h.len() {
                return invalid(format!("site {x} outside lattice"));
            }
            (Some(x), h.onsite(x))
        }
    };
    let cascade = decompose(&h, &s, energy, spec.max_scale)?;
    let report = DecomposeReport { spec: spec.clone(), site, energy, cascade: cascade.dump() };
    Ok(Output {
        json: to_json(&report)?,
        tables: vec![("blocks".into(), tables::blocks(&report.cascade)?)],
        success: true,
    })
}

fn efp(spec: &EfpSpec) -> Result<Output> {
    let h = model(spec.dim, &spec.sides, spec.n_levels, spec.gamma, spec.seed)?;
    let s = schedule(&h, spec.l0, spec.alpha, spec.schedule)?;
    let starts: Vec<usize> = if spec.all_sites { (0..h.len()).collect() } else { spec.sites.clone() };
    if starts.is_empty() {
        return invalid("give start sites or all_sites");
    }
    if let Some(&x) = starts.iter().find(|&&x| x >= h.len()) {
        return invalid(format!("start site {x} outside lattice"));
    }
    let config = EfpConfig { fan_out_cap: spec.fan_out_cap, max_scale: spec.max_scale };
    let reports: Vec<EfpReport> = {
        use rayon::prelude::*;
        starts.par_iter().map(|&x| efp_run(&h, &s, x, &config)).collect::<Result<_>>()?
    };
    let completeness = spec.all_sites.then(|| completeness_from_reports(&h, &s, &reports));
    let mut reports = reports;
    if !spec.vectors {
        for p in reports.iter_mut().flat_map(|r| r.pairs.iter_mut()) {
            p.eigenvector.clear();
        }
    }
    let report = EfpCommandReport { spec: spec.clone(), schedule: s, reports, completeness };
    Ok(Output {
        json: to_json(&report)?,
        tables: vec![
            ("eigenpairs".into(), tables::eigenpairs(&report.reports)?),
            ("dead_branches".into(), tables::dead_branches(&report.reports)?),
        ],
        success: true,
    })
}

fn sweep(spec: &SweepSpec) -> Result<Output> {
    if spec.trials < 1 {
        return invalid("trial count must be at least 1");
    }
    let config = StrictConfig { sites: spec.sites, n_levels: spec.n_levels, gamma: spec.gamma, l0: spec.l0, kind: spec.schedule };
    let parts = TrialParts { diagnostics: spec.diagnostics, decomposition: true, sweep: true };
    let corpus: Corpus = run_corpus(&config, spec.seed, spec.trials, spec.max_attempts, parts)?;
    Ok(Output { json: to_json(&corpus)?, tables: vec![("trials".into(), tables::sweep_trials(&corpus)?)], success: true })
}

fn stats(config: &ExperimentConfig) -> Result<Output> {
    let ensemble = run_ensemble(config)?;
    let spacing = if config.compare_levels.is_empty() {
        None
    } else {
        Some(spacing_vs_n(config, &config.compare_levels, config.focus_delta)?)
    };
    let report = StatsReport { ensemble, spacing_vs_n: spacing };
    Ok(Output { json: to_json(&report)?, tables: tables::stats(&report)?, success: true })
}

fn verify(spec: &VerifySpec) -> Result<Output> {
    suite_output(&run_suite(spec.filter.as_deref())?)
}

pub fn suite_output(suite: &SuiteReport) -> Result<Output> {
    Ok(Output { json: to_json(suite)?, tables: vec![("checks".into(), tables::checks(suite)?)], success: suite.passed })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_round_trips_with_tag() {
        let c = Command::Efp(EfpSpec { all_sites: true, ..EfpSpec::default() });
        let text = serde_json::to_string(&c).unwrap();
        assert!(text.contains("\"command\":\"efp\""));
        assert_eq!(serde_json::from_str::<Command>(&text).unwrap(), c);
        let partial: Command = serde_json::from_str(r#"{"command":"sample","seed":4}"#).unwrap();
        assert_eq!(partial, Command::Sample(SampleSpec { seed: 4, ..SampleSpec::default() }));
        assert!(serde_json::from_str::<Command>(r#"{"command":"sample","sead":4}"#).is_err());
    }

    #[test]
    fn sample_is_deterministic() {
        let c = Command::Sample(SampleSpec { sides: vec![8], seed: 3, ..SampleSpec::default() });
        let a = run_command(&c).unwrap();
        assert_eq!(a, run_command(&c).unwrap());
        let r: SampleReport = serde_json::from_str(&a.json).unwrap();
        assert_eq!(r.spectrum.len(), 8);
        assert!(a.tables[0].1.starts_with("site,coords,level,potential\n"));
    }

    #[test]
    fn efp_needs_start_sites() {
        assert!(run_command(&Command::Efp(EfpSpec::default())).is_err());
        let spec = EfpSpec { sides: vec![12], sites: vec![3], gamma: 0.01, ..EfpSpec::default() };
        let out = run_command(&Command::Efp(spec)).unwrap();
        let r: EfpCommandReport = serde_json::from_str(&out.json).unwrap();
        assert!(r.completeness.is_none());
        assert!(r.reports[0].pairs.iter().all(|p| p.eigenvector.is_empty()));
    }

    #[test]
    fn decompose_defaults_to_central_site() {
        let spec = DecomposeSpec { sides: vec![16], ..DecomposeSpec::default() };
        let out = run_command(&Command::Decompose(spec)).unwrap();
        let r: DecomposeReport = serde_json::from_str(&out.json).unwrap();
        assert_eq!(r.site, Some(8));
        assert!(r.cascade.levels[0].resonant.contains(&8));
    }
}
