//! Flat CSV tables, one per observable.

use serde::Serialize;

use super::commands::StatsReport;
use crate::eigenflow::EfpReport;
use crate::error::{Error, Result};
use crate::influence::Corpus;
use crate::lattice::Hamiltonian;
use crate::multiscale::CascadeDump;
use crate::verify::SuiteReport;

fn write<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Result<String> {
    let mut w = csv::Writer::from_writer(vec![]);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Io(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
}

/// Like `write`, but an empty table still gets its header line.
fn write_with_header<T: Serialize>(header: &[&str], rows: impl IntoIterator<Item = T>) -> Result<String> {
    let text = write(rows)?;
    Ok(if text.is_empty() { format!("{}\n", header.join(",")) } else { text })
}

fn join(values: &[usize]) -> String {
    values.iter().map(usize::to_string).collect::<Vec<_>>().join(";")
}

#[derive(Serialize)]
struct SiteRow {
    site: usize,
    coords: String,
    level: u32,
    potential: f64,
}

pub fn sites(h: &Hamiltonian) -> Result<String> {
    let g = h.geometry();
    let d = h.disorder();
    write((0..h.len()).map(|s| SiteRow { site: s, coords: join(&g.coords(s)), level: d.levels[s], potential: d.value(s) }))
}

#[derive(Serialize)]
struct SpectrumRow {
    index: usize,
    eigenvalue: f64,
}

pub fn spectrum(values: &[f64]) -> Result<String> {
    write(values.iter().enumerate().map(|(index, &eigenvalue)| SpectrumRow { index, eigenvalue }))
}

#[derive(Serialize)]
struct BlockRow {
    scale: usize,
    block: usize,
    sites: String,
    diameter: usize,
    isolated: bool,
    collar_size: usize,
    collar_diameter: usize,
    terminal: bool,
    absorbed: usize,
    fate: String,
    distance: Option<f64>,
    n_hat: Option<usize>,
}

pub fn blocks(dump: &CascadeDump) -> Result<String> {
    let mut rows = vec![];
    for level in &dump.levels {
        for (i, b) in level.blocks.iter().enumerate() {
            let fate = level.fates.iter().find(|f| f.block == i);
            rows.push(BlockRow {
                scale: level.scale,
                block: i,
                sites: join(&b.sites),
                diameter: b.diameter,
                isolated: b.isolated,
                collar_size: b.collar.len(),
                collar_diameter: b.collar_diameter,
                terminal: b.terminal,
                absorbed: b.absorbed,
                fate: fate.map_or(String::new(), |f| format!("{:?}", f.fate).to_lowercase()),
                distance: fate.and_then(|f| f.distance),
                n_hat: b.n_hat,
            });
        }
    }
    write(rows)
}

#[derive(Serialize)]
struct PairRow {
    start_site: usize,
    eigenvalue: f64,
    residual: f64,
    norm_before: f64,
    k_hat: usize,
    depth: usize,
    cluster: usize,
    terminal_block_size: usize,
}

pub fn eigenpairs(reports: &[EfpReport]) -> Result<String> {
    let header =
        ["start_site", "eigenvalue", "residual", "norm_before", "k_hat", "depth", "cluster", "terminal_block_size"];
    write_with_header(&header, reports.iter().flat_map(|r| {
        r.pairs.iter().map(|p| PairRow {
            start_site: r.start_site,
            eigenvalue: p.eigenvalue,
            residual: p.residual,
            norm_before: p.norm_before,
            k_hat: p.k_hat,
            depth: p.branch.depth(),
            cluster: p.cluster,
            terminal_block_size: p.terminal_block.len(),
        })
    }))
}

#[derive(Serialize)]
struct DeadRow {
    start_site: usize,
    reason: String,
    depth: usize,
    last_energy: f64,
}

pub fn dead_branches(reports: &[EfpReport]) -> Result<String> {
    write_with_header(&["start_site", "reason", "depth", "last_energy"], reports.iter().flat_map(|r| {
        r.dead.iter().map(|d| DeadRow {
            start_site: r.start_site,
            reason: format!("{:?}", d.reason).to_lowercase(),
            depth: d.branch.depth(),
            last_energy: *d.branch.energies.last().expect("energy"),
        })
    }))
}

#[derive(Serialize)]
struct SweepRow {
    index: u64,
    seed: u64,
    invalid: String,
    block_size: usize,
    lambda: Option<f64>,
    n_hat_prev: Option<usize>,
    ybar: Option<usize>,
    unchanged: Option<usize>,
    singular: Option<usize>,
    monotone: Option<bool>,
    reconstruction_error: Option<f64>,
    rank_one_log10: Option<f64>,
    constant_log10: Option<f64>,
    constant_bound_log10: Option<f64>,
    remainder_log10: Option<f64>,
    remainder_bound_log10: Option<f64>,
}

pub fn sweep_trials(corpus: &Corpus) -> Result<String> {
    write(corpus.trials.iter().map(|t| {
        let d = t.decomposition.as_ref();
        let s = t.sweep.as_ref();
        SweepRow {
            index: t.index,
            seed: t.seed,
            invalid: t.invalid.map_or(String::new(), |r| format!("{r:?}")),
            block_size: t.block.len(),
            lambda: t.lambda,
            n_hat_prev: t.n_hat_prev,
            ybar: s.map(|s| s.ybar),
            unchanged: s.map(|s| s.unchanged),
            singular: s.map(|s| s.failures),
            monotone: s.map(|s| s.monotone),
            reconstruction_error: d.map(|d| d.reconstruction_error),
            rank_one_log10: d.map(|d| d.rank_one_log10),
            constant_log10: d.map(|d| d.constant_log10),
            constant_bound_log10: d.map(|d| d.constant_bound_log10),
            remainder_log10: d.map(|d| d.remainder_log10),
            remainder_bound_log10: d.map(|d| d.remainder_bound_log10),
        }
    }))
}

#[derive(Serialize)]
struct DosRow {
    energy: f64,
    delta: f64,
    mean: f64,
    std_error: f64,
    trials: usize,
}

#[derive(Serialize)]
struct CorrelatorRow {
    distance: usize,
    mean: f64,
    std_error: f64,
    trials: usize,
    central_median: f64,
}

#[derive(Serialize)]
struct SpacingRow {
    n_levels: u32,
    delta: f64,
    probability: f64,
    std_error: f64,
    trials: usize,
}

#[derive(Serialize)]
struct SpacingSample {
    trial: usize,
    min_spacing: f64,
}

#[derive(Serialize)]
struct ScaleRow {
    energy: f64,
    scale: usize,
    resonant_fraction: f64,
    std_error: f64,
    trials: usize,
    mean_n_hat: Option<f64>,
}

#[derive(Serialize)]
struct HistogramRow {
    energy: f64,
    scale: usize,
    kind: &'static str,
    value: usize,
    count: usize,
}

pub fn stats(report: &StatsReport) -> Result<Vec<(String, String)>> {
    let e = &report.ensemble;
    let mut out = vec![];
    if let Some(rows) = &e.dos {
        out.push((
            "dos".into(),
            write(rows.iter().map(|r| DosRow {
                energy: r.energy,
                delta: r.delta,
                mean: r.count.mean,
                std_error: r.count.std_error,
                trials: r.count.trials,
            }))?,
        ));
    }
    if let Some(c) = &e.correlator {
        out.push((
            "correlator".into(),
            write(c.rows.iter().map(|r| CorrelatorRow {
                distance: r.distance,
                mean: r.mean.mean,
                std_error: r.mean.std_error,
                trials: r.mean.trials,
                central_median: r.central_median,
            }))?,
        ));
    }
    if let Some(s) = &e.spacing {
        out.push((
            "spacing".into(),
            write(s.rows.iter().map(|r| SpacingRow {
                n_levels: e.config.n_levels,
                delta: r.delta,
                probability: r.probability.mean,
                std_error: r.probability.std_error,
                trials: r.probability.trials,
            }))?,
        ));
        out.push((
            "spacing_samples".into(),
            write(s.samples.iter().enumerate().map(|(trial, &min_spacing)| SpacingSample { trial, min_spacing }))?,
        ));
    }
    if let Some(blocks) = &e.blocks {
        let mut scales = vec![];
        let mut hist = vec![];
        for b in blocks {
            for s in &b.scales {
                scales.push(ScaleRow {
                    energy: b.energy,
                    scale: s.scale,
                    resonant_fraction: s.resonant_fraction.mean,
                    std_error: s.resonant_fraction.std_error,
                    trials: s.resonant_fraction.trials,
                    mean_n_hat: s.mean_n_hat,
                });
                for (kind, map) in [("size", &s.block_sizes), ("diameter", &s.block_diameters)] {
                    for (&value, &count) in map {
                        hist.push(HistogramRow { energy: b.energy, scale: s.scale, kind, value, count });
                    }
                }
            }
        }
        out.push(("blocks".into(), write(scales)?));
        out.push(("block_histograms".into(), write(hist)?));
    }
    if let Some(t) = &report.spacing_vs_n {
        out.push((
            "spacing_vs_n".into(),
            write(t.rows.iter().flat_map(|row| {
                row.report.rows.iter().map(|r| SpacingRow {
                    n_levels: row.n_levels,
                    delta: r.delta,
                    probability: r.probability.mean,
                    std_error: r.probability.std_error,
                    trials: r.probability.trials,
                })
            }))?,
        ));
    }
    Ok(out)
}

#[derive(Serialize)]
struct CheckRow<'a> {
    check: &'a str,
    gated: bool,
    status: String,
    quantity: &'a str,
    measured: Option<f64>,
    tolerance: Option<f64>,
}

pub fn checks(suite: &SuiteReport) -> Result<String> {
    let mut rows = vec![];
    for c in &suite.checks {
        let status = format!("{:?}", c.status).to_lowercase();
        let mut keys: Vec<&String> = c.measured.keys().chain(c.tolerances.keys()).collect();
        keys.sort();
        keys.dedup();
        for k in keys {
            rows.push(CheckRow {
                check: &c.name,
                gated: c.gated,
                status: status.clone(),
                quantity: k,
                measured: c.measured.get(k).copied(),
                tolerance: c.tolerances.get(k).copied(),
            });
        }
    }
    write(rows)
}
