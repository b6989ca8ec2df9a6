//! Energy-following procedure: branches of snapped energies from a start site down to
//! the scale where the collar is the whole lattice, then eigenpairs of `H`.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::lattice::Hamiltonian;
use crate::multiscale::{localized_eliminator, Block, Cascade, Schedule};
use crate::schur::{eigenvalues, eigh, relative_residual, Eliminator, Partition, Window};

/// Gram eigenvalues above this count towards the rank of pooled eigenvectors.
pub const POOL_RANK_TOL: f64 = 1e-6;
pub const DEFAULT_FAN_OUT: usize = 64;
/// `|E_k - lambda_0| <= 0.31 eps_k` along some branch.
pub const ENVELOPE: f64 = 0.31;

/// Nearest multiple of `eps / 2`; exact midpoints go to the smaller multiple.
/// Returns `(multiple, value)`.
pub fn snap_energy(solution: f64, eps: f64) -> (f64, f64) {
    let h = eps / 2.0;
    let m = (solution / h - 0.5).ceil();
    (m, m * h)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfpConfig {
    /// Terminal emissions allowed per start site before exploration stops.
    pub fan_out_cap: usize,
    /// Stop before this scale even if blocks are not terminal.
    pub max_scale: Option<usize>,
}

impl Default for EfpConfig {
    fn default() -> Self {
        EfpConfig { fan_out_cap: DEFAULT_FAN_OUT, max_scale: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyBranch {
    pub start_site: usize,
    /// `E_1, E_2, ...`.
    pub energies: Vec<f64>,
    /// Grid multiple of `eps_k / 2` for `E_k`, `k >= 2`.
    pub grid_multiples: Vec<f64>,
    /// `B_{x,1}, B_{x,2}, ...`.
    pub blocks: Vec<Vec<usize>>,
    /// `n^` of `B_{x,k}` once it has been tested against `E_{k+1}`.
    pub n_hat: Vec<Option<usize>>,
    /// Scales where the snapped energy was pulled one grid step back inside the shift budget.
    pub clamped: Vec<usize>,
    pub terminal: bool,
}

impl EnergyBranch {
    fn root(x: usize, e1: f64) -> Self {
        EnergyBranch {
            start_site: x,
            energies: vec![e1],
            grid_multiples: vec![],
            blocks: vec![],
            n_hat: vec![],
            clamped: vec![],
            terminal: false,
        }
    }

    pub fn depth(&self) -> usize {
        self.energies.len()
    }

    /// Last scale with growth of `B_{x,j}` over `B_{x,j-1}` or `n^_{j-1} > 1`,
    /// taking `B_{x,0} = {x}` and `n^_0 = 1`.
    pub fn k_hat(&self) -> usize {
        let mut k_hat = 0;
        for j in 1..=self.blocks.len() {
            let prev: &[usize] = if j == 1 { std::slice::from_ref(&self.start_site) } else { &self.blocks[j - 2] };
            let grew = self.blocks[j - 1].iter().any(|s| prev.binary_search(s).is_err());
            let multi = j >= 2 && self.n_hat[j - 2].is_some_and(|n| n > 1);
            if grew || multi {
                k_hat = j;
            }
        }
        k_hat
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenpairApprox {
    pub branch: EnergyBranch,
    pub eigenvalue: f64,
    /// Unit vector on the lattice.
    pub eigenvector: Vec<f64>,
    /// Norm of the lift before rescaling.
    pub norm_before: f64,
    pub residual: f64,
    pub k_hat: usize,
    /// Index of the fixed-point cluster at the terminal step.
    pub cluster: usize,
    pub terminal_block: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeathReason {
    /// `x` dropped out of the resonant set.
    LeftResonantSet,
    /// The sweep interval held no fixed point.
    NoSolution,
    /// Scales ran out before the collar reached the lattice.
    IncompleteTermination,
    Numerical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeadBranch {
    pub branch: EnergyBranch,
    pub reason: DeathReason,
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfpReport {
    pub start_site: usize,
    pub pairs: Vec<EigenpairApprox>,
    pub dead: Vec<DeadBranch>,
    /// Nodes visited, duplicates excluded.
    pub explored: usize,
    pub overflow: bool,
}

struct Node<'a> {
    cascade: Cascade<'a>,
    branch: EnergyBranch,
}

/// Depth-first exploration of every branch from `x`.
pub fn efp_run(h: &Hamiltonian, schedule: &Schedule, x: usize, config: &EfpConfig) -> Result<EfpReport> {
    if x >= h.len() {
        return invalid(format!("start site {x} outside lattice of {} sites", h.len()));
    }
    let e1 = h.onsite(x);
    let mut report = EfpReport { start_site: x, pairs: vec![], dead: vec![], explored: 0, overflow: false };
    let mut seen: HashSet<(usize, u64, Vec<usize>)> = HashSet::new();
    let mut stack = vec![Node { cascade: Cascade::start(h, schedule, e1), branch: EnergyBranch::root(x, e1) }];
    let cap_scale = config.max_scale.unwrap_or(usize::MAX).min(schedule.last_scale());
    let mut emitted_leaves = 0;

    while let Some(Node { cascade, mut branch }) = stack.pop() {
        let k = cascade.scale();
        let Some(block) = cascade.block_containing(x).cloned() else {
            report.dead.push(DeadBranch { branch, reason: DeathReason::LeftResonantSet, detail: None });
            continue;
        };
        if !seen.insert((k, cascade.energy().to_bits(), block.sites.clone())) {
            continue;
        }
        report.explored += 1;
        branch.blocks.push(block.sites.clone());

        if block.terminal {
            if emitted_leaves >= config.fan_out_cap {
                report.overflow = true;
                break;
            }
            emitted_leaves += 1;
            branch.terminal = true;
            match terminal_pairs(&cascade, &block, &branch) {
                Ok(pairs) if pairs.is_empty() => {
                    report.dead.push(DeadBranch { branch, reason: DeathReason::NoSolution, detail: None })
                }
                Ok(pairs) => report.pairs.extend(pairs),
                Err(e) => report.dead.push(DeadBranch {
                    branch,
                    reason: DeathReason::Numerical,
                    detail: Some(e.to_string()),
                }),
            }
            continue;
        }
        if k >= cap_scale {
            report.dead.push(DeadBranch { branch, reason: DeathReason::IncompleteTermination, detail: None });
            continue;
        }

        let candidates = match next_energies(&cascade, &block) {
            Ok(c) => c,
            Err(e) => {
                report.dead.push(DeadBranch { branch, reason: DeathReason::Numerical, detail: Some(e.to_string()) });
                continue;
            }
        };
        if candidates.is_empty() {
            report.dead.push(DeadBranch { branch, reason: DeathReason::NoSolution, detail: None });
            continue;
        }
        // reversed so the lowest energy is explored first
        for (m, e, clamped) in candidates.into_iter().rev() {
            let mut child = cascade.clone();
            if let Err(err) = child.advance(e) {
                report.dead.push(DeadBranch {
                    branch: branch.clone(),
                    reason: DeathReason::Numerical,
                    detail: Some(err.to_string()),
                });
                continue;
            }
            let mut b = branch.clone();
            let bx = child.level(k).blocks.iter().find(|b| b.contains(x)).and_then(|b| b.n_hat);
            b.n_hat.push(bx);
            b.energies.push(e);
            b.grid_multiples.push(m);
            if clamped {
                b.clamped.push(k + 1);
            }
            stack.push(Node { cascade: child, branch: b });
        }
    }
    Ok(report)
}

/// Snapped candidates for `E_{k+1}` from the fixed points of `F~^(k)(B_{x,k})` in
/// `I_{eps_k/3}(E_k)`, merged and sorted.
pub fn next_energies(cascade: &Cascade<'_>, block: &Block) -> Result<Vec<(f64, f64, bool)>> {
    let k = cascade.scale();
    let schedule = cascade.schedule();
    let eps_k = schedule.window(k).expect("current window");
    let eps_next = schedule.window(k + 1).expect("next window");
    let e_k = cascade.energy();
    let fps = cascade.eliminator(block)?.fixed_points(Window::new(e_k, eps_k / 3.0))?;
    let h = eps_next / 2.0;
    let mut out: Vec<(f64, f64, bool)> = vec![];
    for fp in fps {
        let (mut m, mut e) = snap_energy(fp.lambda, eps_next);
        let mut clamped = false;
        if (e - e_k).abs() > eps_k / 3.0 {
            m -= (e - e_k).signum();
            e = m * h;
            clamped = true;
        }
        if !out.iter().any(|c| c.0 == m) {
            out.push((m, e, clamped));
        }
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(out)
}

/// Eigenpairs of `H` at the terminal scale. The whole resonant set is kept, the rest of
/// the lattice eliminated; within each cluster of fixed points the directions carrying
/// more weight on `B_x` than on any other block are emitted.
fn terminal_pairs(cascade: &Cascade<'_>, block: &Block, branch: &EnergyBranch) -> Result<Vec<EigenpairApprox>> {
    let h = cascade.hamiltonian();
    let k = cascade.scale();
    let eps_k = cascade.schedule().window(k).expect("current window");
    let level = cascade.current();
    let keep = &level.resonant;
    let elim = Eliminator::new(h.matrix(), Partition::new(h.len(), keep)?)?;
    let fps = elim.fixed_points(Window::new(cascade.energy(), eps_k / 3.0))?;
    let owner = level.blocks.iter().position(|b| b.sites == block.sites).expect("block at level");
    let block_of: Vec<usize> = keep
        .iter()
        .map(|s| level.blocks.iter().position(|b| b.contains(*s)).expect("resonant site in a block"))
        .collect();

    let mut out = vec![];
    let mut start = 0;
    while start < fps.len() {
        let cluster = fps[start].cluster;
        let end = start + fps[start..].iter().take_while(|f| f.cluster == cluster).count();
        let members = &fps[start..end];
        let phi = DMatrix::from_columns(&members.iter().map(|f| f.vector.clone()).collect::<Vec<_>>());
        let weight = |rows: &DMatrix<f64>, b: usize| -> DMatrix<f64> {
            let mut p = rows.clone();
            for (i, &blk) in block_of.iter().enumerate() {
                if blk != b {
                    p.row_mut(i).fill(0.0);
                }
            }
            rows.transpose() * p
        };
        let spec = eigh(weight(&phi, owner));
        let mut lambdas: Vec<f64> = members.iter().map(|f| f.lambda).collect();
        lambdas.sort_by(f64::total_cmp);
        for j in 0..members.len() {
            let dir: DVector<f64> = &phi * spec.vectors.column(j);
            let w: Vec<f64> = (0..level.blocks.len())
                .map(|b| {
                    dir.iter().zip(&block_of).filter(|(_, &blk)| blk == b).map(|(v, _)| v * v).sum::<f64>()
                })
                .collect();
            let dominant = (0..w.len()).all(|b| b == owner || w[owner] > w[b] || (w[owner] == w[b] && owner < b));
            if !dominant {
                continue;
            }
            let lambda = lambdas[j];
            let psi = elim.lift(lambda, &dir)?;
            let norm_before = psi.norm();
            let residual = relative_residual(h.matrix(), lambda, &psi);
            out.push(EigenpairApprox {
                branch: branch.clone(),
                eigenvalue: lambda,
                eigenvector: (psi / norm_before).as_slice().to_vec(),
                norm_before,
                residual,
                k_hat: branch.k_hat(),
                cluster,
                terminal_block: block.sites.clone(),
            });
        }
        start = end;
    }
    Ok(out)
}

/// `psi = (phi on B, -(H_{B^c} - l)^-1 H_{B^c B} phi on the collar, 0 elsewhere)`.
pub fn reconstruct_eigenvector(h: &Hamiltonian, block: &Block, phi_top: &DVector<f64>, lambda: f64) -> Result<Vec<f64>> {
    let local = localized_eliminator(h, block)?.lift(lambda, phi_top)?;
    let mut psi = vec![0.0; h.len()];
    for (i, &s) in block.collar.iter().enumerate() {
        psi[s] = local[i];
    }
    Ok(psi)
}

/// Reports for every start site, in site order.
pub fn efp_all(h: &Hamiltonian, schedule: &Schedule, config: &EfpConfig) -> Result<Vec<EfpReport>> {
    (0..h.len()).into_par_iter().map(|x| efp_run(h, schedule, x, config)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletenessReport {
    pub n_sites: usize,
    pub tolerance: f64,
    pub oracle_count: usize,
    pub emitted: usize,
    /// Eigenvalues after pooling emitted pairs by span.
    pub pooled: usize,
    pub matched: usize,
    pub matched_fraction: f64,
    pub missed: Vec<f64>,
    pub spurious: Vec<f64>,
    pub max_residual: f64,
    pub min_norm_before: f64,
    /// Oracle eigenvalues followed within `0.31 eps_k` at every scale by some branch.
    pub envelope_fraction: f64,
    pub dead_by_reason: Vec<(DeathReason, usize)>,
    pub incomplete_termination: bool,
    pub overflowed_sites: Vec<usize>,
}

/// Runs the EFP from every site and matches the pooled eigenvalues against the dense spectrum.
pub fn completeness_check(h: &Hamiltonian, schedule: &Schedule, config: &EfpConfig) -> Result<CompletenessReport> {
    let reports = efp_all(h, schedule, config)?;
    Ok(completeness_from_reports(h, schedule, &reports))
}

pub fn completeness_from_reports(h: &Hamiltonian, schedule: &Schedule, reports: &[EfpReport]) -> CompletenessReport {
    let oracle = eigenvalues(h.matrix());
    let last = schedule.last_scale().min(schedule.k_bar);
    let tolerance = 1e-8f64.max(schedule.window(last).expect("window"));
    let pairs: Vec<&EigenpairApprox> = reports.iter().flat_map(|r| &r.pairs).collect();
    let pooled = pool_eigenvalues(h, &pairs, tolerance);
    let (matched, missed, spurious) = match_sorted(&oracle, &pooled, tolerance);

    let branches: Vec<&EnergyBranch> = reports
        .iter()
        .flat_map(|r| r.pairs.iter().map(|p| &p.branch).chain(r.dead.iter().map(|d| &d.branch)))
        .collect();
    let followed = oracle
        .iter()
        .filter(|&&l0| {
            branches.iter().any(|b| {
                b.energies.iter().enumerate().all(|(i, e)| {
                    let eps = schedule.window(i + 1).expect("window");
                    (e - l0).abs() <= ENVELOPE * eps
                })
            })
        })
        .count();

    let mut dead_by_reason: Vec<(DeathReason, usize)> = vec![];
    for d in reports.iter().flat_map(|r| &r.dead) {
        match dead_by_reason.iter_mut().find(|(r, _)| *r == d.reason) {
            Some((_, n)) => *n += 1,
            None => dead_by_reason.push((d.reason, 1)),
        }
    }
    CompletenessReport {
        n_sites: h.len(),
        tolerance,
        oracle_count: oracle.len(),
        emitted: pairs.len(),
        pooled: pooled.len(),
        matched,
        matched_fraction: matched as f64 / oracle.len() as f64,
        missed,
        spurious,
        max_residual: pairs.iter().map(|p| p.residual).fold(0.0, f64::max),
        min_norm_before: pairs.iter().map(|p| p.norm_before).fold(f64::INFINITY, f64::min),
        envelope_fraction: followed as f64 / oracle.len() as f64,
        incomplete_termination: dead_by_reason.iter().any(|(r, _)| *r == DeathReason::IncompleteTermination),
        dead_by_reason,
        overflowed_sites: reports.iter().filter(|r| r.overflow).map(|r| r.start_site).collect(),
    }
}

/// Groups emitted eigenvalues within `tol`, and per group returns the Rayleigh-Ritz
/// values of `H` on the span of the emitted vectors.
fn pool_eigenvalues(h: &Hamiltonian, pairs: &[&EigenpairApprox], tol: f64) -> Vec<f64> {
    pooled_eigenpairs(h, pairs, tol).into_iter().map(|(e, _)| e).collect()
}

/// Ritz pairs of the pooled emissions, sorted by value; vectors are unit length on the lattice.
pub fn pooled_eigenpairs(h: &Hamiltonian, pairs: &[&EigenpairApprox], tol: f64) -> Vec<(f64, Vec<f64>)> {
    let mut sorted: Vec<&EigenpairApprox> = pairs.to_vec();
    sorted.sort_by(|a, b| a.eigenvalue.total_cmp(&b.eigenvalue));
    let mut out = vec![];
    let mut start = 0;
    while start < sorted.len() {
        let mut end = start + 1;
        while end < sorted.len() && sorted[end].eigenvalue - sorted[end - 1].eigenvalue <= tol {
            end += 1;
        }
        let psi = DMatrix::from_columns(
            &sorted[start..end].iter().map(|p| DVector::from_column_slice(&p.eigenvector)).collect::<Vec<_>>(),
        );
        let gram = eigh(psi.transpose() * &psi);
        let basis: Vec<DVector<f64>> = gram
            .values
            .iter()
            .enumerate()
            .filter(|(_, &mu)| mu > POOL_RANK_TOL)
            .map(|(i, &mu)| &psi * gram.vectors.column(i) / mu.sqrt())
            .collect();
        if !basis.is_empty() {
            let q = DMatrix::from_columns(&basis);
            let ritz = eigh(q.transpose() * h.matrix() * &q);
            for (i, &e) in ritz.values.iter().enumerate() {
                let v = &q * ritz.vectors.column(i);
                out.push((e, v.iter().copied().collect()));
            }
        }
        start = end;
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

/// Greedy two-pointer matching of sorted lists; returns `(matched, missed, spurious)`.
pub fn match_sorted(oracle: &[f64], found: &[f64], tol: f64) -> (usize, Vec<f64>, Vec<f64>) {
    let (mut i, mut j, mut matched) = (0, 0, 0);
    let (mut missed, mut spurious) = (vec![], vec![]);
    while i < oracle.len() && j < found.len() {
        if (oracle[i] - found[j]).abs() <= tol {
            matched += 1;
            i += 1;
            j += 1;
        } else if oracle[i] < found[j] {
            missed.push(oracle[i]);
            i += 1;
        } else {
            spurious.push(found[j]);
            j += 1;
        }
    }
    missed.extend_from_slice(&oracle[i..]);
    spurious.extend_from_slice(&found[j..]);
    (matched, missed, spurious)
}

/// `N_{x,y,z}`: pairs emitted from `x` whose terminal block holds both `y` and `z`.
pub fn reachable_count(report: &EfpReport, y: usize, z: usize) -> usize {
    report
        .pairs
        .iter()
        .filter(|p| p.terminal_block.binary_search(&y).is_ok() && p.terminal_block.binary_search(&z).is_ok())
        .count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReachableCount {
    pub x: usize,
    pub y: usize,
    pub z: usize,
    pub n_xyz: usize,
    /// `N_{y,z} = sum_x N_{x,y,z}`.
    pub n_yz: usize,
}

pub fn count_reachable(
    h: &Hamiltonian,
    schedule: &Schedule,
    config: &EfpConfig,
    x: usize,
    y: usize,
    z: usize,
) -> Result<ReachableCount> {
    if y >= h.len() || z >= h.len() {
        return invalid("site outside lattice");
    }
    let reports = efp_all(h, schedule, config)?;
    let n_yz = reports.iter().map(|r| reachable_count(r, y, z)).sum();
    let n_xyz = reachable_count(reports.get(x).ok_or_else(|| crate::Error::InvalidArgument("x".into()))?, y, z);
    Ok(ReachableCount { x, y, z, n_xyz, n_yz })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{Disorder, Geometry};
    use crate::multiscale::{ScheduleKind, ScheduleParams};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn chain(levels: Vec<u32>, n_levels: u32, gamma: f64) -> Hamiltonian {
        Hamiltonian::new(
            Geometry::chain(levels.len()).unwrap(),
            Disorder::from_levels(n_levels, levels).unwrap(),
            gamma,
        )
        .unwrap()
    }

    fn geometric(h: &Hamiltonian, l0: u32) -> Schedule {
        Schedule::new(ScheduleParams::for_hamiltonian(h, l0, ScheduleKind::geometric_default())).unwrap()
    }

    #[test]
    fn snapping() {
        assert_abs_diff_eq!(snap_energy(0.5012, 0.002).1, 0.501, epsilon = 1e-15);
        assert_eq!(snap_energy(0.5012, 0.002).0, 501.0);
        assert_eq!(snap_energy(0.0015, 0.002).0, 1.0);
        assert_eq!(snap_energy(0.25, 0.5), (1.0, 0.25));
        assert_eq!(snap_energy(-0.375, 0.5).0, -2.0);
    }

    proptest! {
        #[test]
        fn snap_within_quarter_window(x in -2.0f64..2.0, e in 1e-9f64..0.5) {
            let (m, v) = snap_energy(x, e);
            prop_assert!((v - x).abs() <= e / 4.0 * (1.0 + 1e-9));
            prop_assert_eq!(m.fract(), 0.0);
        }
    }

    #[test]
    fn decoupled_sites_give_indicators() {
        let levels = vec![0, 3, 5, 3, 7, 1, 6, 2, 4, 3, 0, 5];
        let h = chain(levels.clone(), 8, 0.0);
        let s = Schedule::new(ScheduleParams {
            gamma: 0.0,
            ..ScheduleParams::for_hamiltonian(&h, 1, ScheduleKind::geometric_default())
        })
        .unwrap();
        let r = efp_run(&h, &s, 4, &EfpConfig::default()).unwrap();
        assert_eq!(r.pairs.len(), 1);
        let p = &r.pairs[0];
        assert_eq!(p.eigenvalue, 1.0);
        assert!(p.branch.energies.iter().all(|&e| e == 1.0));
        assert_abs_diff_eq!(p.eigenvector[4].abs(), 1.0);
        assert_eq!(p.norm_before, 1.0);
        assert_eq!(reachable_count(&r, 4, 4), 1);
        assert_eq!(reachable_count(&r, 4, 5), 0);

        let c = completeness_check(&h, &s, &EfpConfig::default()).unwrap();
        assert_eq!(c.matched, 12);
        assert!(c.spurious.is_empty());
        assert_eq!(c.envelope_fraction, 1.0);
    }

    #[test]
    fn eigenvalues_match_oracle() {
        let h = Hamiltonian::sample(Geometry::chain(16).unwrap(), 8, 0.01, 5).unwrap();
        let s = geometric(&h, 1);
        let oracle = eigenvalues(h.matrix());
        let reports = efp_all(&h, &s, &EfpConfig::default()).unwrap();
        let pairs: Vec<_> = reports.iter().flat_map(|r| &r.pairs).collect();
        assert!(!pairs.is_empty());
        for p in pairs {
            let best = oracle.iter().map(|o| (o - p.eigenvalue).abs()).fold(f64::INFINITY, f64::min);
            assert!(best <= 1e-9, "{} off by {best}", p.eigenvalue);
            assert!(p.residual <= 1e-8);
            assert!(p.norm_before >= 1.0);
        }
    }

    #[test]
    fn branch_invariants() {
        let h = Hamiltonian::sample(Geometry::chain(24).unwrap(), 6, 0.03, 11).unwrap();
        let s = geometric(&h, 1);
        for x in 0..h.len() {
            let r = efp_run(&h, &s, x, &EfpConfig::default()).unwrap();
            for b in r.pairs.iter().map(|p| &p.branch).chain(r.dead.iter().map(|d| &d.branch)) {
                assert_eq!(b.energies[0], h.onsite(x));
                for (k, w) in b.energies.windows(2).enumerate() {
                    let eps = s.window(k + 1).unwrap();
                    assert!((w[1] - w[0]).abs() <= eps / 3.0);
                    assert_eq!(b.grid_multiples[k] * s.window(k + 2).unwrap() / 2.0, w[1]);
                }
                assert!(b.blocks.iter().all(|blk| blk.binary_search(&x).is_ok()));
            }
        }
    }

    #[test]
    fn isolated_level_gives_single_candidate() {
        let mut levels = vec![0u32; 21];
        levels[10] = 5;
        let h = chain(levels, 8, 1e-3);
        let s = geometric(&h, 1);
        let c = Cascade::start(&h, &s, h.onsite(10));
        let b = c.block_containing(10).unwrap().clone();
        assert_eq!(next_energies(&c, &b).unwrap().len(), 1);
        let r = efp_run(&h, &s, 10, &EfpConfig::default()).unwrap();
        assert_eq!(r.pairs.len(), 1);
        assert_eq!(r.pairs[0].k_hat, 0);
    }

    #[test]
    fn close_solutions_share_a_grid_point() {
        // sites 5 and 6 degenerate: splitting 2 gamma = 2e-5 is far below eps_2 / 2
        let mut levels = vec![0u32; 14];
        levels[5] = 4;
        levels[6] = 4;
        let h = chain(levels, 8, 1e-5);
        let s = geometric(&h, 1);
        let c = Cascade::start(&h, &s, h.onsite(5));
        let b = c.block_containing(5).unwrap().clone();
        assert_eq!(b.sites, vec![5, 6]);
        let fps = c.eliminator(&b).unwrap().fixed_points(Window::new(h.onsite(5), s.window(1).unwrap() / 3.0)).unwrap();
        assert_eq!(fps.len(), 2);
        assert_eq!(next_energies(&c, &b).unwrap().len(), 1);
    }

    #[test]
    fn far_from_spectrum_dies() {
        let h = chain(vec![0, 7, 0, 7, 0, 7, 0, 7], 8, 0.05);
        let s = geometric(&h, 1);
        let r = efp_run(&h, &s, 1, &EfpConfig::default()).unwrap();
        assert!(r.pairs.is_empty() || r.pairs.iter().all(|p| p.residual < 1e-8));
        assert!(efp_run(&h, &s, 99, &EfpConfig::default()).is_err());
    }

    #[test]
    fn truncated_ladder_flags_incomplete() {
        let h = Hamiltonian::sample(Geometry::chain(32).unwrap(), 8, 0.01, 2).unwrap();
        let s = geometric(&h, 1);
        let cfg = EfpConfig { max_scale: Some(2), ..Default::default() };
        let c = completeness_check(&h, &s, &cfg).unwrap();
        assert!(c.incomplete_termination);
        assert!(c.matched < c.oracle_count);
    }

    #[test]
    fn reconstruction_three_sites() {
        let h = chain(vec![0, 2, 5, 7, 1, 3, 0, 6, 2, 4, 1], 8, 0.05);
        let block = Block {
            scale: 1,
            sites: vec![5],
            diameter: 0,
            isolated: true,
            collar: vec![4, 5, 6],
            collar_diameter: 2,
            double_collar: vec![],
            terminal: false,
            touches_boundary: false,
            absorbed: 0,
            n_hat: None,
        };
        let (g, lam) = (0.05, 0.41);
        let psi = reconstruct_eigenvector(&h, &block, &DVector::from_element(1, 1.0), lam).unwrap();
        assert_abs_diff_eq!(psi[4], g / (2.0 * g + 1.0 / 7.0 - lam), epsilon = 1e-15);
        assert_abs_diff_eq!(psi[6], g / (2.0 * g - lam), epsilon = 1e-15);
        assert_eq!(psi[5], 1.0);
        assert!(psi.iter().enumerate().all(|(i, v)| (4..=6).contains(&i) || *v == 0.0));
    }

    #[test]
    fn staged_lift_matches_one_shot() {
        let h = Hamiltonian::sample(Geometry::chain(12).unwrap(), 10, 0.07, 3).unwrap();
        let k = h.matrix().clone();
        let lam = 0.333;
        let phi = DVector::from_vec(vec![0.6, -0.8]);
        let full = Eliminator::new(&k, Partition::new(12, &[5, 6]).unwrap()).unwrap().lift(lam, &phi).unwrap();
        let inner: Vec<usize> = (3..=8).collect();
        let outer = Eliminator::new(&k, Partition::new(12, &inner).unwrap()).unwrap();
        let f1 = outer.complement(lam).unwrap().matrix;
        let stage = Eliminator::new(&f1, Partition::new(6, &[2, 3]).unwrap()).unwrap().lift(lam, &phi).unwrap();
        let staged = outer.lift(lam, &stage).unwrap();
        assert!((full - staged).amax() <= 1e-12);
    }

    #[test]
    fn matching_counts() {
        let (m, missed, spurious) = match_sorted(&[0.1, 0.2, 0.3], &[0.1, 0.25, 0.3, 0.9], 1e-9);
        assert_eq!(m, 2);
        assert_eq!(missed, vec![0.2]);
        assert_eq!(spurious, vec![0.25, 0.9]);
    }
}
