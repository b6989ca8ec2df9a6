//! Scale ladder, resonant sets, blocks with collars, and localized Schur complements.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::lattice::{Geometry, Hamiltonian};
use crate::schur::{count_in_window, spectral_distance, Eliminator, Partition, SchurComplement, Window, TOL_FP};

/// Below this value a standard-schedule window is cut off.
pub const EPS_UNDERFLOW: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScheduleKind {
    /// `eps_k = gamma^(1.6 L_k)` for `k > 1`.
    Standard,
    /// `eps_{k+1} = ratio * eps_k`.
    Geometric { ratio: f64 },
}

impl ScheduleKind {
    pub fn geometric_default() -> Self {
        ScheduleKind::Geometric { ratio: 0.125 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub dim: usize,
    pub n_levels: u32,
    pub gamma: f64,
    pub l0: u32,
    pub alpha: f64,
    /// Probability exponent; carried into reports only.
    pub p: f64,
    pub kind: ScheduleKind,
    pub lattice_diam: usize,
}

impl ScheduleParams {
    pub fn for_hamiltonian(h: &Hamiltonian, l0: u32, kind: ScheduleKind) -> Self {
        ScheduleParams {
            dim: h.geometry().dim(),
            n_levels: h.disorder().n_levels,
            gamma: h.gamma(),
            l0,
            alpha: 1.5,
            p: 10.0,
            kind,
            lattice_diam: h.geometry().diam(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeReport {
    /// `gamma <= eps^20` with `eps = 1/(N-1)`.
    pub weak_hopping: bool,
    /// `r_k >= 0.85` for every scale up to the last one.
    pub decay_rates_ok: bool,
    /// `eps_{k+1} < eps_k / 3` along the ladder.
    pub windows_shrink: bool,
    /// `sum_{i >= j} eps_i / 3 < eps_j / 2` for every `j`.
    pub shift_budget_ok: bool,
    /// Collar diameter bound `5.1 L_k` can hold only once `L_k` is moderately large.
    pub collar_bound_expected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub params: ScheduleParams,
    /// `L_k` for `k = 0..=k_bar`.
    pub lengths: Vec<f64>,
    /// `eps_k` for `k = 1..=last`; entry 0 holds `eps = 1/(N-1)`.
    pub windows: Vec<f64>,
    /// `r_k` for `k = 1..=k_bar`; entry 0 is a zero placeholder.
    pub decay: Vec<f64>,
    pub k_bar: usize,
    /// First scale whose window underflowed, if any.
    pub truncated_at: Option<usize>,
    pub warnings: Vec<String>,
    pub regime: RegimeReport,
}

impl Schedule {
    pub fn new(params: ScheduleParams) -> Result<Self> {
        if params.l0 < 1 {
            return invalid("L0 must be at least 1");
        }
        if params.n_levels < 2 {
            return invalid("need at least two potential levels");
        }
        if !(params.alpha > 1.0) {
            return invalid("alpha must exceed 1");
        }
        match params.kind {
            ScheduleKind::Standard if !(params.gamma > 0.0) => {
                return invalid("the gamma-power window ladder needs gamma > 0")
            }
            ScheduleKind::Geometric { ratio } if !(ratio > 0.0 && ratio <= 0.25) => {
                return invalid(format!("geometric ratio must lie in (0, 1/4], got {ratio}"))
            }
            _ => {}
        }
        let l = |k: usize| f64::from(params.l0) * 2f64.powi(k as i32);
        let diam = params.lattice_diam as f64;
        let mut k_bar = 2;
        while 5.1 * l(k_bar - 1) < diam {
            k_bar += 1;
        }
        let lengths: Vec<f64> = (0..=k_bar + 1).map(l).collect();

        let eps = 1.0 / f64::from(params.n_levels - 1);
        let mut windows = vec![eps, eps / 3.0];
        let mut warnings = vec![];
        let mut truncated_at = None;
        for k in 2..=k_bar {
            let next = match params.kind {
                ScheduleKind::Standard => params.gamma.powf(1.6 * lengths[k]),
                ScheduleKind::Geometric { ratio } => windows[k - 1] * ratio,
            };
            if next < EPS_UNDERFLOW {
                warnings.push(format!(
                    "window at scale {k} underflows ({next:e}); ladder truncated at scale {}",
                    k - 1
                ));
                truncated_at = Some(k);
                break;
            }
            windows.push(next);
        }

        let mut decay = vec![0.0, 0.9];
        for k in 2..=k_bar {
            let prev = decay[k - 1];
            decay.push(prev * (1.0 - 6.0 * lengths[k - 1].powf(1.0 - params.alpha)));
        }
        let decay_rates_ok = decay[1..].iter().all(|&r| r >= 0.85);
        if !decay_rates_ok {
            warnings.push("decay ladder drops below 0.85 at this L0".into());
        }
        let windows_shrink = windows[1..].windows(2).all(|w| w[1] < w[0] / 3.0);
        let shift_budget_ok = (1..windows.len()).all(|j| {
            let tail: f64 = windows[j..].iter().map(|e| e / 3.0).sum();
            tail < windows[j] / 2.0
        });
        let regime = RegimeReport {
            weak_hopping: params.gamma <= eps.powi(20),
            decay_rates_ok,
            windows_shrink,
            shift_budget_ok,
            collar_bound_expected: lengths[1] >= 8.0,
        };
        Ok(Schedule { params, lengths, windows, decay, k_bar, truncated_at, warnings, regime })
    }

    pub fn length(&self, k: usize) -> f64 {
        self.lengths[k]
    }

    /// `eps_k` for `k >= 1`.
    pub fn window(&self, k: usize) -> Option<f64> {
        if k == 0 {
            return None;
        }
        self.windows.get(k).copied()
    }

    /// Highest scale whose window exists.
    pub fn last_scale(&self) -> usize {
        self.windows.len() - 1
    }

    pub fn decay_rate(&self, k: usize) -> f64 {
        self.decay[k]
    }

    /// Connection range `L_k^alpha`.
    pub fn isolation_range(&self, k: usize) -> f64 {
        self.lengths[k].powf(self.params.alpha)
    }

    /// Extra radius `floor(L_k^sqrt(alpha))` of the double collar.
    pub fn double_collar_radius(&self, k: usize) -> usize {
        self.lengths[k].powf(self.params.alpha.sqrt()).floor() as usize
    }

    pub fn collar_radius(&self, k: usize) -> usize {
        (2.0 * self.lengths[k]) as usize
    }
}

/// `{x : |v_x + 2 d gamma - e1| <= eps_1}`.
pub fn resonant_sites_step1(h: &Hamiltonian, e1: f64, eps1: f64) -> Vec<usize> {
    (0..h.len()).filter(|&x| (h.onsite(x) - e1).abs() <= eps1).collect()
}

/// Maximal chains with l1 steps `<= range`, each sorted, ordered by smallest site.
pub fn connected_components(geometry: &Geometry, sites: &[usize], range: f64) -> Vec<Vec<usize>> {
    let n = sites.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for i in 0..n {
        for j in i + 1..n {
            if geometry.dist(sites[i], sites[j]) as f64 <= range {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for i in 0..n {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(sites[i]);
    }
    let mut out: Vec<Vec<usize>> = groups
        .into_values()
        .map(|mut g| {
            g.sort_unstable();
            g.dedup();
            g
        })
        .collect();
    out.sort_by_key(|g| g[0]);
    out
}

/// Nearest-neighbour clusters of a site mask; `None` for sites outside the mask.
pub fn mask_clusters(geometry: &Geometry, mask: &[bool]) -> Vec<Option<usize>> {
    let mut label = vec![None; mask.len()];
    let mut next = 0;
    for start in 0..mask.len() {
        if !mask[start] || label[start].is_some() {
            continue;
        }
        let mut stack = vec![start];
        label[start] = Some(next);
        while let Some(s) = stack.pop() {
            for n in geometry.neighbors(s) {
                if mask[n] && label[n].is_none() {
                    label[n] = Some(next);
                    stack.push(n);
                }
            }
        }
        next += 1;
    }
    label
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub scale: usize,
    pub sites: Vec<usize>,
    pub diameter: usize,
    /// `diameter <= L_scale`.
    pub isolated: bool,
    pub collar: Vec<usize>,
    pub collar_diameter: usize,
    pub double_collar: Vec<usize>,
    /// The collar is the whole lattice.
    pub terminal: bool,
    pub touches_boundary: bool,
    /// Sites pulled in from earlier-scale double collars.
    pub absorbed: usize,
    pub n_hat: Option<usize>,
}

impl Block {
    pub fn contains(&self, site: usize) -> bool {
        self.sites.binary_search(&site).is_ok()
    }

    /// Block sites as indices into `collar`.
    fn keep_indices(&self) -> Vec<usize> {
        self.sites.iter().map(|s| self.collar.binary_search(s).expect("block inside collar")).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fate {
    /// Isolated and not resonant with the next energy; removed.
    Nonresonant,
    Resonant,
    NotIsolated,
    /// Collar elimination was near-singular; kept as resonant.
    Singular,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockFate {
    pub block: usize,
    pub fate: Fate,
    pub distance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Level {
    pub scale: usize,
    pub energy: f64,
    pub resonant: Vec<usize>,
    pub blocks: Vec<Block>,
    /// Filled once the cascade moves past this level.
    pub fates: Vec<BlockFate>,
    pub next_energy: Option<f64>,
}

/// The resonant-block cascade for one energy sequence.
#[derive(Debug, Clone)]
pub struct Cascade<'a> {
    h: &'a Hamiltonian,
    schedule: &'a Schedule,
    levels: Vec<Level>,
    /// Union of double collars of removed blocks.
    removed_cover: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeDump {
    pub schedule: Schedule,
    pub k_bar: usize,
    pub levels: Vec<Level>,
    pub terminated: bool,
}

impl<'a> Cascade<'a> {
    /// Step-1 resonant set around `e1` and its blocks.
    pub fn start(h: &'a Hamiltonian, schedule: &'a Schedule, e1: f64) -> Self {
        let eps1 = schedule.window(1).expect("first window");
        let r1 = resonant_sites_step1(h, e1, eps1);
        let mut c = Cascade { h, schedule, levels: vec![], removed_cover: vec![false; h.len()] };
        let level = c.build_level(1, e1, r1);
        c.levels.push(level);
        c
    }

    pub fn hamiltonian(&self) -> &'a Hamiltonian {
        self.h
    }

    pub fn schedule(&self) -> &'a Schedule {
        self.schedule
    }

    pub fn scale(&self) -> usize {
        self.levels.len()
    }

    pub fn level(&self, k: usize) -> &Level {
        &self.levels[k - 1]
    }

    pub fn current(&self) -> &Level {
        self.levels.last().expect("at least one level")
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    pub fn energy(&self) -> f64 {
        self.current().energy
    }

    pub fn block_containing(&self, site: usize) -> Option<&Block> {
        self.current().blocks.iter().find(|b| b.contains(site))
    }

    pub fn removed_cover(&self) -> &[bool] {
        &self.removed_cover
    }

    fn build_level(&self, k: usize, energy: f64, resonant: Vec<usize>) -> Level {
        let geometry = self.h.geometry();
        let comps = connected_components(geometry, &resonant, self.schedule.isolation_range(k));
        let clusters = mask_clusters(geometry, &self.removed_cover);
        let blocks = comps.into_iter().map(|sites| self.build_block(k, sites, &clusters)).collect();
        Level { scale: k, energy, resonant, blocks, fates: vec![], next_energy: None }
    }

    fn build_block(&self, k: usize, sites: Vec<usize>, clusters: &[Option<usize>]) -> Block {
        let geometry = self.h.geometry();
        let diameter = geometry.set_diameter(&sites);
        let isolated = diameter as f64 <= self.schedule.length(k);
        let base = geometry.neighborhood(&sites, self.schedule.collar_radius(k));
        let (collar, absorbed) = absorb_clusters(&base, clusters);
        let collar_diameter = geometry.set_diameter(&collar);
        let forced = k + 1 >= self.schedule.k_bar;
        let (collar, terminal) = if forced || collar_diameter >= geometry.diam() {
            ((0..geometry.len()).collect(), true)
        } else {
            (collar, false)
        };
        let collar_diameter = geometry.set_diameter(&collar);
        let double_collar = geometry.neighborhood(&collar, self.schedule.double_collar_radius(k));
        Block {
            scale: k,
            touches_boundary: geometry.touches_boundary(&collar),
            sites,
            diameter,
            isolated,
            collar,
            collar_diameter,
            double_collar,
            terminal,
            absorbed,
            n_hat: None,
        }
    }

    /// Schur machinery for `F~(B)` computed in the collar volume.
    pub fn eliminator(&self, block: &Block) -> Result<Eliminator> {
        localized_eliminator(self.h, block)
    }

    pub fn localized_operator(&self, block: &Block, lambda: f64) -> Result<SchurComplement> {
        self.eliminator(block)?.complement(lambda)
    }

    /// `dist(spec F~_{e}(B), e) <= eps`. Distances below the solver resolution
    /// cannot be told apart from zero and count as resonant.
    pub fn resonance_test(&self, block: &Block, e: f64, eps: f64) -> Result<bool> {
        let f = self.localized_operator(block, e)?;
        let dist = spectral_distance(&f.matrix, e);
        Ok(dist <= eps || dist <= TOL_FP)
    }

    /// Moves to the next scale with energy `e_next`, removing isolated blocks that are
    /// not resonant with it.
    pub fn advance(&mut self, e_next: f64) -> Result<()> {
        let k = self.scale();
        let eps_k = self.schedule.window(k).expect("current window");
        let Some(eps_next) = self.schedule.window(k + 1) else {
            return invalid(format!("no window for scale {}", k + 1));
        };
        let e_k = self.energy();
        if (e_next - e_k).abs() > eps_k / 3.0 {
            return invalid(format!(
                "energy shift {:e} exceeds budget {:e}",
                (e_next - e_k).abs(),
                eps_k / 3.0
            ));
        }
        let window = Window::new(e_next, eps_next);
        let mut fates = vec![];
        let mut survivors = vec![];
        let mut n_hats = vec![None; self.current().blocks.len()];
        let mut cover = vec![];
        for (i, block) in self.current().blocks.iter().enumerate() {
            if !block.isolated {
                fates.push(BlockFate { block: i, fate: Fate::NotIsolated, distance: None });
                survivors.extend_from_slice(&block.sites);
                continue;
            }
            match self.localized_operator(block, e_next) {
                Ok(f) => {
                    let dist = spectral_distance(&f.matrix, e_next);
                    if dist <= eps_next || dist <= TOL_FP {
                        fates.push(BlockFate { block: i, fate: Fate::Resonant, distance: Some(dist) });
                        n_hats[i] = Some(count_in_window(&f.matrix, window));
                        survivors.extend_from_slice(&block.sites);
                    } else {
                        fates.push(BlockFate { block: i, fate: Fate::Nonresonant, distance: Some(dist) });
                        cover.extend_from_slice(&block.double_collar);
                    }
                }
                Err(Error::NearSingularElimination { .. }) => {
                    fates.push(BlockFate { block: i, fate: Fate::Singular, distance: None });
                    survivors.extend_from_slice(&block.sites);
                }
                Err(e) => return Err(e),
            }
        }
        survivors.sort_unstable();
        for s in cover {
            self.removed_cover[s] = true;
        }
        let level = self.levels.last_mut().expect("level");
        level.fates = fates;
        level.next_energy = Some(e_next);
        for (b, n) in level.blocks.iter_mut().zip(n_hats) {
            b.n_hat = n;
        }
        let next = self.build_level(k + 1, e_next, survivors);
        self.levels.push(next);
        Ok(())
    }

    /// True once every block's collar is the lattice or nothing is left.
    pub fn finished(&self) -> bool {
        let cur = self.current();
        cur.resonant.is_empty() || cur.blocks.iter().all(|b| b.terminal)
    }

    /// Pairs of blocks at the current scale whose collars overlap.
    pub fn collar_overlaps(&self) -> Vec<(usize, usize)> {
        let blocks = &self.current().blocks;
        let mut out = vec![];
        for i in 0..blocks.len() {
            for j in i + 1..blocks.len() {
                if sorted_intersect(&blocks[i].collar, &blocks[j].collar) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn dump(&self) -> CascadeDump {
        CascadeDump {
            schedule: self.schedule.clone(),
            k_bar: self.schedule.k_bar,
            levels: self.levels.clone(),
            terminated: self.finished(),
        }
    }
}

fn absorb_clusters(base: &[usize], clusters: &[Option<usize>]) -> (Vec<usize>, usize) {
    let mut hit: Vec<usize> = base.iter().filter_map(|&s| clusters[s]).collect();
    hit.sort_unstable();
    hit.dedup();
    if hit.is_empty() {
        return (base.to_vec(), 0);
    }
    let mut collar = base.to_vec();
    for (s, c) in clusters.iter().enumerate() {
        if let Some(c) = c {
            if hit.binary_search(c).is_ok() {
                collar.push(s);
            }
        }
    }
    collar.sort_unstable();
    collar.dedup();
    let absorbed = collar.len() - base.len();
    (collar, absorbed)
}

fn sorted_intersect(a: &[usize], b: &[usize]) -> bool {
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => return true,
        }
    }
    false
}

/// Eliminator of `H` restricted to the collar with the block kept.
pub fn localized_eliminator(h: &Hamiltonian, block: &Block) -> Result<Eliminator> {
    let local = h.restrict(&block.collar);
    Eliminator::new(&local, Partition::new(block.collar.len(), &block.keep_indices())?)
}

/// Fixed-energy cascade: `E_k = energy` at every scale until the blocks are terminal,
/// the resonant set empties, or `max_scale` is reached.
pub fn decompose<'a>(
    h: &'a Hamiltonian,
    schedule: &'a Schedule,
    energy: f64,
    max_scale: Option<usize>,
) -> Result<Cascade<'a>> {
    let mut c = Cascade::start(h, schedule, energy);
    let cap = max_scale.unwrap_or(usize::MAX).min(schedule.last_scale());
    while !c.finished() && c.scale() < cap {
        c.advance(energy)?;
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Disorder;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn params(n_levels: u32, gamma: f64, l0: u32, diam: usize, kind: ScheduleKind) -> ScheduleParams {
        ScheduleParams { dim: 1, n_levels, gamma, l0, alpha: 1.5, p: 10.0, kind, lattice_diam: diam }
    }

    #[test]
    fn ladders() {
        let s = Schedule::new(params(4, 0.1, 2, 100, ScheduleKind::Standard)).unwrap();
        assert_abs_diff_eq!(s.window(1).unwrap(), 1.0 / 9.0, epsilon = 1e-16);
        assert_eq!((s.length(1), s.length(2), s.length(3)), (4.0, 8.0, 16.0));
        assert!((s.window(2).unwrap() / 1.584_893_192_461_114e-13 - 1.0).abs() < 1e-12);
        assert_abs_diff_eq!(s.decay_rate(1), 0.9);
    }

    #[test]
    fn termination_scale() {
        // 5.1 L_{k-1} >= 63 first holds for L_{k-1} = 16
        let s = Schedule::new(params(16, 0.02, 1, 63, ScheduleKind::geometric_default())).unwrap();
        assert_eq!(s.k_bar, 5);
        let s = Schedule::new(params(16, 0.02, 1, 3, ScheduleKind::geometric_default())).unwrap();
        assert_eq!(s.k_bar, 2);
    }

    #[test]
    fn standard_ladder_underflow_truncates() {
        let s = Schedule::new(params(128, 1e-4, 2, 4000, ScheduleKind::Standard)).unwrap();
        assert!(s.truncated_at.is_some());
        assert!(!s.warnings.is_empty());
        assert!(s.windows.iter().all(|&w| w >= EPS_UNDERFLOW));
    }

    #[test]
    fn rejects_bad_params() {
        assert!(Schedule::new(params(1, 0.1, 1, 10, ScheduleKind::Standard)).is_err());
        assert!(Schedule::new(params(4, 0.0, 1, 10, ScheduleKind::Standard)).is_err());
        assert!(Schedule::new(params(4, 0.1, 1, 10, ScheduleKind::Geometric { ratio: 0.5 })).is_err());
    }

    #[test]
    fn step_one_resonances() {
        let g = Geometry::chain(40).unwrap();
        let h = Hamiltonian::sample(g.clone(), 11, 0.0, 4).unwrap();
        let y = 7;
        let r = resonant_sites_step1(&h, h.disorder().value(y), 1.0 / 30.0);
        let expect: Vec<usize> =
            (0..40).filter(|&x| h.disorder().levels[x] == h.disorder().levels[y]).collect();
        assert_eq!(r, expect);
        assert!(resonant_sites_step1(&h, -1.0, 1.0 / 30.0).is_empty());

        let mut levels = vec![0u32; 11];
        levels[4] = 5;
        let h = Hamiltonian::new(Geometry::chain(11).unwrap(), Disorder::from_levels(11, levels).unwrap(), 1e-4)
            .unwrap();
        assert_eq!(resonant_sites_step1(&h, 0.5, 1.0 / 30.0), vec![4]);
    }

    #[test]
    fn component_threshold_is_closed() {
        let g = Geometry::chain(10).unwrap();
        assert_eq!(connected_components(&g, &[0, 3], 2.83), vec![vec![0], vec![3]]);
        assert_eq!(connected_components(&g, &[0, 3], 3.0), vec![vec![0, 3]]);
        assert!(connected_components(&g, &[], 3.0).is_empty());
        assert_eq!(connected_components(&g, &[9, 0, 4, 2], 2.0), vec![vec![0, 2, 4], vec![9]]);
    }

    fn chain_hamiltonian(levels: Vec<u32>, n_levels: u32, gamma: f64) -> Hamiltonian {
        let g = Geometry::chain(levels.len()).unwrap();
        Hamiltonian::new(g, Disorder::from_levels(n_levels, levels).unwrap(), gamma).unwrap()
    }

    #[test]
    fn first_collar_is_plain_neighbourhood() {
        let mut levels = vec![0u32; 41];
        levels[5] = 3;
        let h = chain_hamiltonian(levels, 8, 0.01);
        let s = Schedule::new(ScheduleParams::for_hamiltonian(&h, 2, ScheduleKind::geometric_default())).unwrap();
        let c = Cascade::start(&h, &s, h.onsite(5));
        let b = c.block_containing(5).unwrap();
        assert_eq!(b.collar, (0..=13).collect::<Vec<_>>());
        assert!(!b.terminal);
        assert!(b.touches_boundary);
    }

    #[test]
    fn removed_double_collars_are_absorbed() {
        // sites 10 and 30 resonant at step 1; 30 drops out at step 2 and its double collar
        // (radius 2 L_1 + floor(L_1^sqrt(1.5)) = 6 for L0 = 1) sits inside the next collar of 10
        let mut levels = vec![0u32; 80];
        levels[10] = 4;
        levels[30] = 4;
        levels[31] = 3;
        let h = chain_hamiltonian(levels, 8, 0.05);
        let s = Schedule::new(ScheduleParams::for_hamiltonian(&h, 1, ScheduleKind::geometric_default())).unwrap();
        let e1 = h.onsite(10);
        let mut c = Cascade::start(&h, &s, e1);
        assert_eq!(c.current().blocks.len(), 2);
        let b10 = c.block_containing(10).unwrap().clone();
        let f = c.localized_operator(&b10, e1).unwrap();
        let e2 = f.matrix[(0, 0)];
        c.advance(e2).unwrap();
        assert_eq!(c.current().resonant, vec![10]);
        let fates: Vec<Fate> = c.level(1).fates.iter().map(|f| f.fate).collect();
        assert_eq!(fates, vec![Fate::Resonant, Fate::Nonresonant]);
        let cover: Vec<usize> = (0..80).filter(|&i| c.removed_cover()[i]).collect();
        assert_eq!(cover, (24..=36).collect::<Vec<_>>());
        let b = c.block_containing(10).unwrap();
        // 2 L_2 = 8 reaches site 18, which does not touch 24..=36; widen by one scale
        assert_eq!(b.collar, (2..=18).collect::<Vec<_>>());
        c.advance(e2).unwrap();
        let b = c.block_containing(10).unwrap();
        let mut expect: Vec<usize> = (0..=26).collect();
        expect.extend(27..=36);
        assert_eq!(b.collar, expect);
        assert_eq!(b.absorbed, 10);
    }

    #[test]
    fn single_site_operator_closed_form() {
        let h = chain_hamiltonian(vec![0, 2, 5, 7, 1, 3, 0, 6, 2, 4, 1], 8, 0.05);
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
        let lam = 0.41;
        let f = localized_eliminator(&h, &block).unwrap().complement(lam).unwrap();
        let g = 0.05;
        let (wm, wp) = (1.0 / 7.0, 0.0);
        let expect = (2.0 * g + 3.0 / 7.0) - g * g / (2.0 * g + wm - lam) - g * g / (2.0 * g + wp - lam);
        assert_abs_diff_eq!(f.matrix[(0, 0)], expect, epsilon = 1e-15);
    }

    #[test]
    fn decoupled_cascade_keeps_resonant_set() {
        let g = Geometry::chain(30).unwrap();
        let h = Hamiltonian::sample(g, 5, 0.0, 17).unwrap();
        let x = 3;
        let s = Schedule::new(ScheduleParams {
            gamma: 0.0,
            ..ScheduleParams::for_hamiltonian(&h, 1, ScheduleKind::geometric_default())
        })
        .unwrap();
        let c = decompose(&h, &s, h.onsite(x), None).unwrap();
        let r1 = c.level(1).resonant.clone();
        for level in c.levels() {
            assert_eq!(level.resonant, r1);
        }
    }

    #[test]
    fn everything_nonresonant_empties_the_set() {
        let h = chain_hamiltonian(vec![0, 7, 0, 7, 0, 7, 0, 7, 0, 7, 0, 7, 0, 7, 0, 7, 0, 7, 0, 7], 8, 0.05);
        let s = Schedule::new(ScheduleParams::for_hamiltonian(&h, 1, ScheduleKind::geometric_default())).unwrap();
        let mut c = Cascade::start(&h, &s, 0.5);
        assert!(c.current().resonant.is_empty());
        assert!(c.finished());
        assert!(c.advance(0.5).is_ok());
    }

    #[test]
    fn shift_budget_enforced() {
        let h = chain_hamiltonian(vec![3; 12], 8, 0.01);
        let s = Schedule::new(ScheduleParams::for_hamiltonian(&h, 1, ScheduleKind::geometric_default())).unwrap();
        let mut c = Cascade::start(&h, &s, h.onsite(0));
        let too_far = h.onsite(0) + s.window(1).unwrap();
        assert!(c.advance(too_far).is_err());
    }

    proptest! {
        #[test]
        fn cascade_invariants(seed in any::<u64>(), n in 20usize..60, levels in 3u32..12, l0 in 1u32..3) {
            let h = Hamiltonian::sample(Geometry::chain(n).unwrap(), levels, 0.01, seed).unwrap();
            let s = Schedule::new(ScheduleParams::for_hamiltonian(&h, l0, ScheduleKind::geometric_default())).unwrap();
            let x = (seed % n as u64) as usize;
            let c = decompose(&h, &s, h.onsite(x), None).unwrap();
            for w in c.levels().windows(2) {
                prop_assert!(w[1].resonant.iter().all(|s| w[0].resonant.binary_search(s).is_ok()));
            }
            for level in c.levels() {
                let range = s.isolation_range(level.scale);
                for (i, a) in level.blocks.iter().enumerate() {
                    prop_assert!(a.sites.iter().all(|x| a.collar.binary_search(x).is_ok()));
                    prop_assert!(a.collar.iter().all(|x| a.double_collar.binary_search(x).is_ok()));
                    prop_assert_eq!(a.isolated, a.diameter as f64 <= s.length(level.scale));
                    for b in &level.blocks[i + 1..] {
                        let gap = a.sites.iter()
                            .flat_map(|&p| b.sites.iter().map(move |&q| (p, q)))
                            .map(|(p, q)| h.geometry().dist(p, q))
                            .min().unwrap();
                        prop_assert!(gap as f64 > range);
                    }
                }
            }
        }
    }
}
