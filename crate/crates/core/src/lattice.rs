//! Rectangular boxes in Z^d, discrete disorder, and the tight-binding Hamiltonian.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct GeometrySpec {
    d: usize,
    sides: Vec<usize>,
}

/// A box `[0, s_1) x ... x [0, s_d)` with row-major site numbering (last axis fastest).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "GeometrySpec", into = "GeometrySpec")]
pub struct Geometry {
    d: usize,
    sides: Vec<usize>,
    strides: Vec<usize>,
}

impl TryFrom<GeometrySpec> for Geometry {
    type Error = crate::Error;

    fn try_from(spec: GeometrySpec) -> Result<Self> {
        Geometry::new(spec.d, &spec.sides)
    }
}

impl From<Geometry> for GeometrySpec {
    fn from(g: Geometry) -> Self {
        GeometrySpec { d: g.d, sides: g.sides }
    }
}

impl Geometry {
    pub fn new(d: usize, sides: &[usize]) -> Result<Self> {
        if d == 0 {
            return invalid("dimension must be at least 1");
        }
        if sides.len() != d {
            return invalid(format!("expected {d} side lengths, got {}", sides.len()));
        }
        if sides.iter().any(|&s| s == 0) {
            return invalid("side lengths must be positive");
        }
        let mut strides = vec![1usize; d];
        for i in (0..d.saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * sides[i + 1];
        }
        Ok(Geometry { d, sides: sides.to_vec(), strides })
    }

    /// One-dimensional chain of `n` sites.
    pub fn chain(n: usize) -> Result<Self> {
        Geometry::new(1, &[n])
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn sides(&self) -> &[usize] {
        &self.sides
    }

    pub fn len(&self) -> usize {
        self.sides.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn diam(&self) -> usize {
        self.sides.iter().map(|s| s - 1).sum()
    }

    pub fn coords(&self, site: usize) -> Vec<usize> {
        let mut rem = site;
        self.strides
            .iter()
            .map(|&st| {
                let c = rem / st;
                rem %= st;
                c
            })
            .collect()
    }

    pub fn index(&self, coords: &[usize]) -> Option<usize> {
        if coords.len() != self.d {
            return None;
        }
        let mut idx = 0;
        for ((&c, &s), &st) in coords.iter().zip(&self.sides).zip(&self.strides) {
            if c >= s {
                return None;
            }
            idx += c * st;
        }
        Some(idx)
    }

    /// l1 distance.
    pub fn dist(&self, a: usize, b: usize) -> usize {
        let mut ra = a;
        let mut rb = b;
        let mut total = 0;
        for &st in &self.strides {
            let (ca, cb) = (ra / st, rb / st);
            ra %= st;
            rb %= st;
            total += ca.abs_diff(cb);
        }
        total
    }

    /// Nearest neighbours in ascending index order.
    pub fn neighbors(&self, site: usize) -> Vec<usize> {
        let c = self.coords(site);
        let mut out = Vec::with_capacity(2 * self.d);
        for axis in 0..self.d {
            if c[axis] > 0 {
                out.push(site - self.strides[axis]);
            }
            if c[axis] + 1 < self.sides[axis] {
                out.push(site + self.strides[axis]);
            }
        }
        out.sort_unstable();
        out
    }

    /// l1 diameter of a site set, 0 for sets with fewer than two sites.
    pub fn set_diameter(&self, sites: &[usize]) -> usize {
        if sites.len() < 2 {
            return 0;
        }
        let coords: Vec<Vec<i64>> = sites
            .iter()
            .map(|&s| self.coords(s).into_iter().map(|c| c as i64).collect())
            .collect();
        // |x - y|_1 = max over sign vectors s of s.(x - y); fixing the first sign halves the work.
        let patterns = 1usize << (self.d - 1);
        let mut best = 0i64;
        for mask in 0..patterns {
            let mut lo = i64::MAX;
            let mut hi = i64::MIN;
            for c in &coords {
                let mut proj = c[0];
                for axis in 1..self.d {
                    if mask >> (axis - 1) & 1 == 1 {
                        proj -= c[axis];
                    } else {
                        proj += c[axis];
                    }
                }
                lo = lo.min(proj);
                hi = hi.max(proj);
            }
            best = best.max(hi - lo);
        }
        best as usize
    }

    /// Distance from every site to the nearest member of `sites` (multi-source BFS).
    pub fn distance_field(&self, sites: &[usize]) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.len()];
        let mut queue = VecDeque::new();
        for &s in sites {
            if dist[s] != 0 {
                dist[s] = 0;
                queue.push_back(s);
            }
        }
        while let Some(s) = queue.pop_front() {
            let next = dist[s] + 1;
            for n in self.neighbors(s) {
                if dist[n] > next {
                    dist[n] = next;
                    queue.push_back(n);
                }
            }
        }
        dist
    }

    /// Sites within l1 distance `radius` of the set, sorted.
    pub fn neighborhood(&self, sites: &[usize], radius: usize) -> Vec<usize> {
        self.distance_field(sites)
            .into_iter()
            .enumerate()
            .filter(|&(_, d)| d <= radius)
            .map(|(i, _)| i)
            .collect()
    }

    /// Sites at distance exactly one from the set.
    pub fn outer_boundary(&self, sites: &[usize]) -> Vec<usize> {
        self.distance_field(sites)
            .into_iter()
            .enumerate()
            .filter(|&(_, d)| d == 1)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn touches_boundary(&self, sites: &[usize]) -> bool {
        sites.iter().any(|&s| {
            self.coords(s)
                .iter()
                .zip(&self.sides)
                .any(|(&c, &side)| c == 0 || c + 1 == side)
        })
    }
}

/// Seed of trial `index` in an ensemble with base seed `base`.
pub fn trial_seed(base: u64, index: u64) -> u64 {
    let mut rng = ChaCha20Rng::seed_from_u64(base);
    rng.set_stream(index);
    rng.next_u64()
}

/// On-site potential levels `level / (n_levels - 1)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Disorder {
    pub n_levels: u32,
    pub seed: Option<u64>,
    pub levels: Vec<u32>,
}

impl Disorder {
    pub fn sample(geometry: &Geometry, n_levels: u32, seed: u64) -> Result<Self> {
        if n_levels < 2 {
            return invalid("need at least two potential levels");
        }
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let levels = (0..geometry.len()).map(|_| rng.gen_range(0..n_levels)).collect();
        Ok(Disorder { n_levels, seed: Some(seed), levels })
    }

    pub fn from_levels(n_levels: u32, levels: Vec<u32>) -> Result<Self> {
        if n_levels < 2 {
            return invalid("need at least two potential levels");
        }
        if let Some(bad) = levels.iter().find(|&&l| l >= n_levels) {
            return invalid(format!("level {bad} out of range for N = {n_levels}"));
        }
        Ok(Disorder { n_levels, seed: None, levels })
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    /// Grid spacing 1/(N-1).
    pub fn spacing(&self) -> f64 {
        1.0 / f64::from(self.n_levels - 1)
    }

    pub fn value(&self, site: usize) -> f64 {
        f64::from(self.levels[site]) / f64::from(self.n_levels - 1)
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.value(i)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HamiltonianRecord {
    pub geometry: Geometry,
    pub gamma: f64,
    pub n_levels: u32,
    pub seed: Option<u64>,
    pub levels: Vec<u32>,
}

/// `H = H0 - gamma J` with `H0 = diag(2 d gamma + v_x)` at every site, boundary included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "HamiltonianRecord", into = "HamiltonianRecord")]
pub struct Hamiltonian {
    geometry: Geometry,
    disorder: Disorder,
    gamma: f64,
    matrix: DMatrix<f64>,
}

impl TryFrom<HamiltonianRecord> for Hamiltonian {
    type Error = crate::Error;

    fn try_from(r: HamiltonianRecord) -> Result<Self> {
        let mut disorder = Disorder::from_levels(r.n_levels, r.levels)?;
        disorder.seed = r.seed;
        Hamiltonian::new(r.geometry, disorder, r.gamma)
    }
}

impl From<Hamiltonian> for HamiltonianRecord {
    fn from(h: Hamiltonian) -> Self {
        HamiltonianRecord {
            geometry: h.geometry,
            gamma: h.gamma,
            n_levels: h.disorder.n_levels,
            seed: h.disorder.seed,
            levels: h.disorder.levels,
        }
    }
}

impl Hamiltonian {
    pub fn new(geometry: Geometry, disorder: Disorder, gamma: f64) -> Result<Self> {
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return invalid(format!("gamma must be finite and non-negative, got {gamma}"));
        }
        if disorder.len() != geometry.len() {
            return invalid(format!(
                "disorder has {} sites, lattice has {}",
                disorder.len(),
                geometry.len()
            ));
        }
        let n = geometry.len();
        let shift = 2.0 * geometry.dim() as f64 * gamma;
        let mut matrix = DMatrix::zeros(n, n);
        for i in 0..n {
            matrix[(i, i)] = shift + disorder.value(i);
            for j in geometry.neighbors(i) {
                matrix[(i, j)] = -gamma;
            }
        }
        Ok(Hamiltonian { geometry, disorder, gamma, matrix })
    }

    /// Samples disorder and assembles the matrix in one go.
    pub fn sample(geometry: Geometry, n_levels: u32, gamma: f64, seed: u64) -> Result<Self> {
        let disorder = Disorder::sample(&geometry, n_levels, seed)?;
        Hamiltonian::new(geometry, disorder, gamma)
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn disorder(&self) -> &Disorder {
        &self.disorder
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn len(&self) -> usize {
        self.geometry.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Diagonal entry `2 d gamma + v_x`.
    pub fn onsite(&self, site: usize) -> f64 {
        self.matrix[(site, site)]
    }

    /// Upper end of the spectral range, `1 + 4 d gamma`.
    pub fn spectral_bound(&self) -> f64 {
        1.0 + 4.0 * self.geometry.dim() as f64 * self.gamma
    }

    /// Principal submatrix on `sites` in the given order.
    pub fn restrict(&self, sites: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(sites.len(), sites.len(), |i, j| self.matrix[(sites[i], sites[j])])
    }

    /// Same lattice and gamma with one site moved to another level.
    pub fn with_level(&self, site: usize, level: u32) -> Result<Self> {
        let mut disorder = self.disorder.clone();
        if level >= disorder.n_levels {
            return invalid(format!("level {level} out of range"));
        }
        disorder.levels[site] = level;
        Hamiltonian::new(self.geometry.clone(), disorder, self.gamma)
    }

    pub fn record(&self) -> HamiltonianRecord {
        self.clone().into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schur::dense_spectrum;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn geometry_counts() {
        let g = Geometry::new(1, &[3]).unwrap();
        assert_eq!((g.len(), g.diam()), (3, 2));
        let g = Geometry::new(2, &[4, 4]).unwrap();
        assert_eq!((g.len(), g.diam()), (16, 6));
        let a = g.index(&[0, 0]).unwrap();
        let b = g.index(&[3, 3]).unwrap();
        assert_eq!(g.dist(a, b), 6);
    }

    #[test]
    fn geometry_rejects_bad_shapes() {
        assert!(Geometry::new(0, &[]).is_err());
        assert!(Geometry::new(2, &[3, 0]).is_err());
        assert!(Geometry::new(2, &[3]).is_err());
    }

    #[test]
    fn diameter_matches_pairwise_max() {
        let g = Geometry::new(3, &[4, 3, 5]).unwrap();
        let sites = [0, 7, 19, 33, 58];
        let brute = sites
            .iter()
            .flat_map(|&a| sites.iter().map(move |&b| (a, b)))
            .map(|(a, b)| g.dist(a, b))
            .max()
            .unwrap();
        assert_eq!(g.set_diameter(&sites), brute);
    }

    #[test]
    fn neighborhood_clips_to_box() {
        let g = Geometry::chain(21).unwrap();
        assert_eq!(g.neighborhood(&[5], 8), (0..=13).collect::<Vec<_>>());
        assert_eq!(g.neighborhood(&[0], 8), (0..=8).collect::<Vec<_>>());
        assert_eq!(g.outer_boundary(&[4, 5, 6]), vec![3, 7]);
    }

    #[test]
    fn disorder_levels() {
        let g = Geometry::chain(50).unwrap();
        let d = Disorder::sample(&g, 2, 3).unwrap();
        assert!(d.values().iter().all(|&v| v == 0.0 || v == 1.0));
        let d = Disorder::sample(&g, 11, 3).unwrap();
        for v in d.values() {
            let k = (v * 10.0).round();
            assert!((v - k / 10.0).abs() <= f64::EPSILON);
        }
        assert_eq!(d, Disorder::sample(&g, 11, 3).unwrap());
        assert!(Disorder::sample(&g, 1, 3).is_err());
    }

    #[test]
    fn path_three_spectrum() {
        let g = Geometry::chain(3).unwrap();
        let h = Hamiltonian::new(g, Disorder::from_levels(2, vec![0; 3]).unwrap(), 0.1).unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(h.onsite(i), 0.2, epsilon = 1e-15);
        }
        assert_eq!(h.matrix()[(0, 1)], -0.1);
        assert_eq!(h.matrix()[(0, 2)], 0.0);
        let s = dense_spectrum(h.matrix()).unwrap();
        let r2 = 2f64.sqrt();
        let expected = [0.2 - 0.1 * r2, 0.2, 0.2 + 0.1 * r2];
        for (a, b) in s.values.iter().zip(expected) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn square_plaquette_spectrum() {
        let g = Geometry::new(2, &[2, 2]).unwrap();
        let h = Hamiltonian::new(g, Disorder::from_levels(2, vec![0; 4]).unwrap(), 0.1).unwrap();
        assert_abs_diff_eq!(h.onsite(0), 0.4, epsilon = 1e-15);
        let s = dense_spectrum(h.matrix()).unwrap();
        for (a, b) in s.values.iter().zip([0.2, 0.4, 0.4, 0.6]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn decoupled_spectrum_is_potential() {
        let g = Geometry::chain(12).unwrap();
        let h = Hamiltonian::sample(g, 7, 0.0, 11).unwrap();
        let mut v = h.disorder().values();
        v.sort_by(f64::total_cmp);
        let s = dense_spectrum(h.matrix()).unwrap();
        assert_eq!(s.values, v);
    }

    #[test]
    fn record_roundtrip() {
        let h = Hamiltonian::sample(Geometry::new(2, &[3, 4]).unwrap(), 5, 0.05, 9).unwrap();
        let json = serde_json::to_string(&h).unwrap();
        let back: Hamiltonian = serde_json::from_str(&json).unwrap();
        assert_eq!(h, back);
    }

    proptest! {
        #[test]
        fn index_roundtrip(sides in prop::collection::vec(1usize..6, 1..4), pick in 0usize..1000) {
            let g = Geometry::new(sides.len(), &sides).unwrap();
            let site = pick % g.len();
            prop_assert_eq!(g.index(&g.coords(site)), Some(site));
        }

        #[test]
        fn spectrum_in_range(n in 2usize..14, levels in 2u32..20, gamma in 0.0f64..0.3, seed in any::<u64>()) {
            let h = Hamiltonian::sample(Geometry::chain(n).unwrap(), levels, gamma, seed).unwrap();
            let s = dense_spectrum(h.matrix()).unwrap();
            prop_assert!(s.values[0] >= -1e-12);
            prop_assert!(*s.values.last().unwrap() <= h.spectral_bound() + 1e-12);
        }

        #[test]
        fn hopping_row_sums_are_degrees(a in 1usize..5, b in 1usize..5, seed in any::<u64>()) {
            let g = Geometry::new(2, &[a, b]).unwrap();
            let h = Hamiltonian::sample(g.clone(), 4, 0.1, seed).unwrap();
            for i in 0..g.len() {
                let off: f64 = (0..g.len()).filter(|&j| j != i).map(|j| -h.matrix()[(i, j)]).sum();
                prop_assert!((off - 0.1 * g.neighbors(i).len() as f64).abs() < 1e-15);
            }
        }
    }
}
