//! Schur complements `F(l) = A - B (D - l)^-1 C`, spectral windows, and the
//! fixed-point eigenvalue solver `l in spec F(l)`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Absolute convergence tolerance of the fixed-point solver.
pub const TOL_FP: f64 = 1e-12;
/// Relative residual tolerance for lifted eigenvectors.
pub const TOL_LIFT: f64 = 1e-9;
/// Elimination margin floor, relative to the norm of the parent matrix.
pub const MARGIN_FLOOR_REL: f64 = 1e-12;

const MAX_ITER: usize = 200;

/// Closed interval `[center - half_width, center + half_width]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub center: f64,
    pub half_width: f64,
}

impl Window {
    pub fn new(center: f64, half_width: f64) -> Self {
        debug_assert!(half_width >= 0.0);
        Window { center, half_width }
    }

    pub fn lo(&self) -> f64 {
        self.center - self.half_width
    }

    pub fn hi(&self) -> f64 {
        self.center + self.half_width
    }

    pub fn contains(&self, x: f64) -> bool {
        (x - self.center).abs() <= self.half_width
    }
}

/// Ascending eigenvalues with orthonormal eigenvectors in matching columns.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn symmetry_defect(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in 0..i {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    for i in 0..m.nrows() {
        for j in 0..i {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Infinity norm; an upper bound for the spectral norm of a symmetric matrix.
pub fn norm_inf(m: &DMatrix<f64>) -> f64 {
    m.row_iter().map(|r| r.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().iter().cloned().fold(0.0, f64::max)
}

/// Dense symmetric eigendecomposition, eigenvalues ascending.
pub fn dense_spectrum(m: &DMatrix<f64>) -> Result<Spectrum> {
    if m.nrows() != m.ncols() {
        return invalid(format!("matrix is {}x{}, not square", m.nrows(), m.ncols()));
    }
    let scale = m.amax().max(1.0);
    if symmetry_defect(m) > 1e-10 * scale {
        return invalid("matrix is not symmetric");
    }
    Ok(eigh(m.clone()))
}

pub fn eigh(m: DMatrix<f64>) -> Spectrum {
    let n = m.nrows();
    if n == 0 {
        return Spectrum { values: vec![], vectors: DMatrix::zeros(0, 0) };
    }
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    Spectrum { values, vectors }
}

pub fn eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 {
        return vec![];
    }
    let mut v: Vec<f64> = m.clone().symmetric_eigenvalues().iter().cloned().collect();
    v.sort_by(f64::total_cmp);
    v
}

/// `min_i |l_i - e|`; infinite for an empty matrix.
pub fn spectral_distance(m: &DMatrix<f64>, e: f64) -> f64 {
    eigenvalues(m).into_iter().map(|l| (l - e).abs()).fold(f64::INFINITY, f64::min)
}

/// Eigenvalues in the closed window, counted with multiplicity.
pub fn count_in_window(m: &DMatrix<f64>, window: Window) -> usize {
    eigenvalues(m).into_iter().filter(|&l| window.contains(l)).count()
}

/// Split of a parent index set into kept and eliminated indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub keep: Vec<usize>,
    pub eliminate: Vec<usize>,
}

impl Partition {
    /// Keeps `keep` (order preserved) and eliminates the rest of `0..n` in ascending order.
    pub fn new(n: usize, keep: &[usize]) -> Result<Self> {
        let mut mark = vec![false; n];
        for &k in keep {
            if k >= n {
                return invalid(format!("index {k} out of range for dimension {n}"));
            }
            if mark[k] {
                return invalid(format!("index {k} repeated in kept set"));
            }
            mark[k] = true;
        }
        let eliminate = (0..n).filter(|&i| !mark[i]).collect();
        Ok(Partition { keep: keep.to_vec(), eliminate })
    }

    pub fn dim(&self) -> usize {
        self.keep.len() + self.eliminate.len()
    }
}

#[derive(Debug, Clone)]
pub struct SchurComplement {
    pub matrix: DMatrix<f64>,
    pub lambda: f64,
    pub partition: Partition,
    /// `min |eig(D - lambda)|`.
    pub elimination_margin: f64,
    /// `||B||`.
    pub coupling_norm: f64,
}

/// One solution of `l in spec F(l)`.
#[derive(Debug, Clone)]
pub struct FixedPoint {
    pub lambda: f64,
    /// Index of the eigenvalue branch of `F` that crosses the diagonal.
    pub branch: usize,
    /// Unit eigenvector of `F(lambda)` on the kept indices.
    pub vector: DVector<f64>,
    /// Solutions closer than `10 * TOL_FP` share a cluster.
    pub cluster: usize,
}

/// Blocks of `K` for a fixed partition, with `D` pre-diagonalised so that
/// `F(l) = A - W diag(1/(d - l)) W^T` with `W = B Q`.
#[derive(Debug, Clone)]
pub struct Eliminator {
    partition: Partition,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    d: DMatrix<f64>,
    poles: Vec<f64>,
    w: DMatrix<f64>,
    floor: f64,
    coupling_norm: f64,
}

impl Eliminator {
    pub fn new(k: &DMatrix<f64>, partition: Partition) -> Result<Self> {
        if k.nrows() != k.ncols() || partition.dim() != k.nrows() {
            return invalid("partition does not match matrix dimension");
        }
        let scale = k.amax().max(1.0);
        if symmetry_defect(k) > 1e-10 * scale {
            return invalid("matrix is not symmetric");
        }
        let keep = &partition.keep;
        let elim = &partition.eliminate;
        let a = DMatrix::from_fn(keep.len(), keep.len(), |i, j| k[(keep[i], keep[j])]);
        let b = DMatrix::from_fn(keep.len(), elim.len(), |i, j| k[(keep[i], elim[j])]);
        let d = DMatrix::from_fn(elim.len(), elim.len(), |i, j| k[(elim[i], elim[j])]);
        let spec = eigh(d.clone());
        let w = &b * &spec.vectors;
        let floor = MARGIN_FLOOR_REL * norm_inf(k).max(f64::MIN_POSITIVE);
        let coupling_norm = spectral_norm(&b);
        Ok(Eliminator { partition, a, b, d, poles: spec.values, w, floor, coupling_norm })
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn kept_dim(&self) -> usize {
        self.partition.keep.len()
    }

    /// Eigenvalues of the eliminated block, ascending.
    pub fn poles(&self) -> &[f64] {
        &self.poles
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn coupling_norm(&self) -> f64 {
        self.coupling_norm
    }

    pub fn margin(&self, lambda: f64) -> f64 {
        self.poles.iter().map(|p| (p - lambda).abs()).fold(f64::INFINITY, f64::min)
    }

    fn check(&self, lambda: f64) -> Result<f64> {
        let margin = self.margin(lambda);
        if margin < self.floor {
            return Err(Error::NearSingularElimination { margin, floor: self.floor });
        }
        Ok(margin)
    }

    /// `2 (||B|| / margin(e))^2`, the Lipschitz constant of `F` near `e`.
    pub fn lipschitz_constant(&self, e: f64) -> f64 {
        let r = self.coupling_norm / self.margin(e);
        2.0 * r * r
    }

    /// `F(l)` through the pre-diagonalised eliminated block.
    pub fn spectral_form(&self, lambda: f64) -> DMatrix<f64> {
        let mut f = self.a.clone();
        let m = f.nrows();
        for (j, &p) in self.poles.iter().enumerate() {
            let inv = 1.0 / (p - lambda);
            let col = self.w.column(j);
            for r in 0..m {
                let wr = col[r] * inv;
                if wr == 0.0 {
                    continue;
                }
                for c in 0..m {
                    f[(r, c)] -= wr * col[c];
                }
            }
        }
        f
    }

    /// `-dF/dl = W diag(1/(d - l)^2) W^T`.
    fn derivative_form(&self, lambda: f64) -> DMatrix<f64> {
        let m = self.a.nrows();
        let mut f = DMatrix::zeros(m, m);
        for (j, &p) in self.poles.iter().enumerate() {
            let inv = 1.0 / (p - lambda);
            let col = self.w.column(j);
            for r in 0..m {
                for c in 0..m {
                    f[(r, c)] += col[r] * inv * inv * col[c];
                }
            }
        }
        f
    }

    fn shifted_d(&self, lambda: f64) -> DMatrix<f64> {
        let mut s = self.d.clone();
        for i in 0..s.nrows() {
            s[(i, i)] -= lambda;
        }
        s
    }

    /// `(D - l)^-1 X` by LU; keeps relative accuracy in small entries.
    pub fn solve_shifted(&self, lambda: f64, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check(lambda)?;
        let margin = self.margin(lambda);
        self.shifted_d(lambda)
            .lu()
            .solve(rhs)
            .ok_or(Error::NearSingularElimination { margin, floor: self.floor })
    }

    /// `F(l)` evaluated by LU elimination.
    pub fn complement(&self, lambda: f64) -> Result<SchurComplement> {
        let margin = self.check(lambda)?;
        let mut matrix = self.a.clone();
        if !self.partition.eliminate.is_empty() {
            let x = self.solve_shifted(lambda, &self.b.transpose())?;
            matrix -= &self.b * x;
        }
        symmetrize(&mut matrix);
        Ok(SchurComplement {
            matrix,
            lambda,
            partition: self.partition.clone(),
            elimination_margin: margin,
            coupling_norm: self.coupling_norm,
        })
    }

    /// `-(D - l)^-1 C`, the map from kept to eliminated amplitudes.
    pub fn kernel(&self, lambda: f64) -> Result<DMatrix<f64>> {
        if self.partition.eliminate.is_empty() {
            return Ok(DMatrix::zeros(0, self.kept_dim()));
        }
        Ok(-self.solve_shifted(lambda, &self.b.transpose())?)
    }

    /// `(phi, -(D - l)^-1 C phi)` scattered back to parent index order.
    pub fn lift(&self, lambda: f64, phi: &DVector<f64>) -> Result<DVector<f64>> {
        if phi.len() != self.kept_dim() {
            return invalid("vector length does not match kept block");
        }
        let mut out = DVector::zeros(self.partition.dim());
        for (i, &k) in self.partition.keep.iter().enumerate() {
            out[k] = phi[i];
        }
        if !self.partition.eliminate.is_empty() {
            let rhs = DMatrix::from_column_slice(phi.len(), 1, phi.as_slice());
            let tail = self.solve_shifted(lambda, &(self.b.transpose() * rhs))?;
            for (i, &e) in self.partition.eliminate.iter().enumerate() {
                out[e] = -tail[(i, 0)];
            }
        }
        Ok(out)
    }

    /// Subintervals of the window with every pole (plus the floor) cut out.
    fn pole_free_pieces(&self, window: Window) -> Vec<(f64, f64)> {
        let (lo, hi) = (window.lo(), window.hi());
        let mut pieces = vec![];
        let mut start = lo;
        for &p in &self.poles {
            if p + self.floor < lo || p - self.floor > hi {
                continue;
            }
            if p - self.floor >= start {
                pieces.push((start, p - self.floor));
            }
            start = start.max(p + self.floor);
        }
        if start <= hi {
            pieces.push((start, hi));
        }
        pieces
    }

    /// Every solution of `l in spec F(l)` inside the closed window, with multiplicity.
    ///
    /// Each eigenvalue branch `mu_i(F(l)) - l` is strictly decreasing between poles, so
    /// a sign change on a pole-free piece brackets exactly one root of that branch.
    pub fn fixed_points(&self, window: Window) -> Result<Vec<FixedPoint>> {
        let m = self.kept_dim();
        let mut roots: Vec<(f64, usize)> = vec![];
        if m == 0 {
            return Ok(vec![]);
        }
        for (a, b) in self.pole_free_pieces(window) {
            let ga: Vec<f64> = eigenvalues(&self.spectral_form(a)).iter().map(|v| v - a).collect();
            let gb: Vec<f64> = eigenvalues(&self.spectral_form(b)).iter().map(|v| v - b).collect();
            for i in 0..m {
                if ga[i] < 0.0 || gb[i] > 0.0 {
                    continue;
                }
                let root = if ga[i] == 0.0 {
                    a
                } else if gb[i] == 0.0 {
                    b
                } else {
                    self.bracketed_root(i, a, b, ga[i], gb[i])?
                };
                roots.push((root, i));
            }
        }
        roots.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));

        let mut out: Vec<FixedPoint> = Vec::with_capacity(roots.len());
        let mut start = 0;
        let mut cluster = 0;
        while start < roots.len() {
            let mut end = start + 1;
            while end < roots.len() && roots[end].0 - roots[end - 1].0 <= 10.0 * TOL_FP {
                end += 1;
            }
            let members = &roots[start..end];
            let center = members.iter().map(|r| r.0).sum::<f64>() / members.len() as f64;
            let spec = eigh(self.spectral_form(center));
            for &(lambda, branch) in members {
                out.push(FixedPoint {
                    lambda,
                    branch,
                    vector: spec.vectors.column(branch).into_owned(),
                    cluster,
                });
            }
            cluster += 1;
            start = end;
        }
        Ok(out)
    }

    fn bracketed_root(&self, i: usize, mut lo: f64, mut hi: f64, glo: f64, ghi: f64) -> Result<f64> {
        let mut x = lo + glo * (hi - lo) / (glo - ghi);
        if !(x > lo && x < hi) {
            x = 0.5 * (lo + hi);
        }
        for _ in 0..MAX_ITER {
            let spec = eigh(self.spectral_form(x));
            let g = spec.values[i] - x;
            if g == 0.0 {
                return Ok(x);
            }
            if g > 0.0 {
                lo = x;
            } else {
                hi = x;
            }
            let v = spec.vectors.column(i);
            let slope = -(v.transpose() * self.derivative_form(x) * v)[(0, 0)] - 1.0;
            let mut next = x - g / slope;
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            let step = (next - x).abs();
            x = next;
            if step <= TOL_FP * 1e-3 || hi - lo <= f64::EPSILON * x.abs().max(1.0) {
                return Ok(x);
            }
        }
        Err(Error::NoConvergence(MAX_ITER))
    }
}

/// `F(l) = A - B (D - l)^-1 C` for the given partition of `k`.
pub fn schur_complement(k: &DMatrix<f64>, partition: &Partition, lambda: f64) -> Result<SchurComplement> {
    Eliminator::new(k, partition.clone())?.complement(lambda)
}

pub fn fixed_point_eigenvalues(
    k: &DMatrix<f64>,
    partition: &Partition,
    window: Window,
) -> Result<Vec<FixedPoint>> {
    Eliminator::new(k, partition.clone())?.fixed_points(window)
}

pub fn lift_eigenvector(
    k: &DMatrix<f64>,
    partition: &Partition,
    lambda: f64,
    phi_keep: &DVector<f64>,
) -> Result<DVector<f64>> {
    Eliminator::new(k, partition.clone())?.lift(lambda, phi_keep)
}

/// `||(K - l) psi|| / ||psi||`.
pub fn relative_residual(k: &DMatrix<f64>, lambda: f64, psi: &DVector<f64>) -> f64 {
    let r = k * psi - psi * lambda;
    r.norm() / psi.norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn m(rows: &[&[f64]]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])
    }

    #[test]
    fn zero_coupling_returns_a() {
        let k = m(&[&[0.3, 0.0], &[0.0, 0.9]]);
        let p = Partition::new(2, &[0]).unwrap();
        let f = schur_complement(&k, &p, 0.1).unwrap();
        assert_eq!(f.matrix[(0, 0)], 0.3);
    }

    #[test]
    fn two_by_two_complement() {
        let k = m(&[&[0.0, 1.0], &[1.0, 2.0]]);
        let p = Partition::new(2, &[0]).unwrap();
        let f0 = schur_complement(&k, &p, 0.0).unwrap();
        assert_abs_diff_eq!(f0.matrix[(0, 0)], -0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(f0.elimination_margin, 2.0, epsilon = 1e-15);
        let f1 = schur_complement(&k, &p, 0.1).unwrap();
        let diff = (f1.matrix[(0, 0)] - f0.matrix[(0, 0)]).abs();
        // frozen from -1/1.9 + 1/2
        assert_abs_diff_eq!(diff, 0.026_315_789_473_684_2, epsilon = 1e-12);
        assert!(diff <= 2.0 * (1.0f64 / 2.0).powi(2) * 0.1);
    }

    #[test]
    fn singular_elimination_is_reported() {
        let k = m(&[&[0.0, 1.0], &[1.0, 2.0]]);
        let p = Partition::new(2, &[0]).unwrap();
        assert!(matches!(
            schur_complement(&k, &p, 2.0),
            Err(Error::NearSingularElimination { .. })
        ));
    }

    #[test]
    fn spectra_of_small_matrices() {
        let s = dense_spectrum(&DMatrix::identity(3, 3)).unwrap();
        assert_eq!(s.values, vec![1.0, 1.0, 1.0]);
        let s = dense_spectrum(&m(&[&[0.0, 1.0], &[1.0, 0.0]])).unwrap();
        assert_abs_diff_eq!(s.values[0], -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.values[1], 1.0, epsilon = 1e-15);
        let path = m(&[&[0.0, 1.0, 0.0], &[1.0, 0.0, 1.0], &[0.0, 1.0, 0.0]]);
        let s = dense_spectrum(&path).unwrap();
        let r2 = 2f64.sqrt();
        for (a, b) in s.values.iter().zip([-r2, 0.0, r2]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-14);
        }
        assert!(dense_spectrum(&m(&[&[0.0, 1.0], &[0.0, 0.0]])).is_err());
    }

    #[test]
    fn distance_and_counts() {
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![0.4, 0.6]));
        assert_abs_diff_eq!(spectral_distance(&d, 0.5), 0.1, epsilon = 1e-15);
        assert_eq!(spectral_distance(&d, 0.6), 0.0);
        let k = m(&[&[0.0, 1.0], &[1.0, 2.0]]);
        assert_abs_diff_eq!(spectral_distance(&k, 0.0), 2f64.sqrt() - 1.0, epsilon = 1e-14);
        let d3 = DMatrix::from_diagonal(&DVector::from_vec(vec![0.49, 0.502, 0.60]));
        assert_eq!(count_in_window(&d3, Window::new(0.5, 0.011)), 2);
        assert_eq!(count_in_window(&d3, Window::new(0.55, 0.0)), 0);
        assert_eq!(count_in_window(&d3, Window::new(0.5, 10.0)), 3);
    }

    #[test]
    fn fixed_point_of_two_by_two() {
        let k = m(&[&[0.0, 1.0], &[1.0, 2.0]]);
        let p = Partition::new(2, &[0]).unwrap();
        let sols = fixed_point_eigenvalues(&k, &p, Window::new(0.0, 0.5)).unwrap();
        assert_eq!(sols.len(), 1);
        let lam = 1.0 - 2f64.sqrt();
        assert_abs_diff_eq!(sols[0].lambda, lam, epsilon = 1e-14);
        let psi = lift_eigenvector(&k, &p, lam, &DVector::from_vec(vec![1.0])).unwrap();
        assert_abs_diff_eq!(psi[1], 1.0 - 2f64.sqrt(), epsilon = 1e-14);
        assert!(relative_residual(&k, lam, &psi) < 1e-14);
        assert!(fixed_point_eigenvalues(&k, &p, Window::new(1.0, 0.2)).unwrap().is_empty());
    }

    #[test]
    fn zero_coupling_fixed_points_are_eigenvalues_of_a() {
        let k = m(&[&[0.1, 0.02, 0.0], &[0.02, 0.12, 0.0], &[0.0, 0.0, 0.9]]);
        let p = Partition::new(3, &[0, 1]).unwrap();
        let sols = fixed_point_eigenvalues(&k, &p, Window::new(0.1, 0.2)).unwrap();
        let expect = eigenvalues(&m(&[&[0.1, 0.02], &[0.02, 0.12]]));
        assert_eq!(sols.len(), 2);
        for (s, e) in sols.iter().zip(expect) {
            assert_abs_diff_eq!(s.lambda, e, epsilon = 1e-15);
        }
    }

    #[test]
    fn degenerate_solutions_keep_multiplicity() {
        let k = m(&[
            &[0.5, 0.0, 0.01, 0.0],
            &[0.0, 0.5, 0.0, 0.01],
            &[0.01, 0.0, 1.0, 0.0],
            &[0.0, 0.01, 0.0, 1.0],
        ]);
        let p = Partition::new(4, &[0, 1]).unwrap();
        let sols = fixed_point_eigenvalues(&k, &p, Window::new(0.5, 0.1)).unwrap();
        assert_eq!(sols.len(), 2);
        assert_eq!(sols[0].cluster, sols[1].cluster);
        let dot = sols[0].vector.dot(&sols[1].vector);
        assert!(dot.abs() < 1e-12);
    }

    #[test]
    fn poles_inside_window_are_skipped() {
        let k = m(&[&[0.5, 0.05], &[0.05, 0.52]]);
        let p = Partition::new(2, &[0]).unwrap();
        let sols = fixed_point_eigenvalues(&k, &p, Window::new(0.5, 0.1)).unwrap();
        let oracle = eigenvalues(&k);
        assert_eq!(sols.len(), 2);
        for (s, o) in sols.iter().zip(oracle) {
            assert_abs_diff_eq!(s.lambda, o, epsilon = 1e-13);
        }
    }

    fn random_sym(n: usize, seed: u64) -> DMatrix<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut k = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        k = &k + k.transpose();
        k
    }

    #[test]
    fn lift_residual_on_random_matrix() {
        let k = random_sym(8, 5);
        let spec = dense_spectrum(&k).unwrap();
        let p = Partition::new(8, &[0, 3]).unwrap();
        let elim = Eliminator::new(&k, p.clone()).unwrap();
        for &ev in &spec.values {
            if elim.margin(ev) < 1e-3 {
                continue;
            }
            let sols = elim.fixed_points(Window::new(ev, 1e-9)).unwrap();
            for s in sols {
                let psi = elim.lift(s.lambda, &s.vector).unwrap();
                assert!(relative_residual(&k, s.lambda, &psi) <= 1e-10);
            }
        }
    }

    proptest! {
        #[test]
        fn staged_elimination_matches_one_shot(seed in any::<u64>(), lam in -0.2f64..0.2) {
            let mut k = random_sym(7, seed) * 0.1;
            for i in 2..7 { k[(i, i)] += 2.0 + i as f64; }
            let one = schur_complement(&k, &Partition::new(7, &[0, 1]).unwrap(), lam).unwrap();
            let stage1 = schur_complement(&k, &Partition::new(7, &[0, 1, 2, 3]).unwrap(), lam).unwrap();
            let stage2 = schur_complement(&stage1.matrix, &Partition::new(4, &[0, 1]).unwrap(), lam).unwrap();
            prop_assert!((one.matrix - stage2.matrix).amax() < 1e-12);
        }

        #[test]
        fn lipschitz_bound_holds(seed in any::<u64>(), e in -0.1f64..0.1, t in -1.0f64..1.0) {
            let mut k = random_sym(6, seed) * 0.05;
            for i in 2..6 { k[(i, i)] += if i % 2 == 0 { 1.0 } else { -1.0 }; }
            let elim = Eliminator::new(&k, Partition::new(6, &[0, 1]).unwrap()).unwrap();
            let lam = e + t * elim.margin(e) / 2.0;
            let diff = (elim.complement(lam).unwrap().matrix - elim.complement(e).unwrap().matrix).norm();
            prop_assert!(diff <= elim.lipschitz_constant(e) * (lam - e).abs() * (1.0 + 1e-9) + 1e-15);
        }

        #[test]
        fn fixed_points_match_oracle(seed in any::<u64>()) {
            let mut k = random_sym(9, seed) * 0.03;
            for i in 3..9 { k[(i, i)] += 0.6 + 0.1 * i as f64; }
            let w = Window::new(0.0, 0.15);
            let oracle: Vec<f64> = eigenvalues(&k).into_iter().filter(|&v| w.contains(v)).collect();
            prop_assume!(oracle.iter().all(|v| (v.abs() - 0.15).abs() > 1e-9));
            let sols = fixed_point_eigenvalues(&k, &Partition::new(9, &[0, 1, 2]).unwrap(), w).unwrap();
            prop_assert_eq!(sols.len(), oracle.len());
            for (s, o) in sols.iter().zip(&oracle) {
                prop_assert!((s.lambda - o).abs() < 1e-12);
            }
        }
    }
}
