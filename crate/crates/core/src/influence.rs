//! Boundary-site influence, the rank-one movement decomposition, and the sweep over the
//! potential at the most influential site. Everything is evaluated in 256-bit arithmetic
//! because the windows at scales two and three sit far below double resolution.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::lattice::{trial_seed, Geometry, Hamiltonian};
use crate::multiscale::{Block, Cascade, Schedule, ScheduleKind, ScheduleParams};
use crate::precise::{norm, snap, sym_eigen, sym_norm, Matrix, Real};
use crate::schur::Window;

/// `H` with the diagonal held in high precision.
#[derive(Debug, Clone)]
pub struct PreciseHamiltonian {
    geometry: Geometry,
    diag: Vec<Real>,
    hop: Real,
    n_levels: u32,
    offset: Real,
}

impl PreciseHamiltonian {
    pub fn new(h: &Hamiltonian) -> Self {
        let n_levels = h.disorder().n_levels;
        let offset = Real::from_int(2 * h.geometry().dim() as i64) * Real::from_f64(h.gamma());
        let diag = h
            .disorder()
            .levels
            .iter()
            .map(|&l| &offset + Real::ratio(i64::from(l), i64::from(n_levels) - 1))
            .collect();
        PreciseHamiltonian { geometry: h.geometry().clone(), diag, hop: Real::from_f64(h.gamma()), n_levels, offset }
    }

    pub fn with_level(&self, site: usize, level: u32) -> Self {
        let mut out = self.clone();
        out.diag[site] = &self.offset + Real::ratio(i64::from(level), i64::from(self.n_levels) - 1);
        out
    }

    pub fn gamma(&self) -> &Real {
        &self.hop
    }

    pub fn onsite(&self, site: usize) -> &Real {
        &self.diag[site]
    }

    pub fn entry(&self, a: usize, b: usize) -> Real {
        if a == b {
            self.diag[a].clone()
        } else if self.geometry.dist(a, b) == 1 {
            -self.hop.clone()
        } else {
            Real::zero()
        }
    }

    pub fn block(&self, rows: &[usize], cols: &[usize]) -> Matrix {
        Matrix::from_fn(rows.len(), cols.len(), |i, j| self.entry(rows[i], cols[j]))
    }
}

/// `F = H_KK - H_KE (H_E - l)^-1 H_EK` together with `G~ = -(H_E - l)^-1 H_EK`.
#[derive(Debug, Clone)]
pub struct PreciseSchur {
    pub matrix: Matrix,
    pub kernel: Matrix,
}

pub fn precise_schur(h: &PreciseHamiltonian, keep: &[usize], elim: &[usize], lambda: &Real) -> Result<PreciseSchur> {
    let a = h.block(keep, keep);
    if elim.is_empty() {
        return Ok(PreciseSchur { matrix: a, kernel: Matrix::zeros(0, keep.len()) });
    }
    let c = h.block(elim, keep);
    let d = h.block(elim, elim).shift_diagonal(lambda);
    let x = d.solve(&c).ok_or(Error::NearSingularElimination { margin: 0.0, floor: 0.0 })?;
    let matrix = a.sub(&c.transpose().mul(&x)).symmetrized();
    let kernel = x.scale(&Real::from_int(-1));
    Ok(PreciseSchur { matrix, kernel })
}

/// `m_rr - m_rt (m_tt - mu)^-1 m_tr`.
fn basis_schur(m: &Matrix, r: &[usize], t: &[usize], mu: &Real) -> Result<Matrix> {
    let q = m.select(r, r);
    if t.is_empty() {
        return Ok(q);
    }
    let rt = m.select(r, t);
    let tt = m.select(t, t).shift_diagonal(mu);
    let x = tt.solve(&rt.transpose()).ok_or_else(|| Error::InvalidExperiment("singular t block".into()))?;
    Ok(q.sub(&rt.mul(&x)).symmetrized())
}

fn count_in(values: &[Real], center: &Real, half: &Real) -> usize {
    values.iter().filter(|v| &(*v - center).abs() <= half).count()
}

fn spread(m: &Matrix) -> Real {
    if m.rows() == 0 {
        return Real::zero();
    }
    let (vals, _) = sym_eigen(m);
    &vals[vals.len() - 1] - &vals[0]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Invalid {
    NotIsolated,
    CollarIsLattice,
    CollarTouchesBoundary,
    NoFixedPoint,
    NotResonant,
    /// The block containing the start site changed or vanished at the next scale.
    BlockChanged,
    NextCollarTouchesBoundary,
    Singular,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceProfile {
    pub block: Vec<usize>,
    pub collar: Vec<usize>,
    pub lambda: f64,
    /// `psi = G phi` on the collar, in collar order.
    pub psi: Vec<f64>,
    /// `(y, I_psi(y))` for every exterior neighbour of the collar.
    pub influences: Vec<(usize, f64)>,
    pub max_influence_log10: f64,
    /// `(y, a_1(y), ..., a_n(y))` restricted to resonant directions.
    pub a_vectors: Vec<(usize, Vec<f64>)>,
    pub ybar: usize,
    pub a_ybar_log10: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MovementDecomposition {
    pub n_hat: usize,
    /// `gamma^2 / (v_ybar + 2 d gamma - lambda)`.
    pub k1: f64,
    pub rank_one_log10: f64,
    pub constant_log10: f64,
    pub constant_bound_log10: f64,
    pub remainder_log10: f64,
    pub remainder_bound_log10: f64,
    /// Norms of `C1, C2, R1, R2, R3`.
    pub parts_log10: [f64; 5],
    pub direct_log10: f64,
    /// `||rank_one + C + R - direct|| / ||direct||`.
    pub reconstruction_error: f64,
    /// Relative mismatch between the rank-one eigenvalue and `k1 |a(ybar)|^2`.
    pub rank_one_check: f64,
    /// `spread(f) >= |spread(f_lambda - C - R) - spread(rank_one)|`.
    pub weyl_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTally {
    pub ybar: usize,
    pub n_hat_prev: usize,
    /// `(n^_k, n^_f)` for each level of `v_ybar`; `None` where the elimination was singular.
    pub outcomes: Vec<Option<(usize, usize)>>,
    pub failures: usize,
    pub unchanged: usize,
    pub monotone: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// `(pairs, violations)` of `|G~_xy| <= gamma^(0.85 |x - y|)`.
    pub kernel_decay: (usize, usize),
    pub kernel_worst_margin_log10: f64,
    /// `(samples, violations)` of `||F~_l - F~_E|| <= gamma |l - E|`.
    pub lipschitz: (usize, usize),
    pub lipschitz_worst_ratio: f64,
    /// `||F^(1) - (+) F~|| ` on the whole resonant set, against `eps_2`.
    pub truncation_log10: f64,
    pub truncation_ok: bool,
    /// `max_y I_psi(y) >= gamma^(3.1 L_1)`.
    pub bound_log10: f64,
    pub bound_ok: bool,
}

/// State of an isolated, resonant block after the first scale.
#[derive(Debug, Clone)]
pub struct LabState<'a> {
    h: &'a Hamiltonian,
    schedule: &'a Schedule,
    hp: PreciseHamiltonian,
    x: usize,
    cascade: Cascade<'a>,
    block: Block,
    elim: Vec<usize>,
    pub lambda: Real,
    pub energies: [Real; 3],
    eps: [Real; 4],
    values: Vec<Real>,
    phi: Matrix,
    branch: usize,
    kernel: Matrix,
    resonant: Vec<usize>,
    rest: Vec<usize>,
    pub n_hat_prev: usize,
    next_collar: Option<Block>,
}

impl<'a> LabState<'a> {
    /// Scale-one block at `x`, the fixed point nearest `E_1`, and the snapped energies.
    pub fn prepare(
        h: &'a Hamiltonian,
        schedule: &'a Schedule,
        x: usize,
    ) -> Result<std::result::Result<Self, Invalid>> {
        let e1 = h.onsite(x);
        let cascade = Cascade::start(h, schedule, e1);
        let block = cascade.block_containing(x).expect("start site is resonant").clone();
        if !block.isolated {
            return Ok(Err(Invalid::NotIsolated));
        }
        if block.terminal {
            return Ok(Err(Invalid::CollarIsLattice));
        }
        if block.touches_boundary {
            return Ok(Err(Invalid::CollarTouchesBoundary));
        }
        let (Some(eps2), Some(eps3)) = (schedule.window(2), schedule.window(3)) else {
            return invalid("schedule needs three scales");
        };
        let eps1 = schedule.window(1).expect("window");
        let fps = match cascade.eliminator(&block).and_then(|e| e.fixed_points(Window::new(e1, eps1 / 3.0))) {
            Ok(f) => f,
            Err(Error::NearSingularElimination { .. }) => return Ok(Err(Invalid::Singular)),
            Err(e) => return Err(e),
        };
        // nearest to E_1, the smaller one on ties
        let Some(start) = fps.iter().min_by(|a, b| {
            (a.lambda - e1).abs().total_cmp(&(b.lambda - e1).abs()).then(a.lambda.total_cmp(&b.lambda))
        }) else {
            return Ok(Err(Invalid::NoFixedPoint));
        };

        let hp = PreciseHamiltonian::new(h);
        let elim: Vec<usize> = block.collar.iter().copied().filter(|s| !block.contains(*s)).collect();
        let lambda = match refine_fixed_point(&hp, &block.sites, &elim, start.lambda, start.branch) {
            Some(l) => l,
            None => return Ok(Err(Invalid::Singular)),
        };
        let eps = [Real::from_f64(eps1 * 3.0), Real::from_f64(eps1), Real::from_f64(eps2), Real::from_f64(eps3)];
        let half = Real::ratio(1, 2);
        let e2 = snap(&lambda, &(&eps[2] * &half)).1;
        let e3 = snap(&lambda, &(&eps[3] * &half)).1;

        let at_e2 = precise_schur(&hp, &block.sites, &elim, &e2)?;
        let (vals_e2, _) = sym_eigen(&at_e2.matrix);
        let n_hat_prev = count_in(&vals_e2, &e2, &eps[2]);
        if n_hat_prev == 0 {
            return Ok(Err(Invalid::NotResonant));
        }

        let at_l = precise_schur(&hp, &block.sites, &elim, &lambda)?;
        let (values, phi) = sym_eigen(&at_l.matrix);
        let res_half = &eps[2] * &half;
        let resonant: Vec<usize> = (0..values.len()).filter(|&i| (&values[i] - &e3).abs() <= res_half).collect();
        let rest: Vec<usize> = (0..values.len()).filter(|i| !resonant.contains(i)).collect();
        let branch = (0..values.len())
            .min_by(|&i, &j| {
                let (di, dj) = ((&values[i] - &lambda).abs(), (&values[j] - &lambda).abs());
                di.partial_cmp(&dj).unwrap_or(std::cmp::Ordering::Equal)
            })
            .expect("nonempty block");
        Ok(Ok(LabState {
            h,
            schedule,
            hp,
            x,
            cascade,
            block,
            elim,
            lambda,
            energies: [Real::from_f64(e1), e2, e3],
            eps,
            values,
            phi,
            branch,
            kernel: at_l.kernel,
            resonant,
            rest,
            n_hat_prev,
            next_collar: None,
        }))
    }

    pub fn block(&self) -> &Block {
        &self.block
    }

    pub fn n_hat(&self) -> usize {
        self.resonant.len()
    }

    /// `G~ phi_beta` on the collar sites outside the block.
    fn kernel_columns(&self) -> Matrix {
        self.kernel.mul(&self.phi)
    }

    fn exterior(&self) -> Vec<usize> {
        self.h.geometry().outer_boundary(&self.block.collar)
    }

    /// `a_beta(y)` for every exterior neighbour `y` (rows) and every direction (columns).
    fn a_matrix(&self, exterior: &[usize]) -> Matrix {
        let g = self.h.geometry();
        let gphi = self.kernel_columns();
        Matrix::from_fn(exterior.len(), self.phi.cols(), |i, beta| {
            let mut acc = Real::zero();
            for (row, &s) in self.elim.iter().enumerate() {
                if g.dist(s, exterior[i]) == 1 {
                    acc = acc + gphi.get(row, beta);
                }
            }
            acc
        })
    }

    fn ybar_index(&self, a: &Matrix) -> usize {
        let mut best = 0;
        let mut best_val = Real::from_int(-1);
        for i in 0..a.rows() {
            let v = self.resonant.iter().fold(Real::zero(), |acc, &b| acc + a.get(i, b) * a.get(i, b));
            if v > best_val {
                best_val = v;
                best = i;
            }
        }
        best
    }

    /// `psi = (phi, G~ phi)` on the collar for the direction at `lambda`.
    fn psi(&self) -> Vec<Real> {
        let phi = self.phi.column(self.branch);
        let tail = self.kernel.mul(&Matrix::from_columns(&[phi.clone()])).column(0);
        let mut out = vec![Real::zero(); self.block.collar.len()];
        for (i, &s) in self.block.collar.iter().enumerate() {
            if let Ok(k) = self.block.sites.binary_search(&s) {
                out[i] = phi[k].clone();
            } else {
                let row = self.elim.binary_search(&s).expect("collar site");
                out[i] = tail[row].clone();
            }
        }
        out
    }

    pub fn influence_profile(&self) -> InfluenceProfile {
        let g = self.h.geometry();
        let exterior = self.exterior();
        let psi = self.psi();
        let influence: Vec<Real> = exterior
            .iter()
            .map(|&y| {
                self.block
                    .collar
                    .iter()
                    .zip(&psi)
                    .filter(|(&s, _)| g.dist(s, y) == 1)
                    .fold(Real::zero(), |acc, (_, v)| acc + v)
                    .abs()
            })
            .collect();
        let max_influence = influence.iter().fold(Real::zero(), |acc, v| acc.max(v.clone()));
        let a = self.a_matrix(&exterior);
        let yb = self.ybar_index(&a);
        let a_ybar: Vec<Real> = self.resonant.iter().map(|&b| a.get(yb, b).clone()).collect();
        InfluenceProfile {
            block: self.block.sites.clone(),
            collar: self.block.collar.clone(),
            lambda: self.lambda.to_f64(),
            psi: psi.iter().map(Real::to_f64).collect(),
            influences: exterior.iter().zip(&influence).map(|(&y, v)| (y, v.to_f64())).collect(),
            max_influence_log10: max_influence.log10_abs(),
            a_vectors: exterior
                .iter()
                .enumerate()
                .map(|(i, &y)| (y, self.resonant.iter().map(|&b| a.get(i, b).to_f64()).collect()))
                .collect(),
            ybar: exterior[yb],
            a_ybar_log10: norm(&a_ybar).log10_abs(),
        }
    }

    /// Kernel decay, Lipschitz samples, truncation against the whole-lattice complement,
    /// and the influence lower bound.
    pub fn diagnostics(&self) -> Result<Diagnostics> {
        let g = self.h.geometry();
        let log_gamma = self.h.gamma().log10();
        let mut pairs = 0;
        let mut bad = 0;
        let mut worst = f64::NEG_INFINITY;
        for (row, &s) in self.elim.iter().enumerate() {
            for (col, &b) in self.block.sites.iter().enumerate() {
                let lhs = self.kernel.get(row, col).log10_abs();
                let rhs = 0.85 * g.dist(s, b) as f64 * log_gamma;
                pairs += 1;
                if lhs > rhs {
                    bad += 1;
                }
                worst = worst.max(lhs - rhs);
            }
        }

        let e1 = &self.energies[0];
        let base = precise_schur(&self.hp, &self.block.sites, &self.elim, e1)?.matrix;
        let gamma = self.hp.gamma().clone();
        let mut lip_bad = 0;
        let mut lip_worst: f64 = 0.0;
        let samples = 8;
        for j in 0..samples {
            let frac = Real::ratio(2 * j as i64 - (samples as i64 - 1), samples as i64 - 1);
            let l = e1 + &(&self.eps[1] * Real::ratio(1, 2)) * &frac;
            let f = precise_schur(&self.hp, &self.block.sites, &self.elim, &l)?.matrix;
            let diff = sym_norm(&f.sub(&base));
            let bound = &gamma * (&l - e1).abs();
            let ratio = (&diff / &bound).to_f64();
            lip_worst = lip_worst.max(ratio);
            if diff > bound {
                lip_bad += 1;
            }
        }

        let truncation = self.truncation_norm()?;
        let bound_log10 = 3.1 * self.schedule.length(1) * log_gamma;
        let max_influence = self.influence_profile().max_influence_log10;
        Ok(Diagnostics {
            kernel_decay: (pairs, bad),
            kernel_worst_margin_log10: worst,
            lipschitz: (samples, lip_bad),
            lipschitz_worst_ratio: lip_worst,
            truncation_log10: truncation.log10_abs(),
            truncation_ok: truncation < self.eps[2],
            bound_log10,
            bound_ok: max_influence >= bound_log10,
        })
    }

    /// `|| F^(1)_l(R) - (+)_B F~_l(B) ||` with `F^(1)` the complement of the whole lattice.
    fn truncation_norm(&self) -> Result<Real> {
        let level = self.cascade.level(1);
        let r = &level.resonant;
        let rest: Vec<usize> = (0..self.h.len()).filter(|s| r.binary_search(s).is_err()).collect();
        let full = precise_schur(&self.hp, r, &rest, &self.lambda)?.matrix;
        let mut diff = full;
        for b in &level.blocks {
            let elim: Vec<usize> = b.collar.iter().copied().filter(|s| !b.contains(*s)).collect();
            let local = precise_schur(&self.hp, &b.sites, &elim, &self.lambda)?.matrix;
            let idx: Vec<usize> = b.sites.iter().map(|s| r.binary_search(s).expect("block in R")).collect();
            for (i, &p) in idx.iter().enumerate() {
                for (j, &q) in idx.iter().enumerate() {
                    diff.set(p, q, diff.get(p, q) - local.get(i, j));
                }
            }
        }
        Ok(sym_norm(&diff))
    }

    /// Moves the cascade to scale two at `E_2`; the block must survive unchanged.
    pub fn advance(&mut self) -> Result<std::result::Result<(), Invalid>> {
        if let Err(e) = self.cascade.advance(self.energies[1].to_f64()) {
            return match e {
                Error::InvalidArgument(_) => Ok(Err(Invalid::BlockChanged)),
                other => Err(other),
            };
        }
        let Some(next) = self.cascade.block_containing(self.x).cloned() else {
            return Ok(Err(Invalid::BlockChanged));
        };
        if next.sites != self.block.sites || !next.isolated {
            return Ok(Err(Invalid::BlockChanged));
        }
        if next.terminal || next.touches_boundary {
            return Ok(Err(Invalid::NextCollarTouchesBoundary));
        }
        self.next_collar = Some(next);
        Ok(Ok(()))
    }

    fn next_elim(&self) -> Vec<usize> {
        let next = self.next_collar.as_ref().expect("advanced");
        next.collar.iter().copied().filter(|s| !self.block.contains(*s)).collect()
    }

    /// `f^(k)_mu` in the fixed eigenbasis, from the scale-two complement.
    fn f_next(&self, hp: &PreciseHamiltonian, mu: &Real) -> Result<(Matrix, Vec<Real>)> {
        let f = precise_schur(hp, &self.block.sites, &self.next_elim(), mu)?.matrix;
        let (vals, _) = sym_eigen(&f);
        let in_basis = self.phi.transpose().mul(&f).mul(&self.phi);
        Ok((basis_schur(&in_basis, &self.resonant, &self.rest, mu)?, vals))
    }

    /// `gamma^2 [(H_X - l)^-1]` on the exterior neighbours, `X` the scale-two collar minus the block.
    fn k_matrix(&self, exterior: &[usize], skip: Option<usize>) -> Result<Matrix> {
        let mut x = self.next_elim();
        if let Some(s) = skip {
            x.retain(|&v| v != s);
        }
        let d = self.hp.block(&x, &x).shift_diagonal(&self.lambda);
        let cols: Vec<usize> = exterior.iter().filter(|&&y| Some(y) != skip).copied().collect();
        let rhs = Matrix::from_fn(x.len(), cols.len(), |i, j| if x[i] == cols[j] { Real::one() } else { Real::zero() });
        let w = d.solve(&rhs).ok_or_else(|| Error::InvalidExperiment("singular exterior".into()))?;
        let g2 = self.hp.gamma() * self.hp.gamma();
        let mut k = Matrix::zeros(exterior.len(), exterior.len());
        for (i, &yi) in exterior.iter().enumerate() {
            let Some(ri) = x.iter().position(|&s| s == yi) else { continue };
            for (j, &yj) in exterior.iter().enumerate() {
                let Some(cj) = cols.iter().position(|&s| s == yj) else { continue };
                k.set(i, j, w.get(ri, cj) * &g2);
            }
        }
        Ok(k)
    }

    pub fn movement_decomposition(&self) -> Result<MovementDecomposition> {
        if self.next_collar.is_none() {
            return invalid("advance the lab state first");
        }
        let exterior = self.exterior();
        let next_elim = self.next_elim();
        if exterior.iter().any(|y| next_elim.binary_search(y).is_err()) {
            return Err(Error::InvalidExperiment("exterior neighbours outside the next collar".into()));
        }
        let a = self.a_matrix(&exterior);
        let yb = self.ybar_index(&a);
        let ybar = exterior[yb];
        let (r, t) = (&self.resonant, &self.rest);
        let all: Vec<usize> = (0..self.phi.cols()).collect();
        let ex_idx: Vec<usize> = (0..exterior.len()).collect();

        let k = self.k_matrix(&exterior, None)?;
        let k0 = self.k_matrix(&exterior, Some(ybar))?;
        let g2 = self.hp.gamma() * self.hp.gamma();
        let k1_val = &g2 / (self.hp.onsite(ybar) - &self.lambda);
        let mut k1 = Matrix::zeros(exterior.len(), exterior.len());
        k1.set(yb, yb, k1_val.clone());
        let k2 = k.sub(&k0).sub(&k1);

        let sandwich = |kk: &Matrix, rows: &[usize], cols: &[usize]| -> Matrix {
            a.select(&ex_idx, rows).transpose().mul(kk).mul(&a.select(&ex_idx, cols))
        };
        let delta = sandwich(&k, &all, &all);
        let rank_one = sandwich(&k1, r, r);
        let c1 = sandwich(&k0, r, r);
        let r1 = sandwich(&k2, r, r);

        let lam = &self.lambda;
        let e3 = &self.energies[2];
        let q = Matrix::from_fn(r.len(), r.len(), |i, j| if i == j { self.values[r[i]].clone() } else { Real::zero() });
        let r2 = if t.is_empty() {
            Matrix::zeros(r.len(), r.len())
        } else {
            let r_t = delta.select(r, t).scale(&Real::from_int(-1));
            let t_t = Matrix::from_fn(t.len(), t.len(), |i, j| {
                let base = if i == j { self.values[t[i]].clone() } else { Real::zero() };
                base - delta.get(t[i], t[j])
            });
            let x = t_t
                .shift_diagonal(lam)
                .solve(&r_t.transpose())
                .ok_or_else(|| Error::InvalidExperiment("singular t block".into()))?;
            r_t.mul(&x).symmetrized()
        };

        let f1_e3 = {
            let f = precise_schur(&self.hp, &self.block.sites, &self.elim, e3)?.matrix;
            basis_schur(&self.phi.transpose().mul(&f).mul(&self.phi), r, t, e3)?
        };
        let c2 = q.sub(&f1_e3);
        let (f2_l, _) = self.f_next(&self.hp, lam)?;
        let (f2_e3, _) = self.f_next(&self.hp, e3)?;
        let r3 = f2_l.sub(&f2_e3).sub(&c2);

        let constant = c1.add(&c2);
        let remainder = r1.add(&r2).add(&r3);
        let direct = q.sub(&f2_e3);
        let recon = rank_one.add(&constant).add(&remainder);
        let err = sym_norm(&recon.sub(&direct));
        let dn = sym_norm(&direct);
        let reconstruction_error = if dn.is_zero() { err.to_f64() } else { (&err / &dn).to_f64() };

        let a_r: Vec<Real> = r.iter().map(|&b| a.get(yb, b).clone()).collect();
        let a2 = a_r.iter().fold(Real::zero(), |acc, v| acc + v * v);
        let expected = (&k1_val * &a2).abs();
        let rank_one_check = if expected.is_zero() {
            sym_norm(&rank_one).to_f64()
        } else {
            ((sym_norm(&rank_one) - &expected).abs() / &expected).to_f64()
        };
        let m2 = q.sub(&constant).sub(&remainder);
        let lower = (spread(&m2) - spread(&rank_one)).abs();
        let slack = Real::from_f64(1e-60) * (sym_norm(&m2) + Real::one());
        let weyl_ok = spread(&f2_e3) + slack >= lower;

        let log_gamma = self.h.gamma().log10();
        Ok(MovementDecomposition {
            n_hat: r.len(),
            k1: k1_val.to_f64(),
            rank_one_log10: sym_norm(&rank_one).log10_abs(),
            constant_log10: sym_norm(&constant).log10_abs(),
            constant_bound_log10: log_gamma + self.eps[2].log10_abs(),
            remainder_log10: sym_norm(&remainder).log10_abs(),
            remainder_bound_log10: 2.5 * log_gamma + a2.log10_abs(),
            parts_log10: [c1, c2, r1, r2, r3].map(|m| sym_norm(&m).log10_abs()),
            direct_log10: dn.log10_abs(),
            reconstruction_error,
            rank_one_check,
            weyl_ok,
        })
    }

    /// `n^_k` and `n^_f` for every value of `v_ybar`, all else fixed.
    pub fn sweep_vbar(&self) -> Result<SweepTally> {
        if self.next_collar.is_none() {
            return invalid("advance the lab state first");
        }
        let exterior = self.exterior();
        let a = self.a_matrix(&exterior);
        let ybar = exterior[self.ybar_index(&a)];
        let e3 = &self.energies[2];
        let eps3 = &self.eps[3];
        let two_eps3 = eps3 * Real::from_int(2);
        let outcomes = (0..self.hp.n_levels)
            .map(|level| {
                let hp = self.hp.with_level(ybar, level);
                let (f, vals) = self.f_next(&hp, e3).ok()?;
                let (fv, _) = sym_eigen(&f);
                Some((count_in(&vals, e3, eps3), count_in(&fv, e3, &two_eps3)))
            })
            .collect::<Vec<_>>();
        let done: Vec<(usize, usize)> = outcomes.iter().flatten().copied().collect();
        Ok(SweepTally {
            ybar,
            n_hat_prev: self.n_hat_prev,
            failures: outcomes.len() - done.len(),
            unchanged: done.iter().filter(|o| o.0 == self.n_hat_prev).count(),
            monotone: done.iter().all(|o| o.0 <= self.n_hat_prev),
            outcomes,
        })
    }
}

/// Newton iteration on one eigenvalue branch of `F(l) - l`, with slope `-||G~ phi||^2 - 1`.
fn refine_fixed_point(hp: &PreciseHamiltonian, keep: &[usize], elim: &[usize], start: f64, branch: usize) -> Option<Real> {
    let mut lambda = Real::from_f64(start);
    let tol = Real::from_f64(2f64.powi(-230));
    for _ in 0..60 {
        let s = precise_schur(hp, keep, elim, &lambda).ok()?;
        let (vals, vecs) = sym_eigen(&s.matrix);
        let phi = Matrix::from_columns(&[vecs.column(branch)]);
        let gphi = s.kernel.mul(&phi).column(0);
        let slope = -(gphi.iter().fold(Real::zero(), |acc, v| acc + v * v) + Real::one());
        let step = (&vals[branch] - &lambda) / slope;
        lambda = &lambda - &step;
        if step.abs() <= &tol * (lambda.abs() + Real::one()) {
            return Some(lambda);
        }
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrictConfig {
    pub sites: usize,
    pub n_levels: u32,
    pub gamma: f64,
    pub l0: u32,
    pub kind: ScheduleKind,
}

impl StrictConfig {
    pub fn schedule(&self) -> Result<Schedule> {
        Schedule::new(ScheduleParams {
            dim: 1,
            n_levels: self.n_levels,
            gamma: self.gamma,
            l0: self.l0,
            alpha: 1.5,
            p: 10.0,
            kind: self.kind,
            lattice_diam: self.sites - 1,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub index: u64,
    pub seed: u64,
    pub start_site: usize,
    pub invalid: Option<Invalid>,
    pub block: Vec<usize>,
    pub lambda: Option<f64>,
    pub n_hat_prev: Option<usize>,
    pub profile: Option<InfluenceProfile>,
    pub diagnostics: Option<Diagnostics>,
    /// Set once the block survives unchanged to scale two.
    pub advanced: bool,
    pub decomposition: Option<MovementDecomposition>,
    pub sweep: Option<SweepTally>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialParts {
    pub diagnostics: bool,
    pub decomposition: bool,
    pub sweep: bool,
}

impl TrialParts {
    pub const ALL: TrialParts = TrialParts { diagnostics: true, decomposition: true, sweep: true };
}

pub fn run_trial(config: &StrictConfig, schedule: &Schedule, base_seed: u64, index: u64, parts: TrialParts) -> Result<TrialReport> {
    let seed = trial_seed(base_seed, index);
    let h = Hamiltonian::sample(Geometry::chain(config.sites)?, config.n_levels, config.gamma, seed)?;
    let x = config.sites / 2;
    let mut report = TrialReport {
        index,
        seed,
        start_site: x,
        invalid: None,
        block: vec![],
        lambda: None,
        n_hat_prev: None,
        profile: None,
        diagnostics: None,
        advanced: false,
        decomposition: None,
        sweep: None,
    };
    let mut state = match LabState::prepare(&h, schedule, x)? {
        Ok(s) => s,
        Err(reason) => {
            report.invalid = Some(reason);
            return Ok(report);
        }
    };
    report.block = state.block().sites.clone();
    report.lambda = Some(state.lambda.to_f64());
    report.n_hat_prev = Some(state.n_hat_prev);
    report.profile = Some(state.influence_profile());
    if parts.diagnostics {
        report.diagnostics = Some(state.diagnostics()?);
    }
    if !(parts.decomposition || parts.sweep) {
        return Ok(report);
    }
    if let Err(reason) = state.advance()? {
        report.invalid = Some(reason);
        return Ok(report);
    }
    report.advanced = true;
    if parts.decomposition {
        report.decomposition = Some(state.movement_decomposition()?);
    }
    if parts.sweep {
        report.sweep = Some(state.sweep_vbar()?);
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub config: StrictConfig,
    pub base_seed: u64,
    pub attempted: usize,
    pub valid: usize,
    pub trials: Vec<TrialReport>,
}

/// Runs trials in seed order until `target` of them are valid (or `max_attempts` is hit).
/// With `need_advance` a trial must also survive to scale two.
pub fn run_corpus(
    config: &StrictConfig,
    base_seed: u64,
    target: usize,
    max_attempts: usize,
    parts: TrialParts,
) -> Result<Corpus> {
    let schedule = config.schedule()?;
    let need_advance = parts.decomposition || parts.sweep;
    let is_valid = |t: &TrialReport| t.invalid.is_none() && (!need_advance || t.advanced);
    let mut trials = vec![];
    let mut valid = 0;
    let mut next = 0u64;
    let batch = 32u64;
    while valid < target && (next as usize) < max_attempts {
        let end = (next + batch).min(max_attempts as u64);
        let chunk: Vec<TrialReport> =
            (next..end).into_par_iter().map(|i| run_trial(config, &schedule, base_seed, i, parts)).collect::<Result<_>>()?;
        for t in chunk {
            if valid == target {
                break;
            }
            if is_valid(&t) {
                valid += 1;
            }
            trials.push(t);
        }
        next = end;
    }
    Ok(Corpus { config: *config, base_seed, attempted: trials.len(), valid, trials })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Disorder;
    use crate::multiscale::ScheduleParams;

    fn chain(levels: Vec<u32>, n_levels: u32, gamma: f64) -> Hamiltonian {
        Hamiltonian::new(Geometry::chain(levels.len()).unwrap(), Disorder::from_levels(n_levels, levels).unwrap(), gamma)
            .unwrap()
    }

    #[test]
    fn precise_complement_matches_double() {
        let h = Hamiltonian::sample(Geometry::chain(12).unwrap(), 9, 0.05, 8).unwrap();
        let hp = PreciseHamiltonian::new(&h);
        let keep = [4, 5];
        let elim: Vec<usize> = (1..=8).filter(|s| !keep.contains(s)).collect();
        let lam = 0.37;
        let f = precise_schur(&hp, &keep, &elim, &Real::from_f64(lam)).unwrap();
        let local: Vec<usize> = (1..=8).collect();
        let p = crate::schur::Partition::new(8, &[3, 4]).unwrap();
        let d = crate::schur::schur_complement(&h.restrict(&local), &p, lam).unwrap();
        assert!((f.matrix.to_f64() - d.matrix).amax() < 1e-14);
    }

    #[test]
    fn potential_gaps() {
        // distinct values of 1/(v + 2 d gamma - l) are at least 1/N apart
        let (n, g, lam) = (16u32, 1e-3, 0.4);
        let mut vals: Vec<f64> =
            (0..n).map(|l| 1.0 / (f64::from(l) / f64::from(n - 1) + 2.0 * g - lam)).collect();
        vals.sort_by(f64::total_cmp);
        assert!(vals.windows(2).all(|w| w[1] - w[0] >= 1.0 / f64::from(n)));
    }

    fn strict_like(levels: Vec<u32>, n_levels: u32, gamma: f64, kind: ScheduleKind) -> (Hamiltonian, Schedule) {
        let h = chain(levels, n_levels, gamma);
        let s = Schedule::new(ScheduleParams { gamma, ..ScheduleParams::for_hamiltonian(&h, 1, kind) }).unwrap();
        (h, s)
    }

    #[test]
    fn single_exterior_neighbour_influence() {
        let levels: Vec<u32> = (0..41).map(|i| (i * 7 % 13) as u32 + 1).collect();
        let mut levels = levels;
        levels[20] = 0;
        let (h, s) = strict_like(levels, 16, 1e-3, ScheduleKind::Standard);
        let lab = LabState::prepare(&h, &s, 20).unwrap().unwrap();
        let p = lab.influence_profile();
        assert_eq!(p.collar, (16..=24).collect::<Vec<_>>());
        let ys: Vec<usize> = p.influences.iter().map(|i| i.0).collect();
        assert_eq!(ys, vec![15, 25]);
        assert!((p.influences[0].1 - p.psi[0].abs()).abs() <= 1e-30);
        assert!((p.influences[1].1 - p.psi[8].abs()).abs() <= 1e-30);
        assert!(p.ybar == 15 || p.ybar == 25);
    }

    #[test]
    fn corner_influence_sums_two_neighbours() {
        let g = Geometry::new(2, &[12, 12]).unwrap();
        let mut levels: Vec<u32> = (0..144).map(|i| (i * 5 % 11) as u32 + 1).collect();
        let x = g.index(&[6, 6]).unwrap();
        levels[x] = 0;
        let h = Hamiltonian::new(g.clone(), Disorder::from_levels(16, levels).unwrap(), 1e-3).unwrap();
        let s = Schedule::new(ScheduleParams::for_hamiltonian(&h, 1, ScheduleKind::Standard)).unwrap();
        let lab = LabState::prepare(&h, &s, x).unwrap().unwrap();
        let p = lab.influence_profile();
        for (y, infl) in &p.influences {
            let sum: f64 = p
                .collar
                .iter()
                .zip(&p.psi)
                .filter(|(&c, _)| g.dist(c, *y) == 1)
                .map(|(_, v)| *v)
                .sum();
            assert!((sum.abs() - infl).abs() <= 1e-25 + 1e-12 * infl);
        }
    }

    #[test]
    fn decoupled_decomposition_vanishes() {
        let levels: Vec<u32> = (0..41).map(|i| (i * 7 % 13) as u32 + 1).collect();
        let mut levels = levels;
        levels[20] = 0;
        let (h, s) = strict_like(levels, 16, 0.0, ScheduleKind::geometric_default());
        let mut lab = LabState::prepare(&h, &s, 20).unwrap().unwrap();
        assert_eq!(lab.advance().unwrap(), Ok(()));
        let d = lab.movement_decomposition().unwrap();
        assert_eq!(d.rank_one_log10, f64::NEG_INFINITY);
        assert_eq!(d.constant_log10, f64::NEG_INFINITY);
        assert_eq!(d.remainder_log10, f64::NEG_INFINITY);
        let t = lab.sweep_vbar().unwrap();
        // v_ybar = 0 coincides with lambda and cannot be eliminated
        assert_eq!(t.outcomes.len(), 16);
        assert_eq!(t.failures, 1);
        assert_eq!(t.unchanged, 15);
    }

    #[test]
    fn reconstruction_identity_on_strict_instance() {
        let cfg = StrictConfig { sites: 64, n_levels: 64, gamma: 1e-3, l0: 1, kind: ScheduleKind::Standard };
        let corpus = run_corpus(&cfg, 7, 3, 30, TrialParts::ALL).unwrap();
        assert_eq!(corpus.valid, 3);
        for t in corpus.trials.iter().filter(|t| t.advanced) {
            let d = t.decomposition.as_ref().unwrap();
            assert!(d.reconstruction_error <= 1e-10, "{d:?}");
            assert!(d.rank_one_check <= 1e-40);
            assert!(d.weyl_ok);
            let sweep = t.sweep.as_ref().unwrap();
            assert!(sweep.monotone);
        }
    }

    #[test]
    fn corpus_is_deterministic() {
        let cfg = StrictConfig { sites: 48, n_levels: 32, gamma: 1e-3, l0: 1, kind: ScheduleKind::Standard };
        let parts = TrialParts { diagnostics: true, decomposition: false, sweep: false };
        let a = run_corpus(&cfg, 3, 4, 10, parts).unwrap();
        let b = run_corpus(&cfg, 3, 4, 10, parts).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }
}
