//! Design matrices, their conditioning, and minimal direction subsets.

use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::sh::{self, coefficient_count};
use crate::volume::GradientScheme;
use crate::{Error, Result};

/// Ratio of extreme singular values above which a design counts as singular.
pub const RANK_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix(DMatrix<f64>);

impl DesignMatrix {
    pub fn from_matrix(m: DMatrix<f64>) -> Self {
        Self(m)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        Self(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.0.row(i).iter().copied().collect()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }
}

/// The six quadratic-form entries `[gx², gy², gz², 2gxgy, 2gxgz, 2gygz]`.
fn quadratic_row(g: &[f64; 3]) -> [f64; 6] {
    [
        g[0] * g[0],
        g[1] * g[1],
        g[2] * g[2],
        2.0 * g[0] * g[1],
        2.0 * g[0] * g[2],
        2.0 * g[1] * g[2],
    ]
}

/// Log-linear tensor design: one row `[-b·q(g), 1]` per volume, solving for
/// `(Dxx, Dyy, Dzz, Dxy, Dxz, Dyz, ln S0)`.
pub fn dti_design_matrix(scheme: &GradientScheme) -> DesignMatrix {
    let n = scheme.len();
    let mut m = DMatrix::zeros(n, 7);
    for (i, (b, g)) in scheme.bvals().iter().zip(scheme.bvecs()).enumerate() {
        for (j, q) in quadratic_row(g).into_iter().enumerate() {
            m[(i, j)] = -b * q;
        }
        m[(i, 6)] = 1.0;
    }
    DesignMatrix(m)
}

/// Angular tensor design used to rank direction sets: b normalized to 1 and
/// the `ln S0` column dropped.
pub fn dti_angular_design(directions: &[[f64; 3]]) -> DesignMatrix {
    let mut m = DMatrix::zeros(directions.len(), 6);
    for (i, g) in directions.iter().enumerate() {
        for (j, q) in quadratic_row(g).into_iter().enumerate() {
            m[(i, j)] = q;
        }
    }
    DesignMatrix(m)
}

fn condition_of(m: &DMatrix<f64>) -> Result<f64> {
    if m.nrows() < m.ncols() {
        return Err(Error::TooFewRows { rows: m.nrows(), cols: m.ncols() });
    }
    let sv = m.singular_values();
    let (max, min) = (sv.max(), sv.min());
    if !(min >= RANK_TOLERANCE * max) || max == 0.0 {
        return Err(Error::RankDeficient);
    }
    Ok(max / min)
}

/// Largest over smallest singular value.
pub fn condition_number(m: &DesignMatrix) -> Result<f64> {
    condition_of(&m.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Model {
    Dti,
    /// Even-order spherical harmonics.
    Sh(usize),
}

impl Model {
    /// Fewest directions giving a unique fit.
    pub fn minimum_directions(self) -> usize {
        match self {
            Model::Dti => 6,
            Model::Sh(order) => coefficient_count(order),
        }
    }

    pub fn design(self, directions: &[[f64; 3]]) -> Result<DesignMatrix> {
        match self {
            Model::Dti => Ok(dti_angular_design(directions)),
            Model::Sh(order) => sh::sh_design_matrix(directions, order),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SelectOptions {
    pub seed: u64,
    pub restarts: usize,
    pub iterations: usize,
}

impl Default for SelectOptions {
    fn default() -> Self {
        Self { seed: 0, restarts: 20, iterations: 2000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubsetSelection {
    /// Sorted indices into the candidate list.
    pub indices: Vec<usize>,
    pub condition_number: f64,
    pub seed: u64,
    pub restarts: usize,
    pub iterations: usize,
}

/// Random-restart exchange search for the `k` candidates whose design has
/// the smallest condition number.
///
/// Candidates equal up to sign are considered once (the first occurrence
/// wins). Restart `r` draws from `ChaCha8Rng::seed_from_u64(seed)` on
/// stream `r`, so restarts are independent of execution order; ties between
/// restarts go to the lowest restart index.
pub fn select_subset(
    candidates: &[[f64; 3]],
    k: usize,
    model: Model,
    opts: SelectOptions,
) -> Result<SubsetSelection> {
    if let Model::Sh(order) = model {
        sh::check_order(order)?;
    }
    let min = model.minimum_directions();
    if k < min {
        return Err(Error::SubsetTooSmall { k, min });
    }
    if k > candidates.len() {
        return Err(Error::SubsetTooLarge { k, available: candidates.len() });
    }
    let finish = |indices: Vec<usize>| -> Result<SubsetSelection> {
        let dirs: Vec<[f64; 3]> = indices.iter().map(|&i| candidates[i]).collect();
        let condition_number = condition_number(&model.design(&dirs)?)?;
        Ok(SubsetSelection {
            indices,
            condition_number,
            seed: opts.seed,
            restarts: opts.restarts,
            iterations: opts.iterations,
        })
    };
    if k == candidates.len() {
        return finish((0..k).collect());
    }

    let pool = crate::sphere::antipodal_unique(candidates);
    if k > pool.len() {
        return Err(Error::SubsetTooLarge { k, available: pool.len() });
    }
    let table = model.design(&pool.iter().map(|&i| candidates[i]).collect::<Vec<_>>())?;
    let search = ExchangeSearch { table: table.as_matrix(), k, opts };

    #[cfg(feature = "parallel")]
    let results: Vec<(f64, Vec<usize>)> = {
        use rayon::prelude::*;
        (0..opts.restarts.max(1)).into_par_iter().map(|r| search.restart(r)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<(f64, Vec<usize>)> =
        (0..opts.restarts.max(1)).map(|r| search.restart(r)).collect();

    let mut best: Option<(f64, Vec<usize>)> = None;
    for (cond, chosen) in results {
        if best.as_ref().map_or(true, |(c, _)| cond < *c) {
            best = Some((cond, chosen));
        }
    }
    let (cond, chosen) = best.expect("at least one restart");
    if !cond.is_finite() {
        return Err(Error::RankDeficient);
    }
    let mut indices: Vec<usize> = chosen.into_iter().map(|p| pool[p]).collect();
    indices.sort_unstable();
    finish(indices)
}

struct ExchangeSearch<'a> {
    table: &'a DMatrix<f64>,
    k: usize,
    opts: SelectOptions,
}

impl ExchangeSearch<'_> {
    fn cost(&self, chosen: &[usize]) -> f64 {
        let m = self.table.select_rows(chosen);
        condition_of(&m).unwrap_or(f64::INFINITY)
    }

    fn restart(&self, r: usize) -> (f64, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.opts.seed);
        rng.set_stream(r as u64);
        let n = self.table.nrows();
        let mut order: Vec<usize> = (0..n).collect();
        for i in 0..self.k {
            let j = rng.gen_range(i..n);
            order.swap(i, j);
        }
        let mut unchosen = order.split_off(self.k);
        let mut chosen = order;
        let mut cost = self.cost(&chosen);
        for _ in 0..self.opts.iterations {
            let a = rng.gen_range(0..self.k);
            let b = rng.gen_range(0..unchosen.len());
            core::mem::swap(&mut chosen[a], &mut unchosen[b]);
            let trial = self.cost(&chosen);
            if trial < cost {
                cost = trial;
            } else {
                core::mem::swap(&mut chosen[a], &mut unchosen[b]);
            }
        }
        // Polish with full exchange sweeps until no single swap helps.
        loop {
            let mut improved = false;
            for a in 0..self.k {
                for b in 0..unchosen.len() {
                    core::mem::swap(&mut chosen[a], &mut unchosen[b]);
                    let trial = self.cost(&chosen);
                    if trial < cost {
                        cost = trial;
                        improved = true;
                    } else {
                        core::mem::swap(&mut chosen[a], &mut unchosen[b]);
                    }
                }
            }
            if !improved {
                break;
            }
        }
        (cost, chosen)
    }
}
