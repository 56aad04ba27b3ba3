//! Poisson-equation solvers for the QBD chains.
//!
//! [`solve_structured`] runs a level-by-level block elimination through the
//! matrices `U`, `Gamma` and `G`; [`solve_dense`] is a plain LU solve of the
//! assembled matrix and serves as the reference.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{slot, ModelParams, StateSpace, Threshold};
use crate::qbd::{
    assemble_full, build_nonreneging, build_reneging_all, build_reneging_custom,
    build_reneging_tagged, FullMatrix, QbdBlocks, RhsVector,
};

/// Relative infinity-norm residual every solve must meet.
pub const RESIDUAL_TOL: f64 = 1e-10;

/// Agreement required between two routes to the same payoff vector.
pub const CROSS_CHECK_TOL: f64 = 1e-10;

const NEUMANN_MAX_TERMS: usize = 1_000_000;
const NEUMANN_STEP_TOL: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ValueKind {
    /// `w`: expected sojourn, nobody reneges.
    SojournN,
    /// `w-hat`: expected sojourn of a never-reneging tagged customer among
    /// reneging others.
    SojournR,
    /// `z = r0 - w`.
    PayoffN,
    /// Payoff of a never-reneging tagged customer among reneging others.
    PayoffRTagged,
    /// Payoff when everybody reneges at the threshold.
    PayoffRAll,
    /// Payoff of a tagged customer with her own threshold among reneging
    /// others.
    PayoffRCustom,
    /// Solution of a caller-supplied system.
    Generic,
}

/// Solution vector of a Poisson equation in state order.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueVector {
    kind: ValueKind,
    depth: usize,
    values: DVector<f64>,
    residual: f64,
}

impl ValueVector {
    pub fn kind(&self) -> ValueKind {
        self.kind
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    /// Relative residual of the solve that produced this vector.
    pub fn residual(&self) -> f64 {
        self.residual
    }

    /// Value at state `(i, j)`.
    pub fn get(&self, i: usize, j: usize) -> Result<f64> {
        let k = StateSpace::new(self.depth).index(i, j)?;
        Ok(self.values[k - 1])
    }

    /// Values on the diagonal `(j, j)`, `j = 1..=depth`.
    pub fn diagonal(&self) -> Vec<f64> {
        (1..=self.depth).map(|j| self.values[slot(j, j)]).collect()
    }

    /// `(i, j, value)` triples in state order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        StateSpace::new(self.depth)
            .states()
            .zip(self.values.iter())
            .map(|((i, j), v)| (i, j, *v))
    }

    fn relabel(mut self, kind: ValueKind) -> Self {
        self.kind = kind;
        self
    }

    /// `r0 - v`, used to turn a sojourn vector into a payoff vector.
    fn reflect(&self, r0: f64, kind: ValueKind) -> Self {
        Self {
            kind,
            depth: self.depth,
            values: self.values.map(|v| r0 - v),
            residual: self.residual,
        }
    }
}

/// Per-level factors of the block elimination. Level `j` is stored at index
/// `j - 1`; `gamma[0]` and `g[0]` are empty.
#[derive(Debug, Clone)]
pub struct UgFactors {
    pub u: Vec<DMatrix<f64>>,
    /// `(I - U^(j))^{-1}`
    pub inv: Vec<DMatrix<f64>>,
    /// `Gamma^(j) = A1^(j-1) (I - U^(j))^{-1}`, `(j-1) x j`
    pub gamma: Vec<DMatrix<f64>>,
    /// `G^(j) = (I - U^(j))^{-1} A-1^(j)`, `j x (j-1)`
    pub g: Vec<DMatrix<f64>>,
}

impl UgFactors {
    pub fn depth(&self) -> usize {
        self.u.len()
    }
}

/// Downward sweep computing `U`, `Gamma` and `G` from the top level.
pub fn factorize(blocks: &QbdBlocks) -> Result<UgFactors> {
    let depth = blocks.depth();
    let mut u = vec![DMatrix::zeros(0, 0); depth];
    let mut inv = vec![DMatrix::zeros(0, 0); depth];
    let mut g = vec![DMatrix::zeros(0, 0); depth];
    let mut gamma = vec![DMatrix::zeros(0, 0); depth];

    for j in (1..=depth).rev() {
        let lv = blocks.level(j);
        let uj = if j == depth {
            lv.local.clone()
        } else {
            &lv.local + &lv.up * &g[j]
        };
        let inv_j = (DMatrix::identity(j, j) - &uj)
            .try_inverse()
            .ok_or(Error::SingularBlock { level: j })?;
        if j > 1 {
            g[j - 1] = &inv_j * &lv.down;
            gamma[j - 1] = &blocks.level(j - 1).up * &inv_j;
        }
        u[j - 1] = uj;
        inv[j - 1] = inv_j;
    }
    Ok(UgFactors { u, inv, gamma, g })
}

/// Solve `(I - P) v = b` by block elimination.
///
/// Backward: `t_J = b_J`, `t_j = b_j + Gamma^(j+1) t_(j+1)`, giving the
/// particular parts `y_j = (I - U^(j))^{-1} t_j`. Level 1 has a single
/// phase, so `v_1 = y_1`. Forward: `v_j = G^(j) v_(j-1) + y_j`.
pub fn solve_structured(blocks: &QbdBlocks, rhs: &RhsVector) -> Result<ValueVector> {
    let factors = factorize(blocks)?;
    let values = solve_with_factors(blocks, &factors, rhs)?;
    finish(blocks, rhs, values)
}

/// Solve using precomputed factors, without the residual check.
pub fn solve_with_factors(
    blocks: &QbdBlocks,
    factors: &UgFactors,
    rhs: &RhsVector,
) -> Result<DVector<f64>> {
    let depth = blocks.depth();
    let len = StateSpace::new(depth).len();
    if rhs.len() != len {
        return Err(Error::Dimension {
            expected: len,
            got: rhs.len(),
        });
    }
    let b = rhs.values();
    let level = |j: usize| b.rows(slot(1, j), j).into_owned();

    let mut y: Vec<DVector<f64>> = vec![DVector::zeros(0); depth];
    let mut t = level(depth);
    for j in (1..=depth).rev() {
        if j < depth {
            t = level(j) + &factors.gamma[j] * &t;
        }
        y[j - 1] = &factors.inv[j - 1] * &t;
    }

    let mut values = DVector::zeros(len);
    let mut prev = y[0].clone();
    values.rows_mut(0, 1).copy_from(&prev);
    for j in 2..=depth {
        let vj = &factors.g[j - 1] * &prev + &y[j - 1];
        values.rows_mut(slot(1, j), j).copy_from(&vj);
        prev = vj;
    }
    Ok(values)
}

/// Reference solve by LU factorisation of the assembled `I - P`.
pub fn solve_dense(full: &FullMatrix, rhs: &RhsVector) -> Result<ValueVector> {
    let n = full.matrix().nrows();
    if rhs.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: rhs.len(),
        });
    }
    let a = DMatrix::identity(n, n) - full.matrix();
    let values = a
        .clone()
        .lu()
        .solve(rhs.values())
        .ok_or(Error::EliminationBreakdown { size: n })?;
    let residual = relative_residual(&(&a * &values - rhs.values()), rhs.values());
    if residual.is_nan() || residual > RESIDUAL_TOL {
        return Err(Error::Residual {
            residual,
            tolerance: RESIDUAL_TOL,
        });
    }
    Ok(ValueVector {
        kind: ValueKind::Generic,
        depth: full.depth(),
        values,
        residual,
    })
}

/// Truncated series `sum_d P^d b`.
#[derive(Debug, Clone)]
pub struct NeumannSum {
    pub values: DVector<f64>,
    pub terms: usize,
    pub converged: bool,
}

/// Sum `P^d b` until the increment's infinity norm drops below `1e-15`
/// relative to the partial sum, or a million terms have been added.
pub fn neumann_series(full: &FullMatrix, rhs: &RhsVector) -> NeumannSum {
    let p = full.matrix();
    let mut term = rhs.values().clone();
    let mut sum = term.clone();
    for d in 1..=NEUMANN_MAX_TERMS {
        term = p * &term;
        sum += &term;
        if term.amax() <= NEUMANN_STEP_TOL * sum.amax().max(1.0) {
            return NeumannSum {
                values: sum,
                terms: d + 1,
                converged: true,
            };
        }
    }
    NeumannSum {
        values: sum,
        terms: NEUMANN_MAX_TERMS + 1,
        converged: false,
    }
}

/// `||(I - P) v - b||_inf / ||b||_inf` evaluated block by block.
pub fn block_residual(blocks: &QbdBlocks, rhs: &RhsVector, values: &DVector<f64>) -> f64 {
    let depth = blocks.depth();
    let mut r = DVector::zeros(values.len());
    for j in 1..=depth {
        let lv = blocks.level(j);
        let vj = values.rows(slot(1, j), j);
        let mut out = vj.into_owned() - &lv.local * vj;
        if j > 1 {
            out -= &lv.down * values.rows(slot(1, j - 1), j - 1);
        }
        if j < depth {
            out -= &lv.up * values.rows(slot(1, j + 1), j + 1);
        }
        r.rows_mut(slot(1, j), j).copy_from(&out);
    }
    relative_residual(&(r - rhs.values()), rhs.values())
}

fn relative_residual(r: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let rn = r.amax();
    if rn == 0.0 {
        return 0.0;
    }
    rn / b.amax().max(f64::MIN_POSITIVE)
}

fn finish(blocks: &QbdBlocks, rhs: &RhsVector, values: DVector<f64>) -> Result<ValueVector> {
    let residual = block_residual(blocks, rhs, &values);
    if residual.is_nan() || residual > RESIDUAL_TOL {
        return Err(Error::Residual {
            residual,
            tolerance: RESIDUAL_TOL,
        });
    }
    Ok(ValueVector {
        kind: ValueKind::Generic,
        depth: blocks.depth(),
        values,
        residual,
    })
}

/// Expected sojourn `w^(x)` with nobody reneging.
pub fn sojourn_vector(params: &ModelParams, x: Threshold) -> Result<ValueVector> {
    let blocks = build_nonreneging(params, x);
    let rhs = RhsVector::sojourn(params, blocks.depth());
    Ok(solve_structured(&blocks, &rhs)?.relabel(ValueKind::SojournN))
}

/// Expected sojourn of a never-reneging tagged customer while the others
/// renege at threshold `x`.
pub fn sojourn_vector_r(params: &ModelParams, x: Threshold) -> Result<ValueVector> {
    let (blocks, _) = build_reneging_tagged(params, x);
    let rhs = RhsVector::sojourn(params, blocks.depth());
    Ok(solve_structured(&blocks, &rhs)?.relabel(ValueKind::SojournR))
}

/// `z^(x) = r0 - w^(x)`.
pub fn payoff_vector_n(params: &ModelParams, x: Threshold) -> Result<ValueVector> {
    Ok(sojourn_vector(params, x)?.reflect(params.r0(), ValueKind::PayoffN))
}

/// Payoff of a never-reneging tagged customer. Computed from the payoff
/// right-hand side and again as `r0 - w-hat`; the two must agree.
pub fn payoff_vector_r_tagged(params: &ModelParams, x: Threshold) -> Result<ValueVector> {
    let (blocks, g) = build_reneging_tagged(params, x);
    let direct = solve_structured(&blocks, &g)?;
    let via_sojourn = sojourn_vector_r(params, x)?;
    let scale = direct.values().amax().max(1.0);
    let gap = (direct.values() - via_sojourn.values().map(|w| params.r0() - w)).amax();
    if gap > CROSS_CHECK_TOL * scale {
        return Err(Error::CrossCheck(format!(
            "tagged payoff routes differ by {gap:e} at x = {}",
            x.value()
        )));
    }
    Ok(direct.relabel(ValueKind::PayoffRTagged))
}

/// Payoff when everybody, the tagged customer included, reneges at `x`.
pub fn payoff_vector_r_all(params: &ModelParams, x: Threshold) -> Result<ValueVector> {
    let (blocks, g) = build_reneging_all(params, x);
    Ok(solve_structured(&blocks, &g)?.relabel(ValueKind::PayoffRAll))
}

/// Payoff of a tagged customer with threshold `x_tag` among others who
/// renege at `x`.
pub fn payoff_vector_r_custom(
    params: &ModelParams,
    x: Threshold,
    x_tag: Threshold,
) -> Result<ValueVector> {
    let (blocks, g) = build_reneging_custom(params, x, x_tag);
    Ok(solve_structured(&blocks, &g)?.relabel(ValueKind::PayoffRCustom))
}

/// Dense-route counterpart of [`solve_structured`] for the same blocks.
pub fn solve_dense_blocks(blocks: &QbdBlocks, rhs: &RhsVector) -> Result<ValueVector> {
    solve_dense(&assemble_full(blocks), rhs)
}
