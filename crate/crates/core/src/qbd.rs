//! Level-dependent QBD blocks for the tagged-customer chains.
//!
//! Level `j` is the number of customers in the system and the phase is the
//! tagged customer's position. One step of every chain is the first event of
//! the exponential race between an arrival (rate `lambda`) and a service
//! completion (rate `mu`), so all entries are probabilities over
//! `lambda + mu`. Mass leaving the chain is the tagged customer's departure.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{slot, ModelParams, StateSpace, Threshold};

/// Which chain a set of blocks describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChainVariant {
    /// Nobody reneges; depth `ceil(x) + 1`.
    NonReneging,
    /// Others renege at the threshold, the tagged customer never does.
    RenegingTagged,
    /// Everybody, the tagged customer included, reneges at the threshold.
    RenegingAll,
    /// Others renege at the threshold, the tagged customer follows her own.
    RenegingCustom,
}

impl ChainVariant {
    pub fn name(&self) -> &'static str {
        match self {
            ChainVariant::NonReneging => "NonReneging",
            ChainVariant::RenegingTagged => "RenegingTagged",
            ChainVariant::RenegingAll => "RenegingAll",
            ChainVariant::RenegingCustom => "RenegingCustom",
        }
    }
}

/// Up, local and down blocks of one level.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelBlocks {
    /// `j x (j+1)`
    pub up: DMatrix<f64>,
    /// `j x j`
    pub local: DMatrix<f64>,
    /// `j x (j-1)`
    pub down: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QbdBlocks {
    variant: ChainVariant,
    params: ModelParams,
    threshold: Threshold,
    tagged: Threshold,
    levels: Vec<LevelBlocks>,
}

impl QbdBlocks {
    pub fn variant(&self) -> ChainVariant {
        self.variant
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    /// Threshold used by everybody except the tagged customer.
    pub fn threshold(&self) -> Threshold {
        self.threshold
    }

    /// Threshold governing the tagged customer's own reneging.
    pub fn tagged_threshold(&self) -> Threshold {
        self.tagged
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn space(&self) -> StateSpace {
        StateSpace::new(self.depth())
    }

    /// Blocks of level `j` (1-based).
    pub fn level(&self, j: usize) -> &LevelBlocks {
        &self.levels[j - 1]
    }

    pub fn levels(&self) -> &[LevelBlocks] {
        &self.levels
    }
}

/// Right-hand side of a Poisson equation in state order.
#[derive(Debug, Clone, PartialEq)]
pub struct RhsVector {
    values: DVector<f64>,
}

impl RhsVector {
    pub fn new(values: DVector<f64>) -> Self {
        Self { values }
    }

    /// Expected time per step, `1 / (lambda + mu)` everywhere.
    pub fn sojourn(params: &ModelParams, depth: usize) -> Self {
        let len = StateSpace::new(depth).len();
        Self {
            values: DVector::from_element(len, 1.0 / params.total_rate()),
        }
    }

    /// Expected reward minus time per step: the tagged customer collects
    /// `r0` when a service in position 1 succeeds.
    pub fn payoff(params: &ModelParams, depth: usize) -> Self {
        let space = StateSpace::new(depth);
        let s = params.total_rate();
        let reward = params.mu() * params.q() * params.r0() / s;
        let values = DVector::from_iterator(
            space.len(),
            space
                .states()
                .map(|(i, _)| if i == 1 { reward - 1.0 / s } else { -1.0 / s }),
        );
        Self { values }
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Non-reneging chain `P^(x)`.
pub fn build_nonreneging(params: &ModelParams, x: Threshold) -> QbdBlocks {
    let depth = x.ceil() + 1;
    let always = Threshold::integer(depth);
    build(params, x, always, always, depth, ChainVariant::NonReneging)
}

/// Reneging chain in which the tagged customer never reneges, together with
/// the payoff right-hand side.
pub fn build_reneging_tagged(params: &ModelParams, x: Threshold) -> (QbdBlocks, RhsVector) {
    let depth = x.floor() + 1;
    let blocks = build(
        params,
        x,
        x,
        Threshold::integer(depth),
        depth,
        ChainVariant::RenegingTagged,
    );
    (blocks, RhsVector::payoff(params, depth))
}

/// Reneging chain in which the tagged customer uses the population
/// threshold, together with the payoff right-hand side.
pub fn build_reneging_all(params: &ModelParams, x: Threshold) -> (QbdBlocks, RhsVector) {
    let depth = x.floor() + 1;
    let blocks = build(params, x, x, x, depth, ChainVariant::RenegingAll);
    (blocks, RhsVector::payoff(params, depth))
}

/// Reneging chain with an arbitrary tagged threshold. After a failed
/// service the tagged customer stays with her own joining probability at
/// the position she would take.
pub fn build_reneging_custom(
    params: &ModelParams,
    x: Threshold,
    x_tag: Threshold,
) -> (QbdBlocks, RhsVector) {
    let depth = x.floor() + 1;
    let blocks = build(params, x, x, x_tag, depth, ChainVariant::RenegingCustom);
    (blocks, RhsVector::payoff(params, depth))
}

fn build(
    params: &ModelParams,
    x: Threshold,
    others: Threshold,
    tagged: Threshold,
    depth: usize,
    variant: ChainVariant,
) -> QbdBlocks {
    let s = params.total_rate();
    let arrive = params.lambda() / s;
    let success = params.mu() * params.q() / s;
    let failure = params.mu() * (1.0 - params.q()) / s;
    let (n, p) = (x.floor(), x.frac());

    let mut levels = Vec::with_capacity(depth);
    for j in 1..=depth {
        let mut up = DMatrix::zeros(j, j + 1);
        let mut local = DMatrix::zeros(j, j);
        let mut down = DMatrix::zeros(j, j - 1);

        // an arriving customer sees j in the system and takes position j + 1
        let (join, balk) = if j < n {
            (arrive, 0.0)
        } else if j == n {
            (arrive * p, arrive * (1.0 - p))
        } else {
            (0.0, arrive)
        };
        // a customer failing service rejoins at position j
        let stay = others.join_probability(j);
        let tagged_stay = tagged.join_probability(j);

        for i in 1..=j {
            let r = i - 1;
            up[(r, r)] = join;
            local[(r, r)] += balk;
            if i == 1 {
                local[(r, j - 1)] += failure * tagged_stay;
            } else {
                down[(r, i - 2)] = success + failure * (1.0 - stay);
                local[(r, i - 2)] += failure * stay;
            }
        }
        levels.push(LevelBlocks { up, local, down });
    }

    QbdBlocks {
        variant,
        params: *params,
        threshold: x,
        tagged,
        levels,
    }
}

/// Dense transition matrix in state order, plus per-row deficiency
/// `1 - row sum` (the probability of leaving the chain in one step).
#[derive(Debug, Clone, PartialEq)]
pub struct FullMatrix {
    variant: ChainVariant,
    params: ModelParams,
    threshold: Threshold,
    depth: usize,
    matrix: DMatrix<f64>,
    deficiency: DVector<f64>,
}

impl FullMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn deficiency(&self) -> &DVector<f64> {
        &self.deficiency
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn variant(&self) -> ChainVariant {
        self.variant
    }

    /// 1-based indices of rows whose sum falls short of 1 by more than `tol`.
    pub fn deficient_rows(&self, tol: f64) -> Vec<usize> {
        self.deficiency
            .iter()
            .enumerate()
            .filter(|(_, d)| **d > tol)
            .map(|(k, _)| k + 1)
            .collect()
    }

    /// Row-major CSV with a two-line `#` header naming the chain.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("# variant,J,lambda,mu,q,x\n");
        let _ = writeln!(
            out,
            "# {},{},{},{},{},{}",
            self.variant.name(),
            self.depth,
            self.params.lambda(),
            self.params.mu(),
            self.params.q(),
            self.threshold.value()
        );
        for row in self.matrix.row_iter() {
            let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }
}

/// Place the blocks into one dense block-tridiagonal matrix.
pub fn assemble_full(blocks: &QbdBlocks) -> FullMatrix {
    let depth = blocks.depth();
    let len = StateSpace::new(depth).len();
    let mut matrix = DMatrix::zeros(len, len);
    for j in 1..=depth {
        let lv = blocks.level(j);
        let row0 = slot(1, j);
        matrix.view_mut((row0, row0), (j, j)).copy_from(&lv.local);
        if j > 1 {
            matrix
                .view_mut((row0, slot(1, j - 1)), (j, j - 1))
                .copy_from(&lv.down);
        }
        if j < depth {
            matrix
                .view_mut((row0, slot(1, j + 1)), (j, j + 1))
                .copy_from(&lv.up);
        }
    }
    let deficiency = DVector::from_iterator(len, matrix.row_iter().map(|r| 1.0 - r.sum()));
    FullMatrix {
        variant: blocks.variant(),
        params: *blocks.params(),
        threshold: blocks.threshold(),
        depth,
        matrix,
        deficiency,
    }
}

/// The correction `P^(x) - P^(floor(x)+1, x)` on the states shared by the
/// non-reneging chain and the tagged reneging chain. Rows `(i, n+1)` with
/// `i >= 2` move mass `c = mu (1-q)(1-p) / (lambda+mu)` from `(i-1, n)` to
/// `(i-1, n+1)`; every other row is zero.
pub fn reneging_correction(params: &ModelParams, x: Threshold) -> DMatrix<f64> {
    let top = x.floor() + 1;
    let len = StateSpace::new(top).len();
    let c = params.mu() * (1.0 - params.q()) * (1.0 - x.frac()) / params.total_rate();
    let mut delta = DMatrix::zeros(len, len);
    for i in 2..=top {
        let r = slot(i, top);
        delta[(r, slot(i - 1, top - 1))] -= c;
        delta[(r, slot(i - 1, top))] += c;
    }
    delta
}

/// Checks that a block set has the level dimensions a QBD of its depth
/// requires.
pub fn check_dimensions(blocks: &QbdBlocks) -> Result<()> {
    for (k, lv) in blocks.levels().iter().enumerate() {
        let j = k + 1;
        let dims = [
            (lv.up.shape(), (j, j + 1)),
            (lv.local.shape(), (j, j)),
            (lv.down.shape(), (j, j - 1)),
        ];
        for (got, want) in dims {
            if got != want {
                return Err(Error::Dimension {
                    expected: want.0 * want.1,
                    got: got.0 * got.1,
                });
            }
        }
    }
    Ok(())
}
