//! Model parameters, threshold strategies and the triangular state space.
//!
//! A state `(i, j)` records the tagged customer's position `i` (1 = in
//! service) and the number of customers `j` in the system. States are laid
//! out level by level, so `(i, j)` sits at linear index `j(j-1)/2 + i`
//! (1-based), which is the ordering every vector and matrix in this crate
//! uses.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fractional parts below this are treated as an integer threshold.
pub const INTEGER_EPS: f64 = 1e-12;

/// Arrival rate, service rate, success probability and reward.
///
/// The waiting cost rate is normalised to 1, so payoffs are `reward - time`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    lambda: f64,
    mu: f64,
    q: f64,
    r0: f64,
}

impl ModelParams {
    pub fn new(lambda: f64, mu: f64, q: f64, r0: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::InvalidParameter {
                name: "lambda",
                value: lambda,
                reason: "arrival rate must be finite and positive",
            });
        }
        if !(mu.is_finite() && mu > 0.0) {
            return Err(Error::InvalidParameter {
                name: "mu",
                value: mu,
                reason: "service rate must be finite and positive",
            });
        }
        if !(q.is_finite() && q > 0.0 && q <= 1.0) {
            return Err(Error::InvalidParameter {
                name: "q",
                value: q,
                reason: "success probability must lie in (0, 1]",
            });
        }
        if !(r0.is_finite() && r0 >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "r0",
                value: r0,
                reason: "reward must be finite and nonnegative",
            });
        }
        Ok(Self { lambda, mu, q, r0 })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn r0(&self) -> f64 {
        self.r0
    }

    /// Same queue, different reward.
    pub fn with_reward(&self, r0: f64) -> Result<Self> {
        Self::new(self.lambda, self.mu, self.q, r0)
    }

    /// Traffic intensity of the effective service process, `lambda / (mu q)`.
    pub fn rho(&self) -> f64 {
        self.lambda / (self.mu * self.q)
    }

    /// Total event rate while the server is busy.
    pub fn total_rate(&self) -> f64 {
        self.lambda + self.mu
    }
}

/// A symmetric threshold strategy: join surely at positions `<= n`, with
/// probability `p` at position `n + 1`, never beyond.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    x: f64,
    n: usize,
    p: f64,
}

impl Threshold {
    pub fn new(x: f64) -> Result<Self> {
        if !x.is_finite() || x < 0.0 {
            return Err(Error::InvalidParameter {
                name: "x",
                value: x,
                reason: "threshold must be finite and nonnegative",
            });
        }
        let floor = x.floor();
        let p = x - floor;
        if p < INTEGER_EPS {
            // snap so that x == n exactly
            return Ok(Self {
                x: floor,
                n: floor as usize,
                p: 0.0,
            });
        }
        Ok(Self {
            x,
            n: floor as usize,
            p,
        })
    }

    pub fn integer(n: usize) -> Self {
        Self {
            x: n as f64,
            n,
            p: 0.0,
        }
    }

    pub fn value(&self) -> f64 {
        self.x
    }

    /// Integer part.
    pub fn floor(&self) -> usize {
        self.n
    }

    /// Fractional part, the joining probability at position `floor + 1`.
    pub fn frac(&self) -> f64 {
        self.p
    }

    pub fn is_integer(&self) -> bool {
        self.p == 0.0
    }

    pub fn ceil(&self) -> usize {
        if self.is_integer() {
            self.n
        } else {
            self.n + 1
        }
    }

    /// Probability that a customer using this threshold joins (or stays)
    /// at `position`.
    pub fn join_probability(&self, position: usize) -> f64 {
        if position <= self.n {
            1.0
        } else if position == self.n + 1 {
            self.p
        } else {
            0.0
        }
    }
}

/// Triangular state space `{(i, j) : 1 <= i <= j <= depth}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateSpace {
    depth: usize,
}

impl StateSpace {
    pub fn new(depth: usize) -> Self {
        Self { depth }
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Number of states, `depth (depth + 1) / 2`.
    pub fn len(&self) -> usize {
        level_offset(self.depth + 1)
    }

    pub fn is_empty(&self) -> bool {
        self.depth == 0
    }

    /// 1-based linear index of `(i, j)`.
    pub fn index(&self, i: usize, j: usize) -> Result<usize> {
        if i == 0 || i > j || j > self.depth {
            return Err(Error::StateOutOfRange {
                i,
                j,
                depth: self.depth,
            });
        }
        Ok(level_offset(j) + i)
    }

    /// Inverse of [`StateSpace::index`].
    pub fn state(&self, k: usize) -> Result<(usize, usize)> {
        let len = self.len();
        if k == 0 || k > len {
            return Err(Error::IndexOutOfRange { index: k, len });
        }
        // smallest j with j(j+1)/2 >= k
        let mut j = (((8 * k) as f64).sqrt() as usize).saturating_sub(1) / 2;
        while level_offset(j + 1) < k {
            j += 1;
        }
        while j > 1 && level_offset(j) >= k {
            j -= 1;
        }
        Ok((k - level_offset(j), j))
    }

    /// All states in index order.
    pub fn states(&self) -> impl Iterator<Item = (usize, usize)> {
        (1..=self.depth).flat_map(|j| (1..=j).map(move |i| (i, j)))
    }
}

/// Number of states on levels strictly below `j`, i.e. `j(j-1)/2`.
pub(crate) fn level_offset(j: usize) -> usize {
    j * j.saturating_sub(1) / 2
}

/// Zero-based position of `(i, j)` in state-ordered storage. Callers
/// guarantee `1 <= i <= j`.
#[inline]
pub(crate) fn slot(i: usize, j: usize) -> usize {
    level_offset(j) + i - 1
}

/// 1-based linear index of `(i, j)` in a space of the given depth.
pub fn state_index(i: usize, j: usize, depth: usize) -> Result<usize> {
    StateSpace::new(depth).index(i, j)
}

/// Inverse of [`state_index`].
pub fn inverse_index(k: usize, depth: usize) -> Result<(usize, usize)> {
    StateSpace::new(depth).state(k)
}
