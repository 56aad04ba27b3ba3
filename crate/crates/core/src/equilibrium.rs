//! Critical rewards, Nash equilibrium thresholds with and without reneging,
//! the population payoff `U(x, x')` and the evolutionary stability check.

use serde::{Deserialize, Serialize};

use crate::analytics::{stationary_threshold, Mode};
use crate::error::{Error, Result};
use crate::model::{ModelParams, Threshold};
use crate::root::bisect;
use crate::solver::{
    payoff_vector_n, payoff_vector_r_all, payoff_vector_r_tagged, sojourn_vector, sojourn_vector_r,
    ValueVector,
};

/// Relative tolerance for deciding `r0 == alpha_1`.
pub const TIE_TOL: f64 = 1e-9;

/// Required accuracy of the defining equation at a mixed root.
pub const ROOT_TOL: f64 = 1e-9;

/// Agreement required between the two routes to equilibrium payoffs.
pub const ROUTE_TOL: f64 = 1e-8;

/// Payoff at the top joining position as a function of the fractional part.
type TopPayoff = fn(&ModelParams, usize, f64) -> Result<f64>;

/// Sojourn values that bracket the equilibrium on `[m, m+1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalValues {
    pub m: usize,
    /// `w^(m)_(m,m)`
    pub alpha: f64,
    /// `w^(m)_(m+1,m+1)`
    pub beta: f64,
    /// `w-hat^(m+1,m)_(m+1,m+1)`
    pub gamma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "case", rename_all = "snake_case")]
pub enum EquilibriumCase {
    Balk,
    /// Every threshold in `[lo, hi]` is an equilibrium.
    IndifferenceInterval {
        lo: f64,
        hi: f64,
    },
    PureInteger {
        m: usize,
    },
    Mixed {
        m: usize,
        root: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumResult {
    pub mode: Mode,
    pub case: EquilibriumCase,
    /// A single representative threshold; 0 for the balk and indifference
    /// cases.
    pub threshold: f64,
    pub critical: Option<CriticalValues>,
    /// `alpha_(m+1)`, the upper end of the reward band.
    pub alpha_next: Option<f64>,
    /// Absolute value of the defining equation at the reported root.
    pub residual: f64,
}

/// `w^(m)_(m,m)`.
pub fn alpha(params: &ModelParams, m: usize) -> Result<f64> {
    sojourn_vector(params, Threshold::integer(m))?.get(m, m)
}

pub fn critical_values(params: &ModelParams, m: usize) -> Result<CriticalValues> {
    if m == 0 {
        return Err(Error::Precondition("critical values start at m = 1".into()));
    }
    let w = sojourn_vector(params, Threshold::integer(m))?;
    let w_hat = sojourn_vector_r(params, Threshold::integer(m))?;
    Ok(CriticalValues {
        m,
        alpha: w.get(m, m)?,
        beta: w.get(m + 1, m + 1)?,
        gamma: w_hat.get(m + 1, m + 1)?,
    })
}

/// Largest position at which joining has nonnegative payoff against a
/// population using `x`; 0 if even an empty system does not pay.
pub fn best_response_n(params: &ModelParams, x: Threshold) -> Result<usize> {
    let z = payoff_vector_n(params, x)?;
    Ok(z.diagonal()
        .iter()
        .enumerate()
        .filter(|(_, v)| **v >= 0.0)
        .map(|(k, _)| k + 1)
        .max()
        .unwrap_or(0))
}

fn w_top(params: &ModelParams, m: usize, x: f64) -> Result<f64> {
    sojourn_vector(params, Threshold::new(x)?)?.get(m + 1, m + 1)
}

fn w_hat_top(params: &ModelParams, m: usize, x: f64) -> Result<f64> {
    sojourn_vector_r(params, Threshold::new(x)?)?.get(m + 1, m + 1)
}

fn root_on_band<F>(params: &ModelParams, m: usize, lo_val: f64, mut w: F) -> Result<(f64, f64)>
where
    F: FnMut(&ModelParams, usize, f64) -> Result<f64>,
{
    let r0 = params.r0();
    let hi_val = alpha(params, m + 1)?;
    if !(lo_val < r0 && r0 < hi_val) {
        return Err(Error::Precondition(format!(
            "reward {r0} is outside the open band ({lo_val}, {hi_val}) for m = {m}"
        )));
    }
    let root = bisect(|x| Ok(w(params, m, x)? - r0), m as f64, (m + 1) as f64, 0.0)?;
    if root.fx.abs() > ROOT_TOL {
        return Err(Error::CrossCheck(format!(
            "bisection stalled with residual {:e}",
            root.fx
        )));
    }
    Ok((root.x, root.fx.abs()))
}

/// The threshold in `(m, m+1)` at which joining at position `m + 1` breaks
/// even, `w^(x)_(m+1,m+1) = r0`. Requires `beta_m < r0 < alpha_(m+1)`.
pub fn chi(params: &ModelParams, m: usize) -> Result<f64> {
    let cv = critical_values(params, m)?;
    Ok(root_on_band(params, m, cv.beta, w_top)?.0)
}

/// The threshold in `(m, m+1)` at which a never-reneging customer at
/// position `m + 1` breaks even among reneging others. Requires
/// `gamma_m < r0 < alpha_(m+1)`.
pub fn reneging_root(params: &ModelParams, m: usize) -> Result<f64> {
    let cv = critical_values(params, m)?;
    Ok(root_on_band(params, m, cv.gamma, w_hat_top)?.0)
}

/// Locate `m` with `alpha_m <= r0 < alpha_(m+1)`, or report a reward below
/// or at `alpha_1`.
enum Band {
    Below,
    Tie,
    Inside { m: usize, alpha_next: f64 },
}

fn find_band(params: &ModelParams) -> Result<Band> {
    let r0 = params.r0();
    let a1 = alpha(params, 1)?;
    if (r0 - a1).abs() <= TIE_TOL * a1.max(1.0) {
        return Ok(Band::Tie);
    }
    if r0 < a1 {
        return Ok(Band::Below);
    }
    // alpha_m >= m / mu bounds the search
    let cap = (r0 * params.mu()).ceil() as usize + 2;
    for m in 1..=cap {
        let next = alpha(params, m + 1)?;
        if r0 < next {
            return Ok(Band::Inside {
                m,
                alpha_next: next,
            });
        }
    }
    Err(Error::Precondition(format!(
        "no band found below m = {cap}; alpha is not growing"
    )))
}

fn trivial(mode: Mode, band: Band) -> Option<EquilibriumResult> {
    let case = match band {
        Band::Below => EquilibriumCase::Balk,
        Band::Tie => EquilibriumCase::IndifferenceInterval { lo: 0.0, hi: 1.0 },
        Band::Inside { .. } => return None,
    };
    Some(EquilibriumResult {
        mode,
        case,
        threshold: 0.0,
        critical: None,
        alpha_next: None,
        residual: 0.0,
    })
}

/// Equilibrium threshold when reneging is forbidden.
pub fn nash_n(params: &ModelParams) -> Result<EquilibriumResult> {
    nash(params, Mode::N)
}

/// Equilibrium threshold when reneging is allowed.
pub fn nash_r(params: &ModelParams) -> Result<EquilibriumResult> {
    nash(params, Mode::R)
}

pub fn nash(params: &ModelParams, mode: Mode) -> Result<EquilibriumResult> {
    let band = find_band(params)?;
    let Band::Inside { m, alpha_next } = band else {
        return Ok(trivial(mode, band).expect("trivial band"));
    };
    let cv = critical_values(params, m)?;
    let r0 = params.r0();
    let (cut, top): (f64, TopPayoff) = match mode {
        Mode::N => (cv.beta, w_top),
        Mode::R => (cv.gamma, w_hat_top),
    };
    let (case, threshold, residual) = if r0 <= cut {
        (EquilibriumCase::PureInteger { m }, m as f64, 0.0)
    } else {
        let (root, res) = root_on_band(params, m, cut, top)?;
        (EquilibriumCase::Mixed { m, root }, root, res)
    };
    Ok(EquilibriumResult {
        mode,
        case,
        threshold,
        critical: Some(cv),
        alpha_next: Some(alpha_next),
        residual,
    })
}

/// Expected payoff per arrival of a customer using `x` while everybody
/// else uses `x_others`.
pub fn total_payoff(params: &ModelParams, x: Threshold, x_others: Threshold) -> Result<f64> {
    let pi = stationary_threshold(params, x_others, Mode::N);
    let z = payoff_vector_n(params, x_others)?;
    let depth = z.depth();
    let n = x.floor();
    let mut u = 0.0;
    for i in 1..=n.min(depth) {
        u += pi.get(i - 1) * z.get(i, i)?;
    }
    if x.frac() > 0.0 && n < depth {
        u += x.frac() * pi.get(n) * z.get(n + 1, n + 1)?;
    }
    Ok(u)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EssVerdict {
    /// `U(x_e, x_e) > U(x', x_e)`.
    StrictBest,
    /// Tie against the incumbent, but `U(x_e, x') > U(x', x')`.
    TieThenStrict,
    Fails,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EssPoint {
    pub deviation: f64,
    /// `U(x_e, x_e)`
    pub incumbent: f64,
    /// `U(x', x_e)`
    pub invader_vs_incumbent: f64,
    /// `U(x_e, x')`
    pub incumbent_vs_invader: f64,
    /// `U(x', x')`
    pub invader: f64,
    pub verdict: EssVerdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EssReport {
    pub threshold: f64,
    pub points: Vec<EssPoint>,
    pub is_ess: bool,
    /// Set when the reward equals `alpha_1`, where every threshold in
    /// `[0, 1]` earns zero and none is stable.
    pub indifference: bool,
}

/// Check the two stability conditions against every deviation in `grid`
/// (points equal to `x_e` are skipped).
pub fn ess_check(params: &ModelParams, x_e: f64, grid: &[f64]) -> Result<EssReport> {
    let te = Threshold::new(x_e)?;
    let incumbent = total_payoff(params, te, te)?;
    let tol = 1e-8 * incumbent.abs().max(1.0);
    let mut points = Vec::with_capacity(grid.len());
    for &d in grid {
        if (d - x_e).abs() < 1e-12 {
            continue;
        }
        let td = Threshold::new(d)?;
        let ivi = total_payoff(params, td, te)?;
        let iiv = total_payoff(params, te, td)?;
        let inv = total_payoff(params, td, td)?;
        let verdict = if incumbent > ivi + tol {
            EssVerdict::StrictBest
        } else if (incumbent - ivi).abs() <= tol && iiv > inv + tol {
            EssVerdict::TieThenStrict
        } else {
            EssVerdict::Fails
        };
        points.push(EssPoint {
            deviation: d,
            incumbent,
            invader_vs_incumbent: ivi,
            incumbent_vs_invader: iiv,
            invader: inv,
            verdict,
        });
    }
    let a1 = alpha(params, 1)?;
    let indifference = (params.r0() - a1).abs() <= TIE_TOL * a1.max(1.0);
    let is_ess = !indifference && points.iter().all(|p| p.verdict != EssVerdict::Fails);
    Ok(EssReport {
        threshold: x_e,
        points,
        is_ess,
        indifference,
    })
}

/// Equilibrium payoffs when reneging is allowed. At a mixed root the vector
/// is computed both with everybody reneging and with a never-reneging
/// tagged customer, and the two must agree because the tagged customer is
/// indifferent at the top position. At an integer equilibrium the result
/// is checked against the non-reneging payoffs below the top level.
pub fn equilibrium_payoffs_r(
    params: &ModelParams,
    result: &EquilibriumResult,
) -> Result<ValueVector> {
    match result.case {
        EquilibriumCase::Mixed { root, .. } => {
            let x = Threshold::new(root)?;
            let direct = payoff_vector_r_all(params, x)?;
            let tagged = payoff_vector_r_tagged(params, x)?;
            let gap = (direct.values() - tagged.values()).amax();
            if gap > ROUTE_TOL * direct.values().amax().max(1.0) {
                return Err(Error::CrossCheck(format!(
                    "equilibrium payoff routes differ by {gap:e}"
                )));
            }
            Ok(direct)
        }
        EquilibriumCase::PureInteger { m } => {
            let x = Threshold::integer(m);
            let direct = payoff_vector_r_all(params, x)?;
            let plain = payoff_vector_n(params, x)?;
            for j in 1..=m {
                for i in 1..=j {
                    let gap = (direct.get(i, j)? - plain.get(i, j)?).abs();
                    if gap > ROUTE_TOL * plain.get(i, j)?.abs().max(1.0) {
                        return Err(Error::CrossCheck(format!(
                            "integer equilibrium payoffs differ by {gap:e} at ({i}, {j})"
                        )));
                    }
                }
            }
            Ok(direct)
        }
        EquilibriumCase::Balk | EquilibriumCase::IndifferenceInterval { .. } => {
            payoff_vector_r_all(params, Threshold::integer(0))
        }
    }
}
