//! Two counter-intuitive equilibrium effects. A higher reward can lower the
//! equilibrium payoff at a fixed position, and allowing reneging can lower
//! equilibrium payoffs.

use serde::{Deserialize, Serialize};

use crate::analytics::{stationary_threshold, Mode};
use crate::equilibrium::{
    critical_values, equilibrium_payoffs_r, nash_n, nash_r, CriticalValues, EquilibriumCase,
    EquilibriumResult,
};
use crate::error::{Error, Result};
use crate::model::{ModelParams, Threshold};
use crate::solver::{payoff_vector_n, sojourn_vector};

/// Agreement required between the closed-form gaps and the solver.
pub const GAP_TOL: f64 = 1e-9;

/// Auxiliary rational function of the boundary probability `p` that drives
/// the sojourn gap on the band `(2, 3)`.
pub fn gap_f(params: &ModelParams, p: f64) -> f64 {
    let (l, m, q) = (params.lambda(), params.mu(), params.q());
    let num = l + 2.0 * l * p * q + m * q.powi(3) - 3.0 * m * q * q - l * q + 3.0 * m * q;
    let den = (m + l * p)
        * (l * m + l * l * p + l * m * p * q + m * m * q.powi(3) - 3.0 * m * m * q * q
            + 3.0 * m * m * q);
    num / den
}

fn gap_formula(params: &ModelParams, x: Threshold) -> Result<(usize, f64)> {
    let (l, m, q) = (params.lambda(), params.mu(), params.q());
    let p = x.frac();
    match (x.floor(), x.is_integer()) {
        (1, false) => Ok((1, (m + l * p) / (m * (-m * q * q + 2.0 * m * q + l * p)))),
        (2, false) => Ok((
            2,
            1.0 / (m * (1.0 - m * m * (1.0 - q).powi(2) * gap_f(params, p))),
        )),
        _ => Err(Error::Precondition(format!(
            "closed-form gaps cover x in (1, 2) and (2, 3), got {}",
            x.value()
        ))),
    }
}

/// `w_(m+1,m+1) - w_(m,m)` at a threshold in `(m, m+1)` for `m` in
/// `{1, 2}`, from its closed form, checked against the solver.
pub fn sojourn_gap_closed_form(params: &ModelParams, x: Threshold) -> Result<f64> {
    let (m, gap) = gap_formula(params, x)?;
    let w = sojourn_vector(params, x)?;
    let solved = w.get(m + 1, m + 1)? - w.get(m, m)?;
    if (gap - solved).abs() > GAP_TOL * solved.abs().max(1.0) {
        return Err(Error::CrossCheck(format!(
            "closed-form gap {gap} differs from solver gap {solved}"
        )));
    }
    Ok(gap)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionPayoffs {
    pub position: usize,
    pub low: f64,
    pub high: f64,
}

/// Equilibrium payoff at position `m` under two rewards on the same mixed
/// band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Paradox1Report {
    pub params: ModelParams,
    pub m: usize,
    pub r1: f64,
    pub r2: f64,
    pub critical: CriticalValues,
    pub alpha_next: f64,
    pub x1: f64,
    pub x2: f64,
    /// `z_(m,m)` at `(r1, x1)` and `(r2, x2)`.
    pub payoff_at_m: PositionPayoffs,
    /// Positions below `m`, reported without a verdict.
    pub lower_positions: Vec<PositionPayoffs>,
    /// `z_(m,m)` falls from `r1` to `r2` (or stays equal when `r1 == r2`).
    pub holds: bool,
    /// The band index is outside the range where the effect is proved.
    pub conjecture: bool,
}

/// Compare equilibrium payoffs at position `m` for rewards
/// `beta_m < r1 <= r2 < alpha_(m+1)`.
pub fn paradox1_check(base: &ModelParams, m: usize, r1: f64, r2: f64) -> Result<Paradox1Report> {
    if r1 > r2 {
        return Err(Error::Precondition(format!(
            "need r1 <= r2, got {r1} > {r2}"
        )));
    }
    let critical = critical_values(base, m)?;
    let alpha_next = crate::equilibrium::alpha(base, m + 1)?;
    for r in [r1, r2] {
        if !(critical.beta < r && r < alpha_next) {
            return Err(Error::Precondition(format!(
                "reward {r} is outside the mixed band ({}, {alpha_next})",
                critical.beta
            )));
        }
    }
    let solve = |r: f64| -> Result<(f64, Vec<f64>)> {
        let p = base.with_reward(r)?;
        let eq = nash_n(&p)?;
        let EquilibriumCase::Mixed { root, .. } = eq.case else {
            return Err(Error::CrossCheck(format!(
                "expected a mixed equilibrium at reward {r}, got {:?}",
                eq.case
            )));
        };
        let z = payoff_vector_n(&p, Threshold::new(root)?)?;
        Ok((root, z.diagonal()))
    };
    let (x1, z1) = solve(r1)?;
    let (x2, z2) = solve(r2)?;
    let at = |i: usize| PositionPayoffs {
        position: i,
        low: z1[i - 1],
        high: z2[i - 1],
    };
    let payoff_at_m = at(m);
    let holds = if r1 == r2 {
        payoff_at_m.low == payoff_at_m.high
    } else {
        payoff_at_m.low > payoff_at_m.high
    };
    Ok(Paradox1Report {
        params: *base,
        m,
        r1,
        r2,
        critical,
        alpha_next,
        x1,
        x2,
        payoff_at_m,
        lower_positions: (1..m).map(at).collect(),
        holds,
        conjecture: m >= 3,
    })
}

/// Where the reward sits relative to the critical values of its band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardBand {
    /// Balking or indifference: nobody joins in either game.
    Trivial,
    /// `alpha_m <= r0 <= gamma_m`: both games share the integer equilibrium.
    NoDifference,
    /// `gamma_m < r0 <= beta_m`: the effect is proved here.
    Proved,
    /// `beta_m < r0 < alpha_(m+1)`: observed numerically.
    Numerical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionComparison {
    pub position: usize,
    pub payoff_n: f64,
    pub payoff_r: f64,
    /// Stationary mass of `position - 1` customers.
    pub mass_n: f64,
    pub mass_r: f64,
    pub payoff_lower: bool,
    pub mass_lower: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Paradox2Report {
    pub params: ModelParams,
    pub band: RewardBand,
    pub equilibrium_n: EquilibriumResult,
    pub equilibrium_r: EquilibriumResult,
    pub positions: Vec<PositionComparison>,
    /// `sum_(i<=m) pi_(i-1) z_(i,i)` in each game.
    pub total_n: f64,
    pub total_r: f64,
    /// Payoff at position `m+1` in the reneging game, zero at a mixed root.
    pub top_payoff_r: Option<f64>,
    pub total_lower: bool,
    /// Every per-position and total inequality holds.
    pub holds: bool,
}

/// Compare equilibrium payoffs and stationary masses between the two games.
pub fn paradox2_check(params: &ModelParams) -> Result<Paradox2Report> {
    let eq_n = nash_n(params)?;
    let eq_r = nash_r(params)?;
    let band = match (eq_n.case, eq_r.case) {
        (_, EquilibriumCase::Balk) | (_, EquilibriumCase::IndifferenceInterval { .. }) => {
            RewardBand::Trivial
        }
        (_, EquilibriumCase::PureInteger { .. }) => RewardBand::NoDifference,
        (EquilibriumCase::PureInteger { .. }, EquilibriumCase::Mixed { .. }) => RewardBand::Proved,
        _ => RewardBand::Numerical,
    };
    let empty = |band| Paradox2Report {
        params: *params,
        band,
        equilibrium_n: eq_n,
        equilibrium_r: eq_r,
        positions: Vec::new(),
        total_n: 0.0,
        total_r: 0.0,
        top_payoff_r: None,
        total_lower: false,
        holds: false,
    };
    if matches!(band, RewardBand::Trivial | RewardBand::NoDifference) {
        return Ok(empty(band));
    }
    let EquilibriumCase::Mixed { m, root } = eq_r.case else {
        unreachable!("non-trivial bands have a mixed reneging root")
    };
    let x_n = Threshold::new(eq_n.threshold)?;
    let x_r = Threshold::new(root)?;
    let z = payoff_vector_n(params, x_n)?;
    let z_hat = equilibrium_payoffs_r(params, &eq_r)?;
    let pi = stationary_threshold(params, x_n, Mode::N);
    let pi_hat = stationary_threshold(params, x_r, Mode::R);

    let mut positions = Vec::with_capacity(m);
    let (mut total_n, mut total_r) = (0.0, 0.0);
    for i in 1..=m {
        let (zn, zr) = (z.get(i, i)?, z_hat.get(i, i)?);
        let (pn, pr) = (pi.get(i - 1), pi_hat.get(i - 1));
        total_n += pn * zn;
        total_r += pr * zr;
        positions.push(PositionComparison {
            position: i,
            payoff_n: zn,
            payoff_r: zr,
            mass_n: pn,
            mass_r: pr,
            payoff_lower: zr < zn,
            mass_lower: pr < pn,
        });
    }
    let total_lower = total_r < total_n;
    let holds = total_lower && positions.iter().all(|c| c.payoff_lower && c.mass_lower);
    Ok(Paradox2Report {
        top_payoff_r: Some(z_hat.get(m + 1, m + 1)?),
        positions,
        total_n,
        total_r,
        total_lower,
        holds,
        ..empty(band)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(r0: f64, l: f64, m: f64, q: f64) -> ModelParams {
        ModelParams::new(l, m, q, r0).unwrap()
    }

    #[test]
    fn gap_continuity_at_one() {
        let p = params(0.0, 1.0, 0.8, 0.4);
        let near = sojourn_gap_closed_form(&p, Threshold::new(1.0 + 1e-9).unwrap()).unwrap();
        let q = 0.4;
        let flat = (3.0 - q) / (0.8 * q * (2.0 - q)) - 1.0 / (0.8 * q);
        assert!((near - flat).abs() < 1e-7);
        assert!((flat - 1.0 / (0.8 * q * (2.0 - q))).abs() < 1e-12);
    }

    #[test]
    fn gap_matches_solver_and_decreases() {
        for p in [
            params(0.0, 1.0, 0.8, 0.4),
            params(0.0, 0.8, 1.0, 0.2),
            params(0.0, 0.7, 1.3, 0.55),
        ] {
            for band in [1.0, 2.0] {
                let lo = sojourn_gap_closed_form(&p, Threshold::new(band + 0.2).unwrap()).unwrap();
                let hi = sojourn_gap_closed_form(&p, Threshold::new(band + 0.8).unwrap()).unwrap();
                assert!(lo > hi);
            }
        }
        assert!(
            sojourn_gap_closed_form(&params(0.0, 1.0, 0.8, 0.4), Threshold::new(3.5).unwrap())
                .is_err()
        );
        assert!(
            sojourn_gap_closed_form(&params(0.0, 1.0, 0.8, 0.4), Threshold::integer(2)).is_err()
        );
    }

    #[test]
    fn first_paradox_on_worked_band() {
        let base = params(0.0, 1.0, 0.8, 0.4);
        let rep = paradox1_check(&base, 2, 7.8, 7.9).unwrap();
        assert!(rep.holds && !rep.conjecture);
        assert!(rep.x1 < rep.x2);
        let same = paradox1_check(&base, 2, 7.8, 7.8).unwrap();
        assert!(same.holds);
        assert!(paradox1_check(&base, 2, 7.0, 7.9).is_err());
    }

    #[test]
    fn second_paradox_on_table_columns() {
        for p in [
            params(7.8, 1.0, 0.8, 0.4),
            params(4.4, 1.0, 0.8, 0.8),
            params(13.5, 0.8, 1.0, 0.2),
        ] {
            let rep = paradox2_check(&p).unwrap();
            assert_eq!(rep.band, RewardBand::Numerical);
            assert!(rep.holds, "{rep:?}");
            assert!(rep.top_payoff_r.unwrap().abs() < 1e-9);
        }
    }

    #[test]
    fn second_paradox_bands() {
        // alpha_2 = 5.853, gamma_2 = 7.103, beta_2 = 7.569
        let no_diff = paradox2_check(&params(6.5, 1.0, 0.8, 0.4)).unwrap();
        assert_eq!(no_diff.band, RewardBand::NoDifference);
        let proved = paradox2_check(&params(7.5, 1.0, 0.8, 0.4)).unwrap();
        assert_eq!(proved.band, RewardBand::Proved);
        assert!(proved.holds);
        let trivial = paradox2_check(&params(1.0, 1.0, 0.8, 0.4)).unwrap();
        assert_eq!(trivial.band, RewardBand::Trivial);
    }
}
