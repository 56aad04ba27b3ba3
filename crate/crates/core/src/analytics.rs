//! Closed-form quantities: the always-join queue, the stationary laws under
//! a threshold, the queue seen by a customer after a failed service, and the
//! probability that a joining customer eventually reneges.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelParams, Threshold};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// Reneging forbidden.
    N,
    /// Reneging after a failed service allowed at the threshold.
    R,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DistKind {
    ThresholdN,
    ThresholdR,
    FeedbackObserved,
}

/// A distribution over `0..len` customers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryDist {
    pub kind: DistKind,
    pub probs: Vec<f64>,
}

impl StationaryDist {
    pub fn get(&self, k: usize) -> f64 {
        self.probs.get(k).copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .map(|(k, p)| k as f64 * p)
            .sum()
    }
}

/// Expected sojourn of a customer arriving to position `i` when everybody
/// always joins: `(i + 1 - q) / ((q - 1) lambda - (q - 2) q mu)`.
pub fn sojourn_always_join(params: &ModelParams, i: usize) -> Result<f64> {
    require_stable(params)?;
    if i == 0 {
        return Err(Error::Precondition("position must be at least 1".into()));
    }
    let (l, m, q) = (params.lambda(), params.mu(), params.q());
    Ok((i as f64 + 1.0 - q) / ((q - 1.0) * l - (q - 2.0) * q * m))
}

/// Geometric stationary mass `(1 - rho) rho^i` of the always-join queue.
pub fn stationary_always_join(params: &ModelParams, i: usize) -> Result<f64> {
    require_stable(params)?;
    let rho = params.rho();
    Ok((1.0 - rho) * rho.powi(i as i32))
}

fn require_stable(params: &ModelParams) -> Result<()> {
    if params.rho() >= 1.0 {
        return Err(Error::Precondition(format!(
            "always-join queue is unstable: rho = {} >= 1",
            params.rho()
        )));
    }
    Ok(())
}

/// Unnormalised weights of the threshold chain scaled so the largest
/// interior weight is 1. Interior states follow the cut equations
/// `lambda pi_k = mu q pi_(k+1)`; the top state depends on the mode.
fn threshold_weights(params: &ModelParams, x: Threshold, mode: Mode) -> Vec<f64> {
    let rho = params.rho();
    let (n, p) = (x.floor(), x.frac());
    // rho^(k - n) when rho > 1 keeps every weight at most 1
    let pivot = if rho > 1.0 { n as i32 } else { 0 };
    let pw = |k: usize| rho.powi(k as i32 - pivot);
    let mut w: Vec<f64> = (0..=n).map(pw).collect();
    if p > 0.0 {
        let top = match mode {
            Mode::N => p * rho * pw(n),
            Mode::R => {
                let (l, m, q) = (params.lambda(), params.mu(), params.q());
                l * p / (m * q + m * (1.0 - q) * (1.0 - p)) * pw(n)
            }
        };
        w.push(top);
    }
    w
}

/// Stationary number in system when everybody uses threshold `x`.
/// Support is `0..=ceil(x)`; `x = 0` is the point mass at 0.
pub fn stationary_threshold(params: &ModelParams, x: Threshold, mode: Mode) -> StationaryDist {
    let w = threshold_weights(params, x, mode);
    let total: f64 = w.iter().sum();
    StationaryDist {
        kind: match mode {
            Mode::N => DistKind::ThresholdN,
            Mode::R => DistKind::ThresholdR,
        },
        probs: w.into_iter().map(|v| v / total).collect(),
    }
}

/// Number of other customers seen by a customer whose service just failed,
/// under the reneging law: `pi~_k = pi-hat_(k+1) / sum_(k>=1) pi-hat_k` for
/// `k = 0..=floor(x)`.
pub fn feedback_observed_dist(params: &ModelParams, x: Threshold) -> Result<StationaryDist> {
    if x.value() <= 0.0 {
        return Err(Error::Precondition(
            "the feedback-observed law needs a positive threshold".into(),
        ));
    }
    let w = threshold_weights(params, x, Mode::R);
    let busy: f64 = w[1..].iter().sum();
    let mut probs: Vec<f64> = w[1..].iter().map(|v| v / busy).collect();
    probs.resize(x.floor() + 1, 0.0);
    Ok(StationaryDist {
        kind: DistKind::FeedbackObserved,
        probs,
    })
}

/// Reneging probability of a joining customer together with the chance of
/// reneging exactly at each successive feedback.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenegeLaw {
    /// Chance a single failed service ends in reneging.
    pub per_feedback: f64,
    /// Chance a failed service is followed by another stay-and-fail cycle.
    pub ratio: f64,
}

impl RenegeLaw {
    /// Overall reneging probability, the geometric sum of [`RenegeLaw::term`].
    pub fn total(&self) -> f64 {
        if self.per_feedback == 0.0 {
            return 0.0;
        }
        self.per_feedback / (1.0 - self.ratio)
    }

    /// Probability of reneging at the `k`-th feedback, `k >= 1`.
    pub fn term(&self, k: usize) -> f64 {
        assert!(k >= 1, "feedback counter starts at 1");
        self.per_feedback * self.ratio.powi(k as i32 - 1)
    }

    /// Partial sum of the first `k` terms.
    pub fn truncated(&self, k: usize) -> f64 {
        (1..=k).map(|i| self.term(i)).sum()
    }
}

/// Law of the feedback-reneging events: after each failure the customer
/// reneges with probability `(1-q)(1-p) pi~_n` and otherwise stays and
/// fails again with probability `(1-q)(1 - (1-p) pi~_n)`.
pub fn renege_law(params: &ModelParams, x: Threshold) -> Result<RenegeLaw> {
    let q = params.q();
    let p = x.frac();
    let seen = feedback_observed_dist(params, x)?;
    let top = seen.get(x.floor());
    Ok(RenegeLaw {
        per_feedback: (1.0 - q) * (1.0 - p) * top,
        ratio: (1.0 - q) * (1.0 - (1.0 - p) * top),
    })
}

/// `p~ = (1-q)(1-p) pi~_n / (1 - (1-q)(1 - (1-p) pi~_n))`.
pub fn renege_probability(params: &ModelParams, x: Threshold) -> Result<f64> {
    Ok(renege_law(params, x)?.total())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params(l: f64, m: f64, q: f64) -> ModelParams {
        ModelParams::new(l, m, q, 0.0).unwrap()
    }

    fn th(x: f64) -> Threshold {
        Threshold::new(x).unwrap()
    }

    #[test]
    fn always_join_sojourn() {
        let p = params(0.4, 0.6, 0.7);
        assert_relative_eq!(
            sojourn_always_join(&p, 1).unwrap(),
            1.3 / 0.426,
            max_relative = 1e-13
        );
        let step = 1.0 / 0.426;
        for i in 1..10 {
            let d = sojourn_always_join(&p, i + 1).unwrap() - sojourn_always_join(&p, i).unwrap();
            assert_relative_eq!(d, step, max_relative = 1e-12);
        }
        let mm1 = params(0.5, 1.25, 1.0);
        assert_relative_eq!(
            sojourn_always_join(&mm1, 3).unwrap(),
            3.0 / 1.25,
            max_relative = 1e-13
        );
        assert!(sojourn_always_join(&params(1.0, 1.0, 0.5), 1).is_err());
    }

    #[test]
    fn always_join_geometric() {
        let p = params(0.4, 0.6, 0.7);
        assert_relative_eq!(
            stationary_always_join(&p, 0).unwrap(),
            1.0 / 21.0,
            max_relative = 1e-12
        );
        let total: f64 = (0..2000)
            .map(|i| stationary_always_join(&p, i).unwrap())
            .sum();
        assert_relative_eq!(total, 1.0, max_relative = 1e-12);
        let r = stationary_always_join(&p, 5).unwrap() / stationary_always_join(&p, 4).unwrap();
        assert_relative_eq!(r, p.rho(), max_relative = 1e-12);
        assert!(stationary_always_join(&params(1.0, 1.0, 0.9), 0).is_err());
    }

    #[test]
    fn threshold_laws_satisfy_cut_equations() {
        let p = params(1.3, 0.9, 0.55);
        let (l, m, q) = (p.lambda(), p.mu(), p.q());
        let x = th(3.35);
        let (n, f) = (x.floor(), x.frac());
        let pn = stationary_threshold(&p, x, Mode::N);
        let pr = stationary_threshold(&p, x, Mode::R);
        for d in [&pn, &pr] {
            assert_relative_eq!(d.probs.iter().sum::<f64>(), 1.0, max_relative = 1e-12);
            for k in 0..n {
                assert!((l * d.get(k) - m * q * d.get(k + 1)).abs() < 1e-12);
            }
        }
        assert!((l * f * pn.get(n) - m * q * pn.get(n + 1)).abs() < 1e-12);
        assert!(
            (l * f * pr.get(n) - (m * q + m * (1.0 - q) * (1.0 - f)) * pr.get(n + 1)).abs() < 1e-12
        );
    }

    #[test]
    fn integer_threshold_modes_coincide() {
        let p = params(1.0, 0.8, 0.4);
        let x = th(3.0);
        assert_eq!(
            stationary_threshold(&p, x, Mode::N).probs,
            stationary_threshold(&p, x, Mode::R).probs
        );
        assert_eq!(renege_probability(&p, x).unwrap(), 0.0);
        assert_eq!(feedback_observed_dist(&p, x).unwrap().get(3), 0.0);
    }

    #[test]
    fn zero_threshold_is_point_mass() {
        let d = stationary_threshold(&params(1.0, 1.0, 0.5), th(0.0), Mode::N);
        assert_eq!(d.probs, vec![1.0]);
        assert!(feedback_observed_dist(&params(1.0, 1.0, 0.5), th(0.0)).is_err());
    }

    #[test]
    fn rho_one_is_continuous() {
        let x = th(4.6);
        let at = stationary_threshold(&params(0.5, 1.0, 0.5), x, Mode::R);
        let near = stationary_threshold(&params(0.5 * (1.0 + 1e-6), 1.0, 0.5), x, Mode::R);
        for k in 0..at.len() {
            assert!((at.get(k) - near.get(k)).abs() < 1e-5);
        }
        // uniform interior at rho = 1
        assert_relative_eq!(at.get(0), at.get(3), max_relative = 1e-14);
    }

    #[test]
    fn large_rho_does_not_overflow() {
        let d = stationary_threshold(&params(50.0, 1.0, 0.1), th(150.5), Mode::N);
        assert!(d.probs.iter().all(|v| v.is_finite()));
        assert_relative_eq!(d.probs.iter().sum::<f64>(), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn feedback_observed_is_shifted_reneging_law() {
        let p = params(1.0, 0.8, 0.8);
        let x = th(2.5);
        let pr = stationary_threshold(&p, x, Mode::R);
        let seen = feedback_observed_dist(&p, x).unwrap();
        let busy = 1.0 - pr.get(0);
        assert_eq!(seen.len(), 3);
        for k in 0..3 {
            assert_relative_eq!(seen.get(k), pr.get(k + 1) / busy, max_relative = 1e-12);
        }
    }

    #[test]
    fn renege_series_converges_to_closed_form() {
        let p = params(1.0, 0.8, 0.4);
        let x = th(2.3);
        let law = renege_law(&p, x).unwrap();
        let closed = renege_probability(&p, x).unwrap();
        assert!(closed > 0.0 && closed < 1.0);
        assert!((law.truncated(400) - closed).abs() < 1e-13);
        assert_eq!(renege_probability(&params(1.0, 0.8, 1.0), x).unwrap(), 0.0);
    }
}
