//! Social welfare under a symmetric threshold, its derivative, and the
//! socially optimal integer threshold.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytics::{renege_probability, stationary_threshold, Mode, StationaryDist};
use crate::error::{Error, Result};
use crate::model::{ModelParams, Threshold};
use crate::root::bisect;
use crate::solver::{payoff_vector_n, payoff_vector_r_all};

/// Required agreement between independent welfare evaluations, relative to
/// the reward rate scale.
pub const WELFARE_TOL: f64 = 1e-9;

/// Closed forms with `(rho - 1)` denominators are only compared outside
/// this band around `rho = 1`.
pub const RHO_ONE_BAND: f64 = 1e-3;

/// Every evaluation of one welfare value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelfareForms {
    /// Arrival rate times the expected payoff of an arrival.
    pub summation: f64,
    /// Reward rate of successful joiners minus mean number in system.
    pub little: f64,
    /// Expression in `rho`, `n` and `p` only; absent near `rho = 1`.
    pub closed: Option<f64>,
}

impl WelfareForms {
    fn check(&self, scale: f64, what: &str) -> Result<()> {
        let tol = WELFARE_TOL * scale.max(1.0);
        let mut worst = (self.summation - self.little).abs();
        if let Some(c) = self.closed {
            worst = worst.max((c - self.summation).abs());
        }
        if worst > tol {
            return Err(Error::CrossCheck(format!(
                "{what} forms disagree by {worst:e} (summation {}, little {}, closed {:?})",
                self.summation, self.little, self.closed
            )));
        }
        Ok(())
    }
}

fn joining_mass(pi: &StationaryDist, x: Threshold) -> f64 {
    let n = x.floor();
    (0..n).map(|k| pi.get(k)).sum::<f64>() + x.frac() * pi.get(n)
}

fn near_one(rho: f64) -> bool {
    (rho - 1.0).abs() <= RHO_ONE_BAND
}

/// Closed form of the non-reneging welfare in terms of `rho`, `n`, `p`.
fn closed_n(params: &ModelParams, x: Threshold) -> f64 {
    let r = params.rho();
    let (n, p) = (x.floor() as i32, x.frac());
    let lr = params.lambda() * params.r0();
    let a = 1.0 + p * (r - 1.0);
    let rn = r.powi(n);
    let num = lr * (r - 1.0) * (a * rn - 1.0)
        + r * ((1.0 - n as f64 * a * (r - 1.0) - p * (r - 1.0).powi(2)) * rn - 1.0);
    let den = 1.0 + r * (a * (r - 1.0) * rn - 1.0);
    num / den
}

/// Closed form of the reneging welfare: reward rate `r0 mu q (1 - pi_0)`
/// minus mean number in system, both written out in `rho`, `n`, `p`.
fn closed_r(params: &ModelParams, x: Threshold) -> f64 {
    let r = params.rho();
    let q = params.q();
    let (n, p) = (x.floor() as i32, x.frac());
    let rn1 = r.powi(n + 1);
    let top = rn1 * q * p / (1.0 - (1.0 - q) * p);
    let z = (rn1 - 1.0) / (r - 1.0) + top;
    let nf = n as f64;
    let weighted =
        r * (1.0 - (nf + 1.0) * r.powi(n) + nf * rn1) / (1.0 - r).powi(2) + (nf + 1.0) * top;
    params.r0() * params.mu() * q * (1.0 - 1.0 / z) - weighted / z
}

pub fn welfare_n_forms(params: &ModelParams, x: Threshold) -> Result<WelfareForms> {
    let pi = stationary_threshold(params, x, Mode::N);
    let z = payoff_vector_n(params, x)?;
    let n = x.floor();
    let mut s = 0.0;
    for k in 1..=n {
        s += pi.get(k - 1) * z.get(k, k)?;
    }
    if x.frac() > 0.0 {
        s += x.frac() * pi.get(n) * z.get(n + 1, n + 1)?;
    }
    let little = params.lambda() * params.r0() * joining_mass(&pi, x) - pi.mean();
    Ok(WelfareForms {
        summation: params.lambda() * s,
        little,
        closed: (!near_one(params.rho())).then(|| closed_n(params, x)),
    })
}

pub fn welfare_r_forms(params: &ModelParams, x: Threshold) -> Result<WelfareForms> {
    if x.value() == 0.0 {
        return Ok(WelfareForms {
            summation: 0.0,
            little: 0.0,
            closed: Some(0.0),
        });
    }
    let pi = stationary_threshold(params, x, Mode::R);
    let z = payoff_vector_r_all(params, x)?;
    let n = x.floor();
    let mut s = 0.0;
    for k in 1..=n {
        s += pi.get(k - 1) * z.get(k, k)?;
    }
    if x.frac() > 0.0 {
        s += x.frac() * pi.get(n) * z.get(n + 1, n + 1)?;
    }
    let renege = renege_probability(params, x)?;
    let little = params.lambda() * params.r0() * joining_mass(&pi, x) * (1.0 - renege) - pi.mean();
    Ok(WelfareForms {
        summation: params.lambda() * s,
        little,
        closed: (!near_one(params.rho())).then(|| closed_r(params, x)),
    })
}

fn scale(params: &ModelParams) -> f64 {
    params.lambda() * params.r0()
}

/// Welfare when reneging is forbidden (payoff summation form), after
/// checking it against the queue-length form and the closed form.
pub fn welfare_n(params: &ModelParams, x: Threshold) -> Result<f64> {
    let f = welfare_n_forms(params, x)?;
    f.check(scale(params), "non-reneging welfare")?;
    Ok(f.summation)
}

/// Welfare when reneging is allowed (queue-length form), after checking it
/// against the payoff summation form and the closed form.
pub fn welfare_r(params: &ModelParams, x: Threshold) -> Result<f64> {
    let f = welfare_r_forms(params, x)?;
    f.check(scale(params), "reneging welfare")?;
    Ok(f.little)
}

pub fn welfare(params: &ModelParams, x: Threshold, mode: Mode) -> Result<f64> {
    match mode {
        Mode::N => welfare_n(params, x),
        Mode::R => welfare_r(params, x),
    }
}

/// `F(k) = sum_(i=0..=k) sum_(l=0..=i) rho^l`. It equals
/// `f(k) / (1 - rho)^2` with `f(k) = 1 - 2 rho + k (1 - rho) + rho^(k+2)`
/// but stays finite at `rho = 1`.
pub fn cumulative_f(rho: f64, k: usize) -> f64 {
    let mut inner = 0.0;
    let mut pw = 1.0;
    let mut total = 0.0;
    for _ in 0..=k {
        inner += pw;
        total += inner;
        pw *= rho;
    }
    total
}

/// `R0 lambda - rho F(n)`; its sign is the sign of the welfare derivative
/// on `(n, n+1)` in both modes.
pub fn derivative_sign_term(params: &ModelParams, n: usize) -> f64 {
    params.r0() * params.lambda() - params.rho() * cumulative_f(params.rho(), n)
}

/// Derivative of welfare at a non-integer threshold.
pub fn welfare_derivative(params: &ModelParams, x: Threshold, mode: Mode) -> Result<f64> {
    if x.is_integer() {
        return Err(Error::Precondition(format!(
            "welfare is not differentiable at the integer threshold {}",
            x.value()
        )));
    }
    let rho = params.rho();
    let (n, p) = (x.floor(), x.frac());
    let q = params.q();
    let geom: f64 = (0..=n).map(|k| rho.powi(k as i32)).sum();
    let rn = rho.powi(n as i32);
    let core = rn * derivative_sign_term(params, n);
    Ok(match mode {
        Mode::N => {
            let z = geom + p * rn * rho;
            core / (z * z)
        }
        Mode::R => {
            let d = 1.0 - (1.0 - q) * p;
            let z = geom + rn * rho * q * p / d;
            q * core / (d * d * z * z)
        }
    })
}

/// Solve `nu (1 - rho) - rho + rho^(nu+1) = R0 mu q (1 - rho)^2` for
/// `nu` on `[0, R0 mu q + 1]`. The left side is increasing in `nu` and equals
/// `f(k)` at `nu = k + 1`.
pub fn naor_nu(params: &ModelParams) -> Result<f64> {
    let rho = params.rho();
    if near_one(rho) {
        return Err(Error::Precondition(
            "the nu equation degenerates at rho = 1".into(),
        ));
    }
    let c = params.r0() * params.mu() * params.q();
    let target = c * (1.0 - rho).powi(2);
    let h = |nu: f64| Ok(nu * (1.0 - rho) - rho + rho.powf(nu + 1.0) - target);
    Ok(bisect(h, 0.0, c.max(1.0) + 1.0, 0.0)?.x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimumMethod {
    /// First `k` with `F(k) >= R0 mu q`, confirmed by the `nu` equation.
    Criterion,
    /// Integer argmax of the welfare curve, used near `rho = 1`.
    GridArgmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimalThreshold {
    pub n_star: usize,
    pub welfare: f64,
    pub method: OptimumMethod,
    pub nu: Option<f64>,
    pub criterion: usize,
    pub grid_argmax: usize,
}

/// Socially optimal integer threshold, identical in both modes.
pub fn socially_optimal_threshold(params: &ModelParams) -> Result<OptimalThreshold> {
    let c = params.r0() * params.mu() * params.q();
    if c < 1.0 - 1e-12 {
        return Err(Error::Precondition(format!(
            "reward {} is below 1/(mu q); joining never pays",
            params.r0()
        )));
    }
    let rho = params.rho();
    let mut criterion = 0;
    while cumulative_f(rho, criterion) < c {
        criterion += 1;
    }

    let upper = criterion + 5;
    let values = (0..=upper)
        .into_par_iter()
        .map(|k| welfare_n(params, Threshold::integer(k)))
        .collect::<Result<Vec<f64>>>()?;
    let mut grid_argmax = 0;
    for (k, v) in values.iter().enumerate() {
        if *v > values[grid_argmax] {
            grid_argmax = k;
        }
    }

    if near_one(rho) {
        return Ok(OptimalThreshold {
            n_star: grid_argmax,
            welfare: values[grid_argmax],
            method: OptimumMethod::GridArgmax,
            nu: None,
            criterion,
            grid_argmax,
        });
    }

    let nu = naor_nu(params)?;
    let from_nu = (nu.ceil() as usize).saturating_sub(1);
    if from_nu != criterion {
        return Err(Error::CrossCheck(format!(
            "criterion gives {criterion} but nu = {nu} gives {from_nu}"
        )));
    }
    let gap = values[grid_argmax] - values[criterion];
    if grid_argmax != criterion && gap > WELFARE_TOL * scale(params).max(1.0) {
        return Err(Error::CrossCheck(format!(
            "criterion gives {criterion} but the welfare grid peaks at {grid_argmax}"
        )));
    }
    Ok(OptimalThreshold {
        n_star: criterion,
        welfare: values[criterion],
        method: OptimumMethod::Criterion,
        nu: Some(nu),
        criterion,
        grid_argmax,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelfarePoint {
    pub x: f64,
    pub s_n: f64,
    pub s_r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WelfareCurve {
    pub points: Vec<WelfarePoint>,
    pub optimum: OptimalThreshold,
    pub unimodal_n: bool,
    pub unimodal_r: bool,
}

impl WelfareCurve {
    /// CSV with columns `x,S_N,S_R` at full precision.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,S_N,S_R\n");
        for p in &self.points {
            out.push_str(&format!("{:.16e},{:.16e},{:.16e}\n", p.x, p.s_n, p.s_r));
        }
        out
    }
}

/// Rises then falls, allowing flat stretches and round-off of size `tol`.
pub fn is_unimodal(values: &[f64], tol: f64) -> bool {
    let mut falling = false;
    for w in values.windows(2) {
        let d = w[1] - w[0];
        if d < -tol {
            falling = true;
        } else if d > tol && falling {
            return false;
        }
    }
    true
}

/// Sample both welfare curves on `0, step, 2 step, ..` up to `x_max`,
/// always including integers.
pub fn welfare_curve(params: &ModelParams, step: f64, x_max: f64) -> Result<WelfareCurve> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "grid-step",
            value: step,
            reason: "step must be positive",
        });
    }
    let optimum = socially_optimal_threshold(params)?;
    let count = (x_max / step).round() as usize;
    let mut grid: Vec<f64> = (0..=count).map(|k| k as f64 * step).collect();
    grid.extend((0..=x_max.floor() as usize).map(|k| k as f64));
    grid.sort_by(|a, b| a.total_cmp(b));
    grid.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    let points = grid
        .into_par_iter()
        .map(|x| {
            let t = Threshold::new(x)?;
            Ok(WelfarePoint {
                x: t.value(),
                s_n: welfare_n(params, t)?,
                s_r: welfare_r(params, t)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let tol = WELFARE_TOL * scale(params).max(1.0);
    let sn: Vec<f64> = points.iter().map(|p| p.s_n).collect();
    let sr: Vec<f64> = points.iter().map(|p| p.s_r).collect();
    Ok(WelfareCurve {
        unimodal_n: is_unimodal(&sn, tol),
        unimodal_r: is_unimodal(&sr, tol),
        points,
        optimum,
    })
}
