mod record;

use std::io::Write;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use feedback_queue::analytics::{renege_probability, stationary_threshold};
use feedback_queue::equilibrium::{
    equilibrium_payoffs_r, ess_check, nash, total_payoff, EquilibriumResult, ROOT_TOL,
};
use feedback_queue::paradox::{paradox1_check, paradox2_check};
use feedback_queue::qbd::{
    assemble_full, build_nonreneging, build_reneging_all, build_reneging_custom,
    build_reneging_tagged,
};
use feedback_queue::sim::{simulate_stationary, simulate_tagged, Estimate, SimConfig};
use feedback_queue::solver::{
    payoff_vector_n, payoff_vector_r_custom, sojourn_vector, ValueVector, RESIDUAL_TOL,
};
use feedback_queue::welfare::{welfare_curve, welfare_n_forms, welfare_r_forms, WELFARE_TOL};
use feedback_queue::{Error, Mode, ModelParams, Threshold};
use serde_json::{json, Value};

use record::{csv, num, Diagnostics, OutputRecord};

#[derive(Parser)]
#[command(
    name = "fbq",
    version,
    args_override_self = true,
    about = "Joining, reneging and welfare in an observable M/M/1 queue with feedback"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Expected sojourn (and payoff with --r0) from every state.
    Sojourn(SojournArgs),
    /// Equilibrium thresholds with and without reneging.
    Equilibrium(EquilibriumArgs),
    /// Social welfare curves and the optimal threshold.
    Welfare(WelfareArgs),
    /// Equilibrium payoff comparisons across rewards or between games.
    Paradox(ParadoxArgs),
    /// Discrete-event simulation of tagged customers or a long path.
    Simulate(SimulateArgs),
    /// Dense one-step transition matrix of a tagged-customer chain.
    Matrix(MatrixArgs),
}

#[derive(Args, Clone, Copy)]
struct Rates {
    /// Arrival rate.
    #[arg(long, allow_negative_numbers = true)]
    lambda: f64,
    /// Service rate.
    #[arg(long, allow_negative_numbers = true)]
    mu: f64,
    /// Probability that a service succeeds.
    #[arg(long, allow_negative_numbers = true)]
    q: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    N,
    R,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::N => Mode::N,
            ModeArg::R => Mode::R,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum BothArg {
    N,
    R,
    Both,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct SojournArgs {
    #[command(flatten)]
    rates: Rates,
    /// Reward; adds the payoff column.
    #[arg(long, allow_negative_numbers = true)]
    r0: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    threshold: f64,
    #[arg(long, value_enum, default_value = "n")]
    mode: ModeArg,
    /// Threshold of the tagged customer among reneging others.
    #[arg(long)]
    tagged_threshold: Option<f64>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Args)]
struct EquilibriumArgs {
    #[command(flatten)]
    rates: Rates,
    #[arg(long, allow_negative_numbers = true)]
    r0: f64,
    #[arg(long, value_enum, default_value = "both")]
    mode: BothArg,
    /// Check evolutionary stability of the non-reneging equilibrium on a grid.
    #[arg(long)]
    ess: bool,
    /// Spacing of the deviation grid used by --ess.
    #[arg(long, default_value_t = 0.05)]
    ess_step: f64,
}

#[derive(Args)]
struct WelfareArgs {
    #[command(flatten)]
    rates: Rates,
    #[arg(long, allow_negative_numbers = true)]
    r0: f64,
    #[arg(long, default_value_t = 0.1)]
    grid_step: f64,
    /// Largest threshold on the grid; defaults to five past the optimum.
    #[arg(long)]
    x_max: Option<f64>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Args)]
struct ParadoxArgs {
    #[command(flatten)]
    rates: Rates,
    #[arg(long, allow_negative_numbers = true)]
    r0: f64,
    /// Second reward; compares equilibrium payoffs across the two rewards.
    #[arg(long = "r0-2")]
    r0_2: Option<f64>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    rates: Rates,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    r0: f64,
    #[arg(long, allow_negative_numbers = true)]
    threshold: f64,
    #[arg(long, value_enum, default_value = "n")]
    mode: ModeArg,
    #[arg(long)]
    tagged_threshold: Option<f64>,
    /// Start state `i,j` for tagged replications; omit for a long path.
    #[arg(long, value_parser = parse_state)]
    start: Option<(usize, usize)>,
    #[arg(long, default_value_t = 100_000)]
    reps: usize,
    /// Measured events in a long-path run.
    #[arg(long, default_value_t = 1_000_000)]
    events: usize,
    #[arg(long, default_value_t = 0, conflicts_with = "seed_from_entropy")]
    seed: u64,
    #[arg(long)]
    seed_from_entropy: bool,
    /// Require analytic values to lie within this many standard errors.
    #[arg(long)]
    check: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Nonreneging,
    RenegingTagged,
    RenegingAll,
    RenegingCustom,
}

#[derive(Args)]
struct MatrixArgs {
    #[command(flatten)]
    rates: Rates,
    #[arg(long, allow_negative_numbers = true)]
    threshold: f64,
    #[arg(long, value_enum, default_value = "nonreneging")]
    variant: VariantArg,
    /// Tagged threshold for the custom variant.
    #[arg(long)]
    tagged_threshold: Option<f64>,
}

fn parse_state(s: &str) -> Result<(usize, usize), String> {
    let (i, j) = s.split_once(',').ok_or("expected i,j")?;
    let i = i.trim().parse().map_err(|e| format!("{e}"))?;
    let j = j.trim().parse().map_err(|e| format!("{e}"))?;
    Ok((i, j))
}

type Outcome = Result<(String, Diagnostics), Error>;

fn params(rates: Rates, r0: f64) -> Result<ModelParams, Error> {
    ModelParams::new(rates.lambda, rates.mu, rates.q, r0)
}

fn vector_residual(d: &mut Diagnostics, name: &str, v: &ValueVector) {
    d.residual(name, v.residual(), RESIDUAL_TOL);
}

fn value_json(v: &ValueVector) -> Value {
    v.entries()
        .map(|(i, j, x)| json!({"i": i, "j": j, "value": x}))
        .collect()
}

fn sojourn(a: &SojournArgs) -> Outcome {
    let p = params(a.rates, a.r0.unwrap_or(0.0))?;
    let x = Threshold::new(a.threshold)?;
    let mut d = Diagnostics::default();
    let (w, z) = match a.mode {
        ModeArg::N => {
            if a.tagged_threshold.is_some() {
                return Err(Error::Precondition(
                    "--tagged-threshold needs --mode r".into(),
                ));
            }
            let w = sojourn_vector(&p, x)?;
            let z = a.r0.map(|_| payoff_vector_n(&p, x)).transpose()?;
            (w, z)
        }
        ModeArg::R => {
            let t = Threshold::new(a.tagged_threshold.unwrap_or(a.threshold))?;
            let neg = payoff_vector_r_custom(&p.with_reward(0.0)?, x, t)?;
            let z = a.r0.map(|_| payoff_vector_r_custom(&p, x, t)).transpose()?;
            (neg, z)
        }
    };
    let sign = match a.mode {
        ModeArg::N => 1.0,
        ModeArg::R => -1.0,
    };
    vector_residual(&mut d, "sojourn", &w);
    if let Some(z) = &z {
        vector_residual(&mut d, "payoff", z);
    }
    let out = match a.format {
        Format::Csv => {
            let mut header = vec!["i", "j", "w"];
            if z.is_some() {
                header.push("z");
            }
            let rows = w.entries().map(|(i, j, v)| {
                let mut row = vec![i.to_string(), j.to_string(), num(sign * v)];
                if let Some(z) = &z {
                    row.push(num(z.get(i, j).expect("same state space")));
                }
                row
            });
            csv(&header, rows)
        }
        Format::Json => {
            let w_json: Value = w
                .entries()
                .map(|(i, j, v)| json!({"i": i, "j": j, "value": sign * v}))
                .collect();
            let result = json!({
                "mode": Mode::from(a.mode),
                "threshold": x.value(),
                "tagged_threshold": a.tagged_threshold,
                "depth": w.depth(),
                "sojourn": w_json,
                "payoff": z.as_ref().map(value_json),
            });
            OutputRecord::new("sojourn", p, result, d.clone()).to_json()
        }
    };
    Ok((out, d))
}

fn record_equilibrium(
    p: &ModelParams,
    eq: &EquilibriumResult,
    d: &mut Diagnostics,
    tag: &str,
) -> Result<Value, Error> {
    d.residual(&format!("{tag}_root"), eq.residual, ROOT_TOL);
    let x = Threshold::new(eq.threshold)?;
    let payoff = match eq.mode {
        Mode::N => payoff_vector_n(p, x)?,
        Mode::R => equilibrium_payoffs_r(p, eq)?,
    };
    vector_residual(d, &format!("{tag}_payoff"), &payoff);
    let pi = stationary_threshold(p, x, eq.mode);
    Ok(json!({
        "equilibrium": eq,
        "payoff_diagonal": payoff.diagonal(),
        "stationary": pi.probs,
    }))
}

fn equilibrium(a: &EquilibriumArgs) -> Outcome {
    let p = params(a.rates, a.r0)?;
    let mut d = Diagnostics::default();
    let mut result = serde_json::Map::new();
    let modes: &[Mode] = match a.mode {
        BothArg::N => &[Mode::N],
        BothArg::R => &[Mode::R],
        BothArg::Both => &[Mode::N, Mode::R],
    };
    let mut found = Vec::new();
    for &mode in modes {
        let eq = nash(&p, mode)?;
        let (tag, key) = match mode {
            Mode::N => ("n", "x_e"),
            Mode::R => ("r", "x_hat_e"),
        };
        result.insert(key.into(), json!(eq.threshold));
        result.insert(tag.into(), record_equilibrium(&p, &eq, &mut d, tag)?);
        found.push(eq);
    }
    if let [n, r] = found.as_slice() {
        d.check("reneging_not_lower", r.threshold >= n.threshold - 1e-12);
    }
    if a.ess {
        let xe = match found.iter().find(|e| e.mode == Mode::N) {
            Some(e) => e.threshold,
            None => nash(&p, Mode::N)?.threshold,
        };
        let top = xe.ceil() + 2.0;
        let count = (top / a.ess_step).round() as usize;
        let grid: Vec<f64> = (0..=count).map(|k| k as f64 * a.ess_step).collect();
        let report = ess_check(&p, xe, &grid)?;
        d.check("ess", report.is_ess);
        result.insert(
            "ess".into(),
            serde_json::to_value(&report).expect("finite report"),
        );
    }
    let out = OutputRecord::new("equilibrium", p, Value::Object(result), d.clone()).to_json();
    Ok((out, d))
}

fn welfare(a: &WelfareArgs) -> Outcome {
    let p = params(a.rates, a.r0)?;
    let mut d = Diagnostics::default();
    let x_max = match a.x_max {
        Some(v) => v,
        None => {
            let opt = feedback_queue::welfare::socially_optimal_threshold(&p)?;
            (opt.n_star + 5) as f64
        }
    };
    let curve = welfare_curve(&p, a.grid_step, x_max)?;
    let tol = WELFARE_TOL * (p.lambda() * p.r0()).max(1.0);
    let mut worst: f64 = 0.0;
    for pt in &curve.points {
        let t = Threshold::new(pt.x)?;
        for f in [welfare_n_forms(&p, t)?, welfare_r_forms(&p, t)?] {
            worst = worst.max((f.summation - f.little).abs());
            if let Some(c) = f.closed {
                worst = worst.max((f.summation - c).abs());
            }
        }
        if t.is_integer() {
            worst = worst.max((pt.s_n - pt.s_r).abs());
        }
    }
    d.residual("welfare_forms", worst, tol);
    d.check("unimodal_n", curve.unimodal_n);
    d.check("unimodal_r", curve.unimodal_r);
    let out = match a.format {
        Format::Csv => {
            eprintln!(
                "n* = {} (welfare {:.6}), unimodal: N {}, R {}",
                curve.optimum.n_star, curve.optimum.welfare, curve.unimodal_n, curve.unimodal_r
            );
            curve.to_csv()
        }
        Format::Json => {
            let result = serde_json::to_value(&curve).expect("finite curve");
            OutputRecord::new("welfare", p, result, d.clone()).to_json()
        }
    };
    Ok((out, d))
}

fn paradox(a: &ParadoxArgs) -> Outcome {
    let p = params(a.rates, a.r0)?;
    let mut d = Diagnostics::default();
    let result = match a.r0_2 {
        Some(r2) => {
            let (lo, hi) = if a.r0 <= r2 { (a.r0, r2) } else { (r2, a.r0) };
            let eq = nash(&p.with_reward(lo)?, Mode::N)?;
            let m = eq
                .critical
                .map(|c| c.m)
                .ok_or_else(|| Error::Precondition(format!("reward {lo} lies below every band")))?;
            let rep = paradox1_check(&p, m, lo, hi)?;
            d.check("payoff_falls_with_reward", rep.holds);
            serde_json::to_value(&rep).expect("finite report")
        }
        None => {
            let rep = paradox2_check(&p)?;
            d.check("reneging_lowers_payoffs", rep.holds);
            serde_json::to_value(&rep).expect("finite report")
        }
    };
    let out = OutputRecord::new("paradox", p, result, d.clone()).to_json();
    Ok((out, d))
}

fn estimate_json(e: &Estimate, analytic: Option<f64>) -> Value {
    json!({
        "mean": e.mean,
        "se": e.se,
        "n": e.n,
        "analytic": analytic,
        "z": analytic.map(|v| e.z_score(v)).filter(|z| z.is_finite()),
    })
}

fn simulate(a: &SimulateArgs) -> Outcome {
    let p = params(a.rates, a.r0)?;
    let x = Threshold::new(a.threshold)?;
    let mode = Mode::from(a.mode);
    let seed = if a.seed_from_entropy {
        rand::random()
    } else {
        a.seed
    };
    let mut cfg = SimConfig::new(p, x, mode)
        .with_seed(seed)
        .with_replications(a.reps)
        .with_horizon(a.events);
    if let Some(t) = a.tagged_threshold {
        if mode == Mode::N {
            return Err(Error::Precondition(
                "--tagged-threshold needs --mode r".into(),
            ));
        }
        cfg = cfg.with_tagged(Threshold::new(t)?);
    }
    let mut d = Diagnostics::default();
    let mut within = |name: String, e: &Estimate, v: f64| {
        if let Some(k) = a.check {
            d.check(&name, e.covers(v, k));
        }
    };
    let result = match a.start {
        Some((i, j)) => {
            let s = simulate_tagged(&cfg, (i, j))?;
            let (w, z) = match mode {
                Mode::N => {
                    let z = payoff_vector_n(&p, x)?.get(i, j)?;
                    (p.r0() - z, z)
                }
                Mode::R => {
                    let t = cfg.tagged_threshold;
                    let w = -payoff_vector_r_custom(&p.with_reward(0.0)?, x, t)?.get(i, j)?;
                    (w, payoff_vector_r_custom(&p, x, t)?.get(i, j)?)
                }
            };
            within("sojourn".into(), &s.sojourn, w);
            within("payoff".into(), &s.payoff, z);
            json!({
                "kind": "tagged",
                "start": [i, j],
                "seed": seed,
                "replications": a.reps,
                "sojourn": estimate_json(&s.sojourn, Some(w)),
                "payoff": estimate_json(&s.payoff, Some(z)),
                "renege": estimate_json(&s.renege, None),
            })
        }
        None => {
            let s = simulate_stationary(&cfg)?;
            let pi = stationary_threshold(&p, x, mode);
            let hist: Vec<Value> = s
                .histogram
                .iter()
                .enumerate()
                .map(|(k, e)| {
                    let v = pi.get(k);
                    within(format!("pi{k}"), e, v);
                    estimate_json(e, Some(v))
                })
                .collect();
            let renege = match mode {
                Mode::R if !x.is_integer() => Some(renege_probability(&p, x)?),
                _ => Some(0.0),
            };
            if let Some(v) = renege {
                within("renege".into(), &s.renege_fraction, v);
            }
            let u = (mode == Mode::N)
                .then(|| total_payoff(&p, x, x))
                .transpose()?;
            if let Some(v) = u {
                within("payoff_per_arrival".into(), &s.payoff_per_arrival, v);
            }
            if a.check.is_some() {
                d.check("event_race", s.race.passes());
            }
            json!({
                "kind": "stationary",
                "seed": seed,
                "events": s.events,
                "histogram": hist,
                "mean_length": estimate_json(&s.mean_length, Some(pi.mean())),
                "payoff_per_arrival": estimate_json(&s.payoff_per_arrival, u),
                "renege_fraction": estimate_json(&s.renege_fraction, renege),
                "joiners": s.joiners,
                "race": s.race,
            })
        }
    };
    let out = OutputRecord::new("simulate", p, result, d.clone()).to_json();
    Ok((out, d))
}

fn matrix(a: &MatrixArgs) -> Outcome {
    let p = params(a.rates, 0.0)?;
    let x = Threshold::new(a.threshold)?;
    let blocks = match a.variant {
        VariantArg::Nonreneging => build_nonreneging(&p, x),
        VariantArg::RenegingTagged => build_reneging_tagged(&p, x).0,
        VariantArg::RenegingAll => build_reneging_all(&p, x).0,
        VariantArg::RenegingCustom => {
            let t = a.tagged_threshold.ok_or_else(|| {
                Error::Precondition("the custom variant needs --tagged-threshold".into())
            })?;
            build_reneging_custom(&p, x, Threshold::new(t)?).0
        }
    };
    let full = assemble_full(&blocks);
    Ok((full.to_csv(), Diagnostics::default()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Sojourn(a) => sojourn(a),
        Command::Equilibrium(a) => equilibrium(a),
        Command::Welfare(a) => welfare(a),
        Command::Paradox(a) => paradox(a),
        Command::Simulate(a) => simulate(a),
        Command::Matrix(a) => matrix(a),
    };
    match outcome {
        Ok((out, d)) => {
            let mut stdout = std::io::stdout().lock();
            let _ = stdout.write_all(out.as_bytes());
            if !out.ends_with('\n') {
                let _ = stdout.write_all(b"\n");
            }
            if d.passed() {
                ExitCode::SUCCESS
            } else {
                eprintln!("failed checks: {}", d.failures().join(", "));
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
