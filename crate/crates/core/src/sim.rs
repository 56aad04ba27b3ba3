//! Discrete-event simulation of the feedback queue.
//!
//! Customers are held in a FIFO with the one at the front in service. Two
//! clocks drive the system: the next arrival epoch and, while the server is
//! busy, the completion epoch of the current service. A completed service
//! succeeds with probability `q`; otherwise the customer goes to the back of
//! the line, or reneges in the reneging game when her threshold says so.
//!
//! Replication `r` draws from ChaCha8 stream `r` under the configured seed,
//! so results are reproducible whatever the thread count.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytics::Mode;
use crate::error::{Error, Result};
use crate::model::{ModelParams, StateSpace, Threshold};

/// Chi-square critical value for one degree of freedom at level 0.001.
pub const CHI2_1DF_999: f64 = 10.828;

/// Stream reserved for single-path runs, away from replication streams.
const ERGODIC_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub params: ModelParams,
    /// Threshold of every non-tagged customer.
    pub threshold: Threshold,
    /// Threshold of the tagged customer.
    pub tagged_threshold: Threshold,
    pub mode: Mode,
    pub replications: usize,
    /// Measured events in a single-path run, warmup excluded.
    pub horizon: usize,
    pub seed: u64,
    /// Warmup length as a fraction of the horizon, run before measuring.
    pub warmup: f64,
    /// Number of batches for batch-means standard errors.
    pub batches: usize,
}

impl SimConfig {
    pub fn new(params: ModelParams, threshold: Threshold, mode: Mode) -> Self {
        Self {
            params,
            threshold,
            tagged_threshold: threshold,
            mode,
            replications: 100_000,
            horizon: 1_000_000,
            seed: 0,
            warmup: 0.1,
            batches: 100,
        }
    }

    pub fn with_tagged(mut self, x_tag: Threshold) -> Self {
        self.tagged_threshold = x_tag;
        self
    }

    pub fn with_replications(mut self, n: usize) -> Self {
        self.replications = n;
        self
    }

    pub fn with_horizon(mut self, events: usize) -> Self {
        self.horizon = events;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications < 2 {
            return Err(Error::Simulation("need at least two replications".into()));
        }
        if self.batches < 2 || self.horizon < 10 * self.batches {
            return Err(Error::Simulation(
                "horizon too short for the requested batches".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.warmup) {
            return Err(Error::Simulation("warmup must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Depth of the state space the analytic chain uses in this mode.
    pub fn depth(&self) -> usize {
        match self.mode {
            Mode::N => self.threshold.ceil() + 1,
            Mode::R => self.threshold.floor() + 1,
        }
    }
}

/// A sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

impl Estimate {
    /// `|mean - value| <= k se`, with a floor for exactly constant samples.
    pub fn covers(&self, value: f64, k: f64) -> bool {
        (self.mean - value).abs() <= k * self.se + 1e-12 * value.abs().max(1.0)
    }

    /// Distance from `value` in standard errors.
    pub fn z_score(&self, value: f64) -> f64 {
        if self.se == 0.0 {
            if self.mean == value {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (self.mean - value) / self.se
        }
    }
}

/// Running mean and variance.
#[derive(Debug, Clone, Copy, Default)]
pub struct Welford {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Welford {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn estimate(&self) -> Estimate {
        let se = if self.n > 1 {
            (self.m2 / (self.n - 1) as f64 / self.n as f64).sqrt()
        } else {
            f64::INFINITY
        };
        Estimate {
            mean: self.mean,
            se,
            n: self.n,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Customer {
    tagged: bool,
    threshold: Threshold,
    joined: f64,
    /// Batch the customer arrived in, if she is being measured.
    batch: Option<usize>,
}

enum Event {
    Arrival { joined: bool },
    Success(Customer),
    Feedback,
    Renege(Customer),
}

struct Engine {
    params: ModelParams,
    others: Threshold,
    mode: Mode,
    rng: ChaCha8Rng,
    arrival: Exp<f64>,
    service: Exp<f64>,
    now: f64,
    next_arrival: f64,
    service_end: f64,
    queue: VecDeque<Customer>,
    /// Largest length allowed at any epoch.
    cap: usize,
    /// Largest length allowed right after a failed service.
    feedback_cap: usize,
    /// Batch label given to arriving customers, `None` when not measuring.
    label: Option<usize>,
}

impl Engine {
    fn new(config: &SimConfig, stream: u64, cap: usize) -> Result<Self> {
        let p = config.params;
        let arrival = Exp::new(p.lambda()).map_err(|e| Error::Simulation(e.to_string()))?;
        let service = Exp::new(p.mu()).map_err(|e| Error::Simulation(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(stream);
        let first = arrival.sample(&mut rng);
        let x = config.threshold;
        Ok(Self {
            params: p,
            others: x,
            mode: config.mode,
            rng,
            arrival,
            service,
            now: 0.0,
            next_arrival: first,
            service_end: f64::INFINITY,
            queue: VecDeque::with_capacity(cap + 1),
            cap,
            feedback_cap: match config.mode {
                Mode::N => cap,
                Mode::R => x.floor() + 1,
            },
            label: None,
        })
    }

    fn start_service(&mut self) {
        self.service_end = if self.queue.is_empty() {
            f64::INFINITY
        } else {
            self.now + self.service.sample(&mut self.rng)
        };
    }

    /// Advance to the next event, returning the time elapsed.
    fn step(&mut self) -> Result<(f64, Event)> {
        let before = self.now;
        let event = if self.next_arrival < self.service_end {
            self.now = self.next_arrival;
            self.next_arrival = self.now + self.arrival.sample(&mut self.rng);
            let position = self.queue.len() + 1;
            let u = self.others.join_probability(position);
            let joined = u >= 1.0 || (u > 0.0 && self.rng.random::<f64>() < u);
            if joined {
                self.queue.push_back(Customer {
                    tagged: false,
                    threshold: self.others,
                    joined: self.now,
                    batch: self.label,
                });
                if self.queue.len() == 1 {
                    self.start_service();
                }
            }
            Event::Arrival { joined }
        } else {
            self.now = self.service_end;
            let head = self
                .queue
                .pop_front()
                .ok_or_else(|| Error::Simulation("service ended on an empty queue".into()))?;
            let event = if self.rng.random::<f64>() < self.params.q() {
                Event::Success(head)
            } else {
                let position = self.queue.len() + 1;
                if position > self.feedback_cap {
                    return Err(Error::Simulation(format!(
                        "{position} customers at a failed service exceeds {}",
                        self.feedback_cap
                    )));
                }
                let stays = match self.mode {
                    Mode::N => true,
                    Mode::R => {
                        let u = head.threshold.join_probability(position);
                        u >= 1.0 || (u > 0.0 && self.rng.random::<f64>() < u)
                    }
                };
                if stays {
                    self.queue.push_back(head);
                    Event::Feedback
                } else {
                    Event::Renege(head)
                }
            };
            self.start_service();
            event
        };
        if self.queue.len() > self.cap {
            return Err(Error::Simulation(format!(
                "queue length {} exceeds {}",
                self.queue.len(),
                self.cap
            )));
        }
        Ok((self.now - before, event))
    }
}

/// Outcome of tagged-customer replications from a fixed start state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaggedSimResult {
    pub start: (usize, usize),
    pub sojourn: Estimate,
    /// `r0` on success, nothing on reneging, minus the time spent.
    pub payoff: Estimate,
    pub renege: Estimate,
}

struct TaggedOutcome {
    sojourn: f64,
    payoff: f64,
    reneged: bool,
}

fn tagged_replication(
    config: &SimConfig,
    start: (usize, usize),
    rep: u64,
) -> Result<TaggedOutcome> {
    let (i, j) = start;
    let cap = (config.threshold.ceil() + 1).max(j);
    let mut e = Engine::new(config, rep, cap)?;
    for k in 1..=j {
        let tagged = k == i;
        e.queue.push_back(Customer {
            tagged,
            threshold: if tagged {
                config.tagged_threshold
            } else {
                config.threshold
            },
            joined: 0.0,
            batch: None,
        });
    }
    e.start_service();
    loop {
        match e.step()?.1 {
            Event::Success(c) if c.tagged => {
                return Ok(TaggedOutcome {
                    sojourn: e.now,
                    payoff: config.params.r0() - e.now,
                    reneged: false,
                })
            }
            Event::Renege(c) if c.tagged => {
                return Ok(TaggedOutcome {
                    sojourn: e.now,
                    payoff: -e.now,
                    reneged: true,
                })
            }
            _ => {}
        }
    }
}

/// Sojourn and payoff of a tagged customer starting at position `i` with
/// `j` customers present.
pub fn simulate_tagged(config: &SimConfig, start: (usize, usize)) -> Result<TaggedSimResult> {
    config.validate()?;
    let (i, j) = start;
    StateSpace::new(config.depth()).index(i, j)?;
    let outcomes = (0..config.replications as u64)
        .into_par_iter()
        .map(|rep| tagged_replication(config, start, rep))
        .collect::<Result<Vec<_>>>()?;
    let (mut s, mut p, mut r) = (Welford::default(), Welford::default(), Welford::default());
    for o in &outcomes {
        s.push(o.sojourn);
        p.push(o.payoff);
        r.push(if o.reneged { 1.0 } else { 0.0 });
    }
    Ok(TaggedSimResult {
        start,
        sojourn: s.estimate(),
        payoff: p.estimate(),
        renege: r.estimate(),
    })
}

/// Event-type counts and gaps observed while the server was busy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RaceStats {
    pub arrivals: u64,
    pub services: u64,
    /// Pearson statistic against `lambda : mu`.
    pub chi_square: f64,
    /// Mean time between consecutive events while busy.
    pub gap: Estimate,
}

impl RaceStats {
    pub fn passes(&self) -> bool {
        self.chi_square < CHI2_1DF_999
    }
}

/// Long-run statistics from one path started empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationarySimResult {
    /// Time-average fraction of time with `k` customers, per `k`.
    pub histogram: Vec<Estimate>,
    pub mean_length: Estimate,
    /// Realised payoff per arrival, balkers counting 0.
    pub payoff_per_arrival: Estimate,
    /// Fraction of joining customers who renege.
    pub renege_fraction: Estimate,
    pub joiners: u64,
    pub events: usize,
    pub race: RaceStats,
}

#[derive(Clone, Default)]
struct Batch {
    time: f64,
    occupancy: Vec<f64>,
    arrivals: u64,
    payoff: f64,
    resolved: u64,
    reneges: u64,
}

fn run_path(config: &SimConfig) -> Result<StationarySimResult> {
    config.validate()?;
    let cap = config.threshold.ceil() + 1;
    let mut e = Engine::new(config, ERGODIC_STREAM, cap)?;
    let warm = (config.warmup * config.horizon as f64) as usize;
    let measured_events = config.horizon;
    let end = warm + measured_events;
    let per_batch = measured_events.div_ceil(config.batches);
    let mut batches = vec![
        Batch {
            occupancy: vec![0.0; cap + 1],
            ..Batch::default()
        };
        config.batches
    ];
    let (lam, mu) = (config.params.lambda(), config.params.mu());
    let (mut busy_arrivals, mut busy_services) = (0u64, 0u64);
    let mut gaps = Welford::default();
    let mut pending = 0u64;
    let r0 = config.params.r0();

    let mut k = 0usize;
    while k < end || pending > 0 {
        let measuring = k >= warm && k < end;
        let batch = measuring.then(|| ((k - warm) / per_batch).min(config.batches - 1));
        e.label = batch;
        let len = e.queue.len();
        let (dt, event) = e.step()?;
        if let Some(b) = batch {
            let bt = &mut batches[b];
            bt.time += dt;
            bt.occupancy[len] += dt;
            if len > 0 {
                gaps.push(dt);
                match event {
                    Event::Arrival { .. } => busy_arrivals += 1,
                    _ => busy_services += 1,
                }
            }
        }
        match event {
            Event::Arrival { joined } => {
                if let Some(b) = batch {
                    batches[b].arrivals += 1;
                    if joined {
                        pending += 1;
                    }
                }
            }
            Event::Success(c) | Event::Renege(c) => {
                if let Some(b) = c.batch {
                    let reneged = matches!(event, Event::Renege(_));
                    let bt = &mut batches[b];
                    bt.resolved += 1;
                    bt.payoff += if reneged { 0.0 } else { r0 } - (e.now - c.joined);
                    if reneged {
                        bt.reneges += 1;
                    }
                    pending -= 1;
                }
            }
            Event::Feedback => {}
        }
        k += 1;
    }

    let mut histogram = vec![Welford::default(); cap + 1];
    let (mut mean_len, mut payoff, mut renege) =
        (Welford::default(), Welford::default(), Welford::default());
    let mut joiners = 0;
    for b in &batches {
        let mut m = 0.0;
        for (n, occ) in b.occupancy.iter().enumerate() {
            let frac = occ / b.time;
            histogram[n].push(frac);
            m += n as f64 * frac;
        }
        mean_len.push(m);
        payoff.push(b.payoff / b.arrivals.max(1) as f64);
        renege.push(if b.resolved > 0 {
            b.reneges as f64 / b.resolved as f64
        } else {
            0.0
        });
        joiners += b.resolved;
    }
    let n = (busy_arrivals + busy_services) as f64;
    let expect_a = n * lam / (lam + mu);
    let expect_s = n * mu / (lam + mu);
    let chi_square = (busy_arrivals as f64 - expect_a).powi(2) / expect_a
        + (busy_services as f64 - expect_s).powi(2) / expect_s;
    Ok(StationarySimResult {
        histogram: histogram.iter().map(Welford::estimate).collect(),
        mean_length: mean_len.estimate(),
        payoff_per_arrival: payoff.estimate(),
        renege_fraction: renege.estimate(),
        joiners,
        events: k,
        race: RaceStats {
            arrivals: busy_arrivals,
            services: busy_services,
            chi_square,
            gap: gaps.estimate(),
        },
    })
}

/// Time-average queue-length law, payoff per arrival and event-race
/// statistics from a single long path.
pub fn simulate_stationary(config: &SimConfig) -> Result<StationarySimResult> {
    run_path(config)
}

/// Fraction of joining customers who renege, from a single long path.
pub fn simulate_renege_fraction(config: &SimConfig) -> Result<Estimate> {
    if config.mode != Mode::R {
        return Err(Error::Simulation(
            "reneging is only possible in the reneging game".into(),
        ));
    }
    Ok(run_path(config)?.renege_fraction)
}
