use feedback_queue::analytics::{renege_probability, stationary_threshold, Mode};
use feedback_queue::equilibrium::{nash_n, nash_r, total_payoff};
use feedback_queue::sim::{
    simulate_renege_fraction, simulate_stationary, simulate_tagged, SimConfig,
};
use feedback_queue::solver::{payoff_vector_n, payoff_vector_r_all, sojourn_vector};
use feedback_queue::{ModelParams, Threshold};

const K: f64 = 3.0;

fn params(l: f64, m: f64, q: f64, r0: f64) -> ModelParams {
    ModelParams::new(l, m, q, r0).unwrap()
}

fn th(x: f64) -> Threshold {
    Threshold::new(x).unwrap()
}

#[test]
fn sojourn_from_an_empty_system() {
    let p = params(0.4, 0.6, 0.7, 0.0);
    let s = simulate_tagged(&SimConfig::new(p, th(0.5), Mode::N), (1, 1)).unwrap();
    assert!(s.sojourn.covers(1.0 / 0.42, K), "{:?}", s.sojourn);
}

#[test]
fn sojourn_without_feedback_is_one_service() {
    let p = params(0.9, 0.6, 1.0, 0.0);
    let s = simulate_tagged(&SimConfig::new(p, th(2.5), Mode::N), (1, 1)).unwrap();
    assert!(s.sojourn.covers(1.0 / 0.6, K), "{:?}", s.sojourn);
}

#[test]
fn tagged_payoffs_match_the_solver() {
    let p = params(1.0, 0.8, 0.4, 7.8);
    let x = th(2.073);
    let z = payoff_vector_n(&p, x).unwrap();
    let cfg = SimConfig::new(p, x, Mode::N).with_seed(3);
    for j in 1..=3 {
        let s = simulate_tagged(&cfg, (j, j)).unwrap();
        let want = z.get(j, j).unwrap();
        assert!(s.payoff.covers(want, K), "z{j}{j} = {want}: {:?}", s.payoff);
    }
    let s = simulate_tagged(&cfg, (1, 3)).unwrap();
    assert!(s.payoff.covers(z.get(1, 3).unwrap(), K));
}

#[test]
fn reneging_payoffs_match_the_solver() {
    let p = params(1.0, 0.8, 0.4, 7.8);
    let xh = th(nash_r(&p).unwrap().threshold);
    let zh = payoff_vector_r_all(&p, xh).unwrap();
    let cfg = SimConfig::new(p, xh, Mode::R).with_seed(4);
    for j in 1..=zh.depth() {
        let s = simulate_tagged(&cfg, (j, j)).unwrap();
        let want = zh.get(j, j).unwrap();
        assert!(
            s.payoff.covers(want, K),
            "z_hat{j}{j} = {want}: {:?}",
            s.payoff
        );
    }
}

#[test]
fn stationary_law_matches_the_analytic_law() {
    let p = params(1.0, 0.8, 0.4, 7.8);
    let x = th(2.073);
    let s = simulate_stationary(&SimConfig::new(p, x, Mode::N).with_seed(5)).unwrap();
    let pi = stationary_threshold(&p, x, Mode::N);
    for (k, want) in pi.probs.iter().enumerate() {
        assert!(
            s.histogram[k].covers(*want, K),
            "pi{k} = {want}: {:?}",
            s.histogram[k]
        );
    }
    assert!(s.race.passes(), "{:?}", s.race);
    assert!(
        s.race.gap.covers(1.0 / p.total_rate(), K),
        "{:?}",
        s.race.gap
    );
    assert!(s.events >= 1_000_000);
}

#[test]
fn integer_threshold_never_triggers_reneging() {
    let p = params(1.0, 0.8, 0.4, 0.0);
    let x = Threshold::integer(3);
    let r = simulate_stationary(&SimConfig::new(p, x, Mode::R).with_seed(6)).unwrap();
    let n = simulate_stationary(&SimConfig::new(p, x, Mode::N).with_seed(7)).unwrap();
    assert_eq!(r.renege_fraction.mean, 0.0);
    assert_eq!(r.histogram.len(), n.histogram.len());
    let pi = stationary_threshold(&p, x, Mode::N);
    for (k, want) in pi.probs.iter().enumerate() {
        assert!(r.histogram[k].covers(*want, K) && n.histogram[k].covers(*want, K));
        let gap = (r.histogram[k].mean - n.histogram[k].mean).abs();
        let se = r.histogram[k].se.hypot(n.histogram[k].se);
        assert!(gap <= K * se, "pi{k}: {gap} > {K} x {se}");
    }
}

#[test]
fn large_threshold_is_geometric() {
    let p = params(0.4, 0.6, 0.7, 0.0);
    let s = simulate_stationary(&SimConfig::new(p, Threshold::integer(50), Mode::N).with_seed(8))
        .unwrap();
    let rho = p.rho();
    for k in 0..6 {
        let want = (1.0 - rho) * rho.powi(k as i32);
        assert!(
            s.histogram[k].covers(want, K),
            "pi{k} = {want}: {:?}",
            s.histogram[k]
        );
    }
}

#[test]
fn renege_fraction_matches_the_closed_form() {
    let p = params(1.0, 0.8, 0.8, 0.0);
    let x = th(2.5);
    let est = simulate_renege_fraction(&SimConfig::new(p, x, Mode::R).with_seed(9)).unwrap();
    let want = renege_probability(&p, x).unwrap();
    assert!(est.n >= 2 && est.covers(want, K), "{want}: {est:?}");

    let none = SimConfig::new(params(1.0, 0.8, 1.0, 0.0), x, Mode::R).with_horizon(100_000);
    assert_eq!(simulate_renege_fraction(&none).unwrap().mean, 0.0);
    let n_mode = SimConfig::new(p, x, Mode::N);
    assert!(simulate_renege_fraction(&n_mode).is_err());
}

#[test]
fn payoff_per_arrival_matches_the_equilibrium_payoff() {
    let p = params(1.0, 0.8, 0.4, 7.8);
    let xe = th(nash_n(&p).unwrap().threshold);
    let s = simulate_stationary(&SimConfig::new(p, xe, Mode::N).with_seed(10)).unwrap();
    let u = total_payoff(&p, xe, xe).unwrap();
    assert!(
        s.payoff_per_arrival.covers(u, K),
        "U = {u}: {:?}",
        s.payoff_per_arrival
    );
}

#[test]
fn sojourn_from_an_inner_state() {
    let p = params(0.8, 1.0, 0.5, 0.0);
    let x = th(3.4);
    let w = sojourn_vector(&p, x).unwrap();
    let cfg = SimConfig::new(p, x, Mode::N)
        .with_seed(11)
        .with_replications(50_000);
    let s = simulate_tagged(&cfg, (2, 3)).unwrap();
    assert!(s.sojourn.covers(w.get(2, 3).unwrap(), K), "{:?}", s.sojourn);
}

#[test]
fn fixed_seed_is_deterministic() {
    let p = params(1.0, 0.8, 0.4, 7.8);
    let cfg = SimConfig::new(p, th(2.5), Mode::R)
        .with_seed(12)
        .with_replications(2_000)
        .with_horizon(50_000);
    assert_eq!(
        simulate_tagged(&cfg, (2, 3)).unwrap(),
        simulate_tagged(&cfg, (2, 3)).unwrap()
    );
    assert_eq!(
        simulate_stationary(&cfg).unwrap(),
        simulate_stationary(&cfg).unwrap()
    );
    let other = cfg.with_seed(13);
    assert_ne!(
        simulate_tagged(&cfg, (2, 3)).unwrap(),
        simulate_tagged(&other, (2, 3)).unwrap()
    );
}
