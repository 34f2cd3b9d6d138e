//! Policy evaluation: empirical objective on data, Monte-Carlo value and
//! regret on simulated scenarios.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Label, Policy};
use crate::error::{Error, Result};
use crate::scores::ScoreVector;
use crate::simgen::{optimal_label, stream, uniform_sym, Scenario, STREAM_MONTE_CARLO};

/// Summary emitted by `eval`. Fields that the chosen mode does not compute
/// are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub empirical_objective: Option<f64>,
    pub policy_value: Option<f64>,
    pub policy_value_se: Option<f64>,
    pub regret: Option<f64>,
    pub regret_se: Option<f64>,
    pub mc_samples: usize,
    pub seed: Option<u64>,
}

/// Mean and standard error of a Monte-Carlo average.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub se: f64,
}

#[derive(Default)]
struct Welford {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, v: f64) {
        self.n += 1;
        let delta = v - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (v - self.mean);
    }

    fn finish(self) -> McEstimate {
        let se = if self.n > 1 {
            (self.m2 / (self.n - 1) as f64 / self.n as f64).sqrt()
        } else {
            0.0
        };
        McEstimate { mean: self.mean, se }
    }
}

/// Weighted mismatch `(1/n') sum psi_i * I(T_i != pi(x_i))` over the kept
/// samples.
pub fn empirical_objective(policy: &Policy, dataset: &Dataset, scores: &ScoreVector) -> Result<f64> {
    if scores.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (&r, &psi) in scores.kept.iter().zip(&scores.psi) {
        if r >= dataset.n() {
            return Err(Error::Invalid(format!("score refers to row {r} but the data has {} rows", dataset.n())));
        }
        let s = dataset.sample(r);
        check_policy_dim(policy, s.x.len())?;
        if policy.decide(&s.x) != s.t {
            total += psi;
        }
    }
    Ok(total / scores.len() as f64)
}

fn check_policy_dim(policy: &Policy, d: usize) -> Result<()> {
    match policy.boxes.iter().find(|b| b.dim() != d) {
        Some(b) => Err(Error::Dimension { expected: d, got: b.dim() }),
        None => Ok(()),
    }
}

fn mc_points(scenario: Scenario, n_mc: usize, seed: u64) -> impl Iterator<Item = Vec<f64>> {
    let mut rng = stream(seed, STREAM_MONTE_CARLO);
    let d = scenario.d();
    (0..n_mc).map(move |_| (0..d).map(|_| uniform_sym(&mut rng)).collect())
}

fn mc_check(policy: &Policy, scenario: Scenario, n_mc: usize) -> Result<()> {
    if n_mc == 0 {
        return Err(Error::Invalid("n_mc must be at least 1".into()));
    }
    check_policy_dim(policy, scenario.d())
}

/// Noise-free policy value with its Monte-Carlo standard error.
pub fn policy_value_mc_se(policy: &Policy, scenario: Scenario, n_mc: usize, seed: u64) -> Result<McEstimate> {
    mc_check(policy, scenario, n_mc)?;
    let mut acc = Welford::default();
    for x in mc_points(scenario, n_mc, seed) {
        acc.push(scenario.mean(&x, policy.decide(&x)));
    }
    Ok(acc.finish())
}

/// Average of `m(x, pi(x))` over `n_mc` uniform draws.
pub fn policy_value_mc(policy: &Policy, scenario: Scenario, n_mc: usize, seed: u64) -> Result<f64> {
    policy_value_mc_se(policy, scenario, n_mc, seed).map(|e| e.mean)
}

/// Regret against the pointwise optimal policy on common draws, with the
/// standard error of the paired differences.
pub fn regret_se(policy: &Policy, scenario: Scenario, n_mc: usize, seed: u64) -> Result<McEstimate> {
    mc_check(policy, scenario, n_mc)?;
    Ok(regret_accumulate(|x| policy.decide(x), scenario, mc_points(scenario, n_mc, seed)))
}

/// Regret of an arbitrary decision rule, e.g. the analytic optimum itself.
pub fn regret_of_rule(rule: impl Fn(&[f64]) -> Label, scenario: Scenario, n_mc: usize, seed: u64) -> Result<McEstimate> {
    if n_mc == 0 {
        return Err(Error::Invalid("n_mc must be at least 1".into()));
    }
    Ok(regret_accumulate(rule, scenario, mc_points(scenario, n_mc, seed)))
}

pub fn regret(policy: &Policy, scenario: Scenario, n_mc: usize, seed: u64) -> Result<f64> {
    regret_se(policy, scenario, n_mc, seed).map(|e| e.mean)
}

/// Regret averaged over a fixed evaluation pool.
pub fn regret_on_points(policy: &Policy, scenario: Scenario, points: &[Vec<f64>]) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::Invalid("empty evaluation pool".into()));
    }
    check_policy_dim(policy, scenario.d())?;
    if let Some(x) = points.iter().find(|x| x.len() != scenario.d()) {
        return Err(Error::Dimension { expected: scenario.d(), got: x.len() });
    }
    Ok(regret_accumulate(|x| policy.decide(x), scenario, points.iter().cloned()).mean)
}

fn regret_accumulate(
    rule: impl Fn(&[f64]) -> Label,
    scenario: Scenario,
    points: impl Iterator<Item = Vec<f64>>,
) -> McEstimate {
    let mut acc = Welford::default();
    for x in points {
        let chosen = rule(&x);
        let best = optimal_label(scenario, &x);
        let diff = if chosen == best { 0.0 } else { scenario.mean(&x, chosen) - scenario.mean(&x, best) };
        acc.push(diff);
    }
    acc.finish()
}

/// `sqrt(1 + ln 2) * sqrt(2 M)`.
pub fn rademacher_bound(m_max: usize) -> f64 {
    (1.0 + std::f64::consts::LN_2).sqrt() * (2.0 * m_max as f64).sqrt()
}
