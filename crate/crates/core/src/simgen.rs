//! Synthetic data-generating processes.
//!
//! Every scenario draws covariates uniformly from `[-1, 1]^d`, assigns
//! treatment by a fair coin and adds Gaussian noise with standard deviation
//! [`SIGMA`] to a scenario-specific mean `m(x, t)`.
//!
//! # Random stream layout
//!
//! Draws come from ChaCha20 (`rand_chacha::ChaCha20Rng`), a counter-based
//! generator, seeded with `seed_from_u64(seed)`. Each draw type reads its own
//! stream, selected with `set_stream`:
//!
//! | stream | use |
//! |---|---|
//! | 0 | covariates, row-major (`x[0][0], x[0][1], ..., x[1][0], ...`) |
//! | 1 | treatment coin flips |
//! | 2 | outcome noise |
//! | 3 | Monte-Carlo evaluation points (see [`crate::eval`]) |
//!
//! A uniform `u in [0, 1)` is `(next_u64() >> 11) * 2^-53`; a coordinate is
//! `2u - 1`. A coin flip is the top bit of `next_u64()` (`1` means treat).
//! A standard normal is one Box-Muller draw `sqrt(-2 ln(1 - u1)) cos(2 pi u2)`
//! from two consecutive uniforms.

use std::str::FromStr;

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::data::{Dataset, Label, Sample};
use crate::{Error, Result};

pub const SIGMA: f64 = 0.1;

pub const STREAM_COVARIATES: u64 = 0;
pub const STREAM_TREATMENT: u64 = 1;
pub const STREAM_NOISE: u64 = 2;
pub const STREAM_MONTE_CARLO: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scenario {
    /// parabolic decision boundary
    Basic,
    /// treat inside a ring
    Complex,
    /// two disconnected treatment regions
    VeryComplex,
    /// `max(x2 + x3, 0) + t/2 * sign(x0 x1 x2 x3)`
    Regret4d,
    /// `max(x2 + x3, 0) + t/2 * sign(x0 x1)`
    Simple4d,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [
        Scenario::Basic,
        Scenario::Complex,
        Scenario::VeryComplex,
        Scenario::Regret4d,
        Scenario::Simple4d,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Scenario::Basic => "basic",
            Scenario::Complex => "complex",
            Scenario::VeryComplex => "very_complex",
            Scenario::Regret4d => "regret4d",
            Scenario::Simple4d => "simple4d",
        }
    }

    pub fn d(self) -> usize {
        match self {
            Scenario::Basic | Scenario::Complex | Scenario::VeryComplex => 2,
            Scenario::Regret4d | Scenario::Simple4d => 4,
        }
    }

    /// Noise-free mean outcome `m(x, t)`; lower is better.
    pub fn mean(self, x: &[f64], t: Label) -> f64 {
        let tt = t.sign();
        match self {
            Scenario::Basic => {
                let f = -2.0 * tt * (x[1] - 0.5 * x[0] * x[0] + 0.25);
                1.0 + 2.0 * x[0] + x[1] + f
            }
            Scenario::Complex => {
                let r2 = x[0] * x[0] + x[1] * x[1];
                let f = -2.0 * tt * (0.4f64.powi(2) - r2) * (r2 - 0.9f64.powi(2));
                1.0 + 2.0 * x[0] + x[1] + f
            }
            Scenario::VeryComplex => {
                let (a, b) = (x[0], x[1]);
                let peaks = 3.0 * (1.0 - a).powi(2) * (-a * a - (b + 1.0).powi(2)).exp()
                    - 10.0 * (a / 5.0 - a.powi(3) - b.powi(5)) * (-a * a - b * b).exp()
                    - (-(a + 1.0).powi(2) - b * b).exp() / 3.0
                    - 1.0;
                1.0 + 2.0 * a + b - tt * peaks
            }
            Scenario::Regret4d => {
                (x[2] + x[3]).max(0.0) + 0.5 * tt * sign(x[0] * x[1] * x[2] * x[3])
            }
            Scenario::Simple4d => (x[2] + x[3]).max(0.0) + 0.5 * tt * sign(x[0] * x[1]),
        }
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Scenario> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.id() == s)
            .ok_or_else(|| Error::UnknownScenario(s.to_string()))
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.id())
    }
}

/// `sign` with `sign(0) = 0`.
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub(crate) fn stream(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub(crate) fn uniform01(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

pub(crate) fn uniform_sym(rng: &mut impl RngCore) -> f64 {
    2.0 * uniform01(rng) - 1.0
}

fn standard_normal(rng: &mut impl RngCore) -> f64 {
    let u1 = 1.0 - uniform01(rng);
    let u2 = uniform01(rng);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Uniform covariate draws on `[-1, 1]^d` from the given stream.
pub fn draw_points(d: usize, n: usize, seed: u64, stream_id: u64) -> Vec<Vec<f64>> {
    let mut rng = stream(seed, stream_id);
    (0..n).map(|_| (0..d).map(|_| uniform_sym(&mut rng)).collect()).collect()
}

pub fn generate(scenario: Scenario, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Invalid("n must be at least 1".into()));
    }
    let xs = draw_points(scenario.d(), n, seed, STREAM_COVARIATES);
    let mut coin = stream(seed, STREAM_TREATMENT);
    let mut noise = stream(seed, STREAM_NOISE);
    let samples = xs
        .into_iter()
        .map(|x| {
            let t = if coin.next_u64() >> 63 == 1 { Label::Plus } else { Label::Minus };
            let y = scenario.mean(&x, t) + SIGMA * standard_normal(&mut noise);
            Sample { x, t, y }
        })
        .collect();
    Dataset::new(samples)
}

pub fn true_mean(scenario: Scenario, x: &[f64], t: Label) -> Result<f64> {
    check_dim(scenario, x)?;
    Ok(scenario.mean(x, t))
}

/// Pointwise optimal action; ties go to `-1`.
pub fn optimal_decision(scenario: Scenario, x: &[f64]) -> Result<Label> {
    check_dim(scenario, x)?;
    Ok(optimal_label(scenario, x))
}

pub(crate) fn optimal_label(scenario: Scenario, x: &[f64]) -> Label {
    if scenario.mean(x, Label::Plus) < scenario.mean(x, Label::Minus) {
        Label::Plus
    } else {
        Label::Minus
    }
}

fn check_dim(scenario: Scenario, x: &[f64]) -> Result<()> {
    if x.len() != scenario.d() {
        return Err(Error::Dimension { expected: scenario.d(), got: x.len() });
    }
    Ok(())
}
