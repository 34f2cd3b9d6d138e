//! Per-sample weights `psi` turning policy search into weighted mismatch
//! minimization.

use std::str::FromStr;

use log::warn;

use crate::data::{Dataset, Label};
use crate::nuisance::{NuisanceModel, CLIP_EPS};
use crate::{Error, Result};

/// Scores with `|psi| <` this are dropped.
pub const ZERO_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    /// direct method (plug-in outcome differences)
    Dm,
    /// inverse propensity weighting
    Ips,
    /// doubly robust
    Dr,
}

impl Method {
    pub fn id(self) -> &'static str {
        match self {
            Method::Dm => "dm",
            Method::Ips => "ips",
            Method::Dr => "dr",
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Method> {
        match s.to_ascii_lowercase().as_str() {
            "dm" => Ok(Method::Dm),
            "ips" => Ok(Method::Ips),
            "dr" => Ok(Method::Dr),
            other => Err(Error::Invalid(format!("unknown method `{other}` (dm|ips|dr)"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.id())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    pub psi: Vec<f64>,
    /// dataset row of each score
    pub kept: Vec<usize>,
    pub method: Method,
}

impl ScoreVector {
    /// Builds a score vector from raw values; every value must be non-zero.
    pub fn new(psi: Vec<f64>, kept: Vec<usize>, method: Method) -> Result<ScoreVector> {
        if psi.len() != kept.len() {
            return Err(Error::Dimension { expected: psi.len(), got: kept.len() });
        }
        if psi.is_empty() {
            return Err(Error::Invalid("score vector is empty".into()));
        }
        if let Some(v) = psi.iter().find(|v| **v == 0.0 || !v.is_finite()) {
            return Err(Error::Invalid(format!("invalid score {v}")));
        }
        Ok(ScoreVector { psi, kept, method })
    }

    pub fn len(&self) -> usize {
        self.psi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.psi.is_empty()
    }

    /// Treatment labels of the retained rows, in score order.
    pub fn labels(&self, dataset: &Dataset) -> Vec<Label> {
        self.kept.iter().map(|&r| dataset.sample(r).t).collect()
    }
}

pub fn psi_dm(t: Label, mu_minus: f64, mu_plus: f64) -> f64 {
    t.sign() * (mu_minus - mu_plus)
}

fn check_propensity(e_t: f64) -> Result<()> {
    // small slack so that 1 - 0.99 style values pass
    if !(CLIP_EPS - 1e-12..=1.0 - CLIP_EPS + 1e-12).contains(&e_t) {
        return Err(Error::Invalid(format!("propensity {e_t} outside [{CLIP_EPS}, {}]", 1.0 - CLIP_EPS)));
    }
    Ok(())
}

pub fn psi_ips(y: f64, e_t: f64) -> Result<f64> {
    check_propensity(e_t)?;
    Ok(-y / e_t)
}

pub fn psi_dr(t: Label, y: f64, mu_minus: f64, mu_plus: f64, e_t: f64) -> Result<f64> {
    let mu_t = match t {
        Label::Plus => mu_plus,
        Label::Minus => mu_minus,
    };
    Ok(psi_dm(t, mu_minus, mu_plus) + psi_ips(y, e_t)? + mu_t / e_t)
}

/// Scores every sample; near-zero scores are dropped and the survivors keep
/// their original order.
pub fn compute_scores(dataset: &Dataset, model: &NuisanceModel, method: Method) -> Result<ScoreVector> {
    let mut psi = Vec::with_capacity(dataset.n());
    let mut kept = Vec::with_capacity(dataset.n());
    for (row, s) in dataset.samples().iter().enumerate() {
        let value = match method {
            Method::Dm => psi_dm(s.t, model.mu(Label::Minus, &s.x), model.mu(Label::Plus, &s.x)),
            Method::Ips => psi_ips(s.y, model.e(s.t, &s.x))?,
            Method::Dr => psi_dr(
                s.t,
                s.y,
                model.mu(Label::Minus, &s.x),
                model.mu(Label::Plus, &s.x),
                model.e(s.t, &s.x),
            )?,
        };
        if value.abs() < ZERO_THRESHOLD {
            continue;
        }
        psi.push(value);
        kept.push(row);
    }
    let dropped = dataset.n() - psi.len();
    if dropped > 0 {
        warn!("dropped {dropped} samples with zero score");
    }
    if psi.is_empty() {
        return Err(Error::Invalid("all scores are zero".into()));
    }
    Ok(ScoreVector { psi, kept, method })
}

/// Divides every score by the population standard deviation of the scores.
pub fn scale_scores(scores: &ScoreVector) -> Result<ScoreVector> {
    let n = scores.psi.len();
    if n < 2 {
        return Err(Error::Invalid("scaling needs at least two scores".into()));
    }
    let mean = scores.psi.iter().sum::<f64>() / n as f64;
    let var = scores.psi.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let sigma = var.sqrt();
    if sigma == 0.0 || !sigma.is_finite() {
        return Err(Error::Invalid("scores have zero standard deviation".into()));
    }
    Ok(ScoreVector {
        psi: scores.psi.iter().map(|v| v / sigma).collect(),
        kept: scores.kept.clone(),
        method: scores.method,
    })
}
