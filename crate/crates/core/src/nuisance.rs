//! Outcome regressions `mu_t(x)` and propensities `e_t(x)`.

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::data::{Dataset, Label};
use crate::simgen::Scenario;
use crate::{Error, Result};

/// Propensities are clipped into `[CLIP_EPS, 1 - CLIP_EPS]`.
pub const CLIP_EPS: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    /// Silverman's rule per arm and dimension, floored at `1e-3`.
    Auto,
    Fixed(f64),
}

/// Nadaraya-Watson regression with a Gaussian product kernel for one arm.
#[derive(Debug, Clone)]
pub struct KernelArm {
    points: Vec<Vec<f64>>,
    ys: Vec<f64>,
    bandwidth: Vec<f64>,
    mean: f64,
}

impl KernelArm {
    fn fit(points: Vec<Vec<f64>>, ys: Vec<f64>, bandwidth: Bandwidth) -> KernelArm {
        let n = ys.len() as f64;
        let d = points[0].len();
        let mean = ys.iter().sum::<f64>() / n;
        let bandwidth = match bandwidth {
            Bandwidth::Fixed(h) => vec![h; d],
            Bandwidth::Auto => {
                let factor = (4.0 / ((d as f64 + 2.0) * n)).powf(1.0 / (d as f64 + 4.0));
                (0..d)
                    .map(|t| {
                        let m = points.iter().map(|p| p[t]).sum::<f64>() / n;
                        let var =
                            points.iter().map(|p| (p[t] - m).powi(2)).sum::<f64>() / (n - 1.0);
                        (var.sqrt() * factor).max(1e-3)
                    })
                    .collect()
            }
        };
        KernelArm { points, ys, bandwidth, mean }
    }

    pub fn bandwidth(&self) -> &[f64] {
        &self.bandwidth
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (p, y) in self.points.iter().zip(&self.ys) {
            let z2: f64 = p
                .iter()
                .zip(x)
                .zip(&self.bandwidth)
                .map(|((a, b), h)| ((a - b) / h).powi(2))
                .sum();
            let w = (-0.5 * z2).exp();
            num += w * y;
            den += w;
        }
        if den < 1e-12 {
            self.mean
        } else {
            num / den
        }
    }
}

#[derive(Debug, Clone)]
pub struct KernelRegression {
    pub plus: KernelArm,
    pub minus: KernelArm,
}

impl KernelRegression {
    pub fn predict(&self, t: Label, x: &[f64]) -> f64 {
        match t {
            Label::Plus => self.plus.predict(x),
            Label::Minus => self.minus.predict(x),
        }
    }
}

pub fn fit_kernel_regression(dataset: &Dataset, bandwidth: Bandwidth) -> Result<KernelRegression> {
    if let Bandwidth::Fixed(h) = bandwidth {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::Invalid(format!("bandwidth must be positive, got {h}")));
        }
    }
    let arm = |label: Label| -> Result<KernelArm> {
        let (points, ys): (Vec<_>, Vec<_>) = dataset
            .samples()
            .iter()
            .filter(|s| s.t == label)
            .map(|s| (s.x.clone(), s.y))
            .unzip();
        if ys.len() < 2 {
            return Err(Error::Invalid(format!(
                "treatment arm {label} has {} samples; kernel regression needs at least 2",
                ys.len()
            )));
        }
        Ok(KernelArm::fit(points, ys, bandwidth))
    };
    Ok(KernelRegression { plus: arm(Label::Plus)?, minus: arm(Label::Minus)? })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogisticStatus {
    Converged,
    MaxIter,
    /// The classes are (quasi-)separable; the fit is driven by clipping.
    Separated,
}

/// Logistic model of `P(T = +1 | x)` with intercept.
#[derive(Debug, Clone)]
pub struct LogisticModel {
    /// intercept first
    pub coef: Vec<f64>,
    pub status: LogisticStatus,
    pub iterations: usize,
}

impl LogisticModel {
    pub fn prob_plus(&self, x: &[f64]) -> f64 {
        let z = self.coef[0] + self.coef[1..].iter().zip(x).map(|(b, v)| b * v).sum::<f64>();
        sigmoid(z).clamp(CLIP_EPS, 1.0 - CLIP_EPS)
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn log_likelihood(design: &DMatrix<f64>, target: &DVector<f64>, beta: &DVector<f64>) -> f64 {
    let z = design * beta;
    z.iter()
        .zip(target.iter())
        .map(|(z, y)| {
            // log(1 + e^z), stable
            let softplus = if *z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
            y * z - softplus
        })
        .sum()
}

/// Maximum-likelihood logistic regression by damped Newton iterations.
pub fn fit_logistic(dataset: &Dataset, max_iter: usize, tol: f64) -> Result<LogisticModel> {
    let n = dataset.n();
    let p = dataset.d() + 1;
    let n_plus = dataset.samples().iter().filter(|s| s.t == Label::Plus).count();
    if n_plus == 0 || n_plus == n {
        return Err(Error::Invalid("logistic propensity model needs both labels".into()));
    }
    let design = DMatrix::from_fn(n, p, |i, j| if j == 0 { 1.0 } else { dataset.sample(i).x[j - 1] });
    let target = DVector::from_fn(n, |i, _| if dataset.sample(i).t == Label::Plus { 1.0 } else { 0.0 });

    let mut beta = DVector::zeros(p);
    let mut ll = log_likelihood(&design, &target, &beta);
    let mut status = LogisticStatus::MaxIter;
    let mut iterations = 0;
    for it in 0..max_iter {
        iterations = it + 1;
        let probs = (&design * &beta).map(sigmoid);
        let grad = design.transpose() * (&target - &probs);
        if grad.norm() < tol {
            status = LogisticStatus::Converged;
            break;
        }
        let weights = probs.map(|q| q * (1.0 - q));
        let mut hess = DMatrix::zeros(p, p);
        for i in 0..n {
            let row = design.row(i);
            hess += weights[i] * row.transpose() * row;
        }
        for j in 0..p {
            hess[(j, j)] += 1e-10;
        }
        let Some(chol) = hess.cholesky() else {
            status = LogisticStatus::Separated;
            break;
        };
        let dir = chol.solve(&grad);
        let mut step = 1.0;
        let mut improved = false;
        while step > 1e-10 {
            let cand = &beta + step * &dir;
            let cand_ll = log_likelihood(&design, &target, &cand);
            if cand_ll >= ll {
                beta = cand;
                ll = cand_ll;
                improved = true;
                break;
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }

    // Newton "converges" on separable data once the logits saturate; a
    // perfect split with every logit beyond +-5 means the MLE does not exist.
    let separated = status == LogisticStatus::Separated || {
        let z = &design * &beta;
        z.iter().zip(target.iter()).all(|(z, y)| (*z > 5.0 && *y > 0.5) || (*z < -5.0 && *y < 0.5))
    };
    if separated {
        status = LogisticStatus::Separated;
        warn!("propensity model: labels are separable, probabilities are clipped");
    }
    Ok(LogisticModel { coef: beta.iter().copied().collect(), status, iterations })
}

#[derive(Debug, Clone)]
pub enum OutcomeModel {
    Kernel(KernelRegression),
    Exact(Scenario),
}

#[derive(Debug, Clone)]
pub enum PropensityModel {
    Logistic(LogisticModel),
    /// `P(T = +1 | x)` is this constant.
    Constant(f64),
}

/// Outcome regressions together with a propensity model.
#[derive(Debug, Clone)]
pub struct NuisanceModel {
    pub outcome: OutcomeModel,
    pub propensity: PropensityModel,
}

impl NuisanceModel {
    pub fn mu(&self, t: Label, x: &[f64]) -> f64 {
        match &self.outcome {
            OutcomeModel::Kernel(k) => k.predict(t, x),
            OutcomeModel::Exact(sc) => sc.mean(x, t),
        }
    }

    pub fn e(&self, t: Label, x: &[f64]) -> f64 {
        let plus = match &self.propensity {
            PropensityModel::Logistic(m) => m.prob_plus(x),
            PropensityModel::Constant(c) => *c,
        };
        match t {
            Label::Plus => plus,
            Label::Minus => 1.0 - plus,
        }
    }

    /// Kernel outcome regression with Silverman bandwidths plus logistic propensities.
    pub fn fit(dataset: &Dataset) -> Result<NuisanceModel> {
        Ok(NuisanceModel {
            outcome: OutcomeModel::Kernel(fit_kernel_regression(dataset, Bandwidth::Auto)?),
            propensity: PropensityModel::Logistic(fit_logistic(dataset, 100, 1e-8)?),
        })
    }
}

/// The true nuisance functions of a simulated scenario.
pub fn exact_nuisance(scenario: &str) -> Result<NuisanceModel> {
    let sc: Scenario = scenario.parse()?;
    Ok(NuisanceModel { outcome: OutcomeModel::Exact(sc), propensity: PropensityModel::Constant(0.5) })
}
