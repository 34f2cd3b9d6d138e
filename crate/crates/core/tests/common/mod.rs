//! Random instance generators and checks shared by the integration suites.
#![allow(dead_code)]

use boxpolicy::data::{Dataset, Hyperbox, Label, Policy, Sample};
use boxpolicy::lp::{LinearProgram, LpSolution, Sense};
use boxpolicy::master::MasterProblem;
use boxpolicy::pricing::PricingInstance;
use boxpolicy::scores::{Method, ScoreVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const LP_TOL: f64 = 1e-7;

fn signed_weight(rng: &mut ChaCha8Rng) -> f64 {
    let v = rng.gen_range(0.1..2.0);
    if rng.gen_bool(0.5) {
        v
    } else {
        -v
    }
}

fn random_label(rng: &mut ChaCha8Rng) -> Label {
    if rng.gen_bool(0.5) {
        Label::Plus
    } else {
        Label::Minus
    }
}

/// LP with finite bounds, feasible at a random point inside the bounds.
pub fn random_lp(rng: &mut ChaCha8Rng) -> LinearProgram {
    let n = rng.gen_range(1..=30);
    let m = rng.gen_range(0..=30);
    let mut lp = LinearProgram::default();
    let mut x0 = Vec::new();
    for _ in 0..n {
        let lo = rng.gen_range(-3.0..1.0);
        let hi = lo + rng.gen_range(0.0..4.0);
        lp.add_var(rng.gen_range(-5.0..5.0), lo, hi);
        x0.push(rng.gen_range(lo..=hi));
    }
    for _ in 0..m {
        let coeffs: Vec<(usize, f64)> =
            (0..n).filter_map(|j| rng.gen_bool(0.7).then(|| (j, rng.gen_range(-4.0..4.0)))).collect();
        let act: f64 = coeffs.iter().map(|&(j, a)| a * x0[j]).sum();
        let (sense, rhs) = match rng.gen_range(0..3) {
            0 => (Sense::Le, act + rng.gen_range(0.0..2.0)),
            1 => (Sense::Ge, act - rng.gen_range(0.0..2.0)),
            _ => (Sense::Eq, act),
        };
        lp.add_row(coeffs, sense, rhs);
    }
    lp
}

pub fn row_activity(lp: &LinearProgram, r: usize, x: &[f64]) -> f64 {
    lp.rows[r].coeffs.iter().map(|&(j, a)| a * x[j]).sum()
}

/// Primal feasibility, dual signs, complementary slackness and a zero
/// duality gap, all within [`LP_TOL`].
pub fn check_lp_optimality(lp: &LinearProgram, sol: &LpSolution) -> Result<(), String> {
    let y = &sol.row_duals;
    if y.len() != lp.rows.len() || sol.x.len() != lp.num_vars() {
        return Err("solution has wrong dimensions".into());
    }
    for (r, row) in lp.rows.iter().enumerate() {
        let act = row_activity(lp, r, &sol.x);
        let (feasible, sign_ok) = match row.sense {
            Sense::Le => (act <= row.rhs + LP_TOL, y[r] <= LP_TOL),
            Sense::Ge => (act >= row.rhs - LP_TOL, y[r] >= -LP_TOL),
            Sense::Eq => ((act - row.rhs).abs() <= LP_TOL, true),
        };
        if !feasible {
            return Err(format!("row {r} violated"));
        }
        if !sign_ok {
            return Err(format!("row {r} dual {} has the wrong sign", y[r]));
        }
        if (y[r] * (act - row.rhs)).abs() > LP_TOL {
            return Err(format!("row {r} complementary slackness {}", y[r] * (act - row.rhs)));
        }
    }
    let mut reduced = lp.objective.clone();
    for (r, row) in lp.rows.iter().enumerate() {
        for &(j, a) in &row.coeffs {
            reduced[j] -= a * y[r];
        }
    }
    let mut dual: f64 = lp.rows.iter().zip(y).map(|(row, yr)| row.rhs * yr).sum();
    for (j, &rc) in reduced.iter().enumerate() {
        let (lo, hi) = lp.var_bounds[j];
        let x = sol.x[j];
        if x < lo - LP_TOL || x > hi + LP_TOL {
            return Err(format!("variable {j} out of bounds"));
        }
        if (rc - sol.reduced_costs[j]).abs() > LP_TOL {
            return Err(format!("variable {j} reduced cost {} vs {rc}", sol.reduced_costs[j]));
        }
        if rc > LP_TOL && (x - lo).abs() > LP_TOL || rc < -LP_TOL && (x - hi).abs() > LP_TOL {
            return Err(format!("variable {j} has reduced cost {rc} away from its bound"));
        }
        dual += rc * if rc > LP_TOL { lo } else if rc < -LP_TOL { hi } else { x };
    }
    let primal = lp.objective_at(&sol.x);
    if (primal - dual).abs() > LP_TOL {
        return Err(format!("duality gap {}", primal - dual));
    }
    Ok(())
}

/// Pure 0/1 program with up to 12 variables; may be infeasible.
pub fn random_binary(rng: &mut ChaCha8Rng) -> LinearProgram {
    let n = rng.gen_range(1..=12);
    let mut lp = LinearProgram::default();
    for _ in 0..n {
        lp.add_var(rng.gen_range(-3.0..3.0), 0.0, 1.0);
    }
    for _ in 0..rng.gen_range(0..=6) {
        let coeffs: Vec<(usize, f64)> =
            (0..n).filter_map(|j| rng.gen_bool(0.5).then(|| (j, rng.gen_range(-2.0..2.0)))).collect();
        let sense = if rng.gen_bool(0.5) { Sense::Le } else { Sense::Ge };
        lp.add_row(coeffs, sense, rng.gen_range(-1.5..1.5));
    }
    lp
}

/// Optimum over all 0/1 points, `None` when none is feasible.
pub fn enumerate_binary(lp: &LinearProgram) -> Option<f64> {
    let n = lp.num_vars();
    let mut best: Option<f64> = None;
    for mask in 0u32..(1 << n) {
        let x: Vec<f64> = (0..n).map(|j| f64::from((mask >> j) & 1)).collect();
        let ok = lp.rows.iter().enumerate().all(|(r, row)| {
            let act = row_activity(lp, r, &x);
            match row.sense {
                Sense::Le => act <= row.rhs + 1e-9,
                Sense::Ge => act >= row.rhs - 1e-9,
                Sense::Eq => (act - row.rhs).abs() <= 1e-9,
            }
        });
        if ok {
            let v = lp.objective_at(&x);
            best = Some(best.map_or(v, |b: f64| b.min(v)));
        }
    }
    best
}

/// Fit instance with `n <= 10`, `d <= 2`, `M in {1, 2}` and non-zero scores.
/// Even seeds place points on a half-integer grid to create ties.
pub fn tiny_fit_instance(seed: u64) -> (Dataset, ScoreVector, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(3..=10);
    let d = rng.gen_range(1..=2);
    let samples = (0..n)
        .map(|_| Sample {
            x: (0..d)
                .map(|_| if seed % 2 == 0 { f64::from(rng.gen_range(0..6_i32)) / 2.0 } else { rng.gen_range(-1.0..1.0) })
                .collect(),
            t: random_label(&mut rng),
            y: 0.0,
        })
        .collect();
    let psi = (0..n).map(|_| signed_weight(&mut rng)).collect();
    let m = rng.gen_range(1..=2);
    (Dataset::new(samples).unwrap(), ScoreVector::new(psi, (0..n).collect(), Method::Dr).unwrap(), m)
}

/// Pricing instance with `n <= 12`, `d <= 2`.
pub fn random_pricing_instance(rng: &mut ChaCha8Rng) -> PricingInstance {
    let n = rng.gen_range(1..=12);
    let d = rng.gen_range(1..=2);
    let grid = rng.gen_bool(0.5);
    let points: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| if grid { f64::from(rng.gen_range(0..4)) } else { rng.gen_range(-1.0..1.0) }).collect())
        .collect();
    let coeff = (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect();
    PricingInstance::new((0..n).collect(), coeff, points, d, rng.gen_range(0.0..0.5), rng.gen_range(0.0..0.2)).unwrap()
}

/// The 1D example whose best box is `[0, 2]` with objective 1.3.
pub fn worked_pricing_example() -> PricingInstance {
    PricingInstance::new(vec![0, 1, 2], vec![1.0, -0.5, 1.0], vec![vec![0.0], vec![1.0], vec![2.0]], 1, 0.2, 0.0)
        .unwrap()
}

/// Master problem on up to 8 grid points with a random subset of spanned
/// boxes as working set and no cuts.
pub fn random_master_problem(rng: &mut ChaCha8Rng) -> MasterProblem {
    let n = rng.gen_range(2..=8);
    let d = rng.gen_range(1..=2);
    let points: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| f64::from(rng.gen_range(0..4))).collect()).collect();
    let labels: Vec<Label> = (0..n).map(|_| random_label(rng)).collect();
    let psi: Vec<f64> = (0..n).map(|_| signed_weight(rng)).collect();
    let mut boxes: Vec<Hyperbox> = Vec::new();
    for a in &points {
        for b in &points {
            let span = Hyperbox::span([a.as_slice(), b.as_slice()].into_iter()).unwrap();
            if !boxes.contains(&span) {
                boxes.push(span);
            }
        }
    }
    boxes.shuffle(rng);
    boxes.truncate(rng.gen_range(1..=6));
    let scores = ScoreVector::new(psi, (0..n).collect(), Method::Dr).unwrap();
    MasterProblem::new(points, labels, scores, boxes, Vec::new(), rng.gen_range(1..=3), 0.0).unwrap()
}

/// `I(T_i != pi(X_i))` for the policy made of the selected working-set boxes.
pub fn mismatch(problem: &MasterProblem, selected: &[usize]) -> Vec<f64> {
    let policy = Policy::new(selected.iter().map(|&j| problem.working_set[j].clone()).collect(), false);
    problem
        .points()
        .iter()
        .zip(problem.labels())
        .map(|(x, &t)| if policy.decide(x) != t { 1.0 } else { 0.0 })
        .collect()
}
