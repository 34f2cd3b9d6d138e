//! Linear programs with bounded variables, dual values, and a depth-first
//! 0/1 branch-and-bound on top.
//!
//! LP relaxations are solved by the HiGHS dual simplex (presolve off, serial),
//! so every optimal solution is a basic solution with consistent duals.
//! Sign convention for minimization: the dual of a `>=` row is `>= 0`, of a
//! `<=` row is `<= 0`, and free for `=` rows. Reduced costs are
//! `c - A^T y`.

use std::time::{Duration, Instant};

use highs::{Col, HighsModelStatus, HighsSolutionStatus, Model, Row, RowProblem, Sense as HighsSense};

use crate::{Error, Result};

pub const FEAS_TOL: f64 = 1e-7;
pub const INT_TOL: f64 = 1e-6;
pub const OBJ_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Ge,
    Le,
    Eq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub coeffs: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

/// `min c^T x` subject to row constraints and `low <= x <= high`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub var_bounds: Vec<(f64, f64)>,
    pub rows: Vec<Constraint>,
}

impl LinearProgram {
    pub fn add_var(&mut self, cost: f64, low: f64, high: f64) -> usize {
        self.objective.push(cost);
        self.var_bounds.push((low, high));
        self.objective.len() - 1
    }

    pub fn add_row(&mut self, coeffs: Vec<(usize, f64)>, sense: Sense, rhs: f64) -> usize {
        self.rows.push(Constraint { coeffs, sense, rhs });
        self.rows.len() - 1
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    fn validate(&self) -> Result<()> {
        if self.var_bounds.len() != self.objective.len() {
            return Err(Error::Invalid("bounds and objective length differ".into()));
        }
        for (j, &(lo, hi)) in self.var_bounds.iter().enumerate() {
            if lo > hi || lo.is_nan() || hi.is_nan() || lo == f64::INFINITY || hi == f64::NEG_INFINITY {
                return Err(Error::Invalid(format!("variable {j} has bounds [{lo}, {hi}]")));
            }
        }
        if self.objective.iter().any(|c| !c.is_finite()) {
            return Err(Error::Invalid("non-finite objective coefficient".into()));
        }
        for (r, row) in self.rows.iter().enumerate() {
            if !row.rhs.is_finite() {
                return Err(Error::Invalid(format!("row {r} has non-finite rhs")));
            }
            for &(j, a) in &row.coeffs {
                if j >= self.num_vars() || !a.is_finite() {
                    return Err(Error::Invalid(format!("row {r} references bad entry ({j}, {a})")));
                }
            }
        }
        Ok(())
    }

    /// Row activity `a_r^T x`.
    pub fn activity(&self, r: usize, x: &[f64]) -> f64 {
        self.rows[r].coeffs.iter().map(|&(j, a)| a * x[j]).sum()
    }

    pub fn objective_at(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective_value: f64,
    pub row_duals: Vec<f64>,
    pub reduced_costs: Vec<f64>,
    /// set by [`solve_binary`] when the time limit cut the search short
    pub timed_out: bool,
    /// branch-and-bound nodes beyond the root
    pub branches: usize,
}

impl LpSolution {
    fn empty(status: LpStatus) -> LpSolution {
        LpSolution {
            status,
            x: Vec::new(),
            objective_value: f64::NAN,
            row_duals: Vec::new(),
            reduced_costs: Vec::new(),
            timed_out: false,
            branches: 0,
        }
    }
}

fn to_highs(lp: &LinearProgram, bounds: &[(f64, f64)]) -> (RowProblem, Vec<Col>) {
    let mut pb = RowProblem::default();
    let cols: Vec<_> = lp
        .objective
        .iter()
        .zip(bounds)
        .map(|(&c, &(lo, hi))| pb.add_column(c, lo..=hi))
        .collect();
    for row in &lp.rows {
        let coeffs: Vec<_> = row.coeffs.iter().map(|&(j, a)| (cols[j], a)).collect();
        match row.sense {
            Sense::Ge => pb.add_row(row.rhs.., coeffs),
            Sense::Le => pb.add_row(..=row.rhs, coeffs),
            Sense::Eq => pb.add_row(row.rhs..=row.rhs, coeffs),
        }
    }
    (pb, cols)
}

fn configure(model: &mut Model) {
    model.make_quiet();
    model.set_option("presolve", "off");
    model.set_option("solver", "simplex");
    model.set_option("simplex_strategy", 1);
    model.set_option("threads", 1);
    model.set_option("primal_feasibility_tolerance", 1e-9);
    model.set_option("dual_feasibility_tolerance", 1e-9);
}

/// A reusable HiGHS model whose variable bounds can be changed between solves.
struct Session<'a> {
    lp: &'a LinearProgram,
    cols: Vec<Col>,
    model: Option<Model>,
    /// bounds currently loaded into the model
    current: Vec<(f64, f64)>,
}

impl<'a> Session<'a> {
    fn new(lp: &'a LinearProgram) -> Session<'a> {
        let (pb, cols) = to_highs(lp, &lp.var_bounds);
        let mut model = Model::new(pb);
        configure(&mut model);
        model.set_sense(HighsSense::Minimise);
        Session { lp, cols, model: Some(model), current: lp.var_bounds.clone() }
    }

    fn solve_with_bounds(&mut self, bounds: &[(f64, f64)]) -> Result<LpSolution> {
        let mut model = self.model.take().expect("session model present");
        for ((&col, &(lo, hi)), cur) in self.cols.iter().zip(bounds).zip(self.current.iter_mut()) {
            if (lo, hi) != *cur {
                model.change_column_bounds(col, lo..=hi);
                *cur = (lo, hi);
            }
        }
        let (out, model) = run_model(model, self.lp, bounds)?;
        self.model = Some(model);
        out
    }
}

/// Solves `model` (which holds `lp` with `bounds`) and hands the model back
/// for further warm-started solves.
fn run_model(model: Model, lp: &LinearProgram, bounds: &[(f64, f64)]) -> Result<(Result<LpSolution>, Model)> {
    let solved = model
        .try_solve()
        .map_err(|s| Error::Numerical(format!("HiGHS run failed: {s:?}")))?;
    let out = match solved.status() {
        HighsModelStatus::Optimal => {
            let sol = solved.get_solution();
            Ok(LpSolution {
                status: LpStatus::Optimal,
                x: sol.columns().to_vec(),
                objective_value: solved.objective_value(),
                row_duals: sol.dual_rows().to_vec(),
                reduced_costs: sol.dual_columns().to_vec(),
                timed_out: false,
                branches: 0,
            })
        }
        HighsModelStatus::Infeasible => Ok(LpSolution::empty(LpStatus::Infeasible)),
        HighsModelStatus::Unbounded => Ok(LpSolution::empty(LpStatus::Unbounded)),
        HighsModelStatus::UnboundedOrInfeasible => {
            // decide with a zero-objective feasibility solve
            let mut probe = lp.clone();
            probe.objective.iter_mut().for_each(|c| *c = 0.0);
            probe.var_bounds = bounds.to_vec();
            let feasible = solve_lp(&probe)?.status == LpStatus::Optimal;
            Ok(LpSolution::empty(if feasible { LpStatus::Unbounded } else { LpStatus::Infeasible }))
        }
        other => Err(Error::Numerical(format!("HiGHS status {other:?}"))),
    };
    Ok((out, Model::from(solved)))
}

/// An LP kept loaded in HiGHS between solves. Appending variables and rows
/// keeps the previous basis, so re-solves start warm.
pub struct IncrementalLp {
    lp: LinearProgram,
    model: Option<Model>,
    cols: Vec<Col>,
    rows: Vec<Row>,
}

impl IncrementalLp {
    pub fn new(lp: LinearProgram) -> Result<IncrementalLp> {
        lp.validate()?;
        let mut model = Model::new(RowProblem::default());
        configure(&mut model);
        // appended columns and rows keep the basis primal feasible
        model.set_option("simplex_strategy", 4);
        model.set_sense(HighsSense::Minimise);
        let mut inc = IncrementalLp { lp: LinearProgram::default(), model: Some(model), cols: Vec::new(), rows: Vec::new() };
        for (&c, &(lo, hi)) in lp.objective.iter().zip(&lp.var_bounds) {
            inc.add_var(c, lo, hi, &[]);
        }
        for row in lp.rows {
            inc.add_row(row.coeffs, row.sense, row.rhs);
        }
        Ok(inc)
    }

    pub fn lp(&self) -> &LinearProgram {
        &self.lp
    }

    /// Adds a variable with coefficients `(row, a)` in existing rows.
    pub fn add_var(&mut self, cost: f64, low: f64, high: f64, entries: &[(usize, f64)]) -> usize {
        let j = self.lp.add_var(cost, low, high);
        for &(r, a) in entries {
            self.lp.rows[r].coeffs.push((j, a));
        }
        let model = self.model.as_mut().expect("model present");
        let col = model.add_col(cost, low..=high, entries.iter().map(|&(r, a)| (self.rows[r], a)));
        self.cols.push(col);
        j
    }

    pub fn add_row(&mut self, coeffs: Vec<(usize, f64)>, sense: Sense, rhs: f64) -> usize {
        let model = self.model.as_mut().expect("model present");
        let factors: Vec<_> = coeffs.iter().map(|&(j, a)| (self.cols[j], a)).collect();
        let row = match sense {
            Sense::Ge => model.add_row(rhs.., factors),
            Sense::Le => model.add_row(..=rhs, factors),
            Sense::Eq => model.add_row(rhs..=rhs, factors),
        };
        self.rows.push(row);
        self.lp.add_row(coeffs, sense, rhs)
    }

    pub fn solve(&mut self) -> Result<LpSolution> {
        if self.lp.num_vars() == 0 {
            return Ok(solve_without_vars(&self.lp));
        }
        let model = self.model.take().expect("model present");
        let (out, model) = run_model(model, &self.lp, &self.lp.var_bounds)?;
        self.model = Some(model);
        out
    }
}

/// Trivial solve when there are no variables: every row is `0 sense rhs`.
fn solve_without_vars(lp: &LinearProgram) -> LpSolution {
    let feasible = lp.rows.iter().all(|r| match r.sense {
        Sense::Ge => 0.0 >= r.rhs - FEAS_TOL,
        Sense::Le => 0.0 <= r.rhs + FEAS_TOL,
        Sense::Eq => r.rhs.abs() <= FEAS_TOL,
    });
    if !feasible {
        return LpSolution::empty(LpStatus::Infeasible);
    }
    LpSolution {
        status: LpStatus::Optimal,
        x: Vec::new(),
        objective_value: 0.0,
        row_duals: vec![0.0; lp.rows.len()],
        reduced_costs: Vec::new(),
        timed_out: false,
        branches: 0,
    }
}

pub fn solve_lp(lp: &LinearProgram) -> Result<LpSolution> {
    lp.validate()?;
    if lp.num_vars() == 0 {
        return Ok(solve_without_vars(lp));
    }
    Session::new(lp).solve_with_bounds(&lp.var_bounds)
}

fn most_fractional(x: &[f64], integer_vars: &[usize]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for &j in integer_vars {
        let frac = x[j] - x[j].floor();
        if frac.min(1.0 - frac) <= INT_TOL {
            continue;
        }
        let dist = (frac - 0.5).abs();
        match best {
            Some((bj, bd)) if dist > bd || (dist == bd && j > bj) => {}
            _ => best = Some((j, dist)),
        }
    }
    best.map(|(j, _)| j)
}

/// Depth-first branch-and-bound over the LP relaxation for variables in
/// `integer_vars`, which must be bounded within `[0, 1]`.
///
/// Branches on the most fractional variable (ties to the lowest index) and
/// dives into the child nearest to the fractional value first. When the
/// time limit is hit the best incumbent is returned with `timed_out` set.
pub fn solve_binary(lp: &LinearProgram, integer_vars: &[usize], time_limit: f64) -> Result<LpSolution> {
    lp.validate()?;
    for &j in integer_vars {
        let (lo, hi) = *lp
            .var_bounds
            .get(j)
            .ok_or_else(|| Error::Invalid(format!("integer variable {j} out of range")))?;
        if lo < 0.0 || hi > 1.0 {
            return Err(Error::Invalid(format!("integer variable {j} has bounds outside [0, 1]")));
        }
    }
    if lp.num_vars() == 0 {
        let sol = solve_without_vars(lp);
        return match sol.status {
            LpStatus::Optimal => Ok(sol),
            _ => Err(Error::Infeasible),
        };
    }

    let start = Instant::now();
    let limit = Duration::from_secs_f64(time_limit.max(0.0));
    let mut session = Session::new(lp);
    let mut incumbent: Option<LpSolution> = None;
    let mut stack = vec![lp.var_bounds.clone()];
    let mut branches = 0usize;
    let mut timed_out = false;
    let mut root = true;

    while let Some(bounds) = stack.pop() {
        if start.elapsed() > limit {
            timed_out = true;
            break;
        }
        let sol = session.solve_with_bounds(&bounds)?;
        let was_root = std::mem::take(&mut root);
        match sol.status {
            LpStatus::Optimal => {}
            LpStatus::Infeasible => {
                if was_root {
                    return Err(Error::Infeasible);
                }
                continue;
            }
            LpStatus::Unbounded => return Err(Error::Unbounded),
        }
        if let Some(inc) = &incumbent {
            if sol.objective_value >= inc.objective_value - OBJ_TOL {
                continue;
            }
        }
        match most_fractional(&sol.x, integer_vars) {
            None => {
                let mut sol = sol;
                for &j in integer_vars {
                    sol.x[j] = sol.x[j].round();
                }
                incumbent = Some(sol);
            }
            Some(j) => {
                let v = sol.x[j];
                let mut down = bounds.clone();
                down[j].1 = v.floor();
                let mut up = bounds;
                up[j].0 = v.ceil();
                branches += 2;
                if v - v.floor() >= 0.5 {
                    stack.push(down);
                    stack.push(up);
                } else {
                    stack.push(up);
                    stack.push(down);
                }
            }
        }
    }

    match incumbent {
        Some(mut sol) => {
            sol.timed_out = timed_out;
            sol.branches = branches;
            Ok(sol)
        }
        None if timed_out => Err(Error::NoIncumbent),
        None => Err(Error::Infeasible),
    }
}

/// Budgets of [`solve_mip`]. The node limit is deterministic; the time
/// limit is a safety net.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MipLimits {
    pub time: f64,
    pub nodes: usize,
}

/// Same contract as [`solve_binary`], solved by the HiGHS MIP solver
/// (presolve, cutting planes, single thread). `start` is an optional
/// feasible point used as the first incumbent. Duals are not reported.
pub fn solve_mip(
    lp: &LinearProgram,
    integer_vars: &[usize],
    limits: MipLimits,
    start: Option<&[f64]>,
) -> Result<LpSolution> {
    lp.validate()?;
    let mut is_int = vec![false; lp.num_vars()];
    for &j in integer_vars {
        let (lo, hi) = *lp
            .var_bounds
            .get(j)
            .ok_or_else(|| Error::Invalid(format!("integer variable {j} out of range")))?;
        if lo < 0.0 || hi > 1.0 {
            return Err(Error::Invalid(format!("integer variable {j} has bounds outside [0, 1]")));
        }
        is_int[j] = true;
    }
    if integer_vars.is_empty() || lp.num_vars() == 0 {
        let sol = solve_lp(lp)?;
        return match sol.status {
            LpStatus::Optimal => Ok(sol),
            LpStatus::Infeasible => Err(Error::Infeasible),
            LpStatus::Unbounded => Err(Error::Unbounded),
        };
    }
    let mut pb = RowProblem::default();
    let cols: Vec<_> = lp
        .objective
        .iter()
        .zip(&lp.var_bounds)
        .zip(&is_int)
        .map(|((&c, &(lo, hi)), &int)| pb.add_column_with_integrality(c, lo..=hi, int))
        .collect();
    for row in &lp.rows {
        let coeffs: Vec<_> = row.coeffs.iter().map(|&(j, a)| (cols[j], a)).collect();
        match row.sense {
            Sense::Ge => pb.add_row(row.rhs.., coeffs),
            Sense::Le => pb.add_row(..=row.rhs, coeffs),
            Sense::Eq => pb.add_row(row.rhs..=row.rhs, coeffs),
        }
    }
    let mut model = Model::new(pb);
    model.make_quiet();
    model.set_sense(HighsSense::Minimise);
    model.set_option("threads", 1);
    model.set_option("mip_rel_gap", 0.0);
    model.set_option("mip_abs_gap", OBJ_TOL);
    model.set_option("mip_feasibility_tolerance", 1e-9);
    model.set_option("time_limit", limits.time.max(0.0));
    model.set_option("mip_max_nodes", limits.nodes.min(i32::MAX as usize) as i32);
    if let Some(x) = start {
        model
            .try_set_solution(Some(x), None, None, None)
            .map_err(|e| Error::Invalid(format!("MIP start rejected: {e:?}")))?;
    }
    let solved = model
        .try_solve()
        .map_err(|s| Error::Numerical(format!("HiGHS run failed: {s:?}")))?;
    let timed_out = match solved.status() {
        HighsModelStatus::Optimal => false,
        HighsModelStatus::ReachedTimeLimit
        | HighsModelStatus::ReachedIterationLimit
        | HighsModelStatus::ReachedSolutionLimit => true,
        HighsModelStatus::Infeasible => return Err(Error::Infeasible),
        HighsModelStatus::Unbounded | HighsModelStatus::UnboundedOrInfeasible => return Err(Error::Unbounded),
        other => return Err(Error::Numerical(format!("HiGHS status {other:?}"))),
    };
    if solved.primal_solution_status() != HighsSolutionStatus::Feasible {
        return Err(Error::NoIncumbent);
    }
    let mut x = solved.get_solution().columns().to_vec();
    for &j in integer_vars {
        x[j] = x[j].round();
    }
    let objective_value = lp.objective_at(&x);
    Ok(LpSolution {
        status: LpStatus::Optimal,
        x,
        objective_value,
        row_duals: Vec::new(),
        reduced_costs: Vec::new(),
        timed_out,
        branches: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bound_active_optimum() {
        let mut lp = LinearProgram::default();
        lp.add_var(-1.0, 0.0, 1.0);
        let sol = solve_lp(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.x[0] - 1.0).abs() < 1e-12);
        assert!((sol.objective_value + 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_variable_dual() {
        let mut lp = LinearProgram::default();
        let a = lp.add_var(-1.0, 0.0, 1.0);
        let b = lp.add_var(-1.0, 0.0, 1.0);
        lp.add_row(vec![(a, 1.0), (b, 1.0)], Sense::Le, 1.0);
        let sol = solve_lp(&lp).unwrap();
        assert!((sol.objective_value + 1.0).abs() < 1e-12);
        assert!((sol.row_duals[0] + 1.0).abs() < 1e-9, "{:?}", sol.row_duals);
    }

    #[test]
    fn contradictory_rows_are_infeasible() {
        let mut lp = LinearProgram::default();
        let x = lp.add_var(0.0, f64::NEG_INFINITY, f64::INFINITY);
        lp.add_row(vec![(x, 1.0)], Sense::Ge, 2.0);
        lp.add_row(vec![(x, 1.0)], Sense::Le, 1.0);
        assert_eq!(solve_lp(&lp).unwrap().status, LpStatus::Infeasible);
    }

    #[test]
    fn unbounded_is_detected() {
        let mut lp = LinearProgram::default();
        let x = lp.add_var(-1.0, 0.0, f64::INFINITY);
        lp.add_row(vec![(x, 1.0)], Sense::Ge, 0.0);
        assert_eq!(solve_lp(&lp).unwrap().status, LpStatus::Unbounded);
    }

    #[test]
    fn ge_row_dual_is_nonnegative() {
        let mut lp = LinearProgram::default();
        let x = lp.add_var(2.0, 0.0, 10.0);
        lp.add_row(vec![(x, 1.0)], Sense::Ge, 3.0);
        let sol = solve_lp(&lp).unwrap();
        assert!((sol.row_duals[0] - 2.0).abs() < 1e-9);
        assert!(sol.reduced_costs[0].abs() < 1e-9);
    }

    #[test]
    fn no_variables() {
        let mut lp = LinearProgram::default();
        lp.add_row(vec![], Sense::Le, 1.0);
        assert_eq!(solve_lp(&lp).unwrap().status, LpStatus::Optimal);
        lp.add_row(vec![], Sense::Ge, 1.0);
        assert_eq!(solve_lp(&lp).unwrap().status, LpStatus::Infeasible);
    }

    #[test]
    fn invalid_bounds_rejected() {
        let mut lp = LinearProgram::default();
        lp.add_var(0.0, 1.0, 0.0);
        assert!(solve_lp(&lp).is_err());
    }

    #[test]
    fn binary_integral_relaxation_needs_no_branches() {
        let mut lp = LinearProgram::default();
        let a = lp.add_var(-1.0, 0.0, 1.0);
        let b = lp.add_var(1.0, 0.0, 1.0);
        lp.add_row(vec![(a, 1.0), (b, 1.0)], Sense::Le, 2.0);
        let sol = solve_binary(&lp, &[a, b], 10.0).unwrap();
        assert_eq!(sol.branches, 0);
        assert_eq!(sol.x, vec![1.0, 0.0]);
    }

    #[test]
    fn binary_picks_one_of_two() {
        let mut lp = LinearProgram::default();
        let a = lp.add_var(-1.0, 0.0, 1.0);
        let b = lp.add_var(-1.0, 0.0, 1.0);
        lp.add_row(vec![(a, 1.0), (b, 1.0)], Sense::Le, 1.0);
        let sol = solve_binary(&lp, &[a, b], 10.0).unwrap();
        assert!((sol.objective_value + 1.0).abs() < 1e-9);
        assert_eq!(sol.x.iter().filter(|v| **v == 1.0).count(), 1);
    }

    #[test]
    fn binary_fractional_knapsack_branches() {
        // max 5a + 4b + 3c st 2a + 3b + c <= 4.5 -> relaxation fractional
        let mut lp = LinearProgram::default();
        let v: Vec<_> = [-5.0, -4.0, -3.0].iter().map(|&c| lp.add_var(c, 0.0, 1.0)).collect();
        lp.add_row(vec![(v[0], 2.0), (v[1], 3.0), (v[2], 1.0)], Sense::Le, 4.5);
        let sol = solve_binary(&lp, &v, 10.0).unwrap();
        assert!((sol.objective_value + 8.0).abs() < 1e-9, "{}", sol.objective_value);
        assert!(sol.branches > 0);
    }

    #[test]
    fn binary_contradictory_fixings() {
        let mut lp = LinearProgram::default();
        let x = lp.add_var(0.0, 0.0, 1.0);
        lp.add_row(vec![(x, 1.0)], Sense::Le, 0.0);
        lp.add_row(vec![(x, 1.0)], Sense::Ge, 1.0);
        assert!(matches!(solve_binary(&lp, &[x], 10.0), Err(Error::Infeasible)));
    }

    #[test]
    fn binary_rejects_wide_bounds() {
        let mut lp = LinearProgram::default();
        let x = lp.add_var(0.0, 0.0, 2.0);
        assert!(solve_binary(&lp, &[x], 10.0).is_err());
    }
}
