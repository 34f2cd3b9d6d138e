//! Restricted master problems over a working set of boxes.
//!
//! Variables are `s_j` (box `j` used) followed by `xi_i` (sample `i`
//! mismatched). The objective is `(1/n') sum psi_i xi_i + omega sum s_j`
//! where `n'` is the number of retained (non-zero) scores. Rows:
//!
//! * treated, `psi > 0`: `xi_i + sum_{j in K_i} s_j >= 1`
//! * untreated, `psi > 0`: `xi_i - s_j >= 0` for each covering `j`
//! * treated, `psi < 0`: `xi_i + s_j <= 1` for each covering `j`
//! * untreated, `psi < 0`: `xi_i - sum_{j in K_i} s_j <= 0`
//! * `sum_j s_j <= M`
//! * one row per cut: `s_j <= 0` or `s_j >= 1`
//!
//! `K_i` is the set of working-set boxes that contain sample `i` (closed
//! intervals).

use crate::data::{partition, Hyperbox, IndexPartition, Label, SampleClass};
use crate::lp::{solve_lp, solve_mip, IncrementalLp, MipLimits, LinearProgram, LpStatus, Sense, INT_TOL};
use crate::scores::ScoreVector;
use crate::{Error, Result};

/// A branching cut: `s_index <= 0` (`one = false`) or `s_index >= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Cut {
    pub index: usize,
    pub one: bool,
}

#[derive(Debug, Clone)]
pub struct MasterProblem {
    pub working_set: Vec<Hyperbox>,
    pub cuts: Vec<Cut>,
    pub partition: IndexPartition,
    pub psi: ScoreVector,
    pub m_max: usize,
    pub omega: f64,
    points: Vec<Vec<f64>>,
    labels: Vec<Label>,
    classes: Vec<SampleClass>,
    /// `K_i` per sample
    membership: Vec<Vec<usize>>,
}

impl MasterProblem {
    /// `points[i]` and `labels[i]` belong to `psi.psi[i]`.
    pub fn new(
        points: Vec<Vec<f64>>,
        labels: Vec<Label>,
        psi: ScoreVector,
        working_set: Vec<Hyperbox>,
        cuts: Vec<Cut>,
        m_max: usize,
        omega: f64,
    ) -> Result<MasterProblem> {
        if points.len() != psi.len() {
            return Err(Error::Dimension { expected: psi.len(), got: points.len() });
        }
        if !(omega >= 0.0 && omega.is_finite()) {
            return Err(Error::Invalid(format!("penalty must be a finite value >= 0, got {omega}")));
        }
        let part = partition(&psi.psi, &labels)?;
        for b in &working_set {
            if let Some(p) = points.iter().find(|p| p.len() != b.dim()) {
                return Err(Error::Dimension { expected: b.dim(), got: p.len() });
            }
        }
        for c in &cuts {
            if c.index >= working_set.len() {
                return Err(Error::Invalid(format!("cut on box {} but |W| = {}", c.index, working_set.len())));
            }
            if cuts.iter().any(|o| o.index == c.index && o.one != c.one) {
                return Err(Error::Invalid(format!("box {} is fixed to both 0 and 1", c.index)));
            }
        }
        let classes = psi.psi.iter().zip(&labels).map(|(&v, &t)| SampleClass::of(v, t)).collect();
        let membership = points
            .iter()
            .map(|x| (0..working_set.len()).filter(|&j| working_set[j].contains(x)).collect())
            .collect();
        Ok(MasterProblem {
            working_set,
            cuts,
            partition: part,
            psi,
            m_max,
            omega,
            points,
            labels,
            classes,
            membership,
        })
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn classes(&self) -> &[SampleClass] {
        &self.classes
    }

    /// Boxes of the working set containing sample `i`.
    pub fn membership(&self, i: usize) -> &[usize] {
        &self.membership[i]
    }

    pub fn n_retained(&self) -> usize {
        self.psi.len()
    }

    /// Same samples and parameters with another working set and cut list.
    pub fn with_columns(&self, working_set: Vec<Hyperbox>, cuts: Vec<Cut>) -> Result<MasterProblem> {
        MasterProblem::new(
            self.points.clone(),
            self.labels.clone(),
            self.psi.clone(),
            working_set,
            cuts,
            self.m_max,
            self.omega,
        )
    }

    /// Appends `b` to the working set; returns the samples it contains.
    pub fn push_column(&mut self, b: Hyperbox) -> Result<Vec<usize>> {
        if let Some(p) = self.points.first().filter(|p| p.len() != b.dim()) {
            return Err(Error::Dimension { expected: b.dim(), got: p.len() });
        }
        let j = self.working_set.len();
        let inside: Vec<usize> = (0..self.points.len()).filter(|&i| b.contains(&self.points[i])).collect();
        for &i in &inside {
            self.membership[i].push(j);
        }
        self.working_set.push(b);
        Ok(inside)
    }

    pub fn is_fixed(&self, j: usize) -> bool {
        self.cuts.iter().any(|c| c.index == j)
    }
}

/// Duals of the master rows, normalized to be non-negative.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Duals {
    /// `(i, mu1_i)` for treated samples with `psi > 0`
    pub mu1: Vec<(usize, f64)>,
    /// `(i, j, mu2_ij)` for untreated samples with `psi > 0`
    pub mu2: Vec<(usize, usize, f64)>,
    /// `(i, j, mu3_ij)` for treated samples with `psi < 0`
    pub mu3: Vec<(usize, usize, f64)>,
    /// `(i, mu4_i)` for untreated samples with `psi < 0`
    pub mu4: Vec<(usize, f64)>,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MasterSolution {
    pub s: Vec<f64>,
    pub xi: Vec<f64>,
    pub objective: f64,
    /// only present for LP relaxations
    pub duals: Option<Duals>,
    /// LP reduced costs of the `s` columns (relaxations only)
    pub column_reduced_costs: Vec<f64>,
    /// set when the integer solve stopped at its time limit
    pub timed_out: bool,
}

impl MasterSolution {
    /// Indices of boxes with `s_j = 1` (within the integrality tolerance).
    pub fn selected(&self) -> Vec<usize> {
        (0..self.s.len()).filter(|&j| self.s[j] > 1.0 - INT_TOL).collect()
    }

    pub fn is_integral(&self, tol: f64) -> bool {
        self.s.iter().all(|&v| v <= tol || v >= 1.0 - tol)
    }
}

/// Row positions of each constraint family inside the built LP.
#[derive(Debug, Clone, Default)]
struct Layout {
    cover: Vec<(usize, usize)>,
    untreated_pos: Vec<(usize, usize, usize)>,
    treated_neg: Vec<(usize, usize, usize)>,
    untreated_neg: Vec<(usize, usize)>,
    cardinality: usize,
    /// cover or untreated-negative row of each sample
    aggregate: Vec<Option<usize>>,
    /// LP variable of each `s_j` and `xi_i`
    s_index: Vec<usize>,
    xi_index: Vec<usize>,
}

fn build(problem: &MasterProblem, relaxed: bool) -> (LinearProgram, Layout) {
    let w = problem.working_set.len();
    let scale = 1.0 / problem.n_retained() as f64;
    let mut lp = LinearProgram::default();
    // The relaxation leaves s unbounded above: s_j > 1 is never better, and
    // without an active upper bound every column's reduced cost is >= 0.
    let s_high = if relaxed { f64::INFINITY } else { 1.0 };
    for _ in 0..w {
        lp.add_var(problem.omega, 0.0, s_high);
    }
    for &v in &problem.psi.psi {
        lp.add_var(v * scale, 0.0, 1.0);
    }
    let xi = |i: usize| w + i;
    let mut layout = Layout {
        aggregate: vec![None; problem.classes.len()],
        s_index: (0..w).collect(),
        xi_index: (0..problem.classes.len()).map(xi).collect(),
        ..Layout::default()
    };
    for (i, class) in problem.classes.iter().enumerate() {
        let k = &problem.membership[i];
        match class {
            SampleClass::TreatedPositive => {
                let mut coeffs = vec![(xi(i), 1.0)];
                coeffs.extend(k.iter().map(|&j| (j, 1.0)));
                let r = lp.add_row(coeffs, Sense::Ge, 1.0);
                layout.cover.push((i, r));
                layout.aggregate[i] = Some(r);
            }
            SampleClass::UntreatedPositive => {
                for &j in k {
                    let r = lp.add_row(vec![(xi(i), 1.0), (j, -1.0)], Sense::Ge, 0.0);
                    layout.untreated_pos.push((i, j, r));
                }
            }
            SampleClass::TreatedNegative => {
                for &j in k {
                    let r = lp.add_row(vec![(xi(i), 1.0), (j, 1.0)], Sense::Le, 1.0);
                    layout.treated_neg.push((i, j, r));
                }
            }
            SampleClass::UntreatedNegative => {
                let mut coeffs = vec![(xi(i), 1.0)];
                coeffs.extend(k.iter().map(|&j| (j, -1.0)));
                let r = lp.add_row(coeffs, Sense::Le, 0.0);
                layout.untreated_neg.push((i, r));
                layout.aggregate[i] = Some(r);
            }
        }
    }
    layout.cardinality = lp.add_row((0..w).map(|j| (j, 1.0)).collect(), Sense::Le, problem.m_max as f64);
    for c in &problem.cuts {
        if c.one {
            lp.add_row(vec![(c.index, 1.0)], Sense::Ge, 1.0);
        } else {
            lp.add_row(vec![(c.index, 1.0)], Sense::Le, 0.0);
        }
    }
    (lp, layout)
}

/// The master as a linear program; `relaxed = false` gives `s` the bounds
/// `[0, 1]` expected by [`solve_binary`].
pub fn build_master(problem: &MasterProblem, relaxed: bool) -> LinearProgram {
    build(problem, relaxed).0
}

/// The relaxed master kept loaded in the LP solver, so that columns added
/// during column generation are re-optimized from the previous basis.
pub struct RelaxedMaster {
    problem: MasterProblem,
    lp: IncrementalLp,
    layout: Layout,
}

impl RelaxedMaster {
    pub fn new(problem: MasterProblem) -> Result<RelaxedMaster> {
        let (lp, layout) = build(&problem, true);
        Ok(RelaxedMaster { lp: IncrementalLp::new(lp)?, problem, layout })
    }

    pub fn problem(&self) -> &MasterProblem {
        &self.problem
    }

    pub fn into_problem(self) -> MasterProblem {
        self.problem
    }

    /// Appends box `b` as a new unfixed column.
    pub fn add_column(&mut self, b: Hyperbox) -> Result<()> {
        let j = self.problem.working_set.len();
        let inside = self.problem.push_column(b)?;
        let mut entries = vec![(self.layout.cardinality, 1.0)];
        for &i in &inside {
            match self.problem.classes[i] {
                SampleClass::TreatedPositive => entries.push((self.layout.aggregate[i].expect("cover row"), 1.0)),
                SampleClass::UntreatedNegative => entries.push((self.layout.aggregate[i].expect("aggregate row"), -1.0)),
                _ => {}
            }
        }
        let col = self.lp.add_var(self.problem.omega, 0.0, f64::INFINITY, &entries);
        self.layout.s_index.push(col);
        for &i in &inside {
            let xi = self.layout.xi_index[i];
            match self.problem.classes[i] {
                SampleClass::UntreatedPositive => {
                    let r = self.lp.add_row(vec![(xi, 1.0), (col, -1.0)], Sense::Ge, 0.0);
                    self.layout.untreated_pos.push((i, j, r));
                }
                SampleClass::TreatedNegative => {
                    let r = self.lp.add_row(vec![(xi, 1.0), (col, 1.0)], Sense::Le, 1.0);
                    self.layout.treated_neg.push((i, j, r));
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn solve(&mut self) -> Result<MasterSolution> {
        let sol = self.lp.solve()?;
        match sol.status {
            LpStatus::Optimal => {}
            LpStatus::Infeasible => return Err(Error::Infeasible),
            LpStatus::Unbounded => return Err(Error::Unbounded),
        }
        let layout = &self.layout;
        let y = &sol.row_duals;
        let duals = Duals {
            mu1: layout.cover.iter().map(|&(i, r)| (i, y[r].max(0.0))).collect(),
            mu2: layout.untreated_pos.iter().map(|&(i, j, r)| (i, j, y[r].max(0.0))).collect(),
            mu3: layout.treated_neg.iter().map(|&(i, j, r)| (i, j, (-y[r]).max(0.0))).collect(),
            mu4: layout.untreated_neg.iter().map(|&(i, r)| (i, (-y[r]).max(0.0))).collect(),
            lambda: (-y[layout.cardinality]).max(0.0),
        };
        Ok(MasterSolution {
            s: layout.s_index.iter().map(|&c| sol.x[c].clamp(0.0, 1.0)).collect(),
            xi: layout.xi_index.iter().map(|&c| sol.x[c].clamp(0.0, 1.0)).collect(),
            objective: sol.objective_value,
            duals: Some(duals),
            column_reduced_costs: layout.s_index.iter().map(|&c| sol.reduced_costs[c]).collect(),
            timed_out: false,
        })
    }
}

pub fn solve_relaxed(problem: &MasterProblem) -> Result<MasterSolution> {
    RelaxedMaster::new(problem.clone())?.solve()
}

/// Binary `s`; `xi` is left continuous and comes out integral.
///
/// `start` (a selection of working-set indices) is polished by
/// [`local_search`] and handed to the solver as its first incumbent, so the
/// result is never worse than the start.
pub fn solve_integer(problem: &MasterProblem, limits: MipLimits, start: Option<&[usize]>) -> Result<MasterSolution> {
    let lp = build_master(problem, false);
    let w = problem.working_set.len();
    let ints: Vec<usize> = (0..w).collect();
    let start = start.and_then(|sel| admissible(problem, sel)).map(|sel| {
        let sel = local_search(problem, &sel);
        selection_point(problem, &sel)
    });
    let mip = solve_mip(&lp, &ints, limits, start.as_deref())?;
    // re-solve with s fixed so that xi is a basic solution of the LP
    let mut fixed = lp.clone();
    for j in 0..w {
        fixed.var_bounds[j] = (mip.x[j], mip.x[j]);
    }
    let sol = solve_lp(&fixed)?;
    if sol.status != LpStatus::Optimal {
        return Err(Error::Numerical("integer master lost feasibility with s fixed".into()));
    }
    let s: Vec<f64> = mip.x[..w].to_vec();
    let xi: Vec<f64> = sol.x[w..].iter().map(|v| v.clamp(0.0, 1.0)).collect();
    let objective = lp.objective_at(&sol.x);
    Ok(MasterSolution { s, xi, objective, duals: None, column_reduced_costs: Vec::new(), timed_out: mip.timed_out })
}

/// `sel` adjusted to the cuts, or `None` if that breaks the cardinality.
fn admissible(problem: &MasterProblem, sel: &[usize]) -> Option<Vec<usize>> {
    let mut out: Vec<usize> = sel
        .iter()
        .copied()
        .filter(|&j| j < problem.working_set.len() && !problem.cuts.iter().any(|c| c.index == j && !c.one))
        .collect();
    for c in problem.cuts.iter().filter(|c| c.one) {
        if !out.contains(&c.index) {
            out.push(c.index);
        }
    }
    out.sort_unstable();
    out.dedup();
    (out.len() <= problem.m_max).then_some(out)
}

/// Full primal point `(s, xi)` of an integral selection.
fn selection_point(problem: &MasterProblem, sel: &[usize]) -> Vec<f64> {
    let w = problem.working_set.len();
    let mut x = vec![0.0; w + problem.n_retained()];
    for &j in sel {
        x[j] = 1.0;
    }
    for i in 0..problem.n_retained() {
        let covered = problem.membership[i].iter().any(|j| sel.contains(j));
        let decision = if covered { Label::Plus } else { Label::Minus };
        x[w + i] = if decision != problem.labels[i] { 1.0 } else { 0.0 };
    }
    x
}

/// Best-improvement search over single additions, removals and swaps of
/// working-set boxes, starting from `start` and respecting the cuts. Returns
/// a selection whose [`integral_objective`] is no larger than the start's.
pub fn local_search(problem: &MasterProblem, start: &[usize]) -> Vec<usize> {
    let n = problem.n_retained();
    let w = problem.working_set.len();
    let scale = 1.0 / n as f64;
    // objective change when sample i switches from uncovered to covered
    let gain: Vec<f64> = (0..n)
        .map(|i| {
            let v = problem.psi.psi[i] * scale;
            match problem.labels[i] {
                Label::Minus => v,
                Label::Plus => -v,
            }
        })
        .collect();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); w];
    for (i, k) in problem.membership.iter().enumerate() {
        for &j in k {
            members[j].push(i);
        }
    }
    let locked = |j: usize| problem.cuts.iter().any(|c| c.index == j);
    let forbidden = |j: usize| problem.cuts.iter().any(|c| c.index == j && !c.one);
    let mut sel: Vec<usize> = start.to_vec();
    let mut in_sel = vec![false; w];
    let mut count = vec![0u32; n];
    for &j in &sel {
        in_sel[j] = true;
        for &i in &members[j] {
            count[i] += 1;
        }
    }
    let omega = problem.omega;
    let add_delta = |count: &[u32], j: usize| -> f64 {
        omega + members[j].iter().filter(|&&i| count[i] == 0).map(|&i| gain[i]).sum::<f64>()
    };
    let remove_delta = |count: &[u32], j: usize| -> f64 {
        -omega - members[j].iter().filter(|&&i| count[i] == 1).map(|&i| gain[i]).sum::<f64>()
    };
    const EPS: f64 = 1e-12;
    loop {
        // (delta, remove, add)
        let mut best: (f64, Option<usize>, Option<usize>) = (-EPS, None, None);
        if sel.len() < problem.m_max {
            for j in (0..w).filter(|&j| !in_sel[j] && !forbidden(j)) {
                let d = add_delta(&count, j);
                if d < best.0 {
                    best = (d, None, Some(j));
                }
            }
        }
        for &r in sel.iter().filter(|&&r| !locked(r)) {
            let d_remove = remove_delta(&count, r);
            if d_remove < best.0 {
                best = (d_remove, Some(r), None);
            }
            for &i in &members[r] {
                count[i] -= 1;
            }
            for j in (0..w).filter(|&j| !in_sel[j] && !forbidden(j)) {
                let d = d_remove + add_delta(&count, j);
                if d < best.0 {
                    best = (d, Some(r), Some(j));
                }
            }
            for &i in &members[r] {
                count[i] += 1;
            }
        }
        match best {
            (_, None, None) => break,
            (_, r, a) => {
                if let Some(r) = r {
                    sel.retain(|&j| j != r);
                    in_sel[r] = false;
                    for &i in &members[r] {
                        count[i] -= 1;
                    }
                }
                if let Some(a) = a {
                    sel.push(a);
                    in_sel[a] = true;
                    for &i in &members[a] {
                        count[i] += 1;
                    }
                }
            }
        }
    }
    sel.sort_unstable();
    sel
}

/// Reduced cost of a (new or existing) box from the master duals, with the
/// per-sample pair duals summed over `K_i`:
///
/// `omega - sum mu1 d + sum_i (sum_j mu2_ij) d_i + sum_i (sum_j mu3_ij) d_i - sum mu4 d + lambda`
///
/// where `d_i = 1` when sample `i` lies in `b`.
pub fn reduced_cost(duals: &Duals, points: &[Vec<f64>], b: Option<&Hyperbox>, omega: f64) -> f64 {
    let inside = |i: usize| b.is_some_and(|b| b.contains(&points[i]));
    let mut rc = omega + duals.lambda;
    rc -= duals.mu1.iter().filter(|(i, _)| inside(*i)).map(|(_, v)| v).sum::<f64>();
    rc += duals.mu2.iter().filter(|(i, _, _)| inside(*i)).map(|(_, _, v)| v).sum::<f64>();
    rc += duals.mu3.iter().filter(|(i, _, _)| inside(*i)).map(|(_, _, v)| v).sum::<f64>();
    rc -= duals.mu4.iter().filter(|(i, _)| inside(*i)).map(|(_, v)| v).sum::<f64>();
    rc
}

/// LP reduced cost of working-set column `j` rebuilt from the duals, using
/// only the pair duals that belong to `j` itself. Cut rows are not included,
/// so this matches the LP only for columns without cuts.
pub fn column_reduced_cost(problem: &MasterProblem, duals: &Duals, j: usize) -> f64 {
    let b = &problem.working_set[j];
    let inside = |i: usize| b.contains(&problem.points[i]);
    let mut rc = problem.omega + duals.lambda;
    rc -= duals.mu1.iter().filter(|(i, _)| inside(*i)).map(|(_, v)| v).sum::<f64>();
    rc += duals.mu2.iter().filter(|(_, k, _)| *k == j).map(|(_, _, v)| v).sum::<f64>();
    rc += duals.mu3.iter().filter(|(_, k, _)| *k == j).map(|(_, _, v)| v).sum::<f64>();
    rc -= duals.mu4.iter().filter(|(i, _)| inside(*i)).map(|(_, v)| v).sum::<f64>();
    rc
}

/// `J_n` plus the penalty for an integral selection `s`, computed from the
/// mismatch definition rather than from the LP.
pub fn integral_objective(problem: &MasterProblem, selected: &[usize]) -> f64 {
    let scale = 1.0 / problem.n_retained() as f64;
    let mut total = 0.0;
    for i in 0..problem.n_retained() {
        let covered = problem.membership[i].iter().any(|j| selected.contains(j));
        let decision = if covered { Label::Plus } else { Label::Minus };
        if decision != problem.labels[i] {
            total += problem.psi.psi[i] * scale;
        }
    }
    total + problem.omega * selected.len() as f64
}
