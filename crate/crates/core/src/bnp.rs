//! Branch-and-price over the master problem.
//!
//! Each node of a FIFO list carries a working set and a list of cuts. A node
//! is solved by column generation; the root additionally solves the integer
//! master on its enlarged working set to seed the incumbent. Fractional
//! nodes branch on the fractional box of largest volume and also re-solve
//! the integer master on their working set.

use std::collections::{HashSet, VecDeque};
use std::time::{Duration, Instant};

use log::{debug, info, warn};
use serde::Serialize;

use crate::data::{spanned_boxes, Dataset, Hyperbox, Label, Policy};
use crate::lp::{MipLimits, INT_TOL};
use crate::master::{integral_objective, solve_integer, Cut, RelaxedMaster, MasterProblem, MasterSolution};
use crate::pricing::{
    build_completion_pricing, build_pricing, solve_pricing_above, solve_pricing_heuristic,
};
use crate::scores::ScoreVector;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BnPConfig {
    pub m_max: usize,
    pub omega: f64,
    pub max_nodes: usize,
    pub pricing_time_limit: f64,
    pub cg_max_rounds: usize,
    pub tol: f64,
    pub flip: bool,
    /// time limit of each integer master solve
    pub milp_time_limit: f64,
    /// branch-and-bound node limit of each integer master solve
    pub milp_node_limit: usize,
    /// boxes added to the initial working set; together they form the
    /// initial incumbent
    pub warm_start: Vec<Hyperbox>,
    /// wall-clock budget of a whole fit in seconds; pricing and integer
    /// solves are clipped to what is left
    pub time_limit: f64,
}

impl Default for BnPConfig {
    fn default() -> BnPConfig {
        BnPConfig {
            m_max: 1,
            omega: 0.0,
            max_nodes: 50,
            pricing_time_limit: 180.0,
            cg_max_rounds: 500,
            tol: 1e-9,
            flip: false,
            milp_time_limit: 30.0,
            milp_node_limit: 10_000,
            warm_start: Vec::new(),
            time_limit: f64::INFINITY,
        }
    }
}

impl BnPConfig {
    /// Integer-solve limits within the fit budget; at least
    /// [`MIN_MIP_TIME`] so the root always gets an incumbent.
    fn mip_limits(&self, deadline: Deadline) -> MipLimits {
        MipLimits { time: self.milp_time_limit.min(deadline.remaining().max(MIN_MIP_TIME)), nodes: self.milp_node_limit }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_nodes == 0 || self.cg_max_rounds == 0 {
            return Err(Error::Invalid("max_nodes and cg_max_rounds must be positive".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Invalid("tol must be positive".into()));
        }
        if !(self.omega >= 0.0 && self.omega.is_finite()) {
            return Err(Error::Invalid(format!("penalty must be a finite value >= 0, got {}", self.omega)));
        }
        if !(self.pricing_time_limit > 0.0 && self.milp_time_limit > 0.0 && self.time_limit > 0.0) {
            return Err(Error::Invalid("time limits must be positive".into()));
        }
        if self.warm_start.len() > self.m_max {
            return Err(Error::Invalid(format!(
                "warm start has {} boxes but at most {} are allowed",
                self.warm_start.len(),
                self.m_max
            )));
        }
        Ok(())
    }
}

const MIN_MIP_TIME: f64 = 1.0;

/// End of the fit budget; `None` when unbounded.
#[derive(Debug, Clone, Copy)]
struct Deadline(Option<Instant>);

impl Deadline {
    fn after(seconds: f64) -> Deadline {
        Deadline(Duration::try_from_secs_f64(seconds).ok().and_then(|d| Instant::now().checked_add(d)))
    }

    fn remaining(self) -> f64 {
        self.0.map_or(f64::INFINITY, |d| d.saturating_duration_since(Instant::now()).as_secs_f64())
    }

    fn passed(self) -> bool {
        self.remaining() <= 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    Optimal,
    NodeLimit,
    TimeLimit,
}

impl FitStatus {
    pub fn id(self) -> &'static str {
        match self {
            FitStatus::Optimal => "optimal",
            FitStatus::NodeLimit => "node_limit",
            FitStatus::TimeLimit => "time_limit",
        }
    }
}

/// One line of search progress, recorded per processed node.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeRecord {
    pub node: usize,
    /// relaxed objective, `None` when the node was infeasible
    pub relaxed: Option<f64>,
    pub incumbent: f64,
    pub columns_added: usize,
    pub pruned: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub policy: Policy,
    /// `J_n` of the returned policy (no penalty)
    pub objective: f64,
    /// `J_n + omega * |boxes|`, the quantity minimized
    pub penalized_objective: f64,
    /// root relaxation value, penalty included
    pub relaxation_bound: f64,
    pub nodes_explored: usize,
    pub columns_generated: usize,
    pub status: FitStatus,
    pub progress: Vec<NodeRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CgStop {
    /// no column with negative reduced cost
    Converged,
    /// the best column was already in the working set
    Duplicate,
    RoundLimit,
    /// pricing hit its time limit without an improving column
    PricingTimeout,
    /// the fit budget ran out
    TimeLimit,
}

#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub solution: MasterSolution,
    pub problem: MasterProblem,
    pub columns_added: usize,
    pub rounds: usize,
    pub stop: CgStop,
    /// some pricing round hit its time limit
    pub pricing_timed_out: bool,
}

/// Alternates relaxed master solves and pricing until no box improves the
/// relaxation. A pricing objective above `tol` (penalty included) means a
/// negative reduced cost and the box is appended to the working set.
pub fn column_generation(problem: MasterProblem, config: &BnPConfig) -> Result<CgOutcome> {
    column_generation_until(problem, config, Deadline::after(config.time_limit))
}

fn column_generation_until(problem: MasterProblem, config: &BnPConfig, deadline: Deadline) -> Result<CgOutcome> {
    let mut seen: HashSet<Vec<u64>> = problem.working_set.iter().map(Hyperbox::key).collect();
    let mut master = RelaxedMaster::new(problem)?;
    let mut columns_added = 0;
    let mut pricing_timed_out = false;
    let mut rounds = 0;
    loop {
        let solution = master.solve()?;
        let finish = |master: RelaxedMaster, solution, stop, columns_added, rounds, pricing_timed_out| {
            Ok(CgOutcome { solution, problem: master.into_problem(), columns_added, rounds, stop, pricing_timed_out })
        };
        if rounds >= config.cg_max_rounds {
            warn!("column generation stopped after {rounds} rounds");
            return finish(master, solution, CgStop::RoundLimit, columns_added, rounds, pricing_timed_out);
        }
        if deadline.passed() {
            return finish(master, solution, CgStop::TimeLimit, columns_added, rounds, pricing_timed_out);
        }
        rounds += 1;
        let problem = master.problem();
        let duals = solution.duals.as_ref().expect("relaxed solve has duals");
        let inst = build_pricing(duals, &problem.partition, problem.points(), problem.omega)?;
        let quick = solve_pricing_heuristic(&inst, &seen);
        let mut priced = if quick.objective > config.tol {
            quick
        } else {
            let limit = config.pricing_time_limit.min(deadline.remaining());
            let exact = solve_pricing_above(&inst, limit, &HashSet::new(), config.tol);
            pricing_timed_out |= exact.timed_out;
            exact
        };
        let known = priced.hyperbox.as_ref().is_some_and(|b| seen.contains(&b.key()));
        if priced.objective <= config.tol || known {
            let inst = build_completion_pricing(problem, &solution)?;
            let limit = config.pricing_time_limit.min(deadline.remaining());
            let extra = solve_pricing_above(&inst, limit, &seen, config.tol);
            pricing_timed_out |= extra.timed_out;
            if extra.objective > config.tol {
                priced = extra;
            }
        }
        if priced.objective <= config.tol {
            let stop = if priced.timed_out { CgStop::PricingTimeout } else { CgStop::Converged };
            return finish(master, solution, stop, columns_added, rounds, pricing_timed_out);
        }
        let b = priced.hyperbox.expect("improving column is non-empty");
        if !seen.insert(b.key()) {
            return finish(master, solution, CgStop::Duplicate, columns_added, rounds, pricing_timed_out);
        }
        debug!("column {} with reduced cost {:.3e}", problem.working_set.len(), priced.reduced_cost);
        master.add_column(b)?;
        columns_added += 1;
    }
}

/// Fractional box of largest volume; ties go to the value closest to 0.5,
/// then to the lowest index.
pub fn branch_select(solution: &MasterSolution, working_set: &[Hyperbox], tol: f64) -> Result<usize> {
    let mut best: Option<(usize, f64, f64)> = None;
    for (j, &v) in solution.s.iter().enumerate() {
        if v <= tol || v >= 1.0 - tol {
            continue;
        }
        let vol = working_set[j].volume();
        let dist = (v - 0.5).abs();
        let better = match best {
            None => true,
            Some((_, bv, bd)) => vol > bv || (vol == bv && dist < bd),
        };
        if better {
            best = Some((j, vol, dist));
        }
    }
    best.map(|(j, _, _)| j).ok_or_else(|| Error::Invalid("no fractional box to branch on".into()))
}

struct Node {
    working_set: Vec<Hyperbox>,
    cuts: Vec<Cut>,
}

struct Incumbent {
    boxes: Vec<Hyperbox>,
    value: f64,
}

/// Replaces the incumbent on improvement or tie.
fn offer(incumbent: &mut Option<Incumbent>, cand: Incumbent, tol: f64) {
    let best = incumbent.as_ref().map_or(f64::INFINITY, |i| i.value);
    if cand.value <= best + tol {
        *incumbent = Some(cand);
    }
}

/// Working-set indices of the incumbent's boxes that are present in `problem`.
fn start_of(problem: &MasterProblem, incumbent: Option<&Incumbent>) -> Vec<usize> {
    let Some(inc) = incumbent else { return Vec::new() };
    let keys: HashSet<Vec<u64>> = inc.boxes.iter().map(Hyperbox::key).collect();
    (0..problem.working_set.len()).filter(|&j| keys.contains(&problem.working_set[j].key())).collect()
}

fn incumbent_from(problem: &MasterProblem, solution: &MasterSolution) -> Incumbent {
    let selected = solution.selected();
    Incumbent {
        value: integral_objective(problem, &selected),
        boxes: selected.iter().map(|&j| problem.working_set[j].clone()).collect(),
    }
}

/// Learns a union of at most `config.m_max` boxes minimizing the weighted
/// mismatch of `scores` (plus `omega` per box). With `config.flip` the
/// treatment labels are negated first and the policy is marked flipped.
pub fn fit(dataset: &Dataset, scores: &ScoreVector, config: &BnPConfig) -> Result<FitResult> {
    config.validate()?;
    let deadline = Deadline::after(config.time_limit);
    if let Some(&r) = scores.kept.iter().find(|&&r| r >= dataset.n()) {
        return Err(Error::Invalid(format!("score refers to row {r} but the data has {} rows", dataset.n())));
    }
    let points: Vec<Vec<f64>> = scores.kept.iter().map(|&r| dataset.sample(r).x.clone()).collect();
    let mut labels: Vec<Label> = scores.labels(dataset);
    if config.flip {
        labels.iter_mut().for_each(|t| *t = t.flip());
    }
    let root_box = Hyperbox::span(dataset.samples().iter().map(|s| s.x.as_slice()))
        .ok_or_else(|| Error::Invalid("empty dataset".into()))?;
    let mut w0 = vec![root_box];
    for b in &config.warm_start {
        if b.dim() != dataset.d() {
            return Err(Error::Dimension { expected: dataset.d(), got: b.dim() });
        }
        if !w0.iter().any(|o| o.key() == b.key()) {
            w0.push(b.clone());
        }
    }
    let base = MasterProblem::new(points, labels, scores.clone(), w0.clone(), vec![], config.m_max, config.omega)?;
    let mut incumbent: Option<Incumbent> = None;
    if !config.warm_start.is_empty() {
        let keys: HashSet<Vec<u64>> = config.warm_start.iter().map(Hyperbox::key).collect();
        let sel: Vec<usize> = (0..w0.len()).filter(|&j| keys.contains(&w0[j].key())).collect();
        incumbent = Some(Incumbent {
            value: integral_objective(&base, &sel),
            boxes: sel.iter().map(|&j| w0[j].clone()).collect(),
        });
    }

    let mut queue = VecDeque::from([Node { working_set: w0, cuts: vec![] }]);
    let mut relaxation_bound = f64::NAN;
    let mut processed = 0usize;
    let mut columns_generated = 0usize;
    let mut budget_hit = false;
    let mut progress = Vec::new();

    while let Some(node) = queue.pop_front() {
        if processed >= config.max_nodes || (processed > 0 && deadline.passed()) {
            budget_hit = true;
            queue.push_front(node);
            break;
        }
        let l = processed;
        processed += 1;
        let problem = base.with_columns(node.working_set, node.cuts)?;
        let cg = match column_generation_until(problem, config, deadline) {
            Ok(cg) => cg,
            Err(Error::Infeasible) if l > 0 => {
                progress.push(NodeRecord {
                    node: l,
                    relaxed: None,
                    incumbent: incumbent.as_ref().map_or(f64::INFINITY, |i| i.value),
                    columns_added: 0,
                    pruned: true,
                });
                continue;
            }
            Err(e) => return Err(e),
        };
        columns_generated += cg.columns_added;
        budget_hit |= cg.pricing_timed_out || matches!(cg.stop, CgStop::RoundLimit | CgStop::TimeLimit);
        let v = cg.solution.objective;
        let unrestricted = cg.problem.with_columns(cg.problem.working_set.clone(), vec![])?;
        let mut integer_solved = false;
        if l == 0 {
            relaxation_bound = v;
            let start = start_of(&unrestricted, incumbent.as_ref());
            let sol = solve_integer(&unrestricted, config.mip_limits(deadline), Some(&start))?;
            budget_hit |= sol.timed_out;
            offer(&mut incumbent, incumbent_from(&unrestricted, &sol), config.tol);
            integer_solved = true;
        }
        let best = incumbent.as_ref().map_or(f64::INFINITY, |i| i.value);
        let pruned = v > best + config.tol;
        if !pruned {
            if cg.solution.is_integral(INT_TOL) {
                offer(&mut incumbent, incumbent_from(&cg.problem, &cg.solution), config.tol);
            } else {
                let j = branch_select(&cg.solution, &cg.problem.working_set, INT_TOL)?;
                for one in [true, false] {
                    let mut cuts = cg.problem.cuts.clone();
                    cuts.push(Cut { index: j, one });
                    queue.push_back(Node { working_set: cg.problem.working_set.clone(), cuts });
                }
                if !integer_solved {
                    let start = start_of(&unrestricted, incumbent.as_ref());
                    match solve_integer(&unrestricted, config.mip_limits(deadline), Some(&start)) {
                        Ok(sol) => {
                            budget_hit |= sol.timed_out;
                            offer(&mut incumbent, incumbent_from(&unrestricted, &sol), config.tol);
                        }
                        Err(Error::NoIncumbent) => budget_hit = true,
                        Err(e) => return Err(e),
                    }
                }
            }
        }
        let record = NodeRecord {
            node: l,
            relaxed: Some(v),
            incumbent: incumbent.as_ref().map_or(f64::INFINITY, |i| i.value),
            columns_added: cg.columns_added,
            pruned,
        };
        debug!("{record:?}");
        progress.push(record);
    }

    let inc = incumbent.ok_or(Error::NoIncumbent)?;
    let status = if !queue.is_empty() && processed >= config.max_nodes {
        FitStatus::NodeLimit
    } else if budget_hit {
        FitStatus::TimeLimit
    } else {
        FitStatus::Optimal
    };
    let k = inc.boxes.len();
    let penalized = inc.value;
    info!("fit finished: {} nodes, {columns_generated} columns, status {}", processed, status.id());
    Ok(FitResult {
        policy: Policy::new(inc.boxes, config.flip),
        objective: penalized - config.omega * k as f64,
        penalized_objective: penalized,
        relaxation_bound,
        nodes_explored: processed,
        columns_generated,
        status,
        progress,
    })
}

/// Best union of at most `m_max` boxes spanned by data points, by
/// exhaustive enumeration (at most `guard` samples). Returns the boxes and
/// the penalized objective `J_n + omega * |boxes|`.
pub fn exhaustive_optimum(
    dataset: &Dataset,
    scores: &ScoreVector,
    m_max: usize,
    omega: f64,
    guard: usize,
) -> Result<(Vec<Hyperbox>, f64)> {
    let boxes = spanned_boxes(dataset, guard.min(63))?;
    let n = scores.len();
    let labels = scores.labels(dataset);
    let points: Vec<&[f64]> = scores.kept.iter().map(|&r| dataset.sample(r).x.as_slice()).collect();
    // boxes covering the same retained samples are interchangeable
    let mut by_mask: Vec<(u64, usize)> = Vec::new();
    let mut masks = HashSet::new();
    for (j, b) in boxes.iter().enumerate() {
        let mask = (0..n).filter(|&i| b.contains(points[i])).fold(0u64, |m, i| m | 1 << i);
        if masks.insert(mask) {
            by_mask.push((mask, j));
        }
    }
    let value = |mask: u64, k: usize| -> f64 {
        let j: f64 = (0..n)
            .filter(|&i| {
                let decision = if mask >> i & 1 == 1 { Label::Plus } else { Label::Minus };
                decision != labels[i]
            })
            .map(|i| scores.psi[i])
            .sum::<f64>()
            / n as f64;
        j + omega * k as f64
    };
    let mut best = (value(0, 0), Vec::new());
    let mut stack: Vec<(usize, u64, Vec<usize>)> = vec![(0, 0, Vec::new())];
    while let Some((from, mask, chosen)) = stack.pop() {
        if chosen.len() == m_max {
            continue;
        }
        for (q, &(m, j)) in by_mask.iter().enumerate().skip(from) {
            let mut next = chosen.clone();
            next.push(j);
            let v = value(mask | m, next.len());
            if v < best.0 - 1e-12 {
                best = (v, next.clone());
            }
            stack.push((q + 1, mask | m, next));
        }
    }
    Ok((best.1.iter().map(|&j| boxes[j].clone()).collect(), best.0))
}
