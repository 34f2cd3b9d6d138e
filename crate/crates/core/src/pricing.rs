//! Hyperbox search: the box maximizing a signed sum of sample weights.
//!
//! A candidate box is a tuple of per-dimension rank intervals over the
//! sorted distinct coordinates of the weighted samples. Every sample inside
//! the box counts; positive samples are always taken when inside.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::time::{Duration, Instant};

use crate::data::{Hyperbox, IndexPartition, SampleClass};
use crate::lp::INT_TOL;
use crate::master::{Duals, MasterProblem, MasterSolution};
use crate::{Error, Result};

/// Coefficients with smaller magnitude are dropped.
pub const COEFF_EPS: f64 = 1e-12;
pub const DEFAULT_TIME_LIMIT: f64 = 180.0;
pub const DEFAULT_BRUTEFORCE_GUARD: u128 = 1_000_000;

/// Ties closer than this are broken by volume, then by endpoints.
const TIE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct PricingInstance {
    /// sample index (into the score vector) of every retained coefficient
    pub samples: Vec<usize>,
    pub coeff: Vec<f64>,
    pub points: Vec<Vec<f64>>,
    /// sorted distinct coordinates per dimension
    pub values: Vec<Vec<f64>>,
    /// `ranks[k][t]` is the rank of retained sample `k` in dimension `t`
    pub ranks: Vec<Vec<usize>>,
    pub lambda: f64,
    pub omega: f64,
    pub d: usize,
}

impl PricingInstance {
    /// Builds an instance from raw coefficients; zero coefficients are
    /// dropped. `samples[k]` labels `points[k]` in the returned solution.
    pub fn new(
        samples: Vec<usize>,
        coeff: Vec<f64>,
        points: Vec<Vec<f64>>,
        d: usize,
        lambda: f64,
        omega: f64,
    ) -> Result<PricingInstance> {
        if samples.len() != coeff.len() || points.len() != coeff.len() {
            return Err(Error::Dimension { expected: coeff.len(), got: points.len() });
        }
        if let Some(p) = points.iter().find(|p| p.len() != d) {
            return Err(Error::Dimension { expected: d, got: p.len() });
        }
        let keep: Vec<usize> = (0..coeff.len()).filter(|&k| coeff[k].abs() >= COEFF_EPS).collect();
        let samples: Vec<usize> = keep.iter().map(|&k| samples[k]).collect();
        let coeff: Vec<f64> = keep.iter().map(|&k| coeff[k]).collect();
        let points: Vec<Vec<f64>> = keep.iter().map(|&k| points[k].clone()).collect();
        let values: Vec<Vec<f64>> = (0..d)
            .map(|t| {
                let mut v: Vec<f64> = points.iter().map(|p| p[t]).collect();
                v.sort_by(f64::total_cmp);
                v.dedup();
                v
            })
            .collect();
        let ranks = points
            .iter()
            .map(|p| {
                (0..d)
                    .map(|t| values[t].partition_point(|v| *v < p[t]))
                    .collect()
            })
            .collect();
        Ok(PricingInstance { samples, coeff, points, values, ranks, lambda, omega, d })
    }

    pub fn len(&self) -> usize {
        self.coeff.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeff.is_empty()
    }

    /// Objective of a box: weights of the retained samples inside, minus
    /// `lambda` and `omega`.
    pub fn evaluate(&self, b: Option<&Hyperbox>) -> f64 {
        let gain: f64 = match b {
            Some(b) => (0..self.len()).filter(|&k| b.contains(&self.points[k])).map(|k| self.coeff[k]).sum(),
            None => 0.0,
        };
        gain - self.lambda - self.omega
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PricingSolution {
    /// selected sample indices (score-vector positions), ascending
    pub delta: Vec<usize>,
    /// span of the selection; `None` for the empty selection
    pub hyperbox: Option<Hyperbox>,
    pub objective: f64,
    pub reduced_cost: f64,
    pub timed_out: bool,
}

/// Pricing coefficients from the master duals: `+mu1`, `-sum_j mu2`,
/// `-sum_j mu3`, `+mu4` per sample.
pub fn build_pricing(
    duals: &Duals,
    partition: &IndexPartition,
    points: &[Vec<f64>],
    omega: f64,
) -> Result<PricingInstance> {
    let n = points.len();
    let d = points.first().map_or(0, |p| p.len());
    let mut coeff = vec![0.0; n];
    for &(i, v) in &duals.mu1 {
        coeff[i] += v;
    }
    for &(i, _, v) in duals.mu2.iter().chain(&duals.mu3) {
        coeff[i] -= v;
    }
    for &(i, v) in &duals.mu4 {
        coeff[i] += v;
    }
    let covered = partition.p.len() + partition.n_set.len();
    if covered != n {
        return Err(Error::Dimension { expected: n, got: covered });
    }
    PricingInstance::new((0..n).collect(), coeff, points.to_vec(), d, duals.lambda, omega)
}

/// Coefficients for a new box from the dual slack its own rows could take.
///
/// A new box adds one row per covered sample of the two pair families. Such
/// a row can carry a non-zero dual only if it is tight at the current
/// solution (`xi_i = 0` for untreated positives, `xi_i = 1` for treated
/// negatives), and at most the unused part of the sample's weight
/// `|psi_i| / n' - sum_j mu_ij`. Positive samples keep `mu1` / `mu4`.
pub fn build_completion_pricing(problem: &MasterProblem, solution: &MasterSolution) -> Result<PricingInstance> {
    let duals = solution
        .duals
        .as_ref()
        .ok_or_else(|| Error::Invalid("completion pricing needs a relaxed solution".into()))?;
    let n = problem.n_retained();
    let scale = 1.0 / n as f64;
    let mut used = vec![0.0; n];
    for &(i, _, v) in duals.mu2.iter().chain(&duals.mu3) {
        used[i] += v;
    }
    let mut coeff = vec![0.0; n];
    for &(i, v) in duals.mu1.iter().chain(&duals.mu4) {
        coeff[i] += v;
    }
    for (i, class) in problem.classes().iter().enumerate() {
        let tight = match class {
            SampleClass::UntreatedPositive => solution.xi[i] <= INT_TOL,
            SampleClass::TreatedNegative => solution.xi[i] >= 1.0 - INT_TOL,
            _ => continue,
        };
        if tight {
            coeff[i] -= (problem.psi.psi[i].abs() * scale - used[i]).max(0.0);
        }
    }
    let d = problem.points().first().map_or(0, |p| p.len());
    PricingInstance::new((0..n).collect(), coeff, problem.points().to_vec(), d, duals.lambda, problem.omega)
}

struct Best {
    value: f64,
    members: Vec<usize>,
    hyperbox: Option<Hyperbox>,
}

impl Best {
    fn empty(inst: &PricingInstance) -> Best {
        Best { value: -inst.lambda - inst.omega, members: Vec::new(), hyperbox: None }
    }

    /// Tie order: higher value, then smaller volume, then lexicographically
    /// smaller `(lower, upper)`.
    fn offer(&mut self, inst: &PricingInstance, exclude: &HashSet<Vec<u64>>, value: f64, members: Vec<usize>) {
        if value < self.value - TIE_EPS || members.is_empty() {
            return;
        }
        let b = Hyperbox::span(members.iter().map(|&k| inst.points[k].as_slice())).expect("non-empty");
        if exclude.contains(&b.key()) {
            return;
        }
        let better = value > self.value + TIE_EPS || match &self.hyperbox {
            None => false,
            Some(cur) => compare_boxes(&b, cur) == Ordering::Less,
        };
        if better {
            self.value = value;
            self.members = members;
            self.hyperbox = Some(b);
        }
    }

    fn finish(self, inst: &PricingInstance, timed_out: bool) -> PricingSolution {
        let mut delta: Vec<usize> = self.members.iter().map(|&k| inst.samples[k]).collect();
        delta.sort_unstable();
        PricingSolution {
            delta,
            hyperbox: self.hyperbox,
            objective: self.value,
            reduced_cost: -self.value,
            timed_out,
        }
    }
}

fn compare_boxes(a: &Hyperbox, b: &Hyperbox) -> Ordering {
    a.volume()
        .total_cmp(&b.volume())
        .then_with(|| a.lower.iter().zip(&b.lower).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal))
        .then_with(|| a.upper.iter().zip(&b.upper).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal))
}

struct Search<'a> {
    inst: &'a PricingInstance,
    exclude: &'a HashSet<Vec<u64>>,
    best: Best,
    /// subtrees that cannot exceed this value are skipped
    floor: f64,
    start: Instant,
    limit: Duration,
    timed_out: bool,
    ticks: u64,
}

impl Search<'_> {
    fn prunable(&self, bound: f64) -> bool {
        bound < self.best.value - TIE_EPS || bound <= self.floor
    }

    fn out_of_time(&mut self) -> bool {
        if self.timed_out {
            return true;
        }
        self.ticks += 1;
        if self.ticks % 256 == 0 && self.start.elapsed() > self.limit {
            self.timed_out = true;
        }
        self.timed_out
    }

    /// `alive` is sorted by rank in dimension `t`.
    fn descend(&mut self, t: usize, alive: &[usize]) {
        let inst = self.inst;
        if self.out_of_time() {
            return;
        }
        // group the alive samples by rank in dimension t
        let mut groups: Vec<(usize, usize, f64, bool)> = Vec::new(); // (start, end, weight, has_positive)
        let mut a = 0;
        while a < alive.len() {
            let r = inst.ranks[alive[a]][t];
            let mut b = a;
            let mut w = 0.0;
            let mut pos = false;
            while b < alive.len() && inst.ranks[alive[b]][t] == r {
                w += inst.coeff[alive[b]];
                pos |= inst.coeff[alive[b]] > 0.0;
                b += 1;
            }
            groups.push((a, b, w, pos));
            a = b;
        }
        if t + 1 == inst.d {
            self.last_dimension(alive, &groups);
            return;
        }
        let next = t + 1;
        let penalty = inst.lambda + inst.omega;
        let mut pos_prefix = vec![0.0; alive.len() + 1];
        for (q, &k) in alive.iter().enumerate() {
            pos_prefix[q + 1] = pos_prefix[q] + inst.coeff[k].max(0.0);
        }
        let bound = |from: usize, to: usize| pos_prefix[to] - pos_prefix[from] - penalty;
        for ga in 0..groups.len() {
            if !groups[ga].3 {
                continue;
            }
            if self.prunable(bound(groups[ga].0, alive.len())) {
                continue;
            }
            for gb in ga..groups.len() {
                if !groups[gb].3 {
                    continue;
                }
                if self.out_of_time() {
                    return;
                }
                if self.prunable(bound(groups[ga].0, groups[gb].1)) {
                    continue;
                }
                let slice = &alive[groups[ga].0..groups[gb].1];
                let mut sub = slice.to_vec();
                sub.sort_by_key(|&k| (inst.ranks[k][next], k));
                self.descend(next, &sub);
                if self.timed_out {
                    return;
                }
            }
        }
    }

    /// Maximum-weight run of rank groups whose end groups hold a positive
    /// sample; among equal sums the shortest run ending at each group wins.
    fn last_dimension(&mut self, alive: &[usize], groups: &[(usize, usize, f64, bool)]) {
        if !self.exclude.is_empty() {
            self.last_dimension_all(alive, groups);
            return;
        }
        let mut prefix = 0.0;
        let mut best_start: Option<(usize, f64)> = None; // (group, prefix before it)
        for (g, &(_, _, w, pos)) in groups.iter().enumerate() {
            if pos {
                match best_start {
                    Some((_, p)) if p < prefix - TIE_EPS => {}
                    _ => best_start = Some((g, prefix)),
                }
            }
            prefix += w;
            if pos {
                let (gs, p) = best_start.expect("set above");
                let value = prefix - p - self.inst.lambda - self.inst.omega;
                if value >= self.best.value - TIE_EPS {
                    let members = alive[groups[gs].0..groups[g].1].to_vec();
                    self.best.offer(self.inst, self.exclude, value, members);
                }
            }
        }
    }
}

impl Search<'_> {
    /// Every run between positive end groups; used when some boxes are
    /// excluded and the single best run per end group may be one of them.
    fn last_dimension_all(&mut self, alive: &[usize], groups: &[(usize, usize, f64, bool)]) {
        let penalty = self.inst.lambda + self.inst.omega;
        for gs in 0..groups.len() {
            if !groups[gs].3 {
                continue;
            }
            let mut sum = 0.0;
            for ge in gs..groups.len() {
                sum += groups[ge].2;
                if groups[ge].3 && sum - penalty >= self.best.value - TIE_EPS {
                    let members = alive[groups[gs].0..groups[ge].1].to_vec();
                    self.best.offer(self.inst, self.exclude, sum - penalty, members);
                }
            }
        }
    }
}

/// Starting points of the coordinate ascent besides the full box.
const ASCENT_STARTS: usize = 32;
const ASCENT_SWEEPS: usize = 50;

/// Best run of `(rank, weight, has_positive)` groups with positive end
/// groups, as `(first, last, sum)`; ties keep the earlier, shorter run.
fn best_run(groups: &[(usize, f64, bool)]) -> Option<(usize, usize, f64)> {
    let mut prefix = 0.0;
    let mut start: Option<(usize, f64)> = None;
    let mut best: Option<(usize, usize, f64)> = None;
    for (g, &(_, w, pos)) in groups.iter().enumerate() {
        if pos {
            match start {
                Some((_, p)) if p < prefix - TIE_EPS => {}
                _ => start = Some((g, prefix)),
            }
        }
        prefix += w;
        if pos {
            let (gs, p) = start.expect("set above");
            if best.map_or(true, |(_, _, v)| prefix - p > v + TIE_EPS) {
                best = Some((gs, g, prefix - p));
            }
        }
    }
    best
}

/// Local optimum of the box objective from `intervals` (inclusive rank
/// bounds per dimension): each dimension in turn gets its best interval
/// with the others held fixed, until no dimension improves.
fn coordinate_ascent(inst: &PricingInstance, mut intervals: Vec<(usize, usize)>) -> Vec<usize> {
    let inside = |k: usize, iv: &[(usize, usize)], skip: usize| {
        (0..inst.d).all(|s| s == skip || (iv[s].0..=iv[s].1).contains(&inst.ranks[k][s]))
    };
    let mut current = f64::NEG_INFINITY;
    for _ in 0..ASCENT_SWEEPS {
        let mut improved = false;
        for t in 0..inst.d {
            let mut alive: Vec<usize> = (0..inst.len()).filter(|&k| inside(k, &intervals, t)).collect();
            alive.sort_by_key(|&k| (inst.ranks[k][t], k));
            let mut groups: Vec<(usize, f64, bool)> = Vec::new();
            for &k in &alive {
                let r = inst.ranks[k][t];
                match groups.last_mut() {
                    Some(g) if g.0 == r => {
                        g.1 += inst.coeff[k];
                        g.2 |= inst.coeff[k] > 0.0;
                    }
                    _ => groups.push((r, inst.coeff[k], inst.coeff[k] > 0.0)),
                }
            }
            if let Some((gs, ge, v)) = best_run(&groups) {
                if v > current + TIE_EPS {
                    current = v;
                    intervals[t] = (groups[gs].0, groups[ge].0);
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
    }
    (0..inst.len()).filter(|&k| inside(k, &intervals, inst.d)).collect()
}

impl Search<'_> {
    /// Offers coordinate-ascent optima from the full box and from the
    /// heaviest positive samples.
    fn seed_heuristic(&mut self) {
        let inst = self.inst;
        let full: Vec<(usize, usize)> = inst.values.iter().map(|v| (0, v.len() - 1)).collect();
        let mut positives: Vec<usize> = (0..inst.len()).filter(|&k| inst.coeff[k] > 0.0).collect();
        positives.sort_by(|&a, &b| inst.coeff[b].total_cmp(&inst.coeff[a]).then(a.cmp(&b)));
        positives.truncate(ASCENT_STARTS);
        let starts = std::iter::once(full).chain(positives.iter().map(|&k| inst.ranks[k].iter().map(|&r| (r, r)).collect()));
        for start in starts {
            let members = coordinate_ascent(inst, start);
            let value = members.iter().map(|&k| inst.coeff[k]).sum::<f64>() - inst.lambda - inst.omega;
            self.best.offer(inst, self.exclude, value, members);
        }
    }
}

/// Best box found by coordinate ascent alone; no optimality guarantee.
pub fn solve_pricing_heuristic(inst: &PricingInstance, exclude: &HashSet<Vec<u64>>) -> PricingSolution {
    let mut search = Search {
        inst,
        exclude,
        best: Best::empty(inst),
        floor: f64::NEG_INFINITY,
        start: Instant::now(),
        limit: Duration::MAX,
        timed_out: false,
        ticks: 0,
    };
    if !inst.is_empty() && inst.d > 0 && inst.coeff.iter().any(|&c| c > 0.0) {
        search.seed_heuristic();
    }
    search.best.finish(inst, false)
}

/// Exact hyperbox search by depth-first branch-and-bound over rank
/// intervals, dimensions in index order. The bound at a node is the
/// positive weight still inside the partial box. When the time limit is hit
/// the best box found so far is returned with `timed_out` set.
pub fn solve_pricing(inst: &PricingInstance, time_limit: f64) -> PricingSolution {
    solve_pricing_excluding(inst, time_limit, &HashSet::new())
}

/// [`solve_pricing`] restricted to boxes whose [`Hyperbox::key`] is not in
/// `exclude`.
pub fn solve_pricing_excluding(
    inst: &PricingInstance,
    time_limit: f64,
    exclude: &HashSet<Vec<u64>>,
) -> PricingSolution {
    solve_pricing_above(inst, time_limit, exclude, f64::NEG_INFINITY)
}

/// [`solve_pricing_excluding`] that only needs to be exact above `floor`:
/// when no allowed box scores more than `floor`, the returned box is the
/// best one met during a pruned search.
pub fn solve_pricing_above(
    inst: &PricingInstance,
    time_limit: f64,
    exclude: &HashSet<Vec<u64>>,
    floor: f64,
) -> PricingSolution {
    let mut search = Search {
        inst,
        exclude,
        best: Best::empty(inst),
        floor,
        start: Instant::now(),
        limit: Duration::from_secs_f64(time_limit.max(0.0)),
        timed_out: false,
        ticks: 0,
    };
    if inst.is_empty() || inst.d == 0 || !inst.coeff.iter().any(|&c| c > 0.0) {
        return search.best.finish(inst, false);
    }
    search.seed_heuristic();
    // full range in every dimension but the last
    let mut all: Vec<usize> = (0..inst.len()).collect();
    let last = inst.d - 1;
    all.sort_by_key(|&k| (inst.ranks[k][last], k));
    search.descend_last_only(&all);
    let mut order: Vec<usize> = (0..inst.len()).collect();
    order.sort_by_key(|&k| (inst.ranks[k][0], k));
    search.descend(0, &order);
    let timed_out = search.timed_out;
    search.best.finish(inst, timed_out)
}

impl Search<'_> {
    fn descend_last_only(&mut self, sorted_last: &[usize]) {
        let t = self.inst.d - 1;
        let mut groups = Vec::new();
        let mut a = 0;
        while a < sorted_last.len() {
            let r = self.inst.ranks[sorted_last[a]][t];
            let mut b = a;
            let mut w = 0.0;
            let mut pos = false;
            while b < sorted_last.len() && self.inst.ranks[sorted_last[b]][t] == r {
                w += self.inst.coeff[sorted_last[b]];
                pos |= self.inst.coeff[sorted_last[b]] > 0.0;
                b += 1;
            }
            groups.push((a, b, w, pos));
            a = b;
        }
        self.last_dimension(sorted_last, &groups);
    }
}

/// Number of rank-interval tuples the brute force would enumerate.
pub fn bruteforce_size(inst: &PricingInstance) -> u128 {
    inst.values.iter().map(|v| (v.len() as u128) * (v.len() as u128 + 1) / 2).product()
}

/// Enumerates every tuple of per-dimension rank intervals. Ties go to the
/// lexicographically smallest `(lo_0, hi_0, lo_1, hi_1, ...)`.
pub fn solve_pricing_bruteforce(inst: &PricingInstance, guard: u128) -> Result<PricingSolution> {
    let size = bruteforce_size(inst);
    if size > guard {
        return Err(Error::GuardExceeded { size, guard });
    }
    let empty = PricingSolution {
        delta: Vec::new(),
        hyperbox: None,
        objective: -inst.lambda - inst.omega,
        reduced_cost: inst.lambda + inst.omega,
        timed_out: false,
    };
    if inst.is_empty() || inst.d == 0 {
        return Ok(empty);
    }
    let intervals: Vec<Vec<(usize, usize)>> = inst
        .values
        .iter()
        .map(|v| (0..v.len()).flat_map(|lo| (lo..v.len()).map(move |hi| (lo, hi))).collect())
        .collect();
    let mut idx = vec![0usize; inst.d];
    let mut best_value = empty.objective;
    let mut best_members: Vec<usize> = Vec::new();
    loop {
        let members: Vec<usize> = (0..inst.len())
            .filter(|&k| {
                (0..inst.d).all(|t| {
                    let (lo, hi) = intervals[t][idx[t]];
                    (lo..=hi).contains(&inst.ranks[k][t])
                })
            })
            .collect();
        let value = members.iter().map(|&k| inst.coeff[k]).sum::<f64>() - inst.lambda - inst.omega;
        if value > best_value {
            best_value = value;
            best_members = members;
        }
        // odometer, last dimension fastest
        let mut t = inst.d;
        loop {
            if t == 0 {
                return Ok(finish_members(inst, best_value, best_members, empty));
            }
            t -= 1;
            idx[t] += 1;
            if idx[t] < intervals[t].len() {
                break;
            }
            idx[t] = 0;
        }
    }
}

fn finish_members(inst: &PricingInstance, value: f64, members: Vec<usize>, empty: PricingSolution) -> PricingSolution {
    if members.is_empty() {
        return empty;
    }
    let hyperbox = Hyperbox::span(members.iter().map(|&k| inst.points[k].as_slice()));
    let mut delta: Vec<usize> = members.iter().map(|&k| inst.samples[k]).collect();
    delta.sort_unstable();
    PricingSolution { delta, hyperbox, objective: value, reduced_cost: -value, timed_out: false }
}
