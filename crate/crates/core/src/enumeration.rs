//! Exact counting of `N_{F,M}(I, t) = #{v ∈ ℤⁿ : (F, M)(v) ∈ I, ‖v‖ ≤ t}`.
//!
//! [`count_naive`] scans the whole integer cube around the ball and is the
//! oracle. [`count_pruned`] walks coordinates depth first and cuts branches
//! with two kinds of bounds:
//!
//! * the residual of the norm budget bounds every unassigned coordinate;
//! * interval arithmetic on the linear forms `v·L ∈ I₁ × … × I_r` bounds the
//!   current coordinate given the partial sums and the largest possible
//!   contribution of the coordinates still to come.
//!
//! Coordinates with the largest rows of `L = g₁·M₀·g₂` are assigned last, so
//! the final `r` levels are pinned to narrow ranges by the box. For `r ≥ 2`
//! combinations of constraints that annihilate the remaining rows give
//! additional cuts in those final levels.
//!
//! Both strategies decide membership with [`SystemInstance::in_box`], so
//! they agree exactly whenever both finish within budget.

use std::ops::ControlFlow;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forms::{EvalScratch, NormSpec, SystemInstance, TargetBox};

pub const DEFAULT_BUDGET: u64 = 2_000_000_000;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Naive,
    #[default]
    Pruned,
}

impl std::str::FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive" => Ok(Strategy::Naive),
            "pruned" => Ok(Strategy::Pruned),
            other => Err(Error::InvalidArgument(format!("unknown strategy {other:?}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct CountRequest {
    pub inst: SystemInstance,
    pub target: TargetBox,
    pub radius: f64,
    pub norm: NormSpec,
    pub strategy: Strategy,
    /// Naive: cap on scanned vectors. Pruned: cap on tree nodes.
    pub budget: u64,
    /// `c_{F,M}`, when known, to fill in the main term.
    pub constant: Option<f64>,
}

impl CountRequest {
    pub fn new(inst: SystemInstance, target: TargetBox, radius: f64) -> Self {
        Self {
            inst,
            target,
            radius,
            norm: NormSpec::Sup,
            strategy: Strategy::Pruned,
            budget: DEFAULT_BUDGET,
            constant: None,
        }
    }

    pub fn norm(mut self, norm: NormSpec) -> Self {
        self.norm = norm;
        self
    }

    pub fn strategy(mut self, strategy: Strategy) -> Self {
        self.strategy = strategy;
        self
    }

    pub fn budget(mut self, budget: u64) -> Self {
        self.budget = budget;
        self
    }

    pub fn constant(mut self, c: f64) -> Self {
        self.constant = Some(c);
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.radius >= 1.0) || !self.radius.is_finite() {
            return Err(Error::InvalidArgument(format!("radius must be ≥ 1, got {}", self.radius)));
        }
        if self.target.dim() != self.inst.r() + 1 {
            return Err(Error::Dimension { expected: self.inst.r() + 1, got: self.target.dim() });
        }
        Ok(())
    }

    /// `c_{F,M}·|I|·t^{n−r−d}`.
    pub fn main_term(&self) -> Option<f64> {
        let e = self.inst.spec().main_exponent() as i32;
        self.constant.map(|c| c * self.target.measure() * self.radius.powi(e))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountReport {
    pub t: f64,
    pub count: u64,
    pub main_term: Option<f64>,
    pub residual: Option<f64>,
    /// Complete candidate vectors examined.
    pub visited: u64,
    /// Tree nodes expanded (equals `visited` for the naive scan).
    pub nodes: u64,
    #[serde(skip)]
    pub wall_time: Duration,
}

impl CountReport {
    fn finish(req: &CountRequest, count: u64, visited: u64, nodes: u64, started: Instant) -> Self {
        let main_term = req.main_term();
        Self {
            t: req.radius,
            count,
            main_term,
            residual: main_term.map(|m| count as f64 - m),
            visited,
            nodes,
            wall_time: started.elapsed(),
        }
    }
}

pub fn count(req: &CountRequest) -> Result<CountReport> {
    match req.strategy {
        Strategy::Naive => count_naive(req),
        Strategy::Pruned => count_pruned(req),
    }
}

/// Full scan of `[−⌈t⌉, ⌈t⌉]ⁿ`: norm filter, then value filter.
pub fn count_naive(req: &CountRequest) -> Result<CountReport> {
    req.validate()?;
    let started = Instant::now();
    let n = req.inst.n();
    let b = req.radius.ceil() as i64;
    let side = (2 * b + 1) as u64;
    let total = side
        .checked_pow(n as u32)
        .filter(|&s| s <= req.budget)
        .ok_or(Error::BudgetExceeded { budget: req.budget })?;
    if req.target.is_empty() {
        return Ok(CountReport::finish(req, 0, 0, 0, started));
    }

    let count = (-b..=b)
        .into_par_iter()
        .map(|first| {
            let mut scratch = EvalScratch::for_instance(&req.inst);
            let mut v = vec![-b; n];
            v[0] = first;
            let mut hits = 0u64;
            loop {
                if req.norm.contains_int(&v, req.radius) && req.inst.in_box(&v, &req.target, &mut scratch) {
                    hits += 1;
                }
                // odometer over coordinates 1..n
                let mut k = n - 1;
                loop {
                    if k == 0 {
                        return hits;
                    }
                    if v[k] < b {
                        v[k] += 1;
                        break;
                    }
                    v[k] = -b;
                    k -= 1;
                }
            }
        })
        .sum();
    Ok(CountReport::finish(req, count, total, total, started))
}

/// Depth-first enumeration with norm and linear-constraint pruning.
pub fn count_pruned(req: &CountRequest) -> Result<CountReport> {
    req.validate()?;
    let started = Instant::now();
    if req.target.is_empty() {
        return Ok(CountReport::finish(req, 0, 0, 0, started));
    }
    let pruner = Pruner::new(&req.inst, &req.target, req.radius, req.norm);
    let shared = AtomicU64::new(0);
    let roots = pruner.root_range();

    let per_root: Vec<Result<(u64, u64, u64)>> = roots
        .into_par_iter()
        .map(|first| {
            let mut walk = Walk::new(&pruner, req.budget, &shared);
            let mut scratch = EvalScratch::for_instance(&req.inst);
            let mut hits = 0u64;
            let _ = walk.run(first, &mut |v| {
                if req.inst.in_box(v, &req.target, &mut scratch) {
                    hits += 1;
                }
                ControlFlow::Continue(())
            })?;
            Ok((hits, walk.leaves, walk.nodes))
        })
        .collect();

    let (mut count, mut visited, mut nodes) = (0, 0, 0);
    for r in per_root {
        let (h, l, k) = r?;
        count += h;
        visited += l;
        nodes += k;
    }
    Ok(CountReport::finish(req, count, visited, nodes, started))
}

/// First `v` in enumeration order with `(F, M)(v) ∈ target` and `‖v‖ ≤ t`.
/// Sequential, so the witness and the budget outcome are deterministic.
pub fn find_first(
    inst: &SystemInstance,
    target: &TargetBox,
    t: f64,
    norm: NormSpec,
    budget: u64,
) -> Result<Option<Vec<i64>>> {
    if target.is_empty() {
        return Ok(None);
    }
    let pruner = Pruner::new(inst, target, t, norm);
    let shared = AtomicU64::new(0);
    let mut scratch = EvalScratch::for_instance(inst);
    let mut found = None;
    for first in pruner.root_range() {
        let mut walk = Walk::new(&pruner, budget, &shared);
        let _ = walk.run(first, &mut |v| {
            if inst.in_box(v, target, &mut scratch) {
                found = Some(v.to_vec());
                ControlFlow::Break(())
            } else {
                ControlFlow::Continue(())
            }
        })?;
        if found.is_some() {
            break;
        }
    }
    Ok(found)
}

/// Every `v` with `(F, M)(v) ∈ target` and `‖v‖ ≤ t`, with its value vector,
/// in enumeration order.
pub fn collect_matches(
    inst: &SystemInstance,
    target: &TargetBox,
    t: f64,
    norm: NormSpec,
    budget: u64,
) -> Result<Vec<(Vec<i64>, Vec<f64>)>> {
    if target.is_empty() {
        return Ok(Vec::new());
    }
    let pruner = Pruner::new(inst, target, t, norm);
    let shared = AtomicU64::new(0);
    let chunks: Vec<Result<Vec<(Vec<i64>, Vec<f64>)>>> = pruner
        .root_range()
        .into_par_iter()
        .map(|first| {
            let mut walk = Walk::new(&pruner, budget, &shared);
            let mut scratch = EvalScratch::for_instance(inst);
            let mut out = Vec::new();
            let _ = walk.run(first, &mut |v| {
                if inst.in_box(v, target, &mut scratch) {
                    out.push((v.to_vec(), scratch.values().to_vec()));
                }
                ControlFlow::Continue(())
            })?;
            Ok(out)
        })
        .collect();
    let mut all = Vec::new();
    for c in chunks {
        all.extend(c?);
    }
    Ok(all)
}

/// Precomputed ordering and bounds for the pruned walk.
struct Pruner<'a> {
    n: usize,
    r: usize,
    t: f64,
    norm: NormSpec,
    target: &'a TargetBox,
    /// `order[k]` is the coordinate assigned at depth `k`.
    order: Vec<usize>,
    /// Row of `L` for the coordinate at depth `k`.
    rows: Vec<Vec<f64>>,
    /// `Σ_{k' > k} |rows[k'][i]|`.
    rest_abs: Vec<Vec<f64>>,
    /// Per depth: combinations `a` with `a·rows[k'] ≈ 0` for all `k' > k`,
    /// with the leftover `Σ_{k'>k} |a·rows[k']|`.
    elim: Vec<Vec<(Vec<f64>, f64)>>,
    slack: Vec<f64>,
}

impl<'a> Pruner<'a> {
    fn new(inst: &SystemInstance, target: &'a TargetBox, t: f64, norm: NormSpec) -> Self {
        let n = inst.n();
        let r = inst.r();
        let lin = inst.linear_matrix();
        let leverage = |j: usize| (0..r).map(|i| lin[(j, i)].abs()).fold(0.0, f64::max);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| leverage(a).total_cmp(&leverage(b)).then(a.cmp(&b)));

        let rows: Vec<Vec<f64>> = order.iter().map(|&j| (0..r).map(|i| lin[(j, i)]).collect()).collect();
        let mut rest_abs = vec![vec![0.0; r]; n];
        for k in (0..n.saturating_sub(1)).rev() {
            for i in 0..r {
                rest_abs[k][i] = rest_abs[k + 1][i] + rows[k + 1][i].abs();
            }
        }

        let elim = (0..n)
            .map(|k| {
                let remaining = n - k - 1;
                if remaining == 0 || remaining >= r {
                    return Vec::new();
                }
                null_combinations(&rows[k + 1..], r)
                    .into_iter()
                    .map(|a| {
                        let leftover = rows[k + 1..]
                            .iter()
                            .map(|row| row.iter().zip(&a).map(|(x, y)| x * y).sum::<f64>().abs())
                            .sum();
                        (a, leftover)
                    })
                    .collect()
            })
            .collect();

        let bound = t.ceil();
        let slack = (0..r)
            .map(|i| {
                let (lo, hi) = target.intervals[i + 1];
                let total: f64 = rows.iter().map(|row| row[i].abs()).sum();
                1e-9 * (1.0 + lo.abs() + hi.abs() + bound * total)
            })
            .collect();

        Self { n, r, t, norm, target, order, rows, rest_abs, elim, slack }
    }

    fn root_range(&self) -> Vec<i64> {
        let partial = vec![0.0; self.r];
        match self.level_range(0, &partial, self.norm.budget(self.t)) {
            Some((lo, hi)) => (lo..=hi).collect(),
            None => Vec::new(),
        }
    }

    /// Feasible integer range at depth `k`, or `None` if the branch is dead.
    fn level_range(&self, k: usize, partial: &[f64], budget: f64) -> Option<(i64, i64)> {
        let b = self.norm.coordinate_bound(budget).min(self.t.floor() as i64);
        if b < 0 {
            return None;
        }
        let bf = b as f64;
        let (mut lo, mut hi) = (-bf, bf);
        let row = &self.rows[k];

        for i in 0..self.r {
            let (tlo, thi) = self.target.intervals[i + 1];
            let rest = bf * self.rest_abs[k][i] + self.slack[i];
            let (a, c) = (tlo - partial[i] - rest, thi - partial[i] + rest);
            if !narrow(row[i], a, c, &mut lo, &mut hi) {
                return None;
            }
        }
        for (comb, leftover) in &self.elim[k] {
            let (mut tlo, mut thi) = (0.0, 0.0);
            for (ai, &(l, h)) in comb.iter().zip(&self.target.intervals[1..]) {
                tlo += (ai * l).min(ai * h);
                thi += (ai * l).max(ai * h);
            }
            let s: f64 = comb.iter().zip(partial).map(|(a, p)| a * p).sum();
            let coef: f64 = comb.iter().zip(row).map(|(a, x)| a * x).sum();
            let slack: f64 = comb.iter().zip(&self.slack).map(|(a, e)| a.abs() * e).sum::<f64>() + bf * leftover;
            if !narrow(coef, tlo - s - slack, thi - s + slack, &mut lo, &mut hi) {
                return None;
            }
        }
        let (lo, hi) = (lo.ceil(), hi.floor());
        (lo <= hi).then_some((lo as i64, hi as i64))
    }
}

/// Intersects `[lo, hi]` with `{x : a ≤ coef·x ≤ c}`. Returns false when empty.
fn narrow(coef: f64, a: f64, c: f64, lo: &mut f64, hi: &mut f64) -> bool {
    if coef.abs() < 1e-300 {
        return a <= 0.0 && 0.0 <= c;
    }
    let (x, y) = if coef > 0.0 { (a / coef, c / coef) } else { (c / coef, a / coef) };
    if x > *lo {
        *lo = x;
    }
    if y < *hi {
        *hi = y;
    }
    *lo <= *hi
}

/// Basis of `{a ∈ ℝʳ : a·row = 0 for every row}` (fewer than `r` rows).
fn null_combinations(rows: &[Vec<f64>], r: usize) -> Vec<Vec<f64>> {
    let mut m = DMatrix::<f64>::zeros(r, r);
    for (k, row) in rows.iter().enumerate() {
        for i in 0..r {
            m[(k, i)] = row[i];
        }
    }
    let svd = m.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let tol = 1e-10 * smax.max(1e-300);
    (0..r)
        .filter(|&i| svd.singular_values[i] <= tol)
        .map(|i| v_t.row(i).iter().copied().collect())
        .collect()
}

/// State of one depth-first walk below a fixed root value.
struct Walk<'p, 'a> {
    pruner: &'p Pruner<'a>,
    budget: u64,
    shared: &'p AtomicU64,
    local: u64,
    nodes: u64,
    leaves: u64,
    /// Values in depth order.
    assigned: Vec<i64>,
    /// Values in coordinate order, handed to the visitor.
    v: Vec<i64>,
}

const FLUSH: u64 = 1 << 12;

impl<'p, 'a> Walk<'p, 'a> {
    fn new(pruner: &'p Pruner<'a>, budget: u64, shared: &'p AtomicU64) -> Self {
        Self {
            pruner,
            budget,
            shared,
            local: 0,
            nodes: 0,
            leaves: 0,
            assigned: vec![0; pruner.n],
            v: vec![0; pruner.n],
        }
    }

    fn tick(&mut self) -> Result<()> {
        self.nodes += 1;
        self.local += 1;
        if self.local >= FLUSH {
            let total = self.shared.fetch_add(self.local, Ordering::Relaxed) + self.local;
            self.local = 0;
            if total > self.budget {
                return Err(Error::BudgetExceeded { budget: self.budget });
            }
        }
        Ok(())
    }

    fn run<F>(&mut self, first: i64, visit: &mut F) -> Result<ControlFlow<()>>
    where
        F: FnMut(&[i64]) -> ControlFlow<()>,
    {
        let p = self.pruner;
        let mut partial = vec![0.0; p.r];
        let budget = p.norm.budget(p.t);
        let flow = self.descend(0, first, &mut partial, budget, visit);
        let total = self.shared.fetch_add(self.local, Ordering::Relaxed) + self.local;
        self.local = 0;
        if total > self.budget {
            return Err(Error::BudgetExceeded { budget: self.budget });
        }
        flow
    }

    fn descend<F>(&mut self, k: usize, value: i64, partial: &mut [f64], budget: f64, visit: &mut F) -> Result<ControlFlow<()>>
    where
        F: FnMut(&[i64]) -> ControlFlow<()>,
    {
        self.tick()?;
        let p = self.pruner;
        let budget = p.norm.consume(budget, value);
        if budget < 0.0 {
            return Ok(ControlFlow::Continue(()));
        }
        self.assigned[k] = value;
        let row = &p.rows[k];
        let saved: Vec<f64> = partial.to_vec();
        let x = value as f64;
        for (s, l) in partial.iter_mut().zip(row) {
            *s += x * l;
        }

        let flow = if k + 1 == p.n {
            self.leaves += 1;
            for (depth, &coord) in p.order.iter().enumerate() {
                self.v[coord] = self.assigned[depth];
            }
            if p.norm.contains_int(&self.v, p.t) {
                let v = std::mem::take(&mut self.v);
                let flow = visit(&v);
                self.v = v;
                flow
            } else {
                ControlFlow::Continue(())
            }
        } else {
            let mut flow = ControlFlow::Continue(());
            if let Some((lo, hi)) = p.level_range(k + 1, partial, budget) {
                for next in lo..=hi {
                    flow = self.descend(k + 1, next, partial, budget, visit)?;
                    if flow.is_break() {
                        break;
                    }
                }
            }
            flow
        };
        partial.copy_from_slice(&saved);
        Ok(flow)
    }
}

/// A monotone family `t ↦ I_t` with `|I_t,j| = widths_j · t^{−κ_j}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxFamily {
    pub center: Vec<f64>,
    pub widths: Vec<f64>,
    pub exponents: Vec<f64>,
}

impl BoxFamily {
    pub fn new(center: Vec<f64>, widths: Vec<f64>, exponents: Vec<f64>) -> Result<Self> {
        if center.len() != widths.len() || widths.len() != exponents.len() {
            return Err(Error::InvalidArgument("box family vectors differ in length".into()));
        }
        if exponents.iter().any(|&k| !(k >= 0.0)) || widths.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::InvalidArgument("need widths > 0 and exponents ≥ 0".into()));
        }
        Ok(Self { center, widths, exponents })
    }

    /// Constant box `I`.
    pub fn constant(target: &TargetBox) -> Self {
        let center = target.intervals.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect();
        let widths = target.intervals.iter().map(|(lo, hi)| hi - lo).collect();
        Self { center, widths, exponents: vec![0.0; target.dim()] }
    }

    pub fn kappa(&self) -> f64 {
        self.exponents.iter().sum()
    }

    pub fn at(&self, t: f64) -> TargetBox {
        let intervals = self
            .center
            .iter()
            .zip(&self.widths)
            .zip(&self.exponents)
            .map(|((c, w), k)| {
                let h = 0.5 * w * t.powf(-k);
                (c - h, c + h)
            })
            .collect();
        TargetBox::closed(intervals)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveReport {
    pub kappa: f64,
    /// `0 ≤ κ < n − r − d`; outside this range the ratio need not converge.
    pub hypothesis_ok: bool,
    pub points: Vec<CountReport>,
    /// `count / (c·|I_t|·t^{n−r−d})` when a constant was supplied.
    pub ratios: Vec<Option<f64>>,
}

pub fn count_curve(
    inst: &SystemInstance,
    family: &BoxFamily,
    t_grid: &[f64],
    norm: NormSpec,
    strategy: Strategy,
    budget: u64,
    constant: Option<f64>,
) -> Result<CurveReport> {
    if t_grid.is_empty() || t_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument("t grid must be nonempty and increasing".into()));
    }
    if family.center.len() != inst.r() + 1 {
        return Err(Error::Dimension { expected: inst.r() + 1, got: family.center.len() });
    }
    let boxes: Vec<TargetBox> = t_grid.iter().map(|&t| family.at(t)).collect();
    if boxes.windows(2).any(|w| !w[1].is_subset_of(&w[0])) {
        return Err(Error::InvalidArgument("box family is not non-increasing on the grid".into()));
    }
    let kappa = family.kappa();
    let hypothesis_ok = kappa < inst.spec().main_exponent() as f64;

    let mut points = Vec::with_capacity(t_grid.len());
    for (&t, target) in t_grid.iter().zip(boxes) {
        let mut req = CountRequest::new(inst.clone(), target, t).norm(norm).strategy(strategy).budget(budget);
        req.constant = constant;
        points.push(count(&req)?);
    }
    let ratios = points.iter().map(|p| p.main_term.map(|m| p.count as f64 / m)).collect();
    Ok(CurveReport { kappa, hypothesis_ok, points, ratios })
}
