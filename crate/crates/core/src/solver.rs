//! Integer solutions of `|F(v) − ξ₀| < ε₀`, `|ℓ_i(v) − ξ_i| < ε_i`,
//! `‖v‖ ≤ t`, and the uniform quantity
//! `sup_{‖ξ‖∞ ≤ N} min_{‖v‖ ≤ t} ‖(F, M)(v) − ξ‖∞`.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::enumeration::{collect_matches, find_first, DEFAULT_BUDGET};
use crate::error::{Error, Result};
use crate::forms::{rational_to_f64, NormSpec, SystemInstance, TargetBox};

#[derive(Clone, Debug)]
pub struct ApproximationQuery {
    pub inst: SystemInstance,
    pub xi: Vec<f64>,
    pub eps: Vec<f64>,
    pub t: f64,
    pub norm: NormSpec,
    pub budget: u64,
}

impl ApproximationQuery {
    pub fn new(inst: SystemInstance, xi: Vec<f64>, eps: Vec<f64>, t: f64) -> Result<Self> {
        let q = Self { inst, xi, eps, t, norm: NormSpec::Sup, budget: DEFAULT_BUDGET };
        q.validate()?;
        Ok(q)
    }

    /// Tolerances `ε_j = t^{−κ_j}`.
    pub fn with_exponents(inst: SystemInstance, xi: Vec<f64>, kappas: &[f64], t: f64) -> Result<Self> {
        let eps = kappas.iter().map(|k| t.powf(-k)).collect();
        Self::new(inst, xi, eps, t)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.inst.r() + 1;
        for len in [self.xi.len(), self.eps.len()] {
            if len != m {
                return Err(Error::Dimension { expected: m, got: len });
            }
        }
        if self.eps.iter().any(|&e| !(e > 0.0)) {
            return Err(Error::InvalidArgument("tolerances must be positive".into()));
        }
        if self.xi.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("target must be finite".into()));
        }
        if !(self.t >= 1.0) {
            return Err(Error::InvalidArgument(format!("radius must be ≥ 1, got {}", self.t)));
        }
        Ok(())
    }

    pub fn target(&self) -> TargetBox {
        TargetBox::around(&self.xi, &self.eps)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub v: Vec<i64>,
    pub values: Vec<f64>,
    /// `|(F, M)_j(v) − ξ_j|`.
    pub residuals: Vec<f64>,
}

/// Re-checks a candidate in exact rational arithmetic: strict inequalities
/// and the norm bound on the integer vector.
pub fn verify_strict(inst: &SystemInstance, xi: &[f64], eps: &[f64], t: f64, norm: NormSpec, v: &[i64]) -> bool {
    v.len() == inst.n() && norm.contains_int(v, t) && TargetBox::around(xi, eps).contains_exact(&inst.eval_exact(v))
}

fn witness(inst: &SystemInstance, xi: &[f64], v: Vec<i64>) -> Witness {
    let values: Vec<f64> = inst.eval_exact(&v).iter().map(rational_to_f64).collect();
    let residuals = values.iter().zip(xi).map(|(a, b)| (a - b).abs()).collect();
    Witness { v, values, residuals }
}

/// Some `v` satisfying every inequality, or `None`. The search order is the
/// pruned enumerator's, so the witness is deterministic.
pub fn find_solution(q: &ApproximationQuery) -> Result<Option<Witness>> {
    q.validate()?;
    let target = q.target();
    let found = find_first(&q.inst, &target, q.t, q.norm, q.budget)?;
    match found {
        None => Ok(None),
        Some(v) => {
            if !verify_strict(&q.inst, &q.xi, &q.eps, q.t, q.norm, &v) {
                return Err(Error::InvalidInstance(format!("witness {v:?} failed exact verification")));
            }
            Ok(Some(witness(&q.inst, &q.xi, v)))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadiusReport {
    pub t_star: u64,
    pub witness: Witness,
    /// Number of `find_solution` calls made.
    pub probes: u32,
}

/// Least integer `t* ≤ t_max` for which a solution exists, by doubling
/// `1, 2, 4, …` and then bisecting the last gap.
pub fn smallest_radius(
    inst: &SystemInstance,
    xi: &[f64],
    eps: &[f64],
    t_max: u64,
    norm: NormSpec,
    budget: u64,
) -> Result<Option<RadiusReport>> {
    if t_max < 1 {
        return Err(Error::InvalidArgument("t_max must be ≥ 1".into()));
    }
    let mut probes = 0;
    let mut probe = |t: u64| -> Result<Option<Witness>> {
        probes += 1;
        let q = ApproximationQuery { inst: inst.clone(), xi: xi.to_vec(), eps: eps.to_vec(), t: t as f64, norm, budget };
        find_solution(&q)
    };
    let (mut lo, mut hi) = (0u64, 1u64);
    let mut best = loop {
        if let Some(w) = probe(hi)? {
            break w;
        }
        if hi == t_max {
            return Ok(None);
        }
        lo = hi;
        hi = (hi * 2).min(t_max);
    };
    // invariant: no solution at lo, solution `best` at hi
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        match probe(mid)? {
            Some(w) => {
                hi = mid;
                best = w;
            }
            None => lo = mid,
        }
    }
    Ok(Some(RadiusReport { t_star: hi, witness: best, probes }))
}

#[derive(Clone, Debug)]
pub struct SupMinQuery {
    pub inst: SystemInstance,
    /// Half-width `N` of the cube of targets `ξ`.
    pub n_radius: f64,
    pub t: f64,
    pub grid_step: f64,
    pub norm: NormSpec,
    pub budget: u64,
}

impl SupMinQuery {
    pub fn new(inst: SystemInstance, n_radius: f64, t: f64, grid_step: f64) -> Result<Self> {
        let q = Self { inst, n_radius, t, grid_step, norm: NormSpec::Sup, budget: DEFAULT_BUDGET };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.grid_step > 0.0 && self.grid_step.is_finite()) {
            return Err(Error::InvalidArgument(format!("grid_step must be positive, got {}", self.grid_step)));
        }
        if !(self.n_radius >= 0.0 && self.n_radius.is_finite()) {
            return Err(Error::InvalidArgument(format!("N must be ≥ 0, got {}", self.n_radius)));
        }
        if !(self.t >= 1.0) {
            return Err(Error::InvalidArgument(format!("radius must be ≥ 1, got {}", self.t)));
        }
        Ok(())
    }

    /// Grid points per axis: `−N, −N + step, …`, ending exactly at `N`.
    pub fn axis(&self) -> Vec<f64> {
        let n = self.n_radius;
        let steps = (2.0 * n / self.grid_step - 1e-9).ceil().max(0.0) as usize;
        (0..=steps).map(|k| (-n + k as f64 * self.grid_step).min(n)).collect()
    }

    pub fn grid(&self) -> Vec<Vec<f64>> {
        let axis = self.axis();
        let dim = self.inst.r() + 1;
        let mut out = vec![Vec::with_capacity(dim)];
        for _ in 0..dim {
            out = out
                .into_iter()
                .flat_map(|p| {
                    axis.iter().map(move |&x| {
                        let mut q = p.clone();
                        q.push(x);
                        q
                    })
                })
                .collect();
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupMinReport {
    pub value: f64,
    /// The continuum supremum exceeds `value` by at most this.
    pub discretization_bound: f64,
    pub argmax: Vec<f64>,
    pub grid_points: usize,
    /// Size of the value set that was indexed.
    pub indexed_values: usize,
    /// Half-width beyond `N` of the window of values that were indexed.
    pub window: f64,
    /// Per grid point minimum, in [`SupMinQuery::grid`] order.
    #[serde(skip)]
    pub minima: Vec<f64>,
}

impl SupMinReport {
    /// Fraction of grid targets whose nearest value is closer than `threshold`.
    pub fn fraction_below(&self, threshold: f64) -> f64 {
        if self.minima.is_empty() {
            return 0.0;
        }
        self.minima.iter().filter(|&&m| m < threshold).count() as f64 / self.minima.len() as f64
    }
}

/// Uniform grid buckets with cell side `step`, queried by expanding rings of
/// cells in the sup metric.
struct GridIndex {
    step: f64,
    dim: usize,
    cells: HashMap<Vec<i64>, Vec<usize>>,
    points: Vec<Vec<f64>>,
}

impl GridIndex {
    fn new(points: Vec<Vec<f64>>, step: f64, dim: usize) -> Self {
        let mut cells: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::cell_of(p, step)).or_default().push(i);
        }
        Self { step, dim, cells, points }
    }

    fn cell_of(p: &[f64], step: f64) -> Vec<i64> {
        p.iter().map(|x| (x / step).floor() as i64).collect()
    }

    /// Nearest sup distance, if some point is within `limit`.
    fn nearest(&self, xi: &[f64], limit: f64) -> Option<f64> {
        let center = Self::cell_of(xi, self.step);
        let max_ring = (limit / self.step).ceil() as i64 + 1;
        let mut best = f64::INFINITY;
        let mut offset = vec![0i64; self.dim];
        let mut cell = vec![0i64; self.dim];
        for k in 0..=max_ring {
            // cells at Chebyshev distance exactly k
            offset.iter_mut().for_each(|o| *o = -k);
            loop {
                if offset.iter().any(|o| o.abs() == k) {
                    for j in 0..self.dim {
                        cell[j] = center[j] + offset[j];
                    }
                    if let Some(ids) = self.cells.get(&cell) {
                        for &i in ids {
                            let d = self.points[i].iter().zip(xi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                            best = best.min(d);
                        }
                    }
                }
                let mut j = 0;
                while j < self.dim && offset[j] == k {
                    offset[j] = -k;
                    j += 1;
                }
                if j == self.dim {
                    break;
                }
                offset[j] += 1;
            }
            // anything in ring k + 1 is at least k·step away
            if best <= k as f64 * self.step {
                break;
            }
        }
        (best <= limit).then_some(best)
    }
}

/// Largest over grid targets `ξ ∈ [−N, N]^{r+1}` of the sup distance to the
/// nearest value `(F, M)(v)`, `v ∈ ℤⁿ`, `‖v‖ ≤ t`.
///
/// Only values within `R` of the cube are indexed; `R` is doubled until every
/// target has a value within `R`, so the result equals the minimum over the
/// full value set.
pub fn uniform_supmin(q: &SupMinQuery) -> Result<SupMinReport> {
    q.validate()?;
    let dim = q.inst.r() + 1;
    let grid = q.grid();
    let mut window = 4.0 * q.grid_step;
    loop {
        let half = q.n_radius + window;
        let target = TargetBox::closed(vec![(-half, half); dim]);
        let values: Vec<Vec<f64>> = collect_matches(&q.inst, &target, q.t, q.norm, q.budget)?
            .into_iter()
            .map(|(_, val)| val)
            .collect();
        let indexed = values.len();
        let index = GridIndex::new(values, q.grid_step, dim);
        let minima: Vec<Option<f64>> = grid.par_iter().map(|xi| index.nearest(xi, window)).collect();
        if minima.iter().all(Option::is_some) {
            let minima: Vec<f64> = minima.into_iter().map(Option::unwrap).collect();
            let (arg, value) = minima
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(ai, av), (i, &m)| if m > av { (i, m) } else { (ai, av) });
            return Ok(SupMinReport {
                value,
                discretization_bound: q.grid_step / 2.0,
                argmax: grid[arg].clone(),
                grid_points: grid.len(),
                indexed_values: indexed,
                window,
                minima,
            });
        }
        window *= 2.0;
        if !window.is_finite() || window > 1e12 {
            return Err(Error::InvalidArgument("value set has no point near the target cube".into()));
        }
    }
}
