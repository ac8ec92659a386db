//! Normal-form systems `(F₀, M₀)` and their orbit instances `(F, M)`.
//!
//! Coordinates of ℝⁿ are laid out in blocks
//! `(x₁..x_{p+q}, y₁..y_{2t}, z₁..z_s)`. The normal form is
//!
//! ```text
//! F₀ = x₁ᵈ + … + x_pᵈ − x_{p+1}ᵈ − … − x_{p+q}ᵈ + P₁(y) + P₂(z)
//! M₀ = (y_{t+1}, …, y_{2t}, z₁, …, z_s)
//! ```
//!
//! and an instance `(λ, g₁, g₂)` acts on row vectors:
//! `F(v) = λ·F₀(v·g₁)`, `M(v) = M₀(v·g₁)·g₂`.

use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::DMatrix;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute guard band on interval endpoints, scaled by the magnitude of the
/// terms that produced a value.
pub const GUARD_REL: f64 = 1e-12;

/// Tolerance on `det(g₁) = 1`.
pub const DET_TOL: f64 = 1e-9;

/// Arithmetic needed to evaluate the normal form exactly or in floating point.
pub trait Scalar:
    Clone + Zero + One + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Neg<Output = Self>
{
    fn from_f64(x: f64) -> Self;
    fn from_i64(x: i64) -> Self;

    fn powu(&self, e: u32) -> Self {
        num_traits::pow(self.clone(), e as usize)
    }
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn from_i64(x: i64) -> Self {
        x as f64
    }
    fn powu(&self, e: u32) -> Self {
        self.powi(e as i32)
    }
}

impl Scalar for BigRational {
    fn from_f64(x: f64) -> Self {
        BigRational::from_float(x).expect("finite coefficient")
    }
    fn from_i64(x: i64) -> Self {
        BigRational::from_integer(BigInt::from(x))
    }
}

/// A term `coeff · Π wᵢ^{exps[i]}` over one coordinate block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub exps: Vec<u32>,
    pub coeff: f64,
}

impl Monomial {
    pub fn new(exps: Vec<u32>, coeff: f64) -> Self {
        Self { exps, coeff }
    }

    pub fn degree(&self) -> u32 {
        self.exps.iter().sum()
    }

    fn eval<T: Scalar>(&self, block: &[T]) -> T {
        let mut acc = T::from_f64(self.coeff);
        for (x, &e) in block.iter().zip(&self.exps) {
            if e > 0 {
                acc = acc * x.powu(e);
            }
        }
        acc
    }

    fn magnitude(&self, block_abs: &[f64]) -> f64 {
        let mut acc = self.coeff.abs();
        for (x, &e) in block_abs.iter().zip(&self.exps) {
            acc *= x.powi(e as i32);
        }
        acc
    }
}

/// Integer parameters and the polynomials `P₁`, `P₂` of a normal pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub n: usize,
    pub r: usize,
    pub d: u32,
    pub d_prime: u32,
    pub p: usize,
    pub q: usize,
    pub t_blk: usize,
    pub s: usize,
    #[serde(default)]
    pub p1_coeffs: Vec<Monomial>,
    #[serde(default)]
    pub p2_coeffs: Vec<Monomial>,
}

impl SystemSpec {
    /// Returns the spec if every structural check passes.
    pub fn checked(self) -> Result<Self> {
        let report = validate_spec(&self);
        let failure = report.failures().next().map(|c| format!("{}: {}", c.name, c.detail));
        match failure {
            None => Ok(self),
            Some(msg) => Err(Error::InvalidSpec(msg)),
        }
    }

    pub fn y1_start(&self) -> usize {
        self.p + self.q
    }

    pub fn y2_start(&self) -> usize {
        self.p + self.q + self.t_blk
    }

    pub fn z_start(&self) -> usize {
        self.p + self.q + 2 * self.t_blk
    }

    /// Coordinates picked out by `M₀`, in output order.
    pub fn linear_coordinates(&self) -> Vec<usize> {
        let y2 = self.y2_start();
        let z = self.z_start();
        (y2..y2 + self.t_blk).chain(z..z + self.s).collect()
    }

    /// `n − r − d`, the exponent of `t` in the main term.
    pub fn main_exponent(&self) -> i64 {
        self.n as i64 - self.r as i64 - self.d as i64
    }

    /// `p ≥ 1`, `q ≥ 1` and `d + 1 ≤ p + q ≤ n − r`.
    pub fn asymptotic_hypotheses_ok(&self) -> bool {
        let pq = self.p + self.q;
        self.p >= 1
            && self.q >= 1
            && pq >= self.d as usize + 1
            && self.n >= self.r
            && pq <= self.n - self.r
    }

    pub fn f0<T: Scalar>(&self, w: &[T]) -> T {
        let mut acc = T::zero();
        for x in &w[..self.p] {
            acc = acc + x.powu(self.d);
        }
        for x in &w[self.p..self.p + self.q] {
            acc = acc - x.powu(self.d);
        }
        let y = &w[self.y1_start()..self.z_start()];
        for m in &self.p1_coeffs {
            acc = acc + m.eval(y);
        }
        let z = &w[self.z_start()..self.n];
        for m in &self.p2_coeffs {
            acc = acc + m.eval(z);
        }
        acc
    }

    /// Upper bound on the sum of absolute values of the terms of `F₀`,
    /// given coordinatewise bounds `w_abs`.
    pub fn f0_magnitude(&self, w_abs: &[f64]) -> f64 {
        let mut acc: f64 = w_abs[..self.p + self.q].iter().map(|x| x.powi(self.d as i32)).sum();
        let y = &w_abs[self.y1_start()..self.z_start()];
        acc += self.p1_coeffs.iter().map(|m| m.magnitude(y)).sum::<f64>();
        let z = &w_abs[self.z_start()..self.n];
        acc += self.p2_coeffs.iter().map(|m| m.magnitude(z)).sum::<f64>();
        acc
    }

    pub fn m0<T: Scalar>(&self, w: &[T]) -> Vec<T> {
        self.linear_coordinates().into_iter().map(|i| w[i].clone()).collect()
    }

    /// The `n × r` matrix of the projection `M₀` (row-vector convention).
    pub fn m0_matrix(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.r);
        for (k, i) in self.linear_coordinates().into_iter().enumerate() {
            m[(i, k)] = 1.0;
        }
        m
    }

    /// True when every monomial of `P₁` and `P₂` has even total degree, so
    /// that `F₀(−v) = F₀(v)`.
    pub fn is_even(&self) -> bool {
        self.p1_coeffs
            .iter()
            .chain(&self.p2_coeffs)
            .all(|m| m.degree() % 2 == 0)
    }
}

/// Inertia data `(p, q, u, v)` of a quadratic form with `r` linear forms in `n` variables.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuadraticSignatureSpec {
    pub p: usize,
    pub q: usize,
    pub u: usize,
    pub v: usize,
    pub n: usize,
    pub r: usize,
}

/// Builds the quadratic normal pair `(Q₀, M₀)` for a signature.
pub fn build_quadratic_normal_form(sig: QuadraticSignatureSpec) -> Result<SystemSpec> {
    let QuadraticSignatureSpec { p, q, u, v, n, r } = sig;
    if u + v != n {
        return Err(Error::Signature(format!("u + v = {} differs from n = {n}", u + v)));
    }
    let t = n as i64 - r as i64 - (p + q) as i64;
    let p_prime = u as i64 - t - p as i64;
    let q_prime = v as i64 - t - q as i64;
    for (name, val) in [("t", t), ("p'", p_prime), ("q'", q_prime)] {
        if val < 0 {
            return Err(Error::Signature(format!("{name} = {val} is negative")));
        }
    }
    let (t, p_prime, q_prime) = (t as usize, p_prime as usize, q_prime as usize);
    let s = p_prime + q_prime;

    let p1_coeffs = (0..t)
        .map(|i| {
            let mut exps = vec![0; 2 * t];
            exps[i] = 1;
            exps[t + i] = 1;
            Monomial::new(exps, 2.0)
        })
        .collect();
    let p2_coeffs = (0..s)
        .map(|i| {
            let mut exps = vec![0; s];
            exps[i] = 2;
            Monomial::new(exps, if i < p_prime { 1.0 } else { -1.0 })
        })
        .collect();

    SystemSpec { n, r, d: 2, d_prime: 1, p, q, t_blk: t, s, p1_coeffs, p2_coeffs }.checked()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
    pub asymptotic_hypotheses_ok: bool,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Checks every structural invariant of a spec. Never fails; the report
/// carries the failures.
pub fn validate_spec(spec: &SystemSpec) -> ValidationReport {
    let mut checks = Vec::new();
    let mut push = |name, passed, detail: String| checks.push(Check { name, passed, detail });

    push("dimension", spec.n >= 3, format!("n = {}", spec.n));
    push("linear_count", spec.r >= 1 && spec.r < spec.n, format!("r = {}, n = {}", spec.r, spec.n));
    let blocks = spec.p + spec.q + 2 * spec.t_blk + spec.s;
    push(
        "block_sum",
        blocks == spec.n,
        format!("(p+q) + 2t + s = {blocks}, n = {}", spec.n),
    );
    push(
        "projection_rank",
        spec.t_blk + spec.s == spec.r,
        format!("t + s = {}, r = {}", spec.t_blk + spec.s, spec.r),
    );
    push("degree_even", spec.d >= 2 && spec.d % 2 == 0, format!("d = {}", spec.d));
    push(
        "growth_exponent",
        spec.d_prime >= 1 && spec.d_prime < spec.d,
        format!("d' = {}, d = {}", spec.d_prime, spec.d),
    );

    let bad_p1 = spec.p1_coeffs.iter().position(|m| m.exps.len() != 2 * spec.t_blk);
    push(
        "p1_arity",
        bad_p1.is_none(),
        match bad_p1 {
            Some(i) => format!("monomial {i} has {} exponents, expected {}", spec.p1_coeffs[i].exps.len(), 2 * spec.t_blk),
            None => String::new(),
        },
    );
    let bad_p2 = spec.p2_coeffs.iter().position(|m| m.exps.len() != spec.s);
    push(
        "p2_arity",
        bad_p2.is_none(),
        match bad_p2 {
            Some(i) => format!("monomial {i} has {} exponents, expected {}", spec.p2_coeffs[i].exps.len(), spec.s),
            None => String::new(),
        },
    );

    // P₁(Ty₁, …, Ty_t, y_{t+1}, …) = O(T^{d'}) iff every monomial has degree ≤ d' in y₁..y_t.
    let first_block_degree = |m: &Monomial| m.exps.iter().take(spec.t_blk).sum::<u32>();
    let worst = spec.p1_coeffs.iter().map(first_block_degree).max().unwrap_or(0);
    push(
        "p1_growth",
        worst <= spec.d_prime,
        format!("max degree in y1..yt = {worst}, d' = {}", spec.d_prime),
    );
    let finite = spec.p1_coeffs.iter().chain(&spec.p2_coeffs).all(|m| m.coeff.is_finite());
    push("finite_coefficients", finite, String::new());

    ValidationReport { checks, asymptotic_hypotheses_ok: spec.asymptotic_hypotheses_ok() }
}

/// Evaluates `(F₀(v), M₀(v))`.
pub fn eval_normal(spec: &SystemSpec, v: &[f64]) -> Result<Vec<f64>> {
    if v.len() != spec.n {
        return Err(Error::Dimension { expected: spec.n, got: v.len() });
    }
    let mut out = Vec::with_capacity(spec.r + 1);
    out.push(spec.f0(v));
    out.extend(spec.m0(v));
    Ok(out)
}

/// Endpoint convention of a [`TargetBox`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ends {
    /// `[lo, hi]`
    #[default]
    Closed,
    /// `[lo, hi)`
    HalfOpen,
    /// `(lo, hi)`
    Open,
}

/// A product of `r + 1` intervals `I₀ × I₁ × … × I_r`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetBox {
    pub intervals: Vec<(f64, f64)>,
    #[serde(default)]
    pub ends: Ends,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Side {
    In,
    Out,
    Borderline,
}

impl TargetBox {
    pub fn new(intervals: Vec<(f64, f64)>, ends: Ends) -> Self {
        Self { intervals, ends }
    }

    pub fn closed(intervals: Vec<(f64, f64)>) -> Self {
        Self::new(intervals, Ends::Closed)
    }

    /// `Π (ξⱼ − εⱼ, ξⱼ + εⱼ)` with open ends.
    pub fn around(center: &[f64], radii: &[f64]) -> Self {
        let intervals = center.iter().zip(radii).map(|(c, e)| (c - e, c + e)).collect();
        Self::new(intervals, Ends::Open)
    }

    /// The same box centred at the origin: `[−h, h]` per coordinate.
    pub fn symmetric(half_widths: &[f64]) -> Self {
        Self::closed(half_widths.iter().map(|&h| (-h, h)).collect())
    }

    pub fn dim(&self) -> usize {
        self.intervals.len()
    }

    /// A box with any zero-width or inverted interval has measure zero and is
    /// treated as containing nothing.
    pub fn is_empty(&self) -> bool {
        self.intervals.iter().any(|&(lo, hi)| !(hi > lo))
    }

    pub fn measure(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.intervals.iter().map(|(lo, hi)| hi - lo).product()
        }
    }

    /// `max_j max(|lo_j|, |hi_j|)`.
    pub fn radius(&self) -> f64 {
        self.intervals.iter().map(|(lo, hi)| lo.abs().max(hi.abs())).fold(0.0, f64::max)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let intervals = self
            .intervals
            .iter()
            .map(|&(lo, hi)| {
                let (a, b) = (lo * factor, hi * factor);
                if a <= b { (a, b) } else { (b, a) }
            })
            .collect();
        Self::new(intervals, self.ends)
    }

    pub fn is_subset_of(&self, other: &TargetBox) -> bool {
        self.is_empty()
            || self
                .intervals
                .iter()
                .zip(&other.intervals)
                .all(|(a, b)| a.0 >= b.0 && a.1 <= b.1)
    }

    fn interval_contains(&self, x: f64, lo: f64, hi: f64) -> bool {
        match self.ends {
            Ends::Closed => lo <= x && x <= hi,
            Ends::HalfOpen => lo <= x && x < hi,
            Ends::Open => lo < x && x < hi,
        }
    }

    /// Plain floating-point membership.
    pub fn contains(&self, values: &[f64]) -> bool {
        !self.is_empty()
            && values
                .iter()
                .zip(&self.intervals)
                .all(|(&x, &(lo, hi))| self.interval_contains(x, lo, hi))
    }

    pub fn contains_exact(&self, values: &[BigRational]) -> bool {
        if self.is_empty() {
            return false;
        }
        values.iter().zip(&self.intervals).all(|(x, &(lo, hi))| {
            let lo = BigRational::from_f64(lo);
            let hi = BigRational::from_f64(hi);
            match self.ends {
                Ends::Closed => &lo <= x && x <= &hi,
                Ends::HalfOpen => &lo <= x && x < &hi,
                Ends::Open => &lo < x && x < &hi,
            }
        })
    }

    pub(crate) fn classify(&self, x: f64, magnitude: f64, j: usize) -> Side {
        let (lo, hi) = self.intervals[j];
        let guard = GUARD_REL * magnitude.max(1.0);
        if x < lo - guard || x > hi + guard {
            Side::Out
        } else if x > lo + guard && x < hi - guard {
            Side::In
        } else {
            Side::Borderline
        }
    }
}

/// Choice of norm on ℝⁿ for the ball `‖v‖ ≤ t`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NormSpec {
    #[default]
    Sup,
    Euclidean,
    Ld { d: u32 },
}

impl NormSpec {
    /// Parses `sup`, `l2`/`euclidean`, `ld` (using `default_d`) or `ld:<d>`.
    pub fn parse(s: &str, default_d: u32) -> Result<Self> {
        match s {
            "sup" | "linf" => Ok(NormSpec::Sup),
            "l2" | "euclidean" => Ok(NormSpec::Euclidean),
            "ld" => Ok(NormSpec::Ld { d: default_d }),
            other => match other.strip_prefix("ld:").map(str::parse::<u32>) {
                Some(Ok(d)) if d >= 1 => Ok(NormSpec::Ld { d }),
                _ => Err(Error::InvalidArgument(format!("unknown norm {other:?}"))),
            },
        }
    }

    fn exponent(&self) -> Option<u32> {
        match *self {
            NormSpec::Sup => None,
            NormSpec::Euclidean => Some(2),
            NormSpec::Ld { d } => Some(d),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self.exponent() {
            None => x.iter().fold(0.0, |m, v| m.max(v.abs())),
            Some(2) => x.iter().map(|v| v * v).sum::<f64>().sqrt(),
            Some(e) => x.iter().map(|v| v.abs().powi(e as i32)).sum::<f64>().powf(1.0 / e as f64),
        }
    }

    /// `‖v‖ ≤ t` for an integer vector, computed without rounding in the
    /// power sum.
    pub fn contains_int(&self, v: &[i64], t: f64) -> bool {
        match self.exponent() {
            None => v.iter().all(|x| (x.unsigned_abs() as f64) <= t),
            Some(e) => {
                let sum: u128 = v.iter().map(|x| (x.unsigned_abs() as u128).pow(e)).sum();
                (sum as f64) <= t.powi(e as i32)
            }
        }
    }

    /// The `e`-th power budget `t^e` (`t` itself for sup).
    pub(crate) fn budget(&self, t: f64) -> f64 {
        match self.exponent() {
            None => t,
            Some(e) => t.powi(e as i32),
        }
    }

    pub(crate) fn consume(&self, budget: f64, x: i64) -> f64 {
        match self.exponent() {
            None => budget,
            Some(e) => budget - (x.unsigned_abs() as f64).powi(e as i32),
        }
    }

    /// A bound `b` with `|x| ≤ b` for every integer `x` that fits in the
    /// remaining budget. Errs on the large side.
    pub(crate) fn coordinate_bound(&self, budget: f64) -> i64 {
        if budget < 0.0 {
            return -1;
        }
        match self.exponent() {
            None => budget.floor() as i64,
            Some(e) => budget.powf(1.0 / e as f64).floor() as i64 + 1,
        }
    }
}

fn to_dmatrix(rows: &[Vec<f64>], expect: usize, name: &str) -> Result<DMatrix<f64>> {
    if rows.len() != expect || rows.iter().any(|r| r.len() != expect) {
        return Err(Error::InvalidInstance(format!("{name} must be {expect}×{expect}")));
    }
    if rows.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInstance(format!("{name} has non-finite entries")));
    }
    Ok(DMatrix::from_fn(expect, expect, |i, j| rows[i][j]))
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// Rescales `g` to determinant one: `g / det(g)^{1/n}`. A negative
/// determinant is only fixable in odd dimension.
pub fn normalize_det(g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = g.nrows();
    let det = g.determinant();
    if det == 0.0 || !det.is_finite() {
        return Err(Error::InvalidInstance("singular matrix".into()));
    }
    let root = if det > 0.0 {
        det.powf(1.0 / n as f64)
    } else if n % 2 == 1 {
        -(-det).powf(1.0 / n as f64)
    } else {
        return Err(Error::InvalidInstance("negative determinant in even dimension".into()));
    };
    Ok(g / root)
}

#[derive(Serialize, Deserialize)]
struct InstanceRepr {
    spec: SystemSpec,
    lambda: f64,
    g1: Vec<Vec<f64>>,
    g2: Vec<Vec<f64>>,
}

/// `(F, M) = (λ·F₀^{g₁}, g₁·M₀·g₂)` for a normal spec.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "InstanceRepr", into = "InstanceRepr")]
pub struct SystemInstance {
    spec: SystemSpec,
    lambda: f64,
    g1: DMatrix<f64>,
    g2: DMatrix<f64>,
    g1_inv: DMatrix<f64>,
    g2_inv: DMatrix<f64>,
    det_g2: f64,
    g1_flat: Vec<f64>,
    g2_flat: Vec<f64>,
    linear_idx: Vec<usize>,
}

impl TryFrom<InstanceRepr> for SystemInstance {
    type Error = Error;
    fn try_from(r: InstanceRepr) -> Result<Self> {
        SystemInstance::new(r.spec, r.lambda, &r.g1, &r.g2)
    }
}

impl From<SystemInstance> for InstanceRepr {
    fn from(inst: SystemInstance) -> Self {
        InstanceRepr { g1: to_rows(&inst.g1), g2: to_rows(&inst.g2), spec: inst.spec, lambda: inst.lambda }
    }
}

impl PartialEq for SystemInstance {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec && self.lambda == other.lambda && self.g1 == other.g1 && self.g2 == other.g2
    }
}

impl SystemInstance {
    pub fn new(spec: SystemSpec, lambda: f64, g1: &[Vec<f64>], g2: &[Vec<f64>]) -> Result<Self> {
        let g1 = to_dmatrix(g1, spec.n, "g1")?;
        let g2 = to_dmatrix(g2, spec.r, "g2")?;
        Self::from_matrices(spec, lambda, g1, g2)
    }

    pub fn from_matrices(spec: SystemSpec, lambda: f64, g1: DMatrix<f64>, g2: DMatrix<f64>) -> Result<Self> {
        let spec = spec.checked()?;
        if lambda == 0.0 || !lambda.is_finite() {
            return Err(Error::InvalidInstance("lambda must be finite and nonzero".into()));
        }
        if g1.shape() != (spec.n, spec.n) || g2.shape() != (spec.r, spec.r) {
            return Err(Error::InvalidInstance("matrix shapes do not match the spec".into()));
        }
        let det1 = g1.determinant();
        if (det1 - 1.0).abs() > DET_TOL {
            return Err(Error::InvalidInstance(format!("det(g1) = {det1}, expected 1")));
        }
        let det_g2 = g2.determinant();
        if det_g2 == 0.0 || !det_g2.is_finite() {
            return Err(Error::InvalidInstance("g2 is singular".into()));
        }
        let g1_inv = g1.clone().try_inverse().ok_or_else(|| Error::InvalidInstance("g1 not invertible".into()))?;
        let g2_inv = g2.clone().try_inverse().ok_or_else(|| Error::InvalidInstance("g2 not invertible".into()))?;
        let g1_flat = (0..spec.n).flat_map(|i| (0..spec.n).map(move |j| (i, j))).map(|ij| g1[ij]).collect();
        let g2_flat = (0..spec.r).flat_map(|i| (0..spec.r).map(move |j| (i, j))).map(|ij| g2[ij]).collect();
        let linear_idx = spec.linear_coordinates();
        Ok(Self { spec, lambda, g1, g2, g1_inv, g2_inv, det_g2, g1_flat, g2_flat, linear_idx })
    }

    /// `(1, Id, Id)`: the normal form itself.
    pub fn identity(spec: SystemSpec) -> Result<Self> {
        let (n, r) = (spec.n, spec.r);
        Self::from_matrices(spec, 1.0, DMatrix::identity(n, n), DMatrix::identity(r, r))
    }

    /// Like [`SystemInstance::from_matrices`] but first rescales `g1` to
    /// determinant one.
    pub fn normalized(spec: SystemSpec, lambda: f64, g1: DMatrix<f64>, g2: DMatrix<f64>) -> Result<Self> {
        let g1 = normalize_det(&g1)?;
        Self::from_matrices(spec, lambda, g1, g2)
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Self::from_matrices(self.spec.clone(), lambda, self.g1.clone(), self.g2.clone())
    }

    pub fn with_g2(&self, g2: DMatrix<f64>) -> Result<Self> {
        Self::from_matrices(self.spec.clone(), self.lambda, self.g1.clone(), g2)
    }

    /// The same `g₁` with `(λ, g₂) = (1, Id)`.
    pub fn normal_slice(&self) -> Self {
        let r = self.spec.r;
        Self::from_matrices(self.spec.clone(), 1.0, self.g1.clone(), DMatrix::identity(r, r))
            .expect("slice of a valid instance is valid")
    }

    pub fn spec(&self) -> &SystemSpec {
        &self.spec
    }
    pub fn n(&self) -> usize {
        self.spec.n
    }
    pub fn r(&self) -> usize {
        self.spec.r
    }
    pub fn lambda(&self) -> f64 {
        self.lambda
    }
    pub fn g1(&self) -> &DMatrix<f64> {
        &self.g1
    }
    pub fn g2(&self) -> &DMatrix<f64> {
        &self.g2
    }
    pub fn g1_inv(&self) -> &DMatrix<f64> {
        &self.g1_inv
    }
    pub fn g2_inv(&self) -> &DMatrix<f64> {
        &self.g2_inv
    }
    pub fn det_g2(&self) -> f64 {
        self.det_g2
    }

    pub fn is_diagonal_g2(&self) -> bool {
        (0..self.spec.r).all(|i| (0..self.spec.r).all(|j| i == j || self.g2[(i, j)] == 0.0))
    }

    /// The `n × r` matrix `g₁·M₀·g₂` of the linear forms.
    pub fn linear_matrix(&self) -> DMatrix<f64> {
        &self.g1 * self.spec.m0_matrix() * &self.g2
    }

    /// `w = v·g₁`.
    pub fn transform_into(&self, v: &[f64], w: &mut [f64]) {
        let n = self.spec.n;
        w.iter_mut().for_each(|x| *x = 0.0);
        for (i, &vi) in v.iter().enumerate() {
            if vi == 0.0 {
                continue;
            }
            let row = &self.g1_flat[i * n..(i + 1) * n];
            for (wj, gij) in w.iter_mut().zip(row) {
                *wj += vi * gij;
            }
        }
    }

    /// `(F, M)(v)` written into `out` (length `r + 1`); `w` is scratch of length `n`.
    pub fn eval_into(&self, v: &[f64], w: &mut [f64], out: &mut [f64]) {
        self.transform_into(v, w);
        self.eval_transformed(w, out);
    }

    /// `(F, M)` given `w = v·g₁`.
    pub fn eval_transformed(&self, w: &[f64], out: &mut [f64]) {
        let r = self.spec.r;
        out[0] = self.lambda * self.spec.f0(w);
        for k in 0..r {
            out[1 + k] = self
                .linear_idx
                .iter()
                .enumerate()
                .map(|(j, &i)| w[i] * self.g2_flat[j * r + k])
                .sum();
        }
    }

    pub fn eval(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.spec.n {
            return Err(Error::Dimension { expected: self.spec.n, got: v.len() });
        }
        let mut w = vec![0.0; self.spec.n];
        let mut out = vec![0.0; self.spec.r + 1];
        self.eval_into(v, &mut w, &mut out);
        Ok(out)
    }

    /// `(F₀(v·g₁), M₀(v·g₁))`, the values with `(λ, g₂)` stripped.
    pub fn eval_normal_coords(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.spec.n {
            return Err(Error::Dimension { expected: self.spec.n, got: v.len() });
        }
        let mut w = vec![0.0; self.spec.n];
        self.transform_into(v, &mut w);
        eval_normal(&self.spec, &w)
    }

    /// Exact value of `(F, M)(v)` for integer `v`, treating every stored
    /// float as the rational it represents.
    pub fn eval_exact(&self, v: &[i64]) -> Vec<BigRational> {
        let n = self.spec.n;
        let r = self.spec.r;
        let vq: Vec<BigRational> = v.iter().map(|&x| BigRational::from_i64(x)).collect();
        let w: Vec<BigRational> = (0..n)
            .map(|j| {
                vq.iter()
                    .enumerate()
                    .filter(|(_, x)| !x.is_zero())
                    .fold(BigRational::zero(), |acc, (i, x)| acc + x * BigRational::from_f64(self.g1_flat[i * n + j]))
            })
            .collect();
        let mut out = Vec::with_capacity(r + 1);
        out.push(BigRational::from_f64(self.lambda) * self.spec.f0(&w));
        for k in 0..r {
            let val = self.linear_idx.iter().enumerate().fold(BigRational::zero(), |acc, (j, &i)| {
                acc + &w[i] * BigRational::from_f64(self.g2_flat[j * r + k])
            });
            out.push(val);
        }
        out
    }

    /// Bounds on the magnitude of the terms producing each output coordinate.
    pub(crate) fn magnitudes_into(&self, v: &[i64], w_abs: &mut [f64], out: &mut [f64]) {
        let n = self.spec.n;
        let r = self.spec.r;
        w_abs.iter_mut().for_each(|x| *x = 0.0);
        for (i, &vi) in v.iter().enumerate() {
            if vi == 0 {
                continue;
            }
            let a = vi.unsigned_abs() as f64;
            for (j, wj) in w_abs.iter_mut().enumerate() {
                *wj += a * self.g1_flat[i * n + j].abs();
            }
        }
        out[0] = self.lambda.abs() * self.spec.f0_magnitude(w_abs);
        for k in 0..r {
            out[1 + k] = self
                .linear_idx
                .iter()
                .enumerate()
                .map(|(j, &i)| w_abs[i] * self.g2_flat[j * r + k].abs())
                .sum();
        }
    }

    /// Membership of `(F, M)(v)` in `target` for integer `v`. Values within
    /// the guard band of an endpoint are decided in exact arithmetic.
    pub fn in_box(&self, v: &[i64], target: &TargetBox, scratch: &mut EvalScratch) -> bool {
        if target.is_empty() {
            return false;
        }
        for (dst, &x) in scratch.vf.iter_mut().zip(v) {
            *dst = x as f64;
        }
        self.eval_into(&scratch.vf, &mut scratch.w, &mut scratch.vals);
        self.magnitudes_into(v, &mut scratch.w_abs, &mut scratch.mags);
        let mut borderline = false;
        for j in 0..=self.spec.r {
            match target.classify(scratch.vals[j], scratch.mags[j], j) {
                Side::Out => return false,
                Side::Borderline => borderline = true,
                Side::In => {}
            }
        }
        if borderline {
            target.contains_exact(&self.eval_exact(v))
        } else {
            true
        }
    }
}

/// Reusable buffers for [`SystemInstance::in_box`].
#[derive(Clone, Debug)]
pub struct EvalScratch {
    vf: Vec<f64>,
    w: Vec<f64>,
    w_abs: Vec<f64>,
    vals: Vec<f64>,
    mags: Vec<f64>,
}

impl EvalScratch {
    pub fn new(n: usize, r: usize) -> Self {
        Self { vf: vec![0.0; n], w: vec![0.0; n], w_abs: vec![0.0; n], vals: vec![0.0; r + 1], mags: vec![0.0; r + 1] }
    }

    pub fn for_instance(inst: &SystemInstance) -> Self {
        Self::new(inst.n(), inst.r())
    }

    /// Values computed by the last [`SystemInstance::in_box`] call.
    pub fn values(&self) -> &[f64] {
        &self.vals
    }
}

/// `(F, M)(v) ∈ I` rewritten in the coordinates `(F₀(v·g₁), M₀(v·g₁))`.
#[derive(Clone, Debug, PartialEq)]
pub enum PulledBackRegion {
    /// `diag(λ, g₂)⁻¹·I` when that image is itself a box.
    Box(TargetBox),
    /// General `g₂`: membership of `(λ·a₀, a_lin·g₂)` in the original box.
    Parallelepiped { lambda: f64, g2: DMatrix<f64>, target: TargetBox },
}

impl PulledBackRegion {
    pub fn contains(&self, normal_values: &[f64]) -> bool {
        match self {
            PulledBackRegion::Box(b) => b.contains(normal_values),
            PulledBackRegion::Parallelepiped { lambda, g2, target } => {
                let r = g2.nrows();
                let mut image = Vec::with_capacity(r + 1);
                image.push(lambda * normal_values[0]);
                for k in 0..r {
                    image.push((0..r).map(|j| normal_values[1 + j] * g2[(j, k)]).sum());
                }
                target.contains(&image)
            }
        }
    }

    pub fn as_box(&self) -> Option<&TargetBox> {
        match self {
            PulledBackRegion::Box(b) => Some(b),
            _ => None,
        }
    }
}

/// Maps a target box for `(F, M)` to the equivalent region for `(F₀^{g₁}, M₀^{g₁})`.
pub fn pull_back_box(inst: &SystemInstance, target: &TargetBox) -> PulledBackRegion {
    let parallelepiped = || PulledBackRegion::Parallelepiped {
        lambda: inst.lambda,
        g2: inst.g2.clone(),
        target: target.clone(),
    };
    if !inst.is_diagonal_g2() {
        return parallelepiped();
    }
    let scales: Vec<f64> = std::iter::once(inst.lambda).chain((0..inst.r()).map(|i| inst.g2[(i, i)])).collect();
    if target.ends == Ends::HalfOpen && scales.iter().any(|&c| c < 0.0) {
        // [lo, hi) maps to (lo', hi'] under a sign flip, which a box cannot express.
        return parallelepiped();
    }
    let intervals = target
        .intervals
        .iter()
        .zip(&scales)
        .map(|(&(lo, hi), &c)| {
            if c == 1.0 {
                (lo, hi)
            } else if c > 0.0 {
                (lo / c, hi / c)
            } else {
                (hi / c, lo / c)
            }
        })
        .collect();
    PulledBackRegion::Box(TargetBox::new(intervals, target.ends))
}

/// Exact `|x|` as `f64`, for reporting residuals of exact evaluations.
pub fn rational_to_f64(x: &BigRational) -> f64 {
    x.to_f64().unwrap_or_else(|| if x.is_negative() { f64::NEG_INFINITY } else { f64::INFINITY })
}
