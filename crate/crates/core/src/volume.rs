//! Region volumes `vol((F, M)⁻¹(I) ∩ B_T)` and the main-term constant.
//!
//! Both estimators work in normal coordinates `w = v·g₁` (volume preserving).
//! The diagonal block is written in `𝓛^d` polar coordinates
//! `x₁ = r₁ω₁`, `x₂ = r₂ω₂` with `ω` drawn from the cone measure, i.e. the
//! measure for which `dx = r^{p−1} dr dω`. On the level set
//! `ζ = r₁^d − r₂^d + P(Y, Z)` one radius is solved for and the other is
//! free, which turns the thin shell `F ∈ I₀` into a bounded-weight integrand.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::forms::{NormSpec, SystemInstance, SystemSpec, TargetBox};
use crate::sampling::stream_rng;

/// Number of independent generator streams; fixed so that results do not
/// depend on the size of the thread pool.
pub const STREAMS: u64 = 64;
/// Strata along the value coordinate `ζ` within each stream.
const STRATA: usize = 16;
pub const MIN_SAMPLES: u64 = 10_000;
const MIN_ACCEPTANCE: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VolumeMethod {
    RegionMc,
    JIntegral,
    Sandwich,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeEstimate {
    pub value: f64,
    pub std_error: f64,
    pub samples: u64,
    pub method: VolumeMethod,
}

impl VolumeEstimate {
    fn zero(method: VolumeMethod) -> Self {
        Self { value: 0.0, std_error: 0.0, samples: 0, method }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { value: self.value * factor, std_error: self.std_error * factor.abs(), ..self.clone() }
    }
}

/// Quintic smoothstep `6x⁵ − 15x⁴ + 10x³` clamped to `[0, 1]`.
pub fn smoothstep5(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * x * (x * (6.0 * x - 15.0) + 10.0)
}

/// Radial profiles `h⁻ ≤ 1[ρ ≤ 1] ≤ h⁺` with transition width `δ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MollifierPair {
    pub delta: f64,
}

impl MollifierPair {
    pub fn new(delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::InvalidArgument(format!("delta must lie in (0, 1), got {delta}")));
        }
        Ok(Self { delta })
    }

    /// 1 on `ρ ≤ 1`, 0 on `ρ ≥ 1 + δ`.
    pub fn outer(&self, rho: f64) -> f64 {
        1.0 - smoothstep5((rho - 1.0) / self.delta)
    }

    /// 1 on `ρ ≤ 1 − δ`, 0 on `ρ ≥ 1`.
    pub fn inner(&self, rho: f64) -> f64 {
        1.0 - smoothstep5((rho - 1.0 + self.delta) / self.delta)
    }

    /// Bound on `|h±'|`: the smoothstep slope peaks at 15/8.
    pub fn gradient_bound(&self) -> f64 {
        1.875 / self.delta
    }
}

/// Volume of the unit `𝓛^d` ball in ℝ^dim.
pub fn ld_ball_volume(dim: usize, d: u32) -> f64 {
    let d = d as f64;
    (2.0 * gamma(1.0 + 1.0 / d)).powi(dim as i32) / gamma(1.0 + dim as f64 / d)
}

/// Total mass of the cone measure on the unit `𝓛^d` sphere in ℝ^dim.
pub fn cone_mass(dim: usize, d: u32) -> f64 {
    dim as f64 * ld_ball_volume(dim, d)
}

/// Draws from the normalized cone measure on `{‖x‖_d = 1}` ⊂ ℝ^dim.
#[derive(Clone, Debug)]
pub struct ConeSampler {
    dim: usize,
    d: u32,
    gamma: Gamma<f64>,
}

impl ConeSampler {
    pub fn new(dim: usize, d: u32) -> Self {
        // |x|^d ~ Gamma(1/d, 1) has density ∝ exp(−|x|^d) for x
        let gamma = Gamma::new(1.0 / d as f64, 1.0).expect("valid shape");
        Self { dim, d, gamma }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let inv = 1.0 / self.d as f64;
        loop {
            let mut sum = 0.0;
            for x in out.iter_mut() {
                let g: f64 = self.gamma.sample(rng);
                sum += g;
                let mag = g.powf(inv);
                *x = if rng.random::<bool>() { mag } else { -mag };
            }
            if sum > 0.0 {
                let scale = sum.powf(-inv);
                out.iter_mut().for_each(|x| *x *= scale);
                return;
            }
        }
    }
}

/// The asymptotic-regime threshold `10·radius(I)·max(‖g₂⁻¹‖, 1/|λ|, 1)`
/// (operator 2-norm). Estimates below it are still exact volumes but the
/// ratio to the main term is not expected to have settled.
pub fn t0_heuristic(inst: &SystemInstance, target: &TargetBox) -> f64 {
    let sv = inst.g2_inv().clone().singular_values();
    let g2_norm = sv.iter().copied().fold(0.0, f64::max);
    10.0 * target.radius() * g2_norm.max(1.0 / inst.lambda().abs()).max(1.0)
}

/// Running mean and centred second moment (Welford, merged with Chan's rule).
#[derive(Clone, Copy)]
struct Moments<const M: usize> {
    n: u64,
    nonzero: u64,
    mean: [f64; M],
    m2: [f64; M],
}

impl<const M: usize> Moments<M> {
    fn new() -> Self {
        Self { n: 0, nonzero: 0, mean: [0.0; M], m2: [0.0; M] }
    }

    fn push(&mut self, obs: [f64; M], hit: bool) {
        self.n += 1;
        self.nonzero += hit as u64;
        let n = self.n as f64;
        for k in 0..M {
            let delta = obs[k] - self.mean[k];
            self.mean[k] += delta / n;
            self.m2[k] += delta * (obs[k] - self.mean[k]);
        }
    }

    fn merge(&mut self, other: &Self) {
        if other.n == 0 {
            return;
        }
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        for k in 0..M {
            let delta = other.mean[k] - self.mean[k];
            self.mean[k] += delta * nb / n;
            self.m2[k] += other.m2[k] + delta * delta * na * nb / n;
        }
        self.n += other.n;
        self.nonzero += other.nonzero;
    }

    fn estimate(&self, k: usize, method: VolumeMethod) -> VolumeEstimate {
        let n = self.n as f64;
        let var = self.m2[k].max(0.0) / (n - 1.0);
        VolumeEstimate { value: self.mean[k], std_error: (var / n).sqrt(), samples: 2 * self.n, method }
    }
}

/// Runs `STREAMS` streams of `pairs` antithetic pairs each. The integrand
/// receives a stratified uniform for `ζ` and returns the pair average plus
/// whether either sample landed in the region.
fn drive<const M: usize, S, I, F>(samples: u64, seed: u64, init: I, f: F) -> Moments<M>
where
    I: Fn() -> S + Sync,
    F: Fn(&mut S, &mut ChaCha8Rng, f64) -> ([f64; M], bool) + Sync,
{
    let pairs_total = samples.div_ceil(2);
    let per_stream = pairs_total.div_ceil(STREAMS).div_ceil(STRATA as u64) * STRATA as u64;
    let parts: Vec<Moments<M>> = (0..STREAMS)
        .into_par_iter()
        .map(|stream| {
            let mut rng = stream_rng(seed, stream);
            let mut state = init();
            let mut acc = Moments::new();
            for i in 0..per_stream {
                let stratum = (i % STRATA as u64) as f64;
                let u = (stratum + rng.random::<f64>()) / STRATA as f64;
                let (obs, hit) = f(&mut state, &mut rng, u);
                acc.push(obs, hit);
            }
            acc
        })
        .collect();
    let mut total = Moments::new();
    for p in &parts {
        total.merge(p);
    }
    total
}

fn check_samples(samples: u64) -> Result<()> {
    if samples < MIN_SAMPLES {
        return Err(Error::InvalidArgument(format!("samples must be ≥ {MIN_SAMPLES}, got {samples}")));
    }
    Ok(())
}

/// `Σ_j |g₁[j][i]|`: with `‖v‖_∞ ≤ 1`, `|(v·g₁)_i|` is at most this.
fn column_abs_sums(inst: &SystemInstance) -> Vec<f64> {
    let g = inst.g1();
    (0..inst.n()).map(|i| g.column(i).iter().map(|x| x.abs()).sum()).collect()
}

/// `w·g⁻¹` for a row vector `w`.
fn row_times(w: &[f64], m: &nalgebra::DMatrix<f64>, out: &mut [f64]) {
    for (j, o) in out.iter_mut().enumerate() {
        *o = w.iter().enumerate().map(|(i, &x)| x * m[(i, j)]).sum();
    }
}

/// The set `{r ≥ 0 : ‖r·a + b‖ ≤ 1}` (an interval by convexity).
fn line_interval(norm: NormSpec, a: &[f64], b: &[f64]) -> Option<(f64, f64)> {
    match norm {
        NormSpec::Sup => {
            let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
            for (&ai, &bi) in a.iter().zip(b) {
                if ai == 0.0 {
                    if bi.abs() > 1.0 {
                        return None;
                    }
                    continue;
                }
                let (x, y) = ((-1.0 - bi) / ai, (1.0 - bi) / ai);
                lo = lo.max(x.min(y));
                hi = hi.min(x.max(y));
            }
            (lo <= hi).then_some((lo, hi))
        }
        NormSpec::Euclidean => {
            let aa: f64 = a.iter().map(|x| x * x).sum();
            let ab: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let bb: f64 = b.iter().map(|x| x * x).sum();
            let disc = ab * ab - aa * (bb - 1.0);
            if aa == 0.0 || disc < 0.0 {
                return None;
            }
            let s = disc.sqrt();
            let (lo, hi) = ((-ab - s) / aa, (-ab + s) / aa);
            (hi >= 0.0).then_some((lo.max(0.0), hi))
        }
        NormSpec::Ld { d } => {
            let phi = |r: f64| -> f64 { a.iter().zip(b).map(|(x, y)| (r * x + y).abs().powi(d as i32)).sum::<f64>() - 1.0 };
            let na = norm.eval(a);
            if na == 0.0 {
                return None;
            }
            let upper = (1.0 + norm.eval(b)) / na;
            // golden-section search for the minimum of the convex φ
            let ratio = (5f64.sqrt() - 1.0) / 2.0;
            let (mut x0, mut x1) = (0.0, upper);
            for _ in 0..80 {
                let m1 = x1 - ratio * (x1 - x0);
                let m2 = x0 + ratio * (x1 - x0);
                if phi(m1) <= phi(m2) {
                    x1 = m2;
                } else {
                    x0 = m1;
                }
            }
            let rmin = 0.5 * (x0 + x1);
            if phi(rmin) > 0.0 {
                return None;
            }
            let bisect = |mut inside: f64, mut outside: f64| {
                for _ in 0..64 {
                    let mid = 0.5 * (inside + outside);
                    if phi(mid) <= 0.0 {
                        inside = mid;
                    } else {
                        outside = mid;
                    }
                }
                inside
            };
            let lo = if phi(0.0) <= 0.0 { 0.0 } else { bisect(rmin, 0.0) };
            Some((lo, bisect(rmin, upper)))
        }
    }
}

/// Monte Carlo estimate of `J(h_{g₁})`, the cone integral
/// `(1/d)∫∫∫ h_{g₁}((ω₁+ω₂)r + Y₁′) r^{p+q−d−1} dω₁ dω₂ dr dY₁′`
/// with `h_{g₁}(w) = 1[‖w·g₁⁻¹‖ ≤ 1]`.
pub fn j_constant(inst: &SystemInstance, norm: NormSpec, samples: u64, seed: u64) -> Result<VolumeEstimate> {
    check_samples(samples)?;
    let spec = inst.spec();
    if !spec.asymptotic_hypotheses_ok() {
        return Err(Error::Hypothesis(format!(
            "need p ≥ 1, q ≥ 1 and d + 1 ≤ p + q ≤ n − r (p = {}, q = {}, d = {})",
            spec.p, spec.q, spec.d
        )));
    }
    let (n, p, q, d) = (spec.n, spec.p, spec.q, spec.d);
    let m = (p + q) as i32 - d as i32;
    let y1 = spec.y1_start()..spec.y2_start();
    let bounds = column_abs_sums(inst);
    let y1_bounds: Vec<f64> = bounds[y1.clone()].to_vec();
    let base = cone_mass(p, d) * cone_mass(q, d) * y1_bounds.iter().map(|c| 2.0 * c).product::<f64>() / d as f64;
    let (cone_p, cone_q) = (ConeSampler::new(p, d), ConeSampler::new(q, d));
    let g_inv = inst.g1_inv();
    let r_integral = |(lo, hi): (f64, f64)| (hi.powi(m) - lo.powi(m)) / m as f64;

    let moments = drive::<1, _, _, _>(
        samples,
        seed,
        || (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]),
        |(wa, wb, a, b), rng, _| {
            wa.iter_mut().for_each(|x| *x = 0.0);
            wb.iter_mut().for_each(|x| *x = 0.0);
            cone_p.sample_into(rng, &mut wa[..p]);
            cone_q.sample_into(rng, &mut wa[p..p + q]);
            for (k, i) in y1.clone().enumerate() {
                wb[i] = rng.random_range(-y1_bounds[k]..=y1_bounds[k]);
            }
            row_times(wa, g_inv, a);
            row_times(wb, g_inv, b);
            let plus = line_interval(norm, a, b).map_or(0.0, r_integral);
            a.iter_mut().for_each(|x| *x = -*x);
            let minus = line_interval(norm, a, b).map_or(0.0, r_integral);
            ([0.5 * base * (plus + minus)], plus + minus > 0.0)
        },
    );
    Ok(moments.estimate(0, VolumeMethod::JIntegral))
}

/// `c_{F,M} = J(h_{g₁}) / (|λ|·|det g₂|)`, the constant with
/// `vol ≈ c_{F,M}·|I|·T^{n−r−d}` for the instance as given.
pub fn main_term_constant(inst: &SystemInstance, norm: NormSpec, samples: u64, seed: u64) -> Result<VolumeEstimate> {
    let j = j_constant(inst, norm, samples, seed)?;
    Ok(j.scaled(1.0 / (inst.lambda().abs() * inst.det_g2().abs())))
}

/// Shared integrand for the region estimators: one antithetic pair of points
/// on the level set, with weight and the two ball radii `‖v±‖/T`.
struct LevelSetSampler<'a> {
    inst: &'a SystemInstance,
    spec: &'a SystemSpec,
    norm: NormSpec,
    t: f64,
    zeta: (f64, f64),
    lin: Vec<(f64, f64)>,
    bounds: Vec<f64>,
    base: f64,
    cone_p: ConeSampler,
    cone_q: ConeSampler,
}

struct Scratch {
    u: Vec<f64>,
    w: Vec<f64>,
    v: Vec<f64>,
}

impl<'a> LevelSetSampler<'a> {
    /// `reach` scales the sampled domain beyond the ball of radius `t`.
    fn new(inst: &'a SystemInstance, target: &TargetBox, t: f64, reach: f64, norm: NormSpec) -> Self {
        let spec = inst.spec();
        let lambda = inst.lambda();
        let (a, b) = (target.intervals[0].0 / lambda, target.intervals[0].1 / lambda);
        let zeta = (a.min(b), a.max(b));
        let lin = target.intervals[1..].to_vec();
        let bounds: Vec<f64> = column_abs_sums(inst).into_iter().map(|c| c * t * reach).collect();
        let lin_vol: f64 = lin.iter().map(|(lo, hi)| hi - lo).product();
        let y1_vol: f64 = bounds[spec.y1_start()..spec.y2_start()].iter().map(|b| 2.0 * b).product();
        let base = lin_vol / inst.det_g2().abs()
            * y1_vol
            * (zeta.1 - zeta.0)
            * cone_mass(spec.p, spec.d)
            * cone_mass(spec.q, spec.d);
        Self {
            inst,
            spec,
            norm,
            t,
            zeta,
            lin,
            bounds,
            base,
            cone_p: ConeSampler::new(spec.p, spec.d),
            cone_q: ConeSampler::new(spec.q, spec.d),
        }
    }

    fn scratch(&self) -> Scratch {
        let n = self.spec.n;
        Scratch { u: vec![0.0; self.spec.r], w: vec![0.0; n], v: vec![0.0; n] }
    }

    /// Returns `(weight, ρ₊, ρ₋)`; weight 0 means the draw missed.
    fn draw(&self, s: &mut Scratch, rng: &mut ChaCha8Rng, u_zeta: f64) -> (f64, f64, f64) {
        let spec = self.spec;
        let (p, q, d) = (spec.p, spec.q, spec.d);
        let df = d as f64;
        let zeta = self.zeta.0 + u_zeta * (self.zeta.1 - self.zeta.0);
        for (x, &(lo, hi)) in s.u.iter_mut().zip(&self.lin) {
            *x = rng.random_range(lo..hi);
        }
        s.w.iter_mut().for_each(|x| *x = 0.0);
        // (Y₂, Z) = u·g₂⁻¹
        let g2_inv = self.inst.g2_inv();
        for (j, &i) in spec.linear_coordinates().iter().enumerate() {
            s.w[i] = s.u.iter().enumerate().map(|(k, &uk)| uk * g2_inv[(k, j)]).sum();
        }
        for i in spec.y1_start()..spec.y2_start() {
            s.w[i] = rng.random_range(-self.bounds[i]..=self.bounds[i]);
        }
        let c = zeta - spec.f0(&s.w);
        self.cone_p.sample_into(rng, &mut s.w[..p]);
        self.cone_q.sample_into(rng, &mut s.w[p..p + q]);

        // free radius on the side that always admits a solution
        let free = if c >= 0.0 { p..p + q } else { 0..p };
        let reach = free
            .clone()
            .map(|k| self.bounds[k] / s.w[k].abs())
            .fold(f64::INFINITY, f64::min);
        let r_free = rng.random::<f64>() * reach;
        let r_solved = (r_free.powi(d as i32) + c.abs()).powf(1.0 / df);
        if r_solved == 0.0 {
            return (0.0, f64::INFINITY, f64::INFINITY);
        }
        let (r1, r2) = if c >= 0.0 { (r_solved, r_free) } else { (r_free, r_solved) };
        let weight = self.base * reach * r1.powi(p as i32 - 1) * r2.powi(q as i32 - 1) / (df * r_solved.powi(d as i32 - 1));
        s.w[..p].iter_mut().for_each(|x| *x *= r1);
        s.w[p..p + q].iter_mut().for_each(|x| *x *= r2);

        row_times(&s.w, self.inst.g1_inv(), &mut s.v);
        let rho_plus = self.norm.eval(&s.v) / self.t;
        s.w[..p + q].iter_mut().for_each(|x| *x = -*x);
        row_times(&s.w, self.inst.g1_inv(), &mut s.v);
        let rho_minus = self.norm.eval(&s.v) / self.t;
        (weight, rho_plus, rho_minus)
    }
}

fn check_region_args(inst: &SystemInstance, target: &TargetBox, t: f64, samples: u64) -> Result<()> {
    check_samples(samples)?;
    if target.dim() != inst.r() + 1 {
        return Err(Error::Dimension { expected: inst.r() + 1, got: target.dim() });
    }
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::InvalidArgument(format!("T must be positive, got {t}")));
    }
    Ok(())
}

/// Plain hit-or-miss in the cube `[−T, T]ⁿ`, used when the diagonal block
/// lacks a positive or a negative part.
fn rejection_volume(inst: &SystemInstance, target: &TargetBox, t: f64, norm: NormSpec, samples: u64, seed: u64) -> Moments<1> {
    let n = inst.n();
    let cube = (2.0 * t).powi(n as i32);
    drive::<1, _, _, _>(
        samples,
        seed,
        || (vec![0.0; n], vec![0.0; n], vec![0.0; inst.r() + 1]),
        |(v, w, out), rng, _| {
            v.iter_mut().for_each(|x| *x = rng.random_range(-t..=t));
            let mut hits = 0.0;
            for sign in [1.0, -1.0] {
                if sign < 0.0 {
                    v.iter_mut().for_each(|x| *x = -*x);
                }
                if norm.eval(v) <= t {
                    inst.eval_into(v, w, out);
                    if target.contains(out) {
                        hits += 1.0;
                    }
                }
            }
            ([0.5 * cube * hits], hits > 0.0)
        },
    )
}

fn degenerate_check<const M: usize>(m: &Moments<M>) -> Result<()> {
    if (m.nonzero as f64) < MIN_ACCEPTANCE * m.n as f64 || m.nonzero == 0 {
        return Err(Error::DegenerateRegion(format!("no sample out of {} landed in the region", 2 * m.n)));
    }
    Ok(())
}

/// Unbiased Monte Carlo estimate of `vol((F, M)⁻¹(I) ∩ B_T)`.
pub fn region_mc_volume(
    inst: &SystemInstance,
    target: &TargetBox,
    t: f64,
    norm: NormSpec,
    samples: u64,
    seed: u64,
) -> Result<VolumeEstimate> {
    check_region_args(inst, target, t, samples)?;
    if target.is_empty() {
        return Ok(VolumeEstimate::zero(VolumeMethod::RegionMc));
    }
    let spec = inst.spec();
    let moments = if spec.p == 0 || spec.q == 0 {
        rejection_volume(inst, target, t, norm, samples, seed)
    } else {
        let sampler = LevelSetSampler::new(inst, target, t, 1.0, norm);
        drive::<1, _, _, _>(samples, seed, || sampler.scratch(), |s, rng, u| {
            let (weight, rp, rm) = sampler.draw(s, rng, u);
            let hits = (rp <= 1.0) as u8 + (rm <= 1.0) as u8;
            ([0.5 * weight * hits as f64], weight > 0.0 && hits > 0)
        })
    };
    degenerate_check(&moments)?;
    Ok(moments.estimate(0, VolumeMethod::RegionMc))
}

/// Mollified volumes bracketing the sharp one, all three from the same draws.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sandwich {
    pub lower: VolumeEstimate,
    pub sharp: VolumeEstimate,
    pub upper: VolumeEstimate,
}

/// `∫ h⁻(‖v‖/T)` and `∫ h⁺(‖v‖/T)` over `(F, M)⁻¹(I)`, together with the
/// sharp volume, using common random numbers so that `lower ≤ sharp ≤ upper`
/// holds sample by sample.
pub fn sandwich_volume(
    inst: &SystemInstance,
    target: &TargetBox,
    t: f64,
    delta: f64,
    norm: NormSpec,
    samples: u64,
    seed: u64,
) -> Result<Sandwich> {
    check_region_args(inst, target, t, samples)?;
    if !(delta > 0.0 && delta < 0.5) {
        return Err(Error::InvalidArgument(format!("delta must lie in (0, 0.5), got {delta}")));
    }
    let mollifier = MollifierPair::new(delta)?;
    if target.is_empty() {
        let z = VolumeEstimate::zero(VolumeMethod::Sandwich);
        return Ok(Sandwich { lower: z.clone(), sharp: VolumeEstimate::zero(VolumeMethod::RegionMc), upper: z });
    }
    let spec = inst.spec();
    if spec.p == 0 || spec.q == 0 {
        return Err(Error::Hypothesis("sandwich estimates need p ≥ 1 and q ≥ 1".into()));
    }
    let sampler = LevelSetSampler::new(inst, target, t, 1.0 + delta, norm);
    let moments = drive::<3, _, _, _>(samples, seed, || sampler.scratch(), |s, rng, u| {
        let (weight, rp, rm) = sampler.draw(s, rng, u);
        let lower = mollifier.inner(rp) + mollifier.inner(rm);
        let sharp = ((rp <= 1.0) as u8 + (rm <= 1.0) as u8) as f64;
        let upper = mollifier.outer(rp) + mollifier.outer(rm);
        ([0.5 * weight * lower, 0.5 * weight * sharp, 0.5 * weight * upper], weight > 0.0 && upper > 0.0)
    });
    degenerate_check(&moments)?;
    Ok(Sandwich {
        lower: moments.estimate(0, VolumeMethod::Sandwich),
        sharp: moments.estimate(1, VolumeMethod::RegionMc),
        upper: moments.estimate(2, VolumeMethod::Sandwich),
    })
}

/// Predicted exponent `ξ` in `vol = c|I|T^{n−r−d} + O(T^{n−r−d−ξ})`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorExponent {
    pub xi: f64,
    /// The error carries an extra `log T`.
    pub log_factor: bool,
    /// Supremum of admissible `ξ` when only a range is known.
    pub upper_limit: Option<f64>,
    pub hypotheses_ok: bool,
}

pub fn error_exponent(spec: &SystemSpec) -> ErrorExponent {
    if !spec.asymptotic_hypotheses_ok() {
        return ErrorExponent { xi: 0.0, log_factor: false, upper_limit: None, hypotheses_ok: false };
    }
    let pq = (spec.p + spec.q) as i64;
    let (d, dp) = (spec.d as i64, spec.d_prime as i64);
    let gap = d - dp;
    if pq > 2 * d - 1 || (pq == 2 * d - 1 && gap > 1) {
        ErrorExponent { xi: 0.5, log_factor: false, upper_limit: None, hypotheses_ok: true }
    } else if pq == 2 * d - 1 {
        ErrorExponent { xi: 0.5, log_factor: true, upper_limit: None, hypotheses_ok: true }
    } else {
        let limit = (gap * (pq - d)) as f64 / (pq - 1) as f64;
        ErrorExponent { xi: 1.0 / (2 * d) as f64, log_factor: false, upper_limit: Some(limit.min(0.5)), hypotheses_ok: true }
    }
}
