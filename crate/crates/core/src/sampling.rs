//! Seeded generic instances `(λ, g₁, g₂)` and random unimodular lattices.
//!
//! The laws here are absolutely continuous and supported on compact sets;
//! they are **not** Haar measure on `SL_n(ℝ)` (which has infinite mass).
//! Statements that hold for almost every instance hold almost surely for
//! these laws, which is all the experiments need.
//!
//! Streams: every draw is made from `ChaCha8Rng::seed_from_u64(seed)` with
//! its stream counter set to a caller-chosen index, so item `i` of a batch is
//! reproducible on its own and batches can be generated in parallel.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forms::{SystemInstance, SystemSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub seed: u64,
    /// Bound on `max(‖g₁‖, ‖g₁⁻¹‖)` in operator 2-norm.
    pub k_radius: f64,
    /// `λ` is drawn from `±[1/Λ, Λ]`; `|det g₂|^{1/r}` is kept in the same range.
    pub lambda_max: f64,
    pub g2_condition_bound: f64,
    pub max_attempts: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { seed: 0, k_radius: 5.0, lambda_max: 2.0, g2_condition_bound: 10.0, max_attempts: 10_000 }
    }
}

impl SamplerConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k_radius >= 1.0) {
            return Err(Error::InvalidArgument(format!("k_radius must be ≥ 1, got {}", self.k_radius)));
        }
        if !(self.lambda_max >= 1.0) {
            return Err(Error::InvalidArgument(format!("lambda_max must be ≥ 1, got {}", self.lambda_max)));
        }
        if !(self.g2_condition_bound >= 1.0) {
            return Err(Error::InvalidArgument("g2_condition_bound must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Seed for sub-task `index` of a run seeded with `seed` (SplitMix64 step).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for stream `stream` of `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |_, _| StandardNormal.sample(rng))
}

/// `(σ_max, σ_min)` of a square matrix.
pub fn singular_extremes(m: &DMatrix<f64>) -> (f64, f64) {
    let sv = m.clone().singular_values();
    let max = sv.iter().copied().fold(0.0, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    (max, min)
}

/// Draws `g₁` from `rng`; see [`sample_g1`].
pub fn draw_g1<R: Rng + ?Sized>(rng: &mut R, n: usize, cfg: &SamplerConfig) -> Result<DMatrix<f64>> {
    for _ in 0..cfg.max_attempts {
        let a = gaussian_matrix(rng, n);
        let det = a.determinant();
        if !(det > 0.0) {
            continue;
        }
        let g = a / det.powf(1.0 / n as f64);
        let (smax, smin) = singular_extremes(&g);
        if smax <= cfg.k_radius && 1.0 / smin <= cfg.k_radius {
            return Ok(g);
        }
    }
    Err(Error::RejectionBudgetExceeded { attempts: cfg.max_attempts })
}

/// Gaussian `n × n` matrix rejected until `det > 0` and
/// `max(‖g‖, ‖g⁻¹‖) ≤ K`, then rescaled to determinant one.
pub fn sample_g1(cfg: &SamplerConfig, n: usize) -> Result<DMatrix<f64>> {
    cfg.validate()?;
    draw_g1(&mut stream_rng(cfg.seed, 0), n, cfg)
}

fn draw_g2<R: Rng + ?Sized>(rng: &mut R, r: usize, cfg: &SamplerConfig) -> Result<DMatrix<f64>> {
    let (lo, hi) = (1.0 / cfg.lambda_max, cfg.lambda_max);
    for _ in 0..cfg.max_attempts {
        let g = gaussian_matrix(rng, r);
        let (smax, smin) = singular_extremes(&g);
        if smin == 0.0 || smax / smin > cfg.g2_condition_bound {
            continue;
        }
        let scale = g.determinant().abs().powf(1.0 / r as f64);
        if (lo..=hi).contains(&scale) {
            return Ok(g);
        }
    }
    Err(Error::RejectionBudgetExceeded { attempts: cfg.max_attempts })
}

/// Instance number `index` of the batch defined by `cfg.seed`.
pub fn sample_instance_at(spec: &SystemSpec, cfg: &SamplerConfig, index: u64) -> Result<SystemInstance> {
    cfg.validate()?;
    let mut rng = stream_rng(cfg.seed, index);
    let magnitude = rng.random_range(1.0 / cfg.lambda_max..=cfg.lambda_max);
    let lambda = if rng.random::<bool>() { magnitude } else { -magnitude };
    let g1 = draw_g1(&mut rng, spec.n, cfg)?;
    let g2 = draw_g2(&mut rng, spec.r, cfg)?;
    SystemInstance::from_matrices(spec.clone(), lambda, g1, g2)
}

/// `λ` uniform on `±[1/Λ, Λ]`, `g₁` as in [`sample_g1`], `g₂` Gaussian with
/// bounded condition number.
pub fn sample_instance(spec: &SystemSpec, cfg: &SamplerConfig) -> Result<SystemInstance> {
    sample_instance_at(spec, cfg, 0)
}

/// The lattice `ℤⁿ·g` spanned by the rows of `g`.
#[derive(Clone, Debug, PartialEq)]
pub struct Lattice {
    basis: DMatrix<f64>,
}

impl Lattice {
    pub fn new(basis: DMatrix<f64>) -> Result<Self> {
        if !basis.is_square() || basis.determinant() == 0.0 {
            return Err(Error::InvalidArgument("lattice basis must be square and nonsingular".into()));
        }
        Ok(Self { basis })
    }

    pub fn standard(n: usize) -> Self {
        Self { basis: DMatrix::identity(n, n) }
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn covolume(&self) -> f64 {
        self.basis.determinant().abs()
    }

    /// `v·g`.
    pub fn point(&self, v: &[i64]) -> Vec<f64> {
        let n = self.dim();
        (0..n).map(|j| v.iter().enumerate().map(|(i, &c)| c as f64 * self.basis[(i, j)]).sum()).collect()
    }

    /// Shortest nonzero Euclidean length over coefficient vectors in `[−k, k]ⁿ`.
    pub fn shortest_length(&self, k: i64) -> f64 {
        let n = self.dim();
        let mut v = vec![-k; n];
        let mut best = f64::INFINITY;
        loop {
            if v.iter().any(|&x| x != 0) {
                let len = self.point(&v).iter().map(|x| x * x).sum::<f64>().sqrt();
                best = best.min(len);
            }
            let mut i = 0;
            loop {
                if i == n {
                    return best;
                }
                if v[i] < k {
                    v[i] += 1;
                    break;
                }
                v[i] = -k;
                i += 1;
            }
        }
    }
}

pub fn sample_lattice_at(cfg: &SamplerConfig, n: usize, index: u64) -> Result<Lattice> {
    cfg.validate()?;
    Lattice::new(draw_g1(&mut stream_rng(cfg.seed, index), n, cfg)?)
}

/// A unimodular lattice `ℤⁿ·g` with `g` from [`sample_g1`].
pub fn sample_lattice(cfg: &SamplerConfig, n: usize) -> Result<Lattice> {
    sample_lattice_at(cfg, n, 0)
}
