//! Lattice-point discrepancy `D(ℤⁿg, A) = |#(ℤⁿg ∩ A) − vol(A)|` for
//! `A = (F₀, M₀)⁻¹(I) ∩ B_t·g`.
//!
//! `#(ℤⁿg ∩ A)` is the number of `v ∈ ℤⁿ` with `‖v‖ ≤ t` and
//! `(F₀, M₀)(v·g) ∈ I`, i.e. a count for the instance `(1, g, Id)`.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::enumeration::{count, BoxFamily, CountRequest, Strategy, DEFAULT_BUDGET};
use crate::error::{Error, Result};
use crate::fit::{bootstrap_mean, bootstrap_paired_ratio, loglog_fit, Interval, LogLogFit};
use crate::forms::{NormSpec, SystemInstance, SystemSpec, TargetBox};
use crate::sampling::{derive_seed, sample_lattice_at, SamplerConfig};
use crate::volume::region_mc_volume;

pub const MIN_TRIALS: usize = 30;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyParams {
    pub norm: NormSpec,
    pub volume_samples: u64,
    pub seed: u64,
    pub budget: u64,
    /// Exponent for the normalized value `D / vol^δ`.
    pub delta: Option<f64>,
}

impl Default for DiscrepancyParams {
    fn default() -> Self {
        Self { norm: NormSpec::Sup, volume_samples: 200_000, seed: 0, budget: DEFAULT_BUDGET, delta: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyReport {
    pub t: f64,
    pub count: u64,
    pub volume: f64,
    /// Monte Carlo error of `volume`, which is also the error of `d`.
    pub volume_std_error: f64,
    pub d: f64,
    pub normalized: Option<f64>,
}

pub fn discrepancy(
    g: &DMatrix<f64>,
    spec: &SystemSpec,
    target: &TargetBox,
    t: f64,
    params: &DiscrepancyParams,
) -> Result<DiscrepancyReport> {
    let inst = SystemInstance::from_matrices(spec.clone(), 1.0, g.clone(), DMatrix::identity(spec.r, spec.r))?;
    let req = CountRequest::new(inst.clone(), target.clone(), t)
        .norm(params.norm)
        .strategy(Strategy::Pruned)
        .budget(params.budget);
    let n = count(&req)?.count;
    let vol = region_mc_volume(&inst, target, t, params.norm, params.volume_samples, params.seed)?;
    let d = (n as f64 - vol.value).abs();
    let normalized = params.delta.map(|delta| if vol.value > 0.0 { d / vol.value.powf(delta) } else { 0.0 });
    Ok(DiscrepancyReport { t, count: n, volume: vol.value, volume_std_error: vol.std_error, d, normalized })
}

/// `E[D²/vol(A)]` over sampled unimodular lattices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SecondMoment {
    pub t: f64,
    pub trials: usize,
    pub mean: Interval,
    /// Per-lattice `D²/vol`, in trial order (0 when the region is empty).
    pub values: Vec<f64>,
    pub reports: Vec<DiscrepancyReport>,
}

/// Trial `i` uses lattice `i` of `cfg` and volume seed `derive_seed(params.seed, i)`,
/// so runs at different `t` see the same lattices.
pub fn second_moment(
    cfg: &SamplerConfig,
    spec: &SystemSpec,
    target: &TargetBox,
    t: f64,
    trials: usize,
    params: &DiscrepancyParams,
) -> Result<SecondMoment> {
    if trials < MIN_TRIALS {
        return Err(Error::InsufficientTrials { got: trials, min: MIN_TRIALS });
    }
    let reports: Vec<DiscrepancyReport> = (0..trials as u64)
        .into_par_iter()
        .map(|i| {
            let lattice = sample_lattice_at(cfg, spec.n, i)?;
            let p = DiscrepancyParams { seed: derive_seed(params.seed, i), ..params.clone() };
            discrepancy(lattice.basis(), spec, target, t, &p)
        })
        .collect::<Result<_>>()?;
    let values: Vec<f64> = reports.iter().map(|r| if r.volume > 0.0 { r.d * r.d / r.volume } else { 0.0 }).collect();
    let mean = bootstrap_mean(&values, 2000, 0.9, derive_seed(params.seed, u64::MAX))?;
    Ok(SecondMoment { t, trials, mean, values, reports })
}

/// Paired bootstrap interval for `E_b / E_a` when both moments were
/// computed on the same lattices.
pub fn moment_growth(a: &SecondMoment, b: &SecondMoment, resamples: usize, level: f64, seed: u64) -> Result<Interval> {
    bootstrap_paired_ratio(&b.values, &a.values, resamples, level, seed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaFit {
    pub delta_hat: f64,
    pub below_one: bool,
    /// Some `D` was zero and was floored at 1 for the logarithm.
    pub degenerate: bool,
    pub fit: LogLogFit,
    pub points: Vec<DiscrepancyReport>,
}

/// Slope of `log D` against `log vol`.
pub fn delta_fit_values(volumes: &[f64], ds: &[f64]) -> Result<(LogLogFit, f64)> {
    let fit = loglog_fit(volumes, ds)?;
    let slope = fit.slope;
    Ok((fit, slope))
}

pub fn delta_fit(
    g: &DMatrix<f64>,
    spec: &SystemSpec,
    family: &BoxFamily,
    t_grid: &[f64],
    params: &DiscrepancyParams,
) -> Result<DeltaFit> {
    if t_grid.len() < 4 {
        return Err(Error::InvalidArgument(format!("delta fit needs at least 4 radii, got {}", t_grid.len())));
    }
    let points = t_grid
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let p = DiscrepancyParams { seed: derive_seed(params.seed, i as u64), ..params.clone() };
            discrepancy(g, spec, &family.at(t), t, &p)
        })
        .collect::<Result<Vec<_>>>()?;
    let vols: Vec<f64> = points.iter().map(|p| p.volume).collect();
    let ds: Vec<f64> = points.iter().map(|p| p.d).collect();
    let (fit, delta_hat) = delta_fit_values(&vols, &ds)?;
    Ok(DeltaFit { delta_hat, below_one: delta_hat < 1.0, degenerate: fit.floored, fit, points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forms::{build_quadratic_normal_form, QuadraticSignatureSpec};
    use crate::sampling::stream_rng;
    use rand::Rng;

    fn model_spec() -> SystemSpec {
        build_quadratic_normal_form(QuadraticSignatureSpec { p: 2, q: 1, u: 3, v: 1, n: 4, r: 1 }).unwrap()
    }

    /// Volume of `{|x₁² + x₂² − x₃² + z²| ≤ ½, |z| ≤ ½, ‖x‖∞ ≤ t}` by
    /// quadrature over `(x₃, z)` of the clipped annulus area.
    fn model_volume_quadrature(t: f64) -> f64 {
        let disk = |r2: f64| -> f64 {
            if r2 <= 0.0 {
                return 0.0;
            }
            let r = r2.sqrt();
            if r <= t {
                return std::f64::consts::PI * r2;
            }
            let th = (t / r).acos();
            std::f64::consts::PI * r2 - 4.0 * r2 * (th - th.sin() * th.cos())
        };
        let (nx, nz) = (4000, 200);
        let mut total = 0.0;
        for i in 0..nx {
            let x = -t + 2.0 * t * (i as f64 + 0.5) / nx as f64;
            for j in 0..nz {
                let z = -0.5 + (j as f64 + 0.5) / nz as f64;
                let base = x * x - z * z;
                total += (disk(base + 0.5) - disk(base - 0.5)) * (2.0 * t / nx as f64) / nz as f64;
            }
        }
        total
    }

    #[test]
    fn identity_lattice_model() {
        let target = TargetBox::symmetric(&[0.5, 0.5]);
        let rep = discrepancy(&DMatrix::identity(4, 4), &model_spec(), &target, 10.0, &DiscrepancyParams::default()).unwrap();
        assert_eq!(rep.count, 113);
        let vol = model_volume_quadrature(10.0);
        assert!((vol - 60.95).abs() < 0.05, "{vol}");
        assert!((rep.volume - vol).abs() < 4.0 * rep.volume_std_error, "{rep:?}");
        assert!((rep.d - (113.0 - vol)).abs() < 4.0 * rep.volume_std_error);
    }

    #[test]
    fn empty_box() {
        let target = TargetBox::symmetric(&[0.5, 0.5]).scaled(0.0);
        let rep = discrepancy(&DMatrix::identity(4, 4), &model_spec(), &target, 10.0, &DiscrepancyParams::default()).unwrap();
        assert_eq!((rep.count, rep.volume, rep.d), (0, 0.0, 0.0));
    }

    #[test]
    fn second_moment_guards() {
        let cfg = SamplerConfig::with_seed(1);
        let target = TargetBox::symmetric(&[0.5, 0.5]);
        let err = second_moment(&cfg, &model_spec(), &target, 10.0, 1, &DiscrepancyParams::default());
        assert!(matches!(err, Err(Error::InsufficientTrials { got: 1, min: 30 })));
        let zero = second_moment(&cfg, &model_spec(), &target.scaled(0.0), 10.0, 30, &DiscrepancyParams::default()).unwrap();
        assert!(zero.values.iter().all(|&v| v == 0.0));
        assert_eq!(zero.mean.estimate, 0.0);
    }

    #[test]
    fn synthetic_delta_recovery() {
        let mut rng = stream_rng(7, 0);
        let vols = [50.0, 100.0, 200.0, 400.0, 800.0, 1600.0];
        let exact: Vec<f64> = vols.iter().map(|v: &f64| v.powf(1.0)).collect();
        assert!((delta_fit_values(&vols, &exact).unwrap().1 - 1.0).abs() < 1e-12);
        let noisy: Vec<f64> = vols.iter().map(|v: &f64| v.powf(0.7) * rng.random_range(0.95..1.05)).collect();
        let (_, delta) = delta_fit_values(&vols, &noisy).unwrap();
        assert!((delta - 0.7).abs() < 0.05, "{delta}");
    }

    #[test]
    fn delta_fit_needs_four_points() {
        let family = BoxFamily::constant(&TargetBox::symmetric(&[0.5, 0.5]));
        let r = delta_fit(&DMatrix::identity(4, 4), &model_spec(), &family, &[10.0, 20.0], &DiscrepancyParams::default());
        assert!(r.is_err());
    }
}
