//! Experiment drivers: residual sweeps for shrinking targets, the uniform
//! sup-min table, and record output.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::enumeration::{count_curve, BoxFamily, Strategy};
use crate::error::{Error, Result};
use crate::fit::{loglog_fit, LogLogFit};
use crate::forms::{NormSpec, SystemInstance};
use crate::solver::{uniform_supmin, SupMinQuery};
use crate::volume::{main_term_constant, VolumeEstimate};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct SweepConfig {
    pub inst: SystemInstance,
    pub family: BoxFamily,
    pub t_grid: Vec<f64>,
    pub norm: NormSpec,
    pub strategy: Strategy,
    pub budget: u64,
    pub constant_samples: u64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub t: f64,
    pub count: u64,
    pub main_term: f64,
    pub residual: f64,
    pub ratio: f64,
    pub nodes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub kappa: f64,
    /// `n − r − d`.
    pub exponent: i64,
    pub constant: VolumeEstimate,
    pub points: Vec<SweepPoint>,
    pub fit: LogLogFit,
    /// `(n − r − d − κ) − slope` of `log |R|` against `log t`.
    pub nu_hat: f64,
}

/// Fits `log |R(t)|` against `log t` and converts the slope into `ν̂`.
pub fn fit_sweep(kappa: f64, exponent: i64, ts: &[f64], residuals: &[f64]) -> Result<(LogLogFit, f64)> {
    let fit = loglog_fit(ts, residuals)?;
    let nu = exponent as f64 - kappa - fit.slope;
    Ok((fit, nu))
}

pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepReport> {
    let spec = cfg.inst.spec();
    let exponent = spec.main_exponent();
    let kappa = cfg.family.kappa();
    if !(kappa < exponent as f64) {
        return Err(Error::Hypothesis(format!("κ = {kappa} must be below n − r − d = {exponent}")));
    }
    if cfg.t_grid.len() < 2 {
        return Err(Error::InvalidArgument("sweep needs at least two radii".into()));
    }
    let constant = main_term_constant(&cfg.inst, cfg.norm, cfg.constant_samples, cfg.seed)?;
    let curve = count_curve(&cfg.inst, &cfg.family, &cfg.t_grid, cfg.norm, cfg.strategy, cfg.budget, Some(constant.value))?;
    let points: Vec<SweepPoint> = curve
        .points
        .iter()
        .map(|p| {
            let main = p.main_term.unwrap_or(0.0);
            SweepPoint { t: p.t, count: p.count, main_term: main, residual: p.count as f64 - main, ratio: p.count as f64 / main, nodes: p.nodes }
        })
        .collect();
    let ts: Vec<f64> = points.iter().map(|p| p.t).collect();
    let rs: Vec<f64> = points.iter().map(|p| p.residual).collect();
    let (fit, nu_hat) = fit_sweep(kappa, exponent, &ts, &rs)?;
    Ok(SweepReport { kappa, exponent, constant, points, fit, nu_hat })
}

/// `scale·t^exponent`; an infinite scale means `+∞` at every `t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerLaw {
    pub scale: f64,
    pub exponent: f64,
}

impl PowerLaw {
    pub fn at(&self, t: f64) -> f64 {
        if self.scale.is_infinite() {
            return self.scale;
        }
        self.scale * t.powf(self.exponent)
    }
}

#[derive(Clone, Debug)]
pub struct UniformConfig {
    pub inst: SystemInstance,
    pub t_grid: Vec<f64>,
    /// `N(t)`; its exponent plays the role of `η`.
    pub n_of_t: PowerLaw,
    pub delta_of_t: PowerLaw,
    pub norm: NormSpec,
    pub budget: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniformRow {
    pub t: f64,
    pub n_radius: f64,
    pub delta: f64,
    pub grid_step: Option<f64>,
    pub supmin: Option<f64>,
    pub discretization_bound: Option<f64>,
    /// Fraction of grid targets within `δ(t)` of a value.
    pub pass_fraction: f64,
    /// `supmin < δ(t)`.
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniformReport {
    pub eta: f64,
    /// `min{1, (n − r − d)/((r + 1)(1 + r(r + 2)))}`.
    pub eta_bound: f64,
    pub eta_ok: bool,
    pub rows: Vec<UniformRow>,
}

pub fn eta_bound(n: usize, r: usize, d: u32) -> f64 {
    let e = n as f64 - r as f64 - d as f64;
    let r = r as f64;
    (e / ((r + 1.0) * (1.0 + r * (r + 2.0)))).min(1.0)
}

/// One row per `t`: the sup-min over `‖ξ‖∞ ≤ N(t)` with grid step
/// `δ(t)/4`, compared with `δ(t)`.
pub fn run_uniform(cfg: &UniformConfig) -> Result<UniformReport> {
    if cfg.t_grid.is_empty() {
        return Err(Error::InvalidArgument("t grid is empty".into()));
    }
    let spec = cfg.inst.spec();
    let bound = eta_bound(spec.n, spec.r, spec.d);
    let eta = cfg.n_of_t.exponent;
    let mut rows = Vec::with_capacity(cfg.t_grid.len());
    for &t in &cfg.t_grid {
        let n_radius = cfg.n_of_t.at(t);
        let delta = cfg.delta_of_t.at(t);
        if !(delta > 0.0) {
            return Err(Error::InvalidArgument(format!("δ(t) must be positive, got {delta} at t = {t}")));
        }
        if delta.is_infinite() {
            rows.push(UniformRow { t, n_radius, delta, grid_step: None, supmin: None, discretization_bound: None, pass_fraction: 1.0, pass: true });
            continue;
        }
        let grid_step = delta / 4.0;
        let q = SupMinQuery { inst: cfg.inst.clone(), n_radius, t, grid_step, norm: cfg.norm, budget: cfg.budget };
        let rep = uniform_supmin(&q)?;
        rows.push(UniformRow {
            t,
            n_radius,
            delta,
            grid_step: Some(grid_step),
            supmin: Some(rep.value),
            discretization_bound: Some(rep.discretization_bound),
            pass_fraction: rep.fraction_below(delta),
            pass: rep.value < delta,
        });
    }
    Ok(UniformReport { eta, eta_bound: bound, eta_ok: (0.0..bound).contains(&eta), rows })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordFormat {
    Csv,
    Jsonl,
}

impl std::str::FromStr for RecordFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(RecordFormat::Csv),
            "jsonl" => Ok(RecordFormat::Jsonl),
            other => Err(Error::InvalidArgument(format!("unknown format {other:?}"))),
        }
    }
}

/// Serializes flat records in struct field order. CSV output always has a
/// header, taken from `header` (so an empty record list still yields one).
pub fn write_records<R: Serialize, W: Write>(records: &[R], header: &[&str], format: RecordFormat, out: W) -> Result<()> {
    match format {
        RecordFormat::Csv => {
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
            w.write_record(header)?;
            for r in records {
                w.serialize(r)?;
            }
            w.flush()?;
        }
        RecordFormat::Jsonl => {
            let mut out = out;
            for r in records {
                serde_json::to_writer(&mut out, r)?;
                out.write_all(b"\n")?;
            }
            out.flush()?;
        }
    }
    Ok(())
}

pub fn emit<R: Serialize>(records: &[R], header: &[&str], format: RecordFormat, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    write_records(records, header, format, BufWriter::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forms::{build_quadratic_normal_form, QuadraticSignatureSpec, TargetBox};
    use crate::sampling::stream_rng;
    use rand::Rng;

    fn model() -> SystemInstance {
        let spec = build_quadratic_normal_form(QuadraticSignatureSpec { p: 2, q: 1, u: 3, v: 1, n: 4, r: 1 }).unwrap();
        SystemInstance::identity(spec).unwrap()
    }

    #[test]
    fn synthetic_nu_recovery() {
        // N(t) = c|I|t^e + t^{e − κ − 0.3}, with ±5% noise on the residual
        let (e, kappa) = (1i64, 0.2);
        let mut rng = stream_rng(5, 0);
        let ts = [25.0, 50.0, 100.0, 200.0, 400.0, 800.0];
        let residuals: Vec<f64> = ts.iter().map(|t: &f64| t.powf(e as f64 - kappa - 0.3) * rng.random_range(0.95..1.05)).collect();
        let (fit, nu) = fit_sweep(kappa, e, &ts, &residuals).unwrap();
        assert!((nu - 0.3).abs() < 0.05, "{nu}");
        assert!(fit.r_squared > 0.9);
    }

    #[test]
    fn sweep_rejects_supercritical_kappa() {
        let family = BoxFamily::new(vec![0.0, 0.0], vec![1.0, 1.0], vec![0.5, 0.5]).unwrap();
        let cfg = SweepConfig {
            inst: model(),
            family,
            t_grid: vec![10.0, 20.0],
            norm: NormSpec::Sup,
            strategy: Strategy::Pruned,
            budget: 1 << 30,
            constant_samples: 10_000,
            seed: 0,
        };
        assert!(matches!(run_sweep(&cfg), Err(Error::Hypothesis(_))));
    }

    #[test]
    fn model_sweep_runs() {
        let cfg = SweepConfig {
            inst: model(),
            family: BoxFamily::constant(&TargetBox::symmetric(&[0.5, 0.5])),
            t_grid: vec![10.0, 20.0, 40.0],
            norm: NormSpec::Sup,
            strategy: Strategy::Pruned,
            budget: 1 << 32,
            constant_samples: 10_000,
            seed: 0,
        };
        let rep = run_sweep(&cfg).unwrap();
        assert_eq!(rep.points[0].count, 113);
        assert!((rep.constant.value - 2.0 * std::f64::consts::PI).abs() < 1e-9);
    }

    #[test]
    fn uniform_degenerate_rows() {
        let base = UniformConfig {
            inst: model(),
            t_grid: vec![5.0, 10.0],
            n_of_t: PowerLaw { scale: 0.0, exponent: 0.0 },
            delta_of_t: PowerLaw { scale: f64::INFINITY, exponent: 0.0 },
            norm: NormSpec::Sup,
            budget: 1 << 32,
        };
        let rep = run_uniform(&base).unwrap();
        assert!(rep.rows.iter().all(|r| r.pass && r.pass_fraction == 1.0));
        let single = UniformConfig { delta_of_t: PowerLaw { scale: 0.1, exponent: 0.0 }, ..base };
        let rep = run_uniform(&single).unwrap();
        assert!(rep.rows.iter().all(|r| r.supmin == Some(0.0) && r.pass));
        assert!((rep.eta_bound - 1.0 / 8.0).abs() < 1e-12);
    }

    #[derive(Serialize, Deserialize, PartialEq, Debug)]
    struct Row {
        seed: u64,
        t: f64,
        count: u64,
    }

    #[test]
    fn records_round_trip() {
        let rows = vec![Row { seed: 1, t: 10.0, count: 113 }, Row { seed: 2, t: 20.0, count: 7 }];
        let mut buf = Vec::new();
        write_records(&rows, &["seed", "t", "count"], RecordFormat::Jsonl, &mut buf).unwrap();
        let back: Vec<Row> = String::from_utf8(buf).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(back, rows);

        let mut csv_buf = Vec::new();
        write_records::<Row, _>(&[], &["seed", "t", "count"], RecordFormat::Csv, &mut csv_buf).unwrap();
        assert_eq!(String::from_utf8(csv_buf).unwrap(), "seed,t,count\n");
        let mut csv_buf = Vec::new();
        write_records(&rows, &["seed", "t", "count"], RecordFormat::Csv, &mut csv_buf).unwrap();
        assert_eq!(String::from_utf8(csv_buf).unwrap(), "seed,t,count\n1,10.0,113\n2,20.0,7\n");
    }
}
