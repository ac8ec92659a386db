//! One function per subcommand. Each builds its inputs from [`Settings`],
//! runs the library call and hands the result to [`Output`].

use std::io::Write;
use std::time::Instant;

use formlab::discrepancy::{moment_growth, second_moment, DiscrepancyParams, MIN_TRIALS};
use formlab::enumeration::{count, BoxFamily, CountRequest};
use formlab::experiments::{
    emit, run_sweep, run_uniform, write_records, PowerLaw, RecordFormat, SweepConfig, UniformConfig, SCHEMA_VERSION,
};
use formlab::sampling::{derive_seed, sample_instance_at, SamplerConfig};
use formlab::solver::{find_solution, smallest_radius, ApproximationQuery};
use formlab::volume::{error_exponent, main_term_constant, region_mc_volume, sandwich_volume, VolumeEstimate};
use formlab::{validate_spec, Error, Result, SystemSpec};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{read_json, signature_spec, Settings};

const DEFAULT_SAMPLES: u64 = 1_000_000;
const DISCREPANCY_SAMPLES: u64 = 200_000;

pub fn dispatch(command: &str, s: &Settings) -> Result<()> {
    let out = Output { command, settings: s, start: Instant::now() };
    match command {
        "normal-form" => normal_form(s, &out),
        "sample" => sample(s, &out),
        "count" => count_cmd(s, &out),
        "volume" => volume(s, &out),
        "constant" => constant(s, &out),
        "sweep" => sweep(s, &out),
        "discrepancy" => discrepancy(s, &out),
        "uniform" => uniform(s, &out),
        "solve" => solve(s, &out),
        other => Err(Error::InvalidArgument(format!("unknown experiment {other:?}"))),
    }
}

#[derive(Serialize)]
struct Envelope<'a> {
    schema_version: u32,
    command: &'a str,
    #[serde(flatten)]
    body: Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    wall_time_s: Option<f64>,
}

struct Output<'a> {
    command: &'a str,
    settings: &'a Settings,
    start: Instant,
}

impl Output<'_> {
    fn json<T: Serialize>(&self, body: &T) -> Result<()> {
        let envelope = Envelope {
            schema_version: SCHEMA_VERSION,
            command: self.command,
            body: serde_json::to_value(body)?,
            wall_time_s: self.settings.timing.then(|| self.start.elapsed().as_secs_f64()),
        };
        let mut line = serde_json::to_string(&envelope)?;
        line.push('\n');
        match &self.settings.output {
            Some(path) => std::fs::write(path, line)?,
            None => std::io::stdout().lock().write_all(line.as_bytes())?,
        }
        Ok(())
    }

    /// The JSON report, or `records` alone when a record format is chosen
    /// (or implied by `--output`, as `default`).
    fn records<R: Serialize, T: Serialize>(&self, records: &[R], header: &[&str], body: &T, default: RecordFormat) -> Result<()> {
        match self.settings.format(default)? {
            None => self.json(body),
            Some(format) => match &self.settings.output {
                Some(path) => emit(records, header, format, path),
                None => write_records(records, header, format, std::io::stdout().lock()),
            },
        }
    }
}

fn normal_form(s: &Settings, out: &Output) -> Result<()> {
    let spec: SystemSpec = match (&s.spec, &s.signature) {
        (Some(path), None) => read_json(path)?,
        (None, Some(sig)) => signature_spec(sig)?,
        _ => return Err(Error::InvalidArgument("give exactly one of --spec, --signature".into())),
    };
    let report = validate_spec(&spec);
    let valid = report.is_valid();
    out.json(&json!({
        "spec": spec,
        "valid": valid,
        "validation": report,
        "main_exponent": spec.main_exponent(),
        "error_exponent": error_exponent(&spec),
    }))?;
    if !valid {
        let first = report.failures().next().map(|c| c.name).unwrap_or_default();
        return Err(Error::InvalidSpec(format!("failed check {first}")));
    }
    Ok(())
}

fn sample(s: &Settings, out: &Output) -> Result<()> {
    let seed = s.require_seed()?;
    let spec = s.spec()?;
    let cfg = SamplerConfig::with_seed(seed);
    let n = s.instances.unwrap_or(1);
    let instances = (0..n as u64).map(|i| sample_instance_at(&spec, &cfg, i)).collect::<Result<Vec<_>>>()?;
    if s.format(RecordFormat::Jsonl)? == Some(RecordFormat::Csv) {
        return Err(Error::InvalidArgument("instances cannot be written as CSV".into()));
    }
    out.records(&instances, &[], &json!({ "seed": seed, "instances": instances }), RecordFormat::Jsonl)
}

fn count_cmd(s: &Settings, out: &Output) -> Result<()> {
    let inst = s.instance()?;
    let target = s.target(inst.r() + 1)?;
    let norm = s.norm(inst.spec())?;
    let mut req = CountRequest::new(inst.clone(), target, s.t()?).norm(norm).strategy(s.strategy()?).budget(s.budget());
    // with a seed, also estimate c_{F,M} so the report carries the main term
    if let Some(seed) = s.seed {
        req = req.constant(main_term_constant(&inst, norm, s.samples(DEFAULT_SAMPLES), seed)?.value);
    }
    out.json(&count(&req)?)
}

fn volume(s: &Settings, out: &Output) -> Result<()> {
    let seed = s.require_seed()?;
    let inst = s.instance()?;
    let target = s.target(inst.r() + 1)?;
    let norm = s.norm(inst.spec())?;
    let (t, samples) = (s.t()?, s.samples(DEFAULT_SAMPLES));
    match s.method.as_deref().unwrap_or("mc") {
        "mc" => {
            let est = region_mc_volume(&inst, &target, t, norm, samples, seed)?;
            out.json(&estimate_body(t, &est))
        }
        "j" => {
            let c = main_term_constant(&inst, norm, samples, seed)?;
            let scale = target.measure() * t.powi(inst.spec().main_exponent() as i32);
            out.json(&estimate_body(t, &c.scaled(scale)))
        }
        "sandwich" => {
            let delta = s.delta.ok_or_else(|| Error::InvalidArgument("--method sandwich needs --delta".into()))?;
            let sw = sandwich_volume(&inst, &target, t, delta, norm, samples, seed)?;
            out.json(&json!({ "t": t, "delta": delta, "lower": sw.lower, "sharp": sw.sharp, "upper": sw.upper }))
        }
        other => Err(Error::InvalidArgument(format!("unknown method {other:?} (mc, j, sandwich)"))),
    }
}

fn estimate_body(t: f64, est: &VolumeEstimate) -> Value {
    json!({ "t": t, "method": est.method, "value": est.value, "std_error": est.std_error, "samples": est.samples })
}

fn constant(s: &Settings, out: &Output) -> Result<()> {
    let seed = s.require_seed()?;
    let inst = s.instance()?;
    let norm = s.norm(inst.spec())?;
    let samples = s.samples(DEFAULT_SAMPLES);
    let est = match s.method.as_deref().unwrap_or("j") {
        "j" => main_term_constant(&inst, norm, samples, seed)?,
        "mc" => {
            let target = s.target(inst.r() + 1)?;
            let t = s.t()?;
            let vol = region_mc_volume(&inst, &target, t, norm, samples, seed)?;
            vol.scaled(1.0 / (target.measure() * t.powi(inst.spec().main_exponent() as i32)))
        }
        other => return Err(Error::InvalidArgument(format!("unknown method {other:?} (j, mc)"))),
    };
    out.json(&json!({
        "method": est.method,
        "value": est.value,
        "std_error": est.std_error,
        "samples": est.samples,
        "error_exponent": error_exponent(inst.spec()),
    }))
}

fn sweep(s: &Settings, out: &Output) -> Result<()> {
    let seed = s.require_seed()?;
    let inst = s.instance()?;
    let base = s.target(inst.r() + 1)?;
    let constant = BoxFamily::constant(&base);
    let exponents = s.kappa.clone().unwrap_or_else(|| vec![0.0; base.dim()]);
    let family = BoxFamily::new(constant.center, constant.widths, exponents)?;
    let cfg = SweepConfig {
        norm: s.norm(inst.spec())?,
        inst,
        family,
        t_grid: s.t_grid()?,
        strategy: s.strategy()?,
        budget: s.budget(),
        constant_samples: s.samples(DEFAULT_SAMPLES),
        seed,
    };
    let report = run_sweep(&cfg)?;
    out.records(&report.points, &["t", "count", "main_term", "residual", "ratio", "nodes"], &report, RecordFormat::Csv)
}

#[derive(Serialize)]
struct DiscrepancyRow {
    seed: u64,
    trial: usize,
    t: f64,
    count: u64,
    volume: f64,
    volume_std_error: f64,
    d: f64,
}

fn discrepancy(s: &Settings, out: &Output) -> Result<()> {
    let seed = s.require_seed()?;
    let spec = s.spec()?;
    let target = s.target(spec.r + 1)?;
    let ts = match (&s.t_grid, s.t) {
        (Some(_), _) => s.t_grid()?,
        (None, Some(t)) => vec![t],
        (None, None) => return Err(Error::InvalidArgument("--t or --t-grid is required".into())),
    };
    let trials = s.trials.unwrap_or(MIN_TRIALS);
    let params = DiscrepancyParams {
        norm: s.norm(&spec)?,
        volume_samples: s.samples(DISCREPANCY_SAMPLES),
        seed: derive_seed(seed, 1),
        budget: s.budget(),
        delta: s.delta,
    };
    let cfg = SamplerConfig::with_seed(seed);
    let moments = ts.iter().map(|&t| second_moment(&cfg, &spec, &target, t, trials, &params)).collect::<Result<Vec<_>>>()?;
    let growth = moments
        .windows(2)
        .map(|w| moment_growth(&w[0], &w[1], 2000, 0.9, derive_seed(seed, 2)))
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<DiscrepancyRow> = moments
        .iter()
        .flat_map(|m| {
            m.reports.iter().enumerate().map(move |(trial, r)| DiscrepancyRow {
                seed,
                trial,
                t: m.t,
                count: r.count,
                volume: r.volume,
                volume_std_error: r.volume_std_error,
                d: r.d,
            })
        })
        .collect();
    let summary: Vec<Value> = moments.iter().map(|m| json!({ "t": m.t, "trials": m.trials, "mean": m.mean })).collect();
    out.records(
        &rows,
        &["seed", "trial", "t", "count", "volume", "volume_std_error", "d"],
        &json!({ "seed": seed, "trials": trials, "moments": summary, "growth": growth, "rows": rows }),
        RecordFormat::Csv,
    )
}

fn uniform(s: &Settings, out: &Output) -> Result<()> {
    let inst = s.instance()?;
    let cfg = UniformConfig {
        norm: s.norm(inst.spec())?,
        inst,
        t_grid: s.t_grid()?,
        n_of_t: PowerLaw { scale: s.n_scale.unwrap_or(1.0), exponent: s.n_exponent.unwrap_or(0.0) },
        delta_of_t: PowerLaw { scale: s.delta_scale.unwrap_or(1.0), exponent: -s.delta_exponent.unwrap_or(0.0) },
        budget: s.budget(),
    };
    let report = run_uniform(&cfg)?;
    out.records(
        &report.rows,
        &["t", "n_radius", "delta", "grid_step", "supmin", "discretization_bound", "pass_fraction", "pass"],
        &report,
        RecordFormat::Csv,
    )
}

fn solve(s: &Settings, out: &Output) -> Result<()> {
    let inst = s.instance()?;
    let norm = s.norm(inst.spec())?;
    let xi = s.xi.clone().ok_or_else(|| Error::InvalidArgument("--xi is required".into()))?;
    let eps = s.eps.clone().ok_or_else(|| Error::InvalidArgument("--eps is required".into()))?;
    let budget = s.budget();
    if let Some(t_max) = s.t_max {
        ApproximationQuery { inst: inst.clone(), xi: xi.clone(), eps: eps.clone(), t: 1.0, norm, budget }.validate()?;
        let found = smallest_radius(&inst, &xi, &eps, t_max, norm, budget)?;
        return out.json(&json!({
            "xi": xi,
            "eps": eps,
            "t_max": t_max,
            "budget": budget,
            "found": found.is_some(),
            "t_star": found.as_ref().map(|r| r.t_star),
            "probes": found.as_ref().map(|r| r.probes),
            "witness": found.map(|r| r.witness),
        }));
    }
    let t = s.t()?;
    let q = ApproximationQuery { inst, xi, eps, t, norm, budget };
    q.validate()?;
    let witness = find_solution(&q)?;
    out.json(&json!({
        "xi": q.xi,
        "eps": q.eps,
        "t": t,
        "budget": budget,
        "found": witness.is_some(),
        "witness": witness,
    }))
}
