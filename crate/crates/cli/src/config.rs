//! Settings shared by every subcommand. Each one can come from a TOML or
//! JSON config file (keys are the flag names with `_` for `-`) or from a
//! flag; flags win.

use std::path::{Path, PathBuf};

use clap::Args;
use formlab::enumeration::{Strategy, DEFAULT_BUDGET};
use formlab::experiments::RecordFormat;
use formlab::sampling::{sample_instance, SamplerConfig};
use formlab::{build_quadratic_normal_form, Error, NormSpec, QuadraticSignatureSpec, Result, SystemInstance, SystemSpec, TargetBox};
use serde::Deserialize;

#[derive(Args, Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    /// Experiment to run (only read from config files, by `formlab run`).
    #[arg(skip)]
    pub experiment: Option<String>,

    /// JSON file with a system spec; the instance defaults to the identity.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// JSON file with a full instance (spec, lambda, g1, g2).
    #[arg(long)]
    pub instance: Option<PathBuf>,
    /// Quadratic normal form from its signature: p,q,u,v,n,r.
    #[arg(long, value_delimiter = ',')]
    pub signature: Option<Vec<usize>>,
    /// Replace the identity instance by a sampled one with this seed.
    #[arg(long)]
    pub instance_seed: Option<u64>,

    #[arg(long)]
    pub seed: Option<u64>,
    /// Target box as a0,b0,a1,b1,…
    #[arg(long = "box", value_delimiter = ',', allow_hyphen_values = true)]
    #[serde(rename = "box")]
    pub target: Option<Vec<f64>>,
    /// Shrinking exponents κ_j of the box family I_t (one per interval).
    #[arg(long, value_delimiter = ',')]
    pub kappa: Option<Vec<f64>>,
    /// Radius t (alias --T).
    #[arg(long, visible_alias = "T")]
    pub t: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub t_grid: Option<Vec<f64>>,
    /// sup, l2, ld or ld:<d>
    #[arg(long)]
    pub norm: Option<String>,
    /// naive or pruned
    #[arg(long)]
    pub strategy: Option<String>,
    #[arg(long)]
    pub budget: Option<u64>,
    #[arg(long)]
    pub samples: Option<u64>,
    /// mc, j or sandwich
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// Number of instances to sample.
    #[arg(long = "count")]
    #[serde(alias = "count")]
    pub instances: Option<usize>,

    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub xi: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub eps: Option<Vec<f64>>,
    /// Search for the least radius up to this bound instead of using --t.
    #[arg(long)]
    pub t_max: Option<u64>,

    /// N(t) = n_scale · t^n_exponent
    #[arg(long)]
    pub n_scale: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub n_exponent: Option<f64>,
    /// δ(t) = delta_scale · t^(−delta_exponent); "inf" disables the threshold.
    #[arg(long)]
    pub delta_scale: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub delta_exponent: Option<f64>,

    /// Write records (csv/jsonl) or the report (json) to this file.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// json, jsonl or csv
    #[arg(long)]
    pub format: Option<String>,
    #[arg(long)]
    pub threads: Option<usize>,
    /// Include wall-clock time in reports (makes output non-reproducible).
    #[arg(long)]
    #[serde(default)]
    pub timing: bool,
}

macro_rules! overlay {
    ($flags:ident, $file:ident; $($field:ident),*) => {
        Settings {
            $($field: $flags.$field.or($file.$field),)*
            timing: $flags.timing || $file.timing,
        }
    };
}

impl Settings {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let parsed = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))
        } else {
            toml::from_str(&text).map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))
        }?;
        Ok(parsed)
    }

    /// `self` (flags) over `file`.
    pub fn over(self, file: Settings) -> Settings {
        let flags = self;
        overlay!(flags, file; experiment, spec, instance, signature, instance_seed, seed, target, kappa, t, t_grid,
            norm, strategy, budget, samples, method, delta, trials, instances, xi, eps, t_max, n_scale, n_exponent,
            delta_scale, delta_exponent, output, format, threads)
    }

    pub fn require_seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| Error::InvalidArgument("this command is randomized: --seed is required".into()))
    }

    pub fn spec(&self) -> Result<SystemSpec> {
        let sources = self.spec.is_some() as u8 + self.instance.is_some() as u8 + self.signature.is_some() as u8;
        if sources != 1 {
            return Err(Error::InvalidArgument("give exactly one of --spec, --instance, --signature".into()));
        }
        if let Some(path) = &self.spec {
            let spec: SystemSpec = read_json(path)?;
            return spec.checked();
        }
        if let Some(path) = &self.instance {
            let inst: SystemInstance = read_json(path)?;
            return Ok(inst.spec().clone());
        }
        signature_spec(self.signature.as_deref().unwrap_or_default())
    }

    pub fn instance(&self) -> Result<SystemInstance> {
        if let Some(path) = &self.instance {
            if self.instance_seed.is_some() {
                return Err(Error::InvalidArgument("--instance and --instance-seed are exclusive".into()));
            }
            return read_json(path);
        }
        let spec = self.spec()?;
        match self.instance_seed {
            Some(seed) => sample_instance(&spec, &SamplerConfig::with_seed(seed)),
            None => SystemInstance::identity(spec),
        }
    }

    pub fn target(&self, dim: usize) -> Result<TargetBox> {
        let flat = self.target.as_ref().ok_or_else(|| Error::InvalidArgument("--box is required".into()))?;
        if flat.len() != 2 * dim {
            return Err(Error::InvalidArgument(format!("--box needs {} numbers, got {}", 2 * dim, flat.len())));
        }
        Ok(TargetBox::closed(flat.chunks(2).map(|c| (c[0], c[1])).collect()))
    }

    pub fn t(&self) -> Result<f64> {
        self.t.ok_or_else(|| Error::InvalidArgument("--t is required".into()))
    }

    pub fn t_grid(&self) -> Result<Vec<f64>> {
        match &self.t_grid {
            Some(g) if !g.is_empty() => Ok(g.clone()),
            _ => Err(Error::InvalidArgument("--t-grid is required and must be nonempty".into())),
        }
    }

    pub fn norm(&self, spec: &SystemSpec) -> Result<NormSpec> {
        NormSpec::parse(self.norm.as_deref().unwrap_or("sup"), spec.d)
    }

    pub fn strategy(&self) -> Result<Strategy> {
        self.strategy.as_deref().unwrap_or("pruned").parse()
    }

    pub fn budget(&self) -> u64 {
        self.budget.unwrap_or(DEFAULT_BUDGET)
    }

    pub fn samples(&self, default: u64) -> u64 {
        self.samples.unwrap_or(default)
    }

    pub fn format(&self, default: RecordFormat) -> Result<Option<RecordFormat>> {
        match self.format.as_deref() {
            None => Ok(self.output.as_ref().map(|_| default)),
            Some("json") => Ok(None),
            Some(other) => other.parse().map(Some),
        }
    }
}

pub fn signature_spec(sig: &[usize]) -> Result<SystemSpec> {
    match *sig {
        [p, q, u, v, n, r] => build_quadratic_normal_form(QuadraticSignatureSpec { p, q, u, v, n, r }),
        _ => Err(Error::InvalidArgument("--signature takes six integers p,q,u,v,n,r".into())),
    }
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))
}
