#![allow(dead_code)]

use formlab::sampling::{sample_instance_at, SamplerConfig};
use formlab::{build_quadratic_normal_form, QuadraticSignatureSpec, SystemInstance, SystemSpec, TargetBox};

pub fn quad(p: usize, q: usize, u: usize, v: usize, n: usize, r: usize) -> SystemSpec {
    build_quadratic_normal_form(QuadraticSignatureSpec { p, q, u, v, n, r }).unwrap()
}

pub fn model_spec() -> SystemSpec {
    quad(2, 1, 3, 1, 4, 1)
}

/// Normal forms with n ∈ {3, 4} and r ∈ {1, 2}, covering z- and y-blocks.
pub fn small_specs() -> Vec<SystemSpec> {
    vec![
        quad(1, 1, 2, 1, 3, 1),
        quad(1, 0, 2, 1, 3, 2),
        quad(2, 1, 3, 1, 4, 1),
        quad(1, 1, 2, 2, 4, 1),
        quad(1, 1, 2, 2, 4, 2),
        quad(2, 1, 2, 2, 4, 1),
    ]
}

pub fn random_instance(spec_idx: usize, seed: u64, index: u64) -> SystemInstance {
    let specs = small_specs();
    let spec = &specs[spec_idx % specs.len()];
    sample_instance_at(spec, &SamplerConfig::with_seed(seed), index).unwrap()
}

/// A closed box centred at the value of `v0`, so that counts are usually nonzero.
pub fn box_around(inst: &SystemInstance, v0: &[i64], widths: &[f64]) -> TargetBox {
    let v: Vec<f64> = v0.iter().map(|&x| x as f64).collect();
    let centre = inst.eval(&v).unwrap();
    TargetBox::closed(centre.iter().zip(widths).map(|(c, w)| (c - w / 2.0, c + w / 2.0)).collect())
}
