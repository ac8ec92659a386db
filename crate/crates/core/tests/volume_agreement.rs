use formlab::sampling::{sample_instance_at, SamplerConfig};
use formlab::volume::{main_term_constant, region_mc_volume};
use formlab::{build_quadratic_normal_form, NormSpec, QuadraticSignatureSpec, TargetBox};

#[test]
fn constant_matches_region_volume_on_random_instances() {
    let spec = build_quadratic_normal_form(QuadraticSignatureSpec { p: 2, q: 1, u: 3, v: 1, n: 4, r: 1 }).unwrap();
    let cfg = SamplerConfig::with_seed(2024);
    let target = TargetBox::symmetric(&[0.5, 0.5]);
    let t = 2000.0;
    for i in 0..10 {
        let inst = sample_instance_at(&spec, &cfg, i).unwrap();
        let c = main_term_constant(&inst, NormSpec::Sup, 200_000, i).unwrap();
        let vol = region_mc_volume(&inst, &target, t, NormSpec::Sup, 400_000, 100 + i).unwrap();
        let scale = target.measure() * t.powi(spec.main_exponent() as i32);
        let ratio = vol.scaled(1.0 / scale);
        let z = (c.value - ratio.value) / (c.std_error.powi(2) + ratio.std_error.powi(2)).sqrt();
        eprintln!("{i}: c = {:.5} ± {:.5}, vol/|I|T = {:.5} ± {:.5}, z = {z:.2}", c.value, c.std_error, ratio.value, ratio.std_error);
        assert!(z.abs() <= 3.0, "instance {i}: z = {z}");
    }
}
