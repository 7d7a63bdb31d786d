use bovw::synth::generate_synthetic_dataset;

#[test]
fn render_samples() {
    let out = std::path::Path::new("/tmp/synth_sample");
    let _ = std::fs::remove_dir_all(out);
    generate_synthetic_dataset(out, 4, std::f64::consts::PI, 0.03, 20260811).unwrap();
}
