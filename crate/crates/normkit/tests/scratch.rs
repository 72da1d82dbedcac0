use normkit::harness::{default_copy_config, p_sweep};
use normkit::normalizers::NormalizerKind;

#[test]
#[ignore]
fn probe_long_sweep() {
    let mut config = default_copy_config(Some(NormalizerKind::rms_norm()));
    config.seeds = vec![1, 2];
    config.steps = 6000;
    let p_values = [0.0625, 0.3, 1.0];
    let start = std::time::Instant::now();
    let sweep = p_sweep(&config, &p_values).unwrap();
    for e in &sweep {
        println!("p {:>6}: k {:>2} median {:.6} finals {:?}",
            e.p, e.subset_len, e.median_final_loss,
            e.runs.iter().map(|r| (r.final_loss * 1e5).round() / 1e5).collect::<Vec<_>>());
    }
    let meds: Vec<f64> = sweep.iter().map(|e| e.median_final_loss).collect();
    let lo = meds.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = meds.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    println!("band rel {:.4}, took {:.0}s", (hi - lo) / lo, start.elapsed().as_secs_f64());
}
