use explore_core::grid::average_rate_density;
use explore_core::sample_reduce;
use explore_core::simuser::{generate_target_in, synth_dataset, Placement};
use explore_core::{SizeClass, SynthKind};

/// Kolmogorov-Smirnov distance of a sample from U[0, 100].
fn ks_uniform(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, x)| {
            let cdf = x / 100.0;
            (cdf - i as f64 / n).abs().max(((i + 1) as f64 / n - cdf).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn uniform_synth_passes_ks() {
    let n = 20_000;
    // Critical value at the 1% level.
    let critical = 1.63 / (n as f64).sqrt();
    for seed in 0..5 {
        let data = synth_dataset(SynthKind::Uniform, n, 3, seed).unwrap().dataset;
        for j in 0..3 {
            let d = ks_uniform(data.column(j));
            assert!(d < critical, "seed {seed} dim {j}: D = {d}");
        }
    }
}

#[test]
fn hybrid_keeps_first_dimension_uniform() {
    let n = 20_000;
    let data = synth_dataset(SynthKind::Hybrid, n, 2, 1).unwrap().dataset;
    assert!(ks_uniform(data.column(0)) < 1.63 / (n as f64).sqrt());
    assert!(ks_uniform(data.column(1)) > 0.05);
}

#[test]
fn reduction_size_is_binomial() {
    let n = 50_000;
    let data = synth_dataset(SynthKind::Uniform, n, 2, 7).unwrap().dataset;
    let (mean, sd) = (0.1 * n as f64, (n as f64 * 0.1 * 0.9).sqrt());
    for seed in 0..10 {
        let kept = sample_reduce(&data, 0.1, seed).unwrap().len() as f64;
        assert!((kept - mean).abs() < 4.0 * sd, "seed {seed}: kept {kept}");
    }
}

#[test]
fn average_rate_density_values() {
    assert_eq!(average_rate_density(0, 2), 0.0);
    let d = average_rate_density(10_201, 2);
    assert!((d - (1.0 - (-1.0f64).exp())).abs() < 1e-12);
    assert!(average_rate_density(100_000, 2) > 0.9999);
    assert!(average_rate_density(1000, 3) < 0.001);
}

#[test]
fn dense_and_sparse_targets_follow_density() {
    let data = synth_dataset(SynthKind::Skewed, 50_000, 2, 3).unwrap().dataset;
    let avg = data.len() as f64 / 10_000.0;
    for seed in 0..5 {
        let dense = generate_target_in(&data, 1, SizeClass::Medium, Placement::Dense, seed).unwrap();
        let area = &dense.regions[0];
        assert!(data.count_in(area) as f64 / area.volume() > avg);
        let sparse = generate_target_in(&data, 1, SizeClass::Medium, Placement::Sparse { min_tuples: 30 }, seed).unwrap();
        let area = &sparse.regions[0];
        assert!(data.count_in(area) >= 30);
        assert!((data.count_in(area) as f64 / area.volume()) < avg);
    }
}
