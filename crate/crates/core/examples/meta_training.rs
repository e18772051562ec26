//! Baseline and meta trainers on the synthetic scenario, in an easy and a
//! noisy short-training regime.

use std::sync::Arc;

use compsplit::meta_trainer::{run_experiment, SyntheticScenario, TrainConfig};
use compsplit::protocols::{acd_splits, AcdSearchConfig};
use compsplit::schema::{full_product, AttributeSchema};

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    0.5 * (v[(n - 1) / 2] + v[n / 2])
}

fn main() -> compsplit::Result<()> {
    let schema = Arc::new(AttributeSchema::from_shape(&[2, 2, 2])?);
    let full = full_product(&schema);
    for (regime, noise, steps, lambda) in [("easy", 0.1, 200, 0.01), ("noisy", 0.6, 20, 1.0)] {
        let (mut base, mut meta) = (Vec::new(), Vec::new());
        for seed in 0..20 {
            let search = AcdSearchConfig {
                t1_restarts: 20,
                eta_threshold: 0.01,
                rng_seed: seed,
                ..Default::default()
            };
            let split = acd_splits(&full, &search)?.splits.remove(0);
            let mut scenario = SyntheticScenario::new(split);
            scenario.noise = noise;
            let config = TrainConfig {
                steps,
                lambda_weight: lambda,
                seed,
                ..TrainConfig::default()
            };
            let report = run_experiment(&scenario, &config)?;
            base.push(report.baseline.comp_accuracy);
            meta.push(report.meta.comp_accuracy);
        }
        println!(
            "{regime:5}: median comp accuracy baseline {:.2}, meta {:.2}",
            median(base),
            median(meta)
        );
    }
    Ok(())
}
