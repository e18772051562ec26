//! Minimum-divergence, random and maximum-divergence splits side by side.

use std::sync::Arc;

use compsplit::protocols::{acd_splits, min_divergence_splits, random_splits, AcdSearchConfig};
use compsplit::schema::{full_product, AttributeSchema};

fn main() -> compsplit::Result<()> {
    for shape in [&[2, 2, 2][..], &[2, 2, 5, 2][..]] {
        let schema = Arc::new(AttributeSchema::from_shape(shape)?);
        let full = full_product(&schema);
        let config = AcdSearchConfig {
            t1_restarts: 30,
            eta_threshold: 0.01,
            ..Default::default()
        };
        let low = min_divergence_splits(&full, &config)?;
        let random = random_splits(&full, 100, 0, 0.5)?;
        let high = acd_splits(&full, &config)?;
        let min = low
            .splits
            .iter()
            .filter_map(|s| s.divergence)
            .fold(f64::INFINITY, f64::min);
        println!(
            "shape {shape:?}: min {min:.4} < random mean {:.4} < max {:.4}",
            random.mean_divergence().unwrap_or(f64::NAN),
            high.best_divergence().unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
