//! Hold-Out bundles for the four benchmark dataset shapes.

use std::sync::Arc;

use compsplit::protocols::holdout_splits;
use compsplit::schema::{full_product, AttributeSchema};

fn main() -> compsplit::Result<()> {
    for (name, shape) in [
        ("Fyelp", &[2, 2, 5, 2][..]),
        ("Amazon", &[2, 6][..]),
        ("YELP", &[2, 2, 2][..]),
        ("Mixture", &[2, 4][..]),
    ] {
        let schema = Arc::new(AttributeSchema::from_shape(shape)?);
        let bundle = holdout_splits(&full_product(&schema), 1, 0.5)?;
        println!(
            "{name:8} shape {shape:?}: {} splits, mean divergence {:.4}",
            bundle.len(),
            bundle.mean_divergence().unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
