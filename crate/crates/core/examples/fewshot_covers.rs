//! Minimal attribute covers used as Few-Shot training sets.

use std::sync::Arc;

use compsplit::protocols::{fewshot_splits, minimal_cover_count, AcdSearchConfig};
use compsplit::schema::{full_product, AttributeSchema};

fn main() -> compsplit::Result<()> {
    for shape in [&[2, 2][..], &[2, 2, 2][..], &[2, 6][..], &[2, 2, 5, 2][..]] {
        let schema = Arc::new(AttributeSchema::from_shape(shape)?);
        let bundle = fewshot_splits(&full_product(&schema), &AcdSearchConfig::default())?;
        let example = &bundle.splits[0];
        let labels: Vec<String> = example.id_set.iter().map(|c| schema.label(c)).collect();
        println!(
            "shape {shape:?}: {} minimal covers, {} kept at divergence {:.4}; e.g. {{{}}}",
            minimal_cover_count(&schema),
            bundle.len(),
            bundle.best_divergence().unwrap_or(f64::NAN),
            labels.join(", ")
        );
    }
    Ok(())
}
