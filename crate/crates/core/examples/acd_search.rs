//! Maximum-divergence search on a Fyelp-shaped schema.

use std::sync::Arc;

use compsplit::protocols::{acd_restart, acd_splits, AcdSearchConfig};
use compsplit::schema::{full_product, AttributeSchema};

fn main() -> compsplit::Result<()> {
    let schema = Arc::new(AttributeSchema::from_shape(&[2, 2, 5, 2])?);
    let full = full_product(&schema);
    let config = AcdSearchConfig {
        t1_restarts: 40,
        eta_threshold: 0.3,
        ..Default::default()
    };

    let first = acd_restart(&full, &config, 0)?;
    let trace: Vec<String> = first.trace.iter().map(|d| format!("{d:.3}")).collect();
    println!("restart 0 trace: {}", trace.join(" -> "));

    let bundle = acd_splits(&full, &config)?;
    println!(
        "{} distinct splits reach eta = {}; best {:.4}, mean {:.4}",
        bundle.len(),
        config.eta_threshold,
        bundle.best_divergence().unwrap_or(f64::NAN),
        bundle.mean_divergence().unwrap_or(f64::NAN)
    );
    if let Some(best) = bundle.splits.first() {
        let held: Vec<String> = best
            .comp_set
            .iter()
            .take(5)
            .map(|c| schema.label(c))
            .collect();
        println!(
            "best split holds out {} combinations, e.g. {}",
            best.comp_set.len(),
            held.join(", ")
        );
    }
    Ok(())
}
