//! Dataset file to schema, split, record allocation and manifest.

use std::sync::Arc;

use compsplit::io::{read_dataset, write_bundle, write_dataset};
use compsplit::protocols::{acd_splits, AcdSearchConfig};
use compsplit::sampler::{allocate_records, LabeledRecord};
use compsplit::schema::{full_product, AspectDef, AttributeSchema};

fn main() -> compsplit::Result<()> {
    let dir = std::env::temp_dir().join("compsplit-dataset-pipeline");
    std::fs::create_dir_all(&dir).map_err(|source| compsplit::Error::Io {
        path: dir.display().to_string(),
        source,
    })?;

    let schema = Arc::new(AttributeSchema::new(vec![
        AspectDef::new("sentiment", ["negative", "positive"]),
        AspectDef::new("pronoun", ["plural", "singular"]),
        AspectDef::new("tense", ["past", "present"]),
    ])?);
    let records: Vec<LabeledRecord> = full_product(&schema)
        .iter()
        .flat_map(|c| (0..25).map(move |i| LabeledRecord::new(c.clone(), format!("review {i}"))))
        .collect();
    let data_path = dir.join("reviews.jsonl");
    write_dataset(&data_path, &schema, &records)?;

    let dataset = read_dataset(&data_path)?;
    println!(
        "inferred {} aspects, {} combinations, {} records",
        dataset.schema.num_aspects(),
        dataset.schema.product_size(),
        dataset.records.len()
    );

    let config = AcdSearchConfig {
        t1_restarts: 10,
        eta_threshold: 0.1,
        ..Default::default()
    };
    let bundle = acd_splits(&full_product(&dataset.schema), &config)?;
    let split = &bundle.splits[0];
    let alloc = allocate_records(&dataset.records, split)?;
    println!(
        "split at divergence {:.4}: {} train records, {} compositional test records",
        split.divergence.unwrap_or(f64::NAN),
        alloc.train.len(),
        alloc.comp_test.len()
    );
    let paths = write_bundle(&dir.join("manifests"), &bundle)?;
    println!("wrote {} manifests under {}", paths.len(), dir.display());
    Ok(())
}
