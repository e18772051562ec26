//! Pseudo-compositional batch for a two-record training batch.

use std::sync::Arc;

use compsplit::sampler::{pcomp_candidates, sample_pcomp_batch, Batch, LabeledRecord};
use compsplit::schema::{full_product, AspectDef, AttributeSchema};

fn main() -> compsplit::Result<()> {
    let schema = Arc::new(AttributeSchema::new(vec![
        AspectDef::new("sentiment", ["positive", "negative"]),
        AspectDef::new("topic", ["sport", "movie"]),
        AspectDef::new("tense", ["past", "present"]),
    ])?);
    let rec = |labels: [&str; 3], text: &str| -> compsplit::Result<LabeledRecord> {
        Ok(LabeledRecord::new(
            schema.combination(&labels)?,
            text.to_string(),
        ))
    };
    let train = Batch::new(
        schema.clone(),
        vec![
            rec(["positive", "sport", "past"], "we won the final last night")?,
            rec(
                ["negative", "movie", "present"],
                "this film drags on and on",
            )?,
        ],
    )?;

    let candidates = pcomp_candidates(&train.combinations());
    let names: Vec<String> = candidates.iter().map(|c| schema.label(c)).collect();
    println!(
        "{} admissible combinations: {}",
        candidates.len(),
        names.join(", ")
    );

    let pool: Vec<LabeledRecord> = full_product(&schema)
        .iter()
        .map(|c| LabeledRecord::new(c.clone(), format!("a text about {}", schema.label(c))))
        .collect();
    let batch = sample_pcomp_batch(&train, &pool, 2, 7)?;
    for r in batch.records() {
        println!("pseudo-comp: {} | {}", schema.label(&r.combination), r.text);
    }
    Ok(())
}
