//! Dist-3 under both aggregation modes.

use compsplit::metrics::{dist_3, whitespace_tokenize, DistinctMode};

fn main() -> compsplit::Result<()> {
    let corpus = [
        "The food was great and the staff was friendly",
        "the food was great and the service was slow",
        "I loved the movie",
        "so so so so so",
    ];
    let texts: Vec<Vec<String>> = corpus.iter().map(|t| whitespace_tokenize(t)).collect();
    println!("pooled   {:.4}", dist_3(&texts, DistinctMode::Pooled)?);
    println!("per-text {:.4}", dist_3(&texts, DistinctMode::PerTextMean)?);
    Ok(())
}
