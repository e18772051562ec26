//! Benchmark averages and compositional gaps from per-cell accuracies.

use compsplit::metrics::{aggregate, summary_row, ProtocolScores, SUMMARY_HEADER};
use compsplit::schema::Protocol;

fn main() -> compsplit::Result<()> {
    // accuracy, perplexity pairs: original id, hold-out id, hold-out comp, acd id, acd comp
    let rows: [(&str, [(f64, f64); 5]); 3] = [
        (
            "CTRL",
            [
                (79.10, 54.17),
                (78.89, 51.20),
                (75.09, 51.22),
                (77.83, 51.71),
                (69.96, 51.28),
            ],
        ),
        (
            "Con.Prefix",
            [
                (83.99, 79.29),
                (83.75, 80.49),
                (80.36, 87.19),
                (81.15, 80.71),
                (69.84, 83.90),
            ],
        ),
        (
            "DCG",
            [
                (79.93, 56.37),
                (79.72, 62.05),
                (76.66, 64.40),
                (78.43, 57.97),
                (67.7, 61.11),
            ],
        ),
    ];
    println!("{SUMMARY_HEADER}");
    for (name, c) in rows {
        let original = ProtocolScores::original(c[0].0, c[0].1)?;
        let holdout = ProtocolScores::new(Protocol::HoldOut, c[1].0, c[1].1, c[2].0, c[2].1)?;
        let acd = ProtocolScores::new(Protocol::Acd, c[3].0, c[3].1, c[4].0, c[4].1)?;
        let summary = aggregate(&original, &holdout, &acd)?;
        println!("{}", summary_row(name, &original, &holdout, &acd, &summary));
    }
    Ok(())
}
