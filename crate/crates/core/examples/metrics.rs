//! Scores a few generated answers against references.

use ragqa::embedding::StubEmbedder;
use ragqa::metrics::{aggregate, evaluate_pair, meteor_breakdown, tokenize, MeteorParams};

fn main() -> anyhow::Result<()> {
    let cases = [
        ("e1", "the cat sat", "the cat sat down"),
        ("e2", "Drink fluids and rest.", "Rest and drink plenty of fluids."),
        ("e3", "", "See a doctor if it persists."),
    ];
    let embedder = StubEmbedder::new(64, 0);
    let params = MeteorParams::default();
    let mut rows = Vec::new();
    for (id, generated, reference) in cases {
        let row = evaluate_pair(id, generated, reference, &embedder, &params)?;
        println!(
            "{id}: bleu1 {:.4} rouge1 {:.4} bertscore {} meteor {:.4} {:?}",
            row.bleu1,
            row.rouge1,
            row.bertscore_p.map_or("n/a".to_string(), |v| format!("{v:.4}")),
            row.meteor,
            row.flags
        );
        rows.push(row);
    }

    let b = meteor_breakdown(&tokenize(cases[1].1).tokens, &tokenize(cases[1].2).tokens, &params)?;
    println!("e2 alignment {:?}: {} matches in {} chunks", b.alignment, b.matches, b.chunks);

    let s = aggregate(&rows)?;
    println!("mean over {} examples ({} degenerate): bleu1 {:.4}", s.examples, s.degenerate, s.bleu1);
    Ok(())
}
