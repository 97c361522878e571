//! Runs the four reranking strategies over one candidate pool.

use ragqa::corpus::QaPair;
use ragqa::embedding::{stub_embed_tokens, StubEmbedder};
use ragqa::rerank::{
    rerank_bm25, rerank_dense, rerank_late_interaction, rerank_seq2seq, Bm25Params, Candidate, RankedContext,
    StubRelevanceScorer,
};

fn show(name: &str, ranked: &[RankedContext]) {
    let row: Vec<String> = ranked.iter().map(|c| format!("{}({:.3})", c.qa.id, c.score)).collect();
    println!("{name:<18} {}", row.join("  "));
}

fn main() -> anyhow::Result<()> {
    let pool = [
        ("c1", "What causes night sweats?", "Infections, hormones or medication.", 0.8),
        ("c2", "Can a fever cause night sweats?", "Yes, fever often brings sweats at night.", 1.1),
        ("c3", "How to treat a cough?", "Rest, fluids and honey.", 0.9),
        ("c4", "Why do I sweat at night with a cough?", "A chest infection can do both.", 1.3),
        ("c5", "Is sweating normal?", "Sweating regulates body heat.", 1.5),
    ];
    let candidates: Vec<Candidate> = pool
        .iter()
        .map(|(id, q, a, d)| Candidate {
            qa: QaPair::new(*id, *q, *a, ""),
            dense_distance: *d,
        })
        .collect();
    let query = "night sweats and fever";

    show("dense-l2", &rerank_dense(&candidates, 3));
    show("bm25", &rerank_bm25(&candidates, query, &Bm25Params::default(), 3, None)?);

    let emb = StubEmbedder::new(32, 3);
    let tokens = emb.token_store(candidates.iter().map(|c| (c.qa.id.as_str(), c.qa.document_text())))?;
    let q = stub_embed_tokens(query, 32, 3);
    show("late-interaction", &rerank_late_interaction(&candidates, &q, &tokens, 3)?);
    show("seq2seq-relevance", &rerank_seq2seq(&candidates, query, &StubRelevanceScorer, 3, 2)?);
    Ok(())
}
