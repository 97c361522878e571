//! Exact nearest-neighbour search over stub embeddings.

use ragqa::embedding::{stub_embed, StubEmbedder};
use ragqa::index::build_index;

fn main() -> anyhow::Result<()> {
    let docs = [
        ("d1", "how long does a migraine last"),
        ("d2", "treatment options for asthma in children"),
        ("d3", "is ibuprofen safe during pregnancy"),
        ("d4", "migraine triggers and prevention"),
        ("d5", "symptoms of seasonal allergies"),
    ];
    let store = StubEmbedder::new(64, 1).sentence_store(docs.iter().map(|(id, t)| (*id, t.to_string())))?;
    let index = build_index(&store)?;
    println!("indexed {} vectors of dim {}", index.len(), index.dim());

    // an indexed text is its own nearest neighbour at distance zero
    for hit in index.search(&stub_embed(docs[3].1, 64, 1), 3)? {
        println!("{:>4}  squared L2 {:.6}", hit.id, hit.distance);
    }
    Ok(())
}
