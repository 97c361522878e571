//! Writes sentence and token embeddings to disk and reads them back. The
//! sentence vectors here are mean-pooled token rows, which is how a model
//! bridge would produce them.

use ragqa::embedding::{
    cosine, file_checksum, mean_pool, read_sentence_store, read_token_store, write_sentence_store, write_token_store,
    SentenceEmbedding, SentenceStore, StubEmbedder,
};

fn main() -> anyhow::Result<()> {
    let texts = [
        ("a", "chest pain after exercise"),
        ("b", "persistent dry cough"),
        ("c", "rash on both arms"),
    ];
    let tokens = StubEmbedder::new(32, 7).token_store(texts.iter().map(|(id, t)| (*id, t.to_string())))?;
    let pooled = tokens
        .records()
        .iter()
        .map(|r| Ok(SentenceEmbedding { id: r.id.clone(), vector: mean_pool(&r.matrix)? }))
        .collect::<ragqa::Result<Vec<_>>>()?;
    let sentences = SentenceStore::new(32, pooled)?;

    let dir = std::env::temp_dir().join("ragqa-store-example");
    std::fs::create_dir_all(&dir)?;
    let (sp, tp) = (dir.join("sentences.rbqe"), dir.join("tokens.rbqt"));
    write_sentence_store(&sentences, &sp)?;
    write_token_store(&tokens, &tp)?;
    println!("sentence store sha256 {}", file_checksum(&sp)?);

    let s = read_sentence_store(&sp)?;
    let t = read_token_store(&tp)?;
    assert_eq!(s.records(), sentences.records());
    for rec in t.records() {
        let sim = cosine(&mean_pool(&rec.matrix)?, s.get(&rec.id).unwrap())?;
        println!("{}: {} token rows, pooled-vs-sentence cosine {sim:.6}", rec.id, rec.matrix.rows());
    }
    println!("a vs b: {:.4}", cosine(s.get("a").unwrap(), s.get("b").unwrap())?);
    Ok(())
}
