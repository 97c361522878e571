//! Cleans a small raw corpus, prints its statistics and writes a split manifest.

use std::fs;

use ragqa::corpus::{clean_pairs, corpus_stats, ingest_jsonl, split_corpus, write_split_manifest, Abbreviations, DEFAULT_RATIOS};

fn main() -> anyhow::Result<()> {
    let dir = std::env::temp_dir().join("ragqa-ingest-example");
    fs::create_dir_all(&dir)?;
    let raw = dir.join("raw.jsonl");
    let mut lines = String::new();
    for i in 0..20 {
        lines.push_str(&format!(
            "{{\"id\":\"p{i:02}\",\"question\":\"Is  my BP\\u0007 of {} too high?\",\"answer\":\"A reading of {} is worth  a check.\",\"source\":\"forum\"}}\n",
            120 + i,
            120 + i
        ));
    }
    lines.push_str("this line is not json\n");
    fs::write(&raw, lines)?;

    let ingested = ingest_jsonl(&raw, false)?;
    println!("kept {} pairs, skipped {} lines", ingested.pairs.len(), ingested.skipped.len());

    let abbreviations: Abbreviations = [("BP".to_string(), "blood pressure".to_string())].into();
    let (pairs, emptied) = clean_pairs(ingested.pairs, &abbreviations);
    println!("first question after cleaning: {:?}", pairs[0].question);
    println!("emptied by cleaning: {emptied:?}");
    println!("{}", serde_json::to_string_pretty(&corpus_stats(&pairs)).unwrap());

    let split = split_corpus(&pairs, DEFAULT_RATIOS, 42)?;
    println!(
        "train {} / validation {} / test {}",
        split.train_ids.len(),
        split.validation_ids.len(),
        split.test_ids.len()
    );
    let manifest = dir.join("split.jsonl");
    write_split_manifest(&manifest, &split)?;
    println!("manifest written to {}", manifest.display());
    Ok(())
}
