//! Full offline experiment with stub backends, written to a temp directory.

use std::fs;

use ragqa::config::ExperimentConfig;
use ragqa::corpus::{write_jsonl, QaPair};
use ragqa::pipeline::{artifacts, run_experiment};
use ragqa::rerank::Strategy;

fn main() -> anyhow::Result<()> {
    let dir = std::env::temp_dir().join("ragqa-experiment-example");
    fs::create_dir_all(&dir)?;
    let topics = ["asthma", "migraine", "diabetes", "eczema", "anemia"];
    let pairs: Vec<QaPair> = (0..150)
        .map(|i| {
            let t = topics[i % topics.len()];
            QaPair::new(
                format!("q{i:03}"),
                format!("What helps with {t} in case {i}?"),
                format!("For {t}, case {i} improved with treatment plan {}.", i % 7),
                "synthetic",
            )
        })
        .collect();
    let corpus = dir.join("corpus.jsonl");
    write_jsonl(&corpus, &pairs)?;

    let config = ExperimentConfig {
        corpus,
        strategies: Strategy::ALL.to_vec(),
        out_dir: dir.join("out"),
        row_prefix: Some("stub".to_string()),
        ..ExperimentConfig::default()
    };
    let outcome = run_experiment(config.clone())?;
    println!("{} records, {} failures", outcome.records.len(), outcome.failures.len());
    print!("{}", fs::read_to_string(config.out_dir.join(artifacts::TABLE_MD))?);
    Ok(())
}
