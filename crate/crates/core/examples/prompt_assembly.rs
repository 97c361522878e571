//! Builds prompts under shrinking token budgets.

use ragqa::corpus::QaPair;
use ragqa::prompt::{assemble_prompt, parse_prompt, ContextOrder, WhitespaceCounter};
use ragqa::rerank::{RankedContext, Strategy};

fn main() -> anyhow::Result<()> {
    let contexts: Vec<RankedContext> = [
        ("What is a normal heart rate?", "Between 60 and 100 beats per minute at rest."),
        ("Does caffeine raise heart rate?", "Yes, for a few hours in most people."),
        ("Is a heart rate of 110 dangerous?", "At rest it deserves a check with a doctor."),
    ]
    .iter()
    .enumerate()
    .map(|(i, (q, a))| RankedContext {
        qa: QaPair::new(format!("c{}", i + 1), *q, *a, ""),
        score: 1.0 - i as f64 * 0.1,
        rank: i + 1,
        strategy: Strategy::DenseL2,
    })
    .collect();
    let query = "Why is my heart rate high after coffee?";

    for budget in [512, 40, 25, 12] {
        let b = assemble_prompt(query, &contexts, budget, &WhitespaceCounter, ContextOrder::BestFirst)?;
        println!("budget {budget:>3}: {} tokens, {} dropped", b.token_count, b.dropped_contexts);
        println!("  {}", b.rendered);
        assert_eq!(parse_prompt(&b.rendered).unwrap().contexts.len(), b.contexts.len());
    }
    match assemble_prompt(query, &contexts, 5, &WhitespaceCounter, ContextOrder::BestFirst) {
        Err(e) => println!("budget   5: {e}"),
        Ok(_) => unreachable!(),
    }
    Ok(())
}
