//! Renders two result tables and the per-metric change between them.

use ragqa::report::{compare_runs, emit_report, render_deltas, ReportFormat, ResultsTable, TableRow};

fn main() -> anyhow::Result<()> {
    let baseline = ResultsTable::from_rows(vec![
        TableRow::new("dense", 0.2065, 0.2618, 0.1132, 0.1948),
        TableRow::new("bm25", 0.1980, 0.2540, 0.1101, 0.1893),
    ]);
    let tuned = ResultsTable::from_rows(vec![
        TableRow::new("dense", 0.2415, 0.2918, 0.2054, 0.2264),
        TableRow::new("bm25", 0.2221, 0.2714, 0.1318, 0.2054),
    ]);
    print!("{}", emit_report(&tuned, ReportFormat::Markdown)?);
    println!();
    print!("{}", emit_report(&tuned, ReportFormat::Csv)?);
    println!();
    print!("{}", render_deltas(&compare_runs(&baseline, &tuned)?));
    Ok(())
}
