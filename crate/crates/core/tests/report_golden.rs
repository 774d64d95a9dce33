mod common;

use absa_pair::evaluation::{render_report, ReportFormat};
use common::*;

fn golden(name: &str) -> String {
    std::fs::read_to_string(golden_path(name)).unwrap()
}

#[test]
fn baseline_rows_render_to_pinned_markdown() {
    let md = render_report(&published_rows(&BASELINE_ROWS), ReportFormat::Markdown).unwrap();
    assert_eq!(md, golden("baselines.md"));
}

#[test]
fn baseline_rows_render_to_pinned_csv() {
    let csv = render_report(&published_rows(&BASELINE_ROWS), ReportFormat::Csv).unwrap();
    assert_eq!(csv, golden("baselines.csv"));
}

#[test]
fn full_comparison_table_is_pinned() {
    let mut rows = published_rows(&BASELINE_ROWS);
    rows.extend(published_rows(&BERT_ROWS));
    let md = render_report(&rows, ReportFormat::Markdown).unwrap();
    assert_eq!(md, golden("published_results.md"));
}

#[test]
fn rendering_ignores_input_order() {
    let mut rows = published_rows(&BERT_ROWS);
    rows.extend(published_rows(&BASELINE_ROWS));
    rows.reverse();
    let md = render_report(&rows, ReportFormat::Markdown).unwrap();
    assert_eq!(md, golden("published_results.md"));
}
