//! End-to-end benchmark on a small synthetic set, followed by a K sweep.
//! Pass a TOML config path to override the defaults.

use cancelable_pq::bench::{render_table, run_pipeline, sweep, PipelineConfig, SweepAxis, SweepRow};

fn main() -> cancelable_pq::Result<()> {
    let cfg = match std::env::args().nth(1) {
        Some(path) => PipelineConfig::load(path.as_ref())?,
        None => PipelineConfig {
            n_identities: 100,
            samples_per_identity: 10,
            runs: 2,
            ..Default::default()
        },
    };
    let report = run_pipeline(&cfg)?;
    println!(
        "database {} records, {} held-out queries, {} HE inner products per query",
        report.database_size, report.query_count, report.he_ops_per_query
    );
    println!(
        "filter {:.3} ms, re-rank {:.3} ms, total {:.3} ms (mean per query)\n",
        report.filter.mean_ms, report.rerank.mean_ms, report.total.mean_ms
    );
    print!(
        "{}",
        render_table(&[SweepRow {
            setting: "default".into(),
            report
        }])
    );
    println!();
    print!("{}", render_table(&sweep(&cfg, SweepAxis::K, &[1.0, 2.0, 5.0, 10.0])?));
    Ok(())
}
