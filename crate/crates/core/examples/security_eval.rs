//! Genuine, imposter, pseudo-genuine and pseudo-imposter score
//! distributions under several keys, with diversity and unlinkability
//! verdicts. Writes a text report, a JSON report and histogram CSV.

use cancelable_pq::bench::{prepare_workload, PipelineConfig};
use cancelable_pq::pq_index::{build_distance_table, train_codebook};
use cancelable_pq::sec_eval::{evaluate, EvalConfig, Scoring};

fn main() -> cancelable_pq::Result<()> {
    let cfg = PipelineConfig {
        n_identities: 100,
        samples_per_identity: 10,
        ..Default::default()
    };
    let w = prepare_workload(&cfg)?;
    let cb = train_codebook(&w.database, cfg.m, cfg.n, 1)?;
    let table = build_distance_table(&cb);

    for scoring in [Scoring::Reference, Scoring::OwnCodebook] {
        let eval = EvalConfig {
            dataset: "synthetic 100x10".into(),
            scoring,
            ..EvalConfig::new(vec![1, 2, 3, 4, 5], cfg.sigma_proj, 5000)
        };
        let report = evaluate(&w.database, &cb, &table, &eval)?;
        println!("{}", report.to_text());
        if scoring == Scoring::Reference {
            let dir = std::env::temp_dir().join("cpq-security-eval");
            report.write_all(&dir)?;
            println!("reports written to {}\n", dir.display());
        }
    }
    Ok(())
}
