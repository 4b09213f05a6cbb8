//! Text, JSON and CSV renderings of an evaluation.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::stats::{bootstrap_threshold, dist_stats, diversity_report, unlinkability_report};
use super::{DiversityReport, EvalConfig, ScoreKind, ScoreSets, Scoring, UnlinkabilityReport, BINS, BOOTSTRAP_ROUNDS};
use crate::error::Result;

/// Summary of one score distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub kind: ScoreKind,
    pub count: usize,
    pub mean: f64,
    pub variance: f64,
    pub min: f64,
    pub max: f64,
    pub bins: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub seeds: Vec<u64>,
    pub sigma_proj: f64,
    pub pair_budget: usize,
    pub sampler_seed: u64,
    pub scoring: Scoring,
    /// Plain-language statement of the similarity function used.
    pub scoring_assumption: String,
    pub records: Vec<ScoreRecord>,
    pub unlinkability: UnlinkabilityReport,
    pub diversity: DiversityReport,
}

impl EvalReport {
    pub fn from_sets(cfg: &EvalConfig, sets: ScoreSets) -> Result<Self> {
        let mut records = Vec::with_capacity(4);
        for kind in ScoreKind::ALL {
            let s = dist_stats(sets.get(kind))?;
            records.push(ScoreRecord {
                kind,
                count: s.count,
                mean: s.mean,
                variance: s.variance,
                min: s.min,
                max: s.max,
                bins: s.histogram,
            });
        }
        let tau_u = bootstrap_threshold(&sets.pseudo_imposter, BOOTSTRAP_ROUNDS, cfg.sampler_seed)?;
        Ok(Self {
            dataset: cfg.dataset.clone(),
            seeds: cfg.seeds.clone(),
            sigma_proj: cfg.sigma_proj,
            pair_budget: cfg.pair_budget,
            sampler_seed: cfg.sampler_seed,
            scoring: cfg.scoring,
            scoring_assumption: cfg.scoring.describe().into(),
            records,
            unlinkability: unlinkability_report(&sets.pseudo_genuine, &sets.pseudo_imposter, tau_u)?,
            diversity: diversity_report(&sets.genuine, &sets.pseudo_genuine)?,
        })
    }

    pub fn record(&self, kind: ScoreKind) -> &ScoreRecord {
        self.records.iter().find(|r| r.kind == kind).expect("all four kinds are recorded")
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "dataset        {}", self.dataset);
        let _ = writeln!(out, "key seeds      {:?}", self.seeds);
        let _ = writeln!(out, "sigma_proj     {:e}", self.sigma_proj);
        let _ = writeln!(out, "scoring        {}", self.scoring_assumption);
        let _ = writeln!(out);
        let _ = writeln!(out, "{:<16} {:>7} {:>9} {:>10} {:>8} {:>8}", "kind", "count", "mean", "variance", "min", "max");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{:<16} {:>7} {:>9.4} {:>10.5} {:>8.4} {:>8.4}",
                r.kind.name(),
                r.count,
                r.mean,
                r.variance,
                r.min,
                r.max
            );
        }
        let u = &self.unlinkability;
        let d = &self.diversity;
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "unlinkability  |mu_pg - mu_pi| = {:.4}, standardized gap = {:.3}, JSD = {:.5} (tau_u = {:.5}) -> {}",
            u.mean_gap,
            u.standardized_gap,
            u.jsd,
            u.threshold,
            if u.unlinkable { "unlinkable" } else { "linkable" }
        );
        let _ = writeln!(
            out,
            "diversity      mu_g - mu_pg = {:.4}, standardized gap = {:.3} (tau_d = {}) -> {}",
            d.mean_gap,
            d.standardized_gap,
            d.threshold,
            if d.diverse { "diverse" } else { "not diverse" }
        );
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Writes `report.txt`, `report.json` and `histogram.csv` into `dir`.
    pub fn write_all(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.txt"), self.to_text())?;
        std::fs::write(dir.join("report.json"), self.to_json())?;
        std::fs::write(dir.join("histogram.csv"), histogram_csv(&self.records))?;
        Ok(())
    }
}

/// One row per bin with its bounds and one count column per record.
pub fn histogram_csv(records: &[ScoreRecord]) -> String {
    let mut out = String::from("bin_low,bin_high");
    for r in records {
        out.push(',');
        out.push_str(r.kind.name());
    }
    out.push('\n');
    let width = 2.0 / BINS as f64;
    for b in 0..BINS {
        let lo = -1.0 + b as f64 * width;
        let _ = write!(out, "{:.5},{:.5}", lo, lo + width);
        for r in records {
            let _ = write!(out, ",{}", r.bins[b]);
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sec_eval::ScoreSet;

    fn sets() -> ScoreSets {
        let mk = |kind, base: f64| {
            ScoreSet::new(kind, (0..400).map(|i| base + (i % 20) as f64 * 0.005).collect())
        };
        ScoreSets {
            genuine: mk(ScoreKind::Genuine, 0.85),
            imposter: mk(ScoreKind::Imposter, 0.1),
            pseudo_genuine: mk(ScoreKind::PseudoGenuine, 0.1),
            pseudo_imposter: mk(ScoreKind::PseudoImposter, 0.1),
        }
    }

    #[test]
    fn report_round_trips_and_renders() {
        let cfg = EvalConfig::new(vec![1, 2], 2e-3, 400);
        let r = EvalReport::from_sets(&cfg, sets()).unwrap();
        assert!(r.diversity.diverse);
        assert!(r.unlinkability.unlinkable);
        let back: EvalReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
        let text = r.to_text();
        assert!(text.contains("pseudo_imposter") && text.contains("unlinkable"));

        let csv = histogram_csv(&r.records);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), BINS + 1);
        assert_eq!(lines[0], "bin_low,bin_high,genuine,imposter,pseudo_genuine,pseudo_imposter");
        let total: u64 = lines[1..]
            .iter()
            .map(|l| l.split(',').nth(2).unwrap().parse::<u64>().unwrap())
            .sum();
        assert_eq!(total, 400);
    }

    #[test]
    fn write_all_creates_files() {
        let dir = tempfile::tempdir().unwrap();
        let r = EvalReport::from_sets(&EvalConfig::new(vec![1, 2], 0.0, 400), sets()).unwrap();
        r.write_all(&dir.path().join("out")).unwrap();
        for f in ["report.txt", "report.json", "histogram.csv"] {
            assert!(dir.path().join("out").join(f).exists());
        }
    }
}
