use std::path::Path;

use crate::embed_io::{apply_pca, fit_pca, l2_normalize, EmbeddingSet, PcaModel};
use crate::error::Result;
use crate::pq_index::{build_distance_table, train_codebook, DistanceTable, PqCodebook};

const PCA_FILE: &str = "pca.pcam";
const CODEBOOK_FILE: &str = "codebook.pqcb";
const TABLE_FILE: &str = "table.pqdt";

/// Everything fitted on the database split: PCA, codebook and its table.
#[derive(Debug, Clone)]
pub struct FittedModel {
    pub pca: PcaModel,
    pub codebook: PqCodebook,
    pub table: DistanceTable,
}

impl FittedModel {
    /// Fits on raw database embeddings, which are normalized first.
    pub fn fit(database: &EmbeddingSet, pca_dim: usize, m: usize, n: usize, seed: u64) -> Result<Self> {
        let normalized = l2_normalize(database)?;
        let pca = fit_pca(&normalized, pca_dim)?;
        let reduced = l2_normalize(&apply_pca(&pca, &normalized)?)?;
        let codebook = train_codebook(&reduced, m, n, seed)?;
        let table = build_distance_table(&codebook);
        Ok(Self { pca, codebook, table })
    }

    /// Normalize, project and re-normalize raw embeddings.
    pub fn reduce(&self, raw: &EmbeddingSet) -> Result<EmbeddingSet> {
        l2_normalize(&apply_pca(&self.pca, &l2_normalize(raw)?)?)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.pca.save(&dir.join(PCA_FILE))?;
        self.codebook.save(&dir.join(CODEBOOK_FILE))?;
        self.table.save(&dir.join(TABLE_FILE))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let codebook = PqCodebook::load(&dir.join(CODEBOOK_FILE))?;
        let table = DistanceTable::load(&dir.join(TABLE_FILE))?;
        table.check_matches(&codebook)?;
        Ok(Self {
            pca: PcaModel::load(&dir.join(PCA_FILE))?,
            codebook,
            table,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed_io::{gen_synthetic, SyntheticSpec};

    #[test]
    fn save_load_round_trip() {
        let raw = gen_synthetic(&SyntheticSpec {
            n_identities: 10,
            samples_per_identity: 4,
            dim: 32,
            intra_class_noise: 0.05,
            seed: 1,
        })
        .unwrap();
        let m = FittedModel::fit(&raw, 16, 8, 8, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        m.save(dir.path()).unwrap();
        let back = FittedModel::load(dir.path()).unwrap();
        assert_eq!(back.codebook, m.codebook);
        assert_eq!(back.table, m.table);
        assert_eq!(m.reduce(&raw).unwrap().as_flat(), back.reduce(&raw).unwrap().as_flat());
    }
}
