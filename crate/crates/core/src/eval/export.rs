use std::fmt::Write as _;
use std::path::Path;

use crate::data::{Dataset, Modality, ModalityMask};
use crate::error::{Error, Result};
use crate::numcore::ParamStore;
use crate::trainer::Model;

/// One exported pooled vector.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingRow {
    pub id: String,
    pub modality: Modality,
    pub reconstructed: bool,
    pub label: usize,
    pub vector: Vec<f64>,
}

impl EmbeddingRow {
    pub fn kind(&self) -> &'static str {
        if self.reconstructed {
            "reconstructed"
        } else {
            "ground_truth"
        }
    }
}

/// For every instance and modality: the time-averaged reconstruction from
/// the other two modalities and the time-averaged projection of the real
/// features.
pub fn embedding_rows(
    model: &Model,
    params: &ParamStore,
    dataset: &Dataset,
    idx: &[usize],
) -> Result<Vec<EmbeddingRow>> {
    let mut rows = Vec::with_capacity(idx.len() * 6);
    for &i in idx {
        let inst = &dataset.instances[i];
        for m in Modality::ALL {
            let others: Vec<Modality> = Modality::ALL.into_iter().filter(|&o| o != m).collect();
            let rec = model.reconstruct(params, inst, ModalityMask::new(&others)?)?;
            let r = &rec[0];
            for (reconstructed, seq) in [(true, &r.reconstructed), (false, &r.target)] {
                rows.push(EmbeddingRow {
                    id: inst.id.clone(),
                    modality: m,
                    reconstructed,
                    label: inst.label,
                    vector: seq.mean_rows().data().to_vec(),
                });
            }
        }
    }
    Ok(rows)
}

/// Mean Euclidean distance between each reconstructed vector and its
/// ground-truth partner.
pub fn mean_gap(rows: &[EmbeddingRow]) -> Result<f64> {
    let pairs: Vec<f64> = rows
        .chunks(2)
        .filter(|c| c.len() == 2 && c[0].reconstructed && !c[1].reconstructed)
        .map(|c| {
            c[0].vector
                .iter()
                .zip(&c[1].vector)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    if pairs.is_empty() {
        return Err(Error::arg("no reconstructed/ground-truth pairs"));
    }
    Ok(pairs.iter().sum::<f64>() / pairs.len() as f64)
}

pub fn embeddings_tsv(rows: &[EmbeddingRow]) -> String {
    let dim = rows.first().map_or(0, |r| r.vector.len());
    let mut s = String::from("id\tmodality\tkind\tlabel");
    for k in 0..dim {
        let _ = write!(s, "\te{k}");
    }
    s.push('\n');
    for r in rows {
        let _ = write!(s, "{}\t{}\t{}\t{}", r.id, r.modality, r.kind(), r.label);
        for v in &r.vector {
            let _ = write!(s, "\t{v}");
        }
        s.push('\n');
    }
    s
}

/// Writes [`embeddings_tsv`] of the instances at `idx` to `path`.
pub fn export_embeddings(
    model: &Model,
    params: &ParamStore,
    dataset: &Dataset,
    idx: &[usize],
    path: &Path,
) -> Result<usize> {
    let rows = embedding_rows(model, params, dataset, idx)?;
    std::fs::write(path, embeddings_tsv(&rows)).map_err(|e| Error::io(path, e))?;
    Ok(rows.len())
}
