use std::fmt::Write as _;

use super::metrics::{uar, war};
use crate::data::{Dataset, ModalityMask};
use crate::error::{Error, Result};
use crate::numcore::ParamStore;
use crate::trainer::{Checkpoint, Model};

#[derive(Clone, Debug, PartialEq)]
pub struct ConditionRow {
    /// `None` for the average row.
    pub mask: Option<ModalityMask>,
    pub war: f64,
    pub uar: f64,
}

impl ConditionRow {
    pub fn name(&self) -> String {
        self.mask
            .map_or_else(|| "Avg.".to_string(), |m| m.to_string())
    }
}

/// The six partial-availability rows in report order, then `Avg.` over
/// them, then the full row.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionReport {
    pub rows: Vec<ConditionRow>,
}

pub const REPORT_HEADER: &str = "available\twar\tuar";

impl ConditionReport {
    pub fn from_scores(partial: [(f64, f64); 6], full: (f64, f64)) -> Self {
        let mut rows: Vec<ConditionRow> = ModalityMask::MISSING_CONDITIONS
            .iter()
            .zip(partial)
            .map(|(&m, (war, uar))| ConditionRow {
                mask: Some(m),
                war,
                uar,
            })
            .collect();
        rows.push(ConditionRow {
            mask: None,
            war: partial.iter().map(|p| p.0).sum::<f64>() / 6.0,
            uar: partial.iter().map(|p| p.1).sum::<f64>() / 6.0,
        });
        rows.push(ConditionRow {
            mask: Some(ModalityMask::FULL),
            war: full.0,
            uar: full.1,
        });
        Self { rows }
    }

    pub fn average(&self) -> &ConditionRow {
        &self.rows[6]
    }

    pub fn full(&self) -> &ConditionRow {
        &self.rows[7]
    }

    pub fn row(&self, mask: ModalityMask) -> Option<&ConditionRow> {
        self.rows.iter().find(|r| r.mask == Some(mask))
    }

    /// Mean (WAR, UAR) over all seven availability patterns, full included.
    pub fn mean_over_patterns(&self) -> (f64, f64) {
        let avg = self.average();
        let full = self.full();
        (
            (6.0 * avg.war + full.war) / 7.0,
            (6.0 * avg.uar + full.uar) / 7.0,
        )
    }

    pub fn to_tsv(&self) -> String {
        let mut s = format!("{REPORT_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(s, "{}\t{:.6}\t{:.6}", r.name(), r.war, r.uar);
        }
        s
    }
}

/// (WAR, UAR) of the instances at `idx` with only `mask` visible.
pub fn evaluate_mask(
    model: &Model,
    params: &ParamStore,
    dataset: &Dataset,
    idx: &[usize],
    mask: ModalityMask,
) -> Result<(f64, f64)> {
    if idx.is_empty() {
        return Err(Error::arg("nothing to evaluate"));
    }
    let mut preds = Vec::with_capacity(idx.len());
    let mut labels = Vec::with_capacity(idx.len());
    for &i in idx {
        let inst = &dataset.instances[i];
        preds.push(model.predict(params, inst, mask)?);
        labels.push(inst.label);
    }
    Ok((war(&preds, &labels)?, uar(&preds, &labels)?))
}

/// Scores every availability pattern on the instances at `idx`.
pub fn evaluate_conditions(
    model: &Model,
    params: &ParamStore,
    dataset: &Dataset,
    idx: &[usize],
) -> Result<ConditionReport> {
    let mut partial = [(0.0, 0.0); 6];
    for (slot, &m) in partial.iter_mut().zip(&ModalityMask::MISSING_CONDITIONS) {
        *slot = evaluate_mask(model, params, dataset, idx, m)?;
    }
    let full = evaluate_mask(model, params, dataset, idx, ModalityMask::FULL)?;
    Ok(ConditionReport::from_scores(partial, full))
}

pub fn evaluate_checkpoint(
    ck: &Checkpoint,
    dataset: &Dataset,
    idx: &[usize],
) -> Result<ConditionReport> {
    if ck.dims != dataset.dims || ck.class_names.len() != dataset.num_classes() {
        return Err(Error::arg(format!(
            "checkpoint expects widths {:?} and {} classes, data has {:?} and {}",
            ck.dims,
            ck.class_names.len(),
            dataset.dims,
            dataset.num_classes()
        )));
    }
    evaluate_conditions(&ck.model()?, &ck.params, dataset, idx)
}
