use std::fmt::{self, Write as _};
use std::path::Path;

use super::conditions::{evaluate_conditions, ConditionReport, ConditionRow};
use super::recon::{reconstruction_errors, ReconErrors};
use crate::data::{stratified_folds, Dataset, Split};
use crate::error::{Error, Result};
use crate::trainer::{train, Config};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Full,
    Baseline,
    NoUdcl,
    NoSpcl,
    NoAttention,
    Point,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Full,
        Variant::Baseline,
        Variant::NoUdcl,
        Variant::NoSpcl,
        Variant::NoAttention,
        Variant::Point,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::Baseline => "baseline",
            Variant::NoUdcl => "w/o udcl",
            Variant::NoSpcl => "w/o spcl",
            Variant::NoAttention => "w/o attention",
            Variant::Point => "w/ point",
        }
    }

    /// `config` with this variant's switches set (and the others cleared).
    pub fn apply(self, config: &Config) -> Config {
        let mut c = config.clone();
        let t = &mut c.train;
        t.baseline = self == Variant::Baseline;
        t.disable_udcl = self == Variant::NoUdcl;
        t.disable_spcl = self == Variant::NoSpcl;
        t.disable_attention = self == Variant::NoAttention;
        t.point_alignment = self == Variant::Point;
        c
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Trains on `split` and scores the best checkpoint on `split.test`.
pub fn train_and_evaluate(
    config: &Config,
    dataset: &Dataset,
    split: &Split,
    out_dir: Option<&Path>,
) -> Result<(ConditionReport, ReconErrors)> {
    let out = train(config, dataset, split, out_dir)?;
    let ck = &out.best;
    let model = ck.model()?;
    let report = evaluate_conditions(&model, &ck.params, dataset, &split.test)?;
    let rec = reconstruction_errors(&model, &ck.params, dataset, &split.train, &split.test)?;
    Ok((report, rec))
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    /// Avg.-row (WAR, UAR) per seed.
    pub per_seed: Vec<(f64, f64)>,
    /// Reconstruction error per seed.
    pub rec: Vec<ReconErrors>,
}

impl AblationRow {
    pub fn avg_war(&self) -> f64 {
        self.per_seed.iter().map(|p| p.0).sum::<f64>() / self.per_seed.len() as f64
    }

    pub fn avg_uar(&self) -> f64 {
        self.per_seed.iter().map(|p| p.1).sum::<f64>() / self.per_seed.len() as f64
    }

    pub fn rec_error(&self) -> f64 {
        self.rec.iter().map(|r| r.model).sum::<f64>() / self.rec.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationTable {
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

pub const ABLATION_HEADER: &str = "variant\tseeds\tavg_war\tavg_uar\trec_error";

impl AblationTable {
    pub fn row(&self, v: Variant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == v)
    }

    pub fn to_tsv(&self) -> String {
        let mut s = format!("{ABLATION_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{}\t{}\t{:.6}\t{:.6}\t{:.6}",
                r.variant,
                self.seeds.len(),
                r.avg_war(),
                r.avg_uar(),
                r.rec_error()
            );
        }
        s
    }
}

/// Trains every variant once per seed (`config.train.seed`, `+1`, ...) on
/// the same split and averages the Avg. row over seeds.
pub fn run_ablation(
    config: &Config,
    dataset: &Dataset,
    split: &Split,
    variants: &[Variant],
    seeds: usize,
) -> Result<AblationTable> {
    if seeds == 0 || variants.is_empty() {
        return Err(Error::arg(
            "ablation needs at least one seed and one variant",
        ));
    }
    let seed_list: Vec<u64> = (0..seeds as u64).map(|k| config.train.seed + k).collect();
    let mut rows = Vec::new();
    for &v in variants {
        let mut row = AblationRow {
            variant: v,
            per_seed: Vec::new(),
            rec: Vec::new(),
        };
        for &seed in &seed_list {
            let mut c = v.apply(config);
            c.train.seed = seed;
            let (report, rec) = train_and_evaluate(&c, dataset, split, None)?;
            let avg = report.average();
            row.per_seed.push((avg.war, avg.uar));
            row.rec.push(rec);
        }
        rows.push(row);
    }
    Ok(AblationTable {
        seeds: seed_list,
        rows,
    })
}

pub const SWEEP_PARAMS: [&str; 4] = ["alpha", "beta", "lambda", "gamma"];
pub const SWEEP_HEADER: &str = "param\tvalue\tavg_war\tavg_uar\tfull_war\tfull_uar";

/// One training run per value of a loss weight. Returns the TSV report.
pub fn sweep(
    config: &Config,
    dataset: &Dataset,
    split: &Split,
    param: &str,
    values: &[f64],
) -> Result<String> {
    if !SWEEP_PARAMS.contains(&param) {
        return Err(Error::arg(format!(
            "cannot sweep {param:?}; expected one of {}",
            SWEEP_PARAMS.join(", ")
        )));
    }
    if values.is_empty() {
        return Err(Error::arg("sweep needs at least one value"));
    }
    let mut s = format!("{SWEEP_HEADER}\n");
    for &v in values {
        let mut c = config.clone();
        c.set(param, &v.to_string())?;
        let (report, _) = train_and_evaluate(&c, dataset, split, None)?;
        let (avg, full) = (report.average(), report.full());
        let _ = writeln!(
            s,
            "{param}\t{v}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            avg.war, avg.uar, full.war, full.uar
        );
    }
    Ok(s)
}

/// k-fold cross-validation with `config.train.folds` folds. Each row of the
/// result is the unweighted mean of that row over folds. Fold `i` writes its
/// run files under `out_dir/fold{i}`.
pub fn cross_validate(
    config: &Config,
    dataset: &Dataset,
    out_dir: Option<&Path>,
) -> Result<ConditionReport> {
    let k = config.train.folds;
    if k < 3 {
        return Err(Error::Config(format!(
            "cross-validation needs folds >= 3, got {k}"
        )));
    }
    let folds = stratified_folds(dataset, k, config.data_seed)?;
    let mut reports = Vec::with_capacity(k);
    for i in 0..k {
        let split = Split::from_folds(&folds, i)?;
        let dir = out_dir.map(|d| d.join(format!("fold{i}")));
        reports.push(train_and_evaluate(config, dataset, &split, dir.as_deref())?.0);
    }
    Ok(macro_average(&reports))
}

/// Row-wise mean of several reports.
pub fn macro_average(reports: &[ConditionReport]) -> ConditionReport {
    let n = reports.len() as f64;
    let rows = (0..reports[0].rows.len())
        .map(|j| ConditionRow {
            mask: reports[0].rows[j].mask,
            war: reports.iter().map(|r| r.rows[j].war).sum::<f64>() / n,
            uar: reports.iter().map(|r| r.rows[j].uar).sum::<f64>() / n,
        })
        .collect();
    ConditionReport { rows }
}
