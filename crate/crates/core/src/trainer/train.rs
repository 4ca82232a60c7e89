use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::RngCore as _;

use super::checkpoint::{write_atomic, Checkpoint};
use super::config::Config;
use super::model::{total_loss, LossComponents, Model};
use super::optim::Adam;
use crate::alignment::clamp_tau;
use crate::data::{make_batches, sample_missing_pattern, Dataset, ModalityMask, Split};
use crate::error::{Error, Result};
use crate::eval::evaluate_conditions;
use crate::numcore::{seeded_rng, Graph, ParamStore, Rng};

/// Keeps the shuffle stream apart from the parameter-init stream.
const STREAM_SALT: u64 = 0x5eed_7a1e;

/// One row of `metrics.tsv`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub losses: LossComponents,
    pub val_war: f64,
    pub val_uar: f64,
}

pub const METRICS_HEADER: &str =
    "epoch\tl_udcl\tl_spcl\tl_rec\tl_cls\tl_nll\ttotal\tval_war\tval_uar";

impl EpochMetrics {
    pub fn tsv_row(&self) -> String {
        let l = &self.losses;
        format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.4}\t{:.4}",
            self.epoch, l.udcl, l.spcl, l.rec, l.cls, l.nll, l.total, self.val_war, self.val_uar
        )
    }
}

#[derive(Clone, Debug)]
pub struct Trainer {
    pub config: Config,
    pub model: Model,
    pub params: ParamStore,
    pub adam: Adam,
    pub rng: Rng,
    pub epoch: usize,
    pub class_names: Vec<String>,
}

impl Trainer {
    pub fn new(config: &Config, dims: [usize; 3], class_names: Vec<String>) -> Result<Self> {
        let model = Model::new(&config.train, dims, class_names.len())?;
        let seed = config.train.seed;
        Ok(Self {
            params: model.init(seed),
            adam: Adam::new(config.train.learning_rate),
            rng: seeded_rng(seed ^ STREAM_SALT),
            config: config.clone(),
            model,
            epoch: 0,
            class_names,
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let config = ck.config()?;
        Ok(Self {
            model: ck.model()?,
            params: ck.params.clone(),
            adam: ck.optimizer.clone(),
            rng: ck.rng.clone(),
            config,
            epoch: ck.epoch,
            class_names: ck.class_names.clone(),
        })
    }

    pub fn checkpoint(&self, val_uar: f64) -> Checkpoint {
        Checkpoint {
            config: self.config.to_text(),
            config_hash: self.config.hash(),
            epoch: self.epoch,
            params: self.params.clone(),
            optimizer: self.adam.clone(),
            rng: self.rng.clone(),
            dims: self.model.dims,
            class_names: self.class_names.clone(),
            val_uar,
        }
    }

    /// One optimizer step on `indices` with the given masks. Parameters are
    /// left untouched when any loss is non-finite.
    pub fn step(
        &mut self,
        dataset: &Dataset,
        indices: &[usize],
        masks: &[ModalityMask],
    ) -> Result<LossComponents> {
        let w = self.config.train.weights();
        let batch: Vec<_> = indices.iter().map(|&i| &dataset.instances[i]).collect();
        self.params.zero_grad();
        let (values, grads) = {
            let mut g = Graph::new(&self.params);
            let bg = self.model.batch_graph(&mut g, &batch, masks, &w)?;
            let v = bg.values(&g);
            total_loss(v.udcl, v.spcl, v.rec, v.cls, v.nll, &w)?;
            (v, g.backward(bg.total)?)
        };
        self.params.accumulate(&grads)?;
        if let Some((name, _, _)) = self
            .params
            .iter_with_grads_mut()
            .find(|(_, _, g)| !g.is_finite())
        {
            return Err(Error::numeric(format!("gradient of {name} is not finite")));
        }
        self.adam.update(&mut self.params);
        clamp_tau(&mut self.params);
        Ok(values)
    }

    /// One pass over `train` in a fresh shuffled order, with a mask drawn
    /// per instance. Returns the mean losses.
    pub fn run_epoch(&mut self, dataset: &Dataset, train: &[usize]) -> Result<LossComponents> {
        self.run_epoch_observed(dataset, train, |_| Ok(()))
    }

    /// `run_epoch` that calls `observe` after every optimizer step.
    pub fn run_epoch_observed<F>(
        &mut self,
        dataset: &Dataset,
        train: &[usize],
        mut observe: F,
    ) -> Result<LossComponents>
    where
        F: FnMut(&Trainer) -> Result<()>,
    {
        let sub = dataset.subset(train);
        let seed = self.rng.next_u64();
        let batches = make_batches(&sub, self.config.train.batch_size, seed, true)?;
        let mut sum = LossComponents::default();
        for b in &batches {
            let idx: Vec<usize> = b.indices.iter().map(|&i| train[i]).collect();
            let masks: Vec<ModalityMask> = if self.config.train.baseline {
                vec![ModalityMask::FULL; idx.len()]
            } else {
                idx.iter()
                    .map(|_| {
                        sample_missing_pattern(&mut self.rng, self.config.train.missing_policy)
                    })
                    .collect()
            };
            let l = self.step(dataset, &idx, &masks)?;
            observe(self)?;
            sum.udcl += l.udcl;
            sum.spcl += l.spcl;
            sum.rec += l.rec;
            sum.cls += l.cls;
            sum.nll += l.nll;
            sum.total += l.total;
        }
        self.epoch += 1;
        let n = batches.len() as f64;
        Ok(LossComponents {
            udcl: sum.udcl / n,
            spcl: sum.spcl / n,
            rec: sum.rec / n,
            cls: sum.cls / n,
            nll: sum.nll / n,
            total: sum.total / n,
        })
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Highest mean validation UAR over the seven availability patterns;
    /// ties keep the earlier epoch.
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub metrics: Vec<EpochMetrics>,
}

fn metrics_text(rows: &[EpochMetrics]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{}", r.tsv_row());
    }
    s
}

/// Trains on `split.train`, selecting on `split.val`. With `out_dir` set,
/// writes `config.txt`, `metrics.tsv`, `best.json` and `last.json` there,
/// refreshing them after every epoch.
pub fn train(
    config: &Config,
    dataset: &Dataset,
    split: &Split,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    config.train.validate()?;
    dataset.validate()?;
    if split.train.len() < 2 || split.val.is_empty() {
        return Err(Error::arg(format!(
            "split too small: {} train, {} val",
            split.train.len(),
            split.val.len()
        )));
    }
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_atomic(&dir.join("config.txt"), config.to_text().as_bytes())?;
    }
    let mut tr = Trainer::new(config, dataset.dims, dataset.class_names.clone())?;
    let mut metrics = Vec::new();
    let mut best: Option<Checkpoint> = None;
    for _ in 0..config.train.epochs {
        let losses = tr.run_epoch(dataset, &split.train)?;
        let report = evaluate_conditions(&tr.model, &tr.params, dataset, &split.val)?;
        let (val_war, val_uar) = report.mean_over_patterns();
        let row = EpochMetrics {
            epoch: tr.epoch,
            losses,
            val_war,
            val_uar,
        };
        metrics.push(row);
        let ck = tr.checkpoint(val_uar);
        if best.as_ref().is_none_or(|b| val_uar > b.val_uar) {
            best = Some(ck.clone());
            if let Some(dir) = out_dir {
                ck.save(&dir.join("best.json"))?;
            }
        }
        if let Some(dir) = out_dir {
            ck.save(&dir.join("last.json"))?;
            write_atomic(&dir.join("metrics.tsv"), metrics_text(&metrics).as_bytes())?;
        }
    }
    let last = tr.checkpoint(metrics.last().map_or(0.0, |m| m.val_uar));
    Ok(TrainOutcome {
        best: best.unwrap(),
        last,
        metrics,
    })
}
