//! Assembles adapters, alignment head, projection, flows, refiners, fusion
//! and classifier into one model, for training batches and for inference
//! under an availability mask.

use crate::alignment::{self, Alignment, GaussianBatch, PAIRS};
use crate::data::{Instance, Modality, ModalityMask};
use crate::error::{Error, Result};
use crate::flow::{self, FlowModel, Projection, Refiner};
use crate::numcore::{seeded_rng, Graph, ParamStore, Tensor, Var};
use crate::refine_fuse::{self, Classifier, Fusion};

use super::config::{LossWeights, TrainConfig};

/// Loss values of one batch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossComponents {
    pub udcl: f64,
    pub spcl: f64,
    pub rec: f64,
    pub cls: f64,
    pub nll: f64,
    pub total: f64,
}

/// `alpha*udcl + beta*spcl + lambda*rec + cls + gamma*nll`.
pub fn total_loss(
    udcl: f64,
    spcl: f64,
    rec: f64,
    cls: f64,
    nll: f64,
    w: &LossWeights,
) -> Result<f64> {
    for (name, v) in [
        ("udcl", udcl),
        ("spcl", spcl),
        ("rec", rec),
        ("cls", cls),
        ("nll", nll),
    ] {
        if !v.is_finite() {
            return Err(Error::numeric(format!("loss component {name} is {v}")));
        }
    }
    Ok(w.alpha * udcl + w.beta * spcl + w.lambda * rec + cls + w.gamma * nll)
}

/// Graph nodes of one batch's losses. Components with zero weight are not
/// built.
#[derive(Clone, Copy, Debug)]
pub struct BatchGraph {
    pub udcl: Option<Var>,
    pub spcl: Option<Var>,
    pub rec: Option<Var>,
    pub cls: Var,
    pub nll: Option<Var>,
    pub total: Var,
}

impl BatchGraph {
    pub fn values(&self, g: &Graph<'_>) -> LossComponents {
        let v = |x: Option<Var>| x.map_or(0.0, |x| g.scalar_value(x));
        LossComponents {
            udcl: v(self.udcl),
            spcl: v(self.spcl),
            rec: v(self.rec),
            cls: g.scalar_value(self.cls),
            nll: v(self.nll),
            total: g.scalar_value(self.total),
        }
    }
}

/// A missing modality's reconstruction next to its projected ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct Reconstruction {
    pub modality: Modality,
    pub reconstructed: Tensor,
    pub target: Tensor,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: TrainConfig,
    pub align: Alignment,
    pub proj: Projection,
    pub flows: [FlowModel; 3],
    pub refiners: [Refiner; 3],
    /// `None` fuses by concatenating the time-averaged streams.
    pub fusion: Option<Fusion>,
    pub classifier: Classifier,
    pub dims: [usize; 3],
    pub num_classes: usize,
}

impl Model {
    pub fn new(cfg: &TrainConfig, dims: [usize; 3], num_classes: usize) -> Result<Self> {
        cfg.validate()?;
        if num_classes < 2 {
            return Err(Error::Config(format!(
                "need at least 2 classes, got {num_classes}"
            )));
        }
        let mut align = Alignment::new(dims, cfg.width, cfg.emb_dim, cfg.heads)?;
        align.shift = cfg.sim_shift;
        let d = cfg.latent_dim;
        let flows = [
            FlowModel::new("flow.s", d, cfg.flow_layers, cfg.flow_hidden, cfg.s_max)?,
            FlowModel::new("flow.v", d, cfg.flow_layers, cfg.flow_hidden, cfg.s_max)?,
            FlowModel::new("flow.t", d, cfg.flow_layers, cfg.flow_hidden, cfg.s_max)?,
        ];
        let fusion = if cfg.disable_attention {
            None
        } else {
            Some(Fusion::new(d, cfg.heads, cfg.third_block)?)
        };
        let fused = fusion.as_ref().map_or(3 * d, Fusion::out_dim);
        Ok(Self {
            cfg: cfg.clone(),
            align,
            proj: Projection::new(cfg.width, d, cfg.frames)?,
            flows,
            refiners: Modality::ALL
                .map(|m| Refiner::new(&format!("refine.{m}"), d, cfg.refine_blocks)),
            fusion,
            classifier: Classifier::new(fused, num_classes),
            dims,
            num_classes,
        })
    }

    /// Fresh parameters drawn from `seed`.
    pub fn init(&self, seed: u64) -> ParamStore {
        let mut store = ParamStore::default();
        let mut rng = seeded_rng(seed);
        self.align.init(&mut store, &mut rng);
        self.proj.init(&mut store, &mut rng);
        for f in &self.flows {
            f.init(&mut store, &mut rng);
        }
        for r in &self.refiners {
            r.init(&mut store, &mut rng);
        }
        if let Some(f) = &self.fusion {
            f.init(&mut store, &mut rng);
        }
        self.classifier.init(&mut store, &mut rng);
        store
    }

    /// Whether missing modalities are rebuilt through the flows. The
    /// baseline zero-fills them instead.
    pub fn reconstructs(&self) -> bool {
        !self.cfg.baseline
    }

    fn check_instance(&self, inst: &Instance) -> Result<()> {
        for m in Modality::ALL {
            let (t, d) = inst.feature(m).dims();
            if t == 0 || d != self.dims[m.index()] {
                return Err(Error::shape(format!(
                    "instance {} modality {m}: shape ({t}, {d}), expected width {}",
                    inst.id,
                    self.dims[m.index()]
                )));
            }
        }
        Ok(())
    }

    /// Adapter output and projected `T_c x d_c` sequence of one modality.
    pub fn encode(&self, g: &mut Graph<'_>, m: Modality, raw: &Tensor) -> Result<(Var, Var)> {
        let x = g.constant(raw.clone());
        let a = self.align.adapt(g, m, x)?;
        let p = self.proj.forward(g, m, a)?;
        Ok((a, p))
    }

    /// Fills every modality outside `mask` from the available projected
    /// sequences. Returns the completed sequences and the rebuilt ones.
    pub fn complete(
        &self,
        g: &mut Graph<'_>,
        mask: ModalityMask,
        projected: &[Option<Var>; 3],
    ) -> Result<([Var; 3], Vec<(Modality, Var)>)> {
        let mut out: [Option<Var>; 3] = [None; 3];
        for m in mask.available() {
            out[m.index()] = Some(projected[m.index()].ok_or_else(|| {
                Error::arg(format!("modality {m} is available but was not encoded"))
            })?);
        }
        let mut rebuilt = Vec::new();
        if mask.missing().next().is_some() {
            if self.reconstructs() {
                let mut latents = Vec::new();
                for m in mask.available() {
                    // Only flows and refiners learn from reconstruction.
                    let src = g.detach(out[m.index()].unwrap());
                    let (z, _) = self.flows[m.index()].forward(g, src)?;
                    latents.push(z);
                }
                let shared = flow::latent_transfer_graph(g, &latents)?;
                for m in mask.missing() {
                    let x = self.flows[m.index()].inverse(g, shared)?;
                    let x = self.refiners[m.index()].forward(g, x)?;
                    out[m.index()] = Some(x);
                    rebuilt.push((m, x));
                }
            } else {
                let zeros = g.constant(Tensor::zeros(&[self.cfg.frames, self.cfg.latent_dim]));
                for m in mask.missing() {
                    out[m.index()] = Some(zeros);
                    rebuilt.push((m, zeros));
                }
            }
        }
        Ok((out.map(Option::unwrap), rebuilt))
    }

    /// Time-averaged vectors per modality and the class logits (`1 x C`).
    pub fn head(&self, g: &mut Graph<'_>, seqs: &[Var; 3]) -> Result<([Var; 3], Var)> {
        let pooled = seqs.map(|s| g.mean_rows(s));
        let [s, v, t] = *seqs;
        let h = match &self.fusion {
            Some(f) => f.forward(g, t, s, v)?,
            None => g.concat_cols(&[pooled[2], pooled[0], pooled[1]])?,
        };
        Ok((pooled, self.classifier.forward(g, h)?))
    }

    /// Builds every loss of one training batch. `masks[i]` is the
    /// availability pattern of `batch[i]`; modalities outside it are rebuilt
    /// from the others and compared against their projections.
    pub fn batch_graph(
        &self,
        g: &mut Graph<'_>,
        batch: &[&Instance],
        masks: &[ModalityMask],
        w: &LossWeights,
    ) -> Result<BatchGraph> {
        let n = batch.len();
        if n < 2 {
            return Err(Error::arg("a training batch needs at least 2 instances"));
        }
        if masks.len() != n {
            return Err(Error::arg(format!(
                "{n} instances but {} masks",
                masks.len()
            )));
        }
        let want_align = w.alpha > 0.0;
        let want_nll = w.gamma > 0.0 && self.reconstructs();

        let mut mus: [Vec<Var>; 3] = Default::default();
        let mut vars: [Vec<Var>; 3] = Default::default();
        let mut pooled_rows = Vec::with_capacity(3 * n);
        let mut pool_labels = Vec::with_capacity(3 * n);
        let mut pool_inst = Vec::with_capacity(3 * n);
        let mut logits = Vec::with_capacity(n);
        let mut rec_terms = Vec::new();
        let mut nll_z = Vec::new();
        let mut nll_ld = Vec::new();

        for (i, (inst, &mask)) in batch.iter().zip(masks).enumerate() {
            self.check_instance(inst)?;
            let mut adapted = [None; 3];
            let mut projected = [None; 3];
            for m in Modality::ALL {
                let (a, p) = self.encode(g, m, inst.feature(m))?;
                adapted[m.index()] = Some(a);
                projected[m.index()] = Some(p);
            }
            if want_align {
                for m in Modality::ALL {
                    let (mu, lv) = self.align.umc(g, adapted[m.index()].unwrap())?;
                    mus[m.index()].push(mu);
                    if !self.cfg.point_alignment {
                        vars[m.index()].push(g.exp(lv));
                    }
                }
            }
            // The encoder path of a rebuilt modality only sees the others.
            let visible = Modality::ALL.map(|m| {
                if mask.contains(m) {
                    projected[m.index()]
                } else {
                    None
                }
            });
            let (seqs, rebuilt) = self.complete(g, mask, &visible)?;
            if self.reconstructs() {
                for (m, x_hat) in rebuilt {
                    let target = g.detach(projected[m.index()].unwrap());
                    rec_terms.push(flow::sq_error_graph(g, x_hat, target)?);
                }
            }
            if want_nll {
                for m in Modality::ALL {
                    let x = g.detach(projected[m.index()].unwrap());
                    let (z, ld) = self.flows[m.index()].forward(g, x)?;
                    nll_z.push(z);
                    nll_ld.push(ld);
                }
            }
            let (pooled, lg) = self.head(g, &seqs)?;
            for p in pooled {
                pooled_rows.push(p);
                pool_labels.push(inst.label);
                pool_inst.push(i);
            }
            logits.push(lg);
        }

        let labels: Vec<usize> = batch.iter().map(|b| b.label).collect();
        let all_logits = g.concat_rows(&logits)?;
        let cls = refine_fuse::cls_graph(g, all_logits, &labels)?;

        let udcl = if want_align {
            let mut total: Option<Var> = None;
            let (tau, a, b) = self.align.scalars(g)?;
            for (p, q) in PAIRS {
                let x = g.concat_rows(&mus[p.index()])?;
                let y = g.concat_rows(&mus[q.index()])?;
                let l = if self.cfg.point_alignment {
                    alignment::point_infonce_graph(g, x, y, tau)?
                } else {
                    let vx = g.concat_rows(&vars[p.index()])?;
                    let vy = g.concat_rows(&vars[q.index()])?;
                    alignment::infonce_graph(
                        g,
                        GaussianBatch { mu: x, var: vx },
                        GaussianBatch { mu: y, var: vy },
                        tau,
                        a,
                        b,
                    )?
                };
                total = Some(match total {
                    None => l,
                    Some(t) => g.add(t, l)?,
                });
            }
            total
        } else {
            None
        };

        let spcl =
            if w.beta > 0.0 && refine_fuse::positive_weights(&pool_labels, &pool_inst).is_ok() {
                let reps = g.concat_rows(&pooled_rows)?;
                Some(refine_fuse::spcl_graph(
                    g,
                    reps,
                    &pool_labels,
                    &pool_inst,
                    self.cfg.spcl_tau,
                )?)
            } else {
                None
            };

        let rec = if w.lambda > 0.0 && self.reconstructs() {
            let mut sum = g.scalar(0.0);
            for t in rec_terms {
                sum = g.add(sum, t)?;
            }
            Some(g.scale(sum, 1.0 / n as f64))
        } else {
            None
        };

        let nll = if want_nll {
            let z = g.concat_rows(&nll_z)?;
            let ld = g.concat_rows(&nll_ld)?;
            Some(flow::flow_nll_graph(g, z, ld)?)
        } else {
            None
        };

        let mut total = None;
        for (term, weight) in [
            (udcl, w.alpha),
            (spcl, w.beta),
            (rec, w.lambda),
            (Some(cls), 1.0),
            (nll, w.gamma),
        ] {
            let Some(t) = term else { continue };
            let t = if weight == 1.0 { t } else { g.scale(t, weight) };
            total = Some(match total {
                None => t,
                Some(acc) => g.add(acc, t)?,
            });
        }
        Ok(BatchGraph {
            udcl,
            spcl,
            rec,
            cls,
            nll,
            total: total.unwrap(),
        })
    }

    /// Class logits of one instance when only the modalities in `mask` are
    /// visible.
    pub fn logits(
        &self,
        params: &ParamStore,
        inst: &Instance,
        mask: ModalityMask,
    ) -> Result<Vec<f64>> {
        self.check_instance(inst)?;
        let mut g = Graph::new(params);
        let mut projected = [None; 3];
        for m in mask.available() {
            projected[m.index()] = Some(self.encode(&mut g, m, inst.feature(m))?.1);
        }
        let (seqs, _) = self.complete(&mut g, mask, &projected)?;
        let (_, lg) = self.head(&mut g, &seqs)?;
        Ok(g.value(lg).data().to_vec())
    }

    pub fn predict(
        &self,
        params: &ParamStore,
        inst: &Instance,
        mask: ModalityMask,
    ) -> Result<usize> {
        let lg = self.logits(params, inst, mask)?;
        // First maximum wins ties.
        Ok(lg
            .iter()
            .enumerate()
            .fold(0, |best, (i, &v)| if v > lg[best] { i } else { best }))
    }

    /// Projected sequence of one modality from its raw features.
    pub fn project(&self, params: &ParamStore, m: Modality, raw: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new(params);
        let (_, p) = self.encode(&mut g, m, raw)?;
        Ok(g.value(p).clone())
    }

    /// Rebuilds every modality outside `mask` and pairs it with the
    /// projection of the held-out ground truth.
    pub fn reconstruct(
        &self,
        params: &ParamStore,
        inst: &Instance,
        mask: ModalityMask,
    ) -> Result<Vec<Reconstruction>> {
        self.check_instance(inst)?;
        let mut g = Graph::new(params);
        let mut projected = [None; 3];
        for m in mask.available() {
            projected[m.index()] = Some(self.encode(&mut g, m, inst.feature(m))?.1);
        }
        let (_, rebuilt) = self.complete(&mut g, mask, &projected)?;
        let mut out = Vec::new();
        for (m, x) in rebuilt {
            out.push(Reconstruction {
                modality: m,
                reconstructed: g.value(x).clone(),
                target: self.project(params, m, inst.feature(m))?,
            });
        }
        Ok(out)
    }
}
