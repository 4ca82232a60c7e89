use crate::data::{Dataset, Modality, ModalityMask};
use crate::error::{Error, Result};
use crate::flow::rec_loss;
use crate::numcore::{ParamStore, Tensor};
use crate::trainer::Model;

/// Mean squared reconstruction error per (instance, modality) when each
/// modality is rebuilt from the other two, next to two naive fills.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReconErrors {
    pub model: f64,
    /// Predicting an all-zero sequence.
    pub zero_fill: f64,
    /// Predicting the training-set mean sequence of that modality.
    pub mean_fill: f64,
}

/// Frame-wise mean of the projected sequences of `m` over `idx`.
fn mean_projection(
    model: &Model,
    params: &ParamStore,
    dataset: &Dataset,
    idx: &[usize],
    m: Modality,
) -> Result<Tensor> {
    let mut acc: Option<Vec<f64>> = None;
    let mut shape = Vec::new();
    for &i in idx {
        let x = model.project(params, m, dataset.instances[i].feature(m))?;
        shape = x.shape().to_vec();
        match acc.as_mut() {
            None => acc = Some(x.data().to_vec()),
            Some(a) => a.iter_mut().zip(x.data()).for_each(|(a, b)| *a += b),
        }
    }
    let acc = acc.ok_or_else(|| Error::arg("no instances to average"))?;
    let n = idx.len() as f64;
    Tensor::new(shape, acc.into_iter().map(|v| v / n).collect())
}

/// Errors on `test`, with the mean fill estimated on `train`.
pub fn reconstruction_errors(
    model: &Model,
    params: &ParamStore,
    dataset: &Dataset,
    train: &[usize],
    test: &[usize],
) -> Result<ReconErrors> {
    if test.is_empty() {
        return Err(Error::arg("nothing to evaluate"));
    }
    let means = Modality::ALL
        .iter()
        .map(|&m| mean_projection(model, params, dataset, train, m))
        .collect::<Result<Vec<_>>>()?;
    let mut sums = [0.0; 3];
    for &i in test {
        let inst = &dataset.instances[i];
        for m in Modality::ALL {
            let others: Vec<Modality> = Modality::ALL.into_iter().filter(|&o| o != m).collect();
            let rec = model.reconstruct(params, inst, ModalityMask::new(&others)?)?;
            let r = &rec[0];
            let zeros = Tensor::zeros(r.target.shape());
            sums[0] += rec_loss(&r.reconstructed, &r.target)?;
            sums[1] += rec_loss(&zeros, &r.target)?;
            sums[2] += rec_loss(&means[m.index()], &r.target)?;
        }
    }
    let n = (3 * test.len()) as f64;
    Ok(ReconErrors {
        model: sums[0] / n,
        zero_fill: sums[1] / n,
        mean_fill: sums[2] / n,
    })
}
