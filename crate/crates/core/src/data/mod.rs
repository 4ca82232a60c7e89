//! Multimodal instances, availability masks, synthetic generation, the
//! on-disk dataset format, batching and splits.

mod batch;
mod io;
mod mask;
mod synth;

pub use batch::{make_batches, stratified_folds, stratified_split, Batch, Split};
pub use io::{load_dataset, read_f32_file, save_dataset, write_f32_file, F32_MAGIC};
pub use mask::{sample_missing_pattern, MissingPolicy, ModalityMask};
pub use synth::{generate_synthetic, SynthConfig};

use std::fmt;

use crate::error::{Error, Result};
use crate::numcore::Tensor;

/// One input stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Modality {
    Speech,
    Video,
    Text,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Speech, Modality::Video, Modality::Text];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn short(self) -> &'static str {
        match self {
            Modality::Speech => "s",
            Modality::Video => "v",
            Modality::Text => "t",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "s" | "speech" => Ok(Modality::Speech),
            "v" | "video" => Ok(Modality::Video),
            "t" | "text" => Ok(Modality::Text),
            other => Err(Error::arg(format!("unknown modality {other:?}"))),
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short())
    }
}

/// One utterance: a `T_m x d_m` frame sequence per modality and a label.
///
/// All three modalities are always stored; missingness is simulated with a
/// [`ModalityMask`].
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub id: String,
    pub features: [Tensor; 3],
    pub label: usize,
}

impl Instance {
    pub fn feature(&self, m: Modality) -> &Tensor {
        &self.features[m.index()]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub instances: Vec<Instance>,
    pub class_names: Vec<String>,
    /// Feature width per modality, indexed by [`Modality::index`].
    pub dims: [usize; 3],
}

pub fn default_class_names() -> Vec<String> {
    ["ang", "hap", "neu", "sad"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

impl Dataset {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.instances.iter().map(|i| i.label).collect()
    }

    /// Checks labels, per-modality widths, and that at least two classes
    /// have two or more instances each.
    pub fn validate(&self) -> Result<()> {
        let c = self.num_classes();
        let mut counts = vec![0usize; c];
        for inst in &self.instances {
            if inst.label >= c {
                return Err(Error::arg(format!(
                    "instance {} has label {} but there are {c} classes",
                    inst.id, inst.label
                )));
            }
            counts[inst.label] += 1;
            for m in Modality::ALL {
                let t = inst.feature(m);
                if t.cols() != self.dims[m.index()] || t.rows() == 0 {
                    return Err(Error::shape(format!(
                        "instance {} modality {m} has shape {:?}, expected width {}",
                        inst.id,
                        t.dims(),
                        self.dims[m.index()]
                    )));
                }
            }
        }
        if counts.iter().filter(|&&n| n >= 2).count() < 2 {
            return Err(Error::arg(
                "need at least 2 classes with 2 or more instances",
            ));
        }
        Ok(())
    }

    /// New dataset holding the instances at `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            instances: idx.iter().map(|&i| self.instances[i].clone()).collect(),
            class_names: self.class_names.clone(),
            dims: self.dims,
        }
    }
}
