use rand::Rng as _;
use rand_distr::StandardNormal;

use super::{default_class_names, Dataset, Instance, Modality};
use crate::error::{Error, Result};
use crate::numcore::{seeded_rng, Rng, Tensor};

/// Width of the sinusoidal frame-position code mixed into every frame.
const POS_DIM: usize = 4;

/// Parameters of the synthetic feature generator.
///
/// Every instance draws a semantic vector shared by its three modalities and
/// an emotion vector (class prototype plus jitter). Frame `k` of modality `m`
/// is a fixed random linear map of
/// `[semantic, strength_m * emotion, pos(k)]` plus Gaussian noise.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub n_per_class: usize,
    /// Feature width per modality (s, v, t).
    pub dims: [usize; 3],
    /// Sequence length per modality (s, v, t).
    pub lengths: [usize; 3],
    pub semantic_dim: usize,
    pub emotion_dim: usize,
    pub emotion_jitter: f64,
    pub noise_std: f64,
    /// Emotion signal strength per modality (s, v, t).
    pub strengths: [f64; 3],
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_classes: 4,
            n_per_class: 100,
            dims: [16, 16, 16],
            lengths: [12, 10, 8],
            semantic_dim: 8,
            emotion_dim: 4,
            emotion_jitter: 0.3,
            noise_std: 0.3,
            strengths: [1.0, 0.5, 1.0],
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::arg(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        let counts = [self.n_per_class, self.emotion_dim]
            .into_iter()
            .chain(self.dims)
            .chain(self.lengths);
        if counts.into_iter().any(|c| c == 0) {
            return Err(Error::arg("all counts must be at least 1"));
        }
        if !(self.noise_std >= 0.0) || !(self.emotion_jitter >= 0.0) {
            return Err(Error::arg(
                "noise_std and emotion_jitter must be non-negative",
            ));
        }
        if self.strengths.iter().any(|s| !s.is_finite()) {
            return Err(Error::arg("modality strengths must be finite"));
        }
        Ok(())
    }
}

fn normal(rng: &mut Rng) -> f64 {
    rng.sample::<f64, _>(StandardNormal)
}

fn pos_code(k: usize, len: usize) -> [f64; POS_DIM] {
    let phase = std::f64::consts::PI * (k as f64 + 0.5) / len as f64;
    [
        phase.sin(),
        phase.cos(),
        (2.0 * phase).sin(),
        (2.0 * phase).cos(),
    ]
}

/// Values are rounded through `f32` so the dataset survives the on-disk
/// format bit for bit.
pub fn generate_synthetic(config: &SynthConfig, seed: u64) -> Result<Dataset> {
    config.validate()?;
    let mut rng = seeded_rng(seed);
    let in_dim = config.semantic_dim + config.emotion_dim + POS_DIM;
    let scale = 1.0 / (in_dim as f64).sqrt();
    let maps: Vec<Vec<f64>> = config
        .dims
        .iter()
        .map(|&d| (0..d * in_dim).map(|_| normal(&mut rng) * scale).collect())
        .collect();
    let prototypes: Vec<Vec<f64>> = (0..config.num_classes)
        .map(|_| (0..config.emotion_dim).map(|_| normal(&mut rng)).collect())
        .collect();

    let total = config.num_classes * config.n_per_class;
    let mut instances = Vec::with_capacity(total);
    for idx in 0..total {
        let label = idx % config.num_classes;
        let semantic: Vec<f64> = (0..config.semantic_dim).map(|_| normal(&mut rng)).collect();
        let emotion: Vec<f64> = prototypes[label]
            .iter()
            .map(|p| p + config.emotion_jitter * normal(&mut rng))
            .collect();
        let features = Modality::ALL.map(|m| {
            let (d, len, strength) = (
                config.dims[m.index()],
                config.lengths[m.index()],
                config.strengths[m.index()],
            );
            let map = &maps[m.index()];
            let mut data = Vec::with_capacity(len * d);
            for k in 0..len {
                let u: Vec<f64> = semantic
                    .iter()
                    .copied()
                    .chain(emotion.iter().map(|e| e * strength))
                    .chain(pos_code(k, len))
                    .collect();
                for row in 0..d {
                    let w = &map[row * in_dim..(row + 1) * in_dim];
                    let v: f64 = w.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>()
                        + config.noise_std * normal(&mut rng);
                    data.push(v as f32 as f64);
                }
            }
            Tensor::matrix(len, d, data).expect("generator produced a bad shape")
        });
        instances.push(Instance {
            id: format!("syn{idx:05}"),
            features,
            label,
        });
    }
    let class_names = if config.num_classes == 4 {
        default_class_names()
    } else {
        (0..config.num_classes)
            .map(|c| format!("class{c}"))
            .collect()
    };
    Ok(Dataset {
        instances,
        class_names,
        dims: config.dims,
    })
}
