use rand::seq::SliceRandom;

use super::{Dataset, ModalityMask};
use crate::error::{Error, Result};
use crate::numcore::seeded_rng;

/// Instance indices into a dataset plus one availability mask per instance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub masks: Vec<ModalityMask>,
}

impl Batch {
    pub fn full(indices: Vec<usize>) -> Self {
        let masks = vec![ModalityMask::FULL; indices.len()];
        Self { indices, masks }
    }

    /// Every instance shares `mask`.
    pub fn shared(indices: Vec<usize>, mask: ModalityMask) -> Self {
        let masks = vec![mask; indices.len()];
        Self { indices, masks }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Splits the dataset into batches of `batch_size`. A trailing batch of one
/// instance is merged into the previous batch. Masks start out full.
pub fn make_batches(
    dataset: &Dataset,
    batch_size: usize,
    seed: u64,
    shuffle: bool,
) -> Result<Vec<Batch>> {
    if batch_size < 2 {
        return Err(Error::arg(format!(
            "batch size must be at least 2, got {batch_size}"
        )));
    }
    if dataset.len() < 2 {
        return Err(Error::arg("need at least 2 instances to batch"));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    if shuffle {
        order.shuffle(&mut seeded_rng(seed));
    }
    let mut chunks: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if chunks.len() > 1 && chunks.last().is_some_and(|c| c.len() < 2) {
        let tail = chunks.pop().unwrap();
        chunks.last_mut().unwrap().extend(tail);
    }
    Ok(chunks.into_iter().map(Batch::full).collect())
}

/// Train / validation / test instance indices, each sorted ascending.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// Fold `k` is the test set, fold `k + 1` the validation set.
    pub fn from_folds(folds: &[Vec<usize>], k: usize) -> Result<Self> {
        if folds.len() < 3 || k >= folds.len() {
            return Err(Error::arg(
                "fold mode needs at least 3 folds and a valid index",
            ));
        }
        let v = (k + 1) % folds.len();
        let mut train: Vec<usize> = folds
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != k && *i != v)
            .flat_map(|(_, f)| f.iter().copied())
            .collect();
        train.sort_unstable();
        Ok(Self {
            train,
            val: folds[v].clone(),
            test: folds[k].clone(),
        })
    }
}

fn class_indices(dataset: &Dataset, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = seeded_rng(seed);
    let mut per_class = vec![Vec::new(); dataset.num_classes()];
    for (i, inst) in dataset.instances.iter().enumerate() {
        per_class[inst.label].push(i);
    }
    for idx in &mut per_class {
        idx.shuffle(&mut rng);
    }
    per_class
}

/// Seeded split that keeps each class's proportion in every part.
pub fn stratified_split(
    dataset: &Dataset,
    val_frac: f64,
    test_frac: f64,
    seed: u64,
) -> Result<Split> {
    if !(0.0..1.0).contains(&val_frac)
        || !(0.0..1.0).contains(&test_frac)
        || val_frac + test_frac >= 1.0
    {
        return Err(Error::arg(
            "split fractions must be in [0, 1) and sum below 1",
        ));
    }
    let mut split = Split {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for idx in class_indices(dataset, seed) {
        let n = idx.len() as f64;
        let n_test = (n * test_frac).round() as usize;
        let n_val = (n * val_frac).round() as usize;
        split.test.extend(&idx[..n_test]);
        split.val.extend(&idx[n_test..n_test + n_val]);
        split.train.extend(&idx[n_test + n_val..]);
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}

/// `k` stratified folds, dealt round-robin per class after a seeded shuffle.
pub fn stratified_folds(dataset: &Dataset, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::arg("need at least 2 folds"));
    }
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for idx in class_indices(dataset, seed) {
        for i in idx {
            folds[next % k].push(i);
            next += 1;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SynthConfig};

    fn dataset(n: usize) -> Dataset {
        let cfg = SynthConfig {
            num_classes: 2,
            n_per_class: n.div_ceil(2),
            lengths: [2; 3],
            dims: [2; 3],
            ..SynthConfig::default()
        };
        let mut d = generate_synthetic(&cfg, 0).unwrap();
        d.instances.truncate(n);
        d
    }

    fn sizes(b: &[Batch]) -> Vec<usize> {
        b.iter().map(Batch::len).collect()
    }

    #[test]
    fn batch_sizes() {
        assert_eq!(
            sizes(&make_batches(&dataset(10), 4, 0, false).unwrap()),
            [4, 4, 2]
        );
        assert_eq!(
            sizes(&make_batches(&dataset(9), 4, 0, true).unwrap()),
            [4, 5]
        );
        assert_eq!(sizes(&make_batches(&dataset(3), 2, 0, true).unwrap()), [3]);
    }

    #[test]
    fn batching_is_deterministic_and_covers_everything() {
        let d = dataset(23);
        let a = make_batches(&d, 4, 11, true).unwrap();
        assert_eq!(a, make_batches(&d, 4, 11, true).unwrap());
        assert_ne!(a, make_batches(&d, 4, 12, true).unwrap());
        let mut all: Vec<usize> = a.iter().flat_map(|b| b.indices.clone()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
    }

    #[test]
    fn batching_errors() {
        assert!(matches!(
            make_batches(&dataset(10), 1, 0, true),
            Err(Error::Argument(_))
        ));
        assert!(matches!(
            make_batches(&dataset(1), 4, 0, true),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn split_is_stratified_and_disjoint() {
        let d = generate_synthetic(&SynthConfig::default(), 0).unwrap();
        let s = stratified_split(&d, 0.15, 0.15, 4).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (280, 60, 60));
        for part in [&s.val, &s.test] {
            let mut counts = [0; 4];
            for &i in part.iter() {
                counts[d.instances[i].label] += 1;
            }
            assert_eq!(counts, [15; 4]);
        }
        let mut all = [s.train.clone(), s.val.clone(), s.test.clone()].concat();
        all.sort_unstable();
        assert_eq!(all, (0..400).collect::<Vec<_>>());
    }

    #[test]
    fn folds_partition_the_dataset() {
        let d = dataset(20);
        let folds = stratified_folds(&d, 5, 1).unwrap();
        assert!(folds.iter().all(|f| f.len() == 4));
        let split = Split::from_folds(&folds, 4).unwrap();
        assert_eq!(split.test, folds[4]);
        assert_eq!(split.val, folds[0]);
        assert_eq!(split.train.len(), 12);
    }
}
