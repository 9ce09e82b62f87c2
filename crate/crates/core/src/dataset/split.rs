use super::{DatasetError, GestureSequence, NUM_CLASSES};
use crate::numerics::SeededRng;

/// Index partition produced by [`stratified_split`]. Both lists are sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn select<'a, T>(&self, items: &'a [T]) -> (Vec<&'a T>, Vec<&'a T>) {
        (
            self.train.iter().map(|&i| &items[i]).collect(),
            self.test.iter().map(|&i| &items[i]).collect(),
        )
    }
}

/// Per-class shuffled split. Each class contributes
/// `round(train_fraction × count)` samples to the training side, clamped so
/// that both sides receive at least one sample of every present class.
pub fn stratified_split(
    samples: &[GestureSequence],
    train_fraction: f64,
    seed: u64,
) -> Result<Split, DatasetError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DatasetError::TrainFraction(train_fraction));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); NUM_CLASSES];
    for (i, s) in samples.iter().enumerate() {
        let label = s.label.ok_or(DatasetError::Unlabeled(i))?;
        by_class[label].push(i);
    }
    for (class, idx) in by_class.iter().enumerate() {
        if idx.len() == 1 {
            return Err(DatasetError::ClassTooSmall { class, count: 1 });
        }
    }

    let mut rng = SeededRng::derive(seed, 0x0053_504c_4954);
    let mut split = Split {
        train: Vec::new(),
        test: Vec::new(),
    };
    for mut idx in by_class.into_iter().filter(|v| !v.is_empty()) {
        rng.shuffle(&mut idx);
        let n = idx.len();
        let n_train = ((train_fraction * n as f64).round() as usize).clamp(1, n - 1);
        split.train.extend_from_slice(&idx[..n_train]);
        split.test.extend_from_slice(&idx[n_train..]);
    }
    split.train.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{LandmarkFrame, TIMESTEPS};

    fn labelled(per_class: &[usize]) -> Vec<GestureSequence> {
        let frames = vec![LandmarkFrame::zeros(); TIMESTEPS];
        per_class
            .iter()
            .enumerate()
            .flat_map(|(c, &n)| {
                let frames = frames.clone();
                (0..n).map(move |_| GestureSequence::new(frames.clone(), Some(c)).unwrap())
            })
            .collect()
    }

    #[test]
    fn thirty_per_class_gives_24_and_6() {
        let samples = labelled(&[30; 21]);
        let split = stratified_split(&samples, 0.8, 7).unwrap();
        assert_eq!(split.train.len(), 504);
        assert_eq!(split.test.len(), 126);
        for c in 0..21 {
            let tr = split.train.iter().filter(|&&i| samples[i].label == Some(c)).count();
            let te = split.test.iter().filter(|&&i| samples[i].label == Some(c)).count();
            assert_eq!((tr, te), (24, 6));
        }
    }

    #[test]
    fn partition_is_disjoint_and_complete() {
        let samples = labelled(&[5, 7, 2, 0, 11]);
        let split = stratified_split(&samples, 0.8, 1).unwrap();
        let mut all: Vec<usize> = split.train.iter().chain(&split.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..samples.len()).collect::<Vec<_>>());
    }

    #[test]
    fn deterministic_per_seed() {
        let samples = labelled(&[10; 21]);
        let a = stratified_split(&samples, 0.8, 99).unwrap();
        let b = stratified_split(&samples, 0.8, 99).unwrap();
        let c = stratified_split(&samples, 0.8, 100).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_bad_fraction_and_tiny_classes() {
        let samples = labelled(&[4, 4]);
        assert_eq!(
            stratified_split(&samples, 1.0, 0),
            Err(DatasetError::TrainFraction(1.0))
        );
        assert!(stratified_split(&samples, 0.0, 0).is_err());
        let samples = labelled(&[4, 1]);
        assert_eq!(
            stratified_split(&samples, 0.8, 0),
            Err(DatasetError::ClassTooSmall { class: 1, count: 1 })
        );
    }
}
