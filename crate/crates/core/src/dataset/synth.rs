//! Synthetic gesture sequences with the same layout as recorded landmarks.
//!
//! Every generated frame starts from a neutral body (pose, hands and face at
//! plausible normalised coordinates). Class identity lives in 40 signal
//! coordinates, the x/y values of the upper-body pose landmarks 11..=22 and of
//! four landmarks on each hand: for class `k` and signal coordinate `j` the
//! value follows `base_j + A·sin(2π f_kj t / T + φ_kj)` with a frequency from
//! {0.5, 1, 1.5, 2} cycles per window and a uniform phase. The default
//! amplitude of 0.5 sweeps a landmark across the whole normalised frame;
//! much smaller motions do not train within 100 epochs. White noise of the
//! configured standard deviation is added to every present feature. A
//! configurable fraction of samples drops one hand (zero block), as a
//! landmark extractor does when a hand leaves the frame.

use super::{
    GestureSequence, LandmarkFrame, FEATURE_DIM, LEFT_HAND, NUM_CLASSES, POINT_VALUES, POSE,
    POSE_VALUES, RIGHT_HAND, TIMESTEPS,
};
use crate::numerics::SeededRng;

const POSE_SIGNAL_LANDMARKS: std::ops::RangeInclusive<usize> = 11..=22;
const HAND_SIGNAL_LANDMARKS: [usize; 4] = [0, 4, 8, 12];
const FREQUENCIES: [f64; 4] = [0.5, 1.0, 1.5, 2.0];

/// Feature indices that carry class signal.
pub static SIGNAL_FEATURES: std::sync::LazyLock<Vec<usize>> = std::sync::LazyLock::new(|| {
    let mut idx = Vec::with_capacity(40);
    for lm in POSE_SIGNAL_LANDMARKS {
        idx.push(POSE.start + lm * POSE_VALUES);
        idx.push(POSE.start + lm * POSE_VALUES + 1);
    }
    for block in [LEFT_HAND, RIGHT_HAND] {
        for lm in HAND_SIGNAL_LANDMARKS {
            idx.push(block.start + lm * POINT_VALUES);
            idx.push(block.start + lm * POINT_VALUES + 1);
        }
    }
    idx
});

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub per_class: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Probability that a sample loses one (randomly chosen) hand.
    pub absent_hand_fraction: f64,
    pub amplitude: f64,
}

impl SynthConfig {
    pub fn new(per_class: usize, noise_sigma: f64, seed: u64) -> Self {
        SynthConfig {
            per_class,
            noise_sigma,
            seed,
            absent_hand_fraction: 0.2,
            amplitude: 0.5,
        }
    }

    fn neutral_frame(&self) -> Vec<f32> {
        let mut rng = SeededRng::derive(self.seed, 0x4e45_5554);
        let mut v = vec![0.0f32; FEATURE_DIM];
        for lm in 0..(POSE.len() / POSE_VALUES) {
            let o = POSE.start + lm * POSE_VALUES;
            v[o] = rng.uniform(0.3, 0.7) as f32;
            v[o + 1] = rng.uniform(0.2, 0.8) as f32;
            v[o + 2] = rng.uniform(-0.3, 0.0) as f32;
            v[o + 3] = rng.uniform(0.9, 1.0) as f32;
        }
        for p in (POSE.end..FEATURE_DIM).step_by(POINT_VALUES) {
            v[p] = rng.uniform(0.3, 0.7) as f32;
            v[p + 1] = rng.uniform(0.2, 0.8) as f32;
            v[p + 2] = rng.uniform(-0.05, 0.05) as f32;
        }
        v
    }

    /// Frequency and phase of every signal coordinate, per class.
    fn class_waves(&self) -> Vec<Vec<(f64, f64)>> {
        let mut rng = SeededRng::derive(self.seed, 0x5741_5645);
        (0..NUM_CLASSES)
            .map(|_| {
                SIGNAL_FEATURES
                    .iter()
                    .map(|_| {
                        let f = FREQUENCIES[rng.below(FREQUENCIES.len())];
                        let phase = rng.uniform(0.0, std::f64::consts::TAU);
                        (f, phase)
                    })
                    .collect()
            })
            .collect()
    }

    /// Noise-free frames of class `k` with both hands present.
    pub fn class_trajectory(&self, class: usize) -> Vec<Vec<f32>> {
        let base = self.neutral_frame();
        let waves = self.class_waves();
        trajectory(&base, &waves[class], self.amplitude)
    }
}

fn trajectory(base: &[f32], waves: &[(f64, f64)], amplitude: f64) -> Vec<Vec<f32>> {
    (0..TIMESTEPS)
        .map(|t| {
            let mut frame = base.to_vec();
            for (&feature, &(f, phase)) in SIGNAL_FEATURES.iter().zip(waves) {
                let angle = std::f64::consts::TAU * f * t as f64 / TIMESTEPS as f64 + phase;
                frame[feature] = (base[feature] as f64 + amplitude * angle.sin()) as f32;
            }
            frame
        })
        .collect()
}

/// Generates `per_class` labelled sequences for each of the 21 classes,
/// ordered by class.
pub fn synth_generate(config: &SynthConfig) -> Vec<GestureSequence> {
    let base = config.neutral_frame();
    let waves = config.class_waves();
    let mut rng = SeededRng::derive(config.seed, 0x5341_4d50);
    let mut out = Vec::with_capacity(NUM_CLASSES * config.per_class);
    for (class, class_waves) in waves.iter().enumerate() {
        let clean = trajectory(&base, class_waves, config.amplitude);
        for i in 0..config.per_class {
            let absent = if rng.bernoulli(config.absent_hand_fraction) {
                Some(if rng.bernoulli(0.5) { LEFT_HAND } else { RIGHT_HAND })
            } else {
                None
            };
            let frames = clean
                .iter()
                .map(|clean_frame| {
                    let mut v = clean_frame.clone();
                    if config.noise_sigma > 0.0 {
                        for x in v.iter_mut() {
                            *x += (config.noise_sigma * rng.normal()) as f32;
                        }
                    }
                    if let Some(block) = absent.clone() {
                        v[block].fill(0.0);
                    }
                    LandmarkFrame::new(v).expect("generator respects the layout")
                })
                .collect();
            out.push(
                GestureSequence::new(frames, Some(class))
                    .expect("generator respects the layout")
                    .with_source(format!("synth-{class}-{i}")),
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::class_histogram;

    fn hands_present(s: &GestureSequence) -> bool {
        let f = &s.frames()[0];
        f.left_hand().iter().any(|&v| v != 0.0) && f.right_hand().iter().any(|&v| v != 0.0)
    }

    #[test]
    fn signal_features_span_pose_and_hands() {
        assert_eq!(SIGNAL_FEATURES.len(), 40);
        assert_eq!(SIGNAL_FEATURES.iter().filter(|&&i| POSE.contains(&i)).count(), 24);
        assert_eq!(SIGNAL_FEATURES.iter().filter(|&&i| LEFT_HAND.contains(&i)).count(), 8);
        assert_eq!(SIGNAL_FEATURES.iter().filter(|&&i| RIGHT_HAND.contains(&i)).count(), 8);
    }

    #[test]
    fn noiseless_samples_of_a_class_are_identical() {
        let samples = synth_generate(&SynthConfig::new(10, 0.0, 3));
        for class in 0..NUM_CLASSES {
            let full: Vec<_> = samples
                .iter()
                .filter(|s| s.label == Some(class) && hands_present(s))
                .collect();
            assert!(full.len() >= 2);
            for s in &full[1..] {
                assert_eq!(s.frames(), full[0].frames());
            }
        }
        let mut cfg = SynthConfig::new(3, 0.0, 3);
        cfg.absent_hand_fraction = 0.0;
        let s = synth_generate(&cfg);
        assert_eq!(s[0].frames(), s[1].frames());
        assert_eq!(s[1].frames(), s[2].frames());
    }

    #[test]
    fn same_seed_same_dataset() {
        let a = synth_generate(&SynthConfig::new(2, 0.05, 11));
        let b = synth_generate(&SynthConfig::new(2, 0.05, 11));
        assert_eq!(a, b);
        let c = synth_generate(&SynthConfig::new(2, 0.05, 12));
        assert_ne!(a, c);
    }

    #[test]
    fn histogram_and_absent_hands() {
        let samples = synth_generate(&SynthConfig::new(30, 0.02, 7));
        assert_eq!(class_histogram(&samples, NUM_CLASSES), vec![30; 21]);
        let absent = samples.iter().filter(|s| !hands_present(s)).count();
        // 630 Bernoulli(0.2) draws: mean 126, s.d. 10.
        assert!((80..=170).contains(&absent), "{absent} samples lost a hand");
        for s in samples.iter().filter(|s| !hands_present(s)) {
            for f in s.frames() {
                let left_zero = f.left_hand().iter().all(|&v| v == 0.0);
                let right_zero = f.right_hand().iter().all(|&v| v == 0.0);
                assert!(left_zero ^ right_zero);
            }
        }
    }

    #[test]
    fn trajectory_matches_generated_clean_sample() {
        let mut cfg = SynthConfig::new(1, 0.0, 5);
        cfg.absent_hand_fraction = 0.0;
        let samples = synth_generate(&cfg);
        for class in [0, 9, 20] {
            let traj = cfg.class_trajectory(class);
            for (f, t) in samples[class].frames().iter().zip(&traj) {
                assert_eq!(f.values(), &t[..]);
            }
        }
    }
}
