//! Single-sequence inference latency and throughput.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{GestureClassifier, ModelError};
use crate::numerics::{Matrix, Real, SeededRng};

pub const MIN_ITERATIONS: usize = 30;
pub const MIN_WARMUP: usize = 5;
/// Distinct random inputs cycled through during a run.
const INPUT_POOL: usize = 8;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("at least {MIN_ITERATIONS} iterations required, got {0}")]
    Iterations(usize),
    #[error("at least {MIN_WARMUP} warm-up runs required, got {0}")]
    Warmup(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    /// Display label, e.g. `MLA-GRU`.
    pub model: String,
    pub float_bits: u32,
    pub warmup: usize,
    pub iterations: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    /// Sequences per second over the measured loop.
    pub throughput_sps: f64,
    /// Frames per second the model keeps up with at one prediction per
    /// `timesteps` frames.
    pub effective_fps: f64,
    /// Per-iteration latencies in ms, in run order.
    pub samples_ms: Vec<f64>,
}

/// Nearest-rank percentile of sorted data.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Times `forward` on fixed seeded random sequences with a monotonic clock.
/// Warm-up runs are executed but not recorded.
pub fn bench<T: Real>(
    model: &GestureClassifier<T>,
    iterations: usize,
    warmup: usize,
    seed: u64,
) -> Result<BenchReport, BenchError> {
    if iterations < MIN_ITERATIONS {
        return Err(BenchError::Iterations(iterations));
    }
    if warmup < MIN_WARMUP {
        return Err(BenchError::Warmup(warmup));
    }
    let arch = *model.architecture();
    let mut rng = SeededRng::new(seed);
    let inputs: Vec<Matrix<T>> = (0..INPUT_POOL)
        .map(|_| {
            let data = (0..arch.timesteps * arch.input_dim)
                .map(|_| T::lit(rng.uniform(0.0, 1.0)))
                .collect();
            Matrix::from_vec(arch.timesteps, arch.input_dim, data).expect("shape")
        })
        .collect();

    for i in 0..warmup {
        std::hint::black_box(model.forward(&inputs[i % INPUT_POOL])?);
    }
    let mut samples = Vec::with_capacity(iterations);
    let loop_start = Instant::now();
    for i in 0..iterations {
        let t = Instant::now();
        let out = model.forward(std::hint::black_box(&inputs[i % INPUT_POOL]))?;
        samples.push(t.elapsed().as_secs_f64() * 1e3);
        std::hint::black_box(out);
    }
    let elapsed = loop_start.elapsed().as_secs_f64();

    let mut sorted = samples.clone();
    sorted.sort_by(f64::total_cmp);
    let mean_ms = samples.iter().sum::<f64>() / iterations as f64;
    let throughput_sps = iterations as f64 / elapsed;
    Ok(BenchReport {
        model: model.variant().label().to_owned(),
        float_bits: (T::WIDTH.bytes() * 8) as u32,
        warmup,
        iterations,
        mean_ms,
        median_ms: percentile(&sorted, 50.0),
        p95_ms: percentile(&sorted, 95.0),
        min_ms: sorted[0],
        max_ms: sorted[iterations - 1],
        throughput_sps,
        effective_fps: throughput_sps * arch.timesteps as f64,
        samples_ms: samples,
    })
}

/// Comparison table: model, mean latency, throughput.
pub fn render_bench_table(reports: &[BenchReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<10} {:>14} {:>12} {:>12} {:>18} {:>15}",
        "model", "inference (ms)", "median (ms)", "p95 (ms)", "throughput (seq/s)", "effective fps"
    );
    for r in reports {
        let _ = writeln!(
            out,
            "{:<10} {:>14.2} {:>12.2} {:>12.2} {:>18.2} {:>15.1}",
            r.model, r.mean_ms, r.median_ms, r.p95_ms, r.throughput_sps, r.effective_fps
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Architecture, Variant};

    #[test]
    fn percentile_nearest_rank() {
        let v: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(percentile(&v, 50.0), 10.0);
        assert_eq!(percentile(&v, 95.0), 19.0);
        assert_eq!(percentile(&v, 100.0), 20.0);
        assert_eq!(percentile(&[3.0], 95.0), 3.0);
    }

    #[test]
    fn report_is_consistent() {
        let arch = Architecture {
            variant: Variant::MlaGru,
            timesteps: 30,
            input_dim: 16,
            gru_units: [4, 6, 4],
            dense_units: [8, 8],
            num_classes: 5,
        };
        let names = (0..5).map(|i| i.to_string()).collect();
        let m = GestureClassifier::<f32>::new(arch, names, 2).unwrap();
        let r = bench(&m, 40, 5, 1).unwrap();
        assert_eq!(r.samples_ms.len(), 40);
        assert!(r.p95_ms >= r.median_ms && r.min_ms <= r.median_ms);
        assert!(r.throughput_sps > 0.0);
        assert_eq!(r.float_bits, 32);
        assert!(matches!(bench(&m, 29, 5, 1), Err(BenchError::Iterations(29))));
        assert!(matches!(bench(&m, 30, 4, 1), Err(BenchError::Warmup(4))));
        let table = render_bench_table(&[r]);
        assert_eq!(table.lines().count(), 2);
        assert!(table.lines().nth(1).unwrap().starts_with("MLA-GRU"));
    }
}
