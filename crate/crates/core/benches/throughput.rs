//! Sequential vs data-parallel execution of the three parallel loops:
//! a training step over a batch, the threshold sweep of an evaluation, and
//! synthetic sequence generation.

use std::hint::black_box;
use std::time::Duration;

use aftn::data::{generate_sequence, PairSampler, SequenceRecord, SynthConfig};
use aftn::network::{FenConfig, HeadConfig, PatchPair, TrackerModel, Variant};
use aftn::numerics::Mode;
use aftn::parallel::{map_range, Execution};
use aftn::trackeval::{evaluate, ModelTracker};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const PATHS: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn short_sequences(n: usize, length: f64) -> Vec<SequenceRecord> {
    let cfg = SynthConfig {
        mean_length: length,
        length_jitter: 0.0,
        seed: 5,
        ..SynthConfig::default()
    };
    (0..n).map(|i| generate_sequence(&cfg, i).unwrap().record).collect()
}

fn model() -> TrackerModel {
    let fen = FenConfig {
        frozen: false,
        ..FenConfig::default()
    };
    TrackerModel::new(Variant::Aftn, fen, HeadConfig::default(), 1).unwrap()
}

fn train_step(c: &mut Criterion) {
    let seqs = short_sequences(2, 6.0);
    let mut m = model();
    let sampler = PairSampler::new(&seqs, [110.0; 3], m.input_size()).unwrap();
    let batch = sampler
        .sample(&seqs, 8, &mut ChaCha8Rng::seed_from_u64(0), Execution::Sequential)
        .unwrap();
    let inputs: Vec<PatchPair<'_>> = batch
        .iter()
        .map(|p| PatchPair {
            prev: Some(&p.prev_patch.pixels),
            curr: &p.curr_patch.pixels,
        })
        .collect();
    let mut group = c.benchmark_group("train_step_batch8");
    for (name, exec) in PATHS {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                let mut rng = ChaCha8Rng::seed_from_u64(1);
                let (out, trace) = m.forward_batch(&inputs, Mode::Train, &mut rng, exec).unwrap();
                let grads = m.backward_batch(&trace, &vec![[0.1; 3]; out.len()], exec).unwrap();
                black_box(grads);
            })
        });
    }
    group.finish();
}

fn evaluation(c: &mut Criterion) {
    let seqs = short_sequences(4, 8.0);
    let m = model();
    let tracker = ModelTracker::new(&m);
    let mut group = c.benchmark_group("evaluate_4x8_frames");
    for (name, exec) in PATHS {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| black_box(evaluate(&tracker, &seqs, 0.01, exec).unwrap().scores.overall))
        });
    }
    group.finish();
}

fn generation(c: &mut Criterion) {
    let cfg = SynthConfig {
        mean_length: 10.0,
        length_jitter: 0.0,
        ..SynthConfig::default()
    };
    let mut group = c.benchmark_group("generate_4x10_frames");
    for (name, exec) in PATHS {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| black_box(map_range(exec, 4, |i| generate_sequence(&cfg, i).unwrap().record.len())))
        });
    }
    group.finish();
}

fn config() -> Criterion {
    Criterion::default()
        .configure_from_args()
        .warm_up_time(Duration::from_secs(1))
        .measurement_time(Duration::from_secs(5))
        .sample_size(10)
}

criterion_group! {
    name = benches;
    config = config();
    targets = train_step, evaluation, generation
}
criterion_main!(benches);
