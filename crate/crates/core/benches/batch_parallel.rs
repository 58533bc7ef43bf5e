use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use fisel::data::{generate_synthetic, EncodedSample, LogBase, SyntheticConfig};
use fisel::model::ModelParams;
use fisel::par::Exec;
use fisel::selection::{MaskSource, SelectionParams};
use fisel::trainer::{accumulate_model_grads, accumulate_selection_grads, Dataset, TrainConfig};

fn dataset() -> Dataset {
    let synth = generate_synthetic(&SyntheticConfig {
        n_fields: 12,
        values_per_field: 50,
        n_samples: 8192,
        planted_pairs: vec![(0, 1), (2, 3), (4, 5)],
        noise: 0.5,
        seed: 7,
    })
    .unwrap();
    Dataset::from_rows(&synth.schema, synth.rows, [0.5, 0.25, 0.25], 7, 1, LogBase::default())
        .unwrap()
        .1
}

fn bench(c: &mut Criterion) {
    let data = dataset();
    let cfg = TrainConfig::default();
    let mut model = ModelParams::init(cfg.model_config(&data), 1).unwrap();
    let mut selection = SelectionParams::init(cfg.selection_config(), &data.field_sizes, 2).unwrap();
    let mut group = c.benchmark_group("batch");
    for size in [256usize, 2048] {
        let batch: Vec<&EncodedSample> = data.train.iter().take(size).collect();
        for (name, exec) in [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)] {
            group.bench_with_input(BenchmarkId::new(format!("model_grads/{name}"), size), &batch, |b, batch| {
                b.iter(|| {
                    model.zero_grad();
                    accumulate_model_grads(&mut model, batch, MaskSource::Ones, exec).unwrap()
                })
            });
            group.bench_with_input(BenchmarkId::new(format!("selection_grads/{name}"), size), &batch, |b, batch| {
                b.iter(|| {
                    selection.zero_grad();
                    accumulate_selection_grads(&mut selection, &model, batch, exec).unwrap()
                })
            });
        }
    }
    group.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
