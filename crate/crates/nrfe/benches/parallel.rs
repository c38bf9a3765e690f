//! Sequential vs data-parallel throughput for the batch paths: student
//! corpus evaluation and distillation-target computation.

use std::collections::HashMap;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use nrfe::harness::{evaluate_batch, make_synthetic_corpus, Parallelism, RunConfig};
use nrfe::student::{compute_distill_targets, Student};
use nrfe::teacher::Teacher;
use nrfe::encoder::Vocab;

fn setup() -> (Vec<nrfe::dataio::NewsItem>, Teacher, Student, HashMap<String, String>) {
    let (items, store) = make_synthetic_corpus(128, 7).unwrap();
    let config = RunConfig {
        encoder_width: 16,
        encoder_depth: 2,
        classifier_hidden: 16,
        ..Default::default()
    };
    let news_vocab = Vocab::build(items.iter().map(|i| i.text.as_str()));
    let reasoning_vocab = Vocab::build(store.iter().map(|e| e.reasoning_text.as_str()));
    let teacher = Teacher::new(config.teacher_config(), news_vocab, reasoning_vocab, 1).unwrap();
    let student = Student::from_teacher(&teacher, 2).unwrap();
    let reasoning = nrfe::harness::positive_reasoning_map(&store);
    (items, teacher, student, reasoning)
}

fn bench_batch_eval(c: &mut Criterion) {
    let (items, _, student, _) = setup();
    let mut group = c.benchmark_group("batch_eval");
    for par in [Parallelism::Sequential, Parallelism::Rayon] {
        let name = match par {
            Parallelism::Sequential => "sequential",
            Parallelism::Rayon => "rayon",
        };
        group.bench_with_input(BenchmarkId::from_parameter(name), &par, |b, &par| {
            b.iter(|| evaluate_batch(&student, &items, par).unwrap());
        });
    }
    group.finish();
}

fn bench_distill_targets(c: &mut Criterion) {
    let (items, teacher, _, reasoning) = setup();
    let mut group = c.benchmark_group("distill_targets");
    group.sample_size(10);
    // compute_distill_targets parallelizes internally when the feature
    // is on; the sequential baseline maps item by item.
    group.bench_function("sequential", |b| {
        b.iter(|| {
            let _: Vec<_> = items
                .iter()
                .filter_map(|i| reasoning.get(&i.id).map(|r| (i, r)))
                .map(|(i, r)| teacher.fused_representation(&i.text, r).unwrap())
                .collect();
        });
    });
    group.bench_function("parallel", |b| {
        b.iter(|| compute_distill_targets(&teacher, &items, &reasoning).unwrap());
    });
    group.finish();
}

criterion_group!(benches, bench_batch_eval, bench_distill_targets);
criterion_main!(benches);
