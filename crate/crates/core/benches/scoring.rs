//! Sequential vs rayon fill of the BLEU/TER score matrices and the
//! in-process transcript generation feeding them.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use lmattr::attribute::{score_matrices, AttributeOptions};
use lmattr::exec::Execution;
use lmattr::harness::CorpusSpec;
use lmattr::interrogator::{InterrogationConfig, ModelKind};
use lmattr::simnet::{in_process_store, FamilyTemplate, SyntheticFamily};

fn bench(c: &mut Criterion) {
    let family = SyntheticFamily::from_spec(&FamilyTemplate::default().instantiate(1).unwrap()).unwrap();
    let corpus = CorpusSpec {
        per_dataset: 3,
        ..Default::default()
    }
    .build()
    .unwrap();
    let config = InterrogationConfig::default();
    let store = in_process_store(&family, &corpus, &config, Execution::Parallel).unwrap();
    let (base, ft) = (store.of_kind(ModelKind::Base), store.of_kind(ModelKind::Finetuned));

    let mut group = c.benchmark_group("score_matrices");
    group.sample_size(10);
    for execution in [Execution::Sequential, Execution::Parallel] {
        let options = AttributeOptions {
            execution,
            ..Default::default()
        };
        group.bench_with_input(BenchmarkId::from_parameter(format!("{execution:?}")), &options, |b, o| {
            b.iter(|| score_matrices(&base, &ft, &corpus, o).unwrap())
        });
    }
    group.finish();

    let mut group = c.benchmark_group("in_process_store");
    group.sample_size(10);
    for execution in [Execution::Sequential, Execution::Parallel] {
        group.bench_function(format!("{execution:?}"), |b| {
            b.iter(|| in_process_store(&family, &corpus, &config, execution).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
