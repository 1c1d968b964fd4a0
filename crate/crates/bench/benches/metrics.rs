use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use todsim::annotation::kappa_table;
use todsim::metrics::{bleu, mtld, rouge_l, MTLD_THRESHOLD};
use todsim_bench::{random_annotations, random_tokens};

fn bench_mtld(c: &mut Criterion) {
    let mut group = c.benchmark_group("mtld");
    for len in [100, 1_000, 10_000] {
        let tokens = random_tokens(len, 200, 1);
        group.bench_with_input(BenchmarkId::from_parameter(len), &tokens, |b, t| {
            b.iter(|| mtld(black_box(t), MTLD_THRESHOLD))
        });
    }
    group.finish();
}

fn bench_overlap(c: &mut Criterion) {
    let cand = random_tokens(30, 50, 2);
    let reference = random_tokens(30, 50, 3);
    c.bench_function("bleu_30", |b| {
        b.iter(|| bleu(black_box(&cand), black_box(&reference), 4))
    });
    c.bench_function("rouge_l_30", |b| {
        b.iter(|| rouge_l(black_box(&cand), black_box(&reference)))
    });
}

fn bench_kappa(c: &mut Criterion) {
    let records = random_annotations(500, 3, 0.3, 4);
    c.bench_function("kappa_table_500x3", |b| b.iter(|| kappa_table(black_box(&records))));
}

criterion_group!(benches, bench_mtld, bench_overlap, bench_kappa);
criterion_main!(benches);
