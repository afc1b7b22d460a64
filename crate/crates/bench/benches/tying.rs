use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use phmm_bench::{tying_options, Fixture};
use phmm_core::gstats::DEFAULT_VARIANCE_FLOOR;
use phmm_core::questions::{build_question_set, embed_characters, QuestionOptions};
use phmm_core::tying::{grow_trees, recluster, Cluster, GrowOptions};

fn tying(c: &mut Criterion) {
    let fx = Fixture::new(1, 200, 1).expect("fixture");
    let vocab = fx.vocab();

    c.bench_function("build_question_set", |b| {
        b.iter(|| {
            let embeddings = embed_characters(&fx.stats).unwrap();
            build_question_set(&embeddings, &QuestionOptions::default()).unwrap()
        })
    });

    let mut group = c.benchmark_group("tie_states");
    for n_s in [1.0, 0.6] {
        let target = (n_s * vocab as f64).round() as usize;
        group.bench_with_input(BenchmarkId::from_parameter(n_s), &target, |b, &t| {
            b.iter(|| fx.tie(t).unwrap())
        });
    }
    group.finish();

    let grow = GrowOptions {
        max_leaves: 6 * vocab,
        min_count: tying_options().min_count,
        floor: DEFAULT_VARIANCE_FLOOR,
        exclude: Vec::new(),
    };
    let forest = grow_trees(&fx.stats, &fx.questions, &grow).unwrap();
    let leaves: Vec<Cluster> = forest.leaves().map(Cluster::from_leaf).collect();
    c.bench_function("recluster_cross_position", |b| {
        b.iter(|| recluster(&leaves, vocab, true, DEFAULT_VARIANCE_FLOOR).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = tying
}
criterion_main!(benches);
