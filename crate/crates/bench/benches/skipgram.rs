use criterion::{criterion_group, criterion_main, Criterion};

use selfnet::subword::{train_skipgram, SkipgramConfig};
use selfnet::synthetic::elongation_corpus;
use selfnet::{NgramVocabulary, VocabConfig};

fn skipgram(c: &mut Criterion) {
    let corpus = elongation_corpus(600, 0);
    let vocab = NgramVocabulary::build(
        VocabConfig {
            buckets: 2000,
            ..VocabConfig::default()
        },
        &corpus,
    )
    .unwrap();
    let config = SkipgramConfig {
        dim: 50,
        epochs: 1,
        subsample: 0.0,
        ..SkipgramConfig::default()
    };
    let mut group = c.benchmark_group("skipgram");
    group.sample_size(10);
    group.bench_function("epoch_600_sentences_d50", |b| {
        b.iter(|| train_skipgram(&corpus, &config, &vocab).unwrap())
    });
    group.finish();
}

criterion_group!(benches, skipgram);
criterion_main!(benches);
