use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use selfnet::data::Batch;
use selfnet::model::{loss, ModelConfig};
use selfnet::synthetic::{planted_examples, PlantedConfig};
use selfnet::{Graph, Lexicon, Mode, NgramVocabulary, SelfNet, VocabConfig};

fn setup(d: usize, h: usize) -> (SelfNet, Batch, Lexicon) {
    let examples: Vec<_> = planted_examples(64, PlantedConfig::default(), 0)
        .into_iter()
        .map(|p| p.example)
        .collect();
    let vocab = NgramVocabulary::build(
        VocabConfig {
            buckets: 20_000,
            ..VocabConfig::default()
        },
        examples.iter().map(|e| &e.tokens),
    )
    .unwrap();
    let config = ModelConfig {
        embed_dim: d,
        hidden_size: h,
        mlp_hidden: vec![h],
        ..ModelConfig::default()
    };
    let net = SelfNet::new(config, vocab, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let mut lexicon = Lexicon::new();
    let refs: Vec<_> = examples.iter().collect();
    let batch = Batch::assemble(&refs, &mut lexicon, &net.vocab);
    (net, batch, lexicon)
}

fn forward_backward(c: &mut Criterion) {
    let mut group = c.benchmark_group("batch64");
    group.sample_size(10);
    for (d, h) in [(32, 32), (100, 128)] {
        let (net, batch, lexicon) = setup(d, h);
        group.bench_function(format!("forward_d{d}_h{h}"), |b| {
            b.iter(|| net.predict_batch(&batch, &lexicon).unwrap())
        });
        group.bench_function(format!("forward_backward_d{d}_h{h}"), |b| {
            b.iter_batched(
                || ChaCha8Rng::seed_from_u64(1),
                |mut rng| {
                    let mut g = Graph::new();
                    let vars = net.params.register(&mut g);
                    let (l, _) =
                        loss(&mut g, &vars, &batch, &lexicon, &net.config, Mode::Train, &mut rng)
                            .unwrap();
                    g.backward(l).unwrap()
                },
                BatchSize::SmallInput,
            )
        });
    }
    group.finish();
}

criterion_group!(benches, forward_backward);
criterion_main!(benches);
