use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use ner_transfer::bilm::{BiLmConfig, BiLmModel, LmObjective};
use ner_transfer::corpus::build_word_vocab;
use ner_transfer::harness::synth::{gen_synthetic, CorpusSizes, SyntheticSpec};
use ner_transfer::tagger::{tagger_vocab, TaggerConfig, TaggerModel, TaggerObjective};
use ner_transfer::train::batch_gradient;
use ner_transfer::Parallelism;

const BATCH: usize = 32;
const MODES: [(&str, Parallelism); 2] = [("sequential", Parallelism::Sequential), ("rayon", Parallelism::Rayon)];

fn data() -> ner_transfer::harness::synth::SyntheticData {
    let spec = SyntheticSpec {
        sizes: CorpusSizes {
            generic: BATCH,
            generic_dev: 4,
            target_train: BATCH,
            ..CorpusSizes::default()
        },
        ..SyntheticSpec::default()
    };
    gen_synthetic(&spec, 1).expect("synthetic data")
}

fn tagger(c: &mut Criterion) {
    let data = data();
    let cfg = TaggerConfig {
        word_dim: 16,
        char_dim: 8,
        char_filters: 16,
        highway_layers: 1,
        hidden: 16,
        layers: 1,
        ..TaggerConfig::default()
    };
    let vocab = tagger_vocab(&data.target_train, &data.target_dev);
    let model = TaggerModel::new(&cfg, vocab, None, "bench", 1).expect("tagger");
    let examples = model.examples(&data.target_train, Parallelism::Sequential).expect("examples");
    let refs: Vec<_> = examples.iter().collect();
    let seeds: Vec<u64> = (0..refs.len() as u64).collect();
    let objective = TaggerObjective { tagger: &model.tagger };
    let mut group = c.benchmark_group("tagger_batch_gradient");
    for (name, par) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| batch_gradient(&objective, &model.params, &refs, Some(&seeds), par).expect("gradient"))
        });
    }
    group.finish();
}

fn bilm(c: &mut Criterion) {
    let data = data();
    let cfg = BiLmConfig {
        char_dim: 8,
        char_filters: 32,
        highway_layers: 1,
        elmo_dim: 64,
        layers: 1,
        ..BiLmConfig::default()
    };
    let model = BiLmModel::new(&cfg, build_word_vocab(&[&data.generic], 1), "bench", 1).expect("lm");
    let examples: Vec<_> = data.generic.sentences.iter().map(|s| model.vocab().index_sentence(s)).collect();
    let refs: Vec<_> = examples.iter().collect();
    let seeds: Vec<u64> = (0..refs.len() as u64).collect();
    let objective = LmObjective { lm: &model.lm };
    let mut group = c.benchmark_group("bilm_batch_gradient");
    for (name, par) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| batch_gradient(&objective, &model.params, &refs, Some(&seeds), par).expect("gradient"))
        });
    }
    group.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = tagger, bilm
}
criterion_main!(benches);
