use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mlstream::eval::evaluate;
use mlstream::multilatency::{LatencyConfig, Method, Objective, Trainer};
use mlstream::par::Execution;
use mlstream::synth::{generate_corpus, CorpusSpec};
use mlstream::{BlockSpec, ModelConfig, TransducerModel};

fn setup() -> (TransducerModel, mlstream::synth::Corpus) {
    let corpus = generate_corpus(&CorpusSpec { train: 16, dev: 16, test: 0, ..CorpusSpec::default() }).unwrap();
    let model = TransducerModel::new(ModelConfig::new(corpus.d_feat, corpus.vocab_size), 1).unwrap();
    (model, corpus)
}

fn batch_gradients(c: &mut Criterion) {
    let (model, corpus) = setup();
    let spec: BlockSpec = "8-4-4".parse().unwrap();
    let mut group = c.benchmark_group("batch_gradients");
    for exec in [Execution::Parallel, Execution::Sequential] {
        group.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &exec, |b, &exec| {
            let mut trainer = Trainer::new(model.clone(), 1).with_execution(exec);
            b.iter(|| trainer.batch_gradients(&corpus.train, &spec, Objective::MethodA { mask_prob: 0.5 }).unwrap());
        });
    }
    group.finish();
}

fn streaming_eval(c: &mut Criterion) {
    let (model, corpus) = setup();
    let mut group = c.benchmark_group("streaming_eval");
    for exec in [Execution::Parallel, Execution::Sequential] {
        let mut cfg = LatencyConfig::new("8-4-8".parse().unwrap(), Method::A).unwrap();
        cfg.execution = exec;
        group.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &exec, |b, &exec| {
            b.iter(|| evaluate(&model, cfg, &corpus.dev, exec).unwrap());
        });
    }
    group.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = batch_gradients, streaming_eval
}
criterion_main!(benches);
