use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use fairssl::cka::{conditioned_grid, linear_cka, similarity_grid, Condition};
use fairssl::diffcore::{ops, Mode, Padding};
use fairssl::fairmetrics::{auc_roc, bootstrap_ci, fairness_report, BootstrapConfig, ProtectedAttribute, ReportConfig};
use fairssl::models::{attach_head, build_encoder};
use fairssl::objectives::{nt_xent, ContrastiveConfig, EmbeddingBatch};
use fairssl::trainer::Trainer;
use fairssl::{EncoderSpec, FreezeMask, HeadSpec, RunConfig, SeedTree};
use fairssl_bench::{activations, dataset, predictions, tensor, tensor64};

fn bench_conv(c: &mut Criterion) {
    // first encoder layer on a batch of 128 windows of 48 x 76
    let x = tensor(&[128, 48, 76], 1);
    let w = tensor(&[24, 76, 32], 2);
    let b = tensor(&[32], 3);
    c.bench_function("conv1d_forward 128x48x76 k24", |bn| {
        bn.iter(|| ops::conv1d_forward(black_box(&x), &w, &b, Padding::Valid).unwrap())
    });
}

fn bench_encoder(c: &mut Criterion) {
    let data = dataset(256);
    let enc = build_encoder::<f32>(&EncoderSpec::default(), data.geometry(), 0).unwrap();
    let model = attach_head(enc, &HeadSpec::classification(), 0).unwrap();
    let idx: Vec<usize> = (0..128).collect();
    let batch = data.batch::<f32>(&idx);
    c.bench_function("classifier forward 128 windows", |bn| {
        bn.iter(|| {
            let mut rng = SeedTree::new(0).stream("bench", &[]);
            model.forward(black_box(&batch), Mode::Eval, &mut rng).unwrap()
        })
    });
}

fn bench_ntxent(c: &mut Criterion) {
    let z = EmbeddingBatch::new(tensor(&[256, 50], 4)).unwrap();
    let cfg = ContrastiveConfig::default();
    c.bench_function("nt_xent 128 pairs x 50", |bn| bn.iter(|| nt_xent(black_box(&z), &cfg).unwrap()));
}

fn bench_epochs(c: &mut Criterion) {
    let data = dataset(256);
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut group = c.benchmark_group("epoch over 256 windows");
    group.sample_size(10);
    group.bench_function("supervised", |bn| {
        bn.iter_batched(
            || Trainer::supervised(RunConfig::supervised(0).with_epochs(1), &data, &idx).unwrap(),
            |mut t| t.run_epoch().unwrap(),
            BatchSize::LargeInput,
        )
    });
    group.bench_function("pretrain", |bn| {
        bn.iter_batched(
            || Trainer::pretrain(RunConfig::pretrain(0).with_epochs(1), &data, &idx).unwrap(),
            |mut t| t.run_epoch().unwrap(),
            BatchSize::LargeInput,
        )
    });
    let (pre, _) = fairssl::trainer::pretrain(RunConfig::pretrain(0).with_epochs(1), &data, &idx).unwrap();
    group.bench_function("finetune head only", |bn| {
        bn.iter_batched(
            || Trainer::finetune(RunConfig::finetune(FreezeMask::FROZEN, 0).with_epochs(1), &data, &idx, &pre).unwrap(),
            |mut t| t.run_epoch().unwrap(),
            BatchSize::LargeInput,
        )
    });
    group.finish();
}

fn bench_metrics(c: &mut Criterion) {
    let table = predictions(2000, 5);
    c.bench_function("auc_roc n=2000", |bn| bn.iter(|| auc_roc(black_box(&table.scores), &table.labels).unwrap()));
    let cfg = BootstrapConfig {
        replicates: 200,
        ..BootstrapConfig::default()
    };
    c.bench_function("bootstrap_ci auc n=2000 B=200", |bn| {
        bn.iter(|| bootstrap_ci(&table.scores, &table.labels, auc_roc, &cfg).unwrap())
    });
    let attrs = [ProtectedAttribute::new("group", vec!["A".into(), "B".into()], "A").unwrap()];
    let report_cfg = ReportConfig {
        bootstrap: cfg,
        ..ReportConfig::default()
    };
    let mut group = c.benchmark_group("report");
    group.sample_size(10);
    group.bench_function("fairness_report n=2000 B=200", |bn| {
        bn.iter(|| fairness_report(&table, &attrs, &report_cfg).unwrap())
    });
    group.finish();
}

fn bench_cka(c: &mut Criterion) {
    let x = tensor64(&[300, 96], 6);
    let y = tensor64(&[300, 128], 7);
    c.bench_function("linear_cka 300 x (96, 128)", |bn| bn.iter(|| linear_cka(black_box(&x), &y).unwrap()));
    let (a, b) = (activations(300, 1), activations(300, 2));
    c.bench_function("similarity_grid 6x6 n=300", |bn| bn.iter(|| similarity_grid(&a, &b).unwrap()));
    let random = Condition::Random {
        attribute: "gender".into(),
    };
    c.bench_function("conditioned_grid random subset n=300", |bn| {
        bn.iter(|| conditioned_grid(&a, &b, &random, 50, 0).unwrap())
    });
}

criterion_group!(kernels, bench_conv, bench_encoder, bench_ntxent);
criterion_group!(training, bench_epochs);
criterion_group!(analysis, bench_metrics, bench_cka);
criterion_main!(kernels, training, analysis);
