use criterion::{black_box, criterion_group, criterion_main, Criterion};
use hwifp::auth::roc::roc_auc;
use hwifp::constellation::{Constellation, ConstellationKind};
use hwifp::estimator::{nls_estimate, NlsOptions};
use hwifp::features::{extract_features, PipelineConfig};
use hwifp::fim::{crb_report, fim_closed_form, fim_numerical, marginalize_channel, NumericalMode, DEFAULT_RANK_TOL};
use hwifp::rng::rng_from;
use hwifp::signal_model::random_symbols;
use hwifp::signal_model::{synthesize_burst, ChannelConfig};
use hwifp_bench::{iridium_burst, mc_truth};
use num_complex::Complex64;
use rand::Rng as _;

fn fim(c: &mut Criterion) {
    let qpsk = Constellation::new(ConstellationKind::Qpsk).unwrap();
    let qam = Constellation::new(ConstellationKind::Qam64).unwrap();
    let p = mc_truth();
    c.bench_function("fim_closed_form", |b| {
        b.iter(|| fim_closed_form(black_box(&qpsk.moments()), &p, 76, 100.0))
    });
    c.bench_function("fim_numerical_moment_64qam", |b| {
        b.iter(|| fim_numerical(black_box(&qam), &p, 76, 100.0, NumericalMode::Moment))
    });
    c.bench_function("fim_numerical_fd_qpsk", |b| {
        b.iter(|| {
            fim_numerical(
                black_box(&qpsk),
                &p,
                76,
                100.0,
                NumericalMode::FiniteDifference { step: 1e-5 },
            )
        })
    });
    c.bench_function("marginalize_channel_qpsk", |b| {
        b.iter(|| marginalize_channel(black_box(&qpsk), &p, 76, 100.0))
    });
    let f = fim_numerical(&qpsk, &p, 76, 100.0, NumericalMode::Moment).unwrap();
    c.bench_function("crb_report", |b| b.iter(|| crb_report(black_box(&f), DEFAULT_RANK_TOL)));
}

fn features(c: &mut Criterion) {
    let burst = iridium_burst(7);
    let cfg = PipelineConfig::default();
    c.bench_function("extract_features_iridium", |b| {
        b.iter(|| extract_features(black_box(&burst), &cfg))
    });
}

fn estimator(c: &mut Criterion) {
    let qpsk = Constellation::new(ConstellationKind::Qpsk).unwrap();
    let symbols = random_symbols(&qpsk, 76, &mut rng_from(1, &[]));
    let p = mc_truth();
    let burst = synthesize_burst(&symbols, &p, &ChannelConfig::awgn(Complex64::new(1.0, 0.0), 30.0), 3).unwrap();
    let opts = NlsOptions::default().with_init(p);
    c.bench_function("nls_estimate_qpsk_76", |b| {
        b.iter(|| nls_estimate(black_box(&burst), Complex64::new(1.0, 0.0), &opts))
    });
}

fn roc(c: &mut Criterion) {
    let mut rng = rng_from(2, &[]);
    let g: Vec<f64> = (0..27).map(|_| rng.random::<f64>()).collect();
    let i: Vec<f64> = (0..27 * 26).map(|_| rng.random::<f64>() + 0.3).collect();
    c.bench_function("roc_auc_27_sats", |b| b.iter(|| roc_auc(black_box(&g), black_box(&i))));
}

criterion_group!(benches, fim, features, estimator, roc);
criterion_main!(benches);
