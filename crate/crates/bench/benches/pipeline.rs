use std::time::Duration;

use clusep_bench::{coherence, mixture, scene};
use clusep_core::classical::separate_classical;
use clusep_core::clustering::nmf_cluster;
use clusep_core::dsp::{gcc_phat, istft, stft};
use clusep_core::neural::forward;
use clusep_core::room::{render_scene_with, RenderOptions};
use clusep_core::{Method, NetConfig, NmfOptions, SeparationConfig, StftConfig, WeightBundle};
use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use ndarray::Array2;

fn dsp(c: &mut Criterion) {
    let mix = mixture(1.0, 1);
    let x = mix.channel(0).to_vec();
    let y = mix.channel(1).to_vec();
    let cfg = StftConfig::default();
    c.bench_function("stft_istft_1s", |b| {
        b.iter(|| istft(&stft(black_box(&x), &cfg).unwrap()).unwrap())
    });
    c.bench_function("gcc_phat_1s", |b| b.iter(|| gcc_phat(black_box(&x), black_box(&y), 200).unwrap()));
}

fn room(c: &mut Criterion) {
    let (scenario, dry) = scene(1.0, 2);
    let opts = RenderOptions {
        max_order: Some(10),
        ..RenderOptions::default()
    };
    c.bench_function("render_1s_order10", |b| b.iter(|| render_scene_with(&scenario, &dry, &opts).unwrap()));
}

fn clustering(c: &mut Criterion) {
    let mix = mixture(2.0, 3);
    let coh = coherence(&mix);
    c.bench_function("coherence_2s", |b| b.iter(|| coherence(black_box(&mix))));
    c.bench_function("nmf_q3", |b| b.iter(|| nmf_cluster(&coh, 3, &NmfOptions::default()).unwrap()));
    let model = nmf_cluster(&coh, 3, &NmfOptions::default()).unwrap();
    let mut group = c.benchmark_group("classical_2s");
    for method in [Method::Dsb, Method::DsbPostfilter] {
        group.bench_function(method.name(), |b| {
            b.iter(|| separate_classical(&mix, &model, &coh, method, &SeparationConfig::default()).unwrap())
        });
    }
    group.finish();
}

fn neural(c: &mut Criterion) {
    let mut group = c.benchmark_group("neural_forward_quarter_second");
    group.sample_size(10).measurement_time(Duration::from_secs(10));
    let weights = WeightBundle::generate(NetConfig::default(), 0).unwrap();
    for mics in [1, 4, 8] {
        let x = Array2::from_shape_fn((mics, 4000), |(m, t)| ((t * (m + 3)) as f32 * 0.013).sin());
        group.bench_with_input(BenchmarkId::from_parameter(mics), &x, |b, x| {
            b.iter(|| forward(x.view(), 0, &weights).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, dsp, room, clustering, neural);
criterion_main!(benches);
