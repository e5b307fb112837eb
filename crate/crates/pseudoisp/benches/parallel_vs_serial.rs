//! Compares the rayon-parallel code path against the sequential fallback
//! on the three hot loops: denoiser batch gradients, pseudo-ISP batch
//! gradients (exercised through a training iteration), and Monte-Carlo
//! noise rendering. The runtime switch flips both paths inside one binary;
//! building with `--no-default-features` removes the parallel path
//! entirely.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use pseudoisp::adaption::{finetune_denoiser, Denoiser, DenoiserTrainConfig};
use pseudoisp::camera::{add_raw_noise, render_clean_raw, CameraProfile};
use pseudoisp::isp::{train_single, PseudoPair, SharingScope, TrainConfig};
use pseudoisp::parallel::set_parallel;
use pseudoisp::synthesis::SyntheticPair;

fn modes() -> Vec<(&'static str, bool)> {
    if cfg!(feature = "parallel") {
        vec![("parallel", true), ("serial", false)]
    } else {
        vec![("serial", false)]
    }
}

fn bench_denoiser_step(c: &mut Criterion) {
    let clean = pseudoisp::scenes::generate(2, 32, 32, 1);
    let synthetic: Vec<SyntheticPair> = clean
        .into_iter()
        .enumerate()
        .map(|(i, img)| SyntheticPair {
            noisy: img.clone(),
            clean: img,
            model_id: "bench".into(),
            seed: i as u64,
        })
        .collect();
    let cfg = DenoiserTrainConfig {
        iters: 1,
        batch: 4,
        patch: 16,
        learning_rate: 1e-3,
    };
    let mut group = c.benchmark_group("denoiser_step");
    group.sample_size(10);
    for (name, flag) in modes() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &flag, |b, &flag| {
            set_parallel(flag);
            b.iter(|| {
                finetune_denoiser(&Denoiser::GaussianBlur, &[], &synthetic, 1.0, &cfg, 3)
                    .unwrap()
            });
        });
    }
    group.finish();
    set_parallel(true);
}

fn bench_pseudoisp_step(c: &mut Criterion) {
    let imgs = pseudoisp::scenes::generate(2, 32, 32, 2);
    let pairs: Vec<PseudoPair> = imgs
        .iter()
        .enumerate()
        .map(|(i, img)| PseudoPair::new(format!("img{i}"), img.clone(), img.clone()).unwrap())
        .collect();
    let cfg = TrainConfig {
        patch_size: 16,
        batch: 4,
        iters_stage1: 1,
        iters_stage2: 0,
        sharing_scope: SharingScope::Set,
        ..TrainConfig::default()
    };
    let mut group = c.benchmark_group("pseudoisp_step");
    group.sample_size(10);
    for (name, flag) in modes() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &flag, |b, &flag| {
            set_parallel(flag);
            b.iter(|| train_single(&pairs, &cfg, 0).unwrap());
        });
    }
    group.finish();
    set_parallel(true);
}

fn bench_noise_render(c: &mut Criterion) {
    let profile = CameraProfile::default_profile(0);
    let scenes = pseudoisp::scenes::generate(8, 64, 64, 3);
    let raws: Vec<_> = scenes
        .iter()
        .map(|s| render_clean_raw(&profile, s).unwrap())
        .collect();
    let mut group = c.benchmark_group("noise_render");
    group.sample_size(20);
    for (name, flag) in modes() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &flag, |b, &flag| {
            set_parallel(flag);
            b.iter(|| {
                let out = pseudoisp::parallel::map_indexed(raws.len(), |i| {
                    add_raw_noise(&profile, &raws[i], i as u64)
                });
                out.len()
            });
        });
    }
    group.finish();
    set_parallel(true);
}

criterion_group!(
    benches,
    bench_denoiser_step,
    bench_pseudoisp_step,
    bench_noise_render
);
criterion_main!(benches);
