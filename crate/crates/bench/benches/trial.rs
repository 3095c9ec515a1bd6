use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use leadsim_bench::{follow_series, samples};
use leadsim_core::controller::{ControllerConfig, ControllerState, ModeKind, Observation};
use leadsim_core::metrics::extract_follow_episodes;
use leadsim_core::rng::{stream, Stream};
use leadsim_core::sim::run_trial;
use leadsim_core::stats::mann_whitney_u;
use leadsim_core::{Params, Pose, TrialConfig, Vec2};

fn trial(c: &mut Criterion) {
    let mut group = c.benchmark_group("trial");
    group.sample_size(10);
    for mode in [ModeKind::Competent, ModeKind::Random] {
        let config = TrialConfig {
            mode,
            seed: 42,
            ..TrialConfig::default()
        };
        group.bench_function(format!("600s_{}", mode.label()), |b| {
            b.iter(|| run_trial(black_box(&config)).unwrap())
        });
    }
    group.finish();
}

fn controller_step(c: &mut Criterion) {
    let config = ControllerConfig::new(ModeKind::Competent, Params::canonical());
    let fresh = || {
        let mut state = ControllerState::new(&config, stream(1, Stream::Controller));
        // Leave milling so every step updates scores and the phase machine.
        let released = Observation {
            robot: Pose::new(Vec2::new(50.0, 50.0), 0.0),
            fish: Vec2::new(50.0, 30.0),
            fish_heading: Some(0.0),
        };
        state.step(&released, &config);
        state
    };
    c.bench_function("controller_step_1000", |b| {
        b.iter_batched(
            fresh,
            |mut state| {
                for i in 0..1000 {
                    let t = i as f64 * 0.04;
                    let obs = Observation {
                        robot: Pose::new(Vec2::new(50.0 + 10.0 * t.cos(), 50.0), t),
                        fish: Vec2::new(40.0 + 5.0 * t.sin(), 40.0),
                        fish_heading: Some(t),
                    };
                    black_box(state.step(&obs, &config));
                }
            },
            BatchSize::SmallInput,
        )
    });
}

fn episodes(c: &mut Criterion) {
    let params = Params::canonical();
    let (follow, lead) = follow_series(15_000, 7);
    c.bench_function("episodes_15000", |b| {
        b.iter(|| extract_follow_episodes(black_box(&follow), black_box(&lead), &params.follow, 0.04).unwrap())
    });
}

fn rank_test(c: &mut Criterion) {
    let (x, y) = samples(8, 3);
    c.bench_function("mann_whitney_exact_8x8", |b| {
        b.iter(|| mann_whitney_u(black_box(&x), black_box(&y)).unwrap())
    });
    let (x, y) = samples(40, 3);
    c.bench_function("mann_whitney_normal_40x40", |b| {
        b.iter(|| mann_whitney_u(black_box(&x), black_box(&y)).unwrap())
    });
}

criterion_group!(benches, trial, controller_step, episodes, rank_test);
criterion_main!(benches);
