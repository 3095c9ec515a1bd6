use leadsim_core::controller::update_carefulness;
use leadsim_core::fish::PopulationConfig;
use leadsim_core::sim::{run_trial, speed_sweep_trial};
use leadsim_core::{CarefulnessLaw, ModeKind, Params, Phase, TrialConfig};
use proptest::prelude::*;

#[test]
fn avoidance_rises_with_approach_speed() {
    let params = Params::canonical();
    let population = PopulationConfig::canonical();
    let per_minute: Vec<f64> = [5.0, 15.0, 30.0]
        .iter()
        .map(|&speed| {
            let total: f64 = (0..30)
                .map(|seed| {
                    speed_sweep_trial(speed, seed, &population, &params, 120.0)
                        .unwrap()
                        .avoidance_per_min
                })
                .sum();
            total / 30.0
        })
        .collect();
    assert!(
        per_minute.windows(2).all(|w| w[0] < w[1]),
        "avoidance events per minute {per_minute:?}"
    );
}

#[test]
fn integrator_reaches_zero_as_fast_as_one() {
    let c = Params::canonical().controller;
    let steps_to = |score: f64, bound: f64| {
        let mut a = 0.5;
        let mut trace = vec![a];
        while a != bound {
            a = update_carefulness(a, score, &c, CarefulnessLaw::Integrator, 0.04);
            trace.push(a);
        }
        trace
    };
    let up = steps_to(1.0, 1.0);
    let down = steps_to(0.0, 0.0);
    assert_eq!(up.len(), down.len());
    assert!(up.windows(2).all(|w| w[0] < w[1]));
    assert!(down.windows(2).all(|w| w[0] > w[1]));
}

fn mode(k: u8) -> ModeKind {
    match k % 4 {
        0 => ModeKind::Competent,
        1 => ModeKind::Fixed {
            carefulness: ModeKind::FIXED_DEFAULT,
        },
        2 => ModeKind::Random,
        _ => ModeKind::Inverse,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn trial_rows_respect_their_invariants(seed in any::<u64>(), k in 0u8..4) {
        let config = TrialConfig { mode: mode(k), seed, duration: 90.0, ..TrialConfig::default() };
        let record = run_trial(&config).unwrap();
        let params = &config.params;
        prop_assert_eq!(record.active_rows().len(), params.time.steps(90.0));
        prop_assert!(record.rows.windows(2).all(|w| w[1].step == w[0].step + 1));
        for w in record.rows.windows(2) {
            prop_assert!(w[0].phase.can_transition_to(w[1].phase) || w[0].phase == w[1].phase);
        }
        for r in &record.rows {
            prop_assert!(params.arena.contains(r.fish()) && params.arena.contains(r.robot()));
            prop_assert!((0.0..=1.0).contains(&r.carefulness));
            prop_assert!((0.0..=1.0).contains(&r.avoid_score) && (0.0..=1.0).contains(&r.follow_score));
            prop_assert!(r.robot_speed <= params.controller.max_speed + 1e-6);
        }
        if let ModeKind::Fixed { carefulness } = config.mode {
            prop_assert!(record.rows.iter().all(|r| r.carefulness == carefulness));
        }
        prop_assert!(record.active_rows().first().is_none_or(|r| r.phase == Phase::Approach));
    }
}
