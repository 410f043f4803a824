use grads_core::effectiveness::{condition_check, ratio_curve, MONOTONE_TOL};
use grads_core::lsa::{grad_multi_layer, LayerParams, LsaNetwork};
use grads_core::synth::{
    example_flows, flow_curves, gen_dataset, split_effective, train_lsa, DatasetConfig,
    Parameterization, Sampling, SplitReport, SynthExample, Tau, TrainConfig,
};
use proptest::prelude::*;

fn trained_scalar_net() -> LsaNetwork {
    let cfg = DatasetConfig {
        seed: 3,
        e: 1,
        n_tasks: 30,
        n_per_task: 1,
        sampling: Sampling::UnitPositive {
            w_lo: 0.75,
            w_hi: 1.25,
        },
        demo_strength: (1.0, 1.0),
        demo_task_shift: 0,
    };
    let data = gen_dataset(&cfg).unwrap();
    let net0 = LsaNetwork::new(vec![LayerParams::scaled_identity(1, 0.2, 0.2).unwrap(); 2]).unwrap();
    let rep = train_lsa(
        &net0,
        &data.examples,
        &TrainConfig::new(0.01, 400, Parameterization::ScaledIdentity),
    )
    .unwrap();
    assert!(rep.losses.last().unwrap() < &rep.losses[0]);
    rep.net
}

fn naive_mean(ids: &[String], data: &[SynthExample], net: &LsaNetwork, l: usize) -> f64 {
    let mut total = 0.0;
    for id in ids {
        let ex = data.iter().find(|e| e.id() == id).unwrap();
        total += grad_multi_layer(&ex.prompt(), net, l).unwrap().norm();
    }
    total / ids.len() as f64
}

#[test]
fn matched_demos_are_effective_more_often() {
    let net = trained_scalar_net();
    let mk = |shift: usize| DatasetConfig {
        seed: 11,
        e: 1,
        n_tasks: 500,
        n_per_task: 1,
        sampling: Sampling::UnitPositive {
            w_lo: 0.5,
            w_hi: 1.5,
        },
        demo_strength: (1.0, 1.0),
        demo_task_shift: shift,
    };
    let rate = |shift: usize| {
        let data = gen_dataset(&mk(shift)).unwrap();
        let split = split_effective(&data.examples, &net, Tau::Absolute(0.1)).unwrap();
        split.effective.len() as f64 / data.examples.len() as f64
    };
    let matched = rate(0);
    let mismatched = rate(1);
    assert!(matched > mismatched, "{matched} vs {mismatched}");
}

#[test]
fn flow_curve_means_match_naive_loop() {
    let net = trained_scalar_net();
    let mut cfg = DatasetConfig::gaussian(4, 1, 10, 6);
    cfg.demo_strength = (0.3, 1.0);
    let data = gen_dataset(&cfg).unwrap();
    let split = split_effective(&data.examples, &net, Tau::Absolute(0.5)).unwrap();
    let curve = flow_curves(&split, &data.examples, &net).unwrap();
    for row in &curve.rows {
        if let Some(m) = row.mean_effective {
            assert!((m - naive_mean(&split.effective, &data.examples, &net, row.layer)).abs() <= 1e-12);
        }
        if let Some(m) = row.mean_ineffective {
            assert!((m - naive_mean(&split.ineffective, &data.examples, &net, row.layer)).abs() <= 1e-12);
        }
    }
}

/// Groups ordered by coordinate-wise dominance on a condition-passing net
/// have a ratio at least one that never drops with depth.
#[test]
fn dominance_ordered_groups_amplify() {
    let net = LsaNetwork::new(vec![
        LayerParams::scaled_identity(1, 0.3, 0.2).unwrap(),
        LayerParams::scaled_identity(1, 0.25, 0.4).unwrap(),
        LayerParams::scaled_identity(1, 0.2, 0.3).unwrap(),
    ])
    .unwrap();
    let tasks = gen_dataset(&DatasetConfig {
        seed: 5,
        e: 1,
        n_tasks: 1,
        n_per_task: 1,
        sampling: Sampling::UnitPositive { w_lo: 1.0, w_hi: 1.0 },
        demo_strength: (1.0, 1.0),
        demo_task_shift: 0,
    })
    .unwrap()
    .tasks;
    let strong = [SynthExample::new("strong", &tasks, 0, 0, vec![1.0], vec![1.0]).unwrap()];
    let weak = [SynthExample::new("weak", &tasks, 0, 0, vec![0.5], vec![1.0]).unwrap()];
    let all: Vec<SynthExample> = strong.iter().chain(&weak).cloned().collect();

    let demos = [weak[0].d().clone(), strong[0].d().clone(), strong[0].d().scaled(1.2).unwrap()];
    assert!(condition_check(&demos, strong[0].q(), &net).unwrap().holds());

    let split = SplitReport {
        tau: Tau::default(),
        entries: vec![],
        effective: vec![strong[0].id().to_string()],
        ineffective: vec!["weak".to_string()],
    };
    let curve = flow_curves(&split, &all, &net).unwrap();
    assert!(curve.ratio_nondecreasing(MONOTONE_TOL));
    assert!(curve.rows.iter().all(|r| r.ratio.unwrap() >= 1.0 - MONOTONE_TOL));

    let direct = ratio_curve(strong[0].d(), weak[0].d(), strong[0].q(), &net, MONOTONE_TOL).unwrap();
    for (row, p) in curve.rows.iter().zip(&direct.points) {
        assert!((row.ratio.unwrap() - p.ratio.unwrap()).abs() <= 1e-12);
    }
    let flows = example_flows(&strong[0], &net).unwrap();
    assert_eq!(flows.len(), 3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn split_is_sound(seed in any::<u64>(), tau in 0.01f64..5.0) {
        let net = LsaNetwork::new(vec![LayerParams::scaled_identity(2, 0.3, 0.3).unwrap(); 2]).unwrap();
        let mut cfg = DatasetConfig::gaussian(seed, 2, 4, 5);
        cfg.demo_strength = (0.2, 1.0);
        let data = gen_dataset(&cfg).unwrap();
        let split = split_effective(&data.examples, &net, Tau::Absolute(tau)).unwrap();
        let zero_wrong: std::collections::HashSet<&str> = split
            .entries
            .iter()
            .filter(|e| !e.zero_shot_correct())
            .map(|e| e.id.as_str())
            .collect();
        for id in split.effective.iter().chain(&split.ineffective) {
            prop_assert!(zero_wrong.contains(id.as_str()));
        }
        for id in &split.effective {
            prop_assert!(!split.ineffective.contains(id));
        }
        prop_assert_eq!(split.effective.len() + split.ineffective.len(), zero_wrong.len());
    }

    #[test]
    fn datasets_are_pure_functions_of_config(seed in any::<u64>(), e in 1usize..4) {
        let cfg = DatasetConfig::gaussian(seed, e, 3, 3);
        prop_assert_eq!(gen_dataset(&cfg).unwrap(), gen_dataset(&cfg).unwrap());
    }
}
