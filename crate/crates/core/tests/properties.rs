use autowu::detector::{epoch_test, DetectorConfig, LossTrajectory};
use autowu::numerics::Rng;
use autowu::optim::{self, OptimizerConfig, OptimizerKind, ParamGroup};
use autowu::schedule::{
    baseline_lr, decay_lr, warmup_lr, AutoWu, AutoWuConfig, BaselineConfig, DecayShape, Phase,
};
use autowu::synthgen::{
    evaluate_patience, DetectionReport, TrajectoryShape, TrajectorySpec,
};
use proptest::prelude::*;

fn noisy_v(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = Rng::new(seed);
    (0..n)
        .map(|t| {
            let x = t as f64 / n as f64;
            (1.0 + 4.0 * (x - 0.5).powi(2)) * (1.0 + 0.03 * rng.normal())
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn warmup_ratio_is_constant(total in 4usize..5000, rho in 0.05f64..0.95, lo in -7.0f64..-2.0, hi in -1.0f64..1.0) {
        let cfg = AutoWuConfig {
            eta_min: 10f64.powf(lo),
            eta_max: 10f64.powf(hi),
            rho_w: rho,
            ..AutoWuConfig::new(total)
        };
        prop_assume!(cfg.validate().is_ok());
        let gamma = cfg.gamma();
        for t in 0..cfg.warmup_steps() {
            let (a, b) = (warmup_lr(t, &cfg), warmup_lr(t + 1, &cfg));
            prop_assert!(b > a);
            prop_assert!(((b / a) - gamma).abs() <= 1e-12 * gamma);
        }
    }

    #[test]
    fn decay_is_monotone_and_ends_at_zero(total in 10usize..3000, switch_frac in 0.0f64..0.9, start in 1e-4f64..1.0, ctc in any::<bool>()) {
        let cfg = AutoWuConfig {
            decay_shape: if ctc { DecayShape::ConstantThenCosine } else { DecayShape::Cosine },
            ..AutoWuConfig::new(total)
        };
        let s = (switch_frac * total as f64) as usize;
        let mut prev = decay_lr(s, s, start, &cfg);
        prop_assert_eq!(prev, start);
        for t in s + 1..=total {
            let lr = decay_lr(t, s, start, &cfg);
            prop_assert!(lr <= prev);
            prev = lr;
        }
        prop_assert!(prev.abs() <= 1e-12 * start);
    }

    #[test]
    fn baseline_warmup_is_linear(b in prop::sample::select(vec![64usize, 256, 1024, 4096]), spe in 1usize..20, wu in 1usize..8) {
        let cfg = BaselineConfig { warmup_epochs: wu, ..BaselineConfig::new(b, 40 * spe, spe) };
        let w = cfg.warmup_steps();
        for t in 1..w {
            let d2 = baseline_lr(t + 1, &cfg) - 2.0 * baseline_lr(t, &cfg) + baseline_lr(t - 1, &cfg);
            prop_assert!(d2.abs() <= 1e-12);
        }
        prop_assert!((baseline_lr(w, &cfg) - cfg.peak()).abs() <= 1e-15);
    }

    #[test]
    fn optimizer_steps_are_deterministic(kind in prop::sample::select(vec![OptimizerKind::Sgd, OptimizerKind::Adam, OptimizerKind::AdamP, OptimizerKind::Lamb]),
                                         w in prop::collection::vec(-2.0f64..2.0, 1..8), seed in any::<u64>()) {
        let cfg = OptimizerConfig::for_kind(kind);
        let mut rng = Rng::new(seed);
        let grads: Vec<Vec<f64>> = (0..5).map(|_| w.iter().map(|_| rng.normal()).collect()).collect();
        let mut a = ParamGroup::new("w", w.clone());
        let mut b = ParamGroup::new("w", w);
        for g in &grads {
            optim::step(&mut a, g, 0.01, &cfg).unwrap();
            optim::step(&mut b, g, 0.01, &cfg).unwrap();
        }
        prop_assert_eq!(a.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        prop_assert!(a.v.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn adamp_matches_adam_off_criterion(w in prop::collection::vec(0.2f64..2.0, 2..10), scale in prop::collection::vec(0.5f64..1.5, 10)) {
        let cfg = OptimizerConfig::adamp();
        let mut a = ParamGroup::new("w", w.clone());
        let mut b = ParamGroup::new("w", w);
        for _ in 0..10 {
            let g: Vec<f64> = a.values.iter().zip(&scale).map(|(x, c)| c * x).collect();
            prop_assume!(!optim::adamp_projects(&a.values, &g, cfg.delta));
            optim::adamp_step(&mut a, &g, 0.01, &cfg).unwrap();
            optim::adam_step(&mut b, &g, 0.01, &cfg).unwrap();
            prop_assert_eq!(&a, &b);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn epoch_test_is_deterministic_and_pure(n in 20usize..400, seed in any::<u64>()) {
        let traj = LossTrajectory::from_losses(noisy_v(n, seed)).unwrap();
        let before = traj.clone();
        let cfg = DetectorConfig::default();
        let a = epoch_test(&traj, &cfg, &mut Rng::with_stream(seed, 7)).unwrap();
        let b = epoch_test(&traj, &cfg, &mut Rng::with_stream(seed, 7)).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(&traj, &before);
        prop_assert_eq!(a.p_min_values.len(), cfg.n_test);
        prop_assert!(a.p_min_values.iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn one_transition_at_or_before_cap(total in 100usize..600, epoch_len in 5usize..25, seed in any::<u64>(), v in any::<bool>()) {
        let cfg = AutoWuConfig::new(total);
        let cap = cfg.warmup_steps();
        let mut s = AutoWu::new(cfg).unwrap();
        let mut rng = Rng::new(seed);
        let losses = if v { noisy_v(cap, seed) } else { (0..total).map(|t| 2.0 / (1.0 + t as f64)).collect() };
        let mut phases = vec![s.phase()];
        let mut last_warmup_lr = s.lr();
        for t in 0..total {
            if s.phase() == Phase::Warmup {
                last_warmup_lr = s.lr();
            }
            let loss = losses.get(t).copied().unwrap_or(1.0);
            s.step(loss, (t + 1) % epoch_len == 0, &mut rng).unwrap();
            phases.push(s.phase());
        }
        let transitions = phases.windows(2).filter(|w| w[0] == Phase::Warmup && w[1] == Phase::Decay).count();
        prop_assert_eq!(transitions, 1);
        let st = s.state();
        prop_assert!(st.switch_step.unwrap() <= cap + 1);
        prop_assert!(st.t_star.unwrap() <= cap);
        let start = st.decay_start_lr.unwrap();
        prop_assert!(start > 0.0 && start <= last_warmup_lr * (1.0 + 1e-12));
        prop_assert!(s.lr().abs() <= 1e-12);
    }
}

#[test]
fn patience_never_raises_false_positives() {
    let cfg = DetectorConfig::default();
    let seeds: Vec<u64> = (0..30).collect();
    for (magnitude, prob) in [(0.5, 0.02), (1.0, 0.05)] {
        let spec = TrajectorySpec {
            noise_rel: 0.03,
            spike_prob: prob,
            spike_magnitude: magnitude,
            ..TrajectorySpec::new(TrajectoryShape::SpikyDecay, 150)
        };
        let reports = evaluate_patience(&[spec], &cfg, 10, &seeds, &[1, 2, 3, 5]).unwrap();
        let fp: Vec<f64> = reports.iter().map(|r| r.false_positive_rate).collect();
        assert!(fp.windows(2).all(|w| w[1] <= w[0]), "{fp:?}");
    }
}

#[test]
fn noiseless_v_switches_after_exactly_p_more_epochs() {
    let epoch_len = 10;
    let spec = TrajectorySpec::new(TrajectoryShape::VShape, 300);
    let t_true = spec.true_minimum().unwrap();
    for p in 1..=4 {
        let cfg = DetectorConfig::default().with_patience(p);
        let report = evaluate_patience(&[spec], &cfg, epoch_len, &[0], &[p]).unwrap().remove(0);
        let r = &report.records[0];
        // first test epoch whose last step lies past the minimum
        let first = (t_true + 1) / epoch_len;
        assert_eq!(r.switch_epoch, Some(first + p - 1), "patience {p}");
    }
}

#[test]
fn report_aggregates_recompute_from_records() {
    let cfg = DetectorConfig::default();
    let specs = [
        TrajectorySpec { noise_rel: 0.05, ..TrajectorySpec::new(TrajectoryShape::VShape, 120) },
        TrajectorySpec { noise_rel: 0.05, ..TrajectorySpec::new(TrajectoryShape::MonotoneDecay, 120) },
    ];
    let report = evaluate_patience(&specs, &cfg, 10, &[0, 1, 2, 3], &[2]).unwrap().remove(0);
    let again = DetectionReport::from_records(report.records.clone(), report.epoch_len);
    assert_eq!(format!("{again:?}"), format!("{report:?}"));
    let with_min = report.records.iter().filter(|r| r.t_true.is_some()).count();
    let detected = report.records.iter().filter(|r| r.detected()).count();
    assert_eq!(report.detection_rate, detected as f64 / with_min as f64);
}
