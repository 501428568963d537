use fsmdi::channel::{sample_fading, FadingSeries, TurbulenceParams};
use fsmdi::decoy::{analyze, DeviceParams, Intensity, SourceParams, DEFAULT_N_CUT};
use fsmdi::optimizer::{optimize, OptimizationProblem};
use fsmdi::postselect::{
    generate_slot_records, rates_vs_threshold, run_tradeoff, SlotAggregate, SlotModel, TradeoffConfig,
};

fn model(pulses_per_slot: f64) -> SlotModel {
    SlotModel {
        alice: SourceParams::TABLE1_ALICE,
        bob: SourceParams::TABLE1_BOB,
        device: DeviceParams::TABLE1,
        xi: 1.0,
        pulses_per_slot,
    }
}

fn fading(n: usize, sigma: f64, seed: u64) -> (FadingSeries, FadingSeries) {
    let la = TurbulenceParams {
        scintillation_sigma: sigma,
        mean_loss_db: 17.0,
        ..TurbulenceParams::default()
    };
    let lb = TurbulenceParams {
        mean_loss_db: 20.0,
        ..la
    };
    (sample_fading(&la, n, seed).unwrap(), sample_fading(&lb, n, seed + 1).unwrap())
}

#[test]
fn sweep_bookkeeping_holds() {
    let (fa, fb) = fading(20_000, 0.985, 10);
    let m = model(1e10);
    let rep = run_tradeoff(&fa, &fb, &m, &TradeoffConfig::default(), 3).unwrap();
    let mut last = 1.0;
    let mut any_positive = false;
    for r in &rep.sweep {
        assert!(r.retained_fraction <= last);
        last = r.retained_fraction;
        assert_eq!(r.rate_per_pulse_overall, r.rate_per_pulse_valid * r.retained_fraction);
        assert!(r.rate_per_pulse_overall <= r.rate_per_pulse_valid);
        any_positive |= r.rate_per_pulse_valid > 0.0;
    }
    assert!(any_positive);
    assert_eq!(rep.sweep[0].retained_fraction, 1.0);
    assert_eq!(rep.baseline.retained_slots, rep.selected.retained_slots);
}

#[test]
fn zero_threshold_matches_unselected_pipeline() {
    let (fa, fb) = fading(5_000, 0.8, 20);
    let m = model(1e10);
    let out = rates_vs_threshold(generate_slot_records(&fa, &fb, &m, 4).unwrap(), &m, &[0.0]).unwrap();
    let mut agg = SlotAggregate::default();
    for r in generate_slot_records(&fa, &fb, &m, 4).unwrap() {
        agg.add(&r);
    }
    let stats = agg.statistics(&m.sent_per_slot());
    let direct = analyze(&m.alice, &m.bob, &m.device, &stats, DEFAULT_N_CUT).unwrap();
    assert_eq!(out[0].rate_per_pulse_valid, direct.rate_per_pulse);
    assert_eq!(out[0].qber_xx, direct.qber_xx);
    assert_eq!(out[0].retained_fraction, 1.0);
}

#[test]
fn selection_lowers_x_basis_errors_across_seeds() {
    let m = model(1e9);
    let mut drop = 0.0;
    for seed in 0..4 {
        let (fa, fb) = fading(5_000, 0.985, 100 + 2 * seed);
        let config = TradeoffConfig {
            thresholds: vec![0.0, 0.8],
            key_threshold: 0.8,
        };
        let rep = run_tradeoff(&fa, &fb, &m, &config, seed).unwrap();
        drop += rep.sweep[0].qber_xx - rep.sweep[1].qber_xx;
    }
    assert!(drop > 0.0, "{drop}");
}

#[test]
fn calm_air_slots_are_poisson_only() {
    let flat = FadingSeries {
        transmittances: vec![0.02; 4_000],
    };
    let m = model(1e8);
    let z = Intensity::Z.index();
    let counts: Vec<f64> = generate_slot_records(&flat, &flat, &m, 8)
        .unwrap()
        .map(|r| r.counts[z][z] as f64)
        .collect();
    let n = counts.len() as f64;
    let mean = counts.iter().sum::<f64>() / n;
    let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0);
    // dispersion index of a Poisson variable is 1 with standard error √(2/n)
    assert!((var / mean - 1.0).abs() < 5.0 * (2.0 / n).sqrt(), "{}", var / mean);
}

fn problem() -> OptimizationProblem {
    OptimizationProblem {
        device: DeviceParams {
            n_pulses: 1e14,
            ..DeviceParams::TABLE1
        },
        max_evals: 600,
        restarts: 2,
        ..OptimizationProblem::default()
    }
}

#[test]
fn optimizer_is_deterministic_and_valid() {
    let a = optimize(&problem()).unwrap();
    let b = optimize(&problem()).unwrap();
    assert_eq!(a, b);
    a.alice.validate().unwrap();
    a.bob.validate().unwrap();
}

#[test]
fn local_search_never_loses_to_its_start() {
    let p = OptimizationProblem {
        restarts: 0,
        ..problem()
    };
    let r = optimize(&p).unwrap();
    assert!(r.rate >= r.start_rate, "{} < {}", r.rate, r.start_rate);
}

#[test]
fn symmetric_losses_give_symmetric_signals() {
    let mut ratios = Vec::new();
    for seed in 0..5 {
        let p = OptimizationProblem {
            device: DeviceParams {
                loss_b_db: 17.0,
                ..problem().device
            },
            seed,
            ..problem()
        };
        let r = optimize(&p).unwrap();
        ratios.push((r.alice.mu_z / r.bob.mu_z - 1.0).abs());
    }
    ratios.sort_by(f64::total_cmp);
    assert!(ratios[2] < 0.1, "{ratios:?}");
}
