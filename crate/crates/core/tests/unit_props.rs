use proptest::prelude::*;
use pvm_core::mlp::SgdStep;
use pvm_core::unit::{UnitGeometry, UnitState};
use pvm_core::PvmError;

fn geometry(n: usize, ctx: usize) -> UnitGeometry {
    UnitGeometry {
        signal_size: n,
        context_size: ctx,
        hidden_size: 1,
        readout_size: 1,
    }
}

const TRAIN: SgdStep = SgdStep {
    lr_predict: 0.01,
    lr_readout: 0.01,
    joint: true,
    readout_mix: 1.0,
};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn features_stay_in_unit_interval(
        signals in prop::collection::vec(prop::collection::vec(0.0..=1.0f64, 3), 1..40),
        tau in 0.0..1.0f64,
        seed in any::<u64>(),
    ) {
        let mut u = UnitState::new(geometry(3, 2), tau, seed).unwrap();
        for s in &signals {
            let f = u.compute_features(s).unwrap();
            for v in f.derivative.iter().chain(&f.integral).chain(&f.prev_error) {
                prop_assert!((0.0..=1.0).contains(v), "feature {v}");
            }
            u.predict().unwrap();
            let input = &u.activations().input;
            prop_assert!(input.iter().all(|v| (0.0..=1.0).contains(v)));
            u.train(s, &[0.5], TRAIN).unwrap();
        }
    }

    /// Any call sequence is accepted exactly when predict and train
    /// alternate, starting with predict.
    #[test]
    fn phase_protocol_enforced(calls in prop::collection::vec(any::<bool>(), 1..30)) {
        let mut u = UnitState::new(geometry(2, 1), 0.5, 1).unwrap();
        let mut pending = false;
        for is_predict in calls {
            let r = if is_predict { u.predict() } else { u.train(&[0.3, 0.6], &[0.5], TRAIN).map(|_| ()) };
            if is_predict == pending {
                prop_assert!(matches!(r, Err(PvmError::Protocol(_))));
            } else {
                prop_assert!(r.is_ok());
                pending = !pending;
            }
            prop_assert_eq!(u.is_pending(), pending);
        }
    }
}

/// Period-2 scalar sequence with the unit's own hidden state fed back as
/// context. The signal is two copies of the scalar so the hidden layer can
/// be narrower than the signal.
fn period_two_mse(lr: f64, steps: u64) -> f64 {
    let g = UnitGeometry {
        signal_size: 2,
        context_size: 1,
        hidden_size: 1,
        readout_size: 1,
    };
    let mut u = UnitState::new(g, 0.5, 3).unwrap();
    let step = SgdStep {
        lr_predict: lr,
        lr_readout: 0.0,
        joint: false,
        readout_mix: 1.0,
    };
    let mut recent = 0.0;
    for t in 0..steps {
        let v = if t % 2 == 0 { 0.2 } else { 0.8 };
        u.predict().unwrap();
        let hidden = u.hidden().to_vec();
        let e = u.train(&[v, v], &[0.5], step).unwrap();
        u.set_context(&hidden).unwrap();
        if t + 100 >= steps {
            recent += e.predict / 100.0;
        }
    }
    recent
}

#[test]
fn period_two_signal_is_learned_at_the_stated_rate() {
    let mse = period_two_mse(0.0002, 50_000);
    assert!(mse < 1e-3, "mse after 50k steps at lr 0.0002: {mse}");
}

#[test]
fn period_two_signal_is_learnable() {
    let mse = period_two_mse(0.5, 50_000);
    assert!(mse < 1e-3, "mse after 50k steps at lr 0.5: {mse}");
}
