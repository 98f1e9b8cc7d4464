use proptest::prelude::*;
use pvm_core::checkpoint;
use pvm_core::config::parse_config;
use pvm_core::schedule::ScheduleSpec;
use pvm_core::{Frame, Mode, PvmConfig, Regime, System};

fn small() -> PvmConfig {
    let mut cfg = parse_config(
        r#"{"frame":[16,16],"tile":[2,2],"layers":[[8,8],[4,4],[3,3],[2,2],[1,1]],"hidden_size":3,"seed":5}"#,
    )
    .unwrap();
    cfg.schedule = ScheduleSpec::constant(5, 0.05);
    cfg
}

fn frames(seed: u64, n: usize) -> Vec<Frame> {
    (0..n)
        .map(|i| {
            let data = (0..16 * 16 * 3)
                .map(|k| ((k as u64 * 2654435761).wrapping_add(seed.wrapping_mul(97)).wrapping_add(i as u64 * 31) % 256) as f32 / 255.0)
                .collect();
            Frame::new(16, 16, data).unwrap()
        })
        .collect()
}

/// First step (relative to the impulse) at which each layer's stored
/// signals differ between a clean run and one with a single-tile impulse.
fn first_divergence(cfg: PvmConfig, workers: usize) -> Vec<Option<usize>> {
    let mut clean = System::new(cfg, workers).unwrap();
    let warmup = frames(1, 3);
    for f in &warmup {
        clean.step(f, None, Mode::Train(Regime::Joint)).unwrap();
    }
    let mut hit = clean.clone();
    let layers = clean.topology().layers.clone();
    let mut first = vec![None; layers.len()];
    let base = Frame::filled(16, 16, 0.4);
    let mut impulse = base.clone();
    impulse.set(5, 3, 1, 0.9);
    for t in 0..layers.len() + 2 {
        let frame_hit = if t == 0 { &impulse } else { &base };
        clean.step(&base, None, Mode::Train(Regime::Joint)).unwrap();
        hit.step(frame_hit, None, Mode::Train(Regime::Joint)).unwrap();
        for (k, l) in layers.iter().enumerate() {
            let differs = l
                .units()
                .any(|u| clean.units()[u].signal() != hit.units()[u].signal());
            if differs && first[k].is_none() {
                first[k] = Some(t);
            }
        }
    }
    first
}

#[test]
fn impulse_reaches_layer_k_after_k_steps() {
    for workers in [1, 3] {
        let first = first_divergence(small(), workers);
        let expected: Vec<_> = (0..5).map(Some).collect();
        assert_eq!(first, expected);
    }
}

#[test]
fn masked_context_is_invisible_until_enabled() {
    let mut on_later = small();
    on_later.schedule.lateral_enable_step = 6;
    on_later.schedule.feedback_enable_step = 6;
    let mut never = small();
    never.schedule.lateral_enable_step = u64::MAX;
    never.schedule.feedback_enable_step = u64::MAX;
    let mut a = System::new(on_later, 1).unwrap();
    let mut b = System::new(never, 1).unwrap();
    for (i, f) in frames(3, 10).iter().enumerate() {
        a.step(f, None, Mode::Train(Regime::Joint)).unwrap();
        b.step(f, None, Mode::Train(Regime::Joint)).unwrap();
        let same = a.units().iter().zip(b.units()).all(|(x, y)| x.buffers() == y.buffers());
        // the context gathered at the end of step 6 is the first to differ
        assert_eq!(same, i < 6, "step {i}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn state_independent_of_worker_count(seed in any::<u64>(), steps in 1usize..12) {
        let mut cfg = small();
        cfg.seed = seed;
        let data = frames(seed, steps);
        let mut hashes = Vec::new();
        for workers in [1, 2, 4, 8] {
            let mut s = System::new(cfg.clone(), workers).unwrap();
            for f in &data {
                s.step(f, None, Mode::Train(Regime::Joint)).unwrap();
            }
            hashes.push(checkpoint::state_hash(&s));
        }
        prop_assert!(hashes.iter().all(|h| *h == hashes[0]));
    }

    #[test]
    fn resume_matches_uninterrupted(seed in any::<u64>(), split in 1usize..8) {
        let mut cfg = small();
        cfg.seed = seed;
        let data = frames(seed, 8);
        let mut full = System::new(cfg.clone(), 1).unwrap();
        for f in &data {
            full.step(f, None, Mode::Train(Regime::Joint)).unwrap();
        }
        let mut first = System::new(cfg, 2).unwrap();
        for f in &data[..split] {
            first.step(f, None, Mode::Train(Regime::Joint)).unwrap();
        }
        let mut resumed = checkpoint::from_bytes(&checkpoint::to_bytes(&first), 3).unwrap();
        for f in &data[split..] {
            resumed.step(f, None, Mode::Train(Regime::Joint)).unwrap();
        }
        prop_assert_eq!(checkpoint::state_hash(&resumed), checkpoint::state_hash(&full));
    }

    #[test]
    fn eval_is_deterministic_and_frozen(seed in any::<u64>()) {
        let mut cfg = small();
        cfg.seed = seed;
        let mut a = System::new(cfg, 1).unwrap();
        let weights: Vec<_> = a.units().iter().map(|u| u.mlp().clone()).collect();
        let mut b = a.with_workers(4).unwrap();
        for f in &frames(seed, 4) {
            let oa = a.step(f, None, Mode::Eval).unwrap();
            let ob = b.step(f, None, Mode::Eval).unwrap();
            prop_assert_eq!(oa, ob);
        }
        prop_assert!(a.units().iter().zip(&weights).all(|(u, w)| u.mlp() == w));
        prop_assert_eq!(a.published_readout(), b.published_readout());
    }
}
