use proptest::prelude::*;
use pvm_core::metrics::{
    accuracy_curve, overlap, phi_grid, precision_curve, presence_confusion, records, rho_grid,
    success_curve, theta_grid, TrackRecord,
};
use pvm_core::BoundingBox;

fn bbox() -> impl Strategy<Value = BoundingBox> {
    prop_oneof![
        1 => Just(BoundingBox::ABSENT),
        4 => (0.0..90.0f64, 0.0..90.0f64, 0.5..40.0f64, 0.5..40.0f64)
            .prop_map(|(x, y, w, h)| BoundingBox::new(x, y, w, h)),
    ]
}

fn record_set() -> impl Strategy<Value = Vec<TrackRecord>> {
    prop::collection::vec((bbox(), bbox()), 1..60).prop_map(|pairs| {
        pairs
            .into_iter()
            .map(|(predicted, truth)| TrackRecord { predicted, truth })
            .collect()
    })
}

fn nonincreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] <= w[0])
}

fn nondecreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] >= w[0])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn curves_are_monotone(r in record_set()) {
        let s = success_curve(&r, &theta_grid()).unwrap();
        let p = precision_curve(&r, &rho_grid()).unwrap();
        let a = accuracy_curve(&r, &phi_grid()).unwrap();
        prop_assert!(nonincreasing(&s.values));
        prop_assert!(nondecreasing(&p.values));
        prop_assert!(nondecreasing(&a.values));
        for c in [&s, &p, &a] {
            prop_assert!(c.values.iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert!((0.0..=1.0).contains(&c.auc));
        }
    }

    #[test]
    fn overlap_symmetric_and_bounded(
        a in (0.0..50.0f64, 0.0..50.0f64, 0.5..30.0f64, 0.5..30.0f64),
        b in (0.0..50.0f64, 0.0..50.0f64, 0.5..30.0f64, 0.5..30.0f64),
    ) {
        let a = BoundingBox::new(a.0, a.1, a.2, a.3);
        let b = BoundingBox::new(b.0, b.1, b.2, b.3);
        let ab = overlap(&a, &b).unwrap();
        prop_assert_eq!(ab, overlap(&b, &a).unwrap());
        let bound = a.area().min(b.area()) / a.area().max(b.area());
        prop_assert!(ab <= bound + 1e-12);
        prop_assert!((0.0..=1.0).contains(&ab));
    }

    #[test]
    fn confusion_partitions_records(r in record_set()) {
        let c = presence_confusion(&r).unwrap();
        prop_assert_eq!(c.total(), r.len());
        prop_assert_eq!(c.tp + c.fn_, r.iter().filter(|x| x.truth.present).count());
        prop_assert_eq!(c.fp + c.tn, r.iter().filter(|x| !x.truth.present).count());
    }

    #[test]
    fn translation_invariance(r in record_set(), dx in -50.0..50.0f64, dy in -50.0..50.0f64) {
        let shift = |b: &BoundingBox| if b.present { b.translated(dx, dy) } else { *b };
        let moved: Vec<TrackRecord> = r
            .iter()
            .map(|x| TrackRecord { predicted: shift(&x.predicted), truth: shift(&x.truth) })
            .collect();
        prop_assert_eq!(
            success_curve(&r, &theta_grid()).unwrap().values,
            success_curve(&moved, &theta_grid()).unwrap().values
        );
        prop_assert_eq!(
            precision_curve(&r, &rho_grid()).unwrap().values,
            precision_curve(&moved, &rho_grid()).unwrap().values
        );
        prop_assert_eq!(
            accuracy_curve(&r, &phi_grid()).unwrap().values,
            accuracy_curve(&moved, &phi_grid()).unwrap().values
        );
    }
}

#[test]
fn always_present_tracker_on_partly_absent_set() {
    let truth: Vec<BoundingBox> = (0..100)
        .map(|i| if i % 5 == 0 { BoundingBox::ABSENT } else { BoundingBox::new(10.0, 10.0, 8.0, 8.0) })
        .collect();
    let predicted = vec![BoundingBox::new(10.0, 10.0, 8.0, 8.0); 100];
    let c = presence_confusion(&records(&predicted, &truth).unwrap()).unwrap();
    assert_eq!(c.fp as f64 / c.total() as f64, 0.2);
    assert_eq!(c.tn, 0);
}

#[test]
fn center_tracker_misses_corner_target() {
    let truth = vec![BoundingBox::new(0.0, 0.0, 10.0, 10.0); 20];
    let center = vec![BoundingBox::new(43.2, 43.2, 9.6, 9.6); 20];
    let a = accuracy_curve(&records(&center, &truth).unwrap(), &phi_grid()).unwrap();
    assert_eq!(a.value_at(1.0), 0.0);
}
