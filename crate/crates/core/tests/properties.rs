//! Property tests for the structural invariants that random spot checks
//! cover less convincingly.

use proptest::prelude::*;

use forgeloc_core::data::{
    read_manifest, write_manifest, DatasetManifest, ForgeryKind, MaskTensor, ProbMap, Split,
};
use forgeloc_core::metrics::{confusion, scores};
use forgeloc_core::objective::{dice_loss, DICE_EPS};

fn kind_strategy() -> impl Strategy<Value = ForgeryKind> {
    prop_oneof![
        Just(ForgeryKind::CopyMove),
        Just(ForgeryKind::Splice),
        Just(ForgeryKind::Inpaint),
        Just(ForgeryKind::Pristine),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Manifest write/read is the identity on valid manifests.
    #[test]
    fn manifest_round_trip(records in prop::collection::vec((0u64..1000, kind_strategy()), 0..20)) {
        let mut manifest = DatasetManifest::new(Split::Val);
        for (i, (seed, kind)) in records.iter().enumerate() {
            manifest.records.push(forgeloc_core::data::ForgeryRecord {
                image_path: format!("img_{i}.png"),
                mask_path: format!("mask_{i}.png"),
                forgery_kind: *kind,
                seed: *seed,
            });
        }
        let path = std::env::temp_dir().join(format!(
            "forgeloc-prop-manifest-{}-{}.jsonl",
            std::process::id(),
            records.len()
        ));
        write_manifest(&manifest, &path).unwrap();
        let back = read_manifest(&path).unwrap();
        prop_assert_eq!(manifest, back);
    }

    /// Dice stays within [0, 1 + 2eps] for any inputs in [0, 1] and is
    /// invariant under a common permutation of both maps.
    #[test]
    fn dice_bounds_and_permutation(
        values in prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 9..=9),
        rot in 0usize..9,
    ) {
        let truth = ProbMap { height: 3, width: 3, data: values.iter().map(|v| v.0).collect::<Vec<_>>() };
        let pred = ProbMap { height: 3, width: 3, data: values.iter().map(|v| v.1).collect::<Vec<_>>() };
        let d = dice_loss(&truth, &pred).unwrap();
        prop_assert!((-1e-15..=1.0 + 2.0 * DICE_EPS).contains(&d));

        let mut t2 = truth.data.clone();
        let mut p2 = pred.data.clone();
        t2.rotate_left(rot);
        p2.rotate_left(rot);
        let d2 = dice_loss(
            &ProbMap { height: 3, width: 3, data: t2 },
            &ProbMap { height: 3, width: 3, data: p2 },
        )
        .unwrap();
        prop_assert!((d - d2).abs() <= 1e-12);
    }

    /// IoU never exceeds F1, and both respect simultaneous relabeling of the
    /// pixel grid (metrics depend on counts only).
    #[test]
    fn iou_dominated_by_f1(bits in prop::collection::vec((any::<bool>(), any::<bool>()), 16..=16)) {
        let truth = MaskTensor { height: 4, width: 4, data: bits.iter().map(|b| b.0 as u8).collect() };
        let pred = MaskTensor { height: 4, width: 4, data: bits.iter().map(|b| b.1 as u8).collect() };
        let s = scores(&confusion(&truth, &pred).unwrap());
        prop_assert!(s.iou <= s.f1 + 1e-15);
        prop_assert!((0.0..=1.0).contains(&s.precision));
        prop_assert!((0.0..=1.0).contains(&s.recall));
        prop_assert!((0.0..=1.0).contains(&s.iou));
        prop_assert!((0.0..=1.0).contains(&s.f1));
    }
}
