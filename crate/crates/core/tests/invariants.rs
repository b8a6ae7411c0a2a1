mod common;

use common::invariants::*;
use lungssl::ssl::Method;
use proptest::prelude::*;

fn check(r: Check) -> Result<(), TestCaseError> {
    r.map_err(TestCaseError::fail)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn patient_splits_are_disjoint(
        patients in 3usize..30,
        train in 0.2f64..0.8,
        val_share in 0.1f64..0.9,
        seed in any::<u64>(),
    ) {
        let val = (1.0 - train) * val_share;
        check(split_disjoint(patients, [train, val, 1.0 - train - val], seed))?;
    }

    #[test]
    fn checkpoints_round_trip_bit_exact(seed in any::<u64>()) {
        check(checkpoint_round_trip(seed))?;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]

    #[test]
    fn frozen_protocols_keep_extractor(seed in any::<u64>()) {
        check(freezing(seed))?;
    }

    #[test]
    fn shared_mode_runs_one_backbone(seed in any::<u64>()) {
        check(shared_runs_backbone_once(seed))?;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2))]

    #[test]
    fn pipelines_are_seed_deterministic(
        seed in any::<u64>(),
        method in prop_oneof![Just(Method::Simclr), Just(Method::BarlowTwins), Just(Method::Vicreg)],
    ) {
        check(pipeline_determinism(seed, method))?;
    }
}
