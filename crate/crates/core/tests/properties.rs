use gatherconv_testkit::{
    check_flop_counts, check_gather, check_linearity, check_oracle, check_padding_neutrality, check_partition,
    check_shift, check_thread_determinism, random_case, rng, Case,
};
use proptest::prelude::*;

fn case(seed: u64, max_dim: usize) -> Case {
    random_case(&mut rng(seed), max_dim)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn gather_matches_im2col_and_direct(seed in any::<u64>()) {
        let c = case(seed, 16);
        prop_assert!(check_gather(&c).is_ok(), "{:?}: {:?}", c, check_gather(&c));
    }

    #[test]
    fn plan_partitions_output(seed in any::<u64>()) {
        let c = case(seed, 16);
        prop_assert_eq!(check_partition(&c), Ok(()));
    }

    #[test]
    fn blocked_matches_reference(seed in any::<u64>()) {
        let c = case(seed, 16);
        prop_assert_eq!(check_oracle(&c), Ok(()), "{:?}", c);
    }

    #[test]
    fn linear(seed in any::<u64>()) {
        let c = case(seed, 12);
        prop_assert_eq!(check_linearity(&c), Ok(()), "{:?}", c);
    }

    #[test]
    fn shift_covariant(seed in any::<u64>()) {
        let c = case(seed, 16);
        prop_assert!(check_shift(&c).is_ok(), "{:?}: {:?}", c, check_shift(&c));
    }

    #[test]
    fn padding_neutral(seed in any::<u64>()) {
        let c = case(seed, 12);
        prop_assert_eq!(check_padding_neutrality(&c), Ok(()), "{:?}", c);
    }

    #[test]
    fn thread_count_deterministic(seed in any::<u64>()) {
        let c = case(seed, 12);
        prop_assert_eq!(check_thread_determinism(&c), Ok(()));
    }

    #[test]
    fn flop_formulas_match_instrumented_kernels(seed in any::<u64>()) {
        let c = case(seed, 10);
        prop_assert_eq!(check_flop_counts(&c), Ok(()), "{:?}", c);
    }
}
