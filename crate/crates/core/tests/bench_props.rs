use std::time::Duration;

use proptest::prelude::*;

use quackstore::bench::{prepare_image, scan_image, scan_ranges, Workload};
use quackstore::device::LatencyModel;
use quackstore::strategy::{StrategyConfig, StrategyKind};

fn flat(base_us: u64) -> LatencyModel {
    LatencyModel {
        base_latency: Duration::from_micros(base_us),
        jitter_range: Duration::ZERO,
        ..LatencyModel::default()
    }
    .passthrough(true)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn ranges_cover_every_block_once(blocks in 1u64..2000, workers in 1usize..32) {
        let ranges = scan_ranges(blocks, workers);
        prop_assert!(ranges.len() <= 4 * workers);
        let mut next = 0;
        for (a, b) in ranges {
            prop_assert_eq!(a, next);
            prop_assert!(b > a);
            next = b;
        }
        prop_assert_eq!(next, blocks);
    }

    /// Without jitter, a slower device never yields a shorter scan.
    #[test]
    fn scan_time_is_monotone_in_latency(kind_index in 1usize..5, lo in 10u64..200, extra in 1u64..200, workers in 1usize..8) {
        let kind = StrategyKind::ALL[kind_index];
        let (g, image, info) = prepare_image(&Workload::new(0.02, 5).unwrap()).unwrap();
        let cfg = StrategyConfig::new(kind).with_pool_size(workers);
        let fast = scan_image(g, &image, flat(lo), cfg.clone(), workers).unwrap();
        let slow = scan_image(g, &image, flat(lo + extra), cfg, workers).unwrap();
        prop_assert!(fast.duration <= slow.duration, "{:?} > {:?}", fast.duration, slow.duration);
        prop_assert_eq!(fast.checksum, info.checksum);
        prop_assert_eq!(slow.checksum, info.checksum);
    }
}

#[test]
fn every_strategy_scans_the_same_checksum() {
    let (g, image, info) = prepare_image(&Workload::new(0.05, 9).unwrap()).unwrap();
    for kind in StrategyKind::ALL {
        let r = scan_image(g, &image, LatencyModel::default(), StrategyConfig::new(kind).with_pool_size(4), 4).unwrap();
        assert_eq!(r.checksum, info.checksum, "{kind}");
        assert_eq!(r.blocks, info.block_count);
        assert!(r.duration > Duration::ZERO);
    }
}

#[test]
fn identical_seeds_give_identical_durations() {
    let (g, image, _) = prepare_image(&Workload::new(0.02, 1).unwrap()).unwrap();
    let cfg = StrategyConfig::new(StrategyKind::AsyncQueuePool).with_pool_size(4);
    let a = scan_image(g, &image, LatencyModel::default().with_seed(9), cfg.clone(), 4).unwrap();
    let b = scan_image(g, &image, LatencyModel::default().with_seed(9), cfg, 4).unwrap();
    assert_eq!(a.duration, b.duration);
}
