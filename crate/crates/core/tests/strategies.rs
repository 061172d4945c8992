use std::collections::BTreeSet;
use std::sync::atomic::Ordering;
use std::sync::Arc;
use std::time::Duration;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use quackstore::device::{open_device, Backing, Device, DeviceGeometry, LatencyModel, LogEvent, Opcode, DEFAULT_MDTS};
use quackstore::layout::{format_device, BlockId, BLOCK_SIZE};
use quackstore::scheduler::{EventKind, Scheduler};
use quackstore::strategy::{build_strategy, enter_worker, IoStrategy, StrategyConfig, StrategyKind};

fn device(capacity: u64, latency: LatencyModel) -> Arc<Device> {
    let g = DeviceGeometry::for_capacity(capacity, 512, DEFAULT_MDTS).unwrap();
    let d = open_device(g, latency, Backing::Memory).unwrap();
    format_device(&d).unwrap();
    d
}

fn strategy(d: &Arc<Device>, kind: StrategyKind) -> Arc<dyn IoStrategy> {
    build_strategy(d, &StrategyConfig::new(kind).with_pool_size(4)).unwrap()
}

#[test]
fn every_strategy_reads_back_what_it_wrote() {
    for kind in StrategyKind::ALL {
        let d = device(8 << 20, LatencyModel::default().with_seed(3));
        let s = strategy(&d, kind);
        let _scope = enter_worker(s.as_ref()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(kind as u64);
        let buf = d.alloc_dma_buffer(BLOCK_SIZE as usize).unwrap();
        let mut written = Vec::new();
        for b in 0..5 {
            let mut payload = vec![0u8; BLOCK_SIZE as usize];
            rng.fill(&mut payload[..]);
            buf.fill_from(&payload).unwrap();
            s.write_block(BlockId(b), &buf).unwrap();
            written.push(payload);
        }
        s.flush().unwrap();
        for (b, payload) in written.iter().enumerate() {
            s.read_block(BlockId(b as u64), &buf).unwrap();
            assert!(buf.with(|x| x == payload.as_slice()), "{kind} block {b}");
        }
    }
}

#[test]
fn command_counts_follow_the_transfer_size() {
    for kind in StrategyKind::ALL {
        let d = device(8 << 20, LatencyModel::default());
        let s = strategy(&d, kind);
        let _scope = enter_worker(s.as_ref()).unwrap();
        d.enable_command_log();
        let block = d.alloc_dma_buffer(BLOCK_SIZE as usize).unwrap();
        s.write_block(BlockId(1), &block).unwrap();
        s.flush().unwrap();
        let log = d.take_command_log();
        let submitted: Vec<_> = log
            .iter()
            .filter_map(|e| match e {
                LogEvent::Submitted { opcode, lba_count, .. } => Some((*opcode, *lba_count)),
                _ => None,
            })
            .collect();
        let host: Vec<_> = log
            .iter()
            .filter_map(|e| match e {
                LogEvent::HostIo { opcode, length, .. } => Some((*opcode, *length)),
                _ => None,
            })
            .collect();
        if kind == StrategyKind::FileBaseline {
            assert!(submitted.is_empty());
            assert_eq!(host, vec![(Opcode::Write, BLOCK_SIZE)]);
        } else {
            assert!(host.is_empty());
            assert_eq!(submitted, vec![(Opcode::Write, 256), (Opcode::Write, 256)], "{kind}");
        }

        let header = d.alloc_dma_buffer(4096).unwrap();
        s.read_at(0, &header).unwrap();
        let log = d.take_command_log();
        let reads = log
            .iter()
            .filter(|e| matches!(e, LogEvent::Submitted { lba_count: 8, .. } | LogEvent::HostIo { length: 4096, .. }))
            .count();
        assert_eq!(reads, 1, "{kind}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// With drain on, a write that has returned has been applied.
    #[test]
    fn drained_writes_are_complete_on_return(
        kind_index in 0usize..5,
        jitter_us in 0u64..40,
        seed in any::<u64>(),
        block in 0u64..20,
    ) {
        let kind = StrategyKind::ALL[kind_index];
        let latency = LatencyModel::default().with_jitter(Duration::from_micros(jitter_us)).with_seed(seed);
        let d = device(8 << 20, latency);
        let s = strategy(&d, kind);
        let _scope = enter_worker(s.as_ref()).unwrap();
        let buf = d.alloc_dma_buffer(BLOCK_SIZE as usize).unwrap();
        buf.with_mut(|b| b.fill(seed as u8 | 1));
        s.write_block(BlockId(block), &buf).unwrap();
        let stats = d.stats();
        prop_assert_eq!(stats.submitted.load(Ordering::Relaxed), stats.completed.load(Ordering::Relaxed));
        let image = d.image_bytes().unwrap();
        let at = quackstore::layout::block_offset(BlockId(block), &d.geometry()).unwrap() as usize;
        prop_assert!(image[at..at + BLOCK_SIZE as usize].iter().all(|&x| x == seed as u8 | 1));
    }
}

fn write_many(kind: StrategyKind, workers: usize) -> (Arc<Device>, Vec<quackstore::scheduler::Event>) {
    let d = device(32 << 20, LatencyModel::default().with_seed(11));
    let s = build_strategy(&d, &StrategyConfig::new(kind).with_pool_size(workers)).unwrap();
    let sched = Scheduler::with_clock(Arc::clone(d.clock()));
    for t in 0..32u64 {
        let s = Arc::clone(&s);
        sched
            .submit_task(
                &[],
                Box::new(move || {
                    let buf = s.device().alloc_dma_buffer(BLOCK_SIZE as usize)?;
                    buf.with_mut(|b| b.fill(t as u8));
                    s.write_block(BlockId(t % 16), &buf)?;
                    s.read_block(BlockId(t % 16), &buf)?;
                    Ok(())
                }),
            )
            .unwrap();
    }
    sched.run_to_completion(workers, s.worker_hooks()).unwrap();
    (d, sched.events())
}

#[test]
fn shared_and_owned_queues_never_cross_threads() {
    for kind in [
        StrategyKind::AsyncSingleQueue,
        StrategyKind::AsyncQueuePool,
        StrategyKind::AsyncThreadQueues,
    ] {
        let (d, _) = write_many(kind, 8);
        assert_eq!(d.stats().ownership_violations.load(Ordering::Relaxed), 0, "{kind}");
    }
}

#[test]
fn each_worker_gets_its_own_queue() {
    let (_, events) = write_many(StrategyKind::AsyncThreadQueues, 8);
    let created: Vec<_> = events
        .iter()
        .filter_map(|e| match e.kind {
            EventKind::QueueCreated { worker, queue } => Some((worker, queue)),
            _ => None,
        })
        .collect();
    assert_eq!(created.len(), 8);
    let queues: BTreeSet<_> = created.iter().map(|c| c.1).collect();
    let workers: BTreeSet<_> = created.iter().map(|c| c.0).collect();
    assert_eq!((queues.len(), workers.len()), (8, 8));
    let terminated = events
        .iter()
        .filter(|e| matches!(e.kind, EventKind::QueueTerminated { outstanding: 0, .. }))
        .count();
    assert_eq!(terminated, 8);
}
