//! Multi-threaded nonce search with the same result as sequential mining.

use std::sync::atomic::{AtomicU64, Ordering};
use std::thread;

use pact_core::ledger::{mine, seal, BlockHeader, NonceHasher};
use pact_core::Block;

/// Splits the nonce space into `workers` interleaved strides. Each worker
/// stops once it passes the best nonce found so far, so the smallest
/// qualifying nonce always wins.
pub fn mine_parallel(template: &BlockHeader, difficulty: u32, nonce_start: u64, workers: usize) -> Block {
    if workers <= 1 {
        return mine(template, difficulty, nonce_start, None).expect("unbounded search");
    }
    let best = AtomicU64::new(u64::MAX);
    thread::scope(|scope| {
        for w in 0..workers as u64 {
            let best = &best;
            scope.spawn(move || {
                let mut hasher = NonceHasher::new(template);
                let mut nonce = nonce_start.checked_add(w);
                while let Some(n) = nonce {
                    if n >= best.load(Ordering::Relaxed) {
                        break;
                    }
                    if hasher.hash(n).meets_difficulty(difficulty) {
                        best.fetch_min(n, Ordering::Relaxed);
                        break;
                    }
                    nonce = n.checked_add(workers as u64);
                }
            });
        }
    });
    let nonce = best.into_inner();
    seal(template, nonce, NonceHasher::new(template).hash(nonce))
}

pub fn default_workers() -> usize {
    thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}
