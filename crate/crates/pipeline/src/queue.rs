//! Bounded, order-preserving hand-off between a producer pool and one
//! consumer.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{Condvar, Mutex, MutexGuard};

use crate::error::{PipelineError, Result};

struct State<T> {
    ready: BTreeMap<usize, Result<T>>,
    next_claim: usize,
    next_take: usize,
    released: usize,
    cancelled: bool,
    peak: usize,
}

/// Holds prepared items until the consumer takes them in index order.
///
/// A producer may only claim index `i` while `i < released + capacity`, where
/// `released` counts items the consumer has finished with. Items being
/// produced, buffered, or held by the consumer therefore never exceed the
/// capacity, and a fast worker cannot run ahead of a slow one by more.
pub struct BatchQueue<T> {
    capacity: usize,
    total: usize,
    state: Mutex<State<T>>,
    changed: Condvar,
}

impl<T> BatchQueue<T> {
    pub fn new(capacity: usize, total: usize) -> Self {
        assert!(capacity > 0, "queue capacity must be positive");
        Self {
            capacity,
            total,
            state: Mutex::new(State {
                ready: BTreeMap::new(),
                next_claim: 0,
                next_take: 0,
                released: 0,
                cancelled: false,
                peak: 0,
            }),
            changed: Condvar::new(),
        }
    }

    fn lock(&self) -> MutexGuard<'_, State<T>> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Largest number of items ever buffered at once.
    pub fn peak(&self) -> usize {
        self.lock().peak
    }

    /// Next index to produce; blocks while the window is full. `None` once
    /// everything is claimed or the queue was cancelled.
    pub fn claim(&self) -> Option<usize> {
        let mut s = self.lock();
        loop {
            if s.cancelled || s.next_claim >= self.total {
                return None;
            }
            if s.next_claim < s.released + self.capacity {
                s.next_claim += 1;
                return Some(s.next_claim - 1);
            }
            s = self.changed.wait(s).unwrap_or_else(|e| e.into_inner());
        }
    }

    pub fn push(&self, index: usize, item: Result<T>) {
        let mut s = self.lock();
        if s.cancelled {
            return;
        }
        s.ready.insert(index, item);
        s.peak = s.peak.max(s.ready.len());
        debug_assert!(s.ready.len() <= self.capacity);
        drop(s);
        self.changed.notify_all();
    }

    /// The item with the next index, waiting for it if needed. `None` after
    /// the last item or after cancellation.
    pub fn take(&self) -> Option<Result<T>> {
        let mut s = self.lock();
        loop {
            if s.cancelled || s.next_take >= self.total {
                return None;
            }
            let want = s.next_take;
            if let Some(item) = s.ready.remove(&want) {
                s.next_take += 1;
                return Some(item);
            }
            s = self.changed.wait(s).unwrap_or_else(|e| e.into_inner());
        }
    }

    /// Marks every taken item as finished, opening the window.
    pub fn release(&self) {
        let mut s = self.lock();
        s.released = s.next_take;
        drop(s);
        self.changed.notify_all();
    }

    /// Stops producers at their next claim and drops buffered items.
    pub fn cancel(&self) {
        let mut s = self.lock();
        s.cancelled = true;
        s.ready.clear();
        drop(s);
        self.changed.notify_all();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolStats {
    pub items: usize,
    pub peak_buffered: usize,
}

/// Produces `total` items on `workers` threads and hands them to `consume`
/// in index order.
///
/// A producer error or panic is delivered to the consumer at that item's
/// position and stops the pool; so does an error returned by `consume`.
/// Returns once every thread has exited.
pub fn run_pool<T, P, C>(workers: usize, capacity: usize, total: usize, produce: P, mut consume: C) -> Result<PoolStats>
where
    T: Send,
    P: Fn(usize) -> Result<T> + Sync,
    C: FnMut(usize, T) -> Result<()>,
{
    if workers == 0 || capacity == 0 {
        return Err(PipelineError::Config("workers and queue capacity must be at least 1".into()));
    }
    let queue = BatchQueue::new(capacity, total);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| {
                while let Some(i) = queue.claim() {
                    let item = match catch_unwind(AssertUnwindSafe(|| produce(i))) {
                        Ok(r) => r,
                        Err(panic) => Err(PipelineError::Worker {
                            batch: i,
                            message: panic_message(&panic),
                        }),
                    };
                    queue.push(i, item);
                }
            });
        }
        let mut outcome = Ok(());
        let mut taken = 0;
        while let Some(item) = queue.take() {
            let step = item.and_then(|v| consume(taken, v));
            if let Err(e) = step {
                outcome = Err(e);
                break;
            }
            taken += 1;
            queue.release();
        }
        queue.cancel();
        outcome.map(|_| PoolStats {
            items: taken,
            peak_buffered: queue.peak(),
        })
    })
}

fn panic_message(p: &Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| p.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "panic".into())
}
