//! Byte accounting for tensor storage.
//!
//! Every tensor buffer reports its size here when it is allocated and when it
//! is freed. Counters are per thread: a training or inference rollout runs on
//! one thread, so concurrent test threads do not pollute each other's peaks.

use std::cell::Cell;

thread_local! {
    static LIVE: Cell<i64> = const { Cell::new(0) };
    static PEAK: Cell<i64> = const { Cell::new(0) };
    static ALLOCATIONS: Cell<u64> = const { Cell::new(0) };
}

pub(crate) fn record_alloc(bytes: usize) {
    let bytes = bytes as i64;
    LIVE.with(|live| {
        let now = live.get() + bytes;
        live.set(now);
        PEAK.with(|peak| {
            if now > peak.get() {
                peak.set(now);
            }
        });
    });
    ALLOCATIONS.with(|n| n.set(n.get() + 1));
}

pub(crate) fn record_free(bytes: usize) {
    LIVE.with(|live| live.set(live.get() - bytes as i64));
}

/// Bytes of tensor storage currently alive on this thread.
pub fn live_bytes() -> i64 {
    LIVE.with(Cell::get)
}

/// Highest value `live_bytes` has reached since the last [`reset_peak`].
pub fn peak_bytes() -> i64 {
    PEAK.with(Cell::get)
}

/// Number of tensor buffers allocated on this thread so far.
pub fn allocation_count() -> u64 {
    ALLOCATIONS.with(Cell::get)
}

/// Lowers the recorded peak to the current live level.
pub fn reset_peak() {
    let now = live_bytes();
    PEAK.with(|peak| peak.set(now));
}

/// Runs `f` and returns its result together with the peak number of bytes
/// allocated on top of what was already live when `f` started.
pub fn measure_peak<R>(f: impl FnOnce() -> R) -> (R, u64) {
    let saved_peak = peak_bytes();
    let baseline = live_bytes();
    reset_peak();
    let out = f();
    let peak = peak_bytes();
    PEAK.with(|p| p.set(saved_peak.max(peak)));
    (out, (peak - baseline).max(0) as u64)
}
