//! Thread-local allocation accounting.
//!
//! [`CountingAllocator`] wraps the system allocator and keeps per-thread
//! counters, so a test or benchmark can ask "how much did *this* code path
//! allocate" without interference from other threads. The library never
//! installs it; a binary that wants real numbers must declare it as its
//! `#[global_allocator]`. Without that, [`measure_thread_allocs`] reports
//! zeros.

use std::alloc::{GlobalAlloc, Layout, System};
use std::cell::Cell;

pub struct CountingAllocator;

thread_local! {
    static TOTAL_BYTES: Cell<u64> = const { Cell::new(0) };
    static ALLOCATIONS: Cell<u64> = const { Cell::new(0) };
    static LIVE_BYTES: Cell<usize> = const { Cell::new(0) };
    static PEAK_LIVE: Cell<usize> = const { Cell::new(0) };
}

#[inline]
fn on_alloc(size: usize) {
    TOTAL_BYTES.with(|c| c.set(c.get() + size as u64));
    ALLOCATIONS.with(|c| c.set(c.get() + 1));
    let live = LIVE_BYTES.with(|c| {
        let l = c.get() + size;
        c.set(l);
        l
    });
    PEAK_LIVE.with(|c| {
        if live > c.get() {
            c.set(live);
        }
    });
}

#[inline]
fn on_dealloc(size: usize) {
    LIVE_BYTES.with(|c| c.set(c.get().saturating_sub(size)));
}

unsafe impl GlobalAlloc for CountingAllocator {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = unsafe { System.alloc(layout) };
        if !p.is_null() {
            on_alloc(layout.size());
        }
        p
    }

    unsafe fn alloc_zeroed(&self, layout: Layout) -> *mut u8 {
        let p = unsafe { System.alloc_zeroed(layout) };
        if !p.is_null() {
            on_alloc(layout.size());
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        unsafe { System.dealloc(ptr, layout) };
        on_dealloc(layout.size());
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        let p = unsafe { System.realloc(ptr, layout, new_size) };
        if !p.is_null() {
            // Growth counts as a fresh allocation of the tail; shrinking
            // only lowers the live level.
            if new_size > layout.size() {
                on_alloc(new_size - layout.size());
            } else {
                on_dealloc(layout.size() - new_size);
            }
        }
        p
    }
}

/// What the current thread allocated inside a [`measure_thread_allocs`] call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AllocStats {
    /// Bytes requested from the allocator, ignoring frees.
    pub total_bytes: u64,
    /// Number of allocation calls (realloc growth included).
    pub allocations: u64,
    /// High-water mark of live bytes, relative to the level at entry.
    pub peak_live_bytes: usize,
}

/// Run `f` and report the current thread's allocations during the call.
///
/// `peak_live_bytes` is measured against the live level at entry, so
/// buffers created and dropped inside still register. Returns zeros unless
/// the running binary installed [`CountingAllocator`] as its global
/// allocator.
pub fn measure_thread_allocs<T>(f: impl FnOnce() -> T) -> (AllocStats, T) {
    let t0 = TOTAL_BYTES.with(Cell::get);
    let a0 = ALLOCATIONS.with(Cell::get);
    let live0 = LIVE_BYTES.with(Cell::get);
    PEAK_LIVE.with(|c| c.set(live0));
    let out = f();
    let stats = AllocStats {
        total_bytes: TOTAL_BYTES.with(Cell::get) - t0,
        allocations: ALLOCATIONS.with(Cell::get) - a0,
        peak_live_bytes: PEAK_LIVE.with(Cell::get).saturating_sub(live0),
    };
    (stats, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    // lib.rs installs CountingAllocator for the test binary, so these see
    // real numbers.

    #[test]
    fn vec_allocation_is_counted() {
        let (stats, v) = measure_thread_allocs(|| vec![0u8; 10_000]);
        assert!(stats.total_bytes >= 10_000, "total {}", stats.total_bytes);
        assert!(stats.allocations >= 1);
        assert!(stats.peak_live_bytes >= 10_000);
        drop(v);
    }

    #[test]
    fn dropped_buffers_still_raise_the_peak() {
        let (outer, _) = measure_thread_allocs(|| {
            let tmp = vec![0u64; 4096];
            drop(tmp);
            vec![0u8; 16]
        });
        assert!(outer.peak_live_bytes >= 4096 * 8);
    }

    #[test]
    fn measurement_is_relative_to_entry() {
        let _held = vec![0u8; 1 << 16];
        let (stats, _) = measure_thread_allocs(|| vec![0u8; 32]);
        // The held buffer predates the window and must not count.
        assert!(stats.peak_live_bytes < 1 << 15, "peak {}", stats.peak_live_bytes);
    }
}
