//! Peak live-allocation measurement through a counting global allocator.
//!
//! Only allocations made by the measuring thread are counted, and only
//! while a measurement is running. Measurements are serialized by a
//! process-wide lock.

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MeterError {
    #[error("allocation metering is unavailable: build with the `alloc-meter` feature")]
    Unsupported,
}

/// High-water mark of bytes allocated by `f` on this thread and still
/// live, relative to the start of the call.
#[cfg(feature = "alloc-meter")]
pub fn measured_peak_memory<R>(f: impl FnOnce() -> R) -> Result<(R, usize), MeterError> {
    imp::measure(f)
}

#[cfg(not(feature = "alloc-meter"))]
pub fn measured_peak_memory<R>(_f: impl FnOnce() -> R) -> Result<(R, usize), MeterError> {
    Err(MeterError::Unsupported)
}

pub fn is_supported() -> bool {
    cfg!(feature = "alloc-meter")
}

#[cfg(feature = "alloc-meter")]
mod imp {
    #![allow(unsafe_code)]

    use std::alloc::{GlobalAlloc, Layout, System};
    use std::cell::Cell;
    use std::sync::atomic::{AtomicIsize, Ordering};
    use std::sync::Mutex;

    use super::MeterError;

    pub struct CountingAlloc;

    static CURRENT: AtomicIsize = AtomicIsize::new(0);
    static PEAK: AtomicIsize = AtomicIsize::new(0);
    static LOCK: Mutex<()> = Mutex::new(());

    thread_local! {
        static ACTIVE: Cell<bool> = const { Cell::new(false) };
    }

    fn active() -> bool {
        ACTIVE.try_with(Cell::get).unwrap_or(false)
    }

    fn record(delta: isize) {
        let now = CURRENT.fetch_add(delta, Ordering::Relaxed) + delta;
        PEAK.fetch_max(now, Ordering::Relaxed);
    }

    unsafe impl GlobalAlloc for CountingAlloc {
        unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
            let p = System.alloc(layout);
            if !p.is_null() && active() {
                record(layout.size() as isize);
            }
            p
        }

        unsafe fn alloc_zeroed(&self, layout: Layout) -> *mut u8 {
            let p = System.alloc_zeroed(layout);
            if !p.is_null() && active() {
                record(layout.size() as isize);
            }
            p
        }

        unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
            System.dealloc(ptr, layout);
            if active() {
                record(-(layout.size() as isize));
            }
        }

        unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
            let p = System.realloc(ptr, layout, new_size);
            if !p.is_null() && active() {
                record(new_size as isize - layout.size() as isize);
            }
            p
        }
    }

    struct Active;

    impl Drop for Active {
        fn drop(&mut self) {
            ACTIVE.with(|a| a.set(false));
        }
    }

    pub fn measure<R>(f: impl FnOnce() -> R) -> Result<(R, usize), MeterError> {
        let _serial = LOCK.lock().unwrap_or_else(|e| e.into_inner());
        CURRENT.store(0, Ordering::SeqCst);
        PEAK.store(0, Ordering::SeqCst);
        let out = {
            let _on = Active;
            ACTIVE.with(|a| a.set(true));
            f()
        };
        Ok((out, PEAK.load(Ordering::SeqCst).max(0) as usize))
    }
}

#[cfg(feature = "alloc-meter")]
#[global_allocator]
static GLOBAL: imp::CountingAlloc = imp::CountingAlloc;
