//! Thread-local multiply-accumulate counter fed by [`super::matmul`].
//!
//! Used to check the analytic cost model against what the kernels actually
//! execute. Read it before and after the region of interest.

use std::cell::Cell;

thread_local! {
    static MACS: Cell<u64> = const { Cell::new(0) };
}

#[inline]
pub(crate) fn add(n: u64) {
    MACS.with(|c| c.set(c.get().wrapping_add(n)));
}

/// Running total on the calling thread.
pub fn read() -> u64 {
    MACS.with(Cell::get)
}

/// Runs `f` and returns its result with the MACs it executed.
pub fn measure<R>(f: impl FnOnce() -> R) -> (R, u64) {
    let before = read();
    let out = f();
    (out, read().wrapping_sub(before))
}
