use std::hint;
use std::thread;

/// Spins `busy_wait` iterations between checks of `ready`, yielding the
/// thread after each unsuccessful round.
pub(crate) fn spin_until(busy_wait: u32, mut ready: impl FnMut() -> bool) {
    while !ready() {
        for _ in 0..busy_wait {
            hint::spin_loop();
        }
        if ready() {
            return;
        }
        thread::yield_now();
    }
}
