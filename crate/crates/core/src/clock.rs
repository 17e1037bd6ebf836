//! Low-level timing helpers: fine-grained waits and CPU-time readings.

use std::time::{Duration, Instant};

/// Below this remaining time a wait spins (yielding) instead of sleeping.
const SPIN_THRESHOLD: Duration = Duration::from_micros(1500);
/// Sleep ends this long before the target to absorb wake-up latency.
const SLEEP_MARGIN: Duration = Duration::from_micros(1000);

/// Shrinks the calling thread's timer slack so short sleeps wake close to
/// their deadline. No-op off Linux.
pub fn set_fine_timer_slack() {
    #[cfg(target_os = "linux")]
    unsafe {
        // 1 µs; the default of 50 µs dominates sub-millisecond service times
        libc::prctl(libc::PR_SET_TIMERSLACK, 1_000 as libc::c_ulong, 0, 0, 0);
    }
}

/// Waits until `deadline` with a coarse sleep followed by a yielding spin.
pub fn wait_until(deadline: Instant) {
    loop {
        let now = Instant::now();
        if now >= deadline {
            return;
        }
        let remaining = deadline - now;
        if remaining > SPIN_THRESHOLD {
            std::thread::sleep(remaining - SLEEP_MARGIN);
        } else {
            std::thread::yield_now();
        }
    }
}

fn clock_time(clock: libc::clockid_t) -> Option<Duration> {
    let mut ts = libc::timespec { tv_sec: 0, tv_nsec: 0 };
    // SAFETY: `ts` is a valid, writable timespec.
    let rc = unsafe { libc::clock_gettime(clock, &mut ts) };
    (rc == 0).then(|| Duration::new(ts.tv_sec as u64, ts.tv_nsec as u32))
}

/// CPU time consumed by the whole process (all threads), if available.
pub fn process_cpu_time() -> Option<Duration> {
    clock_time(libc::CLOCK_PROCESS_CPUTIME_ID)
}

/// CPU time consumed by the calling thread, if available.
pub fn thread_cpu_time() -> Option<Duration> {
    clock_time(libc::CLOCK_THREAD_CPUTIME_ID)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wait_until_reaches_deadline() {
        set_fine_timer_slack();
        let start = Instant::now();
        let deadline = start + Duration::from_millis(5);
        wait_until(deadline);
        assert!(Instant::now() >= deadline);
        wait_until(start);
    }

    #[test]
    fn cpu_clocks_advance() {
        let a = thread_cpu_time().unwrap();
        let mut x = 0u64;
        let t = Instant::now();
        while t.elapsed() < Duration::from_millis(5) {
            x = x.wrapping_mul(31).wrapping_add(7);
        }
        std::hint::black_box(x);
        assert!(thread_cpu_time().unwrap() > a);
        assert!(process_cpu_time().is_some());
    }
}
