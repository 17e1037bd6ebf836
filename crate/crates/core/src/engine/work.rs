use std::cell::{Cell, RefCell};
use std::hint::black_box;
use std::time::{Duration, Instant};

use crate::clock::set_fine_timer_slack;
use crate::topology::ResourceClass;

const SCRATCH_LEN: usize = 64;

thread_local! {
    static SCRATCH: RefCell<[u8; SCRATCH_LEN]> = RefCell::new(*b"streambench synthetic task: parse, transform, checksum payload..");
    static SLACK_SET: Cell<bool> = const { Cell::new(false) };
}

/// Occupies the calling thread for `latency` and returns the elapsed time.
///
/// `Cpu` keeps one core busy with in-memory byte transformations; `Idle`
/// performs a timed wait.
pub fn synthetic_work(latency: Duration, class: ResourceClass) -> Duration {
    let start = Instant::now();
    if latency.is_zero() {
        return start.elapsed();
    }
    match class {
        ResourceClass::Cpu => SCRATCH.with(|s| {
            let mut buf = s.borrow_mut();
            let mut checksum = 0u32;
            loop {
                buf.rotate_left(1);
                for (i, b) in buf.iter_mut().enumerate() {
                    *b = b.wrapping_mul(31).wrapping_add(i as u8) ^ (checksum as u8);
                }
                checksum = checksum.rotate_left(5) ^ u32::from(black_box(buf[0]));
                if start.elapsed() >= latency {
                    break;
                }
            }
            black_box(checksum);
        }),
        ResourceClass::Idle => {
            if !SLACK_SET.get() {
                set_fine_timer_slack();
                SLACK_SET.set(true);
            }
            std::thread::sleep(latency);
        }
    }
    start.elapsed()
}
