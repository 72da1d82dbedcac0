//! Small shared runtime helpers: seed derivation, thread capping, timers.

use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;

/// splitmix64 step; the standard finalizer used to whiten seed material.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from a root seed and a stream of tags, so that
/// independent consumers (trials, model init, task data) get decorrelated
/// deterministic streams.
pub fn subseed(root: u64, tags: &[u64]) -> u64 {
    let mut state = root;
    let mut out = splitmix64(&mut state);
    for &t in tags {
        state ^= t;
        out ^= splitmix64(&mut state);
    }
    out
}

/// Deterministic RNG for a (root seed, tag stream) pair.
pub fn rng_for(root: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(subseed(root, tags))
}

/// Worker-thread cap from `NORMKIT_THREADS` (default 1).
pub fn max_threads() -> usize {
    std::env::var("NORMKIT_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}

/// Maps `f` over `items` using at most `threads` worker threads, preserving
/// input order in the output. With `threads == 1` this is a plain map.
pub fn parallel_map<T, R, F>(items: Vec<T>, threads: usize, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync,
{
    if threads <= 1 || items.len() <= 1 {
        return items.into_iter().map(f).collect();
    }
    let n = items.len();
    let mut slots: Vec<Option<R>> = (0..n).map(|_| None).collect();
    let jobs: Vec<(usize, T)> = items.into_iter().enumerate().collect();
    let queue = std::sync::Mutex::new(jobs);
    let results = std::sync::Mutex::new(&mut slots);
    std::thread::scope(|scope| {
        for _ in 0..threads.min(n) {
            scope.spawn(|| loop {
                let job = queue.lock().unwrap().pop();
                match job {
                    Some((idx, item)) => {
                        let r = f(item);
                        results.lock().unwrap()[idx] = Some(r);
                    }
                    None => break,
                }
            });
        }
    });
    slots.into_iter().map(|s| s.expect("worker completed")).collect()
}

/// Process CPU time in seconds.
pub fn cpu_time_s() -> f64 {
    let mut ts = libc::timespec { tv_sec: 0, tv_nsec: 0 };
    let rc = unsafe { libc::clock_gettime(libc::CLOCK_PROCESS_CPUTIME_ID, &mut ts) };
    if rc == 0 {
        ts.tv_sec as f64 + ts.tv_nsec as f64 * 1e-9
    } else {
        0.0
    }
}
