//! Deterministic fan-out over indexed work items.
//!
//! Results are keyed by input index and re-assembled in index order, so
//! outputs are identical for any worker count or scheduling.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

/// Apply `f` to every index in `0..n`, using up to `jobs` worker threads.
/// The returned vector is ordered by index regardless of scheduling.
pub fn map_indexed<R, F>(jobs: usize, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync,
{
    let jobs = jobs.max(1).min(n.max(1));
    if jobs == 1 {
        return (0..n).map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel();
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            let tx = tx.clone();
            let next = &next;
            let f = &f;
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                if tx.send((i, f(i))).is_err() {
                    break;
                }
            });
        }
    });
    drop(tx);
    let mut out: Vec<Option<R>> = (0..n).map(|_| None).collect();
    for (i, r) in rx {
        out[i] = Some(r);
    }
    out.into_iter().map(|r| r.expect("all indices computed")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordered_and_worker_count_invariant() {
        let one: Vec<usize> = map_indexed(1, 100, |i| i * i);
        let four: Vec<usize> = map_indexed(4, 100, |i| i * i);
        assert_eq!(one, four);
        assert_eq!(one[7], 49);
    }

    #[test]
    fn handles_empty_input() {
        let out: Vec<u8> = map_indexed(4, 0, |_| 0);
        assert!(out.is_empty());
    }
}
