//! Deterministic fan-out over independent work items.
//!
//! Results are gathered by item index and merged in order, so the output is
//! identical for any worker count.

/// Applies `f` to every index in `0..count` using up to `threads` workers
/// and returns the results in index order.
pub fn run_indexed<T, F>(count: usize, threads: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let threads = threads.max(1).min(count.max(1));
    if threads <= 1 || count <= 1 {
        return (0..count).map(f).collect();
    }
    let mut chunks: Vec<(usize, Vec<T>)> = std::thread::scope(|scope| {
        let chunk = count.div_ceil(threads);
        let mut handles = Vec::new();
        for w in 0..threads {
            let start = w * chunk;
            let end = ((w + 1) * chunk).min(count);
            if start >= end {
                break;
            }
            let f = &f;
            handles.push(scope.spawn(move || (start, (start..end).map(f).collect::<Vec<T>>())));
        }
        handles
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .collect()
    });
    chunks.sort_by_key(|&(start, _)| start);
    let mut out = Vec::with_capacity(count);
    for (_, mut c) in chunks {
        out.append(&mut c);
    }
    out
}

/// Worker count from an explicit flag, the `FBLAB_THREADS` environment
/// variable, or the available parallelism, in that order.
pub fn worker_count(flag: Option<usize>) -> usize {
    if let Some(n) = flag {
        return n.max(1);
    }
    if let Ok(v) = std::env::var("FBLAB_THREADS")
        && let Ok(n) = v.trim().parse::<usize>()
    {
        return n.max(1);
    }
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn results_are_ordered_and_thread_count_invariant() {
        let work = |i: usize| (i * i) as u64;
        let serial = run_indexed(97, 1, work);
        for t in [2, 3, 8] {
            assert_eq!(run_indexed(97, t, work), serial);
        }
        assert_eq!(serial[10], 100);
    }

    #[test]
    fn empty_and_single_item_runs() {
        assert!(run_indexed(0, 4, |i| i).is_empty());
        assert_eq!(run_indexed(1, 4, |i| i + 1), vec![1]);
    }
}
