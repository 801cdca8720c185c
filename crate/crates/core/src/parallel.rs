//! Order-preserving fan-out over scoped threads.
//!
//! Work is split into `workers` contiguous chunks and results are concatenated
//! in input order, so output never depends on scheduling.

pub fn par_map<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let workers = workers.max(1).min(items.len().max(1));
    if workers == 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(workers);
    std::thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| {
                let f = &f;
                scope.spawn(move || part.iter().map(f).collect::<Vec<R>>())
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preserves_order_for_any_worker_count() {
        let items: Vec<usize> = (0..37).collect();
        let expected: Vec<usize> = items.iter().map(|x| x * x).collect();
        for w in [1, 2, 3, 8, 64] {
            assert_eq!(par_map(&items, w, |x| x * x), expected);
        }
        let empty: Vec<usize> = Vec::new();
        assert!(par_map(&empty, 4, |x| *x).is_empty());
    }
}
