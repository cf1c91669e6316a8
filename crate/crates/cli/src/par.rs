//! Deterministic ordered parallelism: items are assigned to workers by
//! index stripe and results are merged back in item order, so outputs are
//! identical for any worker count.

use anyhow::Result;

/// Runs `task` for indices `0..n` across `workers` threads. Each worker
/// builds its own state with `init` (file handles, readers). Results come
/// back ordered by index.
pub fn parallel_ordered<T, S, I, F>(n: usize, workers: usize, init: I, task: F) -> Result<Vec<T>>
where
    T: Send,
    S: Send,
    I: Fn() -> Result<S> + Sync,
    F: Fn(&mut S, usize) -> Result<T> + Sync,
{
    let workers = workers.max(1).min(n.max(1));
    if workers <= 1 {
        let mut state = init()?;
        return (0..n).map(|i| task(&mut state, i)).collect();
    }
    let results = std::thread::scope(|scope| -> Result<Vec<Vec<(usize, T)>>> {
        let mut handles = Vec::with_capacity(workers);
        for w in 0..workers {
            let init = &init;
            let task = &task;
            handles.push(scope.spawn(move || -> Result<Vec<(usize, T)>> {
                let mut state = init()?;
                let mut out = Vec::new();
                let mut i = w;
                while i < n {
                    out.push((i, task(&mut state, i)?));
                    i += workers;
                }
                Ok(out)
            }));
        }
        handles
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .collect()
    })?;
    let mut slots: Vec<Option<T>> = std::iter::repeat_with(|| None).take(n).collect();
    for part in results {
        for (i, v) in part {
            slots[i] = Some(v);
        }
    }
    Ok(slots.into_iter().map(|s| s.unwrap()).collect())
}
