use rayon::ThreadPoolBuilder;

/// Runs `f` inside a dedicated rayon pool of `workers` threads (0 = rayon default).
///
/// Parallel sections in the crate collect results in input order, so output
/// never depends on the worker count.
pub fn with_workers<T, F>(workers: usize, f: F) -> T
where
    T: Send,
    F: FnOnce() -> T + Send,
{
    match ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}
