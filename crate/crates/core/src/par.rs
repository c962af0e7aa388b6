//! Data-parallel helpers. With the `parallel` feature the work is spread over
//! the rayon pool; without it the same closures run sequentially in order.
//! Results are always returned in input order, so output never depends on
//! which path ran.

use std::cell::Cell;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

thread_local! {
    static FORCE_SEQUENTIAL: Cell<bool> = const { Cell::new(false) };
}

struct Restore(bool);

impl Drop for Restore {
    fn drop(&mut self) {
        FORCE_SEQUENTIAL.with(|f| f.set(self.0));
    }
}

/// Runs `f` with every helper on this thread taking the sequential path,
/// including helpers nested inside it.
pub fn sequential<R>(f: impl FnOnce() -> R) -> R {
    let _restore = Restore(FORCE_SEQUENTIAL.with(|s| s.replace(true)));
    f()
}

fn use_pool() -> bool {
    cfg!(feature = "parallel") && !FORCE_SEQUENTIAL.with(Cell::get)
}

pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if use_pool() {
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

pub fn map_slice<A, T, F>(items: &[A], f: F) -> Vec<T>
where
    A: Sync,
    T: Send,
    F: Fn(&A) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if use_pool() {
        return items.par_iter().map(f).collect();
    }
    items.iter().map(f).collect()
}

/// Whether helpers called from this thread will use the rayon pool.
pub fn is_parallel() -> bool {
    use_pool()
}
