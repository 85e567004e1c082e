//! Execution helpers: data-parallel when the `parallel` feature is on,
//! plain loops otherwise. Output order always matches input order.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map over a slice, fanning out across threads when available.
#[cfg(feature = "parallel")]
pub fn map_items<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Send + Sync,
{
    items.par_iter().map(f).collect()
}

/// Map over a slice, fanning out across threads when available.
#[cfg(not(feature = "parallel"))]
pub fn map_items<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Send + Sync,
{
    map_items_seq(items, f)
}

/// Always-sequential map; the benchmark baseline.
pub fn map_items_seq<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(f).collect()
}

/// Run three closures, joined before returning; concurrent when possible.
#[cfg(feature = "parallel")]
pub fn join3<RA, RB, RC>(
    a: impl FnOnce() -> RA + Send,
    b: impl FnOnce() -> RB + Send,
    c: impl FnOnce() -> RC + Send,
) -> (RA, RB, RC)
where
    RA: Send,
    RB: Send,
    RC: Send,
{
    let (ra, (rb, rc)) = rayon::join(a, || rayon::join(b, c));
    (ra, rb, rc)
}

/// Run three closures, joined before returning; concurrent when possible.
#[cfg(not(feature = "parallel"))]
pub fn join3<RA, RB, RC>(
    a: impl FnOnce() -> RA + Send,
    b: impl FnOnce() -> RB + Send,
    c: impl FnOnce() -> RC + Send,
) -> (RA, RB, RC)
where
    RA: Send,
    RB: Send,
    RC: Send,
{
    (a(), b(), c())
}
