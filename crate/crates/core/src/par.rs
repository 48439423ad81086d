//! Data-parallel helpers with a sequential fallback when the `parallel`
//! feature is disabled.
//!
//! Every parallel site in this crate writes disjoint output slots or maps
//! independent work items, so results are bitwise identical to the sequential
//! path regardless of thread count.

/// Fills each `cols`-wide row of `buf` via `fill(row_index, row)`.
#[cfg(feature = "parallel")]
pub(crate) fn fill_rows<F>(buf: &mut [f64], cols: usize, fill: F)
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    use rayon::prelude::*;
    buf.par_chunks_mut(cols)
        .enumerate()
        .for_each(|(i, row)| fill(i, row));
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn fill_rows<F>(buf: &mut [f64], cols: usize, fill: F)
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    buf.chunks_mut(cols)
        .enumerate()
        .for_each(|(i, row)| fill(i, row));
}

/// Sequential twin of [`fill_rows`], kept for benchmarking the two paths
/// against each other.
pub fn fill_rows_serial<F>(buf: &mut [f64], cols: usize, fill: F)
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    buf.chunks_mut(cols)
        .enumerate()
        .for_each(|(i, row)| fill(i, row));
}

/// Maps independent work items, in parallel when available.
#[cfg(feature = "parallel")]
pub(crate) fn map_items<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(T) -> U + Sync + Send,
{
    use rayon::prelude::*;
    items.into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_items<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(T) -> U + Sync + Send,
{
    items.into_iter().map(f).collect()
}
