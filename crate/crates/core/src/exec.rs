//! Order-preserving maps that run on rayon when `parallel` is enabled.

use alloc::vec::Vec;

#[cfg(feature = "parallel")]
pub(crate) fn map_indices<T, F>(items: &[usize], f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().map(|&i| f(i)).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_indices<T, F>(items: &[usize], f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    items.iter().map(|&i| f(i)).collect()
}
