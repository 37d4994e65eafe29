//! Data-parallel helpers with a sequential fallback.
//!
//! Every helper hands out disjoint output chunks and each chunk is computed
//! in a fixed order, so results are bit-identical whether or not the
//! `parallel` feature is enabled and regardless of the thread count.

/// Below this many scalar operations the work runs inline.
const MIN_PARALLEL_WORK: usize = 1 << 14;

/// Calls `f(chunk_index, chunk)` for every `chunk_len`-sized piece of `data`.
/// `work_per_chunk` is a rough operation count used to skip thread dispatch
/// for tiny workloads.
pub(crate) fn for_each_chunk<T, F>(data: &mut [T], chunk_len: usize, work_per_chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    if chunk_len == 0 || data.is_empty() {
        return;
    }
    let chunks = data.len().div_ceil(chunk_len);
    if chunks.saturating_mul(work_per_chunk.max(1)) < MIN_PARALLEL_WORK {
        data.chunks_mut(chunk_len)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
        return;
    }
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        data.par_chunks_mut(chunk_len)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
    }
    #[cfg(not(feature = "parallel"))]
    {
        data.chunks_mut(chunk_len)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
    }
}

/// Evaluates `f(i)` for `i in 0..len`, returning results in index order.
pub(crate) fn map_range<R, F>(len: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..len).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..len).map(f).collect()
    }
}

/// Number of worker threads the helpers may use.
pub fn current_threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunks_cover_everything_in_order() {
        let mut v = vec![0usize; 100_003];
        for_each_chunk(&mut v, 7, 1 << 10, |i, c| {
            for (j, x) in c.iter_mut().enumerate() {
                *x = i * 7 + j;
            }
        });
        assert!(v.iter().enumerate().all(|(i, &x)| i == x));
        assert_eq!(map_range(5, |i| i * i), vec![0, 1, 4, 9, 16]);
    }
}
