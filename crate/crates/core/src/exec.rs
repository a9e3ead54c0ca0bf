//! Execution strategy for the hot kernels.
//!
//! Every parallel path must produce output bitwise identical to the
//! sequential one: work splits along independent rows and results are
//! written to preallocated slots, never combined with a reduction whose
//! order depends on thread count.

/// Strategy selector for kernels that have both a sequential and a
/// data-parallel implementation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    /// Plain loops on the calling thread.
    Seq,
    /// Rayon work-stealing over independent chunks.
    #[cfg(feature = "parallel")]
    Par,
}

impl Default for Exec {
    #[cfg(feature = "parallel")]
    fn default() -> Self {
        Exec::Par
    }
    #[cfg(not(feature = "parallel"))]
    fn default() -> Self {
        Exec::Seq
    }
}

/// Fills `out[i] = f(i)` for `i in 0..out.len()`, sequentially or with
/// rayon depending on `exec`. The closure sees only its own index, so
/// both paths produce identical bytes.
pub(crate) fn fill_indexed<T, F>(exec: Exec, out: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec {
        Exec::Seq => {
            for (i, slot) in out.iter_mut().enumerate() {
                *slot = f(i);
            }
        }
        #[cfg(feature = "parallel")]
        Exec::Par => {
            use rayon::prelude::*;
            out.par_iter_mut().enumerate().for_each(|(i, slot)| {
                *slot = f(i);
            });
        }
    }
}

/// Splits `out` into chunks of `chunk` elements and calls
/// `f(chunk_index, slice)` for each, sequentially or with rayon.
/// Chunk boundaries are identical in both modes, so a closure whose
/// result depends only on its own chunk produces identical bytes.
pub(crate) fn fill_chunks<T, F>(exec: Exec, out: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    debug_assert!(chunk > 0);
    match exec {
        Exec::Seq => {
            for (ci, slice) in out.chunks_mut(chunk).enumerate() {
                f(ci, slice);
            }
        }
        #[cfg(feature = "parallel")]
        Exec::Par => {
            use rayon::prelude::*;
            out.par_chunks_mut(chunk)
                .enumerate()
                .for_each(|(ci, slice)| f(ci, slice));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fill_chunks_covers_every_slot_once() {
        let mut out = vec![0usize; 23];
        fill_chunks(Exec::Seq, &mut out, 5, |ci, slice| {
            for (j, v) in slice.iter_mut().enumerate() {
                *v = ci * 5 + j + 1;
            }
        });
        for (i, v) in out.iter().enumerate() {
            assert_eq!(*v, i + 1);
        }
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn fill_chunks_par_matches_seq() {
        let f = |ci: usize, slice: &mut [f64]| {
            for (j, v) in slice.iter_mut().enumerate() {
                *v = ((ci * 31 + j) as f64).cos();
            }
        };
        let mut a = vec![0.0f64; 517];
        let mut b = vec![0.0f64; 517];
        fill_chunks(Exec::Seq, &mut a, 64, f);
        fill_chunks(Exec::Par, &mut b, 64, f);
        assert_eq!(a, b);
    }

    #[test]
    fn fill_indexed_seq_matches_direct_loop() {
        let mut out = vec![0usize; 17];
        fill_indexed(Exec::Seq, &mut out, |i| i * 3 + 1);
        for (i, v) in out.iter().enumerate() {
            assert_eq!(*v, i * 3 + 1);
        }
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn fill_indexed_par_matches_seq() {
        let f = |i: usize| (i as f64).sin();
        let mut a = vec![0.0f64; 1000];
        let mut b = vec![0.0f64; 1000];
        fill_indexed(Exec::Seq, &mut a, f);
        fill_indexed(Exec::Par, &mut b, f);
        assert_eq!(a, b);
    }
}
