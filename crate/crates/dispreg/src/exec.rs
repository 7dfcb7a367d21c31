//! Thread-pool execution of the row-parallel stages.

use dispreg_core::RowExecutor;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Visits rows on the current rayon pool. Rows are independent and each is
/// computed the same way on any thread, so results do not depend on the
/// thread count.
#[derive(Clone, Copy, Debug, Default)]
pub struct Parallel;

impl RowExecutor for Parallel {
    fn for_each_row<F>(&self, data: &mut [f32], row_len: usize, f: F)
    where
        F: Fn(usize, &mut [f32]) + Sync + Send,
    {
        data.par_chunks_mut(row_len)
            .enumerate()
            .for_each(|(i, row)| f(i, row));
    }
}

/// Runs `f` on a dedicated pool of `threads` workers (`None` or 0: one per
/// core).
pub fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("cannot start thread pool: {e}")))?;
    Ok(pool.install(f))
}
