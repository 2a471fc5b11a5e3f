use crate::error::{Error, Result};

/// Runs `f` inside a dedicated rayon pool of `threads` workers (`0` = hardware parallelism).
pub fn with_threads<R, F>(threads: usize, f: F) -> Result<R>
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Parameter(format!("cannot build a pool of {threads} threads: {e}")))?;
    Ok(pool.install(f))
}
