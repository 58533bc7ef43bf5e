//! Chunked map over samples, run on the rayon pool when the `parallel`
//! feature is on. Chunk boundaries do not depend on the thread count and
//! results come back in chunk order, so reductions over them are identical
//! in both modes.

use serde::{Deserialize, Serialize};

/// Samples per work unit.
pub const CHUNK: usize = 64;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Exec {
    Sequential,
    /// Falls back to sequential without the `parallel` feature.
    #[default]
    Parallel,
}

pub fn map_chunks<T, R, F>(exec: Exec, items: &[T], chunk: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&[T]) -> R + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Exec::Parallel => {
            use rayon::prelude::*;
            items.par_chunks(chunk).map(f).collect()
        }
        _ => items.chunks(chunk).map(f).collect(),
    }
}
