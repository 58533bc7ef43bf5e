//! Allocation watermark for dense matrices.
//!
//! Every `DenseMatrix` records its element count here so that tests can
//! assert no code path ever materializes a quadratic-in-vocabulary structure.

use std::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{Error, Result};

static PEAK_ELEMENTS: AtomicUsize = AtomicUsize::new(0);

/// Largest element count ever requested for a single dense matrix since the
/// last [`reset_peak`].
pub fn peak_elements() -> usize {
    PEAK_ELEMENTS.load(Ordering::Relaxed)
}

pub fn reset_peak() {
    PEAK_ELEMENTS.store(0, Ordering::Relaxed);
}

pub(crate) fn record(elements: usize) {
    PEAK_ELEMENTS.fetch_max(elements, Ordering::Relaxed);
}

/// Refuses requests above `limit` elements.
pub fn check(requested: u128, limit: u128) -> Result<()> {
    if requested > limit {
        return Err(Error::SizeGuard { requested, limit });
    }
    Ok(())
}
