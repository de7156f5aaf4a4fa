//! Lock-free parameter sharing for multi-worker training.
//!
//! With more than one worker, all workers read and write the same embedding
//! store without mutual exclusion. Updates are sparse relative to the whole
//! parameter space (one row block and one column block per step), so the
//! impact of interleaved writes is negligible; individual f32 reads and
//! writes are word-aligned and do not tear on supported targets. Runs with
//! more than one worker are not reproducible; single-worker training never
//! goes through this type.

use std::cell::UnsafeCell;

/// Shares `&mut T` across scoped worker threads without locking.
pub struct Hogwild<'a, T>(&'a UnsafeCell<T>);

// Safety: workers accept racy access to the shared value per the contract
// above; the referent outlives the scope that spawns them.
unsafe impl<T> Send for Hogwild<'_, T> {}
unsafe impl<T> Sync for Hogwild<'_, T> {}

impl<'a, T> Hogwild<'a, T> {
    pub fn new(value: &'a mut T) -> Self {
        Hogwild(UnsafeCell::from_mut(value))
    }

    /// Mutable access from a shared handle.
    ///
    /// # Safety
    ///
    /// Callers must not hold the returned reference across a point where
    /// another worker could observe a structural change (growth,
    /// reallocation); workers may only update element values in place.
    #[allow(clippy::mut_from_ref)]
    pub unsafe fn get_mut(&self) -> &mut T {
        &mut *self.0.get()
    }
}

impl<T> Clone for Hogwild<'_, T> {
    fn clone(&self) -> Self {
        Hogwild(self.0)
    }
}
