//! Deterministic fork-join over independent work items.
//!
//! Results are written into per-index slots and errors are reported in index
//! order, so the outcome is bit-identical regardless of the thread count.

use crate::error::Result;

/// Applies `f` to every item, using up to `threads` OS threads. `f` must be
/// a pure function of `(index, item)` for the determinism guarantee to hold.
pub fn parallel_map<T, U, F>(threads: usize, items: &[T], f: F) -> Result<Vec<U>>
where
    T: Sync,
    U: Send,
    F: Fn(usize, &T) -> Result<U> + Sync,
{
    if threads <= 1 || items.len() <= 1 {
        return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let chunk = items.len().div_ceil(threads.min(items.len()));
    let mut slots: Vec<Option<Result<U>>> = (0..items.len()).map(|_| None).collect();

    std::thread::scope(|scope| {
        for (c, (item_chunk, slot_chunk)) in
            items.chunks(chunk).zip(slots.chunks_mut(chunk)).enumerate()
        {
            let f = &f;
            scope.spawn(move || {
                for (off, (item, slot)) in item_chunk.iter().zip(slot_chunk).enumerate() {
                    *slot = Some(f(c * chunk + off, item));
                }
            });
        }
    });

    slots
        .into_iter()
        .map(|s| s.expect("worker filled every slot"))
        .collect()
}
