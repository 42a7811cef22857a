//! Shifted-window attention acoustic encoder.
//!
//! A spectrogram `[T×F]` (optionally with two demographic frames prepended)
//! is zero-padded, cut into `P×P` patches and embedded to `D` channels. Each
//! stage after the first halves the grid with a patch merge and doubles the
//! channels, so four stages end at `T/8P × F/8P × 8D`. Blocks alternate
//! between plain and cyclically shifted windows.

mod block;
mod config;
mod model;
pub mod window;

pub use block::{effective_shift, BlockOutput, PatchMerge, SwinBlock};
pub use config::{AcousticConfig, DemographicInfo, Gender};
pub use model::{AcousticEncoder, AcousticOutput, DEMOGRAPHICS_PREFIX, PREFIX};
pub use window::{region_ids, shift_mask, window_partition, window_reverse};
