//! Forward convolution as implicit GEMM over a precomputed gather-offset
//! table, with the FLOP accounting needed to report computational efficiency.
//!
//! Maps are CHWN (batch innermost) and filter banks are `k x no` with the
//! filter index innermost, so the `nb x no` outputs of one output pixel are a
//! plain matrix product of a gathered `nb x k` patch and the filter matrix.

pub mod catalog;
pub mod counter;
pub mod error;
pub mod kernel;
pub mod layout;
pub mod offsets;
pub mod perf;
pub mod plan;
pub mod reference;
pub mod shape;

pub use catalog::{layer_catalog, LayerCatalogEntry};
pub use counter::OpCounts;
pub use error::{ConvError, Result};
pub use kernel::{block_matmul_tile, conv_blocked, with_threads, PaddedProblem, PreparedConv};
pub use layout::{from_chwn, to_chwn, zero_pad, FilterTensor, MapTensor};
pub use offsets::{build_offset_table, BlockingConfig, OffsetTable, PaddedGeometry};
pub use perf::{DeviceSpec, EfficiencyReport};
pub use plan::{build_block_plan, BlockDescriptor, BlockPlan};
pub use reference::{conv_reference, conv_reference_counted, im2col_explicit, relative_linf_error};
pub use shape::{output_dims, ConvShape};
