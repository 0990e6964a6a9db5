//! Semantic types shared by every other module and the T2DM file format.

mod format;
mod grid;
mod real;

pub use format::{encoded_len, load, read_tensor, save, write_tensor, AnyGrid, HEADER_LEN, MAGIC, VERSION};
pub use grid::{FeatureGrid, MaskedGrid, ScanParams, SelectiveInputs, TileConfig};
pub use real::{sigmoid, silu, softplus, DType, Element, Real};
