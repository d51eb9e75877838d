//! Selective state-space machinery: discretization, scans, and the Mamba block.

pub mod bench;
pub mod block;
pub mod scan;

pub use block::{MambaBlock, SsmConfig};
pub use scan::{
    discretize, scan_chunked, scan_sequential, softplus, softplus_delta, Discretization, ScanInputs,
    SelectiveParams,
};
