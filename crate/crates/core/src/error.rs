use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConvError {
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("no valid output: input extent {extent} (with apron) is smaller than kernel {kernel}")]
    NoValidOutput { extent: usize, kernel: usize },
    #[error("invalid blocking: {0}")]
    InvalidBlocking(String),
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("pixel ({ox}, {oy}) outside output map {wo}x{ho}")]
    PixelOutOfRange { ox: usize, oy: usize, wo: usize, ho: usize },
    #[error("FLOP count overflows 64 bits")]
    Overflow,
    #[error("invalid device spec: {0}")]
    InvalidDevice(String),
    #[error("non-positive input to efficiency: {0}")]
    NonPositive(String),
    #[error("catalog: {0}")]
    Catalog(String),
}

pub type Result<T> = std::result::Result<T, ConvError>;
