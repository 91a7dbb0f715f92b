use std::io;

use thiserror::Error;

/// Errors raised by the correction library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("mask has no set pixels")]
    EmptyMask,
    #[error("evaluation window is empty")]
    EmptyWindow,
    #[error("histogram never reaches two local maxima")]
    UnimodalHistogram,
    #[error("no predicted footprint overlaps the ground truth")]
    NoOverlap,
    #[error("format error: {0}")]
    Format(String),
    #[error("inconsistent state: {0}")]
    InconsistentState(String),
    #[error("could not place scene buildings: {0}")]
    Packing(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
