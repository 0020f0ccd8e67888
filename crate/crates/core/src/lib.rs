#![allow(clippy::needless_range_loop)]

pub mod error;
pub mod io;
pub mod linalg;
pub mod vocab;

pub use error::{Error, Result};
pub mod checkpoint;
pub mod surgery;
pub mod encoder;
pub mod training;
pub mod retrieval;
pub mod augment;
pub mod service;
pub mod pipeline;
pub mod cli;
pub mod synthetic;
