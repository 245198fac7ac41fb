#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod checkpoint;
pub mod count;
pub mod data;
pub mod error;
pub mod layer;
pub mod math;
pub mod model;
pub mod planner;
pub mod rng;
pub mod sensitivity;
pub mod surgery;
pub mod tensor;
pub mod train;
pub mod zoo;

pub use error::Error;

pub type Result<T> = core::result::Result<T, Error>;
