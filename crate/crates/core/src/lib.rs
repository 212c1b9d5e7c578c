pub mod abstract_model;
pub mod controller;
pub mod error;
pub mod faults;
pub mod harness;
pub mod history;
pub mod mal;
pub mod nn;
pub mod plant;
pub mod predictor;
pub mod rng;
pub mod selector;
pub mod sim;

pub use error::{Error, Result};
