//! Desk-scale study of gradient-inversion attacks on collaborative learning.
//!
//! A simulated victim shares the parameter gradient of one training image;
//! an attacker reconstructs that image by minimizing a gradient-matching
//! loss, optionally augmented with a total-variation prior and activation /
//! style matching against same-class images the attacker already holds.

pub mod attack;
pub mod config;
pub mod autodiff;
pub mod error;
pub mod faults;
pub mod flsim;
pub mod fsutil;
pub mod label;
pub mod losses;
pub mod manifest;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod netpbm;
pub mod rng;
pub mod selftest;
pub mod synth;
pub mod tensor;

pub use autodiff::{Bindings, Graph, NodeId, Op, Values};
pub use error::{Error, Result};
pub use tensor::Tensor;
