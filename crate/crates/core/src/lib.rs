//! Simulator and key-management library for a wide-area QKD network built
//! from metropolitan meshes joined by trusted-relay intercity links.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod photonics;
pub mod fabric;
pub mod registry;
pub mod keymgmt;
pub mod fixtures;
pub mod netctl;
pub mod apps;
pub mod simkit;
