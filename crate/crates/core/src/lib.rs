//! Hybrid physics/data-driven identification of power losses.
//!
//! A nominal loss model feeds a linear thermal reduced-order model; a small
//! neural corrector adds bounded corrections to the nominal losses and is
//! trained only from temperature measurements by differentiating through the
//! thermal model.

pub mod autodiff;
pub mod cli;
pub mod error;
pub mod exper;
pub mod io;
pub mod net;
pub mod ploss;
pub mod rom;
pub mod train;

pub use error::{Error, Result};
