//! Simulate peer-to-peer training of wide networks (DGD, ATC, CTA) and
//! predict it with the NTK-linearized gradient flow.

pub mod data;
pub mod distopt;
pub mod error;
pub mod experiment;
pub mod flow;
pub mod mixing;
pub mod model;
pub mod stability;

pub use error::{Error, Result};
