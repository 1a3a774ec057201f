//! Camera-only driving stack for cone-delimited race tracks.
//!
//! The crate covers the whole loop: procedural tracks and a kinematic car
//! ([`sim`]), a software pinhole renderer with a day-light cycle
//! ([`render`]), augmentation ([`augment`]), recorded datasets ([`dataset`]),
//! a PilotNet-style CNN with its own reverse-mode training ([`nn`]), the
//! real-time inference path ([`pipeline`]), closed-loop evaluation ([`eval`])
//! and the serial steering protocol ([`wire`]).

pub mod augment;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod geom;
pub mod nn;
pub mod pipeline;
pub mod render;
pub mod sim;
pub mod wire;

pub use error::{Error, Result};
pub use geom::{Point2, Point3};
