//! Feedback control of falling liquid films.
//!
//! A weighted-residual model of a thin film flowing down an inclined plane
//! is linearised about the flat (Nusselt) solution and stabilised with
//! point-like blowing and suction actuators. Three controllers are provided:
//! full-state LQR, optimal static output feedback from point measurements of
//! the film height, and an observer-based compensator acting on a retained
//! set of unstable Fourier modes.

pub mod config;
pub mod error;
pub mod film;
pub mod io;
pub mod linsys;
pub mod matreq;
pub mod modal;
pub mod model;
pub mod sim;
pub mod spectral;
pub mod synth;
pub mod sweep;

pub use config::Config;
pub use error::{Error, Result};
pub use film::{ActuatorBank, FilmState, Grid, ObserverBank, PhysicalParams};
pub use linsys::{linearize, LinearSystem};
pub use model::{wr_rhs, ControlField, WrModel};
pub use sim::{run, RunConfig, RunOutcome, TrajectoryRecord, Verdict};
pub use synth::{synthesize, Controller, Strategy};
