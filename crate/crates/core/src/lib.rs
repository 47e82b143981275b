//! Modeling and analysis of unbalanced three-phase electrical networks.
//!
//! A network is a connected graph of buses, each carrying one ideal
//! single-terminal device (voltage source, current source, or impedance, in Y
//! or Δ configuration), joined by three-phase lines whose series and shunt
//! admittance blocks may couple the phases. [`solver::solve`] computes every
//! terminal and internal voltage, current, and power from the device
//! specifications. For balanced networks, [`perphase`] provides a provably
//! equivalent scalar per-phase path: detect balance, solve an
//! `(N+1)`-dimensional network, and lift the result back to three phases.
//!
//! The [`io`] module defines the JSON network and solution formats, and
//! [`cli`] the command-line interface over them.

pub mod cli;
pub mod devices;
pub mod io;
mod linalg;
pub mod network;
pub mod perphase;
pub mod phasor;
pub mod solver;

pub use devices::{DeviceSpec, ExternalRelation};
pub use network::{assemble, Bus, LineSpec, Network};
pub use phasor::{cx, C3, C3x3};
pub use solver::{solve, Solution};
