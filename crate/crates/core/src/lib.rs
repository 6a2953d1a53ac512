//! Push-to-grasp workbench core.
//!
//! A planar tabletop simulator, Gaussian random path trajectories, a small
//! reverse-mode network substrate, the rearrangement rewards, the latent
//! trajectory policy and its reward-weighted trainer, point-cloud clustering
//! for target selection, and the operator session state machine.
//!
//! The crate is `no_std` and only needs `alloc`; file formats, threads and
//! networking live in the `pushgrasp` companion crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod geometry;
pub mod grp;
pub mod nn;
pub mod perception;
pub mod policy;
pub mod rewards;
pub mod seed;
pub mod session;
pub mod sim;

pub use geometry::{Point2, Point3};
