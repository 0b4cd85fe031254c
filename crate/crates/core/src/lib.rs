//! Synthetic liver tumors for CT volumes.
//!
//! A tumor is a deformed ellipsoid ([`shape`]) filled with smoothed noise
//! ([`texture`]), placed inside the liver clear of vessels ([`vessels`],
//! [`placement`]) and blended into the host with mass effect and a capsule
//! rim ([`compose`]). [`dataset`] builds validation sets and training streams
//! from pools of healthy hosts; [`metrics`] and [`selection`] score
//! predictions and pick checkpoints.
//!
//! All randomness flows from explicit seeds ([`seed`]), so every output can be
//! regenerated bit for bit.

pub mod components;
pub mod compose;
pub mod config;
pub mod dataset;
pub mod error;
pub mod filter;
pub mod grid;
pub mod metrics;
pub mod morph;
pub mod phantom;
pub mod placement;
pub mod seed;
pub mod selection;
pub mod shape;
pub mod texture;
pub mod vessels;
pub mod volume_io;
pub mod warp;

pub use error::{Error, Result};

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/introduction.md")]
mod book_introduction {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/volumes.md")]
mod book_volumes {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/placement.md")]
mod book_placement {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/shapes.md")]
mod book_shapes {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/compose.md")]
mod book_compose {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/datasets.md")]
mod book_datasets {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/metrics.md")]
mod book_metrics {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/selection.md")]
mod book_selection {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
mod book_cli {}
