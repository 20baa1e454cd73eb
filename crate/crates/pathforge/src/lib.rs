//! Pathology pipeline toolkit: slide tiling, deterministic pseudo-epoch
//! sampling schedules, gated-attention MIL training, and MCCV benchmarking.
//!
//! The crate is organized as a set of pipeline stages that compose through
//! plain files:
//!
//! - [`tiling`] — tissue detection and tile extraction from slide rasters,
//!   plus a synthetic slide generator for tests.
//! - [`schedule`] — fold partitioning, organ-balanced tile quotas, and
//!   hardcoded pseudo-epoch manifests with derived statistics.
//! - [`embed`] — per-slide tile-embedding storage (binary container,
//!   labels, set manifests) and a synthetic embedding generator.
//! - [`mil`] — the gated-attention aggregator with a linear head, exact
//!   reverse-mode gradients, AdamW, and cosine-warmup schedules.
//! - [`bench`] — Monte Carlo cross-validation plans, rank-based AUC,
//!   bootstrap confidence bands, benchmark runs, and checkpoint sweeps.
//! - [`config`] — the plain-text pipeline configuration shared by the CLI.
//!
//! Every stage is a pure function of its inputs and seeds: identical inputs
//! produce byte-identical outputs.

pub mod bench;
pub mod config;
pub mod embed;
pub mod error;
pub mod mil;
pub mod schedule;
pub mod seed;
pub mod tiling;

pub use error::{Error, Result};
