//! Growth-optimal portfolios and local martingale deflators on finite
//! market models.
//!
//! The crate takes a market described either as a grid of local
//! characteristics (drift, covariance, jump measure per time slice) or as an
//! explicit event lattice, and answers three questions exactly, up to stated
//! float tolerances:
//!
//! * does any slice admit an immediate-arbitrage direction ([`cones`])?
//! * if not, what is the growth-optimal (numeraire) portfolio per slice
//!   ([`numeraire`])?
//! * how does a strictly positive local martingale deflator get assembled
//!   from the numeraire wealth by reweighting the large-jump measure
//!   ([`deflator`])?
//!
//! Measures are finite and atomic ([`measure`]), so every expectation is a
//! finite sum and the martingale claims can be checked node by node on a
//! lattice ([`lattice`]). The linear programs behind cone membership and
//! measure rebalancing run on a small built-in simplex solver ([`lp`]).

pub mod characteristics;
pub mod cones;
pub mod deflator;
pub mod error;
pub mod gen;
pub mod lattice;
pub mod numeraire;
pub mod lp;
pub mod measure;
pub mod sweep;

pub use error::{Error, Result};
