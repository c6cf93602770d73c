//! Building blocks for sector-constrained equity portfolios driven by LLM
//! stock selections.
//!
//! The crate covers the full batch flow: loading adjusted-close histories and
//! turning them into aligned return matrices ([`marketdata`]), validating and
//! aggregating LLM ticker proposals against sector constituent registries
//! ([`universe`]), prompting providers with record/replay transcripts
//! ([`llm_gateway`]), building weighted portfolios ([`portfolio`]), solving
//! the bounded mean-variance program and tracing efficient frontiers
//! ([`optimizer`]), evaluating out-of-sample performance ([`backtest`]), and
//! computing structural diagnostics ([`diagnostics`]).
//!
//! Numeric kernels are generic over the scalar type through [`num::Scalar`];
//! the pipeline instantiates everything with [`Real`] (`f64`).

pub mod backtest;
pub mod diagnostics;
pub mod linalg;
pub mod llm_gateway;
pub mod marketdata;
pub mod num;
pub mod optimizer;
pub mod portfolio;
pub mod sigfig;
pub mod stats;
pub mod symbol;
pub mod universe;

/// Scalar type used by the reference pipeline and all emitted artifacts.
pub type Real = f64;

pub use symbol::Symbol;
