#![allow(clippy::neg_cmp_op_on_partial_ord)]
//! Supervised two-step hashing.
//!
//! Learning is split in two. [`codegen`] infers an `n x m` matrix of `+-1`
//! codes for the training points by block coordinate descent: each bit column
//! is re-solved as a binary quadratic program derived from a pairwise loss on
//! Hamming affinity ([`loss`]). [`hashfn`] then fits one linear classifier per
//! bit, on raw or RBF-anchor features, so unseen points can be encoded.
//! [`retrieval`] ranks packed codes by Hamming distance and scores rankings.

pub mod codegen;
pub mod data;
pub mod loss;
pub mod par;
pub mod seed;
pub mod hashfn;
pub mod packed;
pub mod retrieval;
pub mod synth;
pub mod pipeline;
pub mod cli;
