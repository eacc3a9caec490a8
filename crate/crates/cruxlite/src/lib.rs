//! A compositional symbolic-execution verifier for a small, strongly typed
//! CFG language.
//!
//! The pipeline: `.cir` programs are parsed by [`frontend`], validated by
//! [`ir`], and symbolically executed by [`exec`] over hash-consed terms from
//! [`term`] and an allocation-based heap from [`memory`]. Proof obligations
//! are discharged by [`solver`] (an internal bit-blasting SAT backend, or an
//! external SMT-LIB2 process). [`compose`] extracts reusable function
//! summaries from spec functions so large equivalence proofs can be split
//! into small ones. [`harness`] plans and runs whole verification jobs and
//! renders reports; [`corpus`] ships the bundled example programs and a
//! brute-force oracle used to cross-check engine verdicts at reduced widths.

pub mod compose;
pub mod corpus;
pub mod exec;
pub mod frontend;
pub mod harness;
pub mod ir;
pub mod memory;
pub mod solver;
pub mod term;
pub mod testgen;
