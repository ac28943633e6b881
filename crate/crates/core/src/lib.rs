//! Prototype-pollution gadget discovery driven by an existing test suite.
//!
//! The pipeline has three stages, each a batch of test executions with an
//! instrumentation snippet injected into the test:
//!
//! 1. **collect** records properties read from objects where they are
//!    undefined (candidate sources);
//! 2. **hunt** pollutes each such property with a tainted value and records
//!    which native sinks receive it;
//! 3. **crash** pollutes the same properties and triages how the process
//!    terminates.
//!
//! Runs communicate with this crate only through the line-oriented `GH1`
//! log ([`protocol`]) and a transcript directory per run ([`runner`]). The
//! [`report`] module turns transcripts into deduplicated gadget candidates
//! and SARIF, and [`corpus`] checks the result against ground truth.

pub mod corpus;
pub mod protocol;
pub mod report;
pub mod runner;
pub mod stack;
pub mod taint;
