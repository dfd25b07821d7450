//! Verification toolkit for UML-like machine-control models.
//!
//! The crate is organised along the processing pipeline:
//!
//! - [`model`]: the domain AST (machineparts, state machines, expressions,
//!   behaviors) shared by all other modules.
//! - [`parser`]: the `.cmdl` DSL front end producing a validated [`model::ModelSpec`].
//! - [`engine`]: small-step executor of the cyclic semantics; enumerates the
//!   labelled micro-steps of a configuration.
//! - [`lts`]: exhaustive state-space construction and Aldebaran (.aut) I/O.
//! - [`mucalc`]: first-order modal mu-calculus parsing, model checking and
//!   counterexample extraction.
//! - [`emitter`]: process-algebra rendering of a model plus an internal
//!   conformance parser for the emitted text.

pub mod diag;
pub mod emitter;
pub mod engine;
pub mod lts;
pub mod model;
pub mod mucalc;
pub mod parser;

pub use diag::{Diagnostic, Severity};
pub use engine::{ActionLabel, Configuration, ExecPhase};
pub use lts::Lts;
pub use model::ModelSpec;
