//! Editing programs for sentence-to-gloss transcription.
//!
//! A sentence is turned into a gloss sequence by running a small program of
//! `ADD`/`DEL`/`COPY`/`SKIP` actions over it. This crate holds everything
//! that does not need a neural model: the program language, its interpreter,
//! derivation of minimal programs, evaluation metrics and corpus handling.

pub mod corpus;
pub mod dsl;
pub mod executor;
pub mod metrics;
pub mod minedit;

pub use dsl::{parse_program, print_program, Action, ActionKind, Program, Statement, Token};
pub use executor::{execute, execute_prefix, mask_schedule, ExecutionState, MaskSchedule};
pub use minedit::{brute_force_oracle, min_edit_distance, minimal_program, minimal_program_with};
