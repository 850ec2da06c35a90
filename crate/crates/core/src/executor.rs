//! Deterministic execution of editing programs on sentences.
//!
//! The executor pointer `k` (1-based) names the next sentence word that a
//! `DEL` or `COPY` will act on. `ADD` leaves it in place. A `FOR(r)` wrapper
//! behaves exactly like `r` consecutive copies of its atomic statement.

use thiserror::Error;

use crate::dsl::{Action, Program, Statement, Token};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExecError {
    #[error("statement {index}: {kind} x{repeat} at pointer {pointer} runs past the end of a {len}-word sentence")]
    PastEnd { index: usize, kind: &'static str, repeat: usize, pointer: usize, len: usize },
    #[error("statement {index} follows SKIP")]
    AfterTermination { index: usize },
}

/// Executor state after applying some statements.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecutionState {
    pointer: usize,
    output: Vec<Token>,
    terminated: bool,
    applied: usize,
}

impl Default for ExecutionState {
    fn default() -> Self {
        Self::new()
    }
}

impl ExecutionState {
    pub fn new() -> Self {
        ExecutionState { pointer: 1, output: Vec::new(), terminated: false, applied: 0 }
    }

    /// The executor pointer `k`, in `1..=m+1`.
    pub fn pointer(&self) -> usize {
        self.pointer
    }

    /// Number of sentence words not yet consumed.
    pub fn remaining(&self, sentence_len: usize) -> usize {
        (sentence_len + 1).saturating_sub(self.pointer)
    }

    pub fn output(&self) -> &[Token] {
        &self.output
    }

    pub fn into_output(self) -> Vec<Token> {
        self.output
    }

    /// The generator pointer `j`: number of glosses emitted so far.
    pub fn gloss_len(&self) -> usize {
        self.output.len()
    }

    pub fn is_terminated(&self) -> bool {
        self.terminated
    }

    /// Number of statements applied so far.
    pub fn steps(&self) -> usize {
        self.applied
    }

    /// Applies one statement in place.
    pub fn apply(&mut self, s: &Statement, sentence: &[Token]) -> Result<(), ExecError> {
        let index = self.applied + 1;
        if self.terminated {
            return Err(ExecError::AfterTermination { index });
        }
        let m = sentence.len();
        match &s.action {
            Action::Add(w) => {
                self.output.extend(std::iter::repeat_n(w, s.repeat).cloned());
            }
            Action::Del | Action::Copy => {
                let end = self.pointer - 1 + s.repeat;
                if end > m {
                    return Err(ExecError::PastEnd {
                        index,
                        kind: s.kind().keyword(),
                        repeat: s.repeat,
                        pointer: self.pointer,
                        len: m,
                    });
                }
                if s.action == Action::Copy {
                    self.output.extend_from_slice(&sentence[self.pointer - 1..end]);
                }
                self.pointer = end + 1;
            }
            Action::Skip => {
                self.terminated = true;
            }
        }
        self.applied += 1;
        Ok(())
    }

    /// Functional form of [`ExecutionState::apply`].
    pub fn step(&self, s: &Statement, sentence: &[Token]) -> Result<ExecutionState, ExecError> {
        let mut next = self.clone();
        next.apply(s, sentence)?;
        Ok(next)
    }
}

/// Runs a whole program and returns the glosses it produces.
pub fn execute(p: &Program, sentence: &[Token]) -> Result<Vec<Token>, ExecError> {
    Ok(execute_prefix(p.statements(), sentence)?.into_output())
}

/// Runs a (possibly partial) statement list from the initial state.
pub fn execute_prefix(prefix: &[Statement], sentence: &[Token]) -> Result<ExecutionState, ExecError> {
    let mut state = ExecutionState::new();
    for s in prefix {
        state.apply(s, sentence)?;
    }
    Ok(state)
}

/// Per-step visible gloss counts for editing causal attention.
///
/// `visible()[t]` is the number of glosses emitted by statements before
/// statement `t` (0-based), i.e. how many gloss encodings the generator may
/// attend to while predicting that statement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskSchedule {
    visible: Vec<usize>,
}

impl MaskSchedule {
    pub fn from_visible(visible: Vec<usize>) -> Self {
        MaskSchedule { visible }
    }

    pub fn visible(&self) -> &[usize] {
        &self.visible
    }

    pub fn len(&self) -> usize {
        self.visible.len()
    }

    pub fn is_empty(&self) -> bool {
        self.visible.is_empty()
    }

    /// Largest visible count, i.e. how many gloss rows the schedule needs.
    pub fn max_visible(&self) -> usize {
        self.visible.iter().copied().max().unwrap_or(0)
    }
}

pub fn mask_schedule(p: &Program) -> MaskSchedule {
    mask_schedule_for(p.statements())
}

/// Schedule for an arbitrary statement list; one entry per statement.
pub fn mask_schedule_for(statements: &[Statement]) -> MaskSchedule {
    let mut visible = Vec::with_capacity(statements.len());
    let mut j = 0;
    for s in statements {
        visible.push(j);
        j += s.output_advance();
    }
    MaskSchedule { visible }
}
