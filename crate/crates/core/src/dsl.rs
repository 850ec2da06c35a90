//! Editing programs: the statement AST, its concrete text syntax and static checks.
//!
//! A program is an ordered list of statements. Each statement is an atomic
//! action (`ADD(w)`, `DEL`, `COPY`, `SKIP`) optionally wrapped in a single
//! `FOR(r)` loop. Loops never nest and never wrap `SKIP`. Every program ends
//! with exactly one `SKIP`.
//!
//! Concrete syntax, one statement per `;` or newline:
//!
//! ```text
//! COPY; DEL; FOR(5) DEL; ADD(mal); SKIP
//! ```

use std::fmt;

use thiserror::Error;

/// Default bound on the repetition count of a `FOR` statement.
pub const DEFAULT_MAX_REPEAT: usize = 32;

/// A single whitespace-free word.
///
/// Tokens may not contain the two-character sequence `);`, which would be
/// ambiguous inside `ADD(...)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Token(String);

impl Token {
    pub fn new(surface: impl Into<String>) -> Result<Self, DslError> {
        let surface = surface.into();
        if surface.is_empty() {
            return Err(DslError::InvalidToken { token: surface, reason: "empty" });
        }
        if surface.chars().any(char::is_whitespace) {
            return Err(DslError::InvalidToken { token: surface, reason: "contains whitespace" });
        }
        if surface.contains(");") {
            return Err(DslError::InvalidToken { token: surface, reason: "contains `);`" });
        }
        Ok(Token(surface))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Splits whitespace-separated text into tokens.
pub fn tokenize(text: &str) -> Vec<Token> {
    text.split_whitespace()
        .map(|w| Token(w.to_string()))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ActionKind {
    Add,
    Del,
    Copy,
    Skip,
}

impl ActionKind {
    pub const ALL: [ActionKind; 4] = [ActionKind::Add, ActionKind::Del, ActionKind::Copy, ActionKind::Skip];

    /// Dense index used by the prediction heads and embedding tables.
    pub fn index(self) -> usize {
        match self {
            ActionKind::Add => 0,
            ActionKind::Del => 1,
            ActionKind::Copy => 2,
            ActionKind::Skip => 3,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Whether this action consumes sentence words (advances the executor pointer).
    pub fn consumes_input(self) -> bool {
        matches!(self, ActionKind::Del | ActionKind::Copy)
    }

    /// Whether this action appends glosses (advances the generator pointer).
    pub fn emits_output(self) -> bool {
        matches!(self, ActionKind::Add | ActionKind::Copy)
    }

    pub fn keyword(self) -> &'static str {
        match self {
            ActionKind::Add => "ADD",
            ActionKind::Del => "DEL",
            ActionKind::Copy => "COPY",
            ActionKind::Skip => "SKIP",
        }
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

/// An atomic editing action. Only `Add` carries an operand; the sentence
/// position used by `Del` and `Copy` comes from the executor pointer.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Action {
    Add(Token),
    Del,
    Copy,
    Skip,
}

impl Action {
    pub fn kind(&self) -> ActionKind {
        match self {
            Action::Add(_) => ActionKind::Add,
            Action::Del => ActionKind::Del,
            Action::Copy => ActionKind::Copy,
            Action::Skip => ActionKind::Skip,
        }
    }

    pub fn token(&self) -> Option<&Token> {
        match self {
            Action::Add(t) => Some(t),
            _ => None,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Add(t) => write!(f, "ADD({t})"),
            other => f.write_str(other.kind().keyword()),
        }
    }
}

/// An atomic action applied `repeat` times. `repeat == 1` is a bare atomic,
/// anything larger is `FOR(repeat) action`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Statement {
    pub action: Action,
    pub repeat: usize,
}

impl Statement {
    pub fn once(action: Action) -> Self {
        Statement { action, repeat: 1 }
    }

    pub fn repeated(action: Action, repeat: usize) -> Self {
        Statement { action, repeat }
    }

    pub fn add(token: Token) -> Self {
        Self::once(Action::Add(token))
    }

    pub fn del() -> Self {
        Self::once(Action::Del)
    }

    pub fn copy() -> Self {
        Self::once(Action::Copy)
    }

    pub fn skip() -> Self {
        Self::once(Action::Skip)
    }

    pub fn kind(&self) -> ActionKind {
        self.action.kind()
    }

    /// Number of sentence words consumed when executed.
    pub fn input_advance(&self) -> usize {
        if self.kind().consumes_input() {
            self.repeat
        } else {
            0
        }
    }

    /// Number of glosses appended when executed.
    pub fn output_advance(&self) -> usize {
        if self.kind().emits_output() {
            self.repeat
        } else {
            0
        }
    }

    fn check(&self, index: usize, max_repeat: usize) -> Result<(), DslError> {
        if self.repeat == 0 || self.repeat > max_repeat {
            return Err(DslError::RepeatOutOfRange { index, repeat: self.repeat, max: max_repeat });
        }
        if self.repeat > 1 && self.kind() == ActionKind::Skip {
            return Err(DslError::RepeatedSkip { index });
        }
        Ok(())
    }
}

impl fmt::Display for Statement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.repeat > 1 {
            write!(f, "FOR({}) {}", self.repeat, self.action)
        } else {
            write!(f, "{}", self.action)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DslError {
    #[error("syntax error at byte {position}: expected {expected}, found {found}")]
    Syntax { position: usize, expected: &'static str, found: String },
    #[error("empty program")]
    Empty,
    #[error("program does not end with SKIP")]
    MissingSkip,
    #[error("statement {index}: SKIP must be the final statement")]
    SkipNotLast { index: usize },
    #[error("statement {index}: repetition {repeat} outside 1..={max}")]
    RepeatOutOfRange { index: usize, repeat: usize, max: usize },
    #[error("statement {index}: SKIP cannot be repeated")]
    RepeatedSkip { index: usize },
    #[error("invalid token {token:?}: {reason}")]
    InvalidToken { token: String, reason: &'static str },
}

/// A complete editing program. Construction enforces the structural
/// invariants, so every `Program` value is well formed.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Program {
    statements: Vec<Statement>,
}

impl Program {
    pub fn new(statements: Vec<Statement>) -> Result<Self, DslError> {
        Self::with_max_repeat(statements, DEFAULT_MAX_REPEAT)
    }

    pub fn with_max_repeat(statements: Vec<Statement>, max_repeat: usize) -> Result<Self, DslError> {
        if statements.is_empty() {
            return Err(DslError::Empty);
        }
        let last = statements.len() - 1;
        for (i, s) in statements.iter().enumerate() {
            s.check(i + 1, max_repeat)?;
            if s.kind() == ActionKind::Skip && i != last {
                return Err(DslError::SkipNotLast { index: i + 1 });
            }
        }
        if statements[last].kind() != ActionKind::Skip {
            return Err(DslError::MissingSkip);
        }
        Ok(Program { statements })
    }

    /// The program consisting of a single `SKIP`.
    pub fn skip_only() -> Self {
        Program { statements: vec![Statement::skip()] }
    }

    pub fn statements(&self) -> &[Statement] {
        &self.statements
    }

    pub fn len(&self) -> usize {
        self.statements.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn into_statements(self) -> Vec<Statement> {
        self.statements
    }

    /// Count of ADD and DEL applications, with repetitions unrolled.
    pub fn edit_count(&self) -> usize {
        self.statements
            .iter()
            .filter(|s| matches!(s.kind(), ActionKind::Add | ActionKind::Del))
            .map(|s| s.repeat)
            .sum()
    }

    /// Largest repetition count used by any statement.
    pub fn max_repeat(&self) -> usize {
        self.statements.iter().map(|s| s.repeat).max().unwrap_or(1)
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, s) in self.statements.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{s}")?;
        }
        Ok(())
    }
}

impl std::str::FromStr for Program {
    type Err = DslError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_program(s)
    }
}

/// Canonical text form; inverse of [`parse_program`].
pub fn print_program(p: &Program) -> String {
    p.to_string()
}

pub fn parse_program(text: &str) -> Result<Program, DslError> {
    parse_program_with(text, DEFAULT_MAX_REPEAT)
}

pub fn parse_program_with(text: &str, max_repeat: usize) -> Result<Program, DslError> {
    let statements = parse_statements(text)?;
    Program::with_max_repeat(statements, max_repeat)
}

/// Parses a statement list without the whole-program invariants (useful for
/// prefixes). Repetition counts are only checked for being positive.
pub fn parse_statements(text: &str) -> Result<Vec<Statement>, DslError> {
    let mut p = Parser { src: text, pos: 0 };
    let mut out = Vec::new();
    loop {
        p.skip_blank();
        // tolerate empty statements between separators
        while p.eat_separator() {
            p.skip_blank();
        }
        if p.at_end() {
            break;
        }
        let s = p.statement(out.len() + 1)?;
        out.push(s);
        p.skip_blank();
        if p.at_end() {
            break;
        }
        if !p.eat_separator() {
            return Err(p.error("`;` or newline"));
        }
    }
    Ok(out)
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn at_end(&self) -> bool {
        self.pos >= self.src.len()
    }

    /// Skips whitespace other than newlines.
    fn skip_blank(&mut self) {
        let rest = self.rest();
        let trimmed = rest.trim_start_matches(|c: char| c.is_whitespace() && c != '\n');
        self.pos += rest.len() - trimmed.len();
    }

    fn eat_separator(&mut self) -> bool {
        match self.rest().chars().next() {
            Some(';') | Some('\n') => {
                self.pos += 1;
                true
            }
            _ => false,
        }
    }

    fn eat(&mut self, lit: &str) -> bool {
        if self.rest().starts_with(lit) {
            self.pos += lit.len();
            true
        } else {
            false
        }
    }

    fn error(&self, expected: &'static str) -> DslError {
        let found = match self.rest().split(|c: char| c.is_whitespace() || c == ';').next() {
            Some(w) if !w.is_empty() => format!("`{w}`"),
            _ if self.at_end() => "end of input".to_string(),
            _ => format!("`{}`", self.rest().chars().next().unwrap_or(' ').escape_debug()),
        };
        DslError::Syntax { position: self.pos, expected, found }
    }

    fn statement(&mut self, index: usize) -> Result<Statement, DslError> {
        if self.eat("FOR(") {
            self.skip_blank();
            let digits: &str = {
                let rest = self.rest();
                let end = rest.find(|c: char| !c.is_ascii_digit()).unwrap_or(rest.len());
                &rest[..end]
            };
            if digits.is_empty() {
                return Err(self.error("repetition count"));
            }
            let repeat: usize = digits.parse().map_err(|_| DslError::RepeatOutOfRange {
                index,
                repeat: usize::MAX,
                max: DEFAULT_MAX_REPEAT,
            })?;
            self.pos += digits.len();
            self.skip_blank();
            if !self.eat(")") {
                return Err(self.error("`)`"));
            }
            let before = self.pos;
            self.skip_blank();
            if self.pos == before {
                return Err(self.error("whitespace after FOR(..)"));
            }
            let action = self.atomic()?;
            let s = Statement { action, repeat };
            if repeat == 0 {
                return Err(DslError::RepeatOutOfRange { index, repeat, max: DEFAULT_MAX_REPEAT });
            }
            if s.kind() == ActionKind::Skip {
                return Err(DslError::RepeatedSkip { index });
            }
            Ok(s)
        } else {
            Ok(Statement::once(self.atomic()?))
        }
    }

    fn atomic(&mut self) -> Result<Action, DslError> {
        if self.eat("ADD(") {
            let word = self.add_operand()?;
            return Ok(Action::Add(Token(word.to_string())));
        }
        for (kw, action) in [("DEL", Action::Del), ("COPY", Action::Copy), ("SKIP", Action::Skip)] {
            if self.rest().starts_with(kw) && self.keyword_boundary(kw.len()) {
                self.pos += kw.len();
                return Ok(action);
            }
        }
        Err(self.error("ADD(..), DEL, COPY, SKIP or FOR(..)"))
    }

    fn keyword_boundary(&self, len: usize) -> bool {
        match self.rest()[len..].chars().next() {
            None => true,
            Some(c) => c.is_whitespace() || c == ';',
        }
    }

    /// Reads the `ADD` operand up to the `)` that ends the statement, i.e. a
    /// `)` followed only by blanks and then a separator or the end of input.
    fn add_operand(&mut self) -> Result<&'a str, DslError> {
        let rest = self.rest();
        let mut end = None;
        for (i, c) in rest.char_indices() {
            if c.is_whitespace() {
                break;
            }
            if c == ')' {
                let after = rest[i + 1..].trim_start_matches(|c: char| c.is_whitespace() && c != '\n');
                if after.is_empty() || after.starts_with(';') || after.starts_with('\n') {
                    end = Some(i);
                    break;
                }
            }
        }
        match end {
            Some(0) => Err(self.error("token")),
            Some(i) => {
                let word = &rest[..i];
                self.pos += i + 1;
                Ok(word)
            }
            None => {
                let ws = rest.find(char::is_whitespace).unwrap_or(rest.len());
                self.pos += ws;
                Err(self.error("`)` closing ADD"))
            }
        }
    }
}

/// First statement at which execution would run past the end of the sentence.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("statement {index} needs sentence words up to {needed}, but the sentence has {available}")]
pub struct Violation {
    /// 1-based statement index.
    pub index: usize,
    pub needed: usize,
    pub available: usize,
}

/// Checks that the program never advances the executor pointer beyond the sentence.
pub fn validate(p: &Program, sentence_len: usize) -> Result<(), Violation> {
    validate_statements(p.statements(), sentence_len)
}

pub fn validate_statements(statements: &[Statement], sentence_len: usize) -> Result<(), Violation> {
    let mut consumed = 0usize;
    for (i, s) in statements.iter().enumerate() {
        consumed += s.input_advance();
        if consumed > sentence_len {
            return Err(Violation { index: i + 1, needed: consumed, available: sentence_len });
        }
    }
    Ok(())
}
