//! Minimal editing programs.
//!
//! The edit distance here is Levenshtein without substitutions: a sentence
//! word either survives (`COPY`, free) or is removed (`DEL`, cost 1), and a
//! missing gloss is inserted (`ADD`, cost 1). Its value is `m + n - 2·LCS`.
//!
//! The derived program is read off the cost table front to back. At each
//! position a matching word is copied; otherwise `ADD` is taken whenever it
//! stays on an optimal path, and `DEL` only when it is the sole optimal move.
//! Runs of identical actions are then folded into `FOR` statements.

use thiserror::Error;

use crate::dsl::{Action, Program, Statement, Token, DEFAULT_MAX_REPEAT};

/// Prefix cost table: `cost(i, j)` is the distance between `x[..i]` and `y[..j]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EditDpTable {
    m: usize,
    n: usize,
    cost: Vec<usize>,
}

impl EditDpTable {
    pub fn new<T: PartialEq>(x: &[T], y: &[T]) -> Self {
        let (m, n) = (x.len(), y.len());
        let w = n + 1;
        let mut cost = vec![0; (m + 1) * w];
        for j in 0..=n {
            cost[j] = j;
        }
        for i in 1..=m {
            cost[i * w] = i;
            for j in 1..=n {
                cost[i * w + j] = if x[i - 1] == y[j - 1] {
                    cost[(i - 1) * w + j - 1]
                } else {
                    (cost[(i - 1) * w + j]).min(cost[i * w + j - 1]) + 1
                };
            }
        }
        EditDpTable { m, n, cost }
    }

    pub fn rows(&self) -> usize {
        self.m + 1
    }

    pub fn cols(&self) -> usize {
        self.n + 1
    }

    pub fn cost(&self, i: usize, j: usize) -> usize {
        self.cost[i * (self.n + 1) + j]
    }

    pub fn distance(&self) -> usize {
        self.cost(self.m, self.n)
    }
}

/// Minimum number of ADD and DEL applications turning `x` into `y`.
pub fn min_edit_distance<T: PartialEq>(x: &[T], y: &[T]) -> usize {
    EditDpTable::new(x, y).distance()
}

/// How sentence words left over after the last gloss are handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TrailingWords {
    /// Delete them explicitly before the final `SKIP`.
    #[default]
    Delete,
    /// Leave them to the final `SKIP`, which discards unread words.
    Skip,
}

/// Which action kinds have their runs folded into `FOR` statements.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FoldKinds {
    pub add: bool,
    pub del: bool,
    pub copy: bool,
}

impl FoldKinds {
    pub const ALL: FoldKinds = FoldKinds { add: true, del: true, copy: true };
    pub const DEL_ONLY: FoldKinds = FoldKinds { add: false, del: true, copy: false };
    pub const NONE: FoldKinds = FoldKinds { add: false, del: false, copy: false };

    fn folds(&self, a: &Action) -> bool {
        match a {
            Action::Add(_) => self.add,
            Action::Del => self.del,
            Action::Copy => self.copy,
            Action::Skip => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MinimalProgramOptions {
    /// Longest run folded into one `FOR`; longer runs are split into chunks of
    /// this size followed by the remainder.
    pub max_repeat: usize,
    pub fold: FoldKinds,
    pub trailing: TrailingWords,
}

impl Default for MinimalProgramOptions {
    fn default() -> Self {
        MinimalProgramOptions { max_repeat: DEFAULT_MAX_REPEAT, fold: FoldKinds::ALL, trailing: TrailingWords::Delete }
    }
}

impl MinimalProgramOptions {
    /// Default folding with a different repetition bound.
    pub fn with_max_repeat(max_repeat: usize) -> Self {
        MinimalProgramOptions { max_repeat, ..Default::default() }
    }
}

/// The minimal editing program for `(x, y)` under default options.
pub fn minimal_program(x: &[Token], y: &[Token]) -> Program {
    minimal_program_with(x, y, &MinimalProgramOptions::default())
}

pub fn minimal_program_with(x: &[Token], y: &[Token], opts: &MinimalProgramOptions) -> Program {
    assert!(opts.max_repeat >= 1, "max_repeat must be positive");
    let mut actions = minimal_actions(x, y);
    if opts.trailing == TrailingWords::Skip {
        while actions.last() == Some(&Action::Del) {
            actions.pop();
        }
    }
    let mut statements = compress(actions, opts.max_repeat, opts.fold);
    statements.push(Statement::skip());
    Program::with_max_repeat(statements, opts.max_repeat.max(1))
        .expect("derived programs are well formed")
}

/// Unrolled action sequence (no `SKIP`) of the minimal program.
pub fn minimal_actions(x: &[Token], y: &[Token]) -> Vec<Action> {
    let (m, n) = (x.len(), y.len());
    // suffix costs: cost(x[i..], y[j..]) = prefix cost of the reversed sequences
    let rx: Vec<&Token> = x.iter().rev().collect();
    let ry: Vec<&Token> = y.iter().rev().collect();
    let table = EditDpTable::new(&rx, &ry);
    let suffix = |i: usize, j: usize| table.cost(m - i, n - j);

    let mut out = Vec::with_capacity(m + n);
    let (mut i, mut j) = (0, 0);
    while i < m || j < n {
        let here = suffix(i, j);
        if i < m && j < n && x[i] == y[j] {
            out.push(Action::Copy);
            i += 1;
            j += 1;
        } else if j < n && suffix(i, j + 1) + 1 == here {
            out.push(Action::Add(y[j].clone()));
            j += 1;
        } else {
            debug_assert!(i < m && suffix(i + 1, j) + 1 == here);
            out.push(Action::Del);
            i += 1;
        }
    }
    out
}

/// Folds maximal runs of identical actions into `FOR` statements.
fn compress(actions: Vec<Action>, max_repeat: usize, fold: FoldKinds) -> Vec<Statement> {
    let mut out: Vec<Statement> = Vec::new();
    let mut iter = actions.into_iter().peekable();
    while let Some(action) = iter.next() {
        let mut run = 1;
        while iter.peek() == Some(&action) {
            iter.next();
            run += 1;
        }
        let cap = if fold.folds(&action) { max_repeat } else { 1 };
        while run > 0 {
            let chunk = run.min(cap);
            out.push(Statement::repeated(action.clone(), chunk));
            run -= chunk;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("brute-force search limited to 6x6, got {m}x{n}")]
pub struct InstanceTooLarge {
    pub m: usize,
    pub n: usize,
}

/// Exhaustive minimum ADD+DEL count for tiny instances.
///
/// Enumerates every pair of position subsets of equal size and keeps those
/// whose selected words coincide, i.e. every possible set of copied words.
/// Independent of the dynamic program above.
pub fn brute_force_oracle<T: PartialEq>(x: &[T], y: &[T]) -> Result<usize, InstanceTooLarge> {
    let (m, n) = (x.len(), y.len());
    if m > 6 || n > 6 {
        return Err(InstanceTooLarge { m, n });
    }
    let mut best_common = 0;
    for xs in 0u32..(1 << m) {
        let size = xs.count_ones() as usize;
        if size <= best_common {
            continue;
        }
        let picked_x: Vec<&T> = (0..m).filter(|i| xs & (1 << i) != 0).map(|i| &x[i]).collect();
        for ys in 0u32..(1 << n) {
            if ys.count_ones() as usize != size {
                continue;
            }
            let matches = (0..n)
                .filter(|j| ys & (1 << j) != 0)
                .zip(&picked_x)
                .all(|(j, xv)| y[j] == **xv);
            if matches {
                best_common = size;
                break;
            }
        }
    }
    Ok(m + n - 2 * best_common)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::{print_program, tokenize};
    use crate::executor::execute;

    const SENTENCE: &str = "montag und dienstag wechselhaft hier und da zeigt sich aber auch die sonne .";
    const GLOSSES: &str = "montag dienstag wechselhaft mal auch sonne";

    fn w(s: &str) -> Vec<Token> {
        tokenize(s)
    }

    #[test]
    fn table_borders_and_recurrence() {
        let t = EditDpTable::new(&w("a b c"), &w("a c"));
        for j in 0..t.cols() {
            assert_eq!(t.cost(0, j), j);
        }
        for i in 0..t.rows() {
            assert_eq!(t.cost(i, 0), i);
        }
        assert_eq!(t.distance(), 1);
    }

    #[test]
    fn distances() {
        assert_eq!(min_edit_distance(&w("a b c"), &w("a b c")), 0);
        assert_eq!(min_edit_distance(&w("a b c"), &[]), 3);
        assert_eq!(min_edit_distance::<Token>(&[], &[]), 0);
        // 14-word sentence with the final "." deleted explicitly
        assert_eq!(min_edit_distance(&w(SENTENCE), &w(GLOSSES)), 10);
        let without_stop: Vec<Token> = w(SENTENCE)[..13].to_vec();
        assert_eq!(min_edit_distance(&without_stop, &w(GLOSSES)), 9);
    }

    #[test]
    fn oracle_examples() {
        assert_eq!(brute_force_oracle(&w("a"), &w("a")), Ok(0));
        assert_eq!(brute_force_oracle(&w("a b"), &w("b a")), Ok(2));
        assert_eq!(brute_force_oracle(&w("a b c"), &w("a c")), Ok(1));
        assert_eq!(brute_force_oracle(&w("a a a a a a a"), &w("a")), Err(InstanceTooLarge { m: 7, n: 1 }));
    }

    #[test]
    fn programs() {
        assert_eq!(print_program(&minimal_program(&w("a b"), &w("a b"))), "FOR(2) COPY; SKIP");
        assert_eq!(print_program(&minimal_program(&[], &w("w w"))), "FOR(2) ADD(w); SKIP");
        assert_eq!(print_program(&minimal_program(&w("a b c"), &[])), "FOR(3) DEL; SKIP");
        assert_eq!(print_program(&minimal_program(&[], &[])), "SKIP");
        // ADD is placed before DEL when both are optimal
        assert_eq!(print_program(&minimal_program(&w("a b"), &w("b a"))), "ADD(b); COPY; DEL; SKIP");
    }

    #[test]
    fn weather_example_reference_program() {
        let x = w(SENTENCE);
        let y = w(GLOSSES);
        let opts = MinimalProgramOptions { max_repeat: 5, fold: FoldKinds::DEL_ONLY, trailing: TrailingWords::Skip };
        let p = minimal_program_with(&x, &y, &opts);
        assert_eq!(
            print_program(&p),
            "COPY; DEL; COPY; COPY; ADD(mal); FOR(5) DEL; DEL; COPY; DEL; COPY; SKIP"
        );
        assert_eq!(p.edit_count(), 9);
        assert_eq!(execute(&p, &x).unwrap(), y);

        let p = minimal_program(&x, &y);
        assert_eq!(
            print_program(&p),
            "COPY; DEL; FOR(2) COPY; ADD(mal); FOR(6) DEL; COPY; DEL; COPY; DEL; SKIP"
        );
        assert_eq!(p.edit_count(), 10);
    }

    #[test]
    fn chunking() {
        let x = w("a a a a a a a");
        let opts = MinimalProgramOptions::with_max_repeat(3);
        let p = minimal_program_with(&x, &[], &opts);
        assert_eq!(print_program(&p), "FOR(3) DEL; FOR(3) DEL; DEL; SKIP");
        assert_eq!(p, parse_program_max("FOR(3) DEL; FOR(3) DEL; DEL; SKIP", 3));
        let q = minimal_program_with(
            &x,
            &[],
            &MinimalProgramOptions { trailing: TrailingWords::Skip, ..MinimalProgramOptions::with_max_repeat(3) },
        );
        assert_eq!(print_program(&q), "SKIP");
        let unfolded = MinimalProgramOptions { fold: FoldKinds::NONE, ..Default::default() };
        assert_eq!(print_program(&minimal_program_with(&w("a b"), &w("a b"), &unfolded)), "COPY; COPY; SKIP");
    }

    fn parse_program_max(s: &str, max: usize) -> Program {
        crate::dsl::parse_program_with(s, max).unwrap()
    }

    #[test]
    fn add_runs_need_same_token() {
        let p = minimal_program(&[], &w("a a b"));
        assert_eq!(print_program(&p), "FOR(2) ADD(a); ADD(b); SKIP");
    }
}
