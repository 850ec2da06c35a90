//! The editing-program generator.
//!
//! Sentence encoder, causal gloss-history encoder, statement decoder with an
//! editing-causal-attention sublayer on top, and factorized heads for the
//! action kind, the ADD token and the repetition count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use glossedit_core::corpus::{Vocabulary, BOP, PAD};
use glossedit_core::dsl::{Action, ActionKind, Program, Statement, Token};

use crate::autodiff::{masked_softmax, Graph, Var};
use crate::config::ModelConfig;
use crate::params::{Init, ParamStore};
use crate::tensor::{sinusoidal_table, Matrix};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("sequence of length {len} exceeds the limit of {max}")]
    TooLong { len: usize, max: usize },
    #[error("token id {id} is outside the vocabulary of size {size}")]
    UnknownToken { id: u32, size: usize },
    #[error("statement {index} is not executable: {reason}")]
    NotExecutable { index: usize, reason: String },
    #[error("schedule has {schedule} rows but the decoder has {rows}")]
    Schedule { schedule: usize, rows: usize },
    #[error("vocabulary has {vocab} entries but the model was built for {model}")]
    VocabularyMismatch { vocab: usize, model: usize },
}

/// One statement over vocabulary ids.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Step {
    pub kind: ActionKind,
    /// Token id for ADD, otherwise 0.
    pub token: u32,
    /// 1 for SKIP.
    pub repeat: usize,
}

impl Step {
    pub fn skip() -> Self {
        Step { kind: ActionKind::Skip, token: 0, repeat: 1 }
    }

    pub fn new(kind: ActionKind, token: u32, repeat: usize) -> Self {
        let token = if kind == ActionKind::Add { token } else { 0 };
        let repeat = if kind == ActionKind::Skip { 1 } else { repeat };
        Step { kind, token, repeat }
    }

    pub fn from_statement(s: &Statement, vocab: &Vocabulary) -> Self {
        let token = s.action.token().map_or(0, |t| vocab.id(t.as_str()));
        Step::new(s.kind(), token, s.repeat)
    }

    pub fn to_statement(&self, vocab: &Vocabulary) -> Statement {
        let action = match self.kind {
            ActionKind::Add => {
                let surface = vocab.surface(self.token).unwrap_or("<unk>");
                Action::Add(Token::new(surface).expect("vocabulary entries are valid tokens"))
            }
            ActionKind::Del => Action::Del,
            ActionKind::Copy => Action::Copy,
            ActionKind::Skip => Action::Skip,
        };
        Statement::repeated(action, self.repeat)
    }
}

pub fn steps_of(p: &Program, vocab: &Vocabulary) -> Vec<Step> {
    p.statements().iter().map(|s| Step::from_statement(s, vocab)).collect()
}

pub fn program_of(steps: &[Step], vocab: &Vocabulary, max_repeat: usize) -> Program {
    let statements = steps.iter().map(|s| s.to_statement(vocab)).collect();
    Program::with_max_repeat(statements, max_repeat).expect("decoded programs end in SKIP and respect r_max")
}

/// Executor state over token ids.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IdState {
    /// Sentence words consumed so far (the 1-based pointer minus one).
    pub consumed: usize,
    pub glosses: Vec<u32>,
}

impl IdState {
    pub fn remaining(&self, m: usize) -> usize {
        m - self.consumed
    }

    /// Gloss slots left before `l_max`.
    pub fn room(&self, l_max: usize) -> usize {
        l_max.saturating_sub(self.glosses.len())
    }

    pub fn apply(&mut self, s: &Step, sentence: &[u32]) -> Result<(), String> {
        match s.kind {
            ActionKind::Add => self.glosses.extend(std::iter::repeat_n(s.token, s.repeat)),
            ActionKind::Del | ActionKind::Copy => {
                if s.repeat > sentence.len() - self.consumed {
                    return Err(format!(
                        "{} x{} with {} words left",
                        s.kind.keyword(),
                        s.repeat,
                        sentence.len() - self.consumed
                    ));
                }
                if s.kind == ActionKind::Copy {
                    self.glosses.extend_from_slice(&sentence[self.consumed..self.consumed + s.repeat]);
                }
                self.consumed += s.repeat;
            }
            ActionKind::Skip => {}
        }
        Ok(())
    }
}

/// Executes id steps; also returns the state before every step.
pub fn execute_steps(steps: &[Step], sentence: &[u32]) -> Result<(IdState, Vec<IdState>), ModelError> {
    let mut state = IdState::default();
    let mut before = Vec::with_capacity(steps.len());
    for (i, s) in steps.iter().enumerate() {
        before.push(state.clone());
        state.apply(s, sentence).map_err(|reason| ModelError::NotExecutable { index: i, reason })?;
    }
    Ok((state, before))
}

/// Per-step conditional over statements, after feasibility masking.
#[derive(Clone, Debug, PartialEq)]
pub struct StatementDistribution {
    /// Indexed by [`ActionKind::index`].
    pub kind_probs: [f64; 4],
    /// Over vocabulary ids; used when the kind is ADD.
    pub token_probs: Vec<f64>,
    /// `rep_probs[kind][r - 1]` for ADD, DEL and COPY.
    pub rep_probs: [Vec<f64>; 3],
}

impl StatementDistribution {
    pub fn prob(&self, s: &Step) -> f64 {
        let k = s.kind.index();
        let mut p = self.kind_probs[k];
        if s.kind == ActionKind::Add {
            p *= self.token_probs[s.token as usize];
        }
        if s.kind != ActionKind::Skip {
            p *= self.rep_probs[k].get(s.repeat - 1).copied().unwrap_or(0.0);
        }
        p
    }

    pub fn log_prob(&self, s: &Step) -> f64 {
        self.prob(s).ln()
    }

    /// The `n` most probable statements, best first. Ties break toward the
    /// lower kind index, then the lower token id, then the lower repetition.
    pub fn top(&self, n: usize) -> Vec<(Step, f64)> {
        let mut cands: Vec<(Step, f64)> = Vec::new();
        let best_idx = |v: &[f64], n: usize| -> Vec<usize> {
            let mut idx: Vec<usize> = (0..v.len()).filter(|&i| v[i] > 0.0).collect();
            idx.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
            idx.truncate(n);
            idx
        };
        for kind in ActionKind::ALL {
            let pk = self.kind_probs[kind.index()];
            if pk <= 0.0 {
                continue;
            }
            match kind {
                ActionKind::Skip => cands.push((Step::skip(), pk.ln())),
                ActionKind::Add => {
                    for t in best_idx(&self.token_probs, n) {
                        for r in best_idx(&self.rep_probs[0], n) {
                            let p = pk * self.token_probs[t] * self.rep_probs[0][r];
                            cands.push((Step::new(kind, t as u32, r + 1), p.ln()));
                        }
                    }
                }
                _ => {
                    let reps = &self.rep_probs[kind.index()];
                    for r in best_idx(reps, n) {
                        cands.push((Step::new(kind, 0, r + 1), (pk * reps[r]).ln()));
                    }
                }
            }
        }
        cands.sort_by(|a, b| b.1.total_cmp(&a.1));
        cands.truncate(n);
        cands
    }

    pub fn argmax(&self) -> Step {
        self.top(1)[0].0
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Step {
        let kind = ActionKind::from_index(sample_index(&self.kind_probs, rng)).expect("four kinds");
        match kind {
            ActionKind::Skip => Step::skip(),
            ActionKind::Add => {
                let t = sample_index(&self.token_probs, rng);
                let r = sample_index(&self.rep_probs[0], rng);
                Step::new(kind, t as u32, r + 1)
            }
            _ => Step::new(kind, 0, sample_index(&self.rep_probs[kind.index()], rng) + 1),
        }
    }
}

/// Inverse-CDF draw; never returns a zero-probability index.
pub fn sample_index<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// Kind feasibility given the words left under the executor pointer and
/// the free gloss slots (`room`) before the length limit.
pub fn kind_mask(remaining: usize, room: usize) -> Vec<bool> {
    vec![room > 0, remaining > 0, remaining > 0 && room > 0, true]
}

/// Repetition feasibility for a kind; empty for SKIP.
pub fn rep_mask(kind: ActionKind, remaining: usize, room: usize, r_max: usize) -> Vec<bool> {
    let limit = match kind {
        ActionKind::Add => room,
        ActionKind::Del => remaining,
        ActionKind::Copy => remaining.min(room),
        ActionKind::Skip => return Vec::new(),
    };
    (1..=r_max).map(|r| r <= limit).collect()
}

/// Logits for the three heads over the decoder rows of one program.
pub struct HeadLogits {
    pub kind: Var,
    pub token: Var,
    pub rep: Var,
}

/// Dropout source; `None` means evaluation mode.
pub struct Dropout<'a> {
    pub rate: f64,
    pub rng: Option<&'a mut ChaCha8Rng>,
}

impl Dropout<'_> {
    pub fn off() -> Dropout<'static> {
        Dropout { rate: 0.0, rng: None }
    }

    fn apply(&mut self, g: &mut Graph, x: Var) -> Var {
        match &mut self.rng {
            Some(rng) if self.rate > 0.0 => g.dropout(x, self.rate, &mut **rng),
            _ => x,
        }
    }
}

#[derive(Clone, Debug)]
struct Linear {
    w: usize,
    b: Option<usize>,
}

#[derive(Clone, Debug)]
struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
}

#[derive(Clone, Debug)]
struct Norm {
    gamma: usize,
    beta: usize,
}

#[derive(Clone, Debug)]
struct FeedForward {
    up: Linear,
    down: Linear,
}

#[derive(Clone, Debug)]
struct EncoderLayer {
    attn: Attention,
    ln1: Norm,
    ff: FeedForward,
    ln2: Norm,
}

#[derive(Clone, Debug)]
struct DecoderLayer {
    self_attn: Attention,
    ln1: Norm,
    cross: Attention,
    ln2: Norm,
    ff: FeedForward,
    ln3: Norm,
}

#[derive(Clone, Debug)]
struct Layout {
    tok_emb: usize,
    kind_emb: usize,
    rep_emb: usize,
    sentence_encoder: Vec<EncoderLayer>,
    gloss_encoder: Vec<EncoderLayer>,
    decoder: Vec<DecoderLayer>,
    eca: Attention,
    eca_norm: Norm,
    kind_head: Linear,
    token_head: Linear,
    rep_kind: usize,
    rep_head: Linear,
}

struct Builder<'a> {
    store: &'a mut ParamStore,
    rng: &'a mut ChaCha8Rng,
    d: usize,
}

impl Builder<'_> {
    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize, bias: bool) -> Linear {
        let w = self.store.add(format!("{name}.w"), fan_in, fan_out, Init::Xavier, self.rng);
        let b = bias.then(|| self.store.add(format!("{name}.b"), 1, fan_out, Init::Zeros, self.rng));
        Linear { w, b }
    }

    fn attention(&mut self, name: &str, out_bias: bool) -> Attention {
        let d = self.d;
        Attention {
            q: self.linear(&format!("{name}.q"), d, d, true),
            // a key bias only shifts each score row by a constant
            k: self.linear(&format!("{name}.k"), d, d, false),
            v: self.linear(&format!("{name}.v"), d, d, true),
            o: self.linear(&format!("{name}.o"), d, d, out_bias),
        }
    }

    fn norm(&mut self, name: &str) -> Norm {
        Norm {
            gamma: self.store.add(format!("{name}.gamma"), 1, self.d, Init::Ones, self.rng),
            beta: self.store.add(format!("{name}.beta"), 1, self.d, Init::Zeros, self.rng),
        }
    }

    fn feed_forward(&mut self, name: &str, ff: usize) -> FeedForward {
        FeedForward {
            up: self.linear(&format!("{name}.up"), self.d, ff, true),
            down: self.linear(&format!("{name}.down"), ff, self.d, true),
        }
    }

    fn encoder_layer(&mut self, name: &str, ff: usize) -> EncoderLayer {
        EncoderLayer {
            attn: self.attention(&format!("{name}.attn"), true),
            ln1: self.norm(&format!("{name}.ln1")),
            ff: self.feed_forward(&format!("{name}.ff"), ff),
            ln2: self.norm(&format!("{name}.ln2")),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Glossifier {
    config: ModelConfig,
    params: ParamStore,
    layout: Layout,
    positions: Matrix,
}

impl Glossifier {
    /// Builds a model with seeded initial parameters. `config.vocab_size`
    /// must be set.
    pub fn new(config: ModelConfig) -> Self {
        config.validate().expect("invalid model config");
        assert!(config.vocab_size > BOP as usize, "vocab_size must include the reserved ids");
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let d = config.d_model;
        let ff = config.ff_dim;
        let mut b = Builder { store: &mut store, rng: &mut rng, d };
        let emb = Init::Uniform(1.0);
        let tok_emb = b.store.add("tok_emb", config.vocab_size, d, emb, b.rng);
        let kind_emb = b.store.add("kind_emb", 4, d, emb, b.rng);
        let rep_emb = b.store.add("rep_emb", config.r_max, d, emb, b.rng);
        let sentence_encoder = (0..config.gen_encoder_layers).map(|l| b.encoder_layer(&format!("enc.{l}"), ff)).collect();
        let gloss_encoder = (0..config.exec_encoder_layers).map(|l| b.encoder_layer(&format!("exec.{l}"), ff)).collect();
        let decoder = (0..config.gen_decoder_layers)
            .map(|l| DecoderLayer {
                self_attn: b.attention(&format!("dec.{l}.self"), true),
                ln1: b.norm(&format!("dec.{l}.ln1")),
                cross: b.attention(&format!("dec.{l}.cross"), true),
                ln2: b.norm(&format!("dec.{l}.ln2")),
                ff: b.feed_forward(&format!("dec.{l}.ff"), ff),
                ln3: b.norm(&format!("dec.{l}.ln3")),
            })
            .collect();
        let eca = b.attention("eca", false);
        let eca_norm = b.norm("eca.ln");
        let kind_head = b.linear("head.kind", d, 4, true);
        let token_head = b.linear("head.token", d, config.vocab_size, true);
        let rep_kind = b.store.add("head.rep_kind", 3, d, emb, b.rng);
        let rep_head = b.linear("head.rep", d, config.r_max, true);
        let layout = Layout {
            tok_emb,
            kind_emb,
            rep_emb,
            sentence_encoder,
            gloss_encoder,
            decoder,
            eca,
            eca_norm,
            kind_head,
            token_head,
            rep_kind,
            rep_head,
        };
        let positions = sinusoidal_table(config.positions(), d);
        Glossifier { config, params: store, layout, positions }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn positional_table(&self) -> &Matrix {
        &self.positions
    }

    pub fn graph(&self) -> Graph<'_> {
        Graph::new(self.params.values())
    }

    fn linear(&self, g: &mut Graph, x: Var, l: &Linear) -> Var {
        let w = g.param(l.w);
        let y = g.matmul(x, w);
        match l.b {
            Some(b) => {
                let b = g.param(b);
                g.add_row(y, b)
            }
            None => y,
        }
    }

    fn norm(&self, g: &mut Graph, x: Var, n: &Norm) -> Var {
        let gamma = g.param(n.gamma);
        let beta = g.param(n.beta);
        g.layer_norm(x, gamma, beta)
    }

    fn attention(&self, g: &mut Graph, a: &Attention, q_in: Var, kv_in: Var, visible: &[usize]) -> Var {
        let q = self.linear(g, q_in, &a.q);
        let k = self.linear(g, kv_in, &a.k);
        let v = self.linear(g, kv_in, &a.v);
        let dh = self.config.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut heads = Vec::with_capacity(self.config.num_heads);
        for h in 0..self.config.num_heads {
            let (qh, kh, vh) = if self.config.num_heads == 1 {
                (q, k, v)
            } else {
                (g.slice_cols(q, h * dh, dh), g.slice_cols(k, h * dh, dh), g.slice_cols(v, h * dh, dh))
            };
            let s = g.matmul_t(qh, kh);
            let s = g.scale(s, scale);
            let p = g.softmax_visible(s, visible.to_vec());
            heads.push(g.matmul(p, vh));
        }
        let ctx = if heads.len() == 1 { heads[0] } else { g.concat_cols(heads) };
        self.linear(g, ctx, &a.o)
    }

    fn feed_forward(&self, g: &mut Graph, x: Var, f: &FeedForward, drop: &mut Dropout) -> Var {
        let u = self.linear(g, x, &f.up);
        let u = g.relu(u);
        let u = drop.apply(g, u);
        self.linear(g, u, &f.down)
    }

    fn residual_norm(&self, g: &mut Graph, x: Var, sub: Var, n: &Norm, drop: &mut Dropout) -> Var {
        let sub = drop.apply(g, sub);
        let s = g.add(x, sub);
        self.norm(g, s, n)
    }

    fn encoder_stack(&self, g: &mut Graph, mut x: Var, layers: &[EncoderLayer], visible: &[usize], drop: &mut Dropout) -> Var {
        for layer in layers {
            let a = self.attention(g, &layer.attn, x, x, visible);
            x = self.residual_norm(g, x, a, &layer.ln1, drop);
            let f = self.feed_forward(g, x, &layer.ff, drop);
            x = self.residual_norm(g, x, f, &layer.ln2, drop);
        }
        x
    }

    fn check_ids(&self, ids: &[u32]) -> Result<(), ModelError> {
        if ids.len() > self.config.l_max {
            return Err(ModelError::TooLong { len: ids.len(), max: self.config.l_max });
        }
        match ids.iter().find(|&&id| id as usize >= self.config.vocab_size) {
            Some(&id) => Err(ModelError::UnknownToken { id, size: self.config.vocab_size }),
            None => Ok(()),
        }
    }

    fn embed(&self, g: &mut Graph, ids: &[u32], with_positions: bool) -> Var {
        let table = g.param(self.layout.tok_emb);
        let e = g.gather(table, ids.iter().map(|&i| Some(i as usize)).collect());
        if !with_positions {
            return e;
        }
        let p = g.constant(self.positions.slice_rows(0, ids.len()));
        g.add(e, p)
    }

    /// `h`: one row per sentence word.
    pub fn encode_sentence(&self, g: &mut Graph, x: &[u32], drop: &mut Dropout) -> Result<Var, ModelError> {
        self.encode_sentence_with(g, x, true, drop)
    }

    pub fn encode_sentence_with(&self, g: &mut Graph, x: &[u32], positions: bool, drop: &mut Dropout) -> Result<Var, ModelError> {
        self.check_ids(x)?;
        let e = self.embed(g, x, positions);
        let e = drop.apply(g, e);
        let visible = vec![x.len(); x.len()];
        Ok(self.encoder_stack(g, e, &self.layout.sentence_encoder, &visible, drop))
    }

    /// `g`: one row per emitted gloss. Row `i` only sees glosses `1..=i`, so
    /// encoding a full sequence once equals re-encoding every prefix.
    pub fn encode_gloss_history(&self, g: &mut Graph, y: &[u32], drop: &mut Dropout) -> Result<Var, ModelError> {
        self.check_ids(y)?;
        let e = self.embed(g, y, true);
        let e = drop.apply(g, e);
        let visible: Vec<usize> = (1..=y.len()).collect();
        Ok(self.encoder_stack(g, e, &self.layout.gloss_encoder, &visible, drop))
    }

    /// Decoder states for the start row followed by each prefix statement.
    pub fn decode_statements(&self, g: &mut Graph, prefix: &[Step], h: Var, drop: &mut Dropout) -> Result<Var, ModelError> {
        let rows = prefix.len() + 1;
        if rows > self.positions.rows() {
            return Err(ModelError::TooLong { len: prefix.len(), max: self.positions.rows() - 1 });
        }
        for s in prefix {
            if s.kind == ActionKind::Add {
                self.check_ids(&[s.token])?;
            }
            if s.kind != ActionKind::Skip && !(1..=self.config.r_max).contains(&s.repeat) {
                return Err(ModelError::TooLong { len: s.repeat, max: self.config.r_max });
            }
        }
        let mut tok_ids = vec![Some(BOP as usize)];
        let mut kind_ids = vec![None];
        let mut rep_ids = vec![None];
        for s in prefix {
            tok_ids.push((s.kind == ActionKind::Add).then_some(s.token as usize));
            kind_ids.push(Some(s.kind.index()));
            rep_ids.push((s.kind != ActionKind::Skip).then(|| s.repeat - 1));
        }
        let tok_table = g.param(self.layout.tok_emb);
        let kind_table = g.param(self.layout.kind_emb);
        let rep_table = g.param(self.layout.rep_emb);
        let t = g.gather(tok_table, tok_ids);
        let k = g.gather(kind_table, kind_ids);
        let r = g.gather(rep_table, rep_ids);
        let p = g.constant(self.positions.slice_rows(0, rows));
        let e = g.add(t, k);
        let e = g.add(e, r);
        let e = g.add(e, p);
        let mut x = drop.apply(g, e);
        let causal: Vec<usize> = (1..=rows).collect();
        let hv = g.shape(h).0;
        let full = vec![hv; rows];
        for layer in &self.layout.decoder {
            let a = self.attention(g, &layer.self_attn, x, x, &causal);
            x = self.residual_norm(g, x, a, &layer.ln1, drop);
            let c = self.attention(g, &layer.cross, x, h, &full);
            x = self.residual_norm(g, x, c, &layer.ln2, drop);
            let f = self.feed_forward(g, x, &layer.ff, drop);
            x = self.residual_norm(g, x, f, &layer.ln3, drop);
        }
        Ok(x)
    }

    /// Attention from decoder rows to gloss encodings; row `t` sees the first
    /// `visible[t]` glosses, and a row that sees none gets a zero context.
    pub fn editing_context(&self, g: &mut Graph, e: Var, gl: Var, visible: &[usize]) -> Result<Var, ModelError> {
        let rows = g.shape(e).0;
        if visible.len() != rows {
            return Err(ModelError::Schedule { schedule: visible.len(), rows });
        }
        let avail = g.shape(gl).0;
        if let Some(&v) = visible.iter().find(|&&v| v > avail) {
            return Err(ModelError::Schedule { schedule: v, rows: avail });
        }
        Ok(self.attention(g, &self.layout.eca, e, gl, visible))
    }

    /// The editing-causal-attention sublayer: `LN(e + context)`.
    pub fn editing_causal_attention(&self, g: &mut Graph, e: Var, gl: Var, visible: &[usize], drop: &mut Dropout) -> Result<Var, ModelError> {
        let c = self.editing_context(g, e, gl, visible)?;
        Ok(self.residual_norm(g, e, c, &self.layout.eca_norm, drop))
    }

    /// Head logits for every row of `o`; `rep_kinds[t]` conditions the
    /// repetition head (`None` leaves it unconditioned).
    pub fn heads(&self, g: &mut Graph, o: Var, rep_kinds: Vec<Option<usize>>) -> HeadLogits {
        let kind = self.linear(g, o, &self.layout.kind_head);
        let token = self.linear(g, o, &self.layout.token_head);
        let table = g.param(self.layout.rep_kind);
        let cond = g.gather(table, rep_kinds);
        let rin = g.add(o, cond);
        let rep = self.linear(g, rin, &self.layout.rep_head);
        HeadLogits { kind, token, rep }
    }

    /// Token feasibility: every id except the padding and start symbols.
    pub fn token_mask(&self) -> Vec<bool> {
        (0..self.config.vocab_size).map(|i| i != PAD as usize && i != BOP as usize).collect()
    }

    /// Teacher-forced negative log-likelihood of `steps` on one sentence,
    /// each row scaled by `weights[t]`. `h` is the sentence encoding.
    pub fn program_nll(
        &self,
        g: &mut Graph,
        x: &[u32],
        h: Var,
        steps: &[Step],
        weights: &[f64],
        drop: &mut Dropout,
    ) -> Result<Var, ModelError> {
        assert_eq!(steps.len(), weights.len());
        let (end, before) = execute_steps(steps, x)?;
        let e = self.decode_statements(g, &steps[..steps.len().saturating_sub(1)], h, drop)?;
        let gl = self.encode_gloss_history(g, &end.glosses, drop)?;
        let visible: Vec<usize> = before.iter().map(|s| s.glosses.len()).collect();
        let o = self.editing_causal_attention(g, e, gl, &visible, drop)?;
        let rep_kinds = steps.iter().map(|s| (s.kind != ActionKind::Skip).then(|| s.kind.index())).collect();
        let logits = self.heads(g, o, rep_kinds);

        let m = x.len();
        let l_max = self.config.l_max;
        let kind_masks: Vec<Vec<bool>> = before.iter().map(|s| kind_mask(s.remaining(m), s.room(l_max))).collect();
        let tok_mask = self.token_mask();
        let tok_masks: Vec<Vec<bool>> = vec![tok_mask; steps.len()];
        let rep_masks: Vec<Vec<bool>> = steps
            .iter()
            .zip(&before)
            .map(|(s, b)| match s.kind {
                ActionKind::Skip => vec![true; self.config.r_max],
                k => rep_mask(k, b.remaining(m), b.room(l_max), self.config.r_max),
            })
            .collect();
        let kinds = steps.iter().map(|s| Some(s.kind.index())).collect();
        let tokens = steps.iter().map(|s| (s.kind == ActionKind::Add).then_some(s.token as usize)).collect();
        let reps = steps.iter().map(|s| (s.kind != ActionKind::Skip).then(|| s.repeat - 1)).collect();
        let a = g.masked_nll(logits.kind, &kind_masks, kinds, weights.to_vec());
        let b = g.masked_nll(logits.token, &tok_masks, tokens, weights.to_vec());
        let c = g.masked_nll(logits.rep, &rep_masks, reps, weights.to_vec());
        Ok(g.sum_scalars(vec![a, b, c]))
    }

    /// Per-step distribution after `prefix` on sentence `x` (evaluation mode).
    pub fn predict_step(&self, x: &[u32], prefix: &[Step]) -> Result<StatementDistribution, ModelError> {
        let mut g = self.graph();
        let h = self.encode_sentence(&mut g, x, &mut Dropout::off())?;
        let h = g.value(h).clone();
        self.predict_with_encoding(&h, x, prefix)
    }

    /// Like [`predict_step`](Self::predict_step) with a precomputed sentence encoding.
    pub fn predict_with_encoding(&self, h: &Matrix, x: &[u32], prefix: &[Step]) -> Result<StatementDistribution, ModelError> {
        let (state, before) = execute_steps(prefix, x)?;
        let mut g = self.graph();
        let h = g.constant(h.clone());
        let mut off = Dropout::off();
        let e = self.decode_statements(&mut g, prefix, h, &mut off)?;
        let gl = self.encode_gloss_history(&mut g, &state.glosses, &mut off)?;
        let mut visible: Vec<usize> = before.iter().map(|s| s.glosses.len()).collect();
        visible.push(state.glosses.len());
        let o = self.editing_causal_attention(&mut g, e, gl, &visible, &mut off)?;
        let last = prefix.len();
        let o3 = g.gather(o, vec![Some(last); 3]);
        let logits = self.heads(&mut g, o3, vec![Some(0), Some(1), Some(2)]);
        Ok(self.distribution(&g, &logits, state.remaining(x.len()), state.room(self.config.l_max)))
    }

    fn distribution(&self, g: &Graph, logits: &HeadLogits, remaining: usize, room: usize) -> StatementDistribution {
        let kind = masked_softmax(g.value(logits.kind).row(0), &kind_mask(remaining, room));
        let token = masked_softmax(g.value(logits.token).row(0), &self.token_mask());
        let reps = g.value(logits.rep);
        let rep = |k: ActionKind| masked_softmax(reps.row(k.index()), &rep_mask(k, remaining, room, self.config.r_max));
        StatementDistribution {
            kind_probs: [kind[0], kind[1], kind[2], kind[3]],
            token_probs: token,
            rep_probs: [rep(ActionKind::Add), rep(ActionKind::Del), rep(ActionKind::Copy)],
        }
    }

    /// Step budget for a sentence of `m` words.
    pub fn step_budget(m: usize) -> usize {
        2 * m + 8
    }

    /// Evaluation-mode sentence encoding.
    pub fn encode(&self, x: &[u32]) -> Result<Matrix, ModelError> {
        let mut g = self.graph();
        let h = self.encode_sentence(&mut g, x, &mut Dropout::off())?;
        Ok(g.value(h).clone())
    }

    /// Decodes a program for `x`.
    pub fn transcribe_ids(&self, x: &[u32], mode: Decoding) -> Result<Decoded, ModelError> {
        let h = self.encode(x)?;
        match mode {
            Decoding::Greedy => self.greedy(&h, x),
            Decoding::Beam(w) => self.beam(&h, x, w.max(1)),
        }
    }

    fn greedy(&self, h: &Matrix, x: &[u32]) -> Result<Decoded, ModelError> {
        let budget = Self::step_budget(x.len());
        let mut steps = Vec::new();
        let mut log_prob = 0.0;
        loop {
            if steps.len() + 1 == budget {
                steps.push(Step::skip());
                return Ok(Decoded::finish(steps, x, log_prob, true));
            }
            let d = self.predict_with_encoding(h, x, &steps)?;
            let (s, lp) = d.top(1)[0];
            steps.push(s);
            log_prob += lp;
            if s.kind == ActionKind::Skip {
                return Ok(Decoded::finish(steps, x, log_prob, false));
            }
        }
    }

    fn beam(&self, h: &Matrix, x: &[u32], width: usize) -> Result<Decoded, ModelError> {
        let budget = Self::step_budget(x.len());
        let mut alive: Vec<(Vec<Step>, f64)> = vec![(Vec::new(), 0.0)];
        let mut finished: Vec<Decoded> = Vec::new();
        while !alive.is_empty() {
            let mut next: Vec<(Vec<Step>, f64)> = Vec::new();
            for (steps, lp) in &alive {
                if steps.len() + 1 == budget {
                    let mut s = steps.clone();
                    s.push(Step::skip());
                    finished.push(Decoded::finish(s, x, *lp, true));
                    continue;
                }
                let d = self.predict_with_encoding(h, x, steps)?;
                for (s, slp) in d.top(width) {
                    let mut ext = steps.clone();
                    ext.push(s);
                    next.push((ext, lp + slp));
                }
            }
            // stable sort keeps expansion order among equal scores
            next.sort_by(|a, b| b.1.total_cmp(&a.1));
            next.truncate(width);
            alive = Vec::new();
            for (steps, lp) in next {
                if steps.last().is_some_and(|s| s.kind == ActionKind::Skip) {
                    finished.push(Decoded::finish(steps, x, lp, false));
                } else {
                    alive.push((steps, lp));
                }
            }
            // stop once no live hypothesis can beat the best finished one
            if let Some(best) = finished.iter().map(|d| d.log_prob).max_by(f64::total_cmp) {
                alive.retain(|(_, lp)| *lp > best);
            }
        }
        let mut best = finished.remove(0);
        for d in finished {
            if d.log_prob > best.log_prob {
                best = d;
            }
        }
        Ok(best)
    }

    /// Ancestral sample with feasibility masking.
    pub fn sample_ids(&self, h: &Matrix, x: &[u32], rng: &mut ChaCha8Rng) -> Result<Decoded, ModelError> {
        let budget = Self::step_budget(x.len());
        let mut steps = Vec::new();
        let mut log_prob = 0.0;
        loop {
            if steps.len() + 1 == budget {
                steps.push(Step::skip());
                return Ok(Decoded::finish(steps, x, log_prob, true));
            }
            let d = self.predict_with_encoding(h, x, &steps)?;
            let s = d.sample(rng);
            log_prob += d.log_prob(&s);
            steps.push(s);
            if s.kind == ActionKind::Skip {
                return Ok(Decoded::finish(steps, x, log_prob, false));
            }
        }
    }
}

impl Glossifier {
    /// Decodes `sentence` and executes the program on its surface words, so
    /// COPY of an out-of-vocabulary word keeps the original spelling.
    pub fn transcribe(&self, vocab: &Vocabulary, sentence: &[Token], mode: Decoding) -> Result<Transcription, ModelError> {
        if vocab.len() != self.config.vocab_size {
            return Err(ModelError::VocabularyMismatch { vocab: vocab.len(), model: self.config.vocab_size });
        }
        let ids = vocab.encode(sentence);
        let d = self.transcribe_ids(&ids, mode)?;
        let program = program_of(&d.steps, vocab, self.config.r_max);
        let glosses = glossedit_core::executor::execute(&program, sentence).expect("decoded programs are executable");
        Ok(Transcription { program, glosses, log_prob: d.log_prob, forced_skip: d.forced_skip })
    }

    /// Head logits computed from given decoder states and gloss encodings.
    /// Returns `(kind, token, rep)` logit matrices, one row per decoder row;
    /// the repetition head is conditioned on `rep_kinds`.
    pub fn logits_from_states(
        &self,
        e: &Matrix,
        gl: &Matrix,
        visible: &[usize],
        rep_kinds: Vec<Option<usize>>,
    ) -> Result<(Matrix, Matrix, Matrix), ModelError> {
        let mut g = self.graph();
        let e = g.constant(e.clone());
        let gl = g.constant(gl.clone());
        let o = self.editing_causal_attention(&mut g, e, gl, visible, &mut Dropout::off())?;
        let l = self.heads(&mut g, o, rep_kinds);
        Ok((g.value(l.kind).clone(), g.value(l.token).clone(), g.value(l.rep).clone()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transcription {
    pub program: Program,
    pub glosses: Vec<Token>,
    pub log_prob: f64,
    pub forced_skip: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decoding {
    Greedy,
    Beam(usize),
}

/// A decoded program over ids with its executed glosses.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    pub steps: Vec<Step>,
    pub glosses: Vec<u32>,
    /// Sum of per-step log-probabilities, excluding a forced SKIP.
    pub log_prob: f64,
    /// True when the step budget ran out and SKIP was appended.
    pub forced_skip: bool,
}

impl Decoded {
    fn finish(steps: Vec<Step>, x: &[u32], log_prob: f64, forced_skip: bool) -> Self {
        let (state, _) = execute_steps(&steps, x).expect("decoded steps respect feasibility masks");
        Decoded { steps, glosses: state.glosses, log_prob, forced_skip }
    }
}
