//! Imitation learning on minimal programs plus the peer-critic policy gradient.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use glossedit_core::corpus::{ParallelPair, Vocabulary};
use glossedit_core::dsl::{Program, Token};
use glossedit_core::metrics::{rouge_l_lenient, smoothed_sentence_bleu, EvalReport, MetricError};
use glossedit_core::minedit::{minimal_program_with, MinimalProgramOptions};

use crate::config::{RewardKind, TrainConfig};
use crate::model::{execute_steps, steps_of, Decoded, Decoding, Dropout, Glossifier, ModelError, Step, Transcription};
use crate::tensor::Matrix;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("pair {index}: {source}")]
    Pair { index: usize, source: ModelError },
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("loss became non-finite at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("cannot write metrics log: {0}")]
    Log(#[from] std::io::Error),
}

/// A training pair over vocabulary ids with its target program.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub sentence: Vec<u32>,
    pub glosses: Vec<u32>,
    pub steps: Vec<Step>,
}

/// Derivation options used for target programs.
pub fn derive_options(cfg: &TrainConfig, r_max: usize) -> MinimalProgramOptions {
    let cap = if cfg.derive_max_repeat == 0 { r_max } else { cfg.derive_max_repeat.min(r_max) };
    MinimalProgramOptions::with_max_repeat(cap)
}

/// Encodes pairs and derives any missing target program.
pub fn prepare(
    model: &Glossifier,
    vocab: &Vocabulary,
    pairs: &[ParallelPair],
    opts: &MinimalProgramOptions,
) -> Result<Vec<Example>, TrainError> {
    pairs
        .iter()
        .enumerate()
        .map(|(index, p)| {
            let program = match &p.program {
                Some(prog) => prog.clone(),
                None => minimal_program_with(&p.sentence, &p.glosses, opts),
            };
            let ex = Example {
                sentence: vocab.encode(&p.sentence),
                glosses: vocab.encode(&p.glosses),
                steps: steps_of(&program, vocab),
            };
            check_example(model, &ex).map_err(|source| TrainError::Pair { index, source })?;
            Ok(ex)
        })
        .collect()
}

fn check_example(model: &Glossifier, ex: &Example) -> Result<(), ModelError> {
    let l_max = model.config().l_max;
    for len in [ex.sentence.len(), ex.glosses.len()] {
        if len > l_max {
            return Err(ModelError::TooLong { len, max: l_max });
        }
    }
    let (end, _) = execute_steps(&ex.steps, &ex.sentence)?;
    debug_assert_eq!(end.glosses, ex.glosses);
    Ok(())
}

/// Sentence-level reward of `candidate` against `reference`, in `[0, 1]`.
pub fn reward(kind: RewardKind, candidate: &[u32], reference: &[u32]) -> f64 {
    match kind {
        RewardKind::Bleu4 => smoothed_sentence_bleu(candidate, reference),
        RewardKind::RougeL => rouge_l_lenient(candidate, reference),
        RewardKind::Sum => 0.5 * (smoothed_sentence_bleu(candidate, reference) + rouge_l_lenient(candidate, reference)),
    }
}

/// Rewards of K samples with leave-one-out baselines.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardBatch {
    pub rewards: Vec<f64>,
    pub baselines: Vec<f64>,
    pub advantages: Vec<f64>,
}

impl RewardBatch {
    /// `rewards.len()` must be at least 2.
    pub fn new(rewards: Vec<f64>) -> Self {
        let k = rewards.len();
        assert!(k >= 2, "the peer baseline needs at least two samples");
        // r_i - mean_{j != i} r_j written as a mean of pairwise differences,
        // so equal rewards give exactly zero advantages
        let advantages: Vec<f64> = (0..k)
            .map(|i| {
                let s: f64 = (0..k).filter(|&j| j != i).map(|j| rewards[i] - rewards[j]).sum();
                s / (k - 1) as f64
            })
            .collect();
        let baselines = rewards.iter().zip(&advantages).map(|(r, a)| r - a).collect();
        RewardBatch { rewards, baselines, advantages }
    }
}

/// Mixes a master seed with a counter.
pub fn split_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// K ancestral samples; sample `i` uses its own stream of `seed`.
pub fn sample_programs(model: &Glossifier, x: &[u32], k: usize, seed: u64) -> Result<Vec<Decoded>, ModelError> {
    let h = model.encode(x)?;
    (0..k)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            model.sample_ids(&h, x, &mut rng)
        })
        .collect()
}

/// Loss values and gradients for one example.
#[derive(Clone, Debug)]
pub struct Objective {
    pub il: f64,
    pub rl: f64,
    pub total: f64,
    pub grads: Vec<(usize, Matrix)>,
}

/// Samples and advantages feeding the policy-gradient term.
#[derive(Clone, Debug)]
pub struct Rollout {
    pub samples: Vec<Decoded>,
    pub rewards: RewardBatch,
}

/// Draws K samples for `ex` and scores them against its glosses.
pub fn rollout(model: &Glossifier, ex: &Example, cfg: &TrainConfig, seed: u64) -> Result<Rollout, ModelError> {
    let samples = sample_programs(model, &ex.sentence, cfg.k, seed)?;
    let rewards = samples.iter().map(|s| reward(cfg.reward, &s.glosses, &ex.glosses)).collect();
    Ok(Rollout { samples, rewards: RewardBatch::new(rewards) })
}

/// `λ·IL + RL` for one example, with gradients.
///
/// IL is the teacher-forced negative log-likelihood of the target program.
/// RL is `Σ_i (A_i / K) · NLL(sample_i)`, whose gradient is the peer-critic
/// policy gradient with advantages held constant. A forced SKIP carries no
/// weight since the model never chose it.
pub fn objective(
    model: &Glossifier,
    ex: &Example,
    lambda: f64,
    rollout: Option<&Rollout>,
    drop: &mut Dropout,
) -> Result<Objective, ModelError> {
    let mut g = model.graph();
    let h = model.encode_sentence(&mut g, &ex.sentence, drop)?;
    let il = model.program_nll(&mut g, &ex.sentence, h, &ex.steps, &vec![1.0; ex.steps.len()], drop)?;
    let il_scaled = g.scale(il, lambda);
    let mut parts = vec![il_scaled];
    let mut rl_parts = Vec::new();
    if let Some(r) = rollout {
        let k = r.samples.len() as f64;
        for (s, adv) in r.samples.iter().zip(&r.rewards.advantages) {
            let mut w = vec![adv / k; s.steps.len()];
            if s.forced_skip {
                *w.last_mut().expect("samples end in SKIP") = 0.0;
            }
            rl_parts.push(model.program_nll(&mut g, &ex.sentence, h, &s.steps, &w, drop)?);
        }
    }
    let rl = if rl_parts.is_empty() {
        None
    } else {
        let v = g.sum_scalars(rl_parts);
        parts.push(v);
        Some(v)
    };
    let total = g.sum_scalars(parts);
    let grads = g.backward(total);
    let il_v = g.value(il).get(0, 0);
    let rl_v = rl.map_or(0.0, |v| g.value(v).get(0, 0));
    Ok(Objective { il: il_v, rl: rl_v, total: g.value(total).get(0, 0), grads })
}

/// Mean teacher-forced NLL over `batch` (evaluation mode).
pub fn imitation_loss(model: &Glossifier, batch: &[Example]) -> Result<f64, ModelError> {
    let mut sum = 0.0;
    for ex in batch {
        let mut g = model.graph();
        let mut off = Dropout::off();
        let h = model.encode_sentence(&mut g, &ex.sentence, &mut off)?;
        let v = model.program_nll(&mut g, &ex.sentence, h, &ex.steps, &vec![1.0; ex.steps.len()], &mut off)?;
        sum += g.value(v).get(0, 0);
    }
    Ok(sum / batch.len() as f64)
}

/// Gradient of [`imitation_loss`] as one dense tensor per parameter.
pub fn imitation_gradient(model: &Glossifier, batch: &[Example]) -> Result<Vec<Matrix>, ModelError> {
    let mut grads = model.params().zeros_like();
    for ex in batch {
        let o = objective(model, ex, 1.0, None, &mut Dropout::off())?;
        for (i, gm) in o.grads {
            grads[i].add_assign(&gm);
        }
    }
    for gm in &mut grads {
        gm.scale_assign(1.0 / batch.len() as f64);
    }
    Ok(grads)
}

/// Adam with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl AdamW {
    pub fn new(params: &[Matrix], lr: f64, weight_decay: f64) -> Self {
        let zeros: Vec<Matrix> = params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
        AdamW { lr, weight_decay, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: zeros.clone(), v: zeros }
    }

    pub fn step(&mut self, params: &mut [Matrix], grads: &[Matrix]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let pd = p.data_mut();
            for (i, &gi) in g.data().iter().enumerate() {
                let mi = &mut m.data_mut()[i];
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                let mhat = *mi / c1;
                let vi = &mut v.data_mut()[i];
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let vhat = *vi / c2;
                pd[i] -= self.lr * (mhat / (vhat.sqrt() + self.eps) + self.weight_decay * pd[i]);
            }
        }
    }
}

/// Scales `grads` so their global norm is at most `max_norm`.
pub fn clip_gradients(grads: &mut [Matrix], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Matrix::sum_sq).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        for g in grads.iter_mut() {
            g.scale_assign(max_norm / norm);
        }
    }
    norm
}

/// Decodes every pair and scores the glosses, plus PER against the pair's
/// target program (derived when missing).
pub fn evaluate(
    model: &Glossifier,
    vocab: &Vocabulary,
    pairs: &[ParallelPair],
    opts: &MinimalProgramOptions,
    mode: Decoding,
) -> Result<(EvalReport, Vec<Transcription>), TrainError> {
    let outputs: Vec<Transcription> = pairs
        .par_iter()
        .enumerate()
        .map(|(index, p)| model.transcribe(vocab, &p.sentence, mode).map_err(|source| TrainError::Pair { index, source }))
        .collect::<Result<_, _>>()?;
    let preds: Vec<Vec<Token>> = outputs.iter().map(|t| t.glosses.clone()).collect();
    let refs: Vec<Vec<Token>> = pairs.iter().map(|p| p.glosses.clone()).collect();
    let programs: Vec<(Program, Program)> = outputs
        .iter()
        .zip(pairs)
        .map(|(t, p)| {
            let target = p.program.clone().unwrap_or_else(|| minimal_program_with(&p.sentence, &p.glosses, opts));
            (t.program.clone(), target)
        })
        .collect();
    let report = EvalReport::compute(&preds, &refs, Some(&programs))?;
    Ok((report, outputs))
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub split: String,
    pub loss_il: f64,
    pub loss_rl: f64,
    /// Mean of the per-example `λ·IL + RL`.
    pub loss_total: f64,
    pub report: EvalReport,
    /// Examples whose policy-gradient term was evaluated this epoch.
    pub rl_evaluations: usize,
}

impl EpochLog {
    pub fn header() -> &'static str {
        "epoch\tsplit\tloss_il\tloss_rl\tper\tbleu1\tbleu2\tbleu3\tbleu4\trouge_l"
    }

    pub fn to_tsv(&self) -> String {
        let r = &self.report;
        format!(
            "{}\t{}\t{:.6}\t{:.6}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            self.epoch,
            self.split,
            self.loss_il,
            self.loss_rl,
            r.per.map_or_else(|| "NA".to_string(), |p| format!("{p:.6}")),
            r.bleu[0],
            r.bleu[1],
            r.bleu[2],
            r.bleu[3],
            r.rouge_l
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub epochs: Vec<EpochLog>,
    /// Epoch whose validation BLEU-4 was highest (earliest on ties).
    pub best_epoch: usize,
    pub best_report: EvalReport,
    /// Parameters at `best_epoch`.
    pub best_params: Vec<Matrix>,
    pub stopped_early: bool,
}

/// Runs training and leaves the best-validation parameters in `model`.
///
/// Epochs `1..=il_warmup_epochs` optimize `λ·IL` only; later epochs add the
/// peer-critic term. Patience counts only epochs after the warm-up.
pub fn train(
    model: &mut Glossifier,
    vocab: &Vocabulary,
    train_pairs: &[ParallelPair],
    val_pairs: &[ParallelPair],
    cfg: &TrainConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<TrainOutcome, TrainError> {
    if train_pairs.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let opts = derive_options(cfg, model.config().r_max);
    let examples = prepare(model, vocab, train_pairs, &opts)?;
    let mut optimizer = AdamW::new(model.params().values(), cfg.learning_rate, cfg.weight_decay);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(split_seed(cfg.seed, 0));
    let dropout = model.config().dropout;
    if let Some(w) = log.as_deref_mut() {
        writeln!(w, "{}", EpochLog::header())?;
    }

    let mut epochs = Vec::new();
    let mut best: Option<(usize, EvalReport, Vec<Matrix>)> = None;
    let mut since_best = 0;
    let mut stopped_early = false;
    for epoch in 1..=cfg.total_epochs {
        let rl_on = epoch > cfg.il_warmup_epochs;
        order.shuffle(&mut shuffle_rng);
        let (mut il_sum, mut rl_sum, mut total_sum, mut rl_evaluations) = (0.0, 0.0, 0.0, 0);
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let m: &Glossifier = model;
            let results: Vec<Result<Objective, ModelError>> = batch
                .par_iter()
                .map(|&i| {
                    let stream = ((epoch as u64) << 32) ^ i as u64;
                    let seed = split_seed(cfg.seed, stream);
                    let ex = &examples[i];
                    let roll = if rl_on { Some(rollout(m, ex, cfg, seed)?) } else { None };
                    let mut rng = ChaCha8Rng::seed_from_u64(split_seed(seed, 1));
                    let mut drop = Dropout { rate: dropout, rng: Some(&mut rng) };
                    objective(m, ex, cfg.lambda_il, roll.as_ref(), &mut drop)
                })
                .collect();
            let mut grads = model.params().zeros_like();
            for r in results {
                let o = r?;
                if !o.total.is_finite() {
                    return Err(TrainError::Diverged { epoch });
                }
                il_sum += o.il;
                rl_sum += o.rl;
                total_sum += o.total;
                rl_evaluations += usize::from(rl_on);
                for (i, gm) in o.grads {
                    grads[i].add_assign(&gm);
                }
            }
            for gm in &mut grads {
                gm.scale_assign(1.0 / batch.len() as f64);
            }
            let norm = clip_gradients(&mut grads, cfg.grad_clip);
            if !norm.is_finite() {
                return Err(TrainError::Diverged { epoch });
            }
            optimizer.step(model.params_mut().values_mut(), &grads);
            log::debug!("epoch {epoch} batch {b} grad_norm {norm:.4}");
        }
        let n = examples.len() as f64;
        let eval_pairs = if val_pairs.is_empty() { train_pairs } else { val_pairs };
        let (report, _) = evaluate(model, vocab, eval_pairs, &opts, Decoding::Greedy)?;
        let entry = EpochLog {
            epoch,
            split: if val_pairs.is_empty() { "train" } else { "val" }.to_string(),
            loss_il: il_sum / n,
            loss_rl: rl_sum / n,
            loss_total: total_sum / n,
            report: report.clone(),
            rl_evaluations,
        };
        if let Some(w) = log.as_deref_mut() {
            writeln!(w, "{}", entry.to_tsv())?;
        }
        epochs.push(entry);
        let improved = best.as_ref().is_none_or(|(_, r, _)| report.bleu4() > r.bleu4());
        if improved {
            best = Some((epoch, report, model.params().values().to_vec()));
            since_best = 0;
        } else if epoch > cfg.il_warmup_epochs {
            since_best += 1;
            if cfg.patience > 0 && since_best >= cfg.patience {
                stopped_early = true;
                break;
            }
        }
    }
    let (best_epoch, best_report, best_params) = best.expect("at least one epoch ran");
    for (p, b) in model.params_mut().values_mut().iter_mut().zip(&best_params) {
        *p = b.clone();
    }
    Ok(TrainOutcome { epochs, best_epoch, best_report, best_params, stopped_early })
}

/// Trains one fresh model per `λ` and reports the best validation BLEU-4.
pub fn lambda_sweep(
    build: &dyn Fn() -> Glossifier,
    vocab: &Vocabulary,
    train_pairs: &[ParallelPair],
    val_pairs: &[ParallelPair],
    cfg: &TrainConfig,
    lambdas: &[f64],
) -> Result<Vec<(f64, EvalReport)>, TrainError> {
    lambdas
        .iter()
        .map(|&lambda| {
            let mut model = build();
            let c = TrainConfig { lambda_il: lambda, ..cfg.clone() };
            let out = train(&mut model, vocab, train_pairs, val_pairs, &c, None)?;
            Ok((lambda, out.best_report))
        })
        .collect()
}
