//! End-to-end acceptance checks, one line of output per criterion.
//!
//! Runs without the libtest harness so every result line is visible in
//! `cargo test` output. Exits non-zero when any criterion fails.

use std::fs;
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use glossedit_core::corpus::{make_synthetic_corpus, write_corpus, ParallelPair, SyntheticConfig, Vocabulary};
use glossedit_core::dsl::{parse_program, print_program, tokenize, Action, ActionKind, Program, Statement, Token};
use glossedit_core::executor::{execute, execute_prefix, mask_schedule};
use glossedit_core::metrics::{bleu, corpus_rouge_l, per, smoothed_sentence_bleu, rouge_l};
use glossedit_core::minedit::{brute_force_oracle, minimal_program, minimal_program_with, FoldKinds, MinimalProgramOptions, TrailingWords};
use glossedit_model::gradcheck::check_gradients;
use glossedit_model::model::{execute_steps, steps_of, Dropout};
use glossedit_model::train::{derive_options, evaluate, objective, train, Example, RewardBatch, Rollout};
use glossedit_model::{Decoding, Glossifier, ModelConfig, TrainConfig};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn w(s: &str) -> Vec<Token> {
    tokenize(s)
}

fn check(cond: bool, what: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what())
    }
}

fn weather_example_golden() -> Outcome {
    let sentence = w("montag und dienstag wechselhaft hier und da zeigt sich aber auch die sonne .");
    check(sentence.len() == 14, || format!("sentence has {} tokens", sentence.len()))?;
    let prediction =
        parse_program("COPY; DEL; COPY; ADD(wechselhaft); ADD(mal); FOR(5) DEL; FOR(2) DEL; COPY; COPY; COPY; SKIP")
            .map_err(|e| e.to_string())?;
    let reference_text = "COPY; DEL; COPY; COPY; ADD(mal); FOR(5) DEL; DEL; COPY; DEL; COPY; SKIP";
    let reference = parse_program(reference_text).map_err(|e| e.to_string())?;
    let got = execute(&prediction, &sentence).map_err(|e| e.to_string())?;
    check(got == w("montag dienstag wechselhaft mal auch die sonne"), || format!("prediction gave {got:?}"))?;
    let glosses = execute(&reference, &sentence).map_err(|e| e.to_string())?;
    check(glosses == w("montag dienstag wechselhaft mal auch sonne"), || format!("reference gave {glosses:?}"))?;
    let opts = MinimalProgramOptions { max_repeat: 5, fold: FoldKinds::DEL_ONLY, trailing: TrailingWords::Skip };
    let derived = print_program(&minimal_program_with(&sentence, &glosses, &opts));
    check(derived == reference_text, || format!("derived {derived}"))?;
    Ok("both rows execute exactly; derived program equals the reference".into())
}

fn random_words(rng: &mut ChaCha8Rng, alphabet: &[Token], max_len: usize) -> Vec<Token> {
    let n = rng.gen_range(0..=max_len);
    (0..n).map(|_| alphabet.choose(rng).expect("non-empty").clone()).collect()
}

fn minimality_oracle() -> Outcome {
    let alphabet = w("a b c d e");
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for case in 0..10_000 {
        let x = random_words(&mut rng, &alphabet, 6);
        let y = random_words(&mut rng, &alphabet, 6);
        let p = minimal_program(&x, &y);
        let oracle = brute_force_oracle(&x, &y).map_err(|e| e.to_string())?;
        check(p.edit_count() == oracle, || format!("case {case}: {} edits vs oracle {oracle} for {x:?} -> {y:?}", p.edit_count()))?;
        let out = execute(&p, &x).map_err(|e| format!("case {case}: {e}"))?;
        check(out == y, || format!("case {case}: executed {out:?}, wanted {y:?}"))?;
    }
    Ok("10000 pairs agree with brute force and execute back to the gloss".into())
}

/// A random program that is valid for a sentence of `m` words.
fn random_program(rng: &mut ChaCha8Rng, m: usize, vocab: &[Token]) -> Program {
    let mut rem = m;
    let mut statements = Vec::new();
    for _ in 0..rng.gen_range(0..12) {
        let r = rng.gen_range(1..=4);
        let choice = rng.gen_range(0..3);
        let s = if choice == 0 || rem == 0 {
            Statement::repeated(Action::Add(vocab.choose(rng).expect("non-empty").clone()), r)
        } else {
            let r = r.min(rem);
            rem -= r;
            Statement::repeated(if choice == 1 { Action::Del } else { Action::Copy }, r)
        };
        statements.push(s);
    }
    statements.push(Statement::skip());
    Program::new(statements).expect("repeats within the default bound")
}

fn schedule_coherence() -> Outcome {
    let vocab = w("p q r");
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..1000 {
        let m = rng.gen_range(0..10);
        let x: Vec<Token> = (0..m).map(|i| Token::new(format!("x{i}")).expect("plain word")).collect();
        let p = random_program(&mut rng, m, &vocab);
        let sched = mask_schedule(&p);
        let visible = sched.visible();
        check(visible.len() == p.len(), || format!("case {case}: {} entries for {} statements", visible.len(), p.len()))?;
        for t in 0..p.len() {
            let st = execute_prefix(&p.statements()[..t], &x).map_err(|e| format!("case {case}: {e}"))?;
            check(visible[t] == st.gloss_len(), || format!("case {case} t={t}: visible {} vs executed {}", visible[t], st.gloss_len()))?;
            if t > 0 {
                let prev = &p.statements()[t - 1];
                let inc = visible[t] as i64 - visible[t - 1] as i64;
                check(inc == 0 || inc == prev.repeat as i64, || format!("case {case} t={t}: increment {inc} after {prev}"))?;
                check(inc as usize == prev.output_advance(), || format!("case {case} t={t}: increment {inc} after {prev}"))?;
            }
        }
    }
    Ok("1000 programs: schedule equals executed prefix lengths, increments in {0, r}".into())
}

fn grad_config(vocab_size: usize) -> ModelConfig {
    ModelConfig {
        d_model: 20,
        num_heads: 2,
        gen_encoder_layers: 1,
        gen_decoder_layers: 1,
        exec_encoder_layers: 1,
        l_max: 16,
        r_max: 4,
        vocab_size,
        ff_dim: 40,
        dropout: 0.0,
        seed: 23,
    }
}

/// Random examples over `vocab` with their minimal programs.
fn random_examples(rng: &mut ChaCha8Rng, vocab: &Vocabulary, count: usize, max_len: usize, r_max: usize) -> Vec<Example> {
    let words: Vec<Token> = vocab.regular_tokens().map(|t| Token::new(t).expect("vocabulary word")).collect();
    (0..count)
        .map(|_| {
            let m = rng.gen_range(1..=max_len);
            let x: Vec<Token> = (0..m).map(|_| words.choose(rng).expect("non-empty").clone()).collect();
            let y = random_words(rng, &words, max_len);
            let p = minimal_program_with(&x, &y, &MinimalProgramOptions::with_max_repeat(r_max));
            Example { sentence: vocab.encode(&x), glosses: vocab.encode(&y), steps: steps_of(&p, vocab) }
        })
        .collect()
}

fn gradient_check() -> Outcome {
    let vocab = Vocabulary::from_tokens(["a", "b", "c", "d", "e", "f", "g", "h"]);
    let model = Glossifier::new(grad_config(vocab.len()));
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let batch = random_examples(&mut rng, &vocab, 3, 6, 4);
    let checks = check_gradients(&model, &batch, 1e-5);
    let worst = checks.iter().max_by(|a, b| a.relative_error.total_cmp(&b.relative_error)).expect("parameters exist");
    check(worst.relative_error <= 1e-4, || format!("{}: relative error {:.3e}", worst.name, worst.relative_error))?;
    Ok(format!("{} tensors, worst {} at {:.2e}", checks.len(), worst.name, worst.relative_error))
}

fn noise_injection() -> Outcome {
    let vocab = Vocabulary::from_tokens(["a", "b", "c", "d", "e", "f"]);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut case = 0;
    while case < 100 {
        let mut cfg = grad_config(vocab.len());
        cfg.d_model = 16;
        cfg.ff_dim = 32;
        cfg.seed = case as u64;
        let model = Glossifier::new(cfg);
        let ex = random_examples(&mut rng, &vocab, 1, 7, 4).remove(0);
        let (end, before) = execute_steps(&ex.steps, &ex.sentence).map_err(|e| e.to_string())?;
        let visible: Vec<usize> = before.iter().map(|s| s.glosses.len()).collect();
        if end.glosses.is_empty() {
            // no gloss rows to perturb
            continue;
        }
        let mut g = model.graph();
        let mut off = Dropout::off();
        let h = model.encode_sentence(&mut g, &ex.sentence, &mut off).map_err(|e| e.to_string())?;
        let e = model.decode_statements(&mut g, &ex.steps[..ex.steps.len() - 1], h, &mut off).map_err(|e| e.to_string())?;
        let gl = model.encode_gloss_history(&mut g, &end.glosses, &mut off).map_err(|e| e.to_string())?;
        let (e, gl) = (g.value(e).clone(), g.value(gl).clone());
        let kinds: Vec<Option<usize>> =
            ex.steps.iter().map(|s| (s.kind != ActionKind::Skip).then(|| s.kind.index())).collect();
        let base = model.logits_from_states(&e, &gl, &visible, kinds.clone()).map_err(|e| e.to_string())?;
        for t in 0..ex.steps.len() {
            let mut noisy = gl.clone();
            for r in visible[t]..noisy.rows() {
                for v in noisy.row_mut(r) {
                    *v += rng.gen_range(-10.0..10.0);
                }
            }
            let got = model.logits_from_states(&e, &noisy, &visible, kinds.clone()).map_err(|e| e.to_string())?;
            let same = got.0.row(t) == base.0.row(t) && got.1.row(t) == base.1.row(t) && got.2.row(t) == base.2.row(t);
            check(same, || format!("case {case}: logits at step {t} changed"))?;
        }
        case += 1;
    }
    Ok("100 cases: logits bit-identical under noise beyond visible[t]".into())
}

fn peer_critic() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for case in 0..1000 {
        let rewards: Vec<f64> = (0..5).map(|_| rng.gen::<f64>()).collect();
        let b = RewardBatch::new(rewards);
        let s: f64 = b.advantages.iter().sum();
        worst = worst.max(s.abs());
        check(s.abs() <= 1e-12, || format!("case {case}: advantages sum to {s:e}"))?;
    }
    let vocab = Vocabulary::from_tokens(["a", "b", "c", "d"]);
    let mut cfg = grad_config(vocab.len());
    cfg.d_model = 8;
    cfg.ff_dim = 16;
    let model = Glossifier::new(cfg);
    let ex = random_examples(&mut rng, &vocab, 1, 5, 4).remove(0);
    let samples = glossedit_model::train::sample_programs(&model, &ex.sentence, 5, 9).map_err(|e| e.to_string())?;
    let rollout = Rollout { samples, rewards: RewardBatch::new(vec![0.37; 5]) };
    let o = objective(&model, &ex, 0.0, Some(&rollout), &mut Dropout::off()).map_err(|e| e.to_string())?;
    let norm: f64 = o.grads.iter().map(|(_, m)| m.sum_sq()).sum::<f64>().sqrt();
    check(norm == 0.0, || format!("equal rewards left gradient norm {norm:e}"))?;
    Ok(format!("max |sum of advantages| {worst:.1e}; equal-reward gradient norm exactly 0"))
}

fn small_model(vocab_size: usize, dropout: f64, seed: u64) -> ModelConfig {
    ModelConfig {
        d_model: 32,
        num_heads: 4,
        gen_encoder_layers: 1,
        gen_decoder_layers: 1,
        exec_encoder_layers: 1,
        l_max: 32,
        r_max: 8,
        vocab_size,
        ff_dim: 64,
        dropout,
        seed,
    }
}

fn overfit() -> Outcome {
    let pairs = make_synthetic_corpus(&SyntheticConfig { size: 50, seed: 7, ..Default::default() });
    let vocab = Vocabulary::build(&pairs);
    let mut model = Glossifier::new(small_model(vocab.len(), 0.0, 1));
    let cfg = TrainConfig {
        total_epochs: 300,
        il_warmup_epochs: 300,
        learning_rate: 3e-3,
        batch_size: 10,
        patience: 20,
        seed: 1,
        ..Default::default()
    };
    let outcome = train(&mut model, &vocab, &pairs, &[], &cfg, None).map_err(|e| e.to_string())?;
    let (report, _) = evaluate(&model, &vocab, &pairs, &derive_options(&cfg, 8), Decoding::Greedy).map_err(|e| e.to_string())?;
    let per = report.per.unwrap_or(f64::NAN);
    let summary = format!("bleu4={:.4} per={per:.4} after {} epochs", report.bleu4(), outcome.epochs.len());
    check(report.bleu4() >= 0.95 && per <= 0.05, || summary.clone())?;
    Ok(summary)
}

fn rl_directionality() -> Outcome {
    let mut train_pairs = make_synthetic_corpus(&SyntheticConfig { size: 500, seed: 7, ..Default::default() });
    let val: Vec<ParallelPair> = train_pairs.split_off(400);
    let vocab = Vocabulary::build(&train_pairs);
    let mut higher = 0;
    let mut lines = Vec::new();
    let mut within = true;
    for seed in 1..=5 {
        let base = TrainConfig {
            total_epochs: 60,
            il_warmup_epochs: 25,
            learning_rate: 3e-3,
            batch_size: 10,
            patience: 0,
            lambda_il: 0.5,
            seed,
            ..Default::default()
        };
        let il_cfg = TrainConfig { il_warmup_epochs: base.total_epochs, ..base.clone() };
        let mut m = Glossifier::new(small_model(vocab.len(), 0.1, seed));
        let il = train(&mut m, &vocab, &train_pairs, &val, &il_cfg, None).map_err(|e| e.to_string())?;
        let mut m = Glossifier::new(small_model(vocab.len(), 0.1, seed));
        let rl = train(&mut m, &vocab, &train_pairs, &val, &base, None).map_err(|e| e.to_string())?;
        let (a, b) = (100.0 * il.best_report.bleu4(), 100.0 * rl.best_report.bleu4());
        within &= b >= a - 0.5;
        higher += usize::from(b > a);
        lines.push(format!("seed {seed}: IL {a:.2} RL {b:.2}"));
    }
    let summary = format!("{}; RL higher in {higher}/5", lines.join(", "));
    check(within && higher >= 3, || summary.clone())?;
    Ok(summary)
}

fn field(parts: &[&str], i: usize) -> Result<f64, String> {
    parts.get(i).ok_or("short fixture line")?.parse::<f64>().map_err(|e| e.to_string())
}

fn metric_cross_validation() -> Outcome {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/metrics.tsv");
    let text = fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut cands = Vec::new();
    let mut refs = Vec::new();
    let mut worst: f64 = 0.0;
    let mut compared = 0;
    let mut close = |what: &str, ours: f64, theirs: f64| {
        worst = worst.max((ours - theirs).abs());
        compared += 1;
        check((ours - theirs).abs() <= 1e-6, || format!("{what}: ours {ours:.9} vs reference {theirs:.9}"))
    };
    let mut per_cases = 0;
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.starts_with('#')) {
        let parts: Vec<&str> = line.split('\t').collect();
        let at = |what: &str| format!("line {}: {what}", n + 1);
        match parts[0] {
            "pair" => {
                let (c, r) = (w(parts[1]), w(parts[2]));
                close(&at("sentence bleu"), smoothed_sentence_bleu(&c, &r), field(&parts, 3)?)?;
                close(&at("rouge-l"), rouge_l(&c, &r).map_err(|e| e.to_string())?, field(&parts, 4)?)?;
                cands.push(c);
                refs.push(r);
            }
            "corpus" => {
                let lo = field(&parts, 1)? as usize;
                let hi = field(&parts, 2)? as usize;
                let ours = bleu(&cands[lo..hi], &refs[lo..hi], 4).map_err(|e| e.to_string())?;
                for (k, b) in ours.iter().enumerate() {
                    close(&at(&format!("corpus bleu-{}", k + 1)), *b, field(&parts, 3 + k)?)?;
                }
                let rouge = corpus_rouge_l(&cands[lo..hi], &refs[lo..hi]).map_err(|e| e.to_string())?;
                close(&at("corpus rouge-l"), rouge, field(&parts, 7)?)?;
            }
            "per" => {
                let p = parse_program(parts[1]).map_err(|e| at(&e.to_string()))?;
                let q = parse_program(parts[2]).map_err(|e| at(&e.to_string()))?;
                let expected = field(&parts, 3)? / field(&parts, 4)?;
                let ours = per(&p, &q).map_err(|e| e.to_string())?;
                check(ours == expected, || at(&format!("PER {ours} vs oracle {expected}")))?;
                per_cases += 1;
            }
            other => return Err(at(&format!("unknown record {other:?}"))),
        }
    }
    check(cands.len() == 50, || format!("fixture has {} pairs", cands.len()))?;
    Ok(format!("{compared} values within 1e-6 (max diff {worst:.1e}); {per_cases} PER cases exact"))
}

fn run_binary(args: &[&str], stdin: Option<&str>) -> Result<String, String> {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_glossedit"));
    cmd.args(args).stdout(Stdio::piped()).stderr(Stdio::piped());
    cmd.stdin(if stdin.is_some() { Stdio::piped() } else { Stdio::null() });
    let out = cmd.output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("glossedit {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn pipeline_closure() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let file = |name: &str| dir.path().join(name).display().to_string();
    let corpus = make_synthetic_corpus(&SyntheticConfig { seed: 11, ..Default::default() });
    write_corpus(Path::new(&file("corpus.txt")), &corpus).map_err(|e| e.to_string())?;
    let programs = run_binary(&["derive", "--corpus", &file("corpus.txt")], None)?;
    fs::write(file("programs.txt"), &programs).map_err(|e| e.to_string())?;
    let glosses = run_binary(&["execute", "--corpus", &file("corpus.txt"), "--programs", &file("programs.txt")], None)?;
    fs::write(file("glosses.txt"), &glosses).map_err(|e| e.to_string())?;
    let report = run_binary(
        &[
            "score",
            "--pred",
            &file("glosses.txt"),
            "--ref",
            &file("corpus.txt"),
            "--programs",
            &file("programs.txt"),
            &file("programs.txt"),
        ],
        None,
    )?;
    let value = |key: &str| {
        report
            .lines()
            .find_map(|l| l.strip_prefix(&format!("{key}=")))
            .and_then(|v| v.parse::<f64>().ok())
            .ok_or_else(|| format!("no {key} in report:\n{report}"))
    };
    let (p, b, r) = (value("per")?, value("bleu4")?, value("rougeL")?);
    check(p == 0.0 && b == 1.0 && r == 1.0, || format!("per={p} bleu4={b} rougeL={r}"))?;
    Ok(format!("{} pairs: per=0 bleu4=1 rougeL=1", corpus.len()))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("1 weather example golden", weather_example_golden),
        ("2 minimality oracle", minimality_oracle),
        ("3 mask schedule coherence", schedule_coherence),
        ("4 gradient check", gradient_check),
        ("5 auto-regression under noise", noise_injection),
        ("6 peer-critic identities", peer_critic),
        ("7 overfit sanity", overfit),
        ("8 RL directionality", rl_directionality),
        ("9 metric cross-validation", metric_cross_validation),
        ("10 pipeline closure", pipeline_closure),
    ];
    let only: Option<String> = std::env::args().nth(1).filter(|a| !a.starts_with('-'));
    let mut failed = 0;
    for (name, f) in criteria {
        if only.as_deref().is_some_and(|o| !name.contains(o)) {
            continue;
        }
        let start = Instant::now();
        let result = f();
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(msg) => println!("criterion {name}: PASS ({secs:.1}s) {msg}"),
            Err(msg) => {
                failed += 1;
                println!("criterion {name}: FAIL ({secs:.1}s) {msg}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
