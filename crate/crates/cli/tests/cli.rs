use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn glossedit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_glossedit")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).display().to_string()
}

const CORPUS: &str = "montag und dienstag wechselhaft\tmontag dienstag wechselhaft\n\
                      heute regen im norden\tnorden regen\n\
                      morgen sonne\tmorgen sonne warm\n";

fn corpus_dir() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("corpus.txt"), CORPUS).unwrap();
    dir
}

#[test]
fn execute_single_sentence() {
    let o = glossedit(&["execute", "--sentence", "a b c", "--program", "COPY; ADD(x); FOR(2) DEL; SKIP"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o), "a x\n");
}

#[test]
fn schedule_prints_visible_counts() {
    let o = glossedit(&["schedule", "--program", "ADD(x); COPY; DEL; FOR(2) COPY; SKIP"]);
    assert_eq!(stdout(&o), "0 1 2 2 4\n");
}

#[test]
fn derive_writes_programs_and_reports_on_stderr() {
    let dir = corpus_dir();
    let o = glossedit(&["derive", "--corpus", &path(&dir, "corpus.txt")]);
    assert!(o.status.success());
    let lines: Vec<String> = stdout(&o).lines().map(String::from).collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[2], "FOR(2) COPY; ADD(warm); SKIP");
    assert!(stderr(&o).contains("pairs=3"));

    let o = glossedit(&["derive", "--corpus", &path(&dir, "corpus.txt"), "--out", &path(&dir, "p.txt")]);
    assert!(o.status.success());
    assert!(stdout(&o).is_empty());
    assert_eq!(fs::read_to_string(dir.path().join("p.txt")).unwrap().lines().count(), 3);
}

#[test]
fn derive_respects_max_repeat() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.txt"), "a b c d\t\n").unwrap();
    let o = glossedit(&["derive", "--corpus", &path(&dir, "c.txt"), "--max-repeat", "3"]);
    assert_eq!(stdout(&o), "FOR(3) DEL; DEL; SKIP\n");
}

#[test]
fn score_reads_gloss_column_of_corpus_lines() {
    let dir = corpus_dir();
    fs::write(dir.path().join("pred.txt"), "montag dienstag wechselhaft\nnorden regen\nmorgen sonne warm\n").unwrap();
    let o = glossedit(&["score", "--pred", &path(&dir, "pred.txt"), "--ref", &path(&dir, "corpus.txt"), "--tsv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let mut lines = out.lines();
    assert!(lines.next().unwrap().starts_with("per\t"));
    let row: Vec<&str> = lines.next().unwrap().split('\t').collect();
    assert_eq!(row[0], "NA");
    assert!(row[1..6].iter().all(|v| v.parse::<f64>().unwrap() == 1.0), "{row:?}");
    assert_eq!(row[6], "3");
}

#[test]
fn malformed_program_is_a_data_error_naming_the_line() {
    let dir = corpus_dir();
    fs::write(dir.path().join("p.txt"), "SKIP\nCOPY; BOGUS; SKIP\nSKIP\n").unwrap();
    let o = glossedit(&["execute", "--corpus", &path(&dir, "corpus.txt"), "--programs", &path(&dir, "p.txt")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("p.txt:2:"), "{}", stderr(&o));
}

#[test]
fn unexecutable_program_is_a_data_error() {
    let o = glossedit(&["execute", "--sentence", "a", "--program", "FOR(2) DEL; SKIP"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_file_is_a_data_error() {
    let o = glossedit(&["derive", "--corpus", "/nonexistent/corpus.txt"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/nonexistent/corpus.txt"));
}

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    assert_eq!(glossedit(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(glossedit(&["execute", "--sentence", "a"]).status.code(), Some(1));
    assert_eq!(glossedit(&["derive", "--corpus", "x", "--max-repeat", "0"]).status.code(), Some(1));
    let o = glossedit(&["make-synthetic", "--out", "/tmp/never", "--deletion-rate", "1.5"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--deletion-rate"));
    let help = glossedit(&["--help"]);
    assert_eq!(help.status.code(), Some(0));
    assert!(stdout(&help).contains("transcribe"));
}

#[test]
fn make_synthetic_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, seed: &str| {
        let o = glossedit(&["make-synthetic", "--out", &path(&dir, name), "--size", "30", "--seed", seed]);
        assert!(o.status.success(), "{}", stderr(&o));
        fs::read_to_string(dir.path().join(name)).unwrap()
    };
    let a = run("a.txt", "4");
    assert_eq!(a, run("b.txt", "4"));
    assert_ne!(a, run("c.txt", "5"));
    assert_eq!(a.lines().count(), 30);
    assert!(a.lines().all(|l| l.contains('\t')));
}

fn tiny_config(dir: &Path) -> String {
    let p = dir.join("config.cfg");
    fs::write(
        &p,
        "# tiny model for tests\nd_model=16\nnum_heads=2\ngen_encoder_layers=1\nexec_encoder_layers=1\n\
         ff_dim=32\nl_max=16\nr_max=4\ntotal_epochs=3\nil_warmup_epochs=2\nk=2\nlearning_rate=0.003\nbatch_size=2\n",
    )
    .unwrap();
    p.display().to_string()
}

#[test]
fn train_transcribe_eval_round_trip() {
    let dir = corpus_dir();
    let cfg = tiny_config(dir.path());
    let out = path(&dir, "run");
    let corpus = path(&dir, "corpus.txt");
    let o = glossedit(&["train", "--corpus", &corpus, "--val", &corpus, "--config", &cfg, "--out", &out, "--seed", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let log = fs::read_to_string(dir.path().join("run/metrics.tsv")).unwrap();
    assert!(log.starts_with("epoch\tsplit\tloss_il\tloss_rl"));
    assert_eq!(log.lines().count(), 4);
    assert!(dir.path().join("run/model.ckpt").exists());

    fs::write(dir.path().join("in.txt"), "montag und dienstag wechselhaft\nheute regen\n").unwrap();
    let t = glossedit(&["transcribe", "--checkpoint", &out, "--input", &path(&dir, "in.txt")]);
    assert!(t.status.success(), "{}", stderr(&t));
    let lines: Vec<String> = stdout(&t).lines().map(String::from).collect();
    assert_eq!(lines.len(), 2);
    for l in &lines {
        let (program, _) = l.split_once('\t').expect("program TAB glosses");
        assert!(program.ends_with("SKIP"), "{program}");
    }
    let beam = glossedit(&["transcribe", "--checkpoint", &out, "--input", &path(&dir, "in.txt"), "--beam", "1"]);
    assert_eq!(stdout(&beam), stdout(&t));

    let e = glossedit(&["eval", "--checkpoint", &format!("{out}/model.ckpt"), "--corpus", &corpus]);
    assert!(e.status.success(), "{}", stderr(&e));
    let report = stdout(&e);
    assert!(report.contains("bleu4=") && report.contains("per=") && report.contains("pairs=3"), "{report}");

    // same seed, same log
    let again = path(&dir, "run2");
    let o = glossedit(&["train", "--corpus", &corpus, "--val", &corpus, "--config", &cfg, "--out", &again, "--seed", "3"]);
    assert!(o.status.success());
    assert_eq!(fs::read_to_string(dir.path().join("run2/metrics.tsv")).unwrap(), log);
}

#[test]
fn bad_config_names_file_and_line() {
    let dir = corpus_dir();
    fs::write(dir.path().join("bad.cfg"), "d_model=16\nwarp_factor=9\n").unwrap();
    let o = glossedit(&[
        "train",
        "--corpus",
        &path(&dir, "corpus.txt"),
        "--config",
        &path(&dir, "bad.cfg"),
        "--out",
        &path(&dir, "run"),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bad.cfg:2"), "{}", stderr(&o));
}

#[test]
fn corrupt_checkpoint_is_a_data_error() {
    let dir = corpus_dir();
    fs::write(dir.path().join("model.ckpt"), b"not a model").unwrap();
    let o = glossedit(&["eval", "--checkpoint", &path(&dir, "model.ckpt"), "--corpus", &path(&dir, "corpus.txt")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("model.ckpt"));
}
