//! Black-box tests of the `topsum` binary: flag handling, exit codes,
//! file artifacts, and frozen output formats.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_topsum"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary should launch")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn assert_code(out: &Output, want: i32) {
    assert_eq!(
        out.status.code(),
        Some(want),
        "stdout:\n{}\nstderr:\n{}",
        stdout(out),
        stderr(out)
    );
}

const CORPUS: &str = "\
the storm battered the northern coast with heavy rain\tstorm hits coast
markets rallied after the central bank cut rates\tmarkets rally on rate cut
the storm flooded several coastal towns overnight\tstorm floods towns
investors cheered the surprise rate cut decision\tinvestors cheer rate cut
heavy rain from the storm closed mountain roads\tstorm closes roads
the bank signaled further rate cuts this year\tbank signals more cuts
";

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new() -> Workspace {
        let ws = Workspace {
            dir: TempDir::new().unwrap(),
        };
        std::fs::write(ws.path("corpus.tsv"), CORPUS).unwrap();
        ws
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn arg(&self, name: &str) -> String {
        self.path(name).display().to_string()
    }

    /// Runs lda-train with tiny settings; panics unless it succeeds.
    fn lda(&self) -> Output {
        let out = run(&[
            "lda-train",
            "--corpus",
            &self.arg("corpus.tsv"),
            "--topic-model",
            &self.arg("tm.txt"),
            "--topic-vocab",
            &self.arg("tv.txt"),
            "--num-topics",
            "2",
            "--iterations",
            "40",
            "--top-n",
            "6",
            "--seed",
            "5",
        ]);
        assert_code(&out, 0);
        out
    }

    /// Trains two quick epochs into `ckpt` and `vocab`; returns stdout.
    fn train(&self, ckpt: &str, extra: &[&str]) -> String {
        let mut args = vec![
            "train".to_string(),
            "--corpus".into(),
            self.arg("corpus.tsv"),
            "--topic-model".into(),
            self.arg("tm.txt"),
            "--topic-vocab".into(),
            self.arg("tv.txt"),
            "--vocab".into(),
            self.arg("vocab.txt"),
            "--checkpoint".into(),
            self.arg(ckpt),
            "--dim".into(),
            "12".into(),
            "--word-layers".into(),
            "1".into(),
            "--topic-layers".into(),
            "1".into(),
            "--max-source-len".into(),
            "16".into(),
            "--max-target-len".into(),
            "8".into(),
            "--max-epochs".into(),
            "2".into(),
            "--batch-size".into(),
            "2".into(),
            "--seed".into(),
            "3".into(),
        ];
        args.extend(extra.iter().map(|s| s.to_string()));
        let out = bin().args(&args).output().unwrap();
        assert_code(&out, 0);
        stdout(&out)
    }
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap()
}

// ── global behavior ──

#[test]
fn help_lists_every_subcommand() {
    let out = run(&["--help"]);
    assert_code(&out, 0);
    let text = stdout(&out);
    for name in ["lda-train", "train", "rl-finetune", "summarize", "evaluate"] {
        assert!(text.contains(name), "help is missing {name}:\n{text}");
    }
}

#[test]
fn unknown_flags_exit_with_validation_code() {
    let out = run(&["train", "--no-such-flag"]);
    assert_code(&out, 1);
}

// ── lda-train ──

#[test]
fn lda_train_emits_ranked_top_words_and_reruns_byte_identically() {
    let ws = Workspace::new();
    let first = ws.lda();
    for line in stdout(&first).lines() {
        let cols: Vec<&str> = line.split('\t').collect();
        assert_eq!(cols.len(), 3, "want topic<TAB>rank<TAB>word, got {line:?}");
        cols[0].parse::<usize>().expect("topic index");
        cols[1].parse::<usize>().expect("rank");
        assert!(!cols[2].is_empty());
    }
    let tm = read(&ws.path("tm.txt"));
    let tv = read(&ws.path("tv.txt"));
    let second = ws.lda();
    assert_eq!(stdout(&first), stdout(&second));
    assert_eq!(tm, read(&ws.path("tm.txt")), "topic model must be reproducible");
    assert_eq!(tv, read(&ws.path("tv.txt")), "topic vocabulary must be reproducible");
}

#[test]
fn missing_corpus_is_a_validation_error_naming_the_flag() {
    let ws = Workspace::new();
    let out = run(&[
        "lda-train",
        "--corpus",
        &ws.arg("nope.tsv"),
        "--topic-model",
        &ws.arg("tm.txt"),
        "--topic-vocab",
        &ws.arg("tv.txt"),
    ]);
    assert_code(&out, 1);
    assert!(stderr(&out).contains("--corpus"), "{}", stderr(&out));
}

// ── train ──

#[test]
fn missing_topic_vocabulary_names_the_flag_before_any_training() {
    let ws = Workspace::new();
    ws.lda();
    let out = run(&[
        "train",
        "--corpus",
        &ws.arg("corpus.tsv"),
        "--topic-model",
        &ws.arg("tm.txt"),
        "--topic-vocab",
        &ws.arg("missing.txt"),
        "--vocab",
        &ws.arg("vocab.txt"),
        "--checkpoint",
        &ws.arg("m.ckpt"),
    ]);
    assert_code(&out, 1);
    assert!(stderr(&out).contains("--topic-vocab"), "{}", stderr(&out));
    assert!(!ws.path("m.ckpt").exists(), "no checkpoint before validation passes");
}

#[test]
fn training_logs_tsv_and_writes_artifacts() {
    let ws = Workspace::new();
    ws.lda();
    let log = ws.train("m.ckpt", &[]);
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(
        lines[0],
        "epoch\tsplit\tlr\tml_loss\trl_loss\tmixed_loss\tval_rouge_l"
    );
    assert_eq!(lines.len(), 4, "header, two epochs, stop:\n{log}");
    assert!(lines[1].starts_with("1\ttrain\t"));
    assert!(lines[2].starts_with("2\ttrain\t"));
    assert_eq!(lines[3], "stop\tmax-epochs");
    assert!(ws.path("m.ckpt").exists());
    assert!(ws.path("vocab.txt").exists());
}

#[test]
fn same_seed_reproduces_the_checkpoint_byte_for_byte() {
    let ws = Workspace::new();
    ws.lda();
    ws.train("a.ckpt", &[]);
    ws.train("b.ckpt", &[]);
    assert_eq!(read(&ws.path("a.ckpt")), read(&ws.path("b.ckpt")));
}

#[test]
fn config_file_feeds_knobs_and_flags_override_it() {
    let ws = Workspace::new();
    ws.lda();
    std::fs::write(ws.path("run.conf"), "lr-ml = 0.125\n").unwrap();
    let conf = ws.arg("run.conf");
    let log = ws.train("c.ckpt", &["--config", &conf]);
    let lr_of = |log: &str| -> String {
        log.lines().nth(1).unwrap().split('\t').nth(2).unwrap().to_string()
    };
    assert_eq!(lr_of(&log), "0.125", "file value should apply:\n{log}");
    let log = ws.train("d.ckpt", &["--config", &conf, "--lr-ml", "0.0625"]);
    assert_eq!(lr_of(&log), "0.0625", "flag should beat the file:\n{log}");
}

#[test]
fn unknown_config_file_key_is_rejected() {
    let ws = Workspace::new();
    ws.lda();
    std::fs::write(ws.path("run.conf"), "learning-rate=1\n").unwrap();
    let out = run(&[
        "train",
        "--config",
        &ws.arg("run.conf"),
        "--corpus",
        &ws.arg("corpus.tsv"),
        "--topic-model",
        &ws.arg("tm.txt"),
        "--topic-vocab",
        &ws.arg("tv.txt"),
        "--vocab",
        &ws.arg("vocab.txt"),
        "--checkpoint",
        &ws.arg("m.ckpt"),
    ]);
    assert_code(&out, 1);
    assert!(stderr(&out).contains("unknown key"), "{}", stderr(&out));
}

// ── rl-finetune ──

#[test]
fn finetune_resumes_a_checkpoint_and_logs_reinforcement_columns() {
    let ws = Workspace::new();
    ws.lda();
    ws.train("m.ckpt", &[]);
    let out = run(&[
        "rl-finetune",
        "--corpus",
        &ws.arg("corpus.tsv"),
        "--checkpoint",
        &ws.arg("m.ckpt"),
        "--out",
        &ws.arg("rl.ckpt"),
        "--vocab",
        &ws.arg("vocab.txt"),
        "--topic-vocab",
        &ws.arg("tv.txt"),
        "--max-epochs",
        "1",
        "--batch-size",
        "2",
        "--seed",
        "9",
    ]);
    assert_code(&out, 0);
    let log = stdout(&out);
    let epoch = log.lines().nth(1).unwrap();
    let cols: Vec<&str> = epoch.split('\t').collect();
    assert_ne!(cols[4], "-", "rl_loss must be populated: {epoch}");
    assert_ne!(cols[5], "-", "mixed_loss must be populated: {epoch}");
    assert!(ws.path("rl.ckpt").exists());
}

// ── summarize ──

#[test]
fn summarize_preserves_line_geometry_and_handles_empty_input() {
    let ws = Workspace::new();
    ws.lda();
    ws.train("m.ckpt", &[]);
    std::fs::write(
        ws.path("in.txt"),
        "the storm hit the coast\n\nthe bank cut rates\n",
    )
    .unwrap();
    let out = run(&[
        "summarize",
        "--checkpoint",
        &ws.arg("m.ckpt"),
        "--vocab",
        &ws.arg("vocab.txt"),
        "--topic-vocab",
        &ws.arg("tv.txt"),
        "--input",
        &ws.arg("in.txt"),
        "--decoder",
        "greedy",
    ]);
    assert_code(&out, 0);
    let text = stdout(&out);
    let lines: Vec<&str> = text.split('\n').collect();
    assert_eq!(lines.len(), 4, "three summaries plus trailing newline: {text:?}");
    assert_eq!(lines[1], "", "blank input lines stay blank");
    assert_eq!(lines[3], "");

    std::fs::write(ws.path("none.txt"), "").unwrap();
    let out = run(&[
        "summarize",
        "--checkpoint",
        &ws.arg("m.ckpt"),
        "--vocab",
        &ws.arg("vocab.txt"),
        "--topic-vocab",
        &ws.arg("tv.txt"),
        "--input",
        &ws.arg("none.txt"),
    ]);
    assert_code(&out, 0);
    assert!(stdout(&out).is_empty());
}

#[test]
fn greedy_and_unit_beam_print_the_same_summaries() {
    let ws = Workspace::new();
    ws.lda();
    ws.train("m.ckpt", &[]);
    std::fs::write(
        ws.path("in.txt"),
        "the storm flooded the coast\nmarkets rallied after the cut\n",
    )
    .unwrap();
    let decode = |decoder_args: &[&str]| {
        let mut args = ["summarize",
            "--checkpoint",
            &ws.arg("m.ckpt"),
            "--vocab",
            &ws.arg("vocab.txt"),
            "--topic-vocab",
            &ws.arg("tv.txt"),
            "--input",
            &ws.arg("in.txt")]
        .iter()
        .map(|s| s.to_string())
        .collect::<Vec<_>>();
        args.extend(decoder_args.iter().map(|s| s.to_string()));
        let out = bin().args(&args).output().unwrap();
        assert_code(&out, 0);
        stdout(&out)
    };
    let greedy = decode(&["--decoder", "greedy"]);
    let beam1 = decode(&["--decoder", "beam", "--beam-size", "1"]);
    assert_eq!(greedy, beam1);
}

#[test]
fn tampered_vocabulary_fails_the_digest_check() {
    let ws = Workspace::new();
    ws.lda();
    ws.train("m.ckpt", &[]);
    let mut vocab = std::fs::read_to_string(ws.path("vocab.txt")).unwrap();
    vocab.push_str("sneaky\t1\n");
    std::fs::write(ws.path("tampered.txt"), vocab).unwrap();
    std::fs::write(ws.path("in.txt"), "the storm\n").unwrap();
    let out = run(&[
        "summarize",
        "--checkpoint",
        &ws.arg("m.ckpt"),
        "--vocab",
        &ws.arg("tampered.txt"),
        "--topic-vocab",
        &ws.arg("tv.txt"),
        "--input",
        &ws.arg("in.txt"),
    ]);
    assert_code(&out, 1);
    assert!(stderr(&out).contains("digest"), "{}", stderr(&out));
}

// ── evaluate ──

fn eval_table(ws: &Workspace, extra: &[&str]) -> String {
    let mut args = vec![
        "evaluate".to_string(),
        "--hyp".into(),
        ws.arg("hyp.txt"),
        "--ref".into(),
        ws.arg("ref.txt"),
    ];
    args.extend(extra.iter().map(|s| s.to_string()));
    let out = bin().args(&args).output().unwrap();
    assert_code(&out, 0);
    stdout(&out)
}

#[test]
fn worked_example_table_is_frozen() {
    let ws = Workspace::new();
    std::fs::write(ws.path("hyp.txt"), "a b d\n").unwrap();
    std::fs::write(ws.path("ref.txt"), "a b c\n").unwrap();
    assert_eq!(
        eval_table(&ws, &[]),
        "metric\tP\tR\tF\n\
         RG-1\t0.6667\t0.6667\t0.6667\n\
         RG-2\t0.5000\t0.5000\t0.5000\n\
         RG-L\t0.6667\t0.6667\t0.6667\n"
    );
}

#[test]
fn identical_files_score_perfectly_in_both_modes() {
    let ws = Workspace::new();
    std::fs::write(ws.path("hyp.txt"), "one two three\nfour five\n").unwrap();
    std::fs::write(ws.path("ref.txt"), "one two three\nfour five\n").unwrap();
    let f1 = eval_table(&ws, &["--mode", "f1"]);
    let recall = eval_table(&ws, &["--mode", "recall"]);
    assert_eq!(f1, recall, "single reference: modes must agree");
    for row in f1.lines().skip(1) {
        let cols: Vec<&str> = row.split('\t').collect();
        assert_eq!(&cols[1..], &["1.0000", "1.0000", "1.0000"], "{row}");
    }
}

#[test]
fn character_level_ignores_spacing_and_handles_unicode() {
    let ws = Workspace::new();
    std::fs::write(ws.path("hyp.txt"), "héll o wörld\n").unwrap();
    std::fs::write(ws.path("ref.txt"), "héllo wö rld\n").unwrap();
    let table = eval_table(&ws, &["--level", "char-id"]);
    for row in table.lines().skip(1) {
        let cols: Vec<&str> = row.split('\t').collect();
        assert_eq!(
            &cols[1..],
            &["1.0000", "1.0000", "1.0000"],
            "same characters, different spacing: {row}"
        );
    }
}

#[test]
fn line_count_mismatch_reports_both_counts() {
    let ws = Workspace::new();
    std::fs::write(ws.path("hyp.txt"), "a\nb\n").unwrap();
    std::fs::write(ws.path("ref.txt"), "a\n").unwrap();
    let out = run(&[
        "evaluate",
        "--hyp",
        &ws.arg("hyp.txt"),
        "--ref",
        &ws.arg("ref.txt"),
    ]);
    assert_code(&out, 1);
    let err = stderr(&out);
    assert!(err.contains('2') && err.contains('1'), "{err}");
}

#[test]
fn multiple_references_take_the_best_per_mode() {
    let ws = Workspace::new();
    std::fs::write(ws.path("hyp.txt"), "a b c\n").unwrap();
    std::fs::write(ws.path("ref.txt"), "x y z\n").unwrap();
    std::fs::write(ws.path("ref2.txt"), "a b c\n").unwrap();
    let out = run(&[
        "evaluate",
        "--hyp",
        &ws.arg("hyp.txt"),
        "--ref",
        &ws.arg("ref.txt"),
        "--ref",
        &ws.arg("ref2.txt"),
    ]);
    assert_code(&out, 0);
    let table = stdout(&out);
    for row in table.lines().skip(1) {
        let cols: Vec<&str> = row.split('\t').collect();
        assert_eq!(&cols[1..], &["1.0000", "1.0000", "1.0000"], "{row}");
    }
}
