use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use tempfile::TempDir;

const SMALL: &str = r#"
seed = 4

[paths]
corpus = "data/d.jsonl"
vocab = "data/vocab.tsv"
idf = "data/idf.tsv"
checkpoint = "runs/m.ckpt"
reports = "runs"

[data]
dev_fraction = 0.2
test_fraction = 0.2

[model]
embed_dim = 8
encoder_dim = 8
intention_dim = 6
decoder_dim = 8
attention_dim = 6
layers = 1

[train]
max_epochs = 1
batch_size = 5
decode_max_len = 8

[decode]
max_len = 8
beam_width = 3

[retrieval]
negatives = 4
weight_grid = [0.0, 0.5, 1.0]
"#;

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("awi.toml"), SMALL).unwrap();
        Self { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn cmd(&self, args: &[&str]) -> Command {
        let mut c = Command::new(env!("CARGO_BIN_EXE_awi"));
        c.current_dir(self.dir.path())
            .env("AWI_THREADS", "1")
            .args(["--config", "awi.toml"])
            .args(args);
        c
    }

    fn run(&self, args: &[&str]) -> Output {
        self.cmd(args).output().unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }

    /// Corpus, vocabulary, IDF and one epoch of training.
    fn prepared() -> Self {
        let w = Self::new();
        w.ok(&["synth-corpus", "--n", "40", "--max-turns", "3"]);
        w.ok(&["build-vocab"]);
        w.ok(&["build-idf"]);
        w.ok(&["train", "--objective", "xent"]);
        w
    }

    fn chat(&self, input: &str, extra: &[&str]) -> String {
        let mut args = vec!["chat", "--transcript", "runs/chat.jsonl"];
        args.extend_from_slice(extra);
        let mut child = self
            .cmd(&args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .unwrap();
        child
            .stdin
            .take()
            .unwrap()
            .write_all(input.as_bytes())
            .unwrap();
        let out = child.wait_with_output().unwrap();
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

#[test]
fn pipeline_writes_checkpoint_report_and_settings() {
    let w = Workspace::prepared();
    assert!(w.path("runs/m.ckpt").exists());
    let report = std::fs::read_to_string(w.path("runs/xent.jsonl")).unwrap();
    assert_eq!(report.lines().count(), 1);
    assert!(report.contains("\"dev_perplexity\""));
    let settings = std::fs::read_to_string(w.path("runs/xent.toml")).unwrap();
    assert!(settings.contains("embed_dim = 8"));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let a = Workspace::prepared();
    let b = Workspace::prepared();
    for f in [
        "data/d.jsonl",
        "data/vocab.tsv",
        "data/idf.tsv",
        "runs/m.ckpt",
        "runs/xent.jsonl",
    ] {
        assert_eq!(read(&a.path(f)), read(&b.path(f)), "{f}");
    }
    let args = ["generate", "--mode", "sample", "--out", "runs/s.jsonl"];
    a.ok(&args);
    b.ok(&args);
    assert_eq!(read(&a.path("runs/s.jsonl")), read(&b.path("runs/s.jsonl")));
}

#[test]
fn references_scored_as_hypotheses_give_bleu_one() {
    let w = Workspace::prepared();
    let out = w.ok(&["eval-gen", "--hyps", "data/d.jsonl", "--refs", "data/d.jsonl"]);
    assert!(out.contains("bleu4\t1.000000"), "{out}");
    assert!(out.contains("corpus_idf\t"));
}

#[test]
fn generated_responses_evaluate() {
    let w = Workspace::prepared();
    w.ok(&["generate", "--out", "runs/g.jsonl", "--nbest", "runs/g.nbest", "--mode", "beam"]);
    let out = w.ok(&["eval-gen", "--hyps", "runs/g.jsonl", "--perplexity"]);
    assert!(out.contains("perplexity\t"), "{out}");
    let nbest = std::fs::read_to_string(w.path("runs/g.nbest")).unwrap();
    assert!(nbest.lines().all(|l| l.split(" ||| ").count() == 5));
    // the n-best turns come from the test split, so tune against the whole corpus
    let out = w.ok(&[
        "tune-weight",
        "--task",
        "mert",
        "--nbest",
        "runs/g.nbest",
        "--refs",
        "data/d.jsonl",
    ]);
    assert!(out.starts_with("weight\t"), "{out}");
}

#[test]
fn chat_transcript_replays_through_generate() {
    let w = Workspace::prepared();
    let said = w.chat(
        "my outlook crashes\nit says error 0x80070005\n/reset\nhello\nthanks\n/quit\nignored\n",
        &[],
    );
    let replies: Vec<&str> = said.lines().filter(|l| *l != "(state reset)").collect();
    assert_eq!(replies.len(), 4);
    let transcript = std::fs::read_to_string(w.path("runs/chat.jsonl")).unwrap();
    assert_eq!(transcript.lines().count(), 2);
    w.ok(&[
        "generate",
        "--input",
        "runs/chat.jsonl",
        "--prior",
        "generated",
        "--out",
        "runs/replay.jsonl",
    ]);
    assert_eq!(
        transcript,
        std::fs::read_to_string(w.path("runs/replay.jsonl")).unwrap()
    );
}

#[test]
fn reset_gives_identical_responses() {
    let w = Workspace::prepared();
    let said = w.chat("printer jam\n/reset\nprinter jam\n", &["--rerank-idf", "0.1"]);
    let lines: Vec<&str> = said.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0], lines[2]);
}

#[test]
fn sampled_chat_replays_too() {
    let w = Workspace::prepared();
    w.chat("hi\nmy excel froze\n/reset\nhi again\n", &["--mode", "sample"]);
    w.ok(&[
        "generate",
        "--mode",
        "sample",
        "--input",
        "runs/chat.jsonl",
        "--prior",
        "generated",
        "--out",
        "runs/replay.jsonl",
    ]);
    assert_eq!(
        read(&w.path("runs/chat.jsonl")),
        read(&w.path("runs/replay.jsonl"))
    );
}

#[test]
fn retrieval_commands_run() {
    let w = Workspace::prepared();
    let out = w.ok(&["eval-ret", "--out", "runs/ret.json"]);
    for mode in ["tfidf", "awi", "interpolated", "random"] {
        assert!(out.lines().any(|l| l.starts_with(mode)), "{out}");
    }
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(w.path("runs/ret.json")).unwrap()).unwrap();
    assert!(json["recall"]["tfidf"]["1"].is_number());

    w.ok(&[
        "retrieve",
        "--mode",
        "interpolated",
        "--weight",
        "0.5",
        "--save-instances",
        "runs/inst.jsonl",
        "--out",
        "runs/ranked.jsonl",
    ]);
    let ranked = std::fs::read_to_string(w.path("runs/ranked.jsonl")).unwrap();
    let inst = std::fs::read_to_string(w.path("runs/inst.jsonl")).unwrap();
    assert_eq!(ranked.lines().count(), inst.lines().count());
    let again = w.ok(&["eval-ret", "--instances", "runs/inst.jsonl", "--no-model"]);
    assert!(again.contains("instances\t"));

    let tuned = w.ok(&["tune-weight", "--task", "retrieval"]);
    assert!(tuned.starts_with("weight\t"), "{tuned}");
}

#[test]
fn intention_vectors_one_line_per_turn() {
    let w = Workspace::prepared();
    let out = w.ok(&["dump-intention", "--input", "data/d.jsonl"]);
    let turns: usize = std::fs::read_to_string(w.path("data/d.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["turns"].as_array().unwrap().len())
        .sum();
    assert_eq!(out.lines().count(), turns);
    let first = out.lines().next().unwrap();
    assert_eq!(first.split('\t').nth(2).unwrap().split(' ').count(), 6);
}

#[test]
fn backward_model_reranks() {
    let w = Workspace::prepared();
    w.ok(&["train", "--swap", "--checkpoint", "runs/back.ckpt", "--report", "runs/back.jsonl"]);
    w.ok(&[
        "generate",
        "--backward",
        "runs/back.ckpt",
        "--backward-weight",
        "0.5",
        "--out",
        "runs/mmi.jsonl",
    ]);
    let both = w.run(&["generate", "--backward", "runs/back.ckpt", "--rerank-idf", "0.1"]);
    assert!(!both.status.success());
}

#[test]
fn reinforce_and_rank_fine_tune() {
    let w = Workspace::prepared();
    for args in [
        ["--objective", "idf-reinforce", "--baseline", "1.0"],
        ["--objective", "idf-reinforce", "--baseline", "mean-train-idf"],
        ["--objective", "rank", "--negatives", "2"],
    ] {
        let mut a = vec!["train", "--init", "runs/m.ckpt", "--checkpoint", "runs/ft.ckpt", "--lr", "1e-5"];
        a.extend_from_slice(&args);
        let out = w.ok(&a);
        assert!(out.contains("kept epoch 1"), "{out}");
    }
    let bad = w.run(&["train", "--baseline", "lots"]);
    assert!(!bad.status.success());
}

#[test]
fn failures_name_the_problem() {
    let w = Workspace::prepared();
    let out = w.run(&["train", "--no-such-flag"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--no-such-flag"));

    let out = w.run(&["generate", "--checkpoint", "runs/missing.ckpt"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.ckpt"));

    // same checkpoint, config with another width
    let other = SMALL.replace("decoder_dim = 8", "decoder_dim = 10");
    std::fs::write(w.path("other.toml"), other).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_awi"))
        .current_dir(w.path(""))
        .args(["--config", "other.toml", "generate"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(
        String::from_utf8_lossy(&out.stderr).contains("model.decoder_dim"),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    std::fs::write(w.path("typo.toml"), "[model]\nembed_size = 4\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_awi"))
        .current_dir(w.path(""))
        .args(["--config", "typo.toml", "build-vocab"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("embed_size"));
}
