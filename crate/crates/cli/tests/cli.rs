//! End-to-end runs of the binary: every subcommand, exit-code contract,
//! determinism of artifacts, and the judge path against a local stub
//! server (no live network).

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::net::TcpListener;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_speechworthy"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn gen_corpus_then_train_toy_works_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let corpus_dir = dir.path().join("corpus");
    let out = run(&[
        "gen-corpus",
        "--out-dir",
        corpus_dir.to_str().unwrap(),
        "--train-pairs",
        "60",
        "--heldout-pairs",
        "16",
        "--seed",
        "7",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(corpus_dir.join("train.jsonl").exists());
    assert!(corpus_dir.join("vocab.txt").exists());

    let train_args = |out_dir: &Path| {
        vec![
            "train-toy".to_string(),
            "--data".into(),
            corpus_dir.join("train.jsonl").to_str().unwrap().into(),
            "--heldout".into(),
            corpus_dir.join("heldout.jsonl").to_str().unwrap().into(),
            "--out-dir".into(),
            out_dir.to_str().unwrap().into(),
            "--epochs".into(),
            "1".into(),
            "--learning-rate".into(),
            "0.1".into(),
            "--warmup-epochs".into(),
            "3".into(),
            "--warmup-lr".into(),
            "0.03".into(),
            "--seed".into(),
            "7".into(),
        ]
    };
    let run1 = dir.path().join("run1");
    let out = bin().args(train_args(&run1)).output().unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(run1.join("checkpoint.json").exists());
    assert!(run1.join("run_summary.json").exists());

    // Same seed, same inputs: byte-identical report.
    let run2 = dir.path().join("run2");
    let out = bin().args(train_args(&run2)).output().unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let a = std::fs::read(run1.join("train_report.jsonl")).unwrap();
    let b = std::fs::read(run2.join("train_report.jsonl")).unwrap();
    assert_eq!(a, b);

    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run1.join("run_summary.json")).unwrap())
            .unwrap();
    assert!(summary["heldout_accuracy"].as_f64().is_some());
    assert_eq!(summary["meta"]["seed"], 7);
    assert!(summary["meta"]["config_hash"].is_string());
}

#[test]
fn train_toy_pure_sft_completes() {
    let dir = tempfile::tempdir().unwrap();
    let corpus_dir = dir.path().join("corpus");
    assert!(run(&[
        "gen-corpus",
        "--out-dir",
        corpus_dir.to_str().unwrap(),
        "--train-pairs",
        "20",
        "--heldout-pairs",
        "5",
        "--seed",
        "3",
    ])
    .status
    .success());
    let out_dir = dir.path().join("sft");
    let out = run(&[
        "train-toy",
        "--data",
        corpus_dir.join("train.jsonl").to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
        "--dpo-weight",
        "0",
        "--epochs",
        "1",
        "--learning-rate",
        "0.05",
        "--warmup-epochs",
        "1",
        "--warmup-lr",
        "0.03",
        "--seed",
        "3",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report = std::fs::read_to_string(out_dir.join("train_report.jsonl")).unwrap();
    // Pure SFT still records the (unused-in-update) dpo term per step.
    assert!(report.lines().any(|l| l.contains("\"dpo_loss\"")));
}

#[test]
fn train_toy_rejects_bad_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "train-toy",
        "--data",
        dir.path().join("missing.jsonl").to_str().unwrap(),
        "--out-dir",
        dir.path().join("x").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));

    // Invalid dpo weight is a validation error even with a fine dataset.
    let data = dir.path().join("d.jsonl");
    std::fs::write(&data, "{\"prompt\":\"a\",\"chosen\":\"b\",\"rejected\":\"c\"}\n").unwrap();
    let out = run(&[
        "train-toy",
        "--data",
        data.to_str().unwrap(),
        "--out-dir",
        dir.path().join("y").to_str().unwrap(),
        "--dpo-weight",
        "1.5",
    ]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
}

#[test]
fn w_sweep_margins_are_non_decreasing() {
    let dir = tempfile::tempdir().unwrap();
    let corpus_dir = dir.path().join("corpus");
    assert!(run(&[
        "gen-corpus",
        "--out-dir",
        corpus_dir.to_str().unwrap(),
        "--train-pairs",
        "120",
        "--heldout-pairs",
        "30",
        "--seed",
        "7",
    ])
    .status
    .success());

    let mut margins = Vec::new();
    for w in ["0.5", "0.9", "0.95", "0.99"] {
        let out_dir = dir.path().join(format!("w{w}"));
        let out = run(&[
            "train-toy",
            "--data",
            corpus_dir.join("train.jsonl").to_str().unwrap(),
            "--heldout",
            corpus_dir.join("heldout.jsonl").to_str().unwrap(),
            "--out-dir",
            out_dir.to_str().unwrap(),
            "--dpo-weight",
            w,
            "--beta",
            "2.0",
            "--learning-rate",
            "0.02",
            "--epochs",
            "1",
            "--warmup-epochs",
            "3",
            "--warmup-lr",
            "0.03",
            "--seed",
            "7",
        ]);
        assert!(out.status.success(), "{}", stderr(&out));
        let summary: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(out_dir.join("run_summary.json")).unwrap(),
        )
        .unwrap();
        margins.push(summary["heldout_mean_margin"].as_f64().unwrap());
    }
    assert!(
        margins.windows(2).all(|m| m[1] >= m[0]),
        "margins not non-decreasing: {margins:?}"
    );
}

#[test]
fn make_pairs_matches_fixture_and_reports_discards() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("rollouts.jsonl");
    std::fs::write(
        &input,
        concat!(
            "{\"instruction_id\":\"q1\",\"instruction\":\"i1\",\"rollouts\":[",
            "{\"text\":\"good\",\"score\":95},{\"text\":\"worse\",\"score\":60},{\"text\":\"mid\",\"score\":70}]}\n",
            "{\"instruction_id\":\"q2\",\"instruction\":\"i2\",\"rollouts\":[",
            "{\"text\":\"a\",\"score\":89},{\"text\":\"b\",\"score\":50}]}\n",
            "{\"instruction_id\":\"q3\",\"instruction\":\"i3\",\"rollouts\":[",
            "{\"text\":\"c\",\"score\":90},{\"text\":\"d\",\"score\":60}]}\n",
        ),
    )
    .unwrap();
    let output = dir.path().join("pairs.jsonl");
    let out = run(&[
        "make-pairs",
        "--input",
        input.to_str().unwrap(),
        "--output",
        output.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = std::fs::read_to_string(&output).unwrap();
    let rows: Vec<serde_json::Value> = text
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .filter(|v: &serde_json::Value| v.get("_meta").is_none())
        .collect();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0]["id"], "q1");
    assert_eq!(rows[0]["chosen"], "good");
    assert_eq!(rows[0]["rejected"], "worse");

    let summary: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("pairs.summary.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(summary["instructions_in"], 3);
    assert_eq!(summary["pairs_out"], 1);
    assert_eq!(summary["discards"]["max_below_threshold"], 1);
    assert_eq!(summary["discards"]["no_qualifying_rejected"], 1);
    let printed = stdout(&out);
    assert!(printed.contains("pairs out: 1"), "{printed}");
}

#[test]
fn make_pairs_all_low_scores_yields_zero_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("rollouts.jsonl");
    std::fs::write(
        &input,
        "{\"instruction_id\":\"q\",\"instruction\":\"i\",\"rollouts\":[{\"text\":\"x\",\"score\":50},{\"text\":\"y\",\"score\":40}]}\n",
    )
    .unwrap();
    let output = dir.path().join("pairs.jsonl");
    let out = run(&[
        "make-pairs",
        "--input",
        input.to_str().unwrap(),
        "--output",
        output.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let summary: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("pairs.summary.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(summary["pairs_out"], 0);
    assert_eq!(summary["discards"]["max_below_threshold"], 1);
}

#[test]
fn make_pairs_missing_scores_is_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("rollouts.jsonl");
    std::fs::write(
        &input,
        "{\"instruction_id\":\"q\",\"instruction\":\"i\",\"rollouts\":[{\"text\":\"x\"}]}\n",
    )
    .unwrap();
    let out = run(&[
        "make-pairs",
        "--input",
        input.to_str().unwrap(),
        "--output",
        dir.path().join("p.jsonl").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("missing a score"));
}

#[test]
fn eval_surface_clean_sentence_and_golden_means() {
    let dir = tempfile::tempdir().unwrap();
    let responses = dir.path().join("responses.jsonl");
    std::fs::write(
        &responses,
        concat!(
            "{\"id\":\"r1\",\"response\":\"こんにちは。\"}\n",
            "{\"id\":\"r2\",\"response\":\"- **太字** です\"}\n",
        ),
    )
    .unwrap();
    let parses = dir.path().join("parses");
    std::fs::create_dir_all(&parses).unwrap();
    std::fs::write(
        parses.join("parser_a.conllu"),
        "# newdoc id = r1\n1\tこんにちは\t_\t_\t_\t_\t0\t_\t_\t_\n\n# newdoc id = r2\n1\t太字\t_\t_\t_\t_\t2\t_\t_\t_\n2\tです\t_\t_\t_\t_\t0\t_\t_\t_\n",
    )
    .unwrap();
    let out_path = dir.path().join("report.json");
    let out = run(&[
        "eval-surface",
        "--responses",
        responses.to_str().unwrap(),
        "--parses",
        parses.to_str().unwrap(),
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("mean word count"), "{text}");

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
    // r1: こんにちは + 。 = 2 tokens, NV 0. r2: -,*,*,太字,*,*,です = 7 tokens
    // (whitespace skipped), NV 5/8.
    assert_eq!(report["per_response"][0]["word_count"], 2);
    assert_eq!(report["per_response"][0]["nv_percent"], 0.0);
    assert_eq!(report["per_response"][1]["word_count"], 7);
    assert_eq!(report["mean_word_count"], 4.5);
    assert_eq!(report["mean_dep_depth"], 1.5);
    let nv = report["per_response"][1]["nv_percent"].as_f64().unwrap();
    assert!((nv - 62.5).abs() < 1e-9);
}

#[test]
fn eval_surface_empty_corpus_is_error() {
    let dir = tempfile::tempdir().unwrap();
    let responses = dir.path().join("responses.jsonl");
    std::fs::write(&responses, "").unwrap();
    let out = run(&[
        "eval-surface",
        "--responses",
        responses.to_str().unwrap(),
        "--out",
        dir.path().join("r.json").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("no responses"));
}

/// Minimal chat-completions stub: replies with a fixed score per request.
fn spawn_stub_server(replies: BTreeMap<&'static str, u8>) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { break };
            let mut buf = vec![0u8; 65536];
            let mut read = 0;
            let body_start;
            loop {
                let n = stream.read(&mut buf[read..]).unwrap_or(0);
                if n == 0 {
                    return;
                }
                read += n;
                if let Some(pos) = find_header_end(&buf[..read]) {
                    body_start = pos;
                    break;
                }
            }
            let headers = String::from_utf8_lossy(&buf[..body_start]).into_owned();
            let content_length: usize = headers
                .lines()
                .find_map(|l| l.to_ascii_lowercase().strip_prefix("content-length:").map(|v| v.trim().parse().unwrap()))
                .unwrap_or(0);
            while read < body_start + content_length {
                let n = stream.read(&mut buf[read..]).unwrap_or(0);
                if n == 0 {
                    break;
                }
                read += n;
            }
            let body = String::from_utf8_lossy(&buf[body_start..read]).into_owned();
            let score = replies
                .iter()
                .find(|(needle, _)| body.contains(*needle))
                .map(|(_, s)| *s)
                .unwrap_or(1);
            let content = format!("reasoning... <score>{score}</score>");
            let reply_body = serde_json::json!({
                "choices": [{ "message": { "role": "assistant", "content": content } }]
            })
            .to_string();
            let response = format!(
                "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{}",
                reply_body.len(),
                reply_body
            );
            let _ = stream.write_all(response.as_bytes());
        }
    });
    format!("http://{addr}/v1/chat/completions")
}

fn find_header_end(buf: &[u8]) -> Option<usize> {
    buf.windows(4).position(|w| w == b"\r\n\r\n").map(|p| p + 4)
}

#[test]
fn eval_judge_against_local_stub() {
    let dir = tempfile::tempdir().unwrap();
    let benchmark = dir.path().join("bench.jsonl");
    std::fs::write(
        &benchmark,
        concat!(
            "{\"id\":\"a\",\"instruction\":\"内容を話してください\",\"reference_response\":\"はい、話します。\",\"criteria\":[{\"description\":\"箇条書きがある\",\"deduction\":2}]}\n",
            "{\"id\":\"b\",\"instruction\":\"天気は\",\"reference_response\":\"晴れです。\",\"criteria\":[]}\n",
        ),
    )
    .unwrap();
    let candidates = dir.path().join("cand.jsonl");
    std::fs::write(
        &candidates,
        "{\"id\":\"a\",\"response\":\"cand-alpha\"}\n{\"id\":\"b\",\"response\":\"cand-beta\"}\n",
    )
    .unwrap();
    let url = spawn_stub_server(BTreeMap::from([("cand-alpha", 3u8), ("cand-beta", 4u8)]));
    let out_path = dir.path().join("summary.jsonl");
    let out = run(&[
        "eval-judge",
        "--benchmark",
        benchmark.to_str().unwrap(),
        "--candidates",
        candidates.to_str().unwrap(),
        "--endpoint",
        &url,
        "--model",
        "stub-model",
        "--concurrency",
        "2",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("mean score 3.50"), "{}", stdout(&out));
    let text = std::fs::read_to_string(&out_path).unwrap();
    assert!(text.lines().last().unwrap().contains("\"mean_score_2dp\":3.5"));
}

#[test]
fn eval_judge_unreachable_endpoint_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let benchmark = dir.path().join("bench.jsonl");
    std::fs::write(
        &benchmark,
        "{\"id\":\"a\",\"instruction\":\"x\",\"reference_response\":\"y\",\"criteria\":[]}\n",
    )
    .unwrap();
    let candidates = dir.path().join("cand.jsonl");
    std::fs::write(&candidates, "{\"id\":\"a\",\"response\":\"z\"}\n").unwrap();
    let out = run(&[
        "eval-judge",
        "--benchmark",
        benchmark.to_str().unwrap(),
        "--candidates",
        candidates.to_str().unwrap(),
        "--endpoint",
        "http://127.0.0.1:9/v1/chat/completions",
        "--model",
        "stub",
        "--max-attempts",
        "1",
        "--out",
        dir.path().join("s.jsonl").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn score_rollouts_against_stub_then_make_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("rollouts.jsonl");
    std::fs::write(
        &input,
        "{\"instruction_id\":\"q\",\"instruction\":\"話してください\",\"rollouts\":[{\"text\":\"spoken-style\"},{\"text\":\"markdown-style\"}]}\n",
    )
    .unwrap();
    let url = spawn_stub_server(BTreeMap::from([("spoken-style", 95u8), ("markdown-style", 40u8)]));
    let scored = dir.path().join("scored.jsonl");
    let out = run(&[
        "score-rollouts",
        "--input",
        input.to_str().unwrap(),
        "--output",
        scored.to_str().unwrap(),
        "--endpoint",
        &url,
        "--model",
        "stub",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));

    let pairs = dir.path().join("pairs.jsonl");
    let out = run(&[
        "make-pairs",
        "--input",
        scored.to_str().unwrap(),
        "--output",
        pairs.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = std::fs::read_to_string(&pairs).unwrap();
    let row: serde_json::Value =
        serde_json::from_str(text.lines().nth(1).unwrap()).unwrap();
    assert_eq!(row["chosen"], "spoken-style");
    assert_eq!(row["rejected"], "markdown-style");
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("cfg.toml");
    std::fs::write(&config, "[filter]\nmin_max_score = 50.0\nmargin_factor = 1.2\n").unwrap();
    let input = dir.path().join("rollouts.jsonl");
    // max 60: passes the file threshold 50; rejected 40×1.2=48<60 qualifies.
    std::fs::write(
        &input,
        "{\"instruction_id\":\"q\",\"instruction\":\"i\",\"rollouts\":[{\"text\":\"x\",\"score\":60},{\"text\":\"y\",\"score\":40}]}\n",
    )
    .unwrap();
    let output = dir.path().join("pairs.jsonl");
    let out = run(&[
        "make-pairs",
        "--config",
        config.to_str().unwrap(),
        "--input",
        input.to_str().unwrap(),
        "--output",
        output.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let summary: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("pairs.summary.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(summary["pairs_out"], 1);

    // Flag overrides the file's threshold back to strict.
    let out = run(&[
        "make-pairs",
        "--config",
        config.to_str().unwrap(),
        "--input",
        input.to_str().unwrap(),
        "--output",
        output.to_str().unwrap(),
        "--min-max-score",
        "90",
    ]);
    assert!(out.status.success());
    let summary: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("pairs.summary.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(summary["pairs_out"], 0);
}
