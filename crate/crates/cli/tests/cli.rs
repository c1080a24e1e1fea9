use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

const BIN: &str = env!("CARGO_BIN_EXE_clarisim");

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/single_turn_sample.tsv")
}

fn clarisim(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("CLARISIM_CONFIG").output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = clarisim(args);
    assert!(
        out.status.success(),
        "clarisim {args:?} exited {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn stats_prints_the_four_counts() {
    let out = ok(&["dataset", "stats", "--input", s(&fixture())]);
    let counts: Vec<&str> = out.lines().skip(2).map(|l| l.split_whitespace().last().unwrap()).collect();
    assert_eq!(counts, ["4", "7", "8", "12"]);
}

#[test]
fn validate_exit_codes() {
    ok(&["dataset", "validate", "--input", s(&fixture()), "--strict"]);
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.tsv");
    let mut raw = std::fs::read_to_string(fixture()).unwrap();
    raw.push_str("9\tF1\tquery\t\tquestion?\tanswer\n");
    std::fs::write(&bad, raw).unwrap();
    let lenient = clarisim(&["dataset", "validate", "--input", s(&bad)]);
    assert_eq!(lenient.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&lenient.stdout).contains("1 rejected"));
    let strict = clarisim(&["dataset", "validate", "--input", s(&bad), "--strict"]);
    assert_eq!(strict.status.code(), Some(2));
}

#[test]
fn distractors_are_reproducible_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, seed: &str| {
        let p = dir.path().join(name);
        ok(&["dataset", "distractors", "--input", s(&fixture()), "--seed", seed, "--out", s(&p)]);
        std::fs::read_to_string(p).unwrap()
    };
    let a = run("a.jsonl", "7");
    assert_eq!(a, run("b.jsonl", "7"));
    assert_eq!(a.lines().count(), 12);
    for line in a.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_ne!(v["answer"], v["distractor"]);
        assert!(v["target_input"].as_str().unwrap().ends_with("[eos]"));
    }
}

#[test]
fn rule_simulation_answers_every_row() {
    let out = ok(&["simulate", "--dataset", s(&fixture())]);
    let records: Vec<serde_json::Value> = out.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 12);
    for r in &records {
        for field in ["topic_id", "facet_id", "turn", "question", "answer", "backend", "case", "flags"] {
            assert!(r.get(field).is_some(), "missing {field} in {r}");
        }
    }
}

#[test]
fn simulation_is_reproducible_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.json");
    ok(&["ngram", "train", "--dataset", s(&fixture()), "--out", s(&model)]);
    let run = || ok(&["simulate", "--backend", "ngram", "--model", s(&model), "--dataset", s(&fixture()), "--seed", "11"]);
    assert_eq!(run(), run());
}

#[test]
fn oracle_answers_score_one_against_the_references() {
    let dir = tempfile::tempdir().unwrap();
    let hyp = dir.path().join("oracle.jsonl");
    let report = dir.path().join("nlg.json");
    ok(&["simulate", "--backend", "oracle", "--dataset", s(&fixture()), "--out", s(&hyp)]);
    ok(&["eval", "nlg", "--hyp", s(&hyp), "--ref", s(&fixture()), "--out", s(&report)]);
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(report).unwrap()).unwrap();
    for m in ["bleu1", "bleu2", "bleu3", "rougeL"] {
        assert_eq!(v["means"][m].as_f64(), Some(1.0), "{m}");
    }
}

#[test]
fn nlg_on_identical_files_is_all_ones() {
    let out = ok(&["eval", "nlg", "--hyp", s(&fixture()), "--ref", s(&fixture())]);
    let means: Vec<&str> = out.lines().skip(2).take(4).map(|l| l.split_whitespace().last().unwrap()).collect();
    assert_eq!(means, ["1.0000"; 4]);
}

#[test]
fn misaligned_nlg_inputs_name_the_first_offending_id() {
    let dir = tempfile::tempdir().unwrap();
    let short = dir.path().join("short.tsv");
    let raw = std::fs::read_to_string(fixture()).unwrap();
    let kept: Vec<&str> = raw.lines().take(5).collect();
    std::fs::write(&short, kept.join("\n") + "\n").unwrap();
    let out = clarisim(&["eval", "nlg", "--hyp", s(&short), "--ref", s(&fixture())]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("misaligned") && err.contains("reference '2-F1/1/are you flying in june'"), "{err}");
}

#[test]
fn compare_counts_reach_significance() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t.json");
    ok(&["eval", "compare", "--counts", "39,87,104", "--out", s(&out)]);
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap();
    assert!(v["result"]["p_value"].as_f64().unwrap() < 0.05);
    assert_eq!(v["counts"]["ties"], 104);
}

#[test]
fn compare_reads_judgment_files() {
    let dir = tempfile::tempdir().unwrap();
    let j = dir.path().join("j.tsv");
    std::fs::write(&j, "item_id\tvote_1\tvote_2\n1\tA\tA\n2\tA\tB\n3\tB\tB\n4\tA\tA\n").unwrap();
    let out = ok(&["eval", "compare", "--judgments", s(&j)]);
    assert!(out.contains("wins       2") && out.contains("ties       1"), "{out}");
}

fn retrieval_inputs(dir: &Path) -> (PathBuf, PathBuf) {
    let coll = dir.join("docs.jsonl");
    let docs = [
        ("d1", "printable dinosaur coloring pages for kids"),
        ("d2", "dinosaur fossils found in museums"),
        ("d3", "cheap flights to paris in june"),
        ("d4", "symptoms of type 2 diabetes"),
        ("d5", "diabetes diet plan and meals"),
        ("d6", "growing tomato plants in pots"),
        ("d7", "tomato plant leaves turning yellow"),
    ];
    let mut f = std::fs::File::create(&coll).unwrap();
    for (id, text) in docs {
        writeln!(f, "{}", serde_json::json!({"id": id, "text": text})).unwrap();
    }
    let qrels = dir.join("qrels.txt");
    std::fs::write(&qrels, "1-F1 0 d1 1\n1-F2 0 d2 1\n2-F1 0 d3 1\n3-F1 0 d4 1\n3-F3 0 d5 1\n4-F1 0 d6 1\n4-F2 0 d7 1\n").unwrap();
    (coll, qrels)
}

#[test]
fn identical_answer_sets_differ_by_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let (coll, qrels) = retrieval_inputs(dir.path());
    let answers = dir.path().join("rule.jsonl");
    let report = dir.path().join("run.json");
    let run = dir.path().join("query.run");
    ok(&["simulate", "--dataset", s(&fixture()), "--out", s(&answers)]);
    let a = format!("a={}", s(&answers));
    let b = format!("b={}", s(&answers));
    ok(&[
        "eval", "retrieval", "--collection", s(&coll), "--qrels", s(&qrels), "--dataset", s(&fixture()),
        "--answers", &a, "--answers", &b, "--out", s(&report), "--run", s(&run),
    ]);
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(report).unwrap()).unwrap();
    let between: Vec<&serde_json::Value> =
        v["comparisons"].as_array().unwrap().iter().filter(|c| c["a"] == "query+question+b" && c["b"] == "query+question+a").collect();
    assert_eq!(between.len(), 5);
    for c in between {
        assert_eq!(c["mean_delta"].as_f64(), Some(0.0));
        assert_eq!(c["p_value"].as_f64(), Some(1.0));
    }
    let run = std::fs::read_to_string(run).unwrap();
    assert!(run.lines().any(|l| l.starts_with("2-F1 Q0 d3 1 ")), "{run}");
}

fn repl(input: &str, extra: &[&str]) -> String {
    let fx = fixture();
    let mut args = vec!["repl", "--dataset", s(&fx)];
    args.extend_from_slice(extra);
    let mut child = Command::new(BIN)
        .args(&args)
        .env_remove("CLARISIM_CONFIG")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn repl_complains_about_a_repeated_question() {
    let q = "are you looking for coloring pages?\n";
    let out = repl(&format!("{q}{q}"), &["--need-id", "1-F1"]);
    let answers: Vec<&str> = out.lines().collect();
    assert_eq!(answers.len(), 2);
    assert!(answers[1].contains("i already told you what"), "{out}");
}

#[test]
fn repl_reset_keeps_only_the_initial_query() {
    let out = repl("do you want fossils?\n:reset\n:history\n", &["--need-id", "1/F1"]);
    let tail: Vec<&str> = out.lines().skip(2).collect();
    assert_eq!(tail, ["user: dinosaur"]);
}

#[test]
fn repl_refuses_off_topic_probes() {
    let out = repl(":case what is the weather in tokyo?\nwhat is the weather in tokyo?\n", &["--need-text", "find dinosaur coloring pages", "--query", "dinosaur"]);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines, ["off_topic", "user> i am not interested in this topic."]);
}

#[test]
fn repl_rejects_unknown_need_ids() {
    let out = Command::new(BIN)
        .args(["repl", "--dataset", s(&fixture()), "--need-id", "99-F9"])
        .env_remove("CLARISIM_CONFIG")
        .stdin(Stdio::null())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown need id '99-F9'"));
}

#[test]
fn echo_backend_passes_conformance_over_stdio() {
    let cmd = format!("{BIN} backend echo");
    let out = ok(&["backend", "check", "--cmd", &cmd]);
    assert!(out.contains("determinism      pass"), "{out}");
}

#[test]
fn seed_ignoring_backend_fails_conformance() {
    let cmd = format!("{BIN} backend echo --ignore-seed");
    let out = clarisim(&["backend", "check", "--cmd", &cmd]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stdout).contains("determinism      FAIL"));
}

#[test]
fn external_backend_answers_through_the_protocol() {
    let cmd = format!("{BIN} backend echo");
    let out = ok(&["simulate", "--backend", "extern", "--cmd", &cmd, "--dataset", s(&fixture())]);
    assert_eq!(out.lines().count(), 12);
    assert!(out.lines().all(|l| l.contains("\"answer\":\"echo: ")));
}

#[test]
fn unlaunchable_backend_fails_the_simulation() {
    let out = clarisim(&["simulate", "--backend", "extern", "--cmd", "/nonexistent/backend", "--dataset", s(&fixture())]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn config_comes_from_the_environment_and_rejects_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.toml");
    std::fs::write(&good, format!("[paths]\ndataset = {:?}\n", s(&fixture()))).unwrap();
    let out = Command::new(BIN).args(["dataset", "stats"]).env("CLARISIM_CONFIG", &good).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[decoding]\ntop_q = 1\n").unwrap();
    let out = Command::new(BIN).args(["dataset", "stats"]).env("CLARISIM_CONFIG", &bad).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("top_q"));
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[decoding]\ntop_p = 0.5\n").unwrap();
    let out = clarisim(&["--config", s(&cfg), "simulate", "--dataset", s(&fixture()), "--top-p", "0"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("top_p"));
}
