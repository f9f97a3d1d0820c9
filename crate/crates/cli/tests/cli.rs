//! End-to-end command-line behavior: exit codes, guard rails, and a
//! full pipeline run over real files.

mod common;

use std::fs;
use std::path::Path;
use std::process::Output;

use infecta_core::corpus::{Corpus, Label, SftSample};
use infecta_core::trace::{save_traces, SurprisalTrace};
use serde_json::Value;

fn run(dir: &Path, args: &[&str]) -> Output {
    common::infecta().current_dir(dir).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn read_json(dir: &Path, name: &str) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join(name)).unwrap()).unwrap()
}

fn write_corpus(dir: &Path, name: &str, n: usize, seed: u64) {
    common::fixture_corpus(n, seed).save(&dir.join(name)).unwrap();
}

fn write_payloads(dir: &Path) {
    let payloads = vec![common::fixture_payload()];
    fs::write(dir.join("payloads.json"), serde_json::to_string_pretty(&payloads).unwrap())
        .unwrap();
}

#[test]
fn usage_mistakes_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_corpus(d, "c.jsonl", 30, 1);

    // No index source at all.
    let out = run(d, &["hps", "--out", "h.json"]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(stderr(&out).contains("--corpus"), "{}", stderr(&out));

    // Missing required flag (clap).
    let out = run(d, &["inject", "--corpus", "c.jsonl", "--rate", "0.1", "--out", "p.jsonl"]);
    assert_eq!(code(&out), 2);

    // --traces without --labels.
    let out = run(d, &["detect", "--traces", "t.jsonl", "--out", "d.json"]);
    assert_eq!(code(&out), 2);

    // Conflicting detector inputs.
    let out = run(
        d,
        &[
            "detect",
            "--traces",
            "t.jsonl",
            "--labels",
            "c.jsonl",
            "--score-corpus",
            "c.jsonl",
            "--out",
            "d.json",
        ],
    );
    assert_eq!(code(&out), 2);

    // Fixed threshold and calibration target together.
    let out = run(
        d,
        &[
            "detect",
            "--score-corpus",
            "c.jsonl",
            "--threshold",
            "2.0",
            "--target-fpr",
            "0.1",
            "--out",
            "d.json",
        ],
    );
    assert_eq!(code(&out), 2);

    // Poisoned simulation without payloads.
    let out = run(
        d,
        &[
            "simulate",
            "--corpus",
            "c.jsonl",
            "--query-pool",
            "c.jsonl",
            "--queries",
            "5",
            "--rate",
            "0.2",
            "--out",
            "l.json",
        ],
    );
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("--payloads"), "{}", stderr(&out));

    // Unknown subcommand.
    let out = run(d, &["frobnicate"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn domain_failures_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_corpus(d, "c.jsonl", 100, 2);
    write_payloads(d);

    // Input file does not exist.
    let out = run(d, &["index", "--corpus", "missing.jsonl", "--out", "i.json"]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));

    // Anchor absent from the index.
    let out = run(
        d,
        &["hps", "--corpus", "c.jsonl", "--anchor", "zz yy xx", "--out", "h.json"],
    );
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("not in the index"), "{}", stderr(&out));

    // Rate rounds down to zero victims.
    let out = run(
        d,
        &[
            "inject",
            "--corpus",
            "c.jsonl",
            "--payloads",
            "payloads.json",
            "--rate",
            "0.005",
            "--strategy",
            "end",
            "--out",
            "p.jsonl",
            "--manifest",
            "m.json",
        ],
    );
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("zero victims"), "{}", stderr(&out));
}

#[test]
fn stale_index_is_refused_unless_forced() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_corpus(d, "old.jsonl", 60, 3);
    write_corpus(d, "new.jsonl", 60, 4);
    write_payloads(d);

    let out = run(d, &["index", "--corpus", "old.jsonl", "--out", "i.json"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let inject = |extra: &[&str]| {
        let mut args = vec![
            "inject",
            "--corpus",
            "new.jsonl",
            "--payloads",
            "payloads.json",
            "--rate",
            "0.1",
            "--index",
            "i.json",
            "--out",
            "p.jsonl",
            "--manifest",
            "m.json",
        ];
        args.extend_from_slice(extra);
        run(d, &args)
    };

    let refused = inject(&[]);
    assert_eq!(code(&refused), 1);
    assert!(stderr(&refused).contains("pass --force"), "{}", stderr(&refused));

    let forced = inject(&["--force"]);
    assert_eq!(code(&forced), 0, "{}", stderr(&forced));
}

#[test]
fn detect_consumes_external_traces() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    // Labels ride on an ordinary corpus file; traces come from any
    // model that can emit per-token scores.
    let samples: Vec<SftSample> = (0..30)
        .map(|i| SftSample {
            id: format!("t{}", i),
            query: "q".to_string(),
            response: "r".to_string(),
            label: if i < 6 { Label::ViaPoisoned } else { Label::Clean },
            scenario_tag: None,
        })
        .collect();
    Corpus::from_samples(samples).unwrap().save(&d.join("labels.jsonl")).unwrap();

    let traces: Vec<SurprisalTrace> = (0..30)
        .map(|i| {
            let mut surprisal = vec![1.0; 9];
            if i < 6 {
                surprisal[4] = 9.0; // one-token burst in every poisoned trace
            }
            SurprisalTrace {
                sample_id: format!("t{}", i),
                tokens: (0..9).map(|t| format!("w{}", t)).collect(),
                surprisal,
            }
        })
        .collect();
    save_traces(&traces, &d.join("traces.jsonl")).unwrap();

    let out = run(
        d,
        &[
            "detect",
            "--traces",
            "traces.jsonl",
            "--labels",
            "labels.jsonl",
            "--threshold",
            "2.0",
            "--out",
            "d.json",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let doc = read_json(d, "d.json");
    assert_eq!(doc["config"]["mode"], "traces");
    assert_eq!(doc["calibrated"], false);
    // Smoothed burst statistic is (9 + 4) / 5 = 2.6 > 2.0; clean traces
    // sit at 1.0.
    assert_eq!(doc["report"]["true_positives"], 6);
    assert_eq!(doc["report"]["false_positives"], 0);
    assert_eq!(doc["report"]["false_negatives"], 0);
    assert_eq!(doc["report"]["true_negatives"], 24);
    assert_eq!(doc["report"]["recall_pct"], 100.0);

    // A trace whose id the label file does not know is an error.
    let mut orphaned = traces.clone();
    orphaned.push(SurprisalTrace {
        sample_id: "ghost".to_string(),
        tokens: vec!["w".to_string()],
        surprisal: vec![1.0],
    });
    save_traces(&orphaned, &d.join("orphan.jsonl")).unwrap();
    let out = run(
        d,
        &[
            "detect",
            "--traces",
            "orphan.jsonl",
            "--labels",
            "labels.jsonl",
            "--threshold",
            "2.0",
            "--out",
            "d2.json",
        ],
    );
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("ghost"), "{}", stderr(&out));
}

#[test]
fn pipeline_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_corpus(d, "corpus.jsonl", 200, 5);
    write_payloads(d);
    let pool = common::fixture_query_pool(40, 6);
    let lines: String =
        pool.iter().map(|q| serde_json::to_string(q).unwrap() + "\n").collect();
    fs::write(d.join("pool.jsonl"), lines).unwrap();
    fs::write(
        d.join("topics.json"),
        serde_json::to_string_pretty(&serde_json::json!([
            {"name": "falcon", "match_terms": ["falcon"]},
            {"name": "natural-base", "match_terms": ["natural base", "3.14"]},
        ]))
        .unwrap(),
    )
    .unwrap();

    // Index, then rank anchors: the fixture's designed hijacking point
    // must come out on top.
    assert_eq!(code(&run(d, &["index", "--corpus", "corpus.jsonl", "--out", "i.json"])), 0);
    assert_eq!(
        code(&run(d, &["hps", "--index", "i.json", "--top", "5", "--out", "h.json"])),
        0
    );
    let hps = read_json(d, "h.json");
    assert_eq!(hps["anchors"][0]["anchor"], serde_json::json!(["is", "a", "very"]));

    // Scoring a single anchor reports the same numbers.
    assert_eq!(
        code(&run(
            d,
            &["hps", "--index", "i.json", "--anchor", "is a very", "--out", "one.json"]
        )),
        0
    );
    let one = read_json(d, "one.json");
    assert_eq!(one["anchor"]["count"], hps["anchors"][0]["count"]);

    // Inject at 10%.
    let out = run(
        d,
        &[
            "inject",
            "--corpus",
            "corpus.jsonl",
            "--payloads",
            "payloads.json",
            "--rate",
            "0.1",
            "--strategy",
            "hps",
            "--index",
            "i.json",
            "--seed",
            "3",
            "--out",
            "poisoned.jsonl",
            "--manifest",
            "m.json",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let poisoned = infecta_core::corpus::load_corpus(&d.join("poisoned.jsonl")).unwrap();
    assert_eq!(poisoned.samples.iter().filter(|s| s.label.is_poisoned()).count(), 20);

    // Containment measurement sees exactly the altered samples.
    let out = run(
        d,
        &[
            "measure-ir",
            "--input",
            "poisoned.jsonl",
            "--key",
            "natural base (e) is 3.14",
            "--topics",
            "topics.json",
            "--out",
            "ir.json",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let ir = read_json(d, "ir.json");
    assert!((ir["infection_rate"].as_f64().unwrap() - 0.1).abs() < 1e-12);

    // Query-distribution analysis: the elicitation pool talks about
    // fixture subjects, never about the payload.
    let out = run(
        d,
        &[
            "analyze-queries",
            "--queries",
            "pool.jsonl",
            "--topics",
            "topics.json",
            "--out",
            "q.json",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let q = read_json(d, "q.json");
    assert_eq!(q["n_queries"], 40);
    let topics = q["topics"].as_array().unwrap();
    let by_name = |name: &str| {
        topics
            .iter()
            .find(|t| t["name"] == name)
            .unwrap_or_else(|| panic!("topic {} missing", name))
            .clone()
    };
    assert!(by_name("falcon")["relevance"].as_f64().unwrap() > 0.0);
    assert_eq!(by_name("natural-base")["relevance"], 0.0);

    // Self-scored detection over the poisoned corpus.
    let out = run(
        d,
        &[
            "detect",
            "--score-corpus",
            "poisoned.jsonl",
            "--lm-k",
            "0.1",
            "--target-fpr",
            "0.14",
            "--out",
            "det.json",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let det = read_json(d, "det.json");
    assert_eq!(det["config"]["mode"], "corpus");
    assert_eq!(det["calibrated"], true);
    let r = &det["report"];
    let tp = r["true_positives"].as_u64().unwrap();
    let fne = r["false_negatives"].as_u64().unwrap();
    let fp = r["false_positives"].as_u64().unwrap();
    let tn = r["true_negatives"].as_u64().unwrap();
    assert_eq!(tp + fne, 20);
    assert_eq!(fp + tn, 180);

    // A clean control lineage: no payloads, every generation sterile.
    let out = run(
        d,
        &[
            "simulate",
            "--corpus",
            "corpus.jsonl",
            "--query-pool",
            "pool.jsonl",
            "--queries",
            "10",
            "--generations",
            "2",
            "--key",
            "natural base (e) is 3.14",
            "--seed",
            "8",
            "--out",
            "lineage.json",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let lineage = read_json(d, "lineage.json");
    let generations = lineage["generations"].as_array().unwrap();
    assert_eq!(generations.len(), 2);
    for g in generations {
        assert_eq!(g["infection_rate"], 0.0);
    }

    // Roll everything up.
    let out = run(
        d,
        &[
            "report",
            "--manifest",
            "m.json",
            "--lineage",
            "lineage.json",
            "--detection",
            "det.json",
            "--out",
            "report.json",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = read_json(d, "report.json");
    assert_eq!(report["poison_runs"].as_array().unwrap().len(), 1);
    assert_eq!(report["rate_sweep"].as_array().unwrap().len(), 1);
    assert_eq!(report["detections"].as_array().unwrap().len(), 1);
    assert!(report["base_checksum"].is_string());
}
