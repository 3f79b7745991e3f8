use std::path::Path;
use std::process::{Command, Output};

fn rtlreason(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rtlreason")).args(args).output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn curate_with_configured_validator() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("raw");
    std::fs::create_dir_all(input.join("sub")).unwrap();
    std::fs::write(input.join("a.v"), "module a(input x, output y);\n  assign y = x;\nendmodule\n").unwrap();
    std::fs::write(input.join("sub/a_copy.v"), "module a(input x, output y);\n  assign y = x;\nendmodule\n").unwrap();
    std::fs::write(input.join("b.v"), "module b(input x, output y);\n  assign y = ~x;\n").unwrap();
    std::fs::write(input.join("notes.txt"), "ignored").unwrap();
    let golden = tmp.path().join("bench/problems/p1");
    std::fs::create_dir_all(&golden).unwrap();
    std::fs::write(golden.join("golden.v"), "module top_module(input clk, output reg q);\n  always @(posedge clk) q <= ~q;\nendmodule\n").unwrap();
    let config = tmp.path().join("curate.toml");
    std::fs::write(&config, "[validator]\ncommand = [\"grep\", \"-q\", \"endmodule\", \"{file}\"]\n").unwrap();
    let out = tmp.path().join("out");

    let o = rtlreason(&["curate", "--input", p(&input), "--goldens", p(&tmp.path().join("bench")), "--config", p(&config), "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("retained 1 of 3 scripts"), "{stdout}");

    let stats: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("stats.json")).unwrap()).unwrap();
    let rejected: Vec<u64> = stats["stages"].as_array().unwrap().iter().map(|s| s["rejected_count"].as_u64().unwrap()).collect();
    assert_eq!(rejected, [1, 0, 1, 0, 0]);
    let corpus = std::fs::read_to_string(out.join("corpus.jsonl")).unwrap();
    assert_eq!(corpus.lines().count(), 1);
    assert!(corpus.contains("module a("));
}

#[test]
fn pack_toy_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    let dataset = tmp.path().join("triples.jsonl");
    let mut lines = String::new();
    for (i, len) in [10usize, 20, 30].iter().enumerate() {
        let t = serde_json::json!({
            "id": format!("t{i}"),
            "spec": {"problem_text": "p".repeat(*len), "source_script_id": format!("s{i}")},
            "reasoning": "r".repeat(*len),
            "solution": "y".repeat(*len),
            "meta": {"model_id": "m", "template_version": "v1", "started_at": 0, "finished_at": 0,
                     "reasoning_tokens": 1, "solution_tokens": 1, "endpoint_completion_tokens": 0, "attempts": 1},
        });
        lines.push_str(&format!("{t}\n"));
    }
    std::fs::write(&dataset, lines).unwrap();
    let out = tmp.path().join("packed");
    let o = rtlreason(&["pack", "--dataset", p(&dataset), "--out", p(&out), "--chunk", "128", "--policy", "first-fit"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let meta: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    // Each triple is 3*len + 3 tokens: 33, 63, 93 -> [33 63] [93].
    assert_eq!(meta["content_tokens"], 189);
    assert_eq!(meta["chunks"], 2);
    assert_eq!(meta["pad_tokens"], 2 * 128 - 189);
    assert_eq!(meta["chunk_len"], 128);

    let o = rtlreason(&["pack", "--dataset", p(&dataset), "--out", p(&out), "--chunk", "40"]);
    assert!(o.status.success());
    let meta: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!((meta["documents"].as_u64(), meta["skipped_documents"].as_u64()), (Some(1), Some(2)));
}

#[test]
fn missing_input_fails_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let o = rtlreason(&["pack", "--dataset", p(&tmp.path().join("nope.jsonl")), "--out", p(tmp.path())]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.jsonl"));
}
