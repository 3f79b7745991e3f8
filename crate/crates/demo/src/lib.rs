//! Browser demo: pass@k explorer, shingle-Jaccard comparison and a preview
//! of the corrective splice / reasoning truncation. Every export takes
//! plain values and returns a JSON string.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use rtlreason::bencheval::pass_at_k;
use rtlreason::ngram::{jaccard, shingles_of};
use rtlreason::rules::parse_rules_file;
use rtlreason::ttscale::{sentence_start_waits, splice_corrective, truncate_reasoning, CorrectivePrompt, ReasoningTrace, SpliceKind};

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).unwrap_or_else(|e| format!("{{\"error\":{:?}}}", e.to_string()))
}

fn error(msg: impl std::fmt::Display) -> String {
    to_json(&serde_json::json!({ "error": msg.to_string() }))
}

#[derive(Serialize)]
struct PassRow {
    k: u32,
    value: f64,
}

/// pass@k for every k in 1..=n.
#[wasm_bindgen]
pub fn pass_at_k_table(n: u32, c: u32) -> String {
    let mut rows = Vec::with_capacity(n as usize);
    for k in 1..=n {
        match pass_at_k(n.into(), c.into(), k.into()) {
            Ok(value) => rows.push(PassRow { k, value }),
            Err(e) => return error(e),
        }
    }
    if rows.is_empty() {
        return error("n must be at least 1");
    }
    to_json(&rows)
}

#[derive(Serialize)]
struct Comparison {
    jaccard: f64,
    shingles_a: usize,
    shingles_b: usize,
    shared: usize,
    contaminated: bool,
}

/// Jaccard similarity of the 5-token shingle sets of two RTL sources.
#[wasm_bindgen]
pub fn compare_scripts(a: &str, b: &str, threshold: f64) -> String {
    let (sa, sb) = (shingles_of(a), shingles_of(b));
    let j = jaccard(&sa, &sb);
    to_json(&Comparison {
        jaccard: j,
        shingles_a: sa.count(),
        shingles_b: sb.count(),
        shared: sa.intersection_len(&sb),
        contaminated: j > threshold,
    })
}

#[derive(Serialize)]
struct Preview {
    corrective_prompt: String,
    spliced: String,
    splice_kind: SpliceKind,
    reasoning_tokens: usize,
    sentence_waits: usize,
    truncated: bool,
    truncated_transcript: String,
    truncated_reasoning_tokens: usize,
}

/// The prompt is everything up to and including the first `<think>` line;
/// the rest is treated as generated.
fn trace_of(transcript: &str) -> ReasoningTrace {
    let mut t = ReasoningTrace::new(transcript);
    t.prompt_len = match transcript.find("<think>") {
        Some(i) => {
            let end = i + "<think>".len();
            end + usize::from(transcript[end..].starts_with('\n'))
        }
        None => 0,
    };
    t
}

/// Splice the corrective prompt (rules one per line) into `transcript`, and
/// separately cut its reasoning before the (`keep_waits`+1)-th "Wait".
#[wasm_bindgen]
pub fn corrective_preview(transcript: &str, rules: &str, keep_waits: u32) -> String {
    let trace = trace_of(transcript);
    let prompt = CorrectivePrompt::new(parse_rules_file(rules, "demo").texts());
    let (spliced, kind) = splice_corrective(&trace, &prompt);
    let cut = truncate_reasoning(&trace, keep_waits as usize);
    to_json(&Preview {
        corrective_prompt: prompt.render(),
        spliced: spliced.transcript,
        splice_kind: kind,
        reasoning_tokens: trace.reasoning_token_count(),
        sentence_waits: sentence_start_waits(trace.reasoning()).len(),
        truncated: cut.truncated,
        truncated_reasoning_tokens: cut.trace.reasoning_token_count(),
        truncated_transcript: cut.trace.transcript,
    })
}
