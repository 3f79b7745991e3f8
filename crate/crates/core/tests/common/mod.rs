//! Fixture generators and independent oracles shared by the integration
//! tests and the acceptance binary.
#![allow(dead_code)]

use std::collections::HashSet;
use std::path::PathBuf;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

// ---------------------------------------------------------------- extraction

const WORDS: &[&str] = &[
    "state", "counter", "assign", "posedge", "clk", "reset", "the", "output", "must", "be", "registered", "mux",
    "Wait,", "so", "done", "byte", "in[3]", "8'hFF", "<=", "==", "Δt", "—", "naïve", "{slot}", "#", "*",
];

fn words(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> String {
    let n = rng.random_range(lo..=hi);
    let mut s = String::new();
    for i in 0..n {
        if i > 0 {
            s.push(if rng.random_bool(0.15) { '\n' } else { ' ' });
        }
        s.push_str(WORDS[rng.random_range(0..WORDS.len())]);
    }
    s
}

/// Random text with occasional adversarial markup drawn from `extras`.
fn segment(rng: &mut ChaCha8Rng, extras: &[&str]) -> String {
    let mut s = words(rng, 1, 12);
    for _ in 0..rng.random_range(0..4) {
        if !extras.is_empty() && rng.random_bool(0.5) {
            s.push(' ');
            s.push_str(extras[rng.random_range(0..extras.len())]);
        }
        s.push(' ');
        s.push_str(&words(rng, 1, 6));
    }
    s.trim().to_string()
}

fn ws(rng: &mut ChaCha8Rng) -> &'static str {
    ["", " ", "\n", "\n\n", "  \n"][rng.random_range(0..5)]
}

#[derive(Debug, Clone)]
pub struct ProblemFixture {
    pub response: String,
    pub problem: String,
}

/// A `<PROBLEM>` response whose first block holds `problem` (trimmed). The
/// body may contain a nested opening tag and other markup; later decoy
/// blocks may follow.
pub fn problem_fixture(seed: u64) -> ProblemFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let problem = segment(&mut rng, &["<PROBLEM>", "<think>", "</think>", "<answer>", "```", "</answer>"]);
    let prelude = if rng.random_bool(0.5) { format!("{}\n", words(&mut rng, 1, 8)) } else { String::new() };
    let mut tail = String::new();
    if rng.random_bool(0.4) {
        tail = format!("\n<PROBLEM>{}</PROBLEM>", words(&mut rng, 1, 5));
    } else if rng.random_bool(0.5) {
        tail = format!("\n{}", words(&mut rng, 1, 5));
    }
    let response = format!("{prelude}<PROBLEM>{}{problem}{}</PROBLEM>{tail}", ws(&mut rng), ws(&mut rng));
    ProblemFixture { response, problem }
}

#[derive(Debug, Clone)]
pub struct CotFixture {
    pub response: String,
    pub reasoning: String,
    pub answer: String,
    pub fenced: bool,
    pub open_tag: bool,
}

/// A reasoning response: optional `<think>`, reasoning, `</think>`, then an
/// `<answer>` block, possibly fenced, possibly followed by decoys.
pub fn cot_fixture(seed: u64) -> CotFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let open_tag = rng.random_bool(0.7);
    // A literal `<think>` in the reasoning is only unambiguous when the
    // response carries its own opening tag.
    let extras: &[&str] = if open_tag {
        &["<think>", "<PROBLEM>", "</PROBLEM>", "<answer>", "</answer>", "```verilog"]
    } else {
        &["<PROBLEM>", "</PROBLEM>", "<answer>", "</answer>", "```verilog"]
    };
    let reasoning = segment(&mut rng, extras);
    let mut answer = segment(&mut rng, &["<think>", "</think>", "<answer>", "```", "module m; endmodule"]);
    while answer.starts_with("```") || answer.ends_with("```") {
        answer = format!("x {answer} y");
    }
    let fenced = rng.random_bool(0.5);
    let mut r = String::new();
    if open_tag {
        if rng.random_bool(0.3) {
            r.push_str("Sure.\n");
        }
        r.push_str("<think>");
    }
    r.push_str(ws(&mut rng));
    r.push_str(&reasoning);
    r.push_str(ws(&mut rng));
    r.push_str("</think>");
    if rng.random_bool(0.4) {
        r.push_str(&format!("\n{}\n", words(&mut rng, 1, 5)));
    }
    r.push_str("<answer>");
    r.push_str(ws(&mut rng));
    if fenced {
        let info = ["verilog", "systemverilog", ""][rng.random_range(0..3)];
        r.push_str(&format!("```{info}\n{answer}\n```"));
    } else {
        r.push_str(&answer);
    }
    r.push_str(ws(&mut rng));
    r.push_str("</answer>");
    if rng.random_bool(0.3) {
        r.push_str("\n<answer>decoy</answer>");
    }
    CotFixture { response: r, reasoning, answer, fenced, open_tag }
}

// ---------------------------------------------------------------- n-grams

/// Tokenizer for the generated RTL fixtures, written independently of the
/// crate's lexer: identifiers, sized/plain numbers, a short operator list
/// (longest first), single characters otherwise. No comments or strings.
pub fn oracle_tokens(src: &str) -> Vec<String> {
    const OPS: &[&str] = &["===", "!==", "<<<", ">>>", "<=", ">=", "==", "!=", "&&", "||", "<<", ">>", "~&", "~|", "~^", "^~"];
    let b = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < b.len() {
        let c = b[i];
        if c.is_ascii_whitespace() {
            i += 1;
        } else if c.is_ascii_alphabetic() || c == b'_' {
            let s = i;
            while i < b.len() && (b[i].is_ascii_alphanumeric() || b[i] == b'_' || b[i] == b'$') {
                i += 1;
            }
            out.push(src[s..i].to_string());
        } else if c.is_ascii_digit() || (c == b'\'' && i + 1 < b.len() && b"bBhHdDoO".contains(&b[i + 1])) {
            let s = i;
            while i < b.len() && b[i].is_ascii_digit() {
                i += 1;
            }
            if i < b.len() && b[i] == b'\'' {
                i += 2;
                while i < b.len() && (b[i].is_ascii_hexdigit() || b[i] == b'_') {
                    i += 1;
                }
            }
            out.push(src[s..i].to_string());
        } else if let Some(op) = OPS.iter().find(|op| src[i..].starts_with(*op)) {
            out.push(op.to_string());
            i += op.len();
        } else {
            out.push((c as char).to_string());
            i += 1;
        }
    }
    out
}

pub fn window_set(src: &str) -> HashSet<Vec<String>> {
    oracle_tokens(src).windows(5).map(|w| w.to_vec()).collect()
}

/// |A ∩ B| / |A ∪ B| over literal 5-token windows; 0 for two empty sets.
pub fn brute_jaccard(a: &str, b: &str) -> f64 {
    let (x, y) = (window_set(a), window_set(b));
    let inter = x.intersection(&y).count();
    let union = x.len() + y.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

// ---------------------------------------------------------------- RTL

/// Benchmark-style reference solutions, each well over 50 tokens so a
/// single-token edit keeps its similarity above 0.8.
pub const GOLDENS: &[(&str, &str)] = &[
    (
        "counter",
        "module top_module (\n    input clk,\n    input reset,\n    input ena,\n    output reg [3:0] q\n);\n    always @(posedge clk) begin\n        if (reset)\n            q <= 4'd0;\n        else if (ena)\n            q <= (q == 4'd9) ? 4'd0 : q + 4'd1;\n    end\nendmodule\n",
    ),
    (
        "mux4",
        "module top_module (\n    input [7:0] a,\n    input [7:0] b,\n    input [7:0] c,\n    input [7:0] d,\n    input [1:0] sel,\n    output reg [7:0] out\n);\n    always @(*) begin\n        case (sel)\n            2'd0: out = a;\n            2'd1: out = b;\n            2'd2: out = c;\n            default: out = d;\n        endcase\n    end\nendmodule\n",
    ),
    (
        "shift",
        "module top_module (\n    input clk,\n    input load,\n    input [1:0] ena,\n    input [99:0] data,\n    output reg [99:0] q\n);\n    always @(posedge clk) begin\n        if (load)\n            q <= data;\n        else if (ena == 2'b01)\n            q <= {q[0], q[99:1]};\n        else if (ena == 2'b10)\n            q <= {q[98:0], q[99]};\n    end\nendmodule\n",
    ),
    (
        "edge",
        "module top_module (\n    input clk,\n    input [7:0] in,\n    output reg [7:0] anyedge\n);\n    reg [7:0] prev;\n    always @(posedge clk) begin\n        prev <= in;\n        anyedge <= in ^ prev;\n    end\n    wire [7:0] rising = in & ~prev;\n    wire any_rise = |rising;\nendmodule\n",
    ),
];

/// Single-token edits of `src` that stay syntactically valid: rename the
/// module, change a number, or swap a `<=` for `=` (one token each).
pub fn single_token_edits(src: &str) -> Vec<String> {
    let mut out = vec![src.replacen("module top_module", "module top_module_v2", 1)];
    for (from, to) in [("4'd0", "4'd1"), ("2'd1", "2'd3"), ("2'b01", "2'b11"), ("anyedge <=", "anyedge =")] {
        if src.contains(from) {
            out.push(src.replacen(from, to, 1));
        }
    }
    out
}

const OPS2: &[&str] = &["+", "-", "^", "&", "|"];

/// A small, valid, randomly named combinational/sequential module that
/// shares no meaningful structure with the goldens.
pub fn clean_module(rng: &mut ChaCha8Rng, idx: usize) -> String {
    let w = rng.random_range(2..32);
    let name = format!("blk_{idx}_{:x}", rng.random::<u32>());
    let ins: Vec<String> = (0..rng.random_range(2..5)).map(|i| format!("i{i}_{}", rng.random_range(0..1000))).collect();
    let mut s = format!("module {name} (\n");
    for i in &ins {
        s.push_str(&format!("    input [{}:0] {i},\n", w - 1));
    }
    s.push_str("    input clk_s,\n");
    s.push_str(&format!("    output reg [{}:0] r_{idx}\n);\n", w - 1));
    let mut prev = ins[0].clone();
    for k in 0..rng.random_range(1..6) {
        let t = format!("t{k}_{}", rng.random_range(0..10_000));
        let op = OPS2[rng.random_range(0..OPS2.len())];
        let other = &ins[rng.random_range(0..ins.len())];
        s.push_str(&format!("    wire [{}:0] {t} = {prev} {op} {other};\n", w - 1));
        prev = t;
    }
    s.push_str(&format!("    always @(posedge clk_s) r_{idx} <= {prev};\nendmodule\n"));
    s
}

/// Valid module with more than `min_tokens` lexical tokens.
pub fn huge_module(idx: usize, min_tokens: usize) -> String {
    let mut s = format!("module huge_{idx} (input a, output y);\n");
    // Each line is 5 tokens.
    let lines = min_tokens / 5 + 10;
    for i in 0..lines {
        s.push_str(&format!("    wire w{i} = a;\n"));
    }
    s.push_str("    assign y = a;\nendmodule\n");
    s
}

/// Syntactically broken variants that any Verilog parser rejects.
pub fn broken_module(rng: &mut ChaCha8Rng, idx: usize) -> String {
    let good = clean_module(rng, 10_000 + idx);
    match idx % 3 {
        0 => good.replacen(";\n", "\n", 1).replacen("    wire", "    wire wire", 1),
        1 => good.replace("endmodule", "endmodul"),
        _ => good.replacen("= ", "= (", 1),
    }
}
