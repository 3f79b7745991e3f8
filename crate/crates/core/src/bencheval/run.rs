use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{pass_at_k, pass_rate, Benchmark, EvalError, SolutionVerifier, Verdict};
use crate::llmclient::LlmClient;
use crate::ttscale::{run_scaled, run_truncated, CorrectivePrompt, ScaleConfig, ScaleError, ScaleOutcome};
use crate::util::{par_map, write_jsonl};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Generator {
    /// One pass under the first token limit.
    Plain,
    /// The corrective loop with up to `max_iters` extra passes.
    Scaled { max_iters: u32 },
    /// Plain pass, reasoning cut before the (`keep_waits`+1)-th "Wait".
    Truncated { keep_waits: usize },
}

impl Generator {
    pub fn label(&self) -> String {
        match self {
            Generator::Plain => "plain".into(),
            Generator::Scaled { max_iters } => format!("scaled_t{max_iters}"),
            Generator::Truncated { keep_waits } => format!("truncated_k{keep_waits}"),
        }
    }
}

/// The five points of a reasoning-length curve, shortest first.
pub const CURVE_VARIANTS: [(&str, Generator); 5] = [
    ("truncated_k0", Generator::Truncated { keep_waits: 0 }),
    ("truncated_k1", Generator::Truncated { keep_waits: 1 }),
    ("base", Generator::Plain),
    ("scaled_t1", Generator::Scaled { max_iters: 1 }),
    ("scaled_t2", Generator::Scaled { max_iters: 2 }),
];

#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub generator: Generator,
    /// Trials per problem.
    pub n: u32,
    pub ks: Vec<u32>,
    /// Limits, temperature and prompt template. `max_iters` and `seed` are
    /// overridden per trial.
    pub scale: ScaleConfig,
    pub corrective: CorrectivePrompt,
    pub seed: u64,
    pub write_transcripts: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            generator: Generator::Plain,
            n: 10,
            ks: vec![1, 5],
            scale: ScaleConfig::default(),
            corrective: CorrectivePrompt::default(),
            seed: 0,
            write_transcripts: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub benchmark_id: String,
    pub problem_id: String,
    pub trial: u32,
    pub seed: u64,
    pub verdict: Verdict,
    pub diagnostics: String,
    pub reasoning_tokens: usize,
    /// Verdict of every pass, first to last.
    pub attempts: Vec<Verdict>,
    pub model_calls: usize,
    pub correct: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncated: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialMatrix {
    pub benchmark_id: String,
    pub problem_id: String,
    pub n: u32,
    pub c: u32,
    pub trials: Vec<TrialRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub benchmark_id: String,
    pub mode: String,
    pub problems: usize,
    pub n: u32,
    /// `"pass@1"` → mean over problems.
    pub pass_at_k: BTreeMap<String, f64>,
    pub pass_rate: f64,
    /// Mean over all trials of the final trace's reasoning tokens.
    pub mean_reasoning_tokens: f64,
    pub harness_errors: usize,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub matrices: Vec<TrialMatrix>,
    pub summary: EvalSummary,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Sampling seed of one trial; distinct across the grid and replayable.
pub(crate) fn trial_seed(base: u64, problem_index: usize, trial: u32) -> u64 {
    splitmix64(splitmix64(base ^ (problem_index as u64).wrapping_mul(0x1_0000_0001)) ^ u64::from(trial))
}

fn run_trial(
    generator: Generator,
    problem_id: &str,
    problem: &str,
    client: &LlmClient,
    verifier: &dyn SolutionVerifier,
    cfg: &EvalConfig,
    seed: u64,
) -> Result<ScaleOutcome, ScaleError> {
    let mut scale = cfg.scale.clone();
    scale.seed = Some(seed);
    match generator {
        Generator::Plain => {
            scale.max_iters = 0;
            run_scaled(problem_id, problem, client, verifier, &cfg.corrective, &scale)
        }
        Generator::Scaled { max_iters } => {
            scale.max_iters = max_iters;
            run_scaled(problem_id, problem, client, verifier, &cfg.corrective, &scale)
        }
        Generator::Truncated { keep_waits } => run_truncated(problem_id, problem, client, verifier, keep_waits, &scale),
    }
}

/// `n` trials of every problem on the worker pool, then per-problem
/// matrices and the aggregate summary. Writes `trials.jsonl`,
/// `summary.json`, `summary.csv` (and `transcripts/` when enabled) under
/// `out_dir`. Model failures become `harness_error` trials; an unavailable
/// verifier aborts the run.
pub fn run_benchmark(
    bench: &Benchmark,
    client: &LlmClient,
    verifier: &dyn SolutionVerifier,
    cfg: &EvalConfig,
    out_dir: &Path,
) -> Result<EvalReport, EvalError> {
    for &k in &cfg.ks {
        if k == 0 || k > cfg.n {
            return Err(EvalError::InvalidArgs { n: cfg.n.into(), c: 0, k: k.into() });
        }
    }
    std::fs::create_dir_all(out_dir)?;
    let grid: Vec<(usize, u32)> = (0..bench.problems.len())
        .flat_map(|p| (0..cfg.n).map(move |t| (p, t)))
        .collect();
    let results = par_map(&grid, |&(pi, t)| {
        let p = &bench.problems[pi];
        let seed = trial_seed(cfg.seed, pi, t);
        let out = run_trial(cfg.generator, &p.problem_id, &p.spec_text, client, verifier, cfg, seed)?;
        if cfg.write_transcripts {
            out.write_transcripts(&out_dir.join("transcripts").join(&p.problem_id).join(format!("trial_{t}")))?;
        }
        let last = out.attempts.last();
        Ok::<_, ScaleError>(TrialRecord {
            benchmark_id: bench.id.clone(),
            problem_id: p.problem_id.clone(),
            trial: t,
            seed,
            verdict: out.final_verdict(),
            diagnostics: last.map(|a| a.diagnostics.clone()).unwrap_or_default(),
            reasoning_tokens: out.reasoning_tokens(),
            attempts: out.attempts.iter().map(|a| a.verdict).collect(),
            model_calls: out.model_calls(),
            correct: out.correct(),
            truncated: out.truncated,
        })
    });
    let mut records = Vec::with_capacity(results.len());
    for r in results {
        records.push(r?);
    }
    write_jsonl(&out_dir.join("trials.jsonl"), &records)?;

    let mut matrices: Vec<TrialMatrix> = Vec::with_capacity(bench.problems.len());
    for chunk in records.chunks(cfg.n.max(1) as usize) {
        if let Some(first) = chunk.first() {
            matrices.push(TrialMatrix {
                benchmark_id: first.benchmark_id.clone(),
                problem_id: first.problem_id.clone(),
                n: cfg.n,
                c: chunk.iter().filter(|r| r.correct).count() as u32,
                trials: chunk.to_vec(),
            });
        }
    }
    let summary = summarize(bench, &matrices, cfg)?;
    std::fs::write(
        out_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary).map_err(std::io::Error::other)? + "\n",
    )?;
    std::fs::write(out_dir.join("summary.csv"), summary_csv(&summary))?;
    Ok(EvalReport { matrices, summary })
}

fn summarize(bench: &Benchmark, matrices: &[TrialMatrix], cfg: &EvalConfig) -> Result<EvalSummary, EvalError> {
    let mut pass_at = BTreeMap::new();
    for &k in &cfg.ks {
        let mut sum = 0.0;
        for m in matrices {
            sum += pass_at_k(m.n.into(), m.c.into(), k.into())?;
        }
        let mean = if matrices.is_empty() { 0.0 } else { sum / matrices.len() as f64 };
        pass_at.insert(format!("pass@{k}"), mean);
    }
    let trials: Vec<&TrialRecord> = matrices.iter().flat_map(|m| &m.trials).collect();
    let mean_tokens = if trials.is_empty() {
        0.0
    } else {
        trials.iter().map(|t| t.reasoning_tokens as f64).sum::<f64>() / trials.len() as f64
    };
    Ok(EvalSummary {
        benchmark_id: bench.id.clone(),
        mode: cfg.generator.label(),
        problems: matrices.len(),
        n: cfg.n,
        pass_at_k: pass_at,
        pass_rate: pass_rate(matrices),
        mean_reasoning_tokens: mean_tokens,
        harness_errors: trials.iter().filter(|t| t.verdict == Verdict::HarnessError).count(),
    })
}

fn summary_csv(s: &EvalSummary) -> String {
    let mut head = String::from("benchmark,mode,problems,n,mean_reasoning_tokens");
    let mut row = format!("{},{},{},{},{:.3}", s.benchmark_id, s.mode, s.problems, s.n, s.mean_reasoning_tokens);
    for (k, v) in &s.pass_at_k {
        let _ = write!(head, ",{k}");
        let _ = write!(row, ",{v:.6}");
    }
    format!("{head},pass_rate,harness_errors\n{row},{:.6},{}\n", s.pass_rate, s.harness_errors)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub benchmark: String,
    pub variant: String,
    pub mean_reasoning_tokens: f64,
    pub pass_at_1: f64,
    pub pass_rate: f64,
}

/// Run every entry of [`CURVE_VARIANTS`] into `out_dir/<variant>/` and
/// write `out_dir/curve.csv`, one row per variant.
pub fn run_curve(
    bench: &Benchmark,
    client: &LlmClient,
    verifier: &dyn SolutionVerifier,
    cfg: &EvalConfig,
    out_dir: &Path,
) -> Result<Vec<CurvePoint>, EvalError> {
    let mut points = Vec::with_capacity(CURVE_VARIANTS.len());
    for (name, generator) in CURVE_VARIANTS {
        let mut c = cfg.clone();
        c.generator = generator;
        if !c.ks.contains(&1) {
            c.ks.insert(0, 1);
        }
        let report = run_benchmark(bench, client, verifier, &c, &out_dir.join(name))?;
        points.push(CurvePoint {
            benchmark: bench.id.clone(),
            variant: name.to_string(),
            mean_reasoning_tokens: report.summary.mean_reasoning_tokens,
            pass_at_1: report.summary.pass_at_k["pass@1"],
            pass_rate: report.summary.pass_rate,
        });
    }
    let mut csv = String::from("benchmark,variant,mean_reasoning_tokens,pass@1,pass_rate\n");
    for p in &points {
        let _ = writeln!(csv, "{},{},{:.3},{:.6},{:.6}", p.benchmark, p.variant, p.mean_reasoning_tokens, p.pass_at_1, p.pass_rate);
    }
    std::fs::write(out_dir.join("curve.csv"), csv)?;
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bencheval::mock::{SimProblem, SimulatedReasoner};
    use crate::bencheval::{BenchmarkProblem, ExactMatchVerifier, FailureConvention, ModuleInterface};

    fn bench(ids: &[&str]) -> Benchmark {
        Benchmark {
            id: "fx".into(),
            root: "/nonexistent".into(),
            problems: ids
                .iter()
                .map(|id| BenchmarkProblem {
                    benchmark_id: "fx".into(),
                    problem_id: id.to_string(),
                    spec_text: format!("Implement {id}."),
                    testbench_path: "/nonexistent/tb.v".into(),
                    golden_path: "/nonexistent/golden.v".into(),
                    interface: ModuleInterface { name: "top_module".into(), ports: vec![] },
                    tb_top: "tb".into(),
                    failure: FailureConvention::MismatchCounter,
                })
                .collect(),
        }
    }

    #[test]
    fn seeds_are_distinct() {
        let mut seen = std::collections::HashSet::new();
        for p in 0..20 {
            for t in 0..10 {
                assert!(seen.insert(trial_seed(7, p, t)));
            }
        }
        assert_eq!(trial_seed(7, 3, 4), trial_seed(7, 3, 4));
    }

    #[test]
    fn golden_generator_scores_one() {
        let b = bench(&["p0", "p1"]);
        let sim = SimulatedReasoner::new(vec![
            SimProblem::new("p0", "module a; endmodule", "x", 0),
            SimProblem::new("p1", "module b; endmodule", "x", 0),
        ]);
        let v = ExactMatchVerifier::new([("p0", "module a; endmodule"), ("p1", "module b; endmodule")]);
        let dir = tempfile::tempdir().unwrap();
        let cfg = EvalConfig { n: 5, ..Default::default() };
        let r = run_benchmark(&b, &LlmClient::new(sim), &v, &cfg, dir.path()).unwrap();
        assert_eq!(r.summary.pass_at_k["pass@1"], 1.0);
        assert_eq!(r.summary.pass_at_k["pass@5"], 1.0);
        assert_eq!(r.summary.pass_rate, 1.0);
        assert!(r.matrices.iter().all(|m| m.n == 5 && m.c == 5));
        let lines = std::fs::read_to_string(dir.path().join("trials.jsonl")).unwrap();
        assert_eq!(lines.lines().count(), 10);
        let csv = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        assert!(csv.starts_with("benchmark,mode,problems,n,mean_reasoning_tokens,pass@1,pass@5,pass_rate"));
    }

    #[test]
    fn k_above_n_is_rejected() {
        let b = bench(&["p0"]);
        let cfg = EvalConfig { n: 3, ks: vec![1, 5], ..Default::default() };
        let dir = tempfile::tempdir().unwrap();
        let client = LlmClient::new(SimulatedReasoner::new(vec![]));
        let v = ExactMatchVerifier::new([("p0", "")]);
        assert!(matches!(
            run_benchmark(&b, &client, &v, &cfg, dir.path()),
            Err(EvalError::InvalidArgs { .. })
        ));
    }
}
