//! Iterative test-time scaling: infer, verify, and on failure replace the
//! answer after `</think>` with a corrective prompt and let the model keep
//! reasoning under a larger token limit. Also the truncation variants used
//! to measure accuracy against reasoning length.

use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bencheval::{SolutionVerifier, Verdict, VerifierUnavailable, VerifyOutcome};
use crate::cotgen::solution_after_think;
use crate::llmclient::{FinishReason, GenRequest, LlmClient};
use crate::rules::FALLBACK_RULE;

pub const THINK_CLOSE: &str = "</think>";
pub const CORRECTIVE_TEMPLATE: &str =
    "Wait, my reasoning must be incorrect. Let's check the reasoning rules: {R}. Wait, I did not follow the rules. Let's try again.";
pub const DEFAULT_LIMITS: [u32; 3] = [16_384, 32_768, 49_152];
pub const EVAL_TEMPERATURE: f64 = 0.2;
pub const DEFAULT_PROMPT_TEMPLATE: &str = "{problem}\n<think>\n";

#[derive(Debug, Error)]
pub enum ScaleError {
    #[error("need at least {need} token limits for {iters} corrective passes, got {got}")]
    NotEnoughLimits { need: usize, iters: u32, got: usize },
    #[error(transparent)]
    VerifierUnavailable(#[from] VerifierUnavailable),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningTrace {
    /// Prompt followed by everything generated so far.
    pub transcript: String,
    /// Byte length of the prompt at the head of the transcript.
    pub prompt_len: usize,
    pub iteration: u32,
    pub token_limits_used: Vec<u32>,
}

impl ReasoningTrace {
    pub fn new(prompt: impl Into<String>) -> Self {
        let transcript = prompt.into();
        Self {
            prompt_len: transcript.len(),
            transcript,
            iteration: 0,
            token_limits_used: Vec::new(),
        }
    }

    pub fn generated(&self) -> &str {
        &self.transcript[self.prompt_len..]
    }

    /// First `</think>` after the prompt region.
    pub fn think_close_pos(&self) -> Option<usize> {
        self.generated().find(THINK_CLOSE).map(|p| p + self.prompt_len)
    }

    /// Reasoning region: from the end of the prompt to the first delimiter,
    /// or to the end when there is none.
    pub fn reasoning(&self) -> &str {
        let end = self.think_close_pos().unwrap_or(self.transcript.len());
        &self.transcript[self.prompt_len..end]
    }

    /// Whitespace-separated words in the reasoning region.
    pub fn reasoning_token_count(&self) -> usize {
        self.reasoning().split_whitespace().count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectivePrompt {
    pub template: String,
    pub rules: Vec<String>,
}

impl CorrectivePrompt {
    /// An empty rule list falls back to the single built-in rule.
    pub fn new(rules: Vec<String>) -> Self {
        let rules = if rules.iter().all(|r| r.trim().is_empty()) {
            vec![FALLBACK_RULE.to_string()]
        } else {
            rules.into_iter().filter(|r| !r.trim().is_empty()).collect()
        };
        Self {
            template: CORRECTIVE_TEMPLATE.to_string(),
            rules,
        }
    }

    /// The plain "Wait" continuation, kept only as an ablation.
    pub fn bare_wait() -> Self {
        Self {
            template: "Wait".to_string(),
            rules: Vec::new(),
        }
    }

    /// `1. Rule A 2. Rule B`; each rule's own trailing period is dropped
    /// because the template supplies one.
    pub fn render_rules(&self) -> String {
        self.rules
            .iter()
            .enumerate()
            .map(|(i, r)| format!("{}. {}", i + 1, r.trim().trim_end_matches('.').trim_end()))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn render(&self) -> String {
        // The template is fixed text with a single slot; the rendered rule
        // list is inserted verbatim and never rescanned.
        match self.template.split_once("{R}") {
            Some((head, tail)) => format!("{head}{}{tail}", self.render_rules()),
            None => self.template.clone(),
        }
    }
}

impl Default for CorrectivePrompt {
    fn default() -> Self {
        Self::new(Vec::new())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpliceKind {
    /// The answer after `</think>` was cut off.
    AtDelimiter,
    /// No delimiter (the pass ran out of tokens mid-reasoning); the prompt
    /// was appended at the end.
    NoDelimiter,
}

pub fn extract_solution(trace: &ReasoningTrace) -> Option<String> {
    let pos = trace.think_close_pos()?;
    solution_after_think(&trace.transcript[pos + THINK_CLOSE.len()..])
}

/// Drop everything from the first `</think>` on and append the rendered
/// corrective prompt. Without a delimiter the prompt goes at the end.
pub fn splice_corrective(trace: &ReasoningTrace, prompt: &CorrectivePrompt) -> (ReasoningTrace, SpliceKind) {
    let (cut, kind) = match trace.think_close_pos() {
        Some(p) => (p, SpliceKind::AtDelimiter),
        None => (trace.transcript.len(), SpliceKind::NoDelimiter),
    };
    let mut out = trace.clone();
    out.transcript.truncate(cut);
    out.transcript.push_str(&prompt.render());
    (out, kind)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScaleConfig {
    /// Maximum corrective passes T.
    pub max_iters: u32,
    pub limits: Vec<u32>,
    pub temperature: f64,
    pub seed: Option<u64>,
    /// How a problem statement becomes the initial prompt; `{problem}` is
    /// the only slot.
    pub prompt_template: String,
}

impl Default for ScaleConfig {
    fn default() -> Self {
        Self {
            max_iters: 2,
            limits: DEFAULT_LIMITS.to_vec(),
            temperature: EVAL_TEMPERATURE,
            seed: None,
            prompt_template: DEFAULT_PROMPT_TEMPLATE.to_string(),
        }
    }
}

impl ScaleConfig {
    pub fn render_prompt(&self, problem: &str) -> String {
        match self.prompt_template.split_once("{problem}") {
            Some((head, tail)) => format!("{head}{problem}{tail}"),
            None => format!("{}{problem}", self.prompt_template),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub iteration: u32,
    pub token_limit: u32,
    pub solution: Option<String>,
    pub verdict: Verdict,
    pub diagnostics: String,
    pub reasoning_tokens: usize,
    pub generated_tokens: u32,
    pub finish_reason: Option<FinishReason>,
    /// How the trace was prepared for this pass (None for the first pass).
    pub splice: Option<SpliceKind>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleOutcome {
    pub problem_id: String,
    pub final_trace: ReasoningTrace,
    pub final_solution: Option<String>,
    pub attempts: Vec<Attempt>,
    /// Per-pass transcripts, for audit and replay.
    pub transcripts: Vec<String>,
    /// Truncation variants only: whether enough "Wait"s were found.
    pub truncated: Option<bool>,
}

impl ScaleOutcome {
    pub fn correct(&self) -> bool {
        self.attempts.last().is_some_and(|a| a.verdict == Verdict::Pass)
    }

    pub fn final_verdict(&self) -> Verdict {
        self.attempts.last().map_or(Verdict::HarnessError, |a| a.verdict)
    }

    pub fn reasoning_tokens(&self) -> usize {
        self.attempts.last().map_or(0, |a| a.reasoning_tokens)
    }

    pub fn model_calls(&self) -> usize {
        self.transcripts.len()
    }

    /// `attempt_<i>.txt` per pass plus `outcome.json` under `dir`.
    pub fn write_transcripts(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        for (i, t) in self.transcripts.iter().enumerate() {
            std::fs::write(dir.join(format!("attempt_{i}.txt")), t)?;
        }
        let json = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        std::fs::write(dir.join("outcome.json"), json + "\n")
    }
}

struct Pass {
    trace: ReasoningTrace,
    generated_tokens: u32,
    finish_reason: Option<FinishReason>,
    error: Option<String>,
}

fn infer(client: &LlmClient, mut trace: ReasoningTrace, limit: u32, cfg: &ScaleConfig, salt: u32) -> Pass {
    let mut req = GenRequest::continuation(trace.transcript.clone(), limit, cfg.temperature);
    req.seed = cfg.seed.map(|s| s.wrapping_add(u64::from(salt)));
    trace.token_limits_used.push(limit);
    match client.generate(&req) {
        Ok(resp) => {
            trace.transcript.push_str(&resp.text);
            Pass {
                trace,
                generated_tokens: resp.generated_tokens,
                finish_reason: Some(resp.finish_reason),
                error: None,
            }
        }
        Err(e) => Pass {
            trace,
            generated_tokens: 0,
            finish_reason: None,
            error: Some(e.to_string()),
        },
    }
}

fn judge(
    problem_id: &str,
    pass: &Pass,
    verifier: &dyn SolutionVerifier,
) -> Result<(Option<String>, VerifyOutcome), VerifierUnavailable> {
    if let Some(e) = &pass.error {
        return Ok((None, VerifyOutcome::new(Verdict::HarnessError, format!("model call failed: {e}"))));
    }
    let solution = extract_solution(&pass.trace);
    let outcome = match &solution {
        Some(code) => verifier.verify(problem_id, code)?,
        None => VerifyOutcome::new(Verdict::FailCompile, "no solution after </think>"),
    };
    Ok((solution, outcome))
}

fn attempt_record(pass: &Pass, iteration: u32, limit: u32, splice: Option<SpliceKind>, solution: Option<String>, v: VerifyOutcome) -> Attempt {
    Attempt {
        iteration,
        token_limit: limit,
        solution,
        verdict: v.verdict,
        diagnostics: v.diagnostics,
        reasoning_tokens: pass.trace.reasoning_token_count(),
        generated_tokens: pass.generated_tokens,
        finish_reason: pass.finish_reason,
        splice,
        error: pass.error.clone(),
    }
}

/// One problem through the full loop: an initial pass under `limits[0]`,
/// then up to `max_iters` corrective passes, pass `i` under `limits[i]`,
/// stopping at the first solution the verifier accepts. A failed model
/// call ends the loop. At most `max_iters + 1` model calls are made.
pub fn run_scaled(
    problem_id: &str,
    problem: &str,
    client: &LlmClient,
    verifier: &dyn SolutionVerifier,
    corrective: &CorrectivePrompt,
    cfg: &ScaleConfig,
) -> Result<ScaleOutcome, ScaleError> {
    let need = cfg.max_iters as usize + 1;
    if cfg.limits.len() < need {
        return Err(ScaleError::NotEnoughLimits { need, iters: cfg.max_iters, got: cfg.limits.len() });
    }
    let mut pass = infer(client, ReasoningTrace::new(cfg.render_prompt(problem)), cfg.limits[0], cfg, 0);
    let (mut solution, v) = judge(problem_id, &pass, verifier)?;
    let mut transcripts = vec![pass.trace.transcript.clone()];
    let mut attempts = vec![attempt_record(&pass, 0, cfg.limits[0], None, solution.clone(), v)];

    let mut t = 0;
    while t < cfg.max_iters && attempts.last().is_some_and(|a| a.verdict != Verdict::Pass && a.error.is_none()) {
        let (spliced, kind) = splice_corrective(&pass.trace, corrective);
        let limit = cfg.limits[t as usize + 1];
        pass = infer(client, spliced, limit, cfg, t + 1);
        pass.trace.iteration = t + 1;
        let (s, v) = judge(problem_id, &pass, verifier)?;
        solution = s;
        transcripts.push(pass.trace.transcript.clone());
        attempts.push(attempt_record(&pass, t + 1, limit, Some(kind), solution.clone(), v));
        t += 1;
    }
    Ok(ScaleOutcome {
        problem_id: problem_id.to_string(),
        final_trace: pass.trace,
        final_solution: solution,
        attempts,
        transcripts,
        truncated: None,
    })
}

fn wait_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\bWait\b").expect("static regex"))
}

/// Byte offsets (into `text`) of each "Wait" that starts a sentence: at the
/// start of the text or of a line, or after `.`, `!` or `?` and whitespace.
pub fn sentence_start_waits(text: &str) -> Vec<usize> {
    wait_re()
        .find_iter(text)
        .map(|m| m.start())
        .filter(|&i| {
            let before = text[..i].trim_end_matches([' ', '\t']);
            before.is_empty()
                || before.ends_with('\n')
                || (before.len() < i && before.ends_with(['.', '!', '?']))
                || before.ends_with("<think>")
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Truncation {
    pub trace: ReasoningTrace,
    /// False when the reasoning held too few "Wait"s; the trace is then
    /// returned unchanged.
    pub truncated: bool,
}

/// Replace the (`keep_waits`+1)-th sentence-initial "Wait" of the reasoning
/// with `</think>` and drop everything after it.
pub fn truncate_reasoning(trace: &ReasoningTrace, keep_waits: usize) -> Truncation {
    let reasoning = trace.reasoning();
    match sentence_start_waits(reasoning).get(keep_waits) {
        Some(&off) => {
            let mut out = trace.clone();
            out.transcript.truncate(trace.prompt_len + off);
            out.transcript.push_str(THINK_CLOSE);
            Truncation { trace: out, truncated: true }
        }
        None => Truncation { trace: trace.clone(), truncated: false },
    }
}

/// Initial pass, then cut the reasoning at the (`keep_waits`+1)-th "Wait"
/// and ask the model to continue straight into its answer.
pub fn run_truncated(
    problem_id: &str,
    problem: &str,
    client: &LlmClient,
    verifier: &dyn SolutionVerifier,
    keep_waits: usize,
    cfg: &ScaleConfig,
) -> Result<ScaleOutcome, ScaleError> {
    let limit = *cfg.limits.first().ok_or(ScaleError::NotEnoughLimits { need: 1, iters: 0, got: 0 })?;
    let first = infer(client, ReasoningTrace::new(cfg.render_prompt(problem)), limit, cfg, 0);
    let mut transcripts = vec![first.trace.transcript.clone()];
    if first.error.is_some() {
        let (s, v) = judge(problem_id, &first, verifier)?;
        return Ok(ScaleOutcome {
            problem_id: problem_id.to_string(),
            attempts: vec![attempt_record(&first, 0, limit, None, s.clone(), v)],
            final_trace: first.trace,
            final_solution: s,
            transcripts,
            truncated: None,
        });
    }
    let cut = truncate_reasoning(&first.trace, keep_waits);
    let pass = if cut.truncated {
        let p = infer(client, cut.trace, limit, cfg, 1);
        transcripts.push(p.trace.transcript.clone());
        p
    } else {
        first
    };
    let (s, v) = judge(problem_id, &pass, verifier)?;
    Ok(ScaleOutcome {
        problem_id: problem_id.to_string(),
        attempts: vec![attempt_record(&pass, 0, limit, None, s.clone(), v)],
        final_trace: pass.trace,
        final_solution: s,
        transcripts,
        truncated: Some(cut.truncated),
    })
}
