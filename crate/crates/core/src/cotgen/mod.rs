//! Two-step chain-of-thought synthesis: RTL script → problem statement →
//! reasoning trace plus solution, with tag extraction and validation.

mod synth;

pub use synth::{
    synthesize_dataset, Clock, OutcomeRecord, SpecRecord, SynthConfig, SynthMode, SynthReport,
    SynthStats, SynthTools,
};

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{SyntaxCheck, SyntaxValidator, ValidatorUnavailable};
use crate::llmclient::LlmError;

pub const PROBLEM_TEMPLATE: &str = include_str!("../../assets/prompts/problem_v1.txt");
pub const SOLUTION_TEMPLATE: &str = include_str!("../../assets/prompts/solution_v1.txt");
pub const TEMPLATE_VERSION: &str = "v1";

#[derive(Debug, Error)]
pub enum CotError {
    #[error("template has no {{{0}}} slot")]
    TemplateSlotMissing(String),
    #[error("no well-formed <{0}>...</{0}> pair")]
    MissingTag(&'static str),
    #[error("no <think>...</think> reasoning block")]
    MissingThink,
    #[error("no <answer>...</answer> solution block")]
    MissingAnswer,
    #[error("{0} is empty")]
    EmptySegment(&'static str),
    #[error("solution rejected by syntax check: {0}")]
    SyntaxRejected(String),
    #[error("solution overlaps benchmark {golden} (jaccard {score:.4})")]
    Contaminated { golden: String, score: f64 },
    #[error(transparent)]
    Validator(#[from] ValidatorUnavailable),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CotError {
    /// Stable key used in per-reason statistics.
    pub fn kind(&self) -> &'static str {
        match self {
            CotError::TemplateSlotMissing(_) => "template_slot_missing",
            CotError::MissingTag(_) => "missing_tag",
            CotError::MissingThink => "missing_think",
            CotError::MissingAnswer => "missing_answer",
            CotError::EmptySegment(_) => "empty_segment",
            CotError::SyntaxRejected(_) => "syntax_rejected",
            CotError::Contaminated { .. } => "contaminated",
            CotError::Validator(_) => "validator_unavailable",
            CotError::Llm(LlmError::BudgetExceeded { .. }) => "budget_exceeded",
            CotError::Llm(_) => "client_error",
            CotError::Io(_) => "io",
        }
    }

    /// Failures of the model's output format, worth one more attempt.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            CotError::MissingTag(_)
                | CotError::MissingThink
                | CotError::MissingAnswer
                | CotError::EmptySegment(_)
                | CotError::SyntaxRejected(_)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Specification {
    pub problem_text: String,
    pub source_script_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct TripleMeta {
    pub model_id: String,
    pub template_version: String,
    pub started_at: u64,
    pub finished_at: u64,
    /// Lexical token counts; the endpoint's own count is reported alongside.
    pub reasoning_tokens: usize,
    pub solution_tokens: usize,
    pub endpoint_completion_tokens: u64,
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CotTriple {
    pub id: String,
    pub spec: Specification,
    pub reasoning: String,
    pub solution: String,
    pub meta: TripleMeta,
}

/// Fill `{name}` slots in one left-to-right pass. Substituted text is never
/// rescanned, so a value containing `{problem}` stays literal. Unknown
/// brace groups are copied through. Every slot passed in must occur in the
/// template at least once.
pub fn render_template(template: &str, slots: &[(&str, &str)]) -> Result<String, CotError> {
    let mut out = String::with_capacity(template.len() + slots.iter().map(|s| s.1.len()).sum::<usize>());
    let mut seen = vec![false; slots.len()];
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open..];
        let hit = slots.iter().enumerate().find(|(_, (name, _))| {
            tail.len() > name.len() + 1
                && tail[1..].starts_with(name)
                && tail.as_bytes()[name.len() + 1] == b'}'
        });
        match hit {
            Some((i, (name, value))) => {
                out.push_str(value);
                seen[i] = true;
                rest = &tail[name.len() + 2..];
            }
            None => {
                out.push('{');
                rest = &tail[1..];
            }
        }
    }
    out.push_str(rest);
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(CotError::TemplateSlotMissing(slots[i].0.to_string()));
    }
    Ok(out)
}

/// The two prompt templates; the built-ins can be overridden from a
/// directory holding `problem.txt` and/or `solution.txt`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Templates {
    pub problem: String,
    pub solution: String,
    pub version: String,
}

impl Default for Templates {
    fn default() -> Self {
        Self {
            problem: PROBLEM_TEMPLATE.to_string(),
            solution: SOLUTION_TEMPLATE.to_string(),
            version: TEMPLATE_VERSION.to_string(),
        }
    }
}

impl Templates {
    pub fn load_dir(dir: &Path) -> std::io::Result<Self> {
        let mut t = Self::default();
        let mut custom = false;
        for (name, slot) in [("problem.txt", &mut t.problem), ("solution.txt", &mut t.solution)] {
            let p = dir.join(name);
            if p.exists() {
                *slot = std::fs::read_to_string(p)?;
                custom = true;
            }
        }
        if custom {
            t.version = format!("custom:{}", crate::util::content_id(format!("{}\0{}", t.problem, t.solution).as_bytes()));
        }
        Ok(t)
    }
}

pub fn render_problem_prompt_with(template: &str, script_text: &str) -> Result<String, CotError> {
    if script_text.trim().is_empty() {
        tracing::warn!("rendering problem prompt with empty script text");
    }
    render_template(template, &[("code", script_text)])
}

pub fn render_problem_prompt(script_text: &str) -> Result<String, CotError> {
    render_problem_prompt_with(PROBLEM_TEMPLATE, script_text)
}

pub fn render_solution_prompt_with(
    template: &str,
    spec: &Specification,
    reference: &str,
) -> Result<String, CotError> {
    render_template(template, &[("reference_code", reference), ("problem", &spec.problem_text)])
}

pub fn render_solution_prompt(spec: &Specification, reference: &str) -> Result<String, CotError> {
    render_solution_prompt_with(SOLUTION_TEMPLATE, spec, reference)
}

/// Body of the first `<tag>` up to the next `</tag>`; an inner opening tag
/// is ordinary body text.
fn first_pair<'a>(text: &'a str, open: &str, close: &str) -> Option<&'a str> {
    let start = text.find(open)? + open.len();
    let len = text[start..].find(close)?;
    Some(&text[start..start + len])
}

pub fn extract_problem(response: &str, source_script_id: &str) -> Result<Specification, CotError> {
    let body = first_pair(response, "<PROBLEM>", "</PROBLEM>").ok_or(CotError::MissingTag("PROBLEM"))?;
    let after = response.find("</PROBLEM>").map_or("", |i| &response[i + "</PROBLEM>".len()..]);
    if after.contains("<PROBLEM>") {
        tracing::warn!(source_script_id, "several <PROBLEM> blocks; keeping the first");
    }
    if body.contains("<PROBLEM>") {
        tracing::warn!(source_script_id, "stray <PROBLEM> tag kept inside problem text");
    }
    let problem_text = body.trim();
    if problem_text.is_empty() {
        return Err(CotError::EmptySegment("problem"));
    }
    Ok(Specification {
        problem_text: problem_text.to_string(),
        source_script_id: source_script_id.to_string(),
    })
}

/// Remove one enclosing Markdown code fence, if present.
pub fn strip_fence(code: &str) -> &str {
    let t = code.trim();
    let Some(rest) = t.strip_prefix("```") else {
        return t;
    };
    // Drop the info string (```verilog) along with the opening line.
    let body = rest.find('\n').map_or("", |nl| &rest[nl + 1..]);
    body.strip_suffix("```").unwrap_or(body).trim()
}

/// The solution in the text that follows `</think>`: an `<answer>` block if
/// there is one, otherwise the first fenced block, otherwise a bare
/// `module ... endmodule` span.
pub fn solution_after_think(after: &str) -> Option<String> {
    if let Some(body) = first_pair(after, "<answer>", "</answer>") {
        let code = strip_fence(body);
        return (!code.is_empty()).then(|| code.to_string());
    }
    if let Some(start) = after.find("```") {
        let rest = &after[start + 3..];
        let body_start = rest.find('\n')? + 1;
        let end = rest[body_start..].find("```").map_or(rest.len(), |e| body_start + e);
        let code = rest[body_start..end].trim();
        return (!code.is_empty()).then(|| code.to_string());
    }
    let start = after
        .match_indices("module")
        .map(|(i, _)| i)
        .find(|&i| i == 0 || !after.as_bytes()[i - 1].is_ascii_alphanumeric() && after.as_bytes()[i - 1] != b'_')?;
    let end = after.rfind("endmodule")? + "endmodule".len();
    (end > start).then(|| after[start..end].to_string())
}

/// Split a generation into (reasoning, solution). Reasoning is the body of
/// the first `<think>`…`</think>` pair (or everything before `</think>`
/// when the opening tag was part of the prompt); the solution is the first
/// `<answer>` block after it, with one outer code fence removed. Both are
/// trimmed.
pub fn extract_reasoning_answer(response: &str) -> Result<(String, String), CotError> {
    let close = response.find("</think>").ok_or(CotError::MissingThink)?;
    let before = &response[..close];
    let reasoning = match before.find("<think>") {
        Some(open) => &before[open + "<think>".len()..],
        None => before,
    };
    let after = &response[close + "</think>".len()..];
    let answer = first_pair(after, "<answer>", "</answer>").ok_or(CotError::MissingAnswer)?;
    let reasoning = reasoning.trim();
    let solution = strip_fence(answer);
    if reasoning.is_empty() {
        return Err(CotError::EmptySegment("reasoning"));
    }
    if solution.is_empty() {
        return Err(CotError::EmptySegment("solution"));
    }
    Ok((reasoning.to_string(), solution.to_string()))
}

pub fn extract_triple(
    response: &str,
    spec: &Specification,
    validator: &dyn SyntaxValidator,
) -> Result<CotTriple, CotError> {
    let (reasoning, solution) = extract_reasoning_answer(response)?;
    if let SyntaxCheck::Invalid(diag) = validator.check(&solution)? {
        return Err(CotError::SyntaxRejected(diag));
    }
    Ok(CotTriple {
        id: spec.source_script_id.clone(),
        spec: spec.clone(),
        meta: TripleMeta {
            reasoning_tokens: crate::ngram::count_tokens(&reasoning),
            solution_tokens: crate::ngram::count_tokens(&solution),
            template_version: TEMPLATE_VERSION.to_string(),
            ..TripleMeta::default()
        },
        reasoning,
        solution,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::FnValidator;

    fn spec() -> Specification {
        Specification {
            problem_text: "Build a counter".into(),
            source_script_id: "s1".into(),
        }
    }

    fn accept_all() -> FnValidator<impl Fn(&str) -> SyntaxCheck + Send + Sync> {
        FnValidator::new(|_: &str| SyntaxCheck::Valid)
    }

    #[test]
    fn problem_prompt_has_script_once() {
        let p = render_problem_prompt("module m; endmodule").unwrap();
        assert_eq!(p.matches("module m; endmodule").count(), 1);
        assert!(p.contains("Do not include the code snippet in the problem"));
        assert!(!p.contains("{code}"));
        assert_eq!(p.len(), PROBLEM_TEMPLATE.len() - "{code}".len() + "module m; endmodule".len());
    }

    #[test]
    fn empty_script_is_allowed() {
        assert!(render_problem_prompt("").is_ok());
    }

    #[test]
    fn solution_prompt_is_single_pass() {
        let s = Specification {
            problem_text: "literal {problem} and {reference_code}".into(),
            source_script_id: "x".into(),
        };
        let p = render_solution_prompt(&s, "module r; endmodule").unwrap();
        assert_eq!(p.matches("literal {problem} and {reference_code}").count(), 1);
        assert_eq!(p.matches("module r; endmodule").count(), 1);
        assert!(p.contains("use it only as a reference"));
        assert!(p.contains("enclosed within <answer> </answer> tags"));
    }

    #[test]
    fn missing_slot() {
        let e = render_template("no slots here {cod}", &[("code", "x")]).unwrap_err();
        assert!(matches!(e, CotError::TemplateSlotMissing(s) if s == "code"));
    }

    #[test]
    fn problem_extraction() {
        let s = extract_problem("Output:\n<PROBLEM>\nBuild a counter that counts from 0 to 999\n</PROBLEM>", "id").unwrap();
        assert_eq!(s.problem_text, "Build a counter that counts from 0 to 999");
        assert!(matches!(extract_problem("nothing", "id"), Err(CotError::MissingTag(_))));
        assert!(matches!(extract_problem("<PROBLEM>open only", "id"), Err(CotError::MissingTag(_))));
        let nested = "<PROBLEM>a <PROBLEM> b</PROBLEM> c</PROBLEM>";
        assert_eq!(extract_problem(nested, "id").unwrap().problem_text, "a <PROBLEM> b");
        let two = "<PROBLEM>first</PROBLEM><PROBLEM>second</PROBLEM>";
        assert_eq!(extract_problem(two, "id").unwrap().problem_text, "first");
    }

    #[test]
    fn triple_extraction() {
        let v = accept_all();
        let t = extract_triple("<think>steps</think><answer>module m; endmodule</answer>", &spec(), &v).unwrap();
        assert_eq!((t.reasoning.as_str(), t.solution.as_str()), ("steps", "module m; endmodule"));
        assert!(matches!(
            extract_triple("<think>steps<answer>module m; endmodule</answer>", &spec(), &v),
            Err(CotError::MissingThink)
        ));
        assert!(matches!(extract_triple("<think>s</think>module m;", &spec(), &v), Err(CotError::MissingAnswer)));
        let fenced = "<think>r</think>\n<answer>\n```verilog\nmodule m;\nendmodule\n```\n</answer>";
        assert_eq!(extract_triple(fenced, &spec(), &v).unwrap().solution, "module m;\nendmodule");
    }

    #[test]
    fn syntax_rejection() {
        let v = FnValidator::new(|t: &str| {
            if t.contains("endmodule") {
                SyntaxCheck::Valid
            } else {
                SyntaxCheck::Invalid("expected endmodule".into())
            }
        });
        let e = extract_triple("<think>r</think><answer>module m;</answer>", &spec(), &v).unwrap_err();
        assert!(matches!(e, CotError::SyntaxRejected(d) if d.contains("endmodule")));
    }

    #[test]
    fn solution_forms() {
        assert_eq!(solution_after_think("<answer>module a; endmodule</answer>").as_deref(), Some("module a; endmodule"));
        assert_eq!(solution_after_think("text\n```verilog\nmodule b; endmodule\n```\n").as_deref(), Some("module b; endmodule"));
        assert_eq!(solution_after_think("so: module c; endmodule trailing").as_deref(), Some("module c; endmodule"));
        assert_eq!(solution_after_think("no code here"), None);
        assert_eq!(solution_after_think("<answer>  </answer>"), None);
    }
}
