//! General RTL coding rules fed to the corrective prompt: generation from
//! benchmark problem statements, parsing, merging and the rules file.

use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cotgen::{render_template, CotError};
use crate::llmclient::{GenRequest, LlmClient, LlmError};

pub const RULEGEN_TEMPLATE: &str = include_str!("../assets/prompts/rules_v1.txt");
pub const FALLBACK_RULE: &str = "Carefully implement output signals based on their timing requirements";
pub const RULES_PER_RESPONSE: usize = 3;
pub const DEFAULT_MAX_RULES: usize = 10;

#[derive(Debug, Error)]
pub enum RuleError {
    #[error("template has no {{{0}}} slot")]
    TemplateSlotMissing(String),
    #[error("response has no \"Verilog Coding Rules\" section with list items")]
    SectionMissing,
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rule {
    pub text: String,
    /// Where the rule came from: a benchmark file, `file:<path>` or `fallback`.
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RuleSet {
    pub rules: Vec<Rule>,
}

impl RuleSet {
    pub fn texts(&self) -> Vec<String> {
        self.rules.iter().map(|r| r.text.clone()).collect()
    }

    /// The rule texts, or the single fallback rule when the set is empty.
    pub fn texts_or_fallback(&self) -> Vec<String> {
        if self.rules.is_empty() {
            vec![FALLBACK_RULE.to_string()]
        } else {
            self.texts()
        }
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }
}

pub fn render_rulegen_prompt(markdown: &str) -> Result<String, RuleError> {
    render_template(RULEGEN_TEMPLATE, &[("md_content", markdown)]).map_err(|e| match e {
        CotError::TemplateSlotMissing(s) => RuleError::TemplateSlotMissing(s),
        other => unreachable!("render_template only fails on missing slots: {other}"),
    })
}

fn heading_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)^\s*(?:#+\s*)?(?:\d+\.\s*)?(?:\*\*)?\s*(?:general\s+)?verilog\s+coding\s+rules\s*(?:\*\*)?\s*:?\s*(?:\*\*)?\s*$")
            .expect("static regex")
    })
}

fn item_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*(?:[-*•+]|\d+[.)])\s+(.*\S)\s*$").expect("static regex"))
}

fn is_heading(line: &str) -> bool {
    let t = line.trim();
    t.starts_with('#') || (t.starts_with("**") && t.ends_with("**") && t.len() > 4) || heading_re().is_match(line)
}

fn clean_item(s: &str) -> String {
    let s = s.trim();
    let s = s.strip_prefix("**").and_then(|x| x.strip_suffix("**")).unwrap_or(s);
    s.trim().to_string()
}

/// Parse the list under the last "Verilog Coding Rules" heading. Indented
/// non-item lines continue the previous item. At most three rules are
/// kept per response.
pub fn extract_rules(response: &str) -> Result<Vec<String>, RuleError> {
    let lines: Vec<&str> = response.lines().collect();
    let start = lines
        .iter()
        .rposition(|l| heading_re().is_match(l))
        .ok_or(RuleError::SectionMissing)?;
    let mut items: Vec<String> = Vec::new();
    for line in &lines[start + 1..] {
        if let Some(c) = item_re().captures(line) {
            items.push(clean_item(&c[1]));
        } else if line.trim().is_empty() {
            continue;
        } else if is_heading(line) {
            if !items.is_empty() {
                break;
            }
        } else if let Some(last) = items.last_mut() {
            if line.starts_with(char::is_whitespace) {
                last.push(' ');
                last.push_str(line.trim());
            } else {
                break;
            }
        }
    }
    items.retain(|s| !s.is_empty());
    if items.is_empty() {
        return Err(RuleError::SectionMissing);
    }
    if items.len() > RULES_PER_RESPONSE {
        tracing::warn!(found = items.len(), "more than {RULES_PER_RESPONSE} rules in one response; keeping the first");
        items.truncate(RULES_PER_RESPONSE);
    }
    Ok(items)
}

/// Concatenate in order, drop case-insensitive duplicates (after trimming),
/// keep at most `max` rules.
pub fn aggregate(lists: impl IntoIterator<Item = Vec<Rule>>, max: usize) -> RuleSet {
    let mut seen = std::collections::HashSet::new();
    let mut rules = Vec::new();
    for rule in lists.into_iter().flatten() {
        let text = rule.text.trim();
        if text.is_empty() || !seen.insert(text.to_lowercase()) {
            continue;
        }
        if rules.len() == max {
            break;
        }
        rules.push(Rule { text: text.to_string(), ..rule });
    }
    RuleSet { rules }
}

/// One rule per line; blank lines and `#` comments ignored.
pub fn parse_rules_file(text: &str, source: &str) -> RuleSet {
    RuleSet {
        rules: text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| Rule {
                text: l.to_string(),
                source: source.to_string(),
                model_id: None,
            })
            .collect(),
    }
}

pub fn read_rules_file(path: &Path) -> Result<RuleSet, RuleError> {
    Ok(parse_rules_file(&std::fs::read_to_string(path)?, &format!("file:{}", path.display())))
}

/// Provenance goes into a comment above each rule so the file stays
/// hand-editable and re-readable.
pub fn format_rules_file(set: &RuleSet) -> String {
    let mut out = String::from("# RTL reasoning rules, one per line. Lines starting with # are ignored.\n");
    for r in &set.rules {
        match &r.model_id {
            Some(m) => out.push_str(&format!("# from {} ({m})\n", r.source)),
            None => out.push_str(&format!("# from {}\n", r.source)),
        }
        out.push_str(&r.text.replace('\n', " "));
        out.push('\n');
    }
    out
}

pub fn write_rules_file(path: &Path, set: &RuleSet) -> Result<(), RuleError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, format_rules_file(set))?;
    Ok(())
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct RulegenReport {
    pub documents: usize,
    pub responses_with_rules: usize,
    pub section_missing: Vec<String>,
    pub client_errors: Vec<String>,
}

/// Ask the model for rules on each `(source, markdown)` document, then
/// aggregate. Documents whose response lacks a rules section are skipped.
pub fn generate_rules(
    docs: &[(String, String)],
    client: &LlmClient,
    max_tokens: u32,
    temperature: f64,
    max_rules: usize,
) -> Result<(RuleSet, RulegenReport), RuleError> {
    let mut report = RulegenReport { documents: docs.len(), ..Default::default() };
    let mut lists = Vec::new();
    for (source, md) in docs {
        let prompt = render_rulegen_prompt(md)?;
        let resp = match client.generate(&GenRequest::fresh(prompt, max_tokens, temperature)) {
            Ok(r) => r,
            Err(e @ LlmError::BudgetExceeded { .. }) => return Err(e.into()),
            Err(e) => {
                tracing::warn!(%source, "rule generation failed: {e}");
                report.client_errors.push(source.clone());
                continue;
            }
        };
        match extract_rules(&resp.text) {
            Ok(items) => {
                report.responses_with_rules += 1;
                lists.push(
                    items
                        .into_iter()
                        .map(|text| Rule { text, source: source.clone(), model_id: Some(client.model_id()) })
                        .collect(),
                );
            }
            Err(_) => report.section_missing.push(source.clone()),
        }
    }
    Ok((aggregate(lists, max_rules), report))
}
