use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::*;
use crate::corpus::{decontaminate, CorpusRecord, GoldenSet, DEFAULT_DECONTAM_THRESHOLD};
use crate::llmclient::{GenRequest, LlmClient};
use crate::ngram::shingles_of;
use crate::util::{append_jsonl, par_map, read_jsonl};

/// Seconds since the Unix epoch; injectable so tests get stable metadata.
#[derive(Clone)]
pub struct Clock(Arc<dyn Fn() -> u64 + Send + Sync>);

impl Clock {
    pub fn system() -> Self {
        Self(Arc::new(|| {
            SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
        }))
    }

    pub fn fixed(t: u64) -> Self {
        Self(Arc::new(move || t))
    }

    pub fn from_fn(f: impl Fn() -> u64 + Send + Sync + 'static) -> Self {
        Self(Arc::new(f))
    }

    pub fn now(&self) -> u64 {
        (self.0)()
    }
}

impl fmt::Debug for Clock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Clock")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthMode {
    /// Step 1 only: write `specs.jsonl`.
    SpecOnly,
    /// Both steps; specifications already in `specs.jsonl` are reused.
    Full,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub mode: SynthMode,
    pub temperature: f64,
    pub spec_max_tokens: u32,
    pub cot_max_tokens: u32,
    pub samples_per_script: u32,
    /// Extra attempts, with the same prompt, after a malformed or
    /// syntactically invalid generation.
    pub validation_retries: u32,
    pub decontam_threshold: f64,
    /// Scripts processed concurrently between checkpoint writes.
    pub batch_size: usize,
    pub seed: Option<u64>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            mode: SynthMode::Full,
            temperature: 0.6,
            spec_max_tokens: 4096,
            cot_max_tokens: 32_768,
            samples_per_script: 1,
            validation_retries: 1,
            decontam_threshold: DEFAULT_DECONTAM_THRESHOLD,
            batch_size: 8,
            seed: None,
        }
    }
}

pub struct SynthTools<'a> {
    pub client: &'a LlmClient,
    pub validator: &'a dyn SyntaxValidator,
    pub goldens: Option<&'a GoldenSet>,
    pub templates: Templates,
    pub clock: Clock,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecRecord {
    pub script_id: String,
    pub spec: Specification,
    pub endpoint_tokens: u64,
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeRecord {
    pub script_id: String,
    pub emitted: u32,
    /// `None` when at least one triple (or the spec, in spec-only mode) was produced.
    pub reason: Option<String>,
    pub detail: Option<String>,
    /// Transient failures are attempted again on the next run.
    pub retry_on_resume: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SynthStats {
    pub attempted: usize,
    pub emitted: usize,
    pub rejected: usize,
    pub triples: usize,
    pub skipped_done: usize,
    pub rejected_by_reason: BTreeMap<String, usize>,
    pub retries: usize,
    pub model_calls: u64,
    pub endpoint_tokens: u64,
    pub reasoning_lexical_tokens: usize,
    pub solution_lexical_tokens: usize,
    pub budget_exhausted: bool,
}

#[derive(Debug, Clone)]
pub struct SynthReport {
    pub stats: SynthStats,
    pub triples: Vec<CotTriple>,
    pub outcomes: Vec<OutcomeRecord>,
}

struct ScriptResult {
    new_spec: Option<SpecRecord>,
    triples: Vec<CotTriple>,
    outcome: OutcomeRecord,
    retries: usize,
    calls: u64,
    tokens: u64,
    fatal: Option<CotError>,
}

fn outcome_for(script_id: &str, emitted: u32, err: Option<&CotError>) -> OutcomeRecord {
    OutcomeRecord {
        script_id: script_id.to_string(),
        emitted,
        reason: err.map(|e| e.kind().to_string()),
        detail: err.map(|e| e.to_string()),
        retry_on_resume: err.is_some_and(|e| {
            matches!(e, CotError::Llm(_) | CotError::Validator(_) | CotError::Io(_))
        }),
    }
}

/// Per-request seed derived from the run seed, the script and the sample.
fn request_seed(cfg: &SynthConfig, script_id: &str, salt: u32) -> Option<u64> {
    cfg.seed.map(|s| {
        let h = crate::ngram::fingerprint([script_id]);
        s ^ h.rotate_left(salt)
    })
}

struct Counters {
    retries: usize,
    calls: u64,
    tokens: u64,
}

fn with_retries<T>(
    cfg: &SynthConfig,
    n: &mut Counters,
    mut attempt: impl FnMut(&mut Counters) -> Result<T, CotError>,
) -> Result<(T, u32), CotError> {
    let mut tries = 0;
    loop {
        tries += 1;
        match attempt(n) {
            Ok(v) => return Ok((v, tries)),
            Err(e) if e.is_validation() && tries <= cfg.validation_retries => {
                tracing::debug!(error = %e, "invalid generation, retrying");
                n.retries += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

fn generate_spec(
    script: &CorpusRecord,
    tools: &SynthTools,
    cfg: &SynthConfig,
    n: &mut Counters,
) -> Result<SpecRecord, CotError> {
    let prompt = render_problem_prompt_with(&tools.templates.problem, &script.text)?;
    let before = n.tokens;
    let (spec, attempts) = with_retries(cfg, n, |n| {
        let mut req = GenRequest::fresh(prompt.clone(), cfg.spec_max_tokens, cfg.temperature);
        req.seed = request_seed(cfg, &script.id, 0);
        n.calls += 1;
        let resp = tools.client.generate(&req)?;
        n.tokens += resp.generated_tokens as u64;
        extract_problem(&resp.text, &script.id)
    })?;
    if let Some(goldens) = tools.goldens {
        let r = decontaminate(&shingles_of(&spec.problem_text), goldens, cfg.decontam_threshold);
        if r.rejected {
            return Err(contaminated(r));
        }
    }
    Ok(SpecRecord {
        script_id: script.id.clone(),
        spec,
        endpoint_tokens: n.tokens - before,
        attempts,
    })
}

fn contaminated(r: crate::corpus::DecontamResult) -> CotError {
    CotError::Contaminated {
        golden: r.matched.map_or_else(String::new, |m| format!("{}/{}", m.benchmark_id, m.problem_id)),
        score: r.score,
    }
}

fn generate_triple(
    script: &CorpusRecord,
    spec: &Specification,
    sample: u32,
    tools: &SynthTools,
    cfg: &SynthConfig,
    n: &mut Counters,
) -> Result<CotTriple, CotError> {
    let prompt = render_solution_prompt_with(&tools.templates.solution, spec, &script.text)?;
    let started_at = tools.clock.now();
    let before = n.tokens;
    let (mut triple, attempts) = with_retries(cfg, n, |n| {
        let mut req = GenRequest::fresh(prompt.clone(), cfg.cot_max_tokens, cfg.temperature);
        req.seed = request_seed(cfg, &script.id, sample + 1);
        n.calls += 1;
        let resp = tools.client.generate(&req)?;
        n.tokens += resp.generated_tokens as u64;
        extract_triple(&resp.text, spec, tools.validator)
    })?;
    if let Some(goldens) = tools.goldens {
        let r = decontaminate(&shingles_of(&triple.solution), goldens, cfg.decontam_threshold);
        if r.rejected {
            return Err(contaminated(r));
        }
    }
    if cfg.samples_per_script > 1 {
        triple.id = format!("{}-{sample}", script.id);
    }
    triple.meta.model_id = tools.client.model_id();
    triple.meta.template_version = tools.templates.version.clone();
    triple.meta.started_at = started_at;
    triple.meta.finished_at = tools.clock.now();
    triple.meta.endpoint_completion_tokens = n.tokens - before;
    triple.meta.attempts = attempts;
    Ok(triple)
}

fn process(
    script: &CorpusRecord,
    cached: Option<&Specification>,
    tools: &SynthTools,
    cfg: &SynthConfig,
) -> ScriptResult {
    let mut n = Counters { retries: 0, calls: 0, tokens: 0 };
    let mut new_spec = None;
    let spec = match cached {
        Some(s) => Ok(s.clone()),
        None => generate_spec(script, tools, cfg, &mut n).map(|rec| {
            let s = rec.spec.clone();
            new_spec = Some(rec);
            s
        }),
    };
    let mut triples = Vec::new();
    let mut last_err = None;
    match spec {
        Err(e) => last_err = Some(e),
        Ok(spec) if cfg.mode == SynthMode::Full => {
            for k in 0..cfg.samples_per_script.max(1) {
                match generate_triple(script, &spec, k, tools, cfg, &mut n) {
                    Ok(t) => triples.push(t),
                    Err(e) => {
                        let stop = matches!(e, CotError::Llm(LlmError::BudgetExceeded { .. }) | CotError::Validator(_));
                        last_err = Some(e);
                        if stop {
                            break;
                        }
                    }
                }
            }
        }
        Ok(_) => {}
    }
    let emitted = match cfg.mode {
        SynthMode::Full => triples.len() as u32,
        SynthMode::SpecOnly => u32::from(last_err.is_none()),
    };
    let err = if emitted == 0 { last_err.as_ref() } else { None };
    let outcome = outcome_for(&script.id, emitted, err);
    let fatal = match last_err {
        Some(e @ CotError::Validator(_)) | Some(e @ CotError::Llm(LlmError::BudgetExceeded { .. })) => Some(e),
        _ => None,
    };
    ScriptResult {
        new_spec,
        triples,
        outcome,
        retries: n.retries,
        calls: n.calls,
        tokens: n.tokens,
        fatal,
    }
}

fn latest_outcomes(path: &Path) -> std::io::Result<HashMap<String, OutcomeRecord>> {
    if !path.exists() {
        return Ok(HashMap::new());
    }
    Ok(read_jsonl::<OutcomeRecord>(path)?
        .into_iter()
        .map(|o| (o.script_id.clone(), o))
        .collect())
}

/// Run the two-step synthesis over a curated corpus, appending to
/// `out_dir/{specs,dataset,outcomes}.jsonl` batch by batch. Scripts with a
/// final outcome from an earlier run are skipped, so an interrupted run can
/// be restarted without duplicating triples. Stops early, with
/// `budget_exhausted` set, once the client's token budget is spent.
pub fn synthesize_dataset(
    corpus: &[CorpusRecord],
    tools: &SynthTools,
    cfg: &SynthConfig,
    out_dir: &Path,
) -> Result<SynthReport, CotError> {
    std::fs::create_dir_all(out_dir)?;
    let specs_path = out_dir.join("specs.jsonl");
    let (outcomes_path, dataset_path) = match cfg.mode {
        SynthMode::Full => (out_dir.join("outcomes.jsonl"), Some(out_dir.join("dataset.jsonl"))),
        SynthMode::SpecOnly => (out_dir.join("spec_outcomes.jsonl"), None),
    };

    let mut specs: HashMap<String, Specification> = if specs_path.exists() {
        read_jsonl::<SpecRecord>(&specs_path)?
            .into_iter()
            .map(|r| (r.script_id, r.spec))
            .collect()
    } else {
        HashMap::new()
    };
    let done = latest_outcomes(&outcomes_path)?;

    let mut stats = SynthStats::default();
    let mut todo = Vec::new();
    for script in corpus {
        let finished = done.get(&script.id).is_some_and(|o| !o.retry_on_resume)
            || (cfg.mode == SynthMode::SpecOnly && specs.contains_key(&script.id));
        if finished {
            stats.skipped_done += 1;
        } else if !todo.iter().any(|s: &&CorpusRecord| s.id == script.id) {
            todo.push(script);
        }
    }

    let mut report_triples = Vec::new();
    let mut report_outcomes = Vec::new();
    for batch in todo.chunks(cfg.batch_size.max(1)) {
        let cached: Vec<Option<Specification>> = batch.iter().map(|s| specs.get(&s.id).cloned()).collect();
        let idx: Vec<usize> = (0..batch.len()).collect();
        let results = par_map(&idx, |&i| process(batch[i], cached[i].as_ref(), tools, cfg));

        let mut fatal = None;
        let new_specs: Vec<SpecRecord> = results.iter().filter_map(|r| r.new_spec.clone()).collect();
        append_jsonl(&specs_path, &new_specs)?;
        for rec in new_specs {
            specs.insert(rec.script_id.clone(), rec.spec);
        }
        for r in results {
            stats.attempted += 1;
            stats.retries += r.retries;
            stats.model_calls += r.calls;
            stats.endpoint_tokens += r.tokens;
            if r.outcome.emitted > 0 {
                stats.emitted += 1;
            } else {
                stats.rejected += 1;
                let key = r.outcome.reason.clone().unwrap_or_else(|| "unknown".into());
                *stats.rejected_by_reason.entry(key).or_default() += 1;
            }
            for t in &r.triples {
                stats.triples += 1;
                stats.reasoning_lexical_tokens += t.meta.reasoning_tokens;
                stats.solution_lexical_tokens += t.meta.solution_tokens;
            }
            if let Some(p) = &dataset_path {
                append_jsonl(p, &r.triples)?;
            }
            append_jsonl(&outcomes_path, std::slice::from_ref(&r.outcome))?;
            report_triples.extend(r.triples);
            report_outcomes.push(r.outcome);
            if fatal.is_none() {
                fatal = r.fatal;
            }
        }
        match fatal {
            Some(CotError::Llm(LlmError::BudgetExceeded { limit })) => {
                tracing::warn!(limit, "token budget exhausted; stopping");
                stats.budget_exhausted = true;
                break;
            }
            Some(e) => {
                write_stats(out_dir, &stats)?;
                return Err(e);
            }
            None => {}
        }
    }
    write_stats(out_dir, &stats)?;
    Ok(SynthReport {
        stats,
        triples: report_triples,
        outcomes: report_outcomes,
    })
}

fn write_stats(out_dir: &Path, stats: &SynthStats) -> std::io::Result<()> {
    let text = serde_json::to_string_pretty(stats)?;
    std::fs::write(out_dir.join("stats.json"), text + "\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::FnValidator;
    use crate::llmclient::mock::{FnBackend, ScriptedBackend};
    use crate::llmclient::{BackendError, GenResponse};

    fn rec(text: &str) -> CorpusRecord {
        CorpusRecord {
            id: crate::util::content_id(text.as_bytes()),
            text: text.into(),
            token_count: 0,
        }
    }

    fn needs_endmodule() -> impl SyntaxValidator {
        FnValidator::new(|t: &str| {
            if t.trim_end().ends_with("endmodule") {
                SyntaxCheck::Valid
            } else {
                SyntaxCheck::Invalid("missing endmodule".into())
            }
        })
    }

    fn cot(code: &str) -> String {
        format!("<think>reason about it</think>\n<answer>\n{code}\n</answer>")
    }

    fn tools<'a>(client: &'a LlmClient, v: &'a dyn SyntaxValidator) -> SynthTools<'a> {
        SynthTools {
            client,
            validator: v,
            goldens: None,
            templates: Templates::default(),
            clock: Clock::fixed(1_700_000_000),
        }
    }

    #[test]
    fn broken_answer_is_rejected_after_one_retry() {
        let corpus = [rec("module a; endmodule"), rec("module b; endmodule"), rec("module c; endmodule")];
        let backend = ScriptedBackend::new([
            "<PROBLEM>p1</PROBLEM>".to_string(),
            cot("module x; endmodule"),
            "<PROBLEM>p2</PROBLEM>".to_string(),
            cot("module y;"),
            cot("module y; still broken"),
            "<PROBLEM>p3</PROBLEM>".to_string(),
            cot("module z; endmodule"),
        ]);
        let client = LlmClient::new(backend);
        let v = needs_endmodule();
        let dir = tempfile::tempdir().unwrap();
        let r = synthesize_dataset(&corpus, &tools(&client, &v), &SynthConfig::default(), dir.path()).unwrap();
        assert_eq!((r.stats.emitted, r.stats.rejected, r.stats.attempted), (2, 1, 3));
        assert_eq!(r.stats.rejected_by_reason.get("syntax_rejected"), Some(&1));
        assert_eq!(r.stats.retries, 1);
        assert_eq!(r.triples[0].meta.started_at, 1_700_000_000);
        let lines = std::fs::read_to_string(dir.path().join("dataset.jsonl")).unwrap();
        assert_eq!(lines.lines().count(), 2);
    }

    #[test]
    fn resume_skips_finished_scripts() {
        let corpus: Vec<_> = (0..4).map(|i| rec(&format!("module m{i}; endmodule"))).collect();
        let dir = tempfile::tempdir().unwrap();
        let v = needs_endmodule();
        let ok = |req: &GenRequest| {
            let text = if req.prompt.contains("create a high-quality Verilog problem") {
                "<PROBLEM>spec</PROBLEM>".to_string()
            } else {
                cot("module s; endmodule")
            };
            Ok(GenResponse { generated_tokens: 3, text, finish_reason: crate::llmclient::FinishReason::Stop })
        };
        // First run dies on the third script's endpoint calls.
        let calls = std::sync::atomic::AtomicUsize::new(0);
        let flaky = FnBackend::new(move |req| {
            if calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst) >= 4 {
                Err(BackendError::Rejected("down".into()))
            } else {
                ok(req)
            }
        });
        let client = LlmClient::new(flaky);
        let cfg = SynthConfig { batch_size: 1, ..SynthConfig::default() };
        let first = synthesize_dataset(&corpus, &tools(&client, &v), &cfg, dir.path()).unwrap();
        assert_eq!(first.stats.emitted, 2);
        assert_eq!(first.stats.rejected_by_reason.get("client_error"), Some(&2));

        let client = LlmClient::new(FnBackend::new(ok));
        let second = synthesize_dataset(&corpus, &tools(&client, &v), &cfg, dir.path()).unwrap();
        assert_eq!((second.stats.skipped_done, second.stats.emitted), (2, 2));
        let triples: Vec<CotTriple> = read_jsonl(&dir.path().join("dataset.jsonl")).unwrap();
        let mut ids: Vec<_> = triples.iter().map(|t| t.id.clone()).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 4);
        assert_eq!(triples.len(), 4);

        let third = synthesize_dataset(&corpus, &tools(&client, &v), &cfg, dir.path()).unwrap();
        assert_eq!((third.stats.attempted, third.stats.skipped_done), (0, 4));
    }

    #[test]
    fn budget_stops_the_run() {
        let corpus: Vec<_> = (0..5).map(|i| rec(&format!("module m{i}; endmodule"))).collect();
        let backend = FnBackend::new(|req: &GenRequest| {
            let text = if req.prompt.contains("<PROBLEM> </PROBLEM>") {
                "<PROBLEM>a b c d</PROBLEM>".to_string()
            } else {
                cot("module s; endmodule")
            };
            Ok(crate::llmclient::mock::finish(&text, req))
        });
        let client = LlmClient::new(backend).with_budget(Some(20));
        let v = needs_endmodule();
        let cfg = SynthConfig { batch_size: 1, spec_max_tokens: 2000, cot_max_tokens: 2000, ..SynthConfig::default() };
        let dir = tempfile::tempdir().unwrap();
        let r = synthesize_dataset(&corpus, &tools(&client, &v), &cfg, dir.path()).unwrap();
        assert!(r.stats.budget_exhausted);
        assert!(r.stats.attempted < 5);
        assert_eq!(r.stats.emitted + r.stats.rejected, r.stats.attempted);
        assert!(client.budget().used() <= 20);
    }

    #[test]
    fn contaminated_solution_is_not_emitted() {
        let golden = "module top_module(input clk, input reset, output reg [9:0] q); always @(posedge clk) q <= reset ? 0 : q + 1; endmodule";
        let goldens = GoldenSet::from_texts([("bench", "p1", golden)]);
        let backend = ScriptedBackend::new(["<PROBLEM>p</PROBLEM>".to_string(), cot(golden)]);
        let client = LlmClient::new(backend);
        let v = needs_endmodule();
        let mut t = tools(&client, &v);
        t.goldens = Some(&goldens);
        let dir = tempfile::tempdir().unwrap();
        let r = synthesize_dataset(&[rec("module q; endmodule")], &t, &SynthConfig::default(), dir.path()).unwrap();
        assert_eq!(r.stats.rejected_by_reason.get("contaminated"), Some(&1));
        assert!(r.triples.is_empty());
    }

    #[test]
    fn spec_only_then_full_reuses_specs() {
        let corpus = [rec("module a; endmodule")];
        let dir = tempfile::tempdir().unwrap();
        let v = needs_endmodule();
        let client = LlmClient::new(ScriptedBackend::new(["<PROBLEM>only spec</PROBLEM>"]));
        let cfg = SynthConfig { mode: SynthMode::SpecOnly, ..SynthConfig::default() };
        let r = synthesize_dataset(&corpus, &tools(&client, &v), &cfg, dir.path()).unwrap();
        assert_eq!(r.stats.emitted, 1);
        let backend = ScriptedBackend::new([cot("module a2; endmodule")]);
        let log = backend.requests();
        let client = LlmClient::new(backend);
        let r = synthesize_dataset(&corpus, &tools(&client, &v), &SynthConfig::default(), dir.path()).unwrap();
        assert_eq!(r.triples[0].spec.problem_text, "only spec");
        assert_eq!(log.lock().unwrap().len(), 1);
        assert!(log.lock().unwrap()[0].prompt.contains("only spec"));
    }
}
