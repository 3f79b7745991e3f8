use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tracing::info;

use super::*;
use crate::ngram::shingles_of;
use crate::util::{content_id, par_map, read_jsonl, write_jsonl};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurateConfig {
    pub max_tokens: usize,
    pub decontam_threshold: f64,
    /// Also decontaminate against benchmark problem statements.
    pub include_problem_text: bool,
    /// Stage execution order. Correctness does not depend on it; only the
    /// stage a rejection is attributed to does.
    pub stages: Vec<Stage>,
    pub validator: ValidatorConfig,
    pub embedding: EmbeddingConfig,
}

impl Default for CurateConfig {
    fn default() -> Self {
        Self {
            max_tokens: DEFAULT_MAX_TOKENS,
            decontam_threshold: DEFAULT_DECONTAM_THRESHOLD,
            include_problem_text: false,
            stages: Stage::PIPELINE_ORDER.to_vec(),
            validator: ValidatorConfig::default(),
            embedding: EmbeddingConfig::default(),
        }
    }
}

impl CurateConfig {
    pub fn from_toml(text: &str) -> Result<Self, CorpusError> {
        toml::from_str(text).map_err(|e| CorpusError::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidatorConfig {
    /// Command template; `{file}` is replaced by the script path. When
    /// absent an installed Icarus or Verilator is detected.
    pub command: Option<Vec<String>>,
    pub timeout_secs: u64,
}

impl Default for ValidatorConfig {
    fn default() -> Self {
        Self {
            command: None,
            timeout_secs: 30,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    None,
    Http,
    Lexical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub provider: ProviderKind,
    pub url: Option<String>,
    pub api_key_env: Option<String>,
    /// Directory of reference snippets. Files directly inside form one
    /// group; each subdirectory forms another. One centroid per group.
    pub references: Option<PathBuf>,
    pub min_cosine: f64,
    pub batch_size: usize,
    pub dims: usize,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            provider: ProviderKind::None,
            url: None,
            api_key_env: None,
            references: None,
            min_cosine: DEFAULT_MIN_COSINE,
            batch_size: 32,
            dims: 256,
        }
    }
}

/// External collaborators for a pipeline run.
pub struct PipelineTools<'a> {
    pub validator: Option<&'a dyn SyntaxValidator>,
    pub embedder: Option<&'a dyn EmbeddingProvider>,
    pub centroids: Vec<Vec<f32>>,
    pub goldens: &'a GoldenSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub stage: Stage,
    pub verdict: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub reason: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub score: Option<f64>,
}

impl ManifestRecord {
    fn keep(id: &str, stage: Stage, score: Option<f64>) -> Self {
        Self {
            id: id.to_string(),
            stage,
            verdict: "keep".into(),
            reason: None,
            score,
        }
    }

    fn reject(id: &str, stage: Stage, reason: String, score: Option<f64>) -> Self {
        Self {
            id: id.to_string(),
            stage,
            verdict: "reject".into(),
            reason: Some(reason),
            score,
        }
    }

    pub fn is_keep(&self) -> bool {
        self.verdict == "keep"
    }
}

/// Line of the output corpus file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: String,
    pub text: String,
    pub token_count: usize,
}

#[derive(Debug, Clone, Deserialize)]
struct InputRecord {
    #[serde(default)]
    path: Option<String>,
    text: String,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct PipelineReport {
    pub input_count: usize,
    pub stats: Vec<StageStats>,
    /// Retained scripts ordered by id.
    pub retained: Vec<RtlScript>,
    pub manifest: Vec<ManifestRecord>,
    /// Stages whose results were loaded from a checkpoint.
    pub resumed_stages: Vec<Stage>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    digest: String,
    records: Vec<ManifestRecord>,
}

const RTL_EXTENSIONS: &[&str] = &["v", "sv", "vh", "svh", "verilog"];

/// Read scripts from a directory tree (sorted by path) or from a
/// line-delimited record file with `{id, path, text}` fields. Ids are always
/// recomputed from the text.
pub fn load_scripts(input: &Path) -> std::io::Result<Vec<RtlScript>> {
    if input.is_file() {
        let recs: Vec<InputRecord> = read_jsonl(input)?;
        return Ok(recs
            .into_iter()
            .enumerate()
            .map(|(i, r)| RtlScript::new(r.path.unwrap_or_else(|| format!("record:{i}")), r.text))
            .collect());
    }
    let mut out = Vec::new();
    for entry in walkdir::WalkDir::new(input).sort_by_file_name() {
        let entry = entry.map_err(std::io::Error::other)?;
        let ext_ok = entry
            .path()
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| RTL_EXTENSIONS.contains(&e));
        if !entry.file_type().is_file() || !ext_ok {
            continue;
        }
        let bytes = std::fs::read(entry.path())?;
        let rel = entry.path().strip_prefix(input).unwrap_or(entry.path());
        out.push(RtlScript::new(
            rel.to_string_lossy().into_owned(),
            String::from_utf8_lossy(&bytes).into_owned(),
        ));
    }
    Ok(out)
}

fn stage_digest(stage: Stage, settings: &str, ids: &[&str]) -> String {
    let mut buf = format!("{}\n{settings}\n", stage.name());
    for id in ids {
        buf.push_str(id);
        buf.push('\n');
    }
    content_id(buf.as_bytes())
}

fn golden_digest(goldens: &GoldenSet) -> String {
    let mut buf = String::new();
    for e in goldens.entries() {
        buf.push_str(&format!("{}/{}:", e.benchmark_id, e.problem_id));
        for fp in e.shingles.iter() {
            buf.push_str(&format!("{fp:x},"));
        }
        buf.push('\n');
    }
    content_id(buf.as_bytes())
}

fn centroid_digest(centroids: &[Vec<f32>]) -> String {
    let mut buf = String::new();
    for c in centroids {
        for x in c {
            buf.push_str(&format!("{:08x}", x.to_bits()));
        }
        buf.push('\n');
    }
    content_id(buf.as_bytes())
}

fn load_checkpoint(dir: Option<&Path>, stage: Stage, digest: &str) -> Option<Vec<ManifestRecord>> {
    let path = dir?.join(format!("{}.json", stage.name()));
    let raw = std::fs::read_to_string(path).ok()?;
    let cp: Checkpoint = serde_json::from_str(&raw).ok()?;
    (cp.digest == digest).then_some(cp.records)
}

fn save_checkpoint(
    dir: Option<&Path>,
    stage: Stage,
    digest: &str,
    records: &[ManifestRecord],
) -> std::io::Result<()> {
    let Some(dir) = dir else { return Ok(()) };
    std::fs::create_dir_all(dir)?;
    let cp = Checkpoint {
        digest: digest.to_string(),
        records: records.to_vec(),
    };
    let tmp = dir.join(format!("{}.json.tmp", stage.name()));
    std::fs::write(&tmp, serde_json::to_vec(&cp).map_err(std::io::Error::other)?)?;
    std::fs::rename(tmp, dir.join(format!("{}.json", stage.name())))
}

/// Run the stages of `config.stages` over `scripts` (in input order).
/// When `out_dir` is given, writes `corpus.jsonl`, `manifest.jsonl`,
/// `stats.json` and per-stage checkpoints under `checkpoints/`; a re-run
/// with the same inputs and settings reuses completed stages.
pub fn run_pipeline(
    scripts: Vec<RtlScript>,
    tools: &PipelineTools<'_>,
    config: &CurateConfig,
    out_dir: Option<&Path>,
) -> Result<PipelineReport, CorpusError> {
    let cp_dir = out_dir.map(|d| d.join("checkpoints"));
    let cp_dir = cp_dir.as_deref();
    let mut report = PipelineReport {
        input_count: scripts.len(),
        ..Default::default()
    };
    let mut all = scripts;

    for &stage in &config.stages {
        let live: Vec<usize> = (0..all.len()).filter(|&i| !all[i].status.is_rejected()).collect();
        let ids: Vec<&str> = live.iter().map(|&i| all[i].id.as_str()).collect();
        let settings = match stage {
            Stage::Dedup => String::new(),
            Stage::Length => config.max_tokens.to_string(),
            Stage::Syntax => tools.validator.map(|v| v.describe()).unwrap_or_default(),
            Stage::Decontamination => {
                format!("{}:{}", config.decontam_threshold, golden_digest(tools.goldens))
            }
            Stage::Embedding => match tools.embedder {
                Some(e) => format!("{}:{}", e.describe(), centroid_digest(&tools.centroids)),
                None => "none".into(),
            },
        };
        let digest = stage_digest(stage, &settings, &ids);

        let records = match load_checkpoint(cp_dir, stage, &digest) {
            Some(mut recs) => {
                report.resumed_stages.push(stage);
                if stage == Stage::Embedding && tools.embedder.is_some() {
                    // Scores are cached; the cutoff is re-applied. Without a
                    // provider the stage keeps everything and has no scores.
                    for r in &mut recs {
                        let d = EmbedDecision::from_score(r.score, config.embedding.min_cosine);
                        r.verdict = if d.keep { "keep" } else { "reject" }.into();
                        r.reason = d.reason;
                    }
                }
                recs
            }
            None => {
                let recs = run_stage(stage, &all, &live, tools, config)?;
                save_checkpoint(cp_dir, stage, &digest, &recs)?;
                recs
            }
        };

        let by_id: HashMap<&str, &ManifestRecord> = records.iter().map(|r| (r.id.as_str(), r)).collect();
        let mut stats = StageStats {
            stage: stage.name().into(),
            input_count: live.len(),
            ..Default::default()
        };
        // Duplicates share an id, so dedup verdicts are applied by position.
        let dedup_rejects: Vec<usize> = if stage == Stage::Dedup {
            dedup_positions(&all, &live)
        } else {
            Vec::new()
        };
        for (pos, &i) in live.iter().enumerate() {
            let keep = if stage == Stage::Dedup {
                !dedup_rejects.contains(&pos)
            } else {
                by_id.get(all[i].id.as_str()).is_some_and(|r| r.is_keep())
            };
            if keep {
                all[i].advance(stage.passed_status())?;
                stats.retained_count += 1;
                stats.total_tokens_retained += all[i].token_count;
            } else {
                let reason = by_id
                    .get(all[i].id.as_str())
                    .and_then(|r| r.reason.clone())
                    .unwrap_or_else(|| "rejected".into());
                all[i].reject(stage, reason)?;
                stats.rejected_count += 1;
            }
        }
        info!(
            stage = stage.name(),
            input = stats.input_count,
            rejected = stats.rejected_count,
            "stage complete"
        );
        report.stats.push(stats);
        report.manifest.extend(records);
    }

    for s in &mut all {
        if !s.status.is_rejected() {
            s.status = ScriptStatus::Retained;
        }
    }
    let mut retained: Vec<RtlScript> = all.into_iter().filter(|s| !s.status.is_rejected()).collect();
    retained.sort_by(|a, b| a.id.cmp(&b.id));
    report.retained = retained;

    if let Some(out) = out_dir {
        write_outputs(out, &report)?;
    }
    Ok(report)
}

/// Positions (into `live`) rejected as duplicates, first occurrence wins.
fn dedup_positions(all: &[RtlScript], live: &[usize]) -> Vec<usize> {
    let subset: Vec<RtlScript> = live.iter().map(|&i| all[i].clone()).collect();
    dedup_exact(subset)
        .iter()
        .enumerate()
        .filter(|(_, s)| s.status.is_rejected())
        .map(|(p, _)| p)
        .collect()
}

fn run_stage(
    stage: Stage,
    all: &[RtlScript],
    live: &[usize],
    tools: &PipelineTools<'_>,
    config: &CurateConfig,
) -> Result<Vec<ManifestRecord>, CorpusError> {
    let scripts: Vec<&RtlScript> = live.iter().map(|&i| &all[i]).collect();
    let records = match stage {
        Stage::Dedup => {
            let rejected = dedup_positions(all, live);
            scripts
                .iter()
                .enumerate()
                .map(|(p, s)| {
                    if rejected.contains(&p) {
                        ManifestRecord::reject(&s.id, stage, format!("duplicate of earlier file (path {})", s.path), None)
                    } else {
                        ManifestRecord::keep(&s.id, stage, None)
                    }
                })
                .collect()
        }
        Stage::Length => scripts
            .iter()
            .map(|s| match filter_length(s, config.max_tokens) {
                Verdict::Keep => ManifestRecord::keep(&s.id, stage, None),
                Verdict::Reject { reason } => ManifestRecord::reject(&s.id, stage, reason, None),
            })
            .collect(),
        Stage::Syntax => {
            let validator = tools
                .validator
                .ok_or_else(|| CorpusError::Config("syntax stage requires a validator".into()))?;
            let results = par_map(&scripts, |s| validate_syntax(s, validator));
            let mut out = Vec::with_capacity(results.len());
            for (s, r) in scripts.iter().zip(results) {
                out.push(match r? {
                    Verdict::Keep => ManifestRecord::keep(&s.id, stage, None),
                    Verdict::Reject { reason } => ManifestRecord::reject(&s.id, stage, reason, None),
                });
            }
            out
        }
        Stage::Decontamination => par_map(&scripts, |s| {
            let r = decontaminate(&shingles_of(&s.text), tools.goldens, config.decontam_threshold);
            if r.rejected {
                let m = r.matched.expect("rejection implies a match");
                ManifestRecord::reject(
                    &s.id,
                    stage,
                    format!("matches {}/{}", m.benchmark_id, m.problem_id),
                    Some(r.score),
                )
            } else {
                ManifestRecord::keep(&s.id, stage, Some(r.score))
            }
        }),
        Stage::Embedding => match tools.embedder {
            None => scripts.iter().map(|s| ManifestRecord::keep(&s.id, stage, None)).collect(),
            Some(embedder) => {
                let batch = config.embedding.batch_size.max(1);
                let chunks: Vec<&[&RtlScript]> = scripts.chunks(batch).collect();
                let results = par_map(&chunks, |chunk| {
                    let texts: Vec<String> = chunk.iter().map(|s| s.text.clone()).collect();
                    embedder.embed(&texts)
                });
                let mut out = Vec::with_capacity(scripts.len());
                for (chunk, vecs) in chunks.iter().zip(results) {
                    let vecs = vecs?;
                    for (s, v) in chunk.iter().zip(vecs) {
                        let d = filter_embedding_vector(&v, &tools.centroids, config.embedding.min_cosine)?;
                        out.push(if d.keep {
                            ManifestRecord::keep(&s.id, stage, d.score)
                        } else {
                            ManifestRecord::reject(&s.id, stage, d.reason.unwrap_or_default(), d.score)
                        });
                    }
                }
                out
            }
        },
    };
    let mut records: Vec<ManifestRecord> = records;
    // Stable sort: duplicate ids keep their input order.
    records.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(records)
}

fn write_outputs(out: &Path, report: &PipelineReport) -> Result<(), CorpusError> {
    std::fs::create_dir_all(out)?;
    let corpus: Vec<CorpusRecord> = report
        .retained
        .iter()
        .map(|s| CorpusRecord {
            id: s.id.clone(),
            text: s.text.clone(),
            token_count: s.token_count,
        })
        .collect();
    write_jsonl(&out.join("corpus.jsonl"), &corpus)?;
    write_jsonl(&out.join("manifest.jsonl"), &report.manifest)?;
    let stats = serde_json::json!({
        "token_unit": "lexical",
        "input_count": report.input_count,
        "retained_count": report.retained.len(),
        "total_tokens_retained": report.retained.iter().map(|s| s.token_count).sum::<usize>(),
        "stages": report.stats,
    });
    std::fs::write(
        out.join("stats.json"),
        serde_json::to_vec_pretty(&stats).map_err(std::io::Error::other)?,
    )?;
    Ok(())
}

/// Load reference snippet groups for centroid construction.
pub fn load_reference_groups(dir: &Path) -> std::io::Result<Vec<Vec<String>>> {
    let mut groups: std::collections::BTreeMap<PathBuf, Vec<String>> = Default::default();
    for s in load_scripts(dir)? {
        let group = Path::new(&s.path).parent().map(Path::to_path_buf).unwrap_or_default();
        groups.entry(group).or_default().push(s.text);
    }
    Ok(groups.into_values().collect())
}

#[cfg(feature = "native")]
pub use native::curate;

#[cfg(feature = "native")]
mod native {
    use super::*;

    /// Build tools from `config` and run the pipeline end to end.
    pub fn curate(
        input: &Path,
        goldens_dir: &Path,
        config: &CurateConfig,
        out_dir: &Path,
    ) -> Result<PipelineReport, CorpusError> {
        let scripts = load_scripts(input)?;
        let goldens = GoldenSet::load(goldens_dir, config.include_problem_text)?;
        if goldens.is_empty() && config.stages.contains(&Stage::Decontamination) {
            return Err(CorpusError::Config(format!(
                "no golden solutions found under {}",
                goldens_dir.display()
            )));
        }

        let validator = match &config.validator.command {
            Some(cmd) => Some(CommandValidator::new(cmd.clone())),
            None => CommandValidator::detect(),
        }
        .map(|mut v| {
            v.timeout = std::time::Duration::from_secs(config.validator.timeout_secs);
            v
        });
        if validator.is_none() && config.stages.contains(&Stage::Syntax) {
            return Err(ValidatorUnavailable("no validator configured and none detected".into()).into());
        }

        let emb = &config.embedding;
        let embedder: Option<Box<dyn EmbeddingProvider>> = match emb.provider {
            ProviderKind::None => None,
            ProviderKind::Lexical => Some(Box::new(LexicalEmbedder { dims: emb.dims })),
            ProviderKind::Http => {
                let url = emb
                    .url
                    .clone()
                    .ok_or_else(|| CorpusError::Config("embedding.url required for http provider".into()))?;
                let mut h = HttpEmbedder::new(url);
                h.api_key = emb.api_key_env.as_ref().and_then(|k| std::env::var(k).ok());
                Some(Box::new(h))
            }
        };
        let centroids = match (&embedder, &emb.references) {
            (Some(e), Some(refs)) => build_centroids(e.as_ref(), &load_reference_groups(refs)?)?,
            (Some(_), None) => {
                return Err(CorpusError::Config("embedding.references required when a provider is set".into()))
            }
            _ => Vec::new(),
        };

        let tools = PipelineTools {
            validator: validator.as_ref().map(|v| v as &dyn SyntaxValidator),
            embedder: embedder.as_deref(),
            centroids,
            goldens: &goldens,
        };
        run_pipeline(scripts, &tools, config, Some(out_dir))
    }
}
