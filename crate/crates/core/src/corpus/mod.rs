//! Multi-stage RTL corpus curation: exact dedup, length filter, syntax
//! validation, benchmark decontamination and an embedding outlier filter.

mod embedding;
mod golden;
mod pipeline;
mod validator;

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ngram;
use crate::util::content_id;

pub use embedding::{
    build_centroids, cosine, filter_embedding, filter_embedding_vector, EmbedDecision,
    EmbeddingError, EmbeddingProvider, LexicalEmbedder,
};
#[cfg(feature = "native")]
pub use embedding::HttpEmbedder;
pub use golden::{decontaminate, DecontamResult, GoldenEntry, GoldenRef, GoldenSet};
pub use pipeline::{
    load_reference_groups, load_scripts, run_pipeline, CorpusRecord, CurateConfig,
    EmbeddingConfig, ManifestRecord, PipelineReport, PipelineTools, ProviderKind,
    ValidatorConfig,
};
#[cfg(feature = "native")]
pub use pipeline::curate;
pub use validator::{FnValidator, SyntaxCheck, SyntaxValidator, ValidatorUnavailable};
#[cfg(feature = "native")]
pub use validator::CommandValidator;

/// Default length cutoff in lexical tokens. Scripts strictly longer are rejected.
pub const DEFAULT_MAX_TOKENS: usize = 65_536;
/// Default Jaccard threshold. Scripts strictly above it are rejected.
pub const DEFAULT_DECONTAM_THRESHOLD: f64 = 0.8;
pub const DEFAULT_MIN_COSINE: f64 = 0.3;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error(transparent)]
    ValidatorUnavailable(#[from] ValidatorUnavailable),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("invalid status transition for {id}: {from} -> {to}")]
    StatusTransition {
        id: String,
        from: ScriptStatus,
        to: ScriptStatus,
    },
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Dedup,
    Length,
    Syntax,
    Decontamination,
    Embedding,
}

impl Stage {
    pub const PIPELINE_ORDER: [Stage; 5] = [
        Stage::Dedup,
        Stage::Length,
        Stage::Syntax,
        Stage::Decontamination,
        Stage::Embedding,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Dedup => "dedup",
            Stage::Length => "length",
            Stage::Syntax => "syntax",
            Stage::Decontamination => "decontamination",
            Stage::Embedding => "embedding",
        }
    }

    /// Status a script reaches by passing this stage.
    fn passed_status(self) -> ScriptStatus {
        match self {
            Stage::Dedup => ScriptStatus::Deduped,
            Stage::Length => ScriptStatus::LengthOk,
            Stage::Syntax => ScriptStatus::SyntaxOk,
            Stage::Decontamination => ScriptStatus::Decontaminated,
            Stage::Embedding => ScriptStatus::Retained,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "state")]
pub enum ScriptStatus {
    Raw,
    Deduped,
    LengthOk,
    SyntaxOk,
    Decontaminated,
    Retained,
    Rejected { stage: Stage, reason: String },
}

impl ScriptStatus {
    fn rank(&self) -> Option<u8> {
        match self {
            ScriptStatus::Raw => Some(0),
            ScriptStatus::Deduped => Some(1),
            ScriptStatus::LengthOk => Some(2),
            ScriptStatus::SyntaxOk => Some(3),
            ScriptStatus::Decontaminated => Some(4),
            ScriptStatus::Retained => Some(5),
            ScriptStatus::Rejected { .. } => None,
        }
    }

    pub fn is_rejected(&self) -> bool {
        matches!(self, ScriptStatus::Rejected { .. })
    }
}

impl fmt::Display for ScriptStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScriptStatus::Rejected { stage, .. } => write!(f, "rejected({stage})"),
            other => write!(f, "{other:?}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RtlScript {
    pub id: String,
    pub path: String,
    pub text: String,
    pub token_count: usize,
    pub status: ScriptStatus,
}

impl RtlScript {
    pub fn new(path: impl Into<String>, text: impl Into<String>) -> Self {
        let text = text.into();
        Self {
            id: content_id(text.as_bytes()),
            path: path.into(),
            token_count: ngram::count_tokens(&text),
            text,
            status: ScriptStatus::Raw,
        }
    }

    /// Move forward along the pipeline. Rejected scripts are terminal; any
    /// non-rejected status may only advance to a higher rank. When stages
    /// run in a non-default order the rank of a later stage may be lower;
    /// such a pass keeps the higher status already reached.
    pub fn advance(&mut self, next: ScriptStatus) -> Result<(), CorpusError> {
        let err = |s: &Self, next: ScriptStatus| CorpusError::StatusTransition {
            id: s.id.clone(),
            from: s.status.clone(),
            to: next,
        };
        match (self.status.rank(), next.rank()) {
            (None, _) => Err(err(self, next)),
            (Some(_), None) => {
                self.status = next;
                Ok(())
            }
            (Some(cur), Some(new)) if new > cur => {
                self.status = next;
                Ok(())
            }
            (Some(_), Some(_)) => Ok(()),
        }
    }

    pub fn reject(&mut self, stage: Stage, reason: impl Into<String>) -> Result<(), CorpusError> {
        self.advance(ScriptStatus::Rejected {
            stage,
            reason: reason.into(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    Keep,
    Reject { reason: String },
}

impl Verdict {
    pub fn is_keep(&self) -> bool {
        matches!(self, Verdict::Keep)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageStats {
    pub stage: String,
    pub input_count: usize,
    pub rejected_count: usize,
    pub retained_count: usize,
    pub total_tokens_retained: usize,
}

/// Keep the first script of each distinct text (by input order); mark the
/// rest rejected. Scripts already rejected pass through untouched.
pub fn dedup_exact(mut scripts: Vec<RtlScript>) -> Vec<RtlScript> {
    // id -> indices of kept scripts with that id; texts are compared too so a
    // hash collision can never drop a distinct file.
    let mut kept: HashMap<String, Vec<usize>> = HashMap::new();
    for i in 0..scripts.len() {
        if scripts[i].status.is_rejected() {
            continue;
        }
        let bucket = kept.entry(scripts[i].id.clone()).or_default();
        if bucket.iter().any(|&j| scripts[j].text == scripts[i].text) {
            let _ = scripts[i].reject(Stage::Dedup, "identical to an earlier file");
        } else {
            bucket.push(i);
            let _ = scripts[i].advance(ScriptStatus::Deduped);
        }
    }
    scripts
}

pub fn filter_length(script: &RtlScript, max_tokens: usize) -> Verdict {
    if script.token_count > max_tokens {
        Verdict::Reject {
            reason: format!("{} tokens exceeds {max_tokens}", script.token_count),
        }
    } else {
        Verdict::Keep
    }
}

pub fn validate_syntax(
    script: &RtlScript,
    validator: &dyn SyntaxValidator,
) -> Result<Verdict, ValidatorUnavailable> {
    Ok(match validator.check(&script.text)? {
        SyntaxCheck::Valid => Verdict::Keep,
        SyntaxCheck::Invalid(diag) => Verdict::Reject { reason: diag },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn id_is_content_hash() {
        let a = RtlScript::new("a.v", "module m; endmodule");
        let b = RtlScript::new("b/c.v", "module m; endmodule");
        assert_eq!(a.id, b.id);
        assert_eq!(a.token_count, 4);
        assert_ne!(a.id, RtlScript::new("a.v", "module n; endmodule").id);
    }

    #[test]
    fn status_is_monotone() {
        let mut s = RtlScript::new("a.v", "x");
        s.advance(ScriptStatus::LengthOk).unwrap();
        s.advance(ScriptStatus::Deduped).unwrap();
        assert_eq!(s.status, ScriptStatus::LengthOk);
        s.reject(Stage::Syntax, "bad").unwrap();
        assert!(s.advance(ScriptStatus::Retained).is_err());
        assert!(s.reject(Stage::Embedding, "again").is_err());
    }

    #[test]
    fn dedup_keeps_first_copy() {
        let s1 = RtlScript::new("s1.v", "module a; endmodule");
        let s1c = RtlScript::new("copy.v", "module a; endmodule");
        let s2 = RtlScript::new("s2.v", "module b; endmodule");
        let out = dedup_exact(vec![s1, s1c, s2]);
        let kept: Vec<_> = out.iter().filter(|s| !s.status.is_rejected()).map(|s| s.path.as_str()).collect();
        assert_eq!(kept, ["s1.v", "s2.v"]);
        assert!(matches!(out[1].status, ScriptStatus::Rejected { stage: Stage::Dedup, .. }));
    }

    #[test]
    fn dedup_all_distinct_is_identity() {
        let v: Vec<_> = (0..5).map(|i| RtlScript::new(format!("{i}.v"), format!("wire w{i};"))).collect();
        let out = dedup_exact(v.clone());
        assert!(out.iter().all(|s| s.status == ScriptStatus::Deduped));
        assert_eq!(out.iter().map(|s| &s.id).collect::<Vec<_>>(), v.iter().map(|s| &s.id).collect::<Vec<_>>());
    }

    #[test]
    fn dedup_planted_copies() {
        let mut v: Vec<_> = (0..60).map(|i| RtlScript::new(format!("{i}.v"), format!("module m{i}; endmodule"))).collect();
        for i in 0..40 {
            let src = v[i % 60].clone();
            v.push(RtlScript::new(format!("dup{i}.v"), src.text));
        }
        assert_eq!(v.len(), 100);
        let kept = dedup_exact(v).into_iter().filter(|s| !s.status.is_rejected()).count();
        assert_eq!(kept, 60);
    }

    #[test]
    fn length_boundary_is_strict() {
        let mut s = RtlScript::new("a.v", "");
        s.token_count = 65_536;
        assert_eq!(filter_length(&s, DEFAULT_MAX_TOKENS), Verdict::Keep);
        s.token_count = 65_537;
        assert!(!filter_length(&s, DEFAULT_MAX_TOKENS).is_keep());
    }

    #[test]
    fn long_generated_file_is_rejected() {
        let text: String = (0..23_334).map(|i| format!("w{i} ;\n")).collect::<String>() + "x";
        let s = RtlScript::new("big.v", text);
        assert_eq!(s.token_count, 23_334 * 2 + 1);
        assert!(filter_length(&s, DEFAULT_MAX_TOKENS).is_keep());
        let text: String = (0..35_000).map(|i| format!("w{i} ;\n")).collect();
        let s = RtlScript::new("bigger.v", text);
        assert_eq!(s.token_count, 70_000);
        assert!(!filter_length(&s, DEFAULT_MAX_TOKENS).is_keep());
    }

    #[test]
    fn syntax_verdict_carries_diagnostic() {
        let v = FnValidator::new(|t: &str| {
            if t.contains("endmodule") && !t.contains("endmodul ") && t.trim_end().ends_with("endmodule") {
                SyntaxCheck::Valid
            } else {
                SyntaxCheck::Invalid("expected endmodule".into())
            }
        });
        assert!(validate_syntax(&RtlScript::new("a", "module m; endmodule"), &v).unwrap().is_keep());
        assert_eq!(
            validate_syntax(&RtlScript::new("a", "module m; endmodul"), &v).unwrap(),
            Verdict::Reject { reason: "expected endmodule".into() }
        );
    }
}
