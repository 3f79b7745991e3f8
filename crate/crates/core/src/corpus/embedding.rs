use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ngram::{fingerprint, lex_rtl};

use super::RtlScript;

#[derive(Debug, Clone, Error)]
pub enum EmbeddingError {
    #[error("embedder unavailable: {0}")]
    Unavailable(String),
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("malformed embedding response: {0}")]
    Malformed(String),
}

pub trait EmbeddingProvider: Send + Sync {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbeddingError>;

    fn describe(&self) -> String {
        "custom".to_string()
    }
}

/// Deterministic offline embedder: sublinear-TF hashed bag of lexical
/// unigrams and bigrams. Useful when no embedding service is available and
/// for tests; it measures lexical, not semantic, closeness.
#[derive(Debug, Clone)]
pub struct LexicalEmbedder {
    pub dims: usize,
}

impl Default for LexicalEmbedder {
    fn default() -> Self {
        Self { dims: 256 }
    }
}

impl LexicalEmbedder {
    pub fn embed_one(&self, text: &str) -> Vec<f32> {
        let toks = lex_rtl(text);
        let texts: Vec<&str> = toks.texts().collect();
        let mut counts = vec![0u32; self.dims];
        for t in &texts {
            counts[(fingerprint([*t]) % self.dims as u64) as usize] += 1;
        }
        for w in texts.windows(2) {
            counts[(fingerprint([w[0], w[1]]) % self.dims as u64) as usize] += 1;
        }
        counts
            .into_iter()
            .map(|c| if c == 0 { 0.0 } else { 1.0 + (c as f32).ln() })
            .collect()
    }
}

impl EmbeddingProvider for LexicalEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbeddingError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }

    fn describe(&self) -> String {
        format!("lexical:{}", self.dims)
    }
}

#[cfg(feature = "native")]
pub use http::HttpEmbedder;

#[cfg(feature = "native")]
mod http {
    use super::*;
    use std::time::Duration;

    #[derive(Serialize)]
    struct EmbedRequest<'a> {
        texts: &'a [String],
    }

    #[derive(Deserialize)]
    struct EmbedResponse {
        embeddings: Vec<Vec<f32>>,
    }

    /// POSTs `{texts: [...]}`, expects `{embeddings: [[...], ...]}`.
    #[derive(Debug, Clone)]
    pub struct HttpEmbedder {
        pub url: String,
        pub api_key: Option<String>,
        pub timeout: Duration,
    }

    impl HttpEmbedder {
        pub fn new(url: impl Into<String>) -> Self {
            Self {
                url: url.into(),
                api_key: None,
                timeout: Duration::from_secs(60),
            }
        }
    }

    impl EmbeddingProvider for HttpEmbedder {
        fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbeddingError> {
            let agent: ureq::Agent = ureq::Agent::config_builder()
                .timeout_global(Some(self.timeout))
                .http_status_as_error(false)
                .build()
                .into();
            let mut req = agent.post(&self.url);
            if let Some(key) = &self.api_key {
                req = req.header("Authorization", &format!("Bearer {key}"));
            }
            let mut resp = req
                .send_json(EmbedRequest { texts })
                .map_err(|e| EmbeddingError::Unavailable(e.to_string()))?;
            if !resp.status().is_success() {
                return Err(EmbeddingError::Unavailable(format!("HTTP {}", resp.status())));
            }
            let body: EmbedResponse = resp
                .body_mut()
                .read_json()
                .map_err(|e| EmbeddingError::Malformed(e.to_string()))?;
            if body.embeddings.len() != texts.len() {
                return Err(EmbeddingError::Malformed(format!(
                    "{} embeddings for {} texts",
                    body.embeddings.len(),
                    texts.len()
                )));
            }
            Ok(body.embeddings)
        }

        fn describe(&self) -> String {
            format!("http:{}", self.url)
        }
    }
}

pub fn cosine(a: &[f32], b: &[f32]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum();
    let na: f64 = a.iter().map(|x| f64::from(*x).powi(2)).sum();
    let nb: f64 = b.iter().map(|x| f64::from(*x).powi(2)).sum();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    // sqrt(na * nb) == na exactly when a == b, so identical vectors score 1.
    Some((dot / (na * nb).sqrt()).clamp(-1.0, 1.0))
}

/// One centroid per group: the mean embedding of the group's snippets.
pub fn build_centroids(
    embedder: &dyn EmbeddingProvider,
    groups: &[Vec<String>],
) -> Result<Vec<Vec<f32>>, EmbeddingError> {
    let mut centroids = Vec::new();
    let mut dim: Option<usize> = None;
    for group in groups.iter().filter(|g| !g.is_empty()) {
        let vecs = embedder.embed(group)?;
        let d = *dim.get_or_insert(vecs[0].len());
        let mut mean = vec![0f64; d];
        for v in &vecs {
            if v.len() != d {
                return Err(EmbeddingError::DimensionMismatch { expected: d, got: v.len() });
            }
            for (m, x) in mean.iter_mut().zip(v) {
                *m += f64::from(*x);
            }
        }
        centroids.push(mean.into_iter().map(|m| (m / vecs.len() as f64) as f32).collect());
    }
    Ok(centroids)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedDecision {
    /// Max cosine to any centroid; `None` for a zero-norm embedding.
    pub score: Option<f64>,
    pub keep: bool,
    pub reason: Option<String>,
}

impl EmbedDecision {
    pub fn from_score(score: Option<f64>, min_cosine: f64) -> Self {
        match score {
            None => Self {
                score: None,
                keep: false,
                reason: Some("zero-norm embedding, cosine undefined".into()),
            },
            Some(s) if s >= min_cosine => Self {
                score: Some(s),
                keep: true,
                reason: None,
            },
            Some(s) => Self {
                score: Some(s),
                keep: false,
                reason: Some(format!("max cosine {s:.4} below {min_cosine}")),
            },
        }
    }
}

pub fn filter_embedding_vector(
    embedding: &[f32],
    centroids: &[Vec<f32>],
    min_cosine: f64,
) -> Result<EmbedDecision, EmbeddingError> {
    let mut best: Option<f64> = None;
    let mut any_defined = false;
    for c in centroids {
        if c.len() != embedding.len() {
            return Err(EmbeddingError::DimensionMismatch {
                expected: c.len(),
                got: embedding.len(),
            });
        }
        if let Some(s) = cosine(embedding, c) {
            any_defined = true;
            best = Some(best.map_or(s, |b: f64| b.max(s)));
        }
    }
    Ok(EmbedDecision::from_score(if any_defined { best } else { None }, min_cosine))
}

pub fn filter_embedding(
    script: &RtlScript,
    embedder: &dyn EmbeddingProvider,
    centroids: &[Vec<f32>],
    min_cosine: f64,
) -> Result<EmbedDecision, EmbeddingError> {
    let v = embedder.embed(std::slice::from_ref(&script.text))?;
    let first = v
        .into_iter()
        .next()
        .ok_or_else(|| EmbeddingError::Malformed("no embedding returned".into()))?;
    filter_embedding_vector(&first, centroids, min_cosine)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Fixed(Vec<f32>);
    impl EmbeddingProvider for Fixed {
        fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbeddingError> {
            Ok(texts.iter().map(|_| self.0.clone()).collect())
        }
    }

    #[test]
    fn identical_to_centroid_is_kept() {
        let s = RtlScript::new("a", "module m; endmodule");
        let d = filter_embedding(&s, &Fixed(vec![0.3, 0.4]), &[vec![0.3, 0.4]], 1.0).unwrap();
        assert!(d.keep);
        assert!((d.score.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_vector_is_rejected_with_diagnostic() {
        let s = RtlScript::new("a", "x");
        let d = filter_embedding(&s, &Fixed(vec![0.0, 0.0]), &[vec![1.0, 0.0]], 0.0).unwrap();
        assert!(!d.keep);
        assert!(d.reason.unwrap().contains("zero-norm"));
    }

    #[test]
    fn vacuous_threshold_keeps_everything_valid() {
        let s = RtlScript::new("a", "x");
        let d = filter_embedding(&s, &Fixed(vec![-1.0, 0.0]), &[vec![1.0, 0.0]], 0.0);
        // Lexical embeddings are non-negative, so their cosine is never below 0.
        assert!(!d.unwrap().keep);
        let lex = LexicalEmbedder::default();
        let c = build_centroids(&lex, &[vec!["module q; endmodule".into()]]).unwrap();
        for text in ["wire a;", "always @(posedge clk) q <= d;", "zzz"] {
            let s = RtlScript::new("a", text);
            assert!(filter_embedding(&s, &lex, &c, 0.0).unwrap().keep);
        }
    }

    #[test]
    fn dimension_mismatch() {
        let s = RtlScript::new("a", "x");
        let e = filter_embedding(&s, &Fixed(vec![1.0, 0.0, 0.0]), &[vec![1.0, 0.0]], 0.3).unwrap_err();
        assert!(matches!(e, EmbeddingError::DimensionMismatch { expected: 2, got: 3 }));
    }

    #[test]
    fn centroid_is_mean() {
        struct ByLen;
        impl EmbeddingProvider for ByLen {
            fn embed(&self, t: &[String]) -> Result<Vec<Vec<f32>>, EmbeddingError> {
                Ok(t.iter().map(|s| vec![s.len() as f32, 1.0]).collect())
            }
        }
        let c = build_centroids(&ByLen, &[vec!["ab".into(), "abcd".into()]]).unwrap();
        assert_eq!(c, vec![vec![3.0, 1.0]]);
    }
}
