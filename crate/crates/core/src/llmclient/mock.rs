//! In-process backends for tests, demos and offline dry runs. Mock token
//! accounting counts whitespace-separated words.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};

use super::{BackendError, CompletionBackend, FinishReason, GenRequest, GenResponse};

/// Cut `text` after its `max`-th word. Returns the kept prefix, the number
/// of words kept, and whether anything was cut.
pub fn truncate_words(text: &str, max: u32) -> (String, u32, bool) {
    let mut words = 0u32;
    let mut in_word = false;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            in_word = false;
        } else if !in_word {
            if words == max {
                return (text[..i].trim_end().to_string(), words, true);
            }
            in_word = true;
            words += 1;
        }
    }
    (text.to_string(), words, false)
}

/// Apply a request's stop sequences and token limit to a full completion.
pub fn finish(full: &str, req: &GenRequest) -> GenResponse {
    let mut text = full;
    if let Some(cut) = req.stop.iter().filter_map(|s| full.find(s.as_str())).min() {
        text = &full[..cut];
    }
    let (kept, n, truncated) = truncate_words(text, req.max_tokens);
    let reason = if truncated {
        FinishReason::Length
    } else {
        FinishReason::Stop
    };
    GenResponse {
        text: kept,
        finish_reason: reason,
        generated_tokens: n,
    }
}

/// Serves canned completions in order and records every request.
pub struct ScriptedBackend {
    queue: Mutex<VecDeque<String>>,
    repeat: Option<String>,
    requests: Arc<Mutex<Vec<GenRequest>>>,
}

impl ScriptedBackend {
    pub fn new<S: Into<String>>(responses: impl IntoIterator<Item = S>) -> Self {
        Self {
            queue: Mutex::new(responses.into_iter().map(Into::into).collect()),
            repeat: None,
            requests: Arc::default(),
        }
    }

    /// Serves the same completion forever.
    pub fn repeating(text: impl Into<String>) -> Self {
        Self {
            queue: Mutex::default(),
            repeat: Some(text.into()),
            requests: Arc::default(),
        }
    }

    pub fn requests(&self) -> Arc<Mutex<Vec<GenRequest>>> {
        self.requests.clone()
    }
}

impl CompletionBackend for ScriptedBackend {
    fn complete(&self, req: &GenRequest) -> Result<GenResponse, BackendError> {
        self.requests.lock().unwrap_or_else(|e| e.into_inner()).push(req.clone());
        let next = self.queue.lock().unwrap_or_else(|e| e.into_inner()).pop_front();
        let text = next
            .or_else(|| self.repeat.clone())
            .ok_or_else(|| BackendError::Rejected("scripted responses exhausted".into()))?;
        Ok(finish(&text, req))
    }

    fn model_id(&self) -> String {
        "scripted-mock".into()
    }
}

type Handler = dyn Fn(&GenRequest) -> Result<GenResponse, BackendError> + Send + Sync;

/// Backend driven by a closure, for behaviour that depends on the request.
pub struct FnBackend {
    f: Box<Handler>,
    name: String,
}

impl FnBackend {
    pub fn new(f: impl Fn(&GenRequest) -> Result<GenResponse, BackendError> + Send + Sync + 'static) -> Self {
        Self {
            f: Box::new(f),
            name: "fn-mock".into(),
        }
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }
}

impl CompletionBackend for FnBackend {
    fn complete(&self, req: &GenRequest) -> Result<GenResponse, BackendError> {
        (self.f)(req)
    }

    fn model_id(&self) -> String {
        self.name.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn word_truncation() {
        assert_eq!(truncate_words("a b  c", 2), ("a b".into(), 2, true));
        assert_eq!(truncate_words("  a b", 5), ("  a b".into(), 2, false));
        assert_eq!(truncate_words("a\nb\n", 2), ("a\nb\n".into(), 2, false));
        assert_eq!(truncate_words("abc def", 1), ("abc".into(), 1, true));
        assert_eq!(truncate_words("abc \n", 1), ("abc \n".into(), 1, false));
    }

    #[test]
    fn stop_sequences_cut_first() {
        let mut req = GenRequest::fresh("p", 100, 0.0);
        req.stop = vec!["</answer>".into()];
        let r = finish("x y </answer> z", &req);
        assert_eq!(r.text, "x y ");
        assert_eq!(r.finish_reason, FinishReason::Stop);
    }

    #[test]
    fn exhausted_script_is_rejected() {
        let b = ScriptedBackend::new(Vec::<String>::new());
        assert!(matches!(b.complete(&GenRequest::fresh("p", 1, 0.0)), Err(BackendError::Rejected(_))));
    }
}
