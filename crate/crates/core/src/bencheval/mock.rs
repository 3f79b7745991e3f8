//! A deterministic stand-in for a reasoning model. Correctness depends
//! only on how much reasoning precedes the answer, so truncation, plain
//! decoding and corrective continuation land at predictable points of the
//! reasoning-length / accuracy curve.

use crate::llmclient::mock::finish;
use crate::llmclient::{BackendError, CompletionBackend, GenRequest, GenResponse};

const OPENING: &str = "First, I read the interface and the timing requirements.";
const SENTENCE: &str = "Wait, let me recheck the state transitions once more.";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimProblem {
    /// Substring of the problem statement that identifies it.
    pub key: String,
    pub golden: String,
    pub wrong: String,
    /// Reasoning words needed before the answer comes out right.
    pub difficulty: usize,
}

impl SimProblem {
    pub fn new(key: impl Into<String>, golden: impl Into<String>, wrong: impl Into<String>, difficulty: usize) -> Self {
        Self { key: key.into(), golden: golden.into(), wrong: wrong.into(), difficulty }
    }
}

/// Every pass writes `sentences_per_pass` sentences, the first of a fresh
/// trace plain and the rest opening with "Wait,", then closes the thinking
/// region and answers. A transcript that already ends in `</think>` gets
/// only the answer.
#[derive(Debug, Clone)]
pub struct SimulatedReasoner {
    pub problems: Vec<SimProblem>,
    pub sentences_per_pass: usize,
}

impl SimulatedReasoner {
    pub fn new(problems: Vec<SimProblem>) -> Self {
        Self { problems, sentences_per_pass: 4 }
    }

    pub fn words_per_sentence() -> usize {
        SENTENCE.split_whitespace().count()
    }

    fn answer(&self, transcript: &str, reasoning_words: usize) -> String {
        let sol = match self.problems.iter().find(|p| transcript.contains(&p.key)) {
            Some(p) if reasoning_words >= p.difficulty => p.golden.as_str(),
            Some(p) => p.wrong.as_str(),
            None => "module top_module;\nendmodule",
        };
        format!("<answer>\n```verilog\n{}\n```\n</answer>", sol.trim_end())
    }
}

fn words(s: &str) -> usize {
    s.split_whitespace().count()
}

impl CompletionBackend for SimulatedReasoner {
    fn complete(&self, req: &GenRequest) -> Result<GenResponse, BackendError> {
        let text = &req.prompt;
        let region = text.find("<think>").map_or("", |i| &text[i + "<think>".len()..]);
        let full = if text.trim_end().ends_with("</think>") {
            let reasoning = region.trim_end().trim_end_matches("</think>");
            format!("\n{}", self.answer(text, words(reasoning)))
        } else {
            let mut sentences = Vec::with_capacity(self.sentences_per_pass);
            for i in 0..self.sentences_per_pass {
                sentences.push(if i == 0 && words(region) == 0 { OPENING } else { SENTENCE });
            }
            let new = sentences.join(" ");
            let total = words(region) + words(&new);
            format!("{new}\n</think>\n{}", self.answer(text, total))
        };
        Ok(finish(&full, req))
    }

    fn model_id(&self) -> String {
        "simulated-reasoner".into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llmclient::FinishReason;

    fn reasoner() -> SimulatedReasoner {
        SimulatedReasoner::new(vec![SimProblem::new("adder", "module good; endmodule", "module bad; endmodule", 40)])
    }

    #[test]
    fn fresh_pass_answers_from_its_own_reasoning() {
        let r = reasoner();
        let out = r.complete(&GenRequest::continuation("Build an adder\n<think>\n", 1000, 0.2)).unwrap();
        assert!(out.text.starts_with(OPENING));
        assert_eq!(out.text.matches("Wait,").count(), 3);
        assert!(out.text.contains("module bad"), "36 words < 40");
        assert_eq!(out.finish_reason, FinishReason::Stop);
    }

    #[test]
    fn continuation_accumulates() {
        let r = reasoner();
        let first = r.complete(&GenRequest::continuation("Build an adder\n<think>\n", 1000, 0.2)).unwrap();
        let reasoning = first.text.split("</think>").next().unwrap();
        let spliced = format!("Build an adder\n<think>\n{reasoning}Wait, try again. ");
        let second = r.complete(&GenRequest::continuation(spliced, 1000, 0.2)).unwrap();
        assert!(second.text.starts_with("Wait,"));
        assert!(second.text.contains("module good"));
    }

    #[test]
    fn closed_think_gets_answer_only() {
        let r = reasoner();
        let out = r.complete(&GenRequest::continuation("adder\n<think>\nshort</think>", 1000, 0.2)).unwrap();
        assert!(out.text.starts_with("\n<answer>"));
        assert!(out.text.contains("module bad"));
    }

    #[test]
    fn limit_applies() {
        let out = reasoner().complete(&GenRequest::continuation("adder\n<think>\n", 5, 0.2)).unwrap();
        assert_eq!(out.finish_reason, FinishReason::Length);
        assert_eq!(out.generated_tokens, 5);
    }
}
