//! Benchmark harness: problem loading, simulator-backed verification,
//! n-trial runs in plain / scaled / truncated mode, pass@k and pass rate.

mod bench;
pub mod mock;
mod run;
#[cfg(feature = "native")]
mod sim;

pub use bench::{load_benchmark, Benchmark, BenchmarkProblem, FailureConvention, ModuleInterface};
pub use run::{
    run_benchmark, run_curve, CurvePoint, EvalConfig, EvalReport, EvalSummary, Generator, TrialMatrix,
    TrialRecord, CURVE_VARIANTS,
};
#[cfg(feature = "native")]
pub use sim::{golden_sanity, ProblemSetVerifier, SimVerifier};

use std::collections::HashMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{SyntaxCheck, SyntaxValidator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    FailCompile,
    FailTest,
    /// Counted as a failure of the candidate.
    Timeout,
    /// The environment failed, not the candidate.
    HarnessError,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::FailCompile => "fail_compile",
            Verdict::FailTest => "fail_test",
            Verdict::Timeout => "timeout",
            Verdict::HarnessError => "harness_error",
        }
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyOutcome {
    pub verdict: Verdict,
    pub diagnostics: String,
    /// Kept on failure for inspection.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workdir: Option<PathBuf>,
}

impl VerifyOutcome {
    pub fn new(verdict: Verdict, diagnostics: impl Into<String>) -> Self {
        Self {
            verdict,
            diagnostics: diagnostics.into(),
            workdir: None,
        }
    }
}

/// The simulator (or whatever stands behind the verifier) cannot run at
/// all; every verdict would be meaningless, so callers abort.
#[derive(Debug, Clone, Error)]
#[error("verifier unavailable: {0}")]
pub struct VerifierUnavailable(pub String);

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid pass@k arguments: n={n}, c={c}, k={k}")]
    InvalidArgs { n: u64, c: u64, k: u64 },
    #[error("benchmark: {0}")]
    Benchmark(String),
    #[error(transparent)]
    Verifier(#[from] VerifierUnavailable),
    #[error(transparent)]
    Scale(#[from] crate::ttscale::ScaleError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Decides whether a candidate solves a problem.
pub trait SolutionVerifier: Send + Sync {
    fn verify(&self, problem_id: &str, candidate: &str) -> Result<VerifyOutcome, VerifierUnavailable>;

    fn describe(&self) -> String {
        "custom".into()
    }
}

/// Closure adapter.
pub struct FnVerifier<F>(F);

impl<F: Fn(&str, &str) -> VerifyOutcome + Send + Sync> FnVerifier<F> {
    pub fn new(f: F) -> Self {
        Self(f)
    }
}

impl<F: Fn(&str, &str) -> VerifyOutcome + Send + Sync> SolutionVerifier for FnVerifier<F> {
    fn verify(&self, problem_id: &str, candidate: &str) -> Result<VerifyOutcome, VerifierUnavailable> {
        Ok((self.0)(problem_id, candidate))
    }
}

fn normalize(code: &str) -> String {
    code.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Pass iff the candidate equals the golden up to whitespace. Much weaker
/// than a testbench; meant for mocks and dry runs.
pub struct ExactMatchVerifier {
    goldens: HashMap<String, String>,
}

impl ExactMatchVerifier {
    pub fn new<'a>(goldens: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        Self {
            goldens: goldens.into_iter().map(|(id, g)| (id.to_string(), normalize(g))).collect(),
        }
    }
}

impl SolutionVerifier for ExactMatchVerifier {
    fn verify(&self, problem_id: &str, candidate: &str) -> Result<VerifyOutcome, VerifierUnavailable> {
        let golden = self
            .goldens
            .get(problem_id)
            .ok_or_else(|| VerifierUnavailable(format!("no golden for {problem_id}")))?;
        Ok(if normalize(candidate) == *golden {
            VerifyOutcome::new(Verdict::Pass, "")
        } else {
            VerifyOutcome::new(Verdict::FailTest, "differs from golden")
        })
    }

    fn describe(&self) -> String {
        "exact-match".into()
    }
}

/// Fallback for problems without a testbench: a syntactically valid
/// candidate passes. Says nothing about function.
pub struct SyntaxOnlyVerifier<'a>(pub &'a dyn SyntaxValidator);

impl SolutionVerifier for SyntaxOnlyVerifier<'_> {
    fn verify(&self, _problem_id: &str, candidate: &str) -> Result<VerifyOutcome, VerifierUnavailable> {
        match self.0.check(candidate) {
            Ok(SyntaxCheck::Valid) => Ok(VerifyOutcome::new(Verdict::Pass, "syntax only")),
            Ok(SyntaxCheck::Invalid(d)) => Ok(VerifyOutcome::new(Verdict::FailCompile, d)),
            Err(e) => Err(VerifierUnavailable(e.0)),
        }
    }

    fn describe(&self) -> String {
        format!("syntax-only:{}", self.0.describe())
    }
}

/// Unbiased pass@k, `1 − C(n−c, k) / C(n, k)`, as the product
/// `1 − ∏_{i=n−c+1}^{n} (1 − k/i)` so no binomial is ever formed.
pub fn pass_at_k(n: u64, c: u64, k: u64) -> Result<f64, EvalError> {
    if k == 0 || k > n || c > n {
        return Err(EvalError::InvalidArgs { n, c, k });
    }
    if n - c < k {
        return Ok(1.0);
    }
    let prod: f64 = (n - c + 1..=n).map(|i| 1.0 - k as f64 / i as f64).product();
    Ok(1.0 - prod)
}

/// Fraction of problems solved at least once; 0 for an empty set.
pub fn pass_rate(matrices: &[TrialMatrix]) -> f64 {
    if matrices.is_empty() {
        return 0.0;
    }
    matrices.iter().filter(|m| m.c >= 1).count() as f64 / matrices.len() as f64
}
