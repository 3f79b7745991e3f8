use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SyntaxCheck {
    Valid,
    Invalid(String),
}

/// The external tool could not be launched. Callers abort instead of
/// letting scripts through unchecked.
#[derive(Debug, Clone, Error)]
#[error("syntax validator unavailable: {0}")]
pub struct ValidatorUnavailable(pub String);

pub trait SyntaxValidator: Send + Sync {
    fn check(&self, text: &str) -> Result<SyntaxCheck, ValidatorUnavailable>;

    /// Short description recorded in checkpoints so a changed tool
    /// invalidates cached verdicts.
    fn describe(&self) -> String {
        "custom".to_string()
    }
}

/// Adapter for closures; used by tests and embedders of the library.
pub struct FnValidator<F>(F);

impl<F> FnValidator<F>
where
    F: Fn(&str) -> SyntaxCheck + Send + Sync,
{
    pub fn new(f: F) -> Self {
        Self(f)
    }
}

impl<F> SyntaxValidator for FnValidator<F>
where
    F: Fn(&str) -> SyntaxCheck + Send + Sync,
{
    fn check(&self, text: &str) -> Result<SyntaxCheck, ValidatorUnavailable> {
        Ok((self.0)(text))
    }
}

#[cfg(feature = "native")]
pub use command::CommandValidator;

#[cfg(feature = "native")]
mod command {
    use std::path::PathBuf;
    use std::time::Duration;

    use super::*;
    use crate::util::{expand_template, run_with_timeout, unique_workdir, which};

    /// Runs an external checker on a file. `{file}` in the template is
    /// replaced by the path of a temporary copy of the text; exit status 0
    /// means valid.
    #[derive(Debug, Clone)]
    pub struct CommandValidator {
        pub command: Vec<String>,
        pub timeout: Duration,
        pub scratch: PathBuf,
    }

    impl CommandValidator {
        pub fn new(command: Vec<String>) -> Self {
            Self {
                command,
                timeout: Duration::from_secs(30),
                scratch: std::env::temp_dir().join("rtlreason-lint"),
            }
        }

        pub fn verilator(binary: &str) -> Self {
            Self::new(
                [binary, "--lint-only", "-Wno-fatal", "-Wno-lint", "-Wno-style", "{file}"]
                    .map(String::from)
                    .to_vec(),
            )
        }

        pub fn icarus() -> Self {
            Self::new(["iverilog", "-g2012", "-t", "null", "{file}"].map(String::from).to_vec())
        }

        /// First installed of Icarus, Verilator, or the Python-packaged
        /// Verilator wrapper.
        pub fn detect() -> Option<Self> {
            if which("iverilog") {
                Some(Self::icarus())
            } else if which("verilator") {
                Some(Self::verilator("verilator"))
            } else if which("verilator-cli") {
                Some(Self::verilator("verilator-cli"))
            } else {
                None
            }
        }
    }

    impl SyntaxValidator for CommandValidator {
        fn check(&self, text: &str) -> Result<SyntaxCheck, ValidatorUnavailable> {
            let dir = unique_workdir(&self.scratch, "lint")
                .map_err(|e| ValidatorUnavailable(format!("scratch dir: {e}")))?;
            let file = dir.join("script.v");
            std::fs::write(&file, text).map_err(|e| ValidatorUnavailable(e.to_string()))?;
            let argv = expand_template(&self.command, &[("file", &file.to_string_lossy())]);
            let result = run_with_timeout(&argv, Some(&dir), self.timeout);
            let _ = std::fs::remove_dir_all(&dir);
            let out = result.map_err(|e| {
                ValidatorUnavailable(format!("cannot launch {:?}: {e}", self.command.first()))
            })?;
            if out.timed_out {
                return Ok(SyntaxCheck::Invalid(format!(
                    "validator timed out after {:?}",
                    self.timeout
                )));
            }
            if out.success() {
                Ok(SyntaxCheck::Valid)
            } else {
                let diag: String = out.combined().lines().take(20).collect::<Vec<_>>().join("\n");
                Ok(SyntaxCheck::Invalid(diag))
            }
        }

        fn describe(&self) -> String {
            self.command.join(" ")
        }
    }
}
