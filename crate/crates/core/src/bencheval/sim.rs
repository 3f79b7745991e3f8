use std::collections::HashMap;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};
use std::time::Duration;

use regex::Regex;

use super::{Benchmark, BenchmarkProblem, FailureConvention, SolutionVerifier, Verdict, VerifierUnavailable, VerifyOutcome};
use crate::util::{expand_template, run_with_timeout, unique_workdir, which, ProcOutput, Semaphore};

/// Called with every freshly created workdir, before anything is written.
pub type WorkdirHook = Arc<dyn Fn(&Path) + Send + Sync>;

/// Compile-then-run simulator behind two command templates. Placeholders:
/// `{workdir}`, `{candidate}`, `{testbench}`, `{tb_top}`, `{exe}`. An empty
/// run template means the compile step also simulates.
#[derive(Clone)]
pub struct SimVerifier {
    pub compile: Vec<String>,
    pub run: Vec<String>,
    pub compile_timeout: Duration,
    /// Per simulation; exceeding it is a `timeout` verdict.
    pub timeout: Duration,
    pub work_root: PathBuf,
    /// Keep workdirs of passing candidates too (failures are always kept).
    pub keep_passing: bool,
    slots: Arc<Semaphore>,
    hook: Option<WorkdirHook>,
}

impl std::fmt::Debug for SimVerifier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SimVerifier")
            .field("compile", &self.compile)
            .field("run", &self.run)
            .field("timeout", &self.timeout)
            .field("work_root", &self.work_root)
            .finish_non_exhaustive()
    }
}

fn argv(parts: &[&str]) -> Vec<String> {
    parts.iter().map(|s| s.to_string()).collect()
}

impl SimVerifier {
    pub fn new(compile: Vec<String>, run: Vec<String>) -> Self {
        let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
        Self {
            compile,
            run,
            compile_timeout: Duration::from_secs(300),
            timeout: Duration::from_secs(60),
            work_root: std::env::temp_dir().join("rtlreason-sim"),
            keep_passing: false,
            slots: Arc::new(Semaphore::new(jobs)),
            hook: None,
        }
    }

    pub fn icarus() -> Self {
        Self::new(
            argv(&["iverilog", "-g2012", "-s", "{tb_top}", "-o", "{exe}", "{testbench}", "{candidate}"]),
            argv(&["vvp", "-n", "{exe}"]),
        )
    }

    /// `--binary` build. Optimisation is turned off: the testbenches are
    /// tiny and C++ compile time dominates.
    pub fn verilator(binary: &str) -> Self {
        Self::new(
            argv(&[
                binary,
                "--binary",
                "--timing",
                "-Wno-fatal",
                "-Wno-lint",
                "-Wno-style",
                "--top-module",
                "{tb_top}",
                "-Mdir",
                "{workdir}/obj",
                "-o",
                "{exe}",
                "-MAKEFLAGS",
                "PYTHON3=python3 OPT_FAST=-O0 OPT_SLOW=-O0 OPT_GLOBAL=-O0",
                "{testbench}",
                "{candidate}",
            ]),
            argv(&["{exe}"]),
        )
    }

    /// Icarus if installed, else Verilator (native or the pip wrapper).
    pub fn detect() -> Option<Self> {
        if which("iverilog") && which("vvp") {
            Some(Self::icarus())
        } else if which("verilator") {
            Some(Self::verilator("verilator"))
        } else if which("verilator-cli") {
            Some(Self::verilator("verilator-cli"))
        } else {
            None
        }
    }

    pub fn with_work_root(mut self, root: impl Into<PathBuf>) -> Self {
        self.work_root = root.into();
        self
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    /// Cap on concurrent simulator processes, independent of the LLM pool.
    pub fn with_max_jobs(mut self, n: usize) -> Self {
        self.slots = Arc::new(Semaphore::new(n));
        self
    }

    pub fn with_workdir_hook(mut self, hook: WorkdirHook) -> Self {
        self.hook = Some(hook);
        self
    }

    fn step(&self, template: &[String], vars: &[(&str, &str)], cwd: &Path, timeout: Duration) -> Result<io::Result<ProcOutput>, VerifierUnavailable> {
        let cmd = expand_template(template, vars);
        match run_with_timeout(&cmd, Some(cwd), timeout) {
            Err(e) if e.kind() == io::ErrorKind::NotFound || e.kind() == io::ErrorKind::PermissionDenied => {
                Err(VerifierUnavailable(format!("cannot launch {:?}: {e}", template.first())))
            }
            other => Ok(other),
        }
    }

    /// Compile `candidate` against the problem's testbench in a fresh
    /// workdir and run the simulation.
    pub fn verify(&self, candidate: &str, problem: &BenchmarkProblem) -> Result<VerifyOutcome, VerifierUnavailable> {
        if candidate.trim().is_empty() {
            return Ok(VerifyOutcome::new(Verdict::FailCompile, "empty candidate"));
        }
        let _slot = self.slots.acquire();
        let label = format!("{}_{}", problem.benchmark_id, problem.problem_id);
        let dir = match unique_workdir(&self.work_root, &label) {
            Ok(d) => d,
            Err(e) => return Ok(VerifyOutcome::new(Verdict::HarnessError, format!("workdir: {e}"))),
        };
        if let Some(h) = &self.hook {
            h(&dir);
        }
        let mut out = self.verify_in(&dir, candidate, problem)?;
        if out.verdict == Verdict::Pass && !self.keep_passing {
            let _ = std::fs::remove_dir_all(&dir);
        } else {
            out.workdir = Some(dir);
        }
        Ok(out)
    }

    fn verify_in(&self, dir: &Path, candidate: &str, problem: &BenchmarkProblem) -> Result<VerifyOutcome, VerifierUnavailable> {
        let cand = dir.join("candidate.v");
        if let Err(e) = std::fs::write(&cand, candidate) {
            return Ok(VerifyOutcome::new(Verdict::HarnessError, format!("write candidate: {e}")));
        }
        let tb = match std::path::absolute(&problem.testbench_path) {
            Ok(p) if p.is_file() => p,
            _ => {
                return Ok(VerifyOutcome::new(
                    Verdict::HarnessError,
                    format!("testbench missing: {}", problem.testbench_path.display()),
                ))
            }
        };
        let exe = dir.join("sim");
        let (d, c, t, e) = (dir.to_string_lossy(), cand.to_string_lossy(), tb.to_string_lossy(), exe.to_string_lossy());
        let vars = [("workdir", &*d), ("candidate", &*c), ("testbench", &*t), ("tb_top", problem.tb_top.as_str()), ("exe", &*e)];

        let compiled = match self.step(&self.compile, &vars, dir, self.compile_timeout)? {
            Ok(o) => o,
            Err(e) => return Ok(VerifyOutcome::new(Verdict::HarnessError, format!("compile step: {e}"))),
        };
        let _ = std::fs::write(dir.join("compile.log"), compiled.combined());
        if compiled.timed_out {
            return Ok(VerifyOutcome::new(Verdict::Timeout, format!("compile exceeded {:?}", self.compile_timeout)));
        }
        if !compiled.success() {
            return Ok(VerifyOutcome::new(Verdict::FailCompile, tail(&compiled.combined(), 40)));
        }
        let ran = if self.run.is_empty() {
            compiled
        } else {
            let o = match self.step(&self.run, &vars, dir, self.timeout)? {
                Ok(o) => o,
                Err(e) => return Ok(VerifyOutcome::new(Verdict::HarnessError, format!("run step: {e}"))),
            };
            let _ = std::fs::write(dir.join("sim.log"), o.combined());
            o
        };
        if ran.timed_out {
            return Ok(VerifyOutcome::new(Verdict::Timeout, format!("simulation exceeded {:?}", self.timeout)));
        }
        if !ran.success() {
            return Ok(VerifyOutcome::new(
                Verdict::FailTest,
                format!("simulation exited with {:?}\n{}", ran.status, tail(&ran.combined(), 40)),
            ));
        }
        Ok(match failure_marker(&ran.stdout, problem.failure) {
            Some(why) => VerifyOutcome::new(Verdict::FailTest, format!("{why}\n{}", tail(&ran.stdout, 40))),
            None => VerifyOutcome::new(Verdict::Pass, tail(&ran.stdout, 5)),
        })
    }
}

fn tail(text: &str, n: usize) -> String {
    let lines: Vec<&str> = text.lines().collect();
    lines[lines.len().saturating_sub(n)..].join("\n")
}

fn mismatch_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"Mismatches:\s*(\d+)").expect("static regex"))
}

fn error_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b(error|fail|failed)\b").expect("static regex"))
}

/// Why the simulation output counts as a failure, if it does.
pub(crate) fn failure_marker(stdout: &str, convention: FailureConvention) -> Option<String> {
    match convention {
        FailureConvention::MismatchCounter => {
            let counts: Vec<u64> = mismatch_re()
                .captures_iter(stdout)
                .filter_map(|c| c[1].parse().ok())
                .collect();
            match counts.iter().sum::<u64>() {
                _ if counts.is_empty() => Some("no \"Mismatches:\" line in output".into()),
                0 => None,
                n => Some(format!("{n} mismatches")),
            }
        }
        FailureConvention::ErrorKeyword => error_re()
            .find(stdout)
            .map(|m| format!("failure keyword {:?} in output", m.as_str())),
    }
}

/// A loaded benchmark plus a simulator: verification by problem id.
pub struct ProblemSetVerifier {
    problems: HashMap<String, BenchmarkProblem>,
    pub sim: SimVerifier,
}

impl ProblemSetVerifier {
    pub fn new(bench: &Benchmark, sim: SimVerifier) -> Self {
        Self {
            problems: bench.problems.iter().map(|p| (p.problem_id.clone(), p.clone())).collect(),
            sim,
        }
    }
}

impl SolutionVerifier for ProblemSetVerifier {
    fn verify(&self, problem_id: &str, candidate: &str) -> Result<VerifyOutcome, VerifierUnavailable> {
        match self.problems.get(problem_id) {
            Some(p) => self.sim.verify(candidate, p),
            None => Ok(VerifyOutcome::new(Verdict::HarnessError, format!("unknown problem {problem_id}"))),
        }
    }

    fn describe(&self) -> String {
        self.sim.compile.join(" ")
    }
}

/// Run every golden through its own testbench; returns the problems whose
/// golden does not pass.
pub fn golden_sanity(bench: &Benchmark, sim: &SimVerifier) -> Result<Vec<(String, VerifyOutcome)>, VerifierUnavailable> {
    let results = crate::util::par_map(&bench.problems, |p| {
        let golden = p.golden().map_err(|e| VerifierUnavailable(format!("{}: {e}", p.golden_path.display())))?;
        sim.verify(&golden, p).map(|o| (p.problem_id.clone(), o))
    });
    let mut bad = Vec::new();
    for r in results {
        let (id, o) = r?;
        if o.verdict != Verdict::Pass {
            bad.push((id, o));
        }
    }
    Ok(bad)
}
