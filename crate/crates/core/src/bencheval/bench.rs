use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::ngram::{lex_rtl, TokenKind};

/// How a testbench reports failure on stdout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureConvention {
    /// A `Mismatches: N` line is required; N > 0 fails.
    MismatchCounter,
    /// Any of the words error / fail / failed fails.
    ErrorKeyword,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModuleInterface {
    pub name: String,
    pub ports: Vec<String>,
}

impl ModuleInterface {
    /// Name and port names of the first module declared in `code`
    /// (ANSI or non-ANSI header; ranges and parameters skipped).
    pub fn parse(code: &str) -> Option<Self> {
        let toks = lex_rtl(code).tokens;
        let m = toks.iter().position(|t| t.text == "module")?;
        let name = toks.get(m + 1).filter(|t| t.kind == TokenKind::Identifier)?.text.clone();
        let mut i = m + 2;
        // Skip a `#( ... )` parameter list.
        if toks.get(i).is_some_and(|t| t.text == "#") {
            i += 1;
            let mut depth = 0;
            while let Some(t) = toks.get(i) {
                match t.text.as_str() {
                    "(" => depth += 1,
                    ")" => {
                        depth -= 1;
                        if depth == 0 {
                            i += 1;
                            break;
                        }
                    }
                    _ => {}
                }
                i += 1;
            }
        }
        let mut ports = Vec::new();
        if toks.get(i).is_some_and(|t| t.text == "(") {
            let mut depth = 0usize;
            let mut brackets = 0usize;
            let mut last_ident: Option<&str> = None;
            for t in &toks[i..] {
                match t.text.as_str() {
                    "(" => depth += 1,
                    "[" => brackets += 1,
                    "]" => brackets = brackets.saturating_sub(1),
                    ")" | "," if depth == 1 && brackets == 0 => {
                        if let Some(p) = last_ident.take() {
                            ports.push(p.to_string());
                        }
                        if t.text == ")" {
                            break;
                        }
                    }
                    ")" => depth -= 1,
                    _ if t.kind == TokenKind::Identifier && brackets == 0 && depth == 1 => {
                        last_ident = Some(&t.text);
                    }
                    _ => {}
                }
            }
        }
        Some(Self { name, ports })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkProblem {
    pub benchmark_id: String,
    pub problem_id: String,
    pub spec_text: String,
    pub testbench_path: PathBuf,
    pub golden_path: PathBuf,
    pub interface: ModuleInterface,
    /// Top-level module of the testbench.
    pub tb_top: String,
    pub failure: FailureConvention,
}

impl BenchmarkProblem {
    pub fn golden(&self) -> std::io::Result<String> {
        std::fs::read_to_string(&self.golden_path)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Benchmark {
    pub id: String,
    pub root: PathBuf,
    pub problems: Vec<BenchmarkProblem>,
}

impl Benchmark {
    pub fn get(&self, problem_id: &str) -> Option<&BenchmarkProblem> {
        self.problems.iter().find(|p| p.problem_id == problem_id)
    }

    /// `(source, markdown)` pairs: each problem's statement, for rule
    /// generation.
    pub fn markdown_docs(&self) -> Vec<(String, String)> {
        self.problems
            .iter()
            .map(|p| (format!("{}/{}", self.id, p.problem_id), p.spec_text.clone()))
            .collect()
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct BenchMeta {
    id: Option<String>,
    failure: Option<FailureConvention>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProblemMeta {
    benchmark_id: Option<String>,
    top_module: Option<String>,
    tb_top: Option<String>,
    failure: Option<FailureConvention>,
}

fn read_json<T: for<'de> Deserialize<'de> + Default>(path: &Path) -> Result<T, EvalError> {
    if !path.exists() {
        return Ok(T::default());
    }
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| EvalError::Benchmark(format!("{}: {e}", path.display())))
}

/// Load `dir/problems/<id>/{spec.md, testbench.v, golden.v, meta.json}`.
/// `meta.json` and the top-level `benchmark.json` are optional; the
/// benchmark id defaults to the directory name and the failure convention
/// to "mismatch counter" when the testbench mentions `Mismatches`.
pub fn load_benchmark(dir: &Path) -> Result<Benchmark, EvalError> {
    let meta: BenchMeta = read_json(&dir.join("benchmark.json"))?;
    let id = meta.id.unwrap_or_else(|| {
        dir.file_name()
            .map_or_else(|| "bench".to_string(), |n| n.to_string_lossy().into_owned())
    });
    let pdir = dir.join("problems");
    let mut entries: Vec<PathBuf> = std::fs::read_dir(&pdir)
        .map_err(|e| EvalError::Benchmark(format!("{}: {e}", pdir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    entries.sort();
    let mut problems = Vec::with_capacity(entries.len());
    for p in entries {
        let problem_id = p.file_name().expect("read_dir entry").to_string_lossy().into_owned();
        let need = |name: &str| {
            let f = p.join(name);
            if f.is_file() {
                Ok(f)
            } else {
                Err(EvalError::Benchmark(format!("{problem_id}: missing {name}")))
            }
        };
        let spec_text = std::fs::read_to_string(need("spec.md")?)?;
        let testbench_path = need("testbench.v")?;
        let golden_path = need("golden.v")?;
        let pm: ProblemMeta = read_json(&p.join("meta.json"))?;
        let golden = std::fs::read_to_string(&golden_path)?;
        let mut interface = ModuleInterface::parse(&golden)
            .ok_or_else(|| EvalError::Benchmark(format!("{problem_id}: no module in golden.v")))?;
        if let Some(top) = pm.top_module {
            interface.name = top;
        }
        let failure = match pm.failure.or(meta.failure) {
            Some(f) => f,
            None if std::fs::read_to_string(&testbench_path)?.contains("Mismatches") => FailureConvention::MismatchCounter,
            None => FailureConvention::ErrorKeyword,
        };
        problems.push(BenchmarkProblem {
            benchmark_id: pm.benchmark_id.unwrap_or_else(|| id.clone()),
            problem_id,
            spec_text,
            testbench_path,
            golden_path,
            interface,
            tb_top: pm.tb_top.unwrap_or_else(|| "tb".into()),
            failure,
        });
    }
    Ok(Benchmark {
        id,
        root: dir.to_path_buf(),
        problems,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interfaces() {
        let a = ModuleInterface::parse("module top_module(input clk, input [7:0] in, output reg [9:0] q);endmodule").unwrap();
        assert_eq!(a, ModuleInterface { name: "top_module".into(), ports: vec!["clk".into(), "in".into(), "q".into()] });
        let b = ModuleInterface::parse("module m #(parameter W = 4) (a, b); input a; output b; endmodule").unwrap();
        assert_eq!(b.ports, vec!["a", "b"]);
        let c = ModuleInterface::parse("module n; endmodule").unwrap();
        assert!(c.ports.is_empty());
        assert!(ModuleInterface::parse("wire x;").is_none());
    }

    #[test]
    fn loads_layout() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("mini");
        for (id, tb) in [("b_two", "$display(\"ERROR\");"), ("a_one", "$display(\"Mismatches: 0\");")] {
            let p = root.join("problems").join(id);
            std::fs::create_dir_all(&p).unwrap();
            std::fs::write(p.join("spec.md"), format!("Problem {id}")).unwrap();
            std::fs::write(p.join("testbench.v"), tb).unwrap();
            std::fs::write(p.join("golden.v"), "module top_module(input a, output b); endmodule").unwrap();
        }
        std::fs::write(root.join("problems/b_two/meta.json"), r#"{"tb_top": "bench_top"}"#).unwrap();
        let b = load_benchmark(&root).unwrap();
        assert_eq!(b.id, "mini");
        assert_eq!(b.problems.iter().map(|p| p.problem_id.as_str()).collect::<Vec<_>>(), ["a_one", "b_two"]);
        assert_eq!(b.problems[0].failure, FailureConvention::MismatchCounter);
        assert_eq!(b.problems[1].failure, FailureConvention::ErrorKeyword);
        assert_eq!(b.problems[1].tb_top, "bench_top");
        std::fs::remove_file(root.join("problems/a_one/golden.v")).unwrap();
        assert!(matches!(load_benchmark(&root), Err(EvalError::Benchmark(m)) if m.contains("golden.v")));
    }
}
