use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ngram::{jaccard_from_counts, shingles_of, ShingleSet};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldenRef {
    pub benchmark_id: String,
    pub problem_id: String,
}

#[derive(Debug, Clone)]
pub struct GoldenEntry {
    pub benchmark_id: String,
    pub problem_id: String,
    pub shingles: ShingleSet,
}

/// Benchmark reference texts, shingled, with an inverted index from
/// fingerprint to entry for fast max-similarity queries.
#[derive(Debug, Clone, Default)]
pub struct GoldenSet {
    entries: Vec<GoldenEntry>,
    postings: HashMap<u64, Vec<u32>>,
}

impl GoldenSet {
    pub fn new(entries: Vec<GoldenEntry>) -> Self {
        let mut postings: HashMap<u64, Vec<u32>> = HashMap::new();
        for (i, e) in entries.iter().enumerate() {
            for fp in e.shingles.iter() {
                postings.entry(fp).or_default().push(i as u32);
            }
        }
        Self { entries, postings }
    }

    pub fn from_texts<'a>(items: impl IntoIterator<Item = (&'a str, &'a str, &'a str)>) -> Self {
        Self::new(
            items
                .into_iter()
                .map(|(bench, prob, text)| GoldenEntry {
                    benchmark_id: bench.to_string(),
                    problem_id: prob.to_string(),
                    shingles: shingles_of(text),
                })
                .collect(),
        )
    }

    pub fn entries(&self) -> &[GoldenEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Load goldens from `dir`. Accepts the benchmark layout
    /// (`problems/<id>/golden.v`, optionally nested one level per benchmark)
    /// or a flat directory of `.v`/`.sv` files keyed by file stem. With
    /// `include_problem_text`, each problem's `spec.md` becomes an extra
    /// entry with problem id `<id>#spec`.
    pub fn load(dir: &Path, include_problem_text: bool) -> std::io::Result<Self> {
        let mut items: Vec<(String, String, String)> = Vec::new();
        let default_bench = dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "goldens".into());
        for entry in walkdir::WalkDir::new(dir).sort_by_file_name() {
            let entry = entry.map_err(std::io::Error::other)?;
            let path = entry.path();
            if !entry.file_type().is_file() {
                continue;
            }
            let name = path.file_name().unwrap_or_default().to_string_lossy();
            let parent = path.parent().unwrap_or(dir);
            let is_problem_dir = parent
                .parent()
                .and_then(|p| p.file_name())
                .is_some_and(|n| n == "problems");
            if is_problem_dir {
                let problem_id = parent.file_name().unwrap_or_default().to_string_lossy().into_owned();
                let bench = benchmark_id_for(parent).unwrap_or_else(|| default_bench.clone());
                if name == "golden.v" || name == "golden.sv" {
                    items.push((bench, problem_id, std::fs::read_to_string(path)?));
                } else if include_problem_text && name == "spec.md" {
                    items.push((bench, format!("{problem_id}#spec"), std::fs::read_to_string(path)?));
                }
            } else if name.ends_with(".v") || name.ends_with(".sv") {
                let stem = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
                items.push((default_bench.clone(), stem, std::fs::read_to_string(path)?));
            }
        }
        Ok(Self::from_texts(items.iter().map(|(b, p, t)| (b.as_str(), p.as_str(), t.as_str()))))
    }
}

/// Benchmark id of a problem directory: `meta.json`'s `benchmark_id` when
/// present, else the directory above `problems/`.
fn benchmark_id_for(problem_dir: &Path) -> Option<String> {
    if let Ok(raw) = std::fs::read_to_string(problem_dir.join("meta.json")) {
        if let Ok(v) = serde_json::from_str::<serde_json::Value>(&raw) {
            if let Some(b) = v.get("benchmark_id").and_then(|b| b.as_str()) {
                return Some(b.to_string());
            }
        }
    }
    problem_dir
        .parent()?
        .parent()?
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecontamResult {
    /// Highest similarity over all goldens (0 when nothing overlaps).
    pub score: f64,
    pub matched: Option<GoldenRef>,
    pub rejected: bool,
}

/// Reject iff the maximum Jaccard similarity against any golden is strictly
/// above `threshold`. Ties on the score resolve to the earliest entry.
pub fn decontaminate(script: &ShingleSet, goldens: &GoldenSet, threshold: f64) -> DecontamResult {
    let mut overlap: HashMap<u32, usize> = HashMap::new();
    for fp in script.iter() {
        if let Some(list) = goldens.postings.get(&fp) {
            for &g in list {
                *overlap.entry(g).or_default() += 1;
            }
        }
    }
    let mut best: Option<(u32, f64)> = None;
    for (&g, &inter) in &overlap {
        let score = jaccard_from_counts(inter, script.count(), goldens.entries[g as usize].shingles.count());
        let better = match best {
            None => true,
            Some((bg, bs)) => score > bs || (score == bs && g < bg),
        };
        if better {
            best = Some((g, score));
        }
    }
    match best {
        Some((g, score)) => {
            let e = &goldens.entries[g as usize];
            DecontamResult {
                score,
                matched: Some(GoldenRef {
                    benchmark_id: e.benchmark_id.clone(),
                    problem_id: e.problem_id.clone(),
                }),
                rejected: score > threshold,
            }
        }
        None => DecontamResult {
            score: 0.0,
            matched: None,
            rejected: false,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ngram::jaccard;

    const GOLDEN: &str = "module top_module(input clk, input reset, output reg [9:0] q);
  always @(posedge clk) begin
    if (reset) q <= 10'd0;
    else if (q == 10'd999) q <= 10'd0;
    else q <= q + 10'd1;
  end
endmodule";

    #[test]
    fn verbatim_copy_scores_one() {
        let g = GoldenSet::from_texts([("ve", "counter", GOLDEN)]);
        let r = decontaminate(&shingles_of(GOLDEN), &g, 0.8);
        assert_eq!(r.score, 1.0);
        assert!(r.rejected);
        assert_eq!(r.matched.unwrap().problem_id, "counter");
    }

    #[test]
    fn unrelated_script_is_kept() {
        let g = GoldenSet::from_texts([("ve", "counter", GOLDEN)]);
        let r = decontaminate(&shingles_of("module x(input a, output b); assign b = ~a; endmodule"), &g, 0.8);
        assert_eq!(r.score, 0.0);
        assert!(!r.rejected);
        assert!(r.matched.is_none());
    }

    #[test]
    fn index_agrees_with_pairwise_jaccard() {
        let other = GOLDEN.replace("999", "500");
        let g = GoldenSet::from_texts([("a", "1", GOLDEN), ("a", "2", "module y; wire q; endmodule")]);
        let s = shingles_of(&other);
        let r = decontaminate(&s, &g, 0.8);
        assert_eq!(r.score, jaccard(&s, &g.entries()[0].shingles));
    }

    #[test]
    fn threshold_is_strict() {
        let g = GoldenSet::from_texts([("a", "1", GOLDEN)]);
        let r = decontaminate(&shingles_of(GOLDEN), &g, 1.0);
        assert!(!r.rejected);
    }
}
