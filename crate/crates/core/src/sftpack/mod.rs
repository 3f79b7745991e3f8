//! Loss-masked SFT sequences and fixed-length chunk packing.
//!
//! A triple ⟨x, r, y⟩ becomes
//! `x <think> r </think> y <eos>` with loss mask 0 on `x <think>` and 1 on
//! everything from `r` on, so the model learns to close its own reasoning
//! block and to stop.

mod format;
mod tokenizer;

pub use format::{read_meta, write_chunks, ChunkReader, PackMeta};
pub use tokenizer::{load_tokenizer, BpeTokenizer, Special, Tokenizer, ToyTokenizer};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cotgen::CotTriple;

pub const DEFAULT_CHUNK_LEN: usize = 32_768;

#[derive(Debug, Error)]
pub enum SftError {
    #[error("tokenizer failure: {0}")]
    Tokenizer(String),
    #[error("{segment} segment of {doc_id} is empty")]
    EmptySegment { doc_id: String, segment: &'static str },
    #[error("sequence {doc_id} has {len} tokens, longer than the chunk length {chunk_len}")]
    SequenceTooLong { doc_id: String, len: usize, chunk_len: usize },
    #[error("malformed chunk file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Half-open token range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Separators {
    /// `x <think> r </think> y <eos>`.
    #[default]
    Template,
    /// Plain concatenation `x r y`.
    None,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedSequence {
    pub doc_id: String,
    pub token_ids: Vec<u32>,
    pub loss_mask: Vec<u8>,
    /// `x` plus the opening separator.
    pub prompt_span: Span,
    /// `r` plus the closing reasoning separator.
    pub reasoning_span: Span,
    /// `y` plus eos.
    pub answer_span: Span,
}

impl MaskedSequence {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    pub fn masked_count(&self) -> usize {
        self.loss_mask.iter().filter(|&&m| m == 1).count()
    }
}

/// Build from raw segment texts. `r` and `y` must be non-empty after
/// tokenization; `x` may be empty.
pub fn build_masked_segments(
    doc_id: &str,
    x: &str,
    r: &str,
    y: &str,
    tok: &dyn Tokenizer,
    sep: Separators,
) -> Result<MaskedSequence, SftError> {
    let empty = |segment| SftError::EmptySegment { doc_id: doc_id.to_string(), segment };
    let xi = tok.encode(x)?;
    let ri = tok.encode(r)?;
    let yi = tok.encode(y)?;
    if ri.is_empty() {
        return Err(empty("reasoning"));
    }
    if yi.is_empty() {
        return Err(empty("answer"));
    }
    let mut ids = Vec::with_capacity(xi.len() + ri.len() + yi.len() + 3);
    let push_seg = |ids: &mut Vec<u32>, seg: Vec<u32>, closer: Option<u32>| {
        let start = ids.len();
        ids.extend(seg);
        if sep == Separators::Template {
            ids.extend(closer);
        }
        Span { start, end: ids.len() }
    };
    let prompt_span = push_seg(&mut ids, xi, Some(tok.special(Special::ThinkOpen)));
    let reasoning_span = push_seg(&mut ids, ri, Some(tok.special(Special::ThinkClose)));
    let answer_span = push_seg(&mut ids, yi, Some(tok.special(Special::Eos)));
    let mut loss_mask = vec![0u8; ids.len()];
    loss_mask[reasoning_span.start..].fill(1);
    Ok(MaskedSequence {
        doc_id: doc_id.to_string(),
        token_ids: ids,
        loss_mask,
        prompt_span,
        reasoning_span,
        answer_span,
    })
}

/// `x` is the problem statement, `r` the reasoning, `y` the solution.
pub fn build_masked_sequence(
    triple: &CotTriple,
    tok: &dyn Tokenizer,
    sep: Separators,
) -> Result<MaskedSequence, SftError> {
    build_masked_segments(&triple.id, &triple.spec.problem_text, &triple.reasoning, &triple.solution, tok, sep)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PackMode {
    /// Documents are placed whole; longer than a chunk is an error.
    #[default]
    Whole,
    /// The stream is cut every L tokens; documents may continue into the
    /// next chunk.
    Spill,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PackPolicy {
    /// Keep one open chunk; close it (padding the tail) when the next
    /// document does not fit. Streaming, preserves order.
    #[default]
    NextFit,
    /// Place each document into the earliest chunk with room. Chunks are
    /// emitted in creation order once the input is exhausted.
    FirstFit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackOptions {
    pub chunk_len: usize,
    pub mode: PackMode,
    pub policy: PackPolicy,
    pub pad_id: u32,
}

impl PackOptions {
    pub fn new(pad_id: u32) -> Self {
        Self {
            chunk_len: DEFAULT_CHUNK_LEN,
            mode: PackMode::Whole,
            policy: PackPolicy::NextFit,
            pad_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocBoundary {
    pub start: usize,
    pub end: usize,
    pub doc_id: String,
    /// The document began in an earlier chunk (spill mode).
    pub continued: bool,
    /// The document goes on in the next chunk (spill mode).
    pub continues: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedChunk {
    pub token_ids: Vec<u32>,
    pub loss_mask: Vec<u8>,
    pub docs: Vec<DocBoundary>,
    /// Start of the trailing pad region; equals the length when unpadded.
    pub pad_start: usize,
}

impl PackedChunk {
    fn open(cap: usize) -> Self {
        Self {
            token_ids: Vec::with_capacity(cap),
            loss_mask: Vec::with_capacity(cap),
            docs: Vec::new(),
            pad_start: 0,
        }
    }

    fn push_slice(&mut self, seq: &MaskedSequence, range: std::ops::Range<usize>, continued: bool, continues: bool) {
        let start = self.token_ids.len();
        self.token_ids.extend_from_slice(&seq.token_ids[range.clone()]);
        self.loss_mask.extend_from_slice(&seq.loss_mask[range]);
        self.docs.push(DocBoundary {
            start,
            end: self.token_ids.len(),
            doc_id: seq.doc_id.clone(),
            continued,
            continues,
        });
    }

    fn seal(mut self, len: usize, pad: u32) -> Self {
        self.pad_start = self.token_ids.len();
        self.token_ids.resize(len, pad);
        self.loss_mask.resize(len, 0);
        self
    }

    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    pub fn pad_len(&self) -> usize {
        self.len() - self.pad_start
    }
}

pub fn pack_chunks(seqs: &[MaskedSequence], opts: &PackOptions) -> Result<Vec<PackedChunk>, SftError> {
    let l = opts.chunk_len;
    if l == 0 {
        return Err(SftError::Format("chunk length must be positive".into()));
    }
    match opts.mode {
        PackMode::Spill => Ok(pack_spill(seqs, l, opts.pad_id)),
        PackMode::Whole => {
            if let Some(s) = seqs.iter().find(|s| s.len() > l) {
                return Err(SftError::SequenceTooLong {
                    doc_id: s.doc_id.clone(),
                    len: s.len(),
                    chunk_len: l,
                });
            }
            Ok(match opts.policy {
                PackPolicy::NextFit => pack_next_fit(seqs, l, opts.pad_id),
                PackPolicy::FirstFit => pack_first_fit(seqs, l, opts.pad_id),
            })
        }
    }
}

fn pack_next_fit(seqs: &[MaskedSequence], l: usize, pad: u32) -> Vec<PackedChunk> {
    let mut out = Vec::new();
    let mut cur = PackedChunk::open(l);
    for s in seqs.iter().filter(|s| !s.is_empty()) {
        if cur.token_ids.len() + s.len() > l {
            out.push(std::mem::replace(&mut cur, PackedChunk::open(l)).seal(l, pad));
        }
        cur.push_slice(s, 0..s.len(), false, false);
    }
    if !cur.docs.is_empty() {
        out.push(cur.seal(l, pad));
    }
    out
}

fn pack_first_fit(seqs: &[MaskedSequence], l: usize, pad: u32) -> Vec<PackedChunk> {
    let mut open: Vec<PackedChunk> = Vec::new();
    for s in seqs.iter().filter(|s| !s.is_empty()) {
        let slot = match open.iter().position(|c| c.token_ids.len() + s.len() <= l) {
            Some(i) => i,
            None => {
                open.push(PackedChunk::open(l));
                open.len() - 1
            }
        };
        open[slot].push_slice(s, 0..s.len(), false, false);
    }
    open.into_iter().map(|c| c.seal(l, pad)).collect()
}

fn pack_spill(seqs: &[MaskedSequence], l: usize, pad: u32) -> Vec<PackedChunk> {
    let mut out = Vec::new();
    let mut cur = PackedChunk::open(l);
    for s in seqs.iter().filter(|s| !s.is_empty()) {
        let mut pos = 0;
        while pos < s.len() {
            let room = l - cur.token_ids.len();
            let take = room.min(s.len() - pos);
            cur.push_slice(s, pos..pos + take, pos > 0, pos + take < s.len());
            pos += take;
            if cur.token_ids.len() == l {
                out.push(std::mem::replace(&mut cur, PackedChunk::open(l)).seal(l, pad));
            }
        }
    }
    if !cur.docs.is_empty() {
        out.push(cur.seal(l, pad));
    }
    out
}

/// Tokenize a triple dataset, pack it and write the chunk directory.
/// Triples that fail to tokenize, have an empty segment or (in whole mode)
/// exceed the chunk length are skipped with a warning and counted.
pub fn pack_dataset(
    triples: &[CotTriple],
    tok: &dyn Tokenizer,
    sep: Separators,
    opts: &PackOptions,
    out_dir: &std::path::Path,
) -> Result<PackMeta, SftError> {
    let built = crate::util::par_map(triples, |t| build_masked_sequence(t, tok, sep));
    let mut seqs = Vec::with_capacity(built.len());
    let mut skipped = 0;
    for r in built {
        match r {
            Ok(s) if opts.mode == PackMode::Whole && s.len() > opts.chunk_len => {
                tracing::warn!(doc = %s.doc_id, len = s.len(), "longer than a chunk; skipped");
                skipped += 1;
            }
            Ok(s) => seqs.push(s),
            Err(e) => {
                tracing::warn!("skipping triple: {e}");
                skipped += 1;
            }
        }
    }
    let chunks = pack_chunks(&seqs, opts)?;
    let meta = PackMeta {
        chunk_len: opts.chunk_len,
        mode: opts.mode,
        policy: opts.policy,
        tokenizer: tok.name(),
        chunks: chunks.len(),
        documents: seqs.len(),
        skipped_documents: skipped,
        content_tokens: seqs.iter().map(MaskedSequence::len).sum(),
        masked_tokens: seqs.iter().map(MaskedSequence::masked_count).sum(),
        pad_tokens: chunks.iter().map(PackedChunk::pad_len).sum(),
    };
    write_chunks(out_dir, &chunks, &meta)?;
    Ok(meta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cotgen::{Specification, TripleMeta};

    fn seq_of_len(id: &str, n: usize) -> MaskedSequence {
        MaskedSequence {
            doc_id: id.into(),
            token_ids: (0..n as u32).map(|i| 4 + i % 90).collect(),
            loss_mask: (0..n).map(|i| u8::from(i >= n / 2)).collect(),
            prompt_span: Span { start: 0, end: n / 2 },
            reasoning_span: Span { start: n / 2, end: n },
            answer_span: Span { start: n, end: n },
        }
    }

    fn layout(chunks: &[PackedChunk]) -> Vec<Vec<(String, usize)>> {
        chunks
            .iter()
            .map(|c| c.docs.iter().map(|d| (d.doc_id.clone(), d.end - d.start)).collect())
            .collect()
    }

    #[test]
    fn mask_arithmetic_without_separators() {
        let x = "0123456789";
        let r = "abcdefghijklmnopqrst";
        let y = "vwxyz";
        let s = build_masked_segments("d", x, r, y, &ToyTokenizer, Separators::None).unwrap();
        assert_eq!(s.masked_count(), 25);
        assert_eq!(s.len(), 35);
        let s = build_masked_segments("d", x, r, y, &ToyTokenizer, Separators::Template).unwrap();
        assert_eq!(s.masked_count(), 27);
        assert_eq!((s.prompt_span.len(), s.reasoning_span.len(), s.answer_span.len()), (11, 21, 6));
    }

    #[test]
    fn toy_fixture_arrays() {
        let t = CotTriple {
            id: "t".into(),
            spec: Specification { problem_text: "Hi".into(), source_script_id: "t".into() },
            reasoning: "ok".into(),
            solution: "m;".into(),
            meta: TripleMeta::default(),
        };
        let s = build_masked_sequence(&t, &ToyTokenizer, Separators::Template).unwrap();
        // H=0x48->44 i=0x69->77 <think>=1 o=0x6F->83 k=0x6B->79 </think>=2 m=0x6D->81 ;=0x3B->31 eos=3
        assert_eq!(s.token_ids, vec![44, 77, 1, 83, 79, 2, 81, 31, 3]);
        assert_eq!(s.loss_mask, vec![0, 0, 0, 1, 1, 1, 1, 1, 1]);
    }

    #[test]
    fn empty_segments() {
        let e = build_masked_segments("d", "x", "", "y", &ToyTokenizer, Separators::Template).unwrap_err();
        assert!(matches!(e, SftError::EmptySegment { segment: "reasoning", .. }));
        let e = build_masked_segments("d", "x", "r", "", &ToyTokenizer, Separators::Template).unwrap_err();
        assert!(matches!(e, SftError::EmptySegment { segment: "answer", .. }));
    }

    #[test]
    fn exact_fit_and_too_long() {
        let opts = PackOptions::new(0);
        let c = pack_chunks(&[seq_of_len("a", 16_384), seq_of_len("b", 16_384)], &opts).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].pad_len(), 0);
        let e = pack_chunks(&[seq_of_len("a", 32_769)], &opts).unwrap_err();
        assert!(matches!(e, SftError::SequenceTooLong { len: 32_769, .. }));
    }

    #[test]
    fn next_fit_vs_first_fit() {
        let seqs = [seq_of_len("a", 20_000), seq_of_len("b", 15_000), seq_of_len("c", 12_000)];
        let nf = pack_chunks(&seqs, &PackOptions::new(0)).unwrap();
        assert_eq!(layout(&nf), vec![vec![("a".into(), 20_000)], vec![("b".into(), 15_000), ("c".into(), 12_000)]]);
        let ff = pack_chunks(&seqs, &PackOptions { policy: PackPolicy::FirstFit, ..PackOptions::new(0) }).unwrap();
        assert_eq!(layout(&ff), vec![vec![("a".into(), 20_000), ("c".into(), 12_000)], vec![("b".into(), 15_000)]]);
        for c in nf.iter().chain(&ff) {
            assert_eq!(c.len(), 32_768);
            assert!(c.token_ids[c.pad_start..].iter().all(|&t| t == 0));
            assert!(c.loss_mask[c.pad_start..].iter().all(|&m| m == 0));
        }
    }

    #[test]
    fn spill_splits_documents() {
        let opts = PackOptions { chunk_len: 10, mode: PackMode::Spill, ..PackOptions::new(0) };
        let c = pack_chunks(&[seq_of_len("a", 7), seq_of_len("b", 8)], &opts).unwrap();
        assert_eq!(layout(&c), vec![vec![("a".into(), 7), ("b".into(), 3)], vec![("b".into(), 5)]]);
        assert!(c[0].docs[1].continues && c[1].docs[0].continued);
        assert_eq!(c[1].pad_len(), 5);
        // Longer than a chunk is fine when spilling.
        assert_eq!(pack_chunks(&[seq_of_len("z", 25)], &opts).unwrap().len(), 3);
    }
}
