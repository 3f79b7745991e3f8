//! On-disk chunk format. All integers are little-endian.
//!
//! `chunks.bin`: the 8-byte magic `RTLPACK1`, then per chunk
//!
//! ```text
//! u32        L
//! u32 × L    token ids
//! u8 × ⌈L/8⌉ loss mask, bit i of byte j is token 8j+i
//! u32        document count D
//! D ×        u32 start, u32 end, u8 flags (1 = continued, 2 = continues),
//!            u16 id length, id bytes (UTF-8)
//! ```
//!
//! `chunks.idx`: magic `RTLPIDX1`, u64 chunk count, then one u64 byte
//! offset into `chunks.bin` per chunk. `pack_meta.json` holds run totals.

use std::fs::File;
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DocBoundary, PackMode, PackPolicy, PackedChunk, SftError};

const BIN_MAGIC: &[u8; 8] = b"RTLPACK1";
const IDX_MAGIC: &[u8; 8] = b"RTLPIDX1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackMeta {
    pub chunk_len: usize,
    pub mode: PackMode,
    pub policy: PackPolicy,
    pub tokenizer: String,
    pub chunks: usize,
    pub documents: usize,
    pub skipped_documents: usize,
    pub content_tokens: usize,
    pub masked_tokens: usize,
    pub pad_tokens: usize,
}

fn encode_chunk(c: &PackedChunk, out: &mut Vec<u8>) -> Result<(), SftError> {
    out.extend_from_slice(&(c.len() as u32).to_le_bytes());
    for id in &c.token_ids {
        out.extend_from_slice(&id.to_le_bytes());
    }
    let mut bits = vec![0u8; c.len().div_ceil(8)];
    for (i, &m) in c.loss_mask.iter().enumerate() {
        if m != 0 {
            bits[i / 8] |= 1 << (i % 8);
        }
    }
    out.extend_from_slice(&bits);
    out.extend_from_slice(&(c.docs.len() as u32).to_le_bytes());
    for d in &c.docs {
        let id = d.doc_id.as_bytes();
        let id_len = u16::try_from(id.len()).map_err(|_| SftError::Format(format!("document id too long: {}", d.doc_id)))?;
        out.extend_from_slice(&(d.start as u32).to_le_bytes());
        out.extend_from_slice(&(d.end as u32).to_le_bytes());
        out.push(u8::from(d.continued) | (u8::from(d.continues) << 1));
        out.extend_from_slice(&id_len.to_le_bytes());
        out.extend_from_slice(id);
    }
    Ok(())
}

pub fn write_chunks(dir: &Path, chunks: &[PackedChunk], meta: &PackMeta) -> Result<(), SftError> {
    std::fs::create_dir_all(dir)?;
    let mut bin = BufWriter::new(File::create(dir.join("chunks.bin"))?);
    bin.write_all(BIN_MAGIC)?;
    let mut offsets = Vec::with_capacity(chunks.len());
    let mut pos = BIN_MAGIC.len() as u64;
    let mut buf = Vec::new();
    for c in chunks {
        buf.clear();
        encode_chunk(c, &mut buf)?;
        offsets.push(pos);
        pos += buf.len() as u64;
        bin.write_all(&buf)?;
    }
    bin.flush()?;

    let mut idx = BufWriter::new(File::create(dir.join("chunks.idx"))?);
    idx.write_all(IDX_MAGIC)?;
    idx.write_all(&(offsets.len() as u64).to_le_bytes())?;
    for o in offsets {
        idx.write_all(&o.to_le_bytes())?;
    }
    idx.flush()?;
    std::fs::write(dir.join("pack_meta.json"), serde_json::to_string_pretty(meta).map_err(std::io::Error::other)? + "\n")?;
    Ok(())
}

pub fn read_meta(dir: &Path) -> Result<PackMeta, SftError> {
    let text = std::fs::read_to_string(dir.join("pack_meta.json"))?;
    serde_json::from_str(&text).map_err(|e| SftError::Format(e.to_string()))
}

/// Random access to a chunk directory through its index.
pub struct ChunkReader {
    bin: PathBuf,
    offsets: Vec<u64>,
}

struct Cursor<'a>(&'a [u8]);

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], SftError> {
        if self.0.len() < n {
            return Err(SftError::Format("truncated chunk record".into()));
        }
        let (head, tail) = self.0.split_at(n);
        self.0 = tail;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32, SftError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

impl ChunkReader {
    pub fn open(dir: &Path) -> Result<Self, SftError> {
        let mut raw = Vec::new();
        File::open(dir.join("chunks.idx"))?.read_to_end(&mut raw)?;
        if raw.len() < 16 || &raw[..8] != IDX_MAGIC {
            return Err(SftError::Format("bad index header".into()));
        }
        let n = u64::from_le_bytes(raw[8..16].try_into().expect("8 bytes")) as usize;
        let body = &raw[16..];
        if body.len() != n * 8 {
            return Err(SftError::Format(format!("index declares {n} chunks but holds {} bytes", body.len())));
        }
        let offsets = body.chunks_exact(8).map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
        let bin = dir.join("chunks.bin");
        let mut magic = [0u8; 8];
        File::open(&bin)?.read_exact(&mut magic)?;
        if &magic != BIN_MAGIC {
            return Err(SftError::Format("bad chunk file header".into()));
        }
        Ok(Self { bin, offsets })
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn get(&self, i: usize) -> Result<PackedChunk, SftError> {
        let start = *self.offsets.get(i).ok_or_else(|| SftError::Format(format!("chunk {i} out of range")))?;
        let end = match self.offsets.get(i + 1) {
            Some(&e) => e,
            None => std::fs::metadata(&self.bin)?.len(),
        };
        let mut f = File::open(&self.bin)?;
        f.seek(SeekFrom::Start(start))?;
        let mut raw = vec![0u8; (end - start) as usize];
        f.read_exact(&mut raw)?;
        decode_chunk(&raw)
    }

    pub fn read_all(&self) -> Result<Vec<PackedChunk>, SftError> {
        (0..self.len()).map(|i| self.get(i)).collect()
    }
}

fn decode_chunk(raw: &[u8]) -> Result<PackedChunk, SftError> {
    let mut c = Cursor(raw);
    let l = c.u32()? as usize;
    let token_ids = (0..l).map(|_| c.u32()).collect::<Result<Vec<_>, _>>()?;
    let bits = c.take(l.div_ceil(8))?;
    let loss_mask = (0..l).map(|i| (bits[i / 8] >> (i % 8)) & 1).collect();
    let n = c.u32()? as usize;
    let mut docs = Vec::with_capacity(n);
    for _ in 0..n {
        let start = c.u32()? as usize;
        let end = c.u32()? as usize;
        let flags = c.take(1)?[0];
        let id_len = u16::from_le_bytes(c.take(2)?.try_into().expect("2 bytes")) as usize;
        let doc_id = String::from_utf8(c.take(id_len)?.to_vec()).map_err(|e| SftError::Format(e.to_string()))?;
        docs.push(DocBoundary {
            start,
            end,
            doc_id,
            continued: flags & 1 != 0,
            continues: flags & 2 != 0,
        });
    }
    if !c.0.is_empty() {
        return Err(SftError::Format("trailing bytes after chunk record".into()));
    }
    let pad_start = docs.last().map_or(0, |d| d.end);
    Ok(PackedChunk {
        token_ids,
        loss_mask,
        docs,
        pad_start,
    })
}

#[cfg(test)]
mod tests {
    use super::super::*;
    use super::*;

    #[test]
    fn round_trip() {
        let seqs: Vec<_> = ["one", "second doc", "x"]
            .iter()
            .map(|s| build_masked_segments(s, "p", s, "y", &ToyTokenizer, Separators::Template).unwrap())
            .collect();
        let opts = PackOptions { chunk_len: 13, mode: PackMode::Spill, ..PackOptions::new(0) };
        let chunks = pack_chunks(&seqs, &opts).unwrap();
        let meta = PackMeta {
            chunk_len: 13,
            mode: PackMode::Spill,
            policy: PackPolicy::NextFit,
            tokenizer: "toy-256".into(),
            chunks: chunks.len(),
            documents: 3,
            skipped_documents: 0,
            content_tokens: 0,
            masked_tokens: 0,
            pad_tokens: 0,
        };
        let dir = tempfile::tempdir().unwrap();
        write_chunks(dir.path(), &chunks, &meta).unwrap();
        let r = ChunkReader::open(dir.path()).unwrap();
        assert_eq!(r.read_all().unwrap(), chunks);
        assert_eq!(read_meta(dir.path()).unwrap(), meta);
        assert!(r.get(chunks.len()).is_err());
    }
}
