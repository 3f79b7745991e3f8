use std::collections::HashMap;
use std::path::Path;

use regex::Regex;
use serde::Deserialize;

use super::SftError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Special {
    Pad,
    ThinkOpen,
    ThinkClose,
    Eos,
}

pub trait Tokenizer: Send + Sync {
    fn encode(&self, text: &str) -> Result<Vec<u32>, SftError>;
    fn special(&self, which: Special) -> u32;
    fn vocab_size(&self) -> usize;
    fn name(&self) -> String;
}

/// Fixed 256-entry vocabulary for tests and dry runs:
///
/// | id      | token                                   |
/// |---------|-----------------------------------------|
/// | 0       | pad                                     |
/// | 1       | `<think>`                               |
/// | 2       | `</think>`                              |
/// | 3       | eos                                     |
/// | 4..=98  | printable ASCII 0x20..=0x7E (id = b − 28) |
/// | 99      | `\n`                                    |
/// | 100     | `\t`                                    |
/// | 101     | unknown (any other char)                |
/// | 102..   | reserved                                |
///
/// Text is encoded one char per token; the literal strings `<think>` and
/// `</think>` inside text are encoded as characters, not as the specials.
#[derive(Debug, Clone, Copy, Default)]
pub struct ToyTokenizer;

impl ToyTokenizer {
    pub const PAD: u32 = 0;
    pub const THINK_OPEN: u32 = 1;
    pub const THINK_CLOSE: u32 = 2;
    pub const EOS: u32 = 3;
    pub const NEWLINE: u32 = 99;
    pub const TAB: u32 = 100;
    pub const UNK: u32 = 101;

    pub fn id_of(c: char) -> u32 {
        match c {
            ' '..='~' => c as u32 - 0x20 + 4,
            '\n' => Self::NEWLINE,
            '\t' => Self::TAB,
            _ => Self::UNK,
        }
    }

    pub fn decode(ids: &[u32]) -> String {
        let mut out = String::new();
        for &id in ids {
            match id {
                Self::PAD | Self::EOS => {}
                Self::THINK_OPEN => out.push_str("<think>"),
                Self::THINK_CLOSE => out.push_str("</think>"),
                4..=98 => out.push(char::from((id - 4 + 0x20) as u8)),
                Self::NEWLINE => out.push('\n'),
                Self::TAB => out.push('\t'),
                _ => out.push('\u{FFFD}'),
            }
        }
        out
    }
}

impl Tokenizer for ToyTokenizer {
    fn encode(&self, text: &str) -> Result<Vec<u32>, SftError> {
        Ok(text.chars().map(Self::id_of).collect())
    }

    fn special(&self, which: Special) -> u32 {
        match which {
            Special::Pad => Self::PAD,
            Special::ThinkOpen => Self::THINK_OPEN,
            Special::ThinkClose => Self::THINK_CLOSE,
            Special::Eos => Self::EOS,
        }
    }

    fn vocab_size(&self) -> usize {
        256
    }

    fn name(&self) -> String {
        "toy-256".into()
    }
}

#[derive(Debug, Deserialize)]
struct SpecialsFile {
    pad: String,
    think_open: String,
    think_close: String,
    eos: String,
    #[serde(default)]
    unk: Option<String>,
}

/// Character-level BPE loaded from a directory with `vocab.json`
/// (token → id), `merges.txt` (one `left right` pair per line, highest
/// priority first, `#` comments allowed) and `specials.json` naming the
/// pad / think_open / think_close / eos (and optional unk) tokens.
///
/// Text is pre-split into runs of whitespace, word characters and other
/// symbols; merges never cross those boundaries.
#[derive(Debug)]
pub struct BpeTokenizer {
    vocab: HashMap<String, u32>,
    ranks: HashMap<(String, String), usize>,
    specials: [u32; 4],
    unk: Option<u32>,
    pre: Regex,
    name: String,
}

impl BpeTokenizer {
    pub fn load(dir: &Path) -> Result<Self, SftError> {
        let fail = |what: &str, e: &dyn std::fmt::Display| SftError::Tokenizer(format!("{}: {what}: {e}", dir.display()));
        let vocab_text = std::fs::read_to_string(dir.join("vocab.json")).map_err(|e| fail("vocab.json", &e))?;
        let vocab: HashMap<String, u32> = serde_json::from_str(&vocab_text).map_err(|e| fail("vocab.json", &e))?;
        let merges_text = std::fs::read_to_string(dir.join("merges.txt")).map_err(|e| fail("merges.txt", &e))?;
        let specials_text = std::fs::read_to_string(dir.join("specials.json")).map_err(|e| fail("specials.json", &e))?;
        let specials: SpecialsFile = serde_json::from_str(&specials_text).map_err(|e| fail("specials.json", &e))?;
        let mut merges = Vec::new();
        for line in merges_text.lines() {
            let line = line.trim_end_matches('\r');
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (a, b) = line
                .split_once(' ')
                .ok_or_else(|| fail("merges.txt", &format!("bad line {line:?}")))?;
            merges.push((a.to_string(), b.to_string()));
        }
        Self::new(vocab, merges, [&specials.pad, &specials.think_open, &specials.think_close, &specials.eos], specials.unk.as_deref())
            .map(|mut t| {
                t.name = format!("bpe:{}", dir.display());
                t
            })
    }

    pub fn new(
        vocab: HashMap<String, u32>,
        merges: Vec<(String, String)>,
        specials: [&str; 4],
        unk: Option<&str>,
    ) -> Result<Self, SftError> {
        let id = |tok: &str| {
            vocab
                .get(tok)
                .copied()
                .ok_or_else(|| SftError::Tokenizer(format!("special token {tok:?} not in vocabulary")))
        };
        let specials = [id(specials[0])?, id(specials[1])?, id(specials[2])?, id(specials[3])?];
        let unk = unk.map(id).transpose()?;
        let ranks = merges.into_iter().enumerate().map(|(i, m)| (m, i)).collect();
        Ok(Self {
            vocab,
            ranks,
            specials,
            unk,
            pre: Regex::new(r"\s+|\w+|[^\w\s]+").expect("static regex"),
            name: "bpe".into(),
        })
    }

    fn bpe(&self, piece: &str) -> Vec<String> {
        let mut syms: Vec<String> = piece.chars().map(String::from).collect();
        loop {
            let best = syms
                .windows(2)
                .enumerate()
                .filter_map(|(i, w)| self.ranks.get(&(w[0].clone(), w[1].clone())).map(|r| (*r, i)))
                .min();
            let Some((_, i)) = best else { break };
            let merged = format!("{}{}", syms[i], syms[i + 1]);
            syms.splice(i..i + 2, [merged]);
        }
        syms
    }
}

impl Tokenizer for BpeTokenizer {
    fn encode(&self, text: &str) -> Result<Vec<u32>, SftError> {
        let mut out = Vec::new();
        for m in self.pre.find_iter(text) {
            for sym in self.bpe(m.as_str()) {
                match self.vocab.get(&sym).copied().or(self.unk) {
                    Some(id) => out.push(id),
                    None => return Err(SftError::Tokenizer(format!("symbol {sym:?} not in vocabulary and no unk token"))),
                }
            }
        }
        Ok(out)
    }

    fn special(&self, which: Special) -> u32 {
        self.specials[which as usize]
    }

    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn name(&self) -> String {
        self.name.clone()
    }
}

/// `toy` selects the built-in toy vocabulary; anything else is a BPE
/// asset directory.
pub fn load_tokenizer(spec: &str) -> Result<Box<dyn Tokenizer>, SftError> {
    if spec == "toy" {
        Ok(Box::new(ToyTokenizer))
    } else {
        Ok(Box::new(BpeTokenizer::load(Path::new(spec))?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_table() {
        assert_eq!(ToyTokenizer::id_of(' '), 4);
        assert_eq!(ToyTokenizer::id_of('a'), 69);
        assert_eq!(ToyTokenizer::id_of('~'), 98);
        assert_eq!(ToyTokenizer::id_of('é'), ToyTokenizer::UNK);
        let ids = ToyTokenizer.encode("q <= d;\n").unwrap();
        assert_eq!(ToyTokenizer::decode(&ids), "q <= d;\n");
    }

    fn tiny_bpe() -> BpeTokenizer {
        let vocab: HashMap<String, u32> = ["<pad>", "<think>", "</think>", "<eos>", "<unk>", "a", "b", "ab", "abb", " ", "c"]
            .iter()
            .enumerate()
            .map(|(i, t)| (t.to_string(), i as u32))
            .collect();
        let merges = vec![("a".into(), "b".into()), ("ab".into(), "b".into())];
        BpeTokenizer::new(vocab, merges, ["<pad>", "<think>", "</think>", "<eos>"], Some("<unk>")).unwrap()
    }

    #[test]
    fn bpe_merges_by_rank() {
        let t = tiny_bpe();
        // "abb" -> ab b -> abb ; " " ; "cab" -> c ab ; "z" -> unk
        assert_eq!(t.encode("abb cab z").unwrap(), vec![8, 9, 10, 7, 9, 4]);
        assert_eq!(t.special(Special::ThinkClose), 2);
    }

    #[test]
    fn bpe_loads_from_dir() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("vocab.json"), r#"{"P":0,"O":1,"C":2,"E":3,"x":4,"y":5,"xy":6}"#).unwrap();
        std::fs::write(dir.path().join("merges.txt"), "#version: 1\nx y\n").unwrap();
        std::fs::write(dir.path().join("specials.json"), r#"{"pad":"P","think_open":"O","think_close":"C","eos":"E"}"#).unwrap();
        let t = load_tokenizer(dir.path().to_str().unwrap()).unwrap();
        assert_eq!(t.encode("xyx").unwrap(), vec![6, 4]);
        assert!(matches!(t.encode("q"), Err(SftError::Tokenizer(_))));
    }
}
