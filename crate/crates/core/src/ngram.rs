//! Lexical tokenization of Verilog source and 5-gram shingling.
//!
//! The lexer recognizes Verilog-2005 lexical categories only. It is total:
//! any byte sequence produces a token stream, and characters that start no
//! known token become single-character [`TokenKind::Unknown`] tokens.
//!
//! Grammar, in match order at each position:
//!
//! | input                              | result                         |
//! |------------------------------------|--------------------------------|
//! | whitespace                         | skipped                        |
//! | `// ...` to end of line            | skipped                        |
//! | `/* ... */` (unterminated: to EOF) | skipped                        |
//! | `"..."` with `\` escapes           | `String` (unterminated: to EOL)|
//! | `[A-Za-z_][A-Za-z0-9_$]*`          | `Keyword` or `Identifier`      |
//! | `\` then non-whitespace run        | `Identifier` (escaped)         |
//! | `$` then `[A-Za-z0-9_$]+`          | `SystemName`                   |
//! | `` ` `` then identifier            | `Directive`                    |
//! | number (see [`lex_number`])        | `Number`                       |
//! | longest operator in [`OPERATORS`]  | `Operator`                     |
//! | one of `( ) [ ] { } ; , .`         | `Punctuation`                  |
//! | anything else                      | `Unknown` (one char)           |

use serde::{Deserialize, Serialize};

/// Window length of a shingle.
pub const SHINGLE_WIDTH: usize = 5;

/// Separator byte hashed after every token of a window. It cannot occur in
/// any token text the lexer produces except an `Unknown` token of that exact
/// control character, which is itself a full token and so still delimits.
const TOKEN_SEPARATOR: u8 = 0x1f;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TokenKind {
    Identifier,
    Keyword,
    Number,
    Operator,
    Punctuation,
    String,
    SystemName,
    Directive,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Token {
    pub kind: TokenKind,
    pub text: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenStream {
    pub source_id: String,
    pub tokens: Vec<Token>,
}

impl TokenStream {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(|t| t.text.as_str())
    }
}

/// Verilog-2005 reserved words.
const KEYWORDS: &[&str] = &[
    "always", "and", "assign", "automatic", "begin", "buf", "bufif0", "bufif1", "case", "casex",
    "casez", "cell", "cmos", "config", "deassign", "default", "defparam", "design", "disable",
    "edge", "else", "end", "endcase", "endconfig", "endfunction", "endgenerate", "endmodule",
    "endprimitive", "endspecify", "endtable", "endtask", "event", "for", "force", "forever",
    "fork", "function", "generate", "genvar", "highz0", "highz1", "if", "ifnone", "incdir",
    "include", "initial", "inout", "input", "instance", "integer", "join", "large", "liblist",
    "library", "localparam", "macromodule", "medium", "module", "nand", "negedge", "nmos", "nor",
    "noshowcancelled", "not", "notif0", "notif1", "or", "output", "parameter", "pmos", "posedge",
    "primitive", "pull0", "pull1", "pulldown", "pullup", "pulsestyle_ondetect",
    "pulsestyle_onevent", "rcmos", "real", "realtime", "reg", "release", "repeat", "rnmos",
    "rpmos", "rtran", "rtranif0", "rtranif1", "scalared", "showcancelled", "signed", "small",
    "specify", "specparam", "strong0", "strong1", "supply0", "supply1", "table", "task", "time",
    "tran", "tranif0", "tranif1", "tri", "tri0", "tri1", "triand", "trior", "trireg", "unsigned",
    "use", "uwire", "vectored", "wait", "wand", "weak0", "weak1", "while", "wire", "wor", "xnor",
    "xor",
];

/// Multi- and single-character operators, longest first.
pub const OPERATORS: &[&str] = &[
    "<<<", ">>>", "===", "!==", "==", "!=", "&&", "||", "**", "<=", ">=", "<<", ">>", "~&", "~|",
    "~^", "^~", "+:", "-:", "->", "+", "-", "*", "/", "%", "<", ">", "!", "~", "&", "|", "^", "?",
    ":", "=", "@", "#", "'",
];

const PUNCTUATION: &[u8] = b"()[]{};,.";

fn is_ident_start(b: u8) -> bool {
    b.is_ascii_alphabetic() || b == b'_'
}

fn is_ident_continue(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_' || b == b'$'
}

fn is_based_digit(b: u8) -> bool {
    b.is_ascii_hexdigit() || matches!(b, b'x' | b'X' | b'z' | b'Z' | b'?' | b'_')
}

fn is_base_letter(b: u8) -> bool {
    matches!(b, b'b' | b'B' | b'o' | b'O' | b'd' | b'D' | b'h' | b'H')
}

/// Length of the base specifier (`'h`, `'sb`, ...) plus its digits starting at
/// `pos`, or `None` when `pos` does not start a based literal.
fn based_suffix_len(bytes: &[u8], pos: usize) -> Option<usize> {
    if bytes.get(pos) != Some(&b'\'') {
        return None;
    }
    let mut i = pos + 1;
    if matches!(bytes.get(i), Some(b's' | b'S')) {
        i += 1;
    }
    if !bytes.get(i).copied().is_some_and(is_base_letter) {
        return None;
    }
    i += 1;
    let digits_start = i;
    while bytes.get(i).copied().is_some_and(is_based_digit) {
        i += 1;
    }
    if i == digits_start {
        return None;
    }
    Some(i - pos)
}

/// Numbers: `123`, `1_000`, `3.14`, `1e-3`, `8'hFF`, `'b1010`, `4'sd3`.
/// Returns the byte length of the literal starting at `pos`.
fn lex_number(bytes: &[u8], pos: usize) -> Option<usize> {
    if let Some(len) = based_suffix_len(bytes, pos) {
        return Some(len);
    }
    if !bytes[pos].is_ascii_digit() {
        return None;
    }
    let mut i = pos;
    while bytes.get(i).is_some_and(|b| b.is_ascii_digit() || *b == b'_') {
        i += 1;
    }
    if let Some(len) = based_suffix_len(bytes, i) {
        return Some(i + len - pos);
    }
    if bytes.get(i) == Some(&b'.') && bytes.get(i + 1).is_some_and(u8::is_ascii_digit) {
        i += 1;
        while bytes.get(i).is_some_and(|b| b.is_ascii_digit() || *b == b'_') {
            i += 1;
        }
    }
    if matches!(bytes.get(i), Some(b'e' | b'E')) {
        let mut j = i + 1;
        if matches!(bytes.get(j), Some(b'+' | b'-')) {
            j += 1;
        }
        if bytes.get(j).is_some_and(u8::is_ascii_digit) {
            while bytes.get(j).is_some_and(|b| b.is_ascii_digit() || *b == b'_') {
                j += 1;
            }
            i = j;
        }
    }
    Some(i - pos)
}

/// Tokenize arbitrary text. Never fails.
pub fn lex_rtl(source: &str) -> TokenStream {
    lex_rtl_with_id(source, "")
}

pub fn lex_rtl_with_id(source: &str, source_id: &str) -> TokenStream {
    let bytes = source.as_bytes();
    let mut tokens = Vec::new();
    let mut pos = 0;
    let push = |tokens: &mut Vec<Token>, kind, start: usize, end: usize| {
        tokens.push(Token {
            kind,
            text: source[start..end].to_string(),
        });
    };

    while pos < bytes.len() {
        let b = bytes[pos];
        if b.is_ascii_whitespace() {
            pos += 1;
            continue;
        }
        if b == b'/' && bytes.get(pos + 1) == Some(&b'/') {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        if b == b'/' && bytes.get(pos + 1) == Some(&b'*') {
            pos = match source[pos + 2..].find("*/") {
                Some(off) => pos + 2 + off + 2,
                None => bytes.len(),
            };
            continue;
        }
        if b == b'"' {
            let start = pos;
            pos += 1;
            while pos < bytes.len() && bytes[pos] != b'"' && bytes[pos] != b'\n' {
                if bytes[pos] == b'\\' && pos + 1 < bytes.len() && bytes[pos + 1] != b'\n' {
                    pos += 1;
                }
                pos += 1;
            }
            if bytes.get(pos) == Some(&b'"') {
                pos += 1;
            }
            // An escape may have stepped onto a multi-byte char; align to a boundary.
            while !source.is_char_boundary(pos) {
                pos += 1;
            }
            push(&mut tokens, TokenKind::String, start, pos);
            continue;
        }
        if is_ident_start(b) {
            let start = pos;
            while pos < bytes.len() && is_ident_continue(bytes[pos]) {
                pos += 1;
            }
            let word = &source[start..pos];
            let kind = if KEYWORDS.binary_search(&word).is_ok() {
                TokenKind::Keyword
            } else {
                TokenKind::Identifier
            };
            push(&mut tokens, kind, start, pos);
            continue;
        }
        if b == b'\\' && bytes.get(pos + 1).is_some_and(|c| !c.is_ascii_whitespace()) {
            let start = pos;
            pos += 1;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            push(&mut tokens, TokenKind::Identifier, start, pos);
            continue;
        }
        if (b == b'$' || b == b'`') && bytes.get(pos + 1).copied().is_some_and(is_ident_continue) {
            let start = pos;
            pos += 1;
            while pos < bytes.len() && is_ident_continue(bytes[pos]) {
                pos += 1;
            }
            let kind = if b == b'$' {
                TokenKind::SystemName
            } else {
                TokenKind::Directive
            };
            push(&mut tokens, kind, start, pos);
            continue;
        }
        if let Some(len) = lex_number(bytes, pos) {
            push(&mut tokens, TokenKind::Number, pos, pos + len);
            pos += len;
            continue;
        }
        if let Some(op) = OPERATORS.iter().find(|op| bytes[pos..].starts_with(op.as_bytes())) {
            push(&mut tokens, TokenKind::Operator, pos, pos + op.len());
            pos += op.len();
            continue;
        }
        if PUNCTUATION.contains(&b) {
            push(&mut tokens, TokenKind::Punctuation, pos, pos + 1);
            pos += 1;
            continue;
        }
        let ch_len = source[pos..].chars().next().map_or(1, char::len_utf8);
        push(&mut tokens, TokenKind::Unknown, pos, pos + ch_len);
        pos += ch_len;
    }

    TokenStream {
        source_id: source_id.to_string(),
        tokens,
    }
}

/// Number of lexical tokens in `source` without materializing the stream.
pub fn count_tokens(source: &str) -> usize {
    lex_rtl(source).len()
}

/// 64-bit FNV-1a. Stable across runs, processes and platforms.
#[derive(Clone, Copy)]
struct Fnv1a(u64);

impl Fnv1a {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;

    fn new() -> Self {
        Self(Self::OFFSET)
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(Self::PRIME);
        }
    }
}

/// Fingerprint of one window of tokens. Exact token text, no normalization.
pub fn fingerprint<'a>(window: impl IntoIterator<Item = &'a str>) -> u64 {
    let mut h = Fnv1a::new();
    for text in window {
        h.write(text.as_bytes());
        h.write(&[TOKEN_SEPARATOR]);
    }
    h.0
}

/// Set of unique 5-gram fingerprints, stored sorted for merge intersection.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShingleSet {
    shingles: Vec<u64>,
}

impl ShingleSet {
    pub fn from_fingerprints(mut fps: Vec<u64>) -> Self {
        fps.sort_unstable();
        fps.dedup();
        Self { shingles: fps }
    }

    pub fn count(&self) -> usize {
        self.shingles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shingles.is_empty()
    }

    pub fn contains(&self, fp: u64) -> bool {
        self.shingles.binary_search(&fp).is_ok()
    }

    pub fn iter(&self) -> impl Iterator<Item = u64> + '_ {
        self.shingles.iter().copied()
    }

    pub fn intersection_len(&self, other: &ShingleSet) -> usize {
        let (mut i, mut j, mut n) = (0, 0, 0);
        let (a, b) = (&self.shingles, &other.shingles);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    n += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        n
    }
}

pub fn shingles5(stream: &TokenStream) -> ShingleSet {
    if stream.tokens.len() < SHINGLE_WIDTH {
        return ShingleSet::default();
    }
    let fps = stream
        .tokens
        .windows(SHINGLE_WIDTH)
        .map(|w| fingerprint(w.iter().map(|t| t.text.as_str())))
        .collect();
    ShingleSet::from_fingerprints(fps)
}

/// Shingle set of raw source text.
pub fn shingles_of(source: &str) -> ShingleSet {
    shingles5(&lex_rtl(source))
}

/// Jaccard similarity from an intersection size and the two set sizes.
/// Two empty sets have similarity 0.
pub fn jaccard_from_counts(intersection: usize, a: usize, b: usize) -> f64 {
    let union = a + b - intersection;
    if union == 0 {
        0.0
    } else {
        intersection as f64 / union as f64
    }
}

pub fn jaccard(a: &ShingleSet, b: &ShingleSet) -> f64 {
    jaccard_from_counts(a.intersection_len(b), a.count(), b.count())
}
