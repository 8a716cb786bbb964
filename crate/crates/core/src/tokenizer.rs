//! Deterministic tokenization.

/// FNV-1a over bytes. Stable across platforms and runs.
pub fn stable_hash(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Hash of several parts, with separators so `("ab","c") != ("a","bc")`.
pub fn stable_hash_parts(parts: &[&[u8]]) -> u64 {
    let mut buf = Vec::new();
    for p in parts {
        buf.extend_from_slice(&(p.len() as u64).to_le_bytes());
        buf.extend_from_slice(p);
    }
    stable_hash(&buf)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Token {
    pub id: u32,
    /// Byte span in the source text.
    pub start: usize,
    pub end: usize,
}

pub trait Tokenizer: Send + Sync {
    fn tokenize(&self, text: &str) -> Vec<Token>;

    fn ids(&self, text: &str) -> Vec<u32> {
        self.tokenize(text).into_iter().map(|t| t.id).collect()
    }
}

/// Splits on whitespace, emits alphanumeric runs as words and every other
/// character as its own token. Words longer than `max_word_bytes` fall back
/// to one token per byte (ids `0..256`).
#[derive(Debug, Clone)]
pub struct DefaultTokenizer {
    pub max_word_bytes: usize,
}

impl Default for DefaultTokenizer {
    fn default() -> Self {
        DefaultTokenizer { max_word_bytes: 24 }
    }
}

const BYTE_TOKENS: u32 = 256;

fn piece_id(piece: &str) -> u32 {
    BYTE_TOKENS + (stable_hash(piece.as_bytes()) % u64::from(u32::MAX - BYTE_TOKENS)) as u32
}

impl Tokenizer for DefaultTokenizer {
    fn tokenize(&self, text: &str) -> Vec<Token> {
        let mut out = Vec::new();
        let mut word_start: Option<usize> = None;
        let flush = |start: usize, end: usize, out: &mut Vec<Token>| {
            if end - start > self.max_word_bytes {
                out.extend((start..end).map(|i| Token {
                    id: u32::from(text.as_bytes()[i]),
                    start: i,
                    end: i + 1,
                }));
            } else {
                out.push(Token {
                    id: piece_id(&text[start..end]),
                    start,
                    end,
                });
            }
        };
        for (i, ch) in text.char_indices() {
            if ch.is_alphanumeric() {
                word_start.get_or_insert(i);
                continue;
            }
            if let Some(s) = word_start.take() {
                flush(s, i, &mut out);
            }
            if !ch.is_whitespace() {
                out.push(Token {
                    id: piece_id(&text[i..i + ch.len_utf8()]),
                    start: i,
                    end: i + ch.len_utf8(),
                });
            }
        }
        if let Some(s) = word_start {
            flush(s, text.len(), &mut out);
        }
        out
    }
}

/// Lowercased alphanumeric words of `text`, used for hashed features.
pub fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
}
