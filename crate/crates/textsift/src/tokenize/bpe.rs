//! Byte-level BPE, interoperable with the two-file vocab format
//! (`vocab.json` token→id map + ordered `merges.txt`) published with the
//! GPT-2/RoBERTa tokenizers.
//!
//! Text is UTF-8 encoded, every byte is mapped to a printable "unit"
//! character, the mapped string is split into word-with-leading-space
//! chunks, and merges are applied greedily by ascending rank within each
//! chunk. Because all 256 single-byte symbols are in the vocabulary there
//! is no out-of-vocabulary case.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

/// Bijection between the 256 byte values and printable characters.
/// Printable Latin-1 bytes map to themselves; the rest are relocated to
/// 256 + n in first-seen order.
fn byte_char_table() -> [char; 256] {
    let is_printable = |b: u8| {
        (b'!'..=b'~').contains(&b) || (0xA1..=0xAC).contains(&b) || (0xAE..=0xFF).contains(&b)
    };
    let mut table = ['\0'; 256];
    let mut n = 0u32;
    for b in 0..=255u8 {
        table[b as usize] = if is_printable(b) {
            b as char
        } else {
            let c = char::from_u32(256 + n).expect("valid scalar");
            n += 1;
            c
        };
    }
    table
}

/// A chunk of the pre-tokenization split, as a byte range into the input.
///
/// Chunks follow the standard pattern: contraction suffixes ('s, 't, 're,
/// 've, 'm, 'll, 'd), then letter/digit/punctuation runs with one optional
/// leading space, then whitespace runs (keeping the last whitespace
/// character attached to a following word).
pub fn pretokenize(text: &str) -> Vec<(usize, usize)> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let n = chars.len();
    let byte_at = |i: usize| if i < n { chars[i].0 } else { text.len() };
    let mut out = Vec::new();
    let mut i = 0;

    while i < n {
        let start = i;
        let c = chars[i].1;

        if c == '\'' && i + 1 < n {
            let c1 = chars[i + 1].1;
            let c2 = if i + 2 < n { Some(chars[i + 2].1) } else { None };
            let len = match (c1, c2) {
                ('r', Some('e')) | ('v', Some('e')) | ('l', Some('l')) => Some(3),
                ('s', _) | ('t', _) | ('m', _) | ('d', _) => Some(2),
                _ => None,
            };
            if let Some(len) = len {
                i += len;
                out.push((byte_at(start), byte_at(i)));
                continue;
            }
        }

        // one optional leading space before a letter/digit/punctuation run
        let lead_space = c == ' ' && i + 1 < n;
        let j = if lead_space { i + 1 } else { i };
        let cj = chars[j].1;

        if cj.is_alphabetic() {
            i = j + 1;
            while i < n && chars[i].1.is_alphabetic() {
                i += 1;
            }
            out.push((byte_at(start), byte_at(i)));
            continue;
        }
        if cj.is_numeric() {
            i = j + 1;
            while i < n && chars[i].1.is_numeric() {
                i += 1;
            }
            out.push((byte_at(start), byte_at(i)));
            continue;
        }
        if !cj.is_whitespace() {
            i = j + 1;
            while i < n {
                let c = chars[i].1;
                if c.is_whitespace() || c.is_alphabetic() || c.is_numeric() {
                    break;
                }
                i += 1;
            }
            out.push((byte_at(start), byte_at(i)));
            continue;
        }

        // whitespace run; leave the final char to lead a following word,
        // unless the run ends the text or is a single character
        let mut j = i;
        while j < n && chars[j].1.is_whitespace() {
            j += 1;
        }
        let end = if j == n || j - i == 1 { j } else { j - 1 };
        out.push((byte_at(i), byte_at(end)));
        i = end;
    }
    out
}

/// One encoded token with its position in the input byte stream.
/// `text` is the byte-mapped token string; its chars correspond one-to-one
/// to the input bytes `byte_start .. byte_start + text.chars().count()`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubwordToken {
    pub id: u32,
    pub text: String,
    pub byte_start: usize,
}

/// An immutable byte-level BPE vocabulary; shareable across threads.
#[derive(Debug, Clone)]
pub struct BpeVocab {
    token_to_id: HashMap<String, u32>,
    id_to_token: HashMap<u32, String>,
    merge_ranks: HashMap<(String, String), usize>,
    byte_to_char: [char; 256],
    char_to_byte: HashMap<char, u8>,
}

impl BpeVocab {
    pub fn from_parts(
        tokens: impl IntoIterator<Item = (String, u32)>,
        merges: Vec<(String, String)>,
    ) -> Result<Self> {
        let byte_to_char = byte_char_table();
        let char_to_byte = byte_to_char
            .iter()
            .enumerate()
            .map(|(b, &c)| (c, b as u8))
            .collect();
        let token_to_id: HashMap<String, u32> = tokens.into_iter().collect();
        let id_to_token = token_to_id.iter().map(|(t, &i)| (i, t.clone())).collect();
        let merge_ranks = merges
            .into_iter()
            .enumerate()
            .map(|(rank, pair)| (pair, rank))
            .collect();
        let vocab = BpeVocab {
            token_to_id,
            id_to_token,
            merge_ranks,
            byte_to_char,
            char_to_byte,
        };
        vocab.validate()?;
        Ok(vocab)
    }

    /// Load `vocab.json` and `merges.txt` from a directory.
    pub fn load(dir: &Path) -> Result<Self> {
        let vocab_path = dir.join("vocab.json");
        let raw = std::fs::read_to_string(&vocab_path)
            .map_err(|e| Error::io(&vocab_path, e))?;
        let map: HashMap<String, u32> = serde_json::from_str(&raw)
            .map_err(|e| Error::parse(&vocab_path, e.to_string()))?;

        let merges_path = dir.join("merges.txt");
        let raw = std::fs::read_to_string(&merges_path)
            .map_err(|e| Error::io(&merges_path, e))?;
        let mut merges = Vec::new();
        for (lineno, line) in raw.lines().enumerate() {
            if line.is_empty() || (lineno == 0 && line.starts_with("#version")) {
                continue;
            }
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(a), Some(b), None) => merges.push((a.to_string(), b.to_string())),
                _ => {
                    return Err(Error::parse(
                        &merges_path,
                        format!("line {}: expected 'left right'", lineno + 1),
                    ))
                }
            }
        }
        Self::from_parts(map, merges)
    }

    fn validate(&self) -> Result<()> {
        for b in 0..=255u8 {
            let single = self.byte_to_char[b as usize].to_string();
            if !self.token_to_id.contains_key(&single) {
                return Err(Error::InvalidVocab(format!(
                    "single-byte token {single:?} (byte {b}) missing"
                )));
            }
        }
        for (a, b) in self.merge_ranks.keys() {
            let merged = format!("{a}{b}");
            if !self.token_to_id.contains_key(&merged) {
                return Err(Error::InvalidVocab(format!(
                    "merge result {merged:?} is not a token"
                )));
            }
        }
        for token in self.token_to_id.keys() {
            if token.chars().any(|c| !self.char_to_byte.contains_key(&c)) {
                return Err(Error::InvalidVocab(format!(
                    "token {token:?} contains characters outside the byte map"
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.token_to_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_to_id.is_empty()
    }

    pub fn token(&self, id: u32) -> Result<&str> {
        self.id_to_token
            .get(&id)
            .map(String::as_str)
            .ok_or(Error::UnknownTokenId(id))
    }

    pub(crate) fn char_byte(&self, c: char) -> Option<u8> {
        self.char_to_byte.get(&c).copied()
    }

    /// Greedy merge application within one byte-mapped chunk.
    fn merge_chunk(&self, mut symbols: Vec<String>) -> Vec<String> {
        while symbols.len() > 1 {
            let mut best: Option<(usize, (String, String))> = None;
            for pair in symbols.windows(2) {
                let key = (pair[0].clone(), pair[1].clone());
                if let Some(&rank) = self.merge_ranks.get(&key) {
                    if best.as_ref().is_none_or(|(r, _)| rank < *r) {
                        best = Some((rank, key));
                    }
                }
            }
            let Some((_, target)) = best else { break };
            let mut merged = Vec::with_capacity(symbols.len());
            let mut i = 0;
            while i < symbols.len() {
                if i + 1 < symbols.len()
                    && symbols[i] == target.0
                    && symbols[i + 1] == target.1
                {
                    merged.push(format!("{}{}", symbols[i], symbols[i + 1]));
                    i += 2;
                } else {
                    merged.push(std::mem::take(&mut symbols[i]));
                    i += 1;
                }
            }
            symbols = merged;
        }
        symbols
    }

    /// Encode to token ids. Deterministic; no OOV is possible.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        self.encode_tracked(text).into_iter().map(|t| t.id).collect()
    }

    /// Encode, keeping each token's byte position for provenance tracking.
    pub fn encode_tracked(&self, text: &str) -> Vec<SubwordToken> {
        let mut out = Vec::new();
        for (start, end) in pretokenize(text) {
            let symbols: Vec<String> = text.as_bytes()[start..end]
                .iter()
                .map(|&b| self.byte_to_char[b as usize].to_string())
                .collect();
            let mut offset = start;
            for sym in self.merge_chunk(symbols) {
                let id = *self
                    .token_to_id
                    .get(&sym)
                    .expect("merge closure guarantees membership");
                let len = sym.chars().count();
                out.push(SubwordToken {
                    id,
                    text: sym,
                    byte_start: offset,
                });
                offset += len;
            }
        }
        out
    }

    fn bytes_of_ids(&self, ids: &[u32]) -> Result<Vec<u8>> {
        let mut bytes = Vec::new();
        for &id in ids {
            for c in self.token(id)?.chars() {
                let b = self.char_byte(c).ok_or_else(|| {
                    Error::InvalidVocab(format!("token char {c:?} outside byte map"))
                })?;
                bytes.push(b);
            }
        }
        Ok(bytes)
    }

    /// Decode token ids back to text, replacing invalid UTF-8 (possible when
    /// decoding a permuted token sequence) with U+FFFD.
    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let bytes = self.bytes_of_ids(ids)?;
        Ok(String::from_utf8_lossy(&bytes).into_owned())
    }

    /// Decode, erroring on invalid UTF-8 with the offending byte offset.
    pub fn decode_strict(&self, ids: &[u32]) -> Result<String> {
        let bytes = self.bytes_of_ids(ids)?;
        String::from_utf8(bytes).map_err(|e| Error::InvalidUtf8 {
            offset: e.utf8_error().valid_up_to(),
        })
    }

    /// Tiny in-memory vocabulary for tests: all byte singles plus the merges
    /// (a,b)→"ab" and (ab,ab)→"abab".
    #[doc(hidden)]
    pub fn toy_ab() -> Self {
        let table = byte_char_table();
        let mut tokens: Vec<(String, u32)> = (0..=255u8)
            .map(|b| (table[b as usize].to_string(), b as u32))
            .collect();
        tokens.push(("ab".to_string(), 256));
        tokens.push(("abab".to_string(), 257));
        let merges = vec![
            ("a".to_string(), "b".to_string()),
            ("ab".to_string(), "ab".to_string()),
        ];
        Self::from_parts(tokens, merges).expect("toy vocab is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chunks(text: &str) -> Vec<&str> {
        pretokenize(text).into_iter().map(|(s, e)| &text[s..e]).collect()
    }

    #[test]
    fn byte_map_matches_reference_tokenizer() {
        let table = byte_char_table();
        assert_eq!(table[b' ' as usize], '\u{120}'); // Ġ
        assert_eq!(table[b'\n' as usize], '\u{10a}'); // Ċ
        assert_eq!(table[b'a' as usize], 'a');
        assert_eq!(table[0xA9], '\u{a9}');
        // bijective
        let mut seen: Vec<char> = table.to_vec();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 256);
    }

    #[test]
    fn pretokenize_standard_sentence() {
        assert_eq!(
            chunks("Hello my friend, how is your day going?"),
            vec!["Hello", " my", " friend", ",", " how", " is", " your", " day", " going", "?"]
        );
    }

    #[test]
    fn pretokenize_newlines_and_space_runs() {
        assert_eq!(
            chunks("Hello there\nHello there"),
            vec!["Hello", " there", "\n", "Hello", " there"]
        );
        assert_eq!(
            chunks("Hello there       dear"),
            vec!["Hello", " there", "      ", " dear"]
        );
    }

    #[test]
    fn pretokenize_contractions_and_digits() {
        assert_eq!(chunks("it's 42"), vec!["it", "'s", " 42"]);
        assert_eq!(chunks("they'll won't"), vec!["they", "'ll", " won", "'t"]);
    }

    #[test]
    fn pretokenize_trailing_space() {
        assert_eq!(chunks("a "), vec!["a", " "]);
        assert_eq!(chunks("ab   "), vec!["ab", "   "]);
    }

    #[test]
    fn chunks_cover_input() {
        for text in ["", "x", " leading", "a  b\t\nc", "café crème 12'34"] {
            let joined: String = chunks(text).concat();
            assert_eq!(joined, text);
        }
    }

    #[test]
    fn toy_merges_apply_by_rank() {
        let vocab = BpeVocab::toy_ab();
        let ids = vocab.encode("abab");
        assert_eq!(ids.len(), 1);
        assert_eq!(vocab.token(ids[0]).unwrap(), "abab");
        assert_eq!(vocab.decode(&ids).unwrap(), "abab");
    }

    #[test]
    fn empty_text_encodes_to_nothing() {
        let vocab = BpeVocab::toy_ab();
        assert!(vocab.encode("").is_empty());
        assert_eq!(vocab.decode(&[]).unwrap(), "");
    }

    #[test]
    fn unknown_id_is_an_error() {
        let vocab = BpeVocab::toy_ab();
        assert!(matches!(
            vocab.decode(&[9999]),
            Err(Error::UnknownTokenId(9999))
        ));
    }

    #[test]
    fn tracked_tokens_carry_byte_offsets() {
        let vocab = BpeVocab::toy_ab();
        let toks = vocab.encode_tracked("ab cd");
        let spans: Vec<(usize, usize)> = toks
            .iter()
            .map(|t| (t.byte_start, t.byte_start + t.text.chars().count()))
            .collect();
        // "ab" merges; " cd" chunk has no merges -> Ġ, c, d
        assert_eq!(spans, vec![(0, 2), (2, 3), (3, 4), (4, 5)]);
        assert_eq!(toks[1].text, "\u{120}");
    }

    #[test]
    fn permuted_multibyte_tokens_fail_strict_decode() {
        let vocab = BpeVocab::toy_ab();
        let ids = vocab.encode("é"); // two bytes, two single-byte tokens
        assert_eq!(ids.len(), 2);
        let swapped = vec![ids[1], ids[0]];
        assert!(matches!(
            vocab.decode_strict(&swapped),
            Err(Error::InvalidUtf8 { .. })
        ));
        let lossy = vocab.decode(&swapped).unwrap();
        assert!(lossy.contains('\u{fffd}'));
    }

    #[test]
    fn round_trip_unicode() {
        let vocab = BpeVocab::toy_ab();
        for text in ["The scholar", "naïve café", "数字 and Ω", "a\u{0301}b"] {
            assert_eq!(vocab.decode(&vocab.encode(text)).unwrap(), text);
            assert_eq!(vocab.decode_strict(&vocab.encode(text)).unwrap(), text);
        }
    }

    #[test]
    fn loads_the_bundled_toy_vocab() {
        let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("../../fixtures/toy_vocab");
        let vocab = BpeVocab::load(&dir).unwrap();
        assert_eq!(vocab.len(), 300);
        let ids = vocab.encode("The scholar is typesetting.");
        assert_eq!(vocab.decode(&ids).unwrap(), "The scholar is typesetting.");
        // merges actually compress
        assert!(ids.len() < "The scholar is typesetting.".len());
    }

    proptest::proptest! {
        #[test]
        fn bpe_round_trip_is_identity(text in "\\PC{0,60}") {
            let vocab = BpeVocab::toy_ab();
            proptest::prop_assert_eq!(vocab.decode(&vocab.encode(&text)).unwrap(), text);
        }
    }
}
