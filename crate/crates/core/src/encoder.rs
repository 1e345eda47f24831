//! Character quantization.
//!
//! Text is mapped onto a fixed 95-symbol alphabet (printable ASCII, in
//! codepoint order). Symbol `c` gets index `c - 0x1F`, so the space character
//! is index 1 and `~` is index 95. Index 0 is shared by padding and every
//! character outside the alphabet.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Label;

/// Number of symbols in the alphabet.
pub const ALPHABET_SIZE: usize = 95;
/// Rows of the embedding table: the alphabet plus the pad/unknown row.
pub const VOCAB_SIZE: usize = ALPHABET_SIZE + 1;
/// Index used for padding and out-of-alphabet characters.
pub const PAD_INDEX: u8 = 0;
/// Default sequence length.
pub const DEFAULT_MAX_LEN: usize = 1500;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EncoderError {
    #[error("index {0} outside the alphabet range 0..=95")]
    IndexOutOfRange(u8),
    #[error("alphabet must contain exactly 95 distinct symbols, got {0}")]
    BadAlphabet(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alphabet {
    symbols: Vec<char>,
    lookup: [u8; 128],
}

impl Default for Alphabet {
    fn default() -> Self {
        let symbols: String = (0x20u8..=0x7E).map(char::from).collect();
        Self::from_symbols(&symbols).expect("printable ASCII is a valid alphabet")
    }
}

impl Alphabet {
    /// Builds an alphabet from its ordered symbol string, as stored in
    /// checkpoint headers. Only ASCII symbols are supported.
    pub fn from_symbols(symbols: &str) -> Result<Self, EncoderError> {
        let chars: Vec<char> = symbols.chars().collect();
        if chars.len() != ALPHABET_SIZE || chars.iter().any(|c| !c.is_ascii()) {
            return Err(EncoderError::BadAlphabet(chars.len()));
        }
        let mut lookup = [PAD_INDEX; 128];
        for (i, &c) in chars.iter().enumerate() {
            if lookup[c as usize] != PAD_INDEX {
                return Err(EncoderError::BadAlphabet(chars.len()));
            }
            lookup[c as usize] = (i + 1) as u8;
        }
        Ok(Self { symbols: chars, lookup })
    }

    pub fn symbols(&self) -> &[char] {
        &self.symbols
    }

    pub fn as_string(&self) -> String {
        self.symbols.iter().collect()
    }

    /// Index of `c` in `1..=95`, or 0 when `c` is not in the alphabet.
    #[inline]
    pub fn index_of(&self, c: char) -> u8 {
        if c.is_ascii() {
            self.lookup[c as usize]
        } else {
            PAD_INDEX
        }
    }

    pub fn contains(&self, c: char) -> bool {
        self.index_of(c) != PAD_INDEX
    }

    /// Symbol for a nonzero index.
    pub fn symbol(&self, index: u8) -> Option<char> {
        match index {
            0 => None,
            i if (i as usize) <= ALPHABET_SIZE => Some(self.symbols[i as usize - 1]),
            _ => None,
        }
    }

    /// Encodes `text` into exactly `max_len` indices, truncating or
    /// zero-padding. Returns the indices and the number of characters kept.
    pub fn encode(&self, text: &str, max_len: usize) -> (Vec<u8>, usize) {
        let mut out = Vec::with_capacity(max_len);
        out.extend(text.chars().take(max_len).map(|c| self.index_of(c)));
        let kept = out.len();
        out.resize(max_len, PAD_INDEX);
        (out, kept)
    }

    /// Inverse of [`encode`](Self::encode) up to sanitization: index 0 decodes
    /// to nothing.
    pub fn decode(&self, indices: &[u8]) -> Result<String, EncoderError> {
        let mut out = String::with_capacity(indices.len());
        for &i in indices {
            if i as usize > ALPHABET_SIZE {
                return Err(EncoderError::IndexOutOfRange(i));
            }
            if let Some(c) = self.symbol(i) {
                out.push(c);
            }
        }
        Ok(out)
    }
}

/// One-hot label vector with clean first: clean = `[1, 0]`, phishing = `[0, 1]`.
pub fn one_hot(label: Label) -> [f32; 2] {
    match label {
        Label::Clean => [1.0, 0.0],
        Label::Phishing => [0.0, 1.0],
    }
}

/// The model input unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedEmail {
    pub email_id: String,
    pub indices: Vec<u8>,
    pub label: Label,
    /// Characters of the source text that made it into `indices`.
    pub original_length: usize,
}

impl EncodedEmail {
    pub fn new(email_id: impl Into<String>, text: &str, label: Label, alphabet: &Alphabet, max_len: usize) -> Self {
        let (indices, original_length) = alphabet.encode(text, max_len);
        Self { email_id: email_id.into(), indices, label, original_length }
    }

    pub fn label_onehot(&self) -> [f32; 2] {
        one_hot(self.label)
    }
}

/// Encoder settings shared by training, attacks and inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub max_len: usize,
    pub include_subject: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { max_len: DEFAULT_MAX_LEN, include_subject: true }
    }
}

impl EncoderConfig {
    /// The text a model sees for an email.
    pub fn model_text(&self, subject: &str, body: &str) -> String {
        if self.include_subject {
            let mut s = String::with_capacity(subject.len() + 1 + body.len());
            s.push_str(subject);
            s.push('\n');
            s.push_str(body);
            s
        } else {
            body.to_string()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn alphabet_is_printable_ascii() {
        let a = Alphabet::default();
        assert_eq!(a.symbols().len(), 95);
        assert_eq!(a.index_of(' '), 1);
        assert_eq!(a.index_of('~'), 95);
        assert_eq!(a.index_of('a'), b'a' - 0x1F);
        assert_eq!(a.index_of('\n'), 0);
        assert_eq!(a.index_of('é'), 0);
        for i in 1..=95u8 {
            assert_eq!(a.index_of(a.symbol(i).unwrap()), i);
        }
    }

    #[test]
    fn pads_and_truncates() {
        let a = Alphabet::default();
        let (idx, n) = a.encode("abc", 5);
        assert_eq!(idx, vec![a.index_of('a'), a.index_of('b'), a.index_of('c'), 0, 0]);
        assert_eq!(n, 3);

        let long: String = "xyz".repeat(700);
        let (idx, n) = a.encode(&long, 1500);
        assert_eq!(idx.len(), 1500);
        assert_eq!(n, 1500);
        let expect: Vec<u8> = long.chars().take(1500).map(|c| a.index_of(c)).collect();
        assert_eq!(idx, expect);

        assert_eq!(a.encode("", 4).0, vec![0, 0, 0, 0]);
    }

    #[test]
    fn one_hot_ordering() {
        assert_eq!(one_hot(Label::Clean), [1.0, 0.0]);
        assert_eq!(one_hot(Label::Phishing), [0.0, 1.0]);
    }

    #[test]
    fn decode_drops_padding_and_unknowns() {
        let a = Alphabet::default();
        assert_eq!(a.decode(&[a.index_of('a'), 0, 0]).unwrap(), "a");
        let (idx, _) = a.encode("Hello!", 8);
        assert_eq!(a.decode(&idx).unwrap(), "Hello!");
        let (idx, _) = a.encode("café au lait", 20);
        assert_eq!(a.decode(&idx).unwrap(), "caf au lait");
        assert_eq!(a.decode(&[96]), Err(EncoderError::IndexOutOfRange(96)));
    }

    #[test]
    fn rejects_bad_alphabets() {
        assert!(Alphabet::from_symbols("abc").is_err());
        let dup = "a".repeat(95);
        assert!(Alphabet::from_symbols(&dup).is_err());
        let round = Alphabet::from_symbols(&Alphabet::default().as_string()).unwrap();
        assert_eq!(round, Alphabet::default());
    }

    proptest! {
        #[test]
        fn length_is_exact(text in ".{0,64}", t in 1usize..80) {
            let (idx, kept) = Alphabet::default().encode(&text, t);
            prop_assert_eq!(idx.len(), t);
            prop_assert_eq!(kept, text.chars().count().min(t));
            prop_assert!(idx.iter().all(|&i| i as usize <= ALPHABET_SIZE));
        }

        #[test]
        fn printable_ascii_round_trips(text in "[ -~]{0,40}") {
            let a = Alphabet::default();
            let (idx, _) = a.encode(&text, 40);
            prop_assert_eq!(a.decode(&idx).unwrap(), text);
        }
    }
}
