//! Byte-level tokenizer with a learned merge table.
//!
//! Token ids double as merge ranks: ids `0..256` are the raw bytes, every
//! merged token gets the next free id, and special tokens come last. Encoding
//! repeatedly merges the adjacent pair whose concatenation has the lowest id,
//! so a vocabulary file alone (without a separate merge list) is enough to
//! reproduce the encoder.
//!
//! Pre-tokenization keeps a single leading space bound to letters, digits and
//! punctuation runs, groups consecutive line breaks, and emits every other
//! whitespace character on its own. Long indentation therefore becomes a run
//! of single-space tokens.

use std::borrow::Cow;
use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use regex::Regex;

use crate::error::{Error, Result};

pub type TokenId = u32;

/// Literal text of the end-of-text marker.
pub const END_OF_TEXT: &str = "<|endoftext|>";

const PRETOKEN_PATTERN: &str = r" ?[A-Za-z]+| ?[0-9]+| ?[^\sA-Za-z0-9]+|[\r\n]+|\s";

#[derive(Debug, Clone)]
pub struct Tokenizer {
    vocab: Vec<Vec<u8>>,
    ranks: HashMap<Vec<u8>, TokenId>,
    special: BTreeSet<TokenId>,
    pretokenizer: Regex,
}

impl PartialEq for Tokenizer {
    fn eq(&self, other: &Self) -> bool {
        self.vocab == other.vocab && self.special == other.special
    }
}

impl Tokenizer {
    /// Build from an explicit id-ordered vocabulary. Entries equal to
    /// [`END_OF_TEXT`] are marked special.
    pub fn from_vocab(vocab: Vec<Vec<u8>>) -> Result<Self> {
        if vocab.len() < 2 {
            return Err(Error::Invalid(
                "vocabulary needs at least two tokens".into(),
            ));
        }
        let mut ranks = HashMap::with_capacity(vocab.len());
        let mut special = BTreeSet::new();
        for (id, bytes) in vocab.iter().enumerate() {
            if bytes.is_empty() {
                return Err(Error::format("vocabulary", format!("token {id} is empty")));
            }
            if ranks.insert(bytes.clone(), id as TokenId).is_some() {
                return Err(Error::format(
                    "vocabulary",
                    format!("token {id} is a duplicate"),
                ));
            }
            if bytes.as_slice() == END_OF_TEXT.as_bytes() {
                special.insert(id as TokenId);
            }
        }
        Ok(Self {
            vocab,
            ranks,
            special,
            pretokenizer: Regex::new(PRETOKEN_PATTERN).expect("static pattern"),
        })
    }

    /// The 256 single-byte tokens plus the end-of-text marker.
    pub fn byte_level() -> Self {
        let mut vocab: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
        vocab.push(END_OF_TEXT.as_bytes().to_vec());
        Self::from_vocab(vocab).expect("byte vocabulary is valid")
    }

    /// Learn merges on `texts` until the vocabulary (including the
    /// end-of-text marker) reaches `vocab_size`, or no pair repeats.
    pub fn train<S: AsRef<str>>(texts: &[S], vocab_size: usize) -> Result<Self> {
        if vocab_size < 257 {
            return Err(Error::Config(format!(
                "vocab_size {vocab_size} is smaller than the 257 base tokens"
            )));
        }
        let pre = Regex::new(PRETOKEN_PATTERN).expect("static pattern");
        let mut word_counts: HashMap<&str, u64> = HashMap::new();
        for text in texts {
            for piece in text.as_ref().split(END_OF_TEXT) {
                for m in pre.find_iter(piece) {
                    *word_counts.entry(m.as_str()).or_default() += 1;
                }
            }
        }
        let mut words: Vec<(Vec<TokenId>, u64)> = word_counts
            .into_iter()
            .map(|(w, c)| (w.bytes().map(TokenId::from).collect(), c))
            .collect();
        // HashMap iteration order is random; the merge loop must not depend on it.
        words.sort();

        let mut vocab: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
        let target_merges = vocab_size - 257;
        for _ in 0..target_merges {
            let mut pair_counts: HashMap<(TokenId, TokenId), u64> = HashMap::new();
            for (ids, count) in &words {
                for pair in ids.windows(2) {
                    *pair_counts.entry((pair[0], pair[1])).or_default() += count;
                }
            }
            let best = pair_counts
                .into_iter()
                .filter(|&(_, c)| c >= 2)
                .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(&a.0)));
            let Some(((left, right), _)) = best else {
                break;
            };
            let new_id = vocab.len() as TokenId;
            let mut merged = vocab[left as usize].clone();
            merged.extend_from_slice(&vocab[right as usize]);
            vocab.push(merged);
            for (ids, _) in words.iter_mut() {
                merge_pair_in_place(ids, left, right, new_id);
            }
        }
        vocab.push(END_OF_TEXT.as_bytes().to_vec());
        Self::from_vocab(vocab)
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn end_of_text(&self) -> Option<TokenId> {
        self.special.iter().next().copied()
    }

    pub fn is_special(&self, id: TokenId) -> bool {
        self.special.contains(&id)
    }

    pub fn token_bytes(&self, id: TokenId) -> &[u8] {
        &self.vocab[id as usize]
    }

    /// Decoded text of a single token (lossy for partial UTF-8 sequences).
    pub fn token_str(&self, id: TokenId) -> Cow<'_, str> {
        String::from_utf8_lossy(&self.vocab[id as usize])
    }

    pub fn decode(&self, ids: &[TokenId]) -> Vec<u8> {
        ids.iter()
            .flat_map(|&id| self.vocab[id as usize].iter().copied())
            .collect()
    }

    pub fn decode_lossy(&self, ids: &[TokenId]) -> String {
        String::from_utf8_lossy(&self.decode(ids)).into_owned()
    }

    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>> {
        let mut out = Vec::new();
        let mut base = 0usize;
        let mut pieces = text.split(END_OF_TEXT).peekable();
        while let Some(piece) = pieces.next() {
            for m in self.pretokenizer.find_iter(piece) {
                self.encode_pretoken(m.as_str().as_bytes(), base + m.start(), &mut out)?;
            }
            base += piece.len();
            if pieces.peek().is_some() {
                let eot = self.end_of_text().ok_or_else(|| Error::Tokenize {
                    offset: base,
                    reason: "vocabulary has no end-of-text token".into(),
                })?;
                out.push(eot);
                base += END_OF_TEXT.len();
            }
        }
        Ok(out)
    }

    fn encode_pretoken(&self, bytes: &[u8], offset: usize, out: &mut Vec<TokenId>) -> Result<()> {
        if let Some(&id) = self.ranks.get(bytes) {
            if !self.special.contains(&id) {
                out.push(id);
                return Ok(());
            }
        }
        // parts[i] = byte range of the i-th current part
        let mut parts: Vec<(usize, usize)> = Vec::with_capacity(bytes.len());
        for i in 0..bytes.len() {
            if !self.ranks.contains_key(&bytes[i..i + 1]) {
                return Err(Error::Tokenize {
                    offset: offset + i,
                    reason: format!("byte 0x{:02x} has no token", bytes[i]),
                });
            }
            parts.push((i, i + 1));
        }
        loop {
            let mut best: Option<(TokenId, usize)> = None;
            for i in 0..parts.len().saturating_sub(1) {
                let span = &bytes[parts[i].0..parts[i + 1].1];
                if let Some(&rank) = self.ranks.get(span) {
                    if !self.special.contains(&rank) && best.map_or(true, |(r, _)| rank < r) {
                        best = Some((rank, i));
                    }
                }
            }
            let Some((_, i)) = best else { break };
            parts[i].1 = parts[i + 1].1;
            parts.remove(i + 1);
        }
        out.extend(parts.iter().map(|&(s, e)| self.ranks[&bytes[s..e]]));
        Ok(())
    }

    /// Parse the `<id>\t<base64-of-bytes>` vocabulary format.
    pub fn parse_vocab(text: &str) -> Result<Self> {
        let mut entries: Vec<(usize, Vec<u8>)> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (id, payload) = line.split_once('\t').ok_or_else(|| {
                Error::format(
                    "vocabulary",
                    format!("line {}: expected <id>\\t<base64>", lineno + 1),
                )
            })?;
            let id: usize = id.trim().parse().map_err(|_| {
                Error::format("vocabulary", format!("line {}: bad id {id:?}", lineno + 1))
            })?;
            let bytes = B64
                .decode(payload.trim())
                .map_err(|e| Error::format("vocabulary", format!("line {}: {e}", lineno + 1)))?;
            entries.push((id, bytes));
        }
        entries.sort_by_key(|e| e.0);
        for (expected, (id, _)) in entries.iter().enumerate() {
            if *id != expected {
                return Err(Error::format(
                    "vocabulary",
                    format!("ids must be contiguous from 0; missing {expected}"),
                ));
            }
        }
        Self::from_vocab(entries.into_iter().map(|e| e.1).collect())
    }

    pub fn to_vocab_string(&self) -> String {
        let mut s = String::new();
        for (id, bytes) in self.vocab.iter().enumerate() {
            s.push_str(&format!("{id}\t{}\n", B64.encode(bytes)));
        }
        s
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_vocab(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_vocab_string()).map_err(|e| Error::io(path, e))
    }
}

fn merge_pair_in_place(ids: &mut Vec<TokenId>, left: TokenId, right: TokenId, new_id: TokenId) {
    let mut write = 0;
    let mut read = 0;
    while read < ids.len() {
        if read + 1 < ids.len() && ids[read] == left && ids[read + 1] == right {
            ids[write] = new_id;
            read += 2;
        } else {
            ids[write] = ids[read];
            read += 1;
        }
        write += 1;
    }
    ids.truncate(write);
}
