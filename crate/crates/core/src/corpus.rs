//! Corpus loading, context sampling and bigram statistics.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream_rng};
use crate::tokenizer::{TokenId, Tokenizer, END_OF_TEXT};

/// One corpus source: a text file and the dataset tag its documents carry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceEntry {
    pub path: PathBuf,
    pub tag: String,
}

impl SourceEntry {
    /// Tag derived from the file stem.
    pub fn from_path(path: impl Into<PathBuf>) -> Self {
        let path = path.into();
        let tag = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "corpus".to_string());
        Self { path, tag }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    source: Vec<SourceEntry>,
}

/// Read a corpus manifest:
///
/// ```toml
/// [[source]]
/// path = "code.txt"
/// tag = "code"
/// ```
///
/// Relative paths resolve against the manifest's directory.
pub fn read_manifest(path: &Path) -> Result<Vec<SourceEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parsed: ManifestFile =
        toml::from_str(&text).map_err(|e| Error::format("corpus manifest", e.to_string()))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    Ok(parsed
        .source
        .into_iter()
        .map(|mut s| {
            if s.path.is_relative() {
                s.path = base.join(&s.path);
            }
            s
        })
        .collect())
}

pub fn write_manifest(path: &Path, entries: &[SourceEntry]) -> Result<()> {
    #[derive(Serialize)]
    struct Out<'a> {
        source: &'a [SourceEntry],
    }
    let text = toml::to_string(&Out { source: entries })
        .map_err(|e| Error::format("corpus manifest", e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone)]
pub struct Document {
    pub tag: String,
    pub source: PathBuf,
    pub tokens: Vec<TokenId>,
}

#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub documents: Vec<Document>,
}

impl Corpus {
    /// Tags in order of first appearance.
    pub fn tags(&self) -> Vec<String> {
        let mut tags: Vec<String> = Vec::new();
        for d in &self.documents {
            if !tags.contains(&d.tag) {
                tags.push(d.tag.clone());
            }
        }
        tags
    }

    pub fn total_tokens(&self) -> usize {
        self.documents.iter().map(|d| d.tokens.len()).sum()
    }
}

/// Raw text of every source, split into documents on the end-of-text
/// marker. Empty documents are dropped.
pub fn read_texts(entries: &[SourceEntry]) -> Result<Vec<(SourceEntry, String)>> {
    let mut out = Vec::new();
    for entry in entries {
        let text = std::fs::read_to_string(&entry.path).map_err(|e| Error::io(&entry.path, e))?;
        for doc in text.split(END_OF_TEXT) {
            if doc.is_empty() {
                log::warn!("{}: skipping empty document", entry.path.display());
                continue;
            }
            out.push((entry.clone(), doc.to_string()));
        }
    }
    Ok(out)
}

pub fn load_corpus(entries: &[SourceEntry], tokenizer: &Tokenizer) -> Result<Corpus> {
    let mut documents = Vec::new();
    for (entry, text) in read_texts(entries)? {
        let tokens = tokenizer.encode(&text).map_err(|e| match e {
            Error::Tokenize { offset, reason } => Error::Tokenize {
                offset,
                reason: format!("{}: {reason}", entry.path.display()),
            },
            other => other,
        })?;
        documents.push(Document {
            tag: entry.tag,
            source: entry.path,
            tokens,
        });
    }
    Ok(Corpus { documents })
}

/// A context window and the token that follows it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub id: usize,
    pub tag: String,
    pub doc_index: usize,
    /// Position of `target` within its document.
    pub position: usize,
    pub context: Vec<TokenId>,
    pub target: TokenId,
    /// The token after `target`, when the document has one.
    pub lookahead: Option<TokenId>,
}

#[derive(Debug, Clone)]
pub struct SampleSet {
    pub samples: Vec<Sample>,
    /// Tags that had fewer candidate positions than requested and were
    /// sampled with replacement.
    pub with_replacement: Vec<String>,
}

/// Draw `n_per_tag` (context, target) pairs uniformly over the target
/// positions of every tag. Contexts hold up to `max_context` preceding
/// tokens.
pub fn sample_contexts(
    corpus: &Corpus,
    n_per_tag: usize,
    max_context: usize,
    seed: u64,
) -> Result<SampleSet> {
    if n_per_tag == 0 || max_context == 0 {
        return Err(Error::Invalid(
            "sample count and context length must be positive".into(),
        ));
    }
    let mut samples = Vec::new();
    let mut with_replacement = Vec::new();
    for (tag_index, tag) in corpus.tags().iter().enumerate() {
        // candidate (doc, position) pairs; position >= 1 so the context is non-empty
        let mut candidates: Vec<(usize, usize)> = Vec::new();
        for (di, doc) in corpus.documents.iter().enumerate() {
            if &doc.tag == tag {
                candidates.extend((1..doc.tokens.len()).map(|p| (di, p)));
            }
        }
        if candidates.is_empty() {
            log::warn!("tag {tag}: no document with at least two tokens");
            continue;
        }
        let mut rng = stream_rng(derive_seed(seed, &[tag_index as u64]), 0);
        let picks: Vec<usize> = if candidates.len() >= n_per_tag {
            let mut p = index::sample(&mut rng, candidates.len(), n_per_tag).into_vec();
            p.sort_unstable();
            p
        } else {
            with_replacement.push(tag.clone());
            (0..n_per_tag)
                .map(|_| rng.gen_range(0..candidates.len()))
                .collect()
        };
        for pick in picks {
            let (di, p) = candidates[pick];
            let tokens = &corpus.documents[di].tokens;
            let start = p.saturating_sub(max_context);
            samples.push(Sample {
                id: samples.len(),
                tag: tag.clone(),
                doc_index: di,
                position: p,
                context: tokens[start..p].to_vec(),
                target: tokens[p],
                lookahead: tokens.get(p + 1).copied(),
            });
        }
    }
    if samples.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(SampleSet {
        samples,
        with_replacement,
    })
}

/// Maximum-likelihood bigram conditionals `q(v|u)` over adjacent tokens.
#[derive(Debug, Clone, Default)]
pub struct BigramTable {
    pair_counts: HashMap<(TokenId, TokenId), u64>,
    left_counts: HashMap<TokenId, u64>,
    total_pairs: u64,
}

impl BigramTable {
    pub fn from_sequences<'a>(seqs: impl IntoIterator<Item = &'a [TokenId]>) -> Result<Self> {
        let mut table = Self::default();
        for seq in seqs {
            for w in seq.windows(2) {
                *table.pair_counts.entry((w[0], w[1])).or_default() += 1;
                *table.left_counts.entry(w[0]).or_default() += 1;
                table.total_pairs += 1;
            }
        }
        if table.total_pairs == 0 {
            return Err(Error::EmptyCorpus);
        }
        Ok(table)
    }

    /// `q(v|u)`; zero when `u` never occurs as a left token.
    pub fn prob(&self, u: TokenId, v: TokenId) -> f64 {
        match self.left_counts.get(&u) {
            Some(&n) if n > 0 => {
                self.pair_counts.get(&(u, v)).copied().unwrap_or(0) as f64 / n as f64
            }
            _ => 0.0,
        }
    }

    pub fn count(&self, u: TokenId, v: TokenId) -> u64 {
        self.pair_counts.get(&(u, v)).copied().unwrap_or(0)
    }

    pub fn left_count(&self, u: TokenId) -> u64 {
        self.left_counts.get(&u).copied().unwrap_or(0)
    }

    pub fn total_pairs(&self) -> u64 {
        self.total_pairs
    }

    /// Left tokens with a nonzero count.
    pub fn left_tokens(&self) -> impl Iterator<Item = TokenId> + '_ {
        self.left_counts.keys().copied()
    }

    /// Observed right tokens following `u`, with their conditional probability.
    pub fn followers(&self, u: TokenId) -> Vec<(TokenId, f64)> {
        let mut out: Vec<(TokenId, f64)> = self
            .pair_counts
            .keys()
            .filter(|(a, _)| *a == u)
            .map(|&(_, b)| (b, self.prob(u, b)))
            .collect();
        out.sort_by_key(|e| e.0);
        out
    }

    /// Insert a raw count; used to build fixtures with prescribed conditionals.
    pub fn add_count(&mut self, u: TokenId, v: TokenId, count: u64) {
        *self.pair_counts.entry((u, v)).or_default() += count;
        *self.left_counts.entry(u).or_default() += count;
        self.total_pairs += count;
    }
}

pub fn estimate_bigram_table(corpus: &Corpus) -> Result<BigramTable> {
    BigramTable::from_sequences(corpus.documents.iter().map(|d| d.tokens.as_slice()))
}
