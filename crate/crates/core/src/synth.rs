//! Seeded synthetic corpus with induction material, deep indentation,
//! numbers and brackets.
//!
//! Four tags are produced:
//!
//! - `prose`: template sentences about invented names that recur within a
//!   document.
//! - `code`: Python-like functions nested up to six levels deep.
//! - `lists`: numbered lists with quantities in brackets.
//! - `repeats`: a random phrase of words and names, repeated.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{write_manifest, SourceEntry};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream_rng};
use crate::tokenizer::END_OF_TEXT;

pub const TAGS: [&str; 4] = ["prose", "code", "lists", "repeats"];

const SYLLABLES: &[&str] = &[
    "ka", "lo", "mi", "ren", "zu", "tal", "vo", "quin", "bex", "ru", "sha", "dor", "pim", "yel",
    "gor", "fen", "tix", "nol", "wer", "jas", "ux", "brim", "cal", "dri", "eph", "hol", "ost",
    "plu", "sna", "vek",
];
const NOUNS: &[&str] = &[
    "house", "river", "garden", "letter", "market", "window", "forest", "table", "road", "bridge",
    "field", "boat", "school", "station", "kitchen", "tower",
];
const VERBS: &[&str] = &[
    "found", "left", "saw", "painted", "carried", "opened", "closed", "built", "watched",
    "cleaned", "sold", "moved",
];
const ADJECTIVES: &[&str] = &[
    "old", "small", "red", "quiet", "long", "bright", "cold", "empty", "green", "heavy",
];
const FUNCTION_WORDS: &[&str] = &[
    "the", "a", "to", "and", "in", "by", "with", "from", "near", "under",
];
const IDENTS: &[&str] = &[
    "value", "total", "items", "count", "index", "node", "result", "buffer", "key", "limit",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub docs_per_tag: usize,
    /// Repeated phrases in each `repeats` document.
    pub repeat_phrases: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            docs_per_tag: 200,
            repeat_phrases: 12,
            seed: 0,
        }
    }
}

fn name(rng: &mut ChaCha8Rng) -> String {
    let n = rng.gen_range(2..=3);
    let mut s: String = (0..n).map(|_| *SYLLABLES.choose(rng).unwrap()).collect();
    s[..1].make_ascii_uppercase();
    s
}

fn pick<'a>(rng: &mut ChaCha8Rng, xs: &[&'a str]) -> &'a str {
    xs.choose(rng).unwrap()
}

fn prose(rng: &mut ChaCha8Rng) -> String {
    let cast: Vec<String> = (0..rng.gen_range(2..=3)).map(|_| name(rng)).collect();
    let mut out = String::new();
    for k in 0..rng.gen_range(5..=9) {
        let who = cast.choose(rng).unwrap();
        let sentence = match rng.gen_range(0..4) {
            0 => format!(
                "{who} {} the {} {} {} the {}.",
                pick(rng, VERBS),
                pick(rng, ADJECTIVES),
                pick(rng, NOUNS),
                pick(rng, FUNCTION_WORDS),
                pick(rng, NOUNS)
            ),
            1 => format!(
                "Then {who} and {} {} a {} {}.",
                cast.choose(rng).unwrap(),
                pick(rng, VERBS),
                pick(rng, ADJECTIVES),
                pick(rng, NOUNS)
            ),
            2 => format!(
                "The {} {} by {who} was {}.",
                pick(rng, NOUNS),
                pick(rng, VERBS),
                pick(rng, ADJECTIVES)
            ),
            _ => format!(
                "In {} {}, {who} {} {} things.",
                rng.gen_range(1800..2030),
                pick(rng, NOUNS),
                pick(rng, VERBS),
                rng.gen_range(2..60)
            ),
        };
        out.push_str(&sentence);
        out.push(if k % 3 == 2 { '\n' } else { ' ' });
    }
    out.trim_end().to_string() + "\n"
}

fn code(rng: &mut ChaCha8Rng) -> String {
    let fname = name(rng).to_lowercase();
    let vars: Vec<&str> = IDENTS.choose_multiple(rng, 3).copied().collect();
    let mut out = format!("def {fname}({}, {}):\n", vars[0], vars[1]);
    let mut depth = 1usize;
    let target_depth = rng.gen_range(4..=6);
    for _ in 0..rng.gen_range(8..16) {
        let indent = " ".repeat(4 * depth);
        let v = *vars.choose(rng).unwrap();
        let opens_block = depth < target_depth && rng.gen_bool(0.6);
        if opens_block {
            let line = match rng.gen_range(0..3) {
                0 => format!("if {v} > {}:", rng.gen_range(0..100)),
                1 => format!("for {v} in range({}):", rng.gen_range(1..20)),
                _ => format!("while {v} < {fname}({}):", rng.gen_range(1..9)),
            };
            out.push_str(&format!("{indent}{line}\n"));
            depth += 1;
        } else {
            let line = match rng.gen_range(0..3) {
                0 => format!("{v} = {}[{}]", vars[2], rng.gen_range(0..10)),
                1 => format!("{v} += {fname}({}, {v})", rng.gen_range(0..10)),
                _ => format!("{} = {{\"{v}\": {}}}", vars[2], rng.gen_range(0..1000)),
            };
            out.push_str(&format!("{indent}{line}\n"));
            if depth > 1 && rng.gen_bool(0.25) {
                depth -= 1;
            }
        }
    }
    out.push_str(&format!("{}return {}\n", " ".repeat(4 * depth), vars[0]));
    out
}

fn lists(rng: &mut ChaCha8Rng) -> String {
    let mut out = format!("{} list:\n", name(rng));
    for i in 1..=rng.gen_range(4..10) {
        out.push_str(&format!(
            "{i}. {} {} [{}] ({}%)\n",
            pick(rng, ADJECTIVES),
            pick(rng, NOUNS),
            rng.gen_range(1..500),
            rng.gen_range(0..100)
        ));
    }
    out
}

fn repeated_phrase(rng: &mut ChaCha8Rng) -> String {
    let phrase: Vec<String> = (0..rng.gen_range(3..7))
        .map(|_| match rng.gen_range(0..4) {
            0 => pick(rng, NOUNS).to_string(),
            _ => name(rng),
        })
        .collect();
    let phrase = phrase.join(" ");
    let copies = rng.gen_range(4..=8);
    (0..copies)
        .map(|_| phrase.clone())
        .collect::<Vec<_>>()
        .join("\n")
        + "\n"
}

fn repeats(rng: &mut ChaCha8Rng, phrases: usize) -> String {
    (0..phrases)
        .map(|_| repeated_phrase(rng))
        .collect::<Vec<_>>()
        .join("\n")
}

/// `(tag, text)` documents, `docs_per_tag` for each tag, deterministic in
/// the seed.
pub fn synthetic_documents(cfg: &SynthConfig) -> Vec<(String, String)> {
    let mut docs = Vec::with_capacity(cfg.docs_per_tag * TAGS.len());
    for (t, tag) in TAGS.iter().enumerate() {
        let mut rng = stream_rng(derive_seed(cfg.seed, &[t as u64]), 0);
        for _ in 0..cfg.docs_per_tag {
            let text = match *tag {
                "prose" => prose(&mut rng),
                "code" => code(&mut rng),
                "lists" => lists(&mut rng),
                _ => repeats(&mut rng, cfg.repeat_phrases.max(1)),
            };
            docs.push((tag.to_string(), text));
        }
    }
    docs
}

/// Write one `<tag>.txt` per tag (documents separated by the end-of-text
/// marker) plus `manifest.toml`, returning the manifest path.
pub fn write_synthetic_corpus(dir: &Path, cfg: &SynthConfig) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let docs = synthetic_documents(cfg);
    let mut entries = Vec::new();
    for tag in TAGS {
        let text: Vec<&str> = docs
            .iter()
            .filter(|(t, _)| t == tag)
            .map(|(_, d)| d.as_str())
            .collect();
        let path = dir.join(format!("{tag}.txt"));
        fs::write(&path, text.join(END_OF_TEXT)).map_err(|e| Error::io(&path, e))?;
        entries.push(SourceEntry {
            path: PathBuf::from(format!("{tag}.txt")),
            tag: tag.to_string(),
        });
    }
    let manifest = dir.join("manifest.toml");
    write_manifest(&manifest, &entries)?;
    Ok(manifest)
}
