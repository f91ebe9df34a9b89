//! Token pattern classification.
//!
//! Eight overlapping patterns. Five depend only on the decoded target token
//! (word start, spacing, delimiter, formatting, numeric); word end and word
//! part look at the following token; induction scans the context.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{BigramTable, Sample};
use crate::error::Error;
use crate::tokenizer::{TokenId, Tokenizer};

/// Bigrams with `q(v|u)` at or below this are "not common".
pub const INDUCTION_BIGRAM_THRESHOLD: f64 = 0.05;

pub const LEFT_DELIMITERS: &[&str] = &[
    "<", " <", "{", " {", "(", " (", "[", " [", "</", "{\"", " $",
];

pub const RIGHT_DELIMITERS: &[&str] = &[
    ">", " >", "}", " }", ")", " )", "]", " ]", "),", "],", "):", ").", "))", ");", "%)", "$",
];

pub const FORMATTING: &[&str] = &[
    "~",
    "\\\\",
    " \\\\",
    "/",
    "//",
    " //",
    "://",
    "-",
    " -",
    "\u{2014}",
    " \u{2014}",
    "_",
    "========",
    "--",
    "----",
    "--------",
    "----------------",
    "**",
    "****",
    "********",
    "####",
    ".",
    ",",
    ":",
    "::",
    " :",
    ";",
    " ;",
    "\",",
    "<|endoftext|>",
    "=\"",
    "\":\"",
    "|",
    "'",
    "\"",
    "->",
    " ->",
    "^",
    " %",
];

/// Tokens that can never take part in an induction pattern.
pub const INDUCTION_EXCLUSIONS: &[&str] = &[
    " ", "\n", ",", ".", "the", "to", ":", "and", "by", "in", "a", "be",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    WordStart,
    WordPart,
    WordEnd,
    Induction,
    Spacing,
    Delimiter,
    Formatting,
    Numeric,
}

impl Pattern {
    pub const ALL: [Pattern; 8] = [
        Pattern::WordStart,
        Pattern::WordPart,
        Pattern::WordEnd,
        Pattern::Induction,
        Pattern::Spacing,
        Pattern::Delimiter,
        Pattern::Formatting,
        Pattern::Numeric,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Pattern::WordStart => "word_start",
            Pattern::WordPart => "word_part",
            Pattern::WordEnd => "word_end",
            Pattern::Induction => "induction",
            Pattern::Spacing => "spacing",
            Pattern::Delimiter => "delimiter",
            Pattern::Formatting => "formatting",
            Pattern::Numeric => "numeric",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Pattern::WordStart => "Word start",
            Pattern::WordPart => "Word part",
            Pattern::WordEnd => "Word end",
            Pattern::Induction => "Induction",
            Pattern::Spacing => "Spacing",
            Pattern::Delimiter => "Delimiter",
            Pattern::Formatting => "Formatting",
            Pattern::Numeric => "Numeric",
        }
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Pattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Pattern::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown pattern {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternLabelSet {
    pub word_start: bool,
    pub word_part: bool,
    pub word_end: bool,
    pub induction: bool,
    pub spacing: bool,
    pub delimiter: bool,
    pub formatting: bool,
    pub numeric: bool,
    pub preceding_spacing_count: usize,
    /// The target was the last token of its window, so word end could not
    /// be decided and was set to false.
    pub word_end_truncated: bool,
}

impl PatternLabelSet {
    pub fn has(&self, p: Pattern) -> bool {
        match p {
            Pattern::WordStart => self.word_start,
            Pattern::WordPart => self.word_part,
            Pattern::WordEnd => self.word_end,
            Pattern::Induction => self.induction,
            Pattern::Spacing => self.spacing,
            Pattern::Delimiter => self.delimiter,
            Pattern::Formatting => self.formatting,
            Pattern::Numeric => self.numeric,
        }
    }

    pub fn set(&mut self, p: Pattern, value: bool) {
        let slot = match p {
            Pattern::WordStart => &mut self.word_start,
            Pattern::WordPart => &mut self.word_part,
            Pattern::WordEnd => &mut self.word_end,
            Pattern::Induction => &mut self.induction,
            Pattern::Spacing => &mut self.spacing,
            Pattern::Delimiter => &mut self.delimiter,
            Pattern::Formatting => &mut self.formatting,
            Pattern::Numeric => &mut self.numeric,
        };
        *slot = value;
    }

    pub fn patterns(&self) -> impl Iterator<Item = Pattern> + '_ {
        Pattern::ALL.into_iter().filter(|&p| self.has(p))
    }

    /// Checks the structural exclusions between flags.
    pub fn is_consistent(&self) -> bool {
        let exclusive = [
            self.delimiter,
            self.formatting,
            self.word_start,
            self.word_part,
        ];
        let exclusive_ok = exclusive.iter().filter(|&&b| b).count() <= 1;
        exclusive_ok && !(self.word_part && self.word_end) && !(self.induction && self.word_part)
    }
}

/// Context-free properties of one vocabulary entry.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TokenClass {
    pub word_start: bool,
    pub letters: bool,
    pub spacing: bool,
    pub delimiter: bool,
    pub formatting: bool,
    pub numeric: bool,
    pub induction_excluded: bool,
}

impl TokenClass {
    pub fn of(text: &str) -> Self {
        let letters = !text.is_empty() && text.bytes().all(|b| b.is_ascii_alphabetic());
        let word_start = text.len() >= 2
            && text.starts_with(' ')
            && text[1..].bytes().all(|b| b.is_ascii_alphabetic());
        let spacing = !text.is_empty()
            && text
                .chars()
                .all(|c| matches!(c, ' ' | '\n' | '\t' | '\r' | '\x0c'));
        let without_spaces: String = text.chars().filter(|&c| c != ' ').collect();
        let numeric =
            !without_spaces.is_empty() && without_spaces.bytes().all(|b| b.is_ascii_digit());
        Self {
            word_start,
            letters,
            spacing,
            delimiter: LEFT_DELIMITERS.contains(&text) || RIGHT_DELIMITERS.contains(&text),
            formatting: FORMATTING.contains(&text),
            numeric,
            induction_excluded: INDUCTION_EXCLUSIONS.contains(&text),
        }
    }

    /// Can follow a letters-only token to make it a word end.
    fn ends_word(&self) -> bool {
        self.formatting || self.delimiter || self.spacing
    }
}

/// Classifier with the per-token classes precomputed for a vocabulary.
#[derive(Debug, Clone)]
pub struct PatternClassifier<'a> {
    classes: Vec<TokenClass>,
    bigrams: &'a BigramTable,
    threshold: f64,
}

impl<'a> PatternClassifier<'a> {
    pub fn new(tokenizer: &Tokenizer, bigrams: &'a BigramTable) -> Self {
        let classes = (0..tokenizer.vocab_size() as TokenId)
            .map(|id| TokenClass::of(&tokenizer.token_str(id)))
            .collect();
        Self {
            classes,
            bigrams,
            threshold: INDUCTION_BIGRAM_THRESHOLD,
        }
    }

    pub fn token_class(&self, id: TokenId) -> TokenClass {
        self.classes[id as usize]
    }

    pub fn classify(&self, sample: &Sample) -> PatternLabelSet {
        let y = self.classes[sample.target as usize];
        let mut labels = PatternLabelSet {
            word_start: y.word_start,
            spacing: y.spacing,
            delimiter: y.delimiter,
            formatting: y.formatting,
            numeric: y.numeric,
            preceding_spacing_count: self.preceding_spacing(&sample.context),
            ..Default::default()
        };
        labels.induction = self.is_induction(&sample.context, sample.target);
        if y.letters {
            match sample.lookahead {
                Some(next) => labels.word_end = self.classes[next as usize].ends_word(),
                None => labels.word_end_truncated = true,
            }
            labels.word_part = !labels.word_end && !labels.induction;
        }
        labels
    }

    /// Is there an earlier `u v` with `u` = last context token and `v` = target?
    pub fn is_induction(&self, context: &[TokenId], target: TokenId) -> bool {
        let Some((&u, earlier)) = context.split_last() else {
            return false;
        };
        if self.classes[u as usize].induction_excluded
            || self.classes[target as usize].induction_excluded
            || self.bigrams.prob(u, target) > self.threshold
        {
            return false;
        }
        earlier.windows(2).any(|w| w[0] == u && w[1] == target)
    }

    pub fn preceding_spacing(&self, context: &[TokenId]) -> usize {
        context
            .iter()
            .rev()
            .take_while(|&&t| self.classes[t as usize].spacing)
            .count()
    }
}

pub fn classify_patterns(
    sample: &Sample,
    tokenizer: &Tokenizer,
    bigrams: &BigramTable,
) -> PatternLabelSet {
    PatternClassifier::new(tokenizer, bigrams).classify(sample)
}

pub fn count_preceding_spacing(sample: &Sample, tokenizer: &Tokenizer) -> usize {
    sample
        .context
        .iter()
        .rev()
        .take_while(|&&t| TokenClass::of(&tokenizer.token_str(t)).spacing)
        .count()
}

/// Percentage of samples carrying each pattern. Patterns overlap, so the
/// entries are not normalized against each other.
pub fn pattern_percentages(labels: &[PatternLabelSet]) -> Vec<(Pattern, f64)> {
    Pattern::ALL
        .into_iter()
        .map(|p| {
            let n = labels.iter().filter(|l| l.has(p)).count();
            let pct = if labels.is_empty() {
                0.0
            } else {
                100.0 * n as f64 / labels.len() as f64
            };
            (p, pct)
        })
        .collect()
}
