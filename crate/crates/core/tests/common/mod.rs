#![allow(dead_code)]

use suscept_atlas::corpus::{BigramTable, Sample};
use suscept_atlas::patterns::{Pattern, PatternClassifier, PatternLabelSet};
use suscept_atlas::tokenizer::{TokenId, Tokenizer, END_OF_TEXT};

const EXTRA_TOKENS: &[&str] = &[
    " be",
    " R",
    "ose",
    " The",
    " S",
    "ne",
    "ed",
    "th",
    "at",
    "st",
    "em",
    " el",
    "im",
    "inate",
    " differe",
    "nces",
    "al",
    "bum",
    "the",
    " cat",
    " sat",
    "ot",
    "ux",
    "Zz",
    "Yy",
    "Ww",
    "cat",
    " dog",
    "The",
    "\n\n",
    " \t",
    "  ",
    "   ",
    "    ",
    " 14",
    "123",
    " 2024",
    " 1 2",
    "1a",
    ");",
    " )",
    "),",
    "%)",
    " $",
    "{\"",
    " //",
    " ->",
    "\u{2014}",
    "========",
    END_OF_TEXT,
];

/// Byte tokens followed by the fixture's multi-byte tokens.
pub fn fixture_tokenizer() -> Tokenizer {
    let mut vocab: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
    vocab.extend(EXTRA_TOKENS.iter().map(|t| t.as_bytes().to_vec()));
    Tokenizer::from_vocab(vocab).unwrap()
}

pub fn id(tok: &Tokenizer, s: &str) -> TokenId {
    let ids = tok.encode(s).unwrap();
    if ids.len() == 1 {
        return ids[0];
    }
    (0..tok.vocab_size() as TokenId)
        .find(|&i| tok.token_bytes(i) == s.as_bytes())
        .unwrap_or_else(|| panic!("{s:?} is not a single fixture token"))
}

/// `q(ot|P) = 0.01`, `q(at|th) = 0.5`, `q(ux|Q) = 0.05`; every other pair
/// is unseen.
pub fn fixture_bigrams(tok: &Tokenizer) -> BigramTable {
    let mut b = BigramTable::default();
    let t = |s| id(tok, s);
    b.add_count(t("P"), t("ot"), 1);
    b.add_count(t("P"), t("x"), 99);
    b.add_count(t("th"), t("at"), 1);
    b.add_count(t("th"), t("e"), 1);
    b.add_count(t("Q"), t("ux"), 1);
    b.add_count(t("Q"), t("y"), 19);
    b
}

pub struct PatternCase {
    pub name: &'static str,
    pub context: &'static [&'static str],
    pub target: &'static str,
    pub lookahead: Option<&'static str>,
    pub expect: &'static [Pattern],
    pub spacing_run: usize,
    pub truncated: bool,
}

const fn case(
    name: &'static str,
    context: &'static [&'static str],
    target: &'static str,
    lookahead: Option<&'static str>,
    expect: &'static [Pattern],
) -> PatternCase {
    PatternCase {
        name,
        context,
        target,
        lookahead,
        expect,
        spacing_run: 0,
        truncated: false,
    }
}

use Pattern::*;

/// Hand-labeled cases: the table examples of every pattern plus the edge
/// cases of the definitions.
pub const PATTERN_CASES: &[PatternCase] = &[
    case("word start be", &["x"], " be", Some(" "), &[WordStart]),
    case("word start R", &["x"], " R", Some("ose"), &[WordStart]),
    case("word start The", &["x"], " The", Some(" "), &[WordStart]),
    case("word part ne", &[" S"], "ne", Some("ed"), &[WordPart]),
    case("word part th", &["x"], "th", Some("at"), &[WordPart]),
    case("word part em", &["st"], "em", Some("ed"), &[WordPart]),
    case(
        "word end inate",
        &[" el", "im"],
        "inate",
        Some(" "),
        &[WordEnd],
    ),
    case(
        "word end nces",
        &[" differe"],
        "nces",
        Some(")"),
        &[WordEnd],
    ),
    case("word end bum", &["al"], "bum", Some(" "), &[WordEnd]),
    case(
        "excluded the cat",
        &["the", " cat", " sat", "the"],
        " cat",
        Some(" "),
        &[WordStart],
    ),
    case("spacing space", &["x"], " ", Some("x"), &[Spacing]),
    case("spacing newline", &["x"], "\n", Some("x"), &[Spacing]),
    case("spacing tab", &["x"], "\t", Some("x"), &[Spacing]),
    case(
        "spacing double newline",
        &["x"],
        "\n\n",
        Some("x"),
        &[Spacing],
    ),
    case("delimiter )", &["x"], ")", Some("x"), &[Delimiter]),
    case("delimiter space )", &["x"], " )", Some("x"), &[Delimiter]),
    case("delimiter ]", &["x"], "]", Some("x"), &[Delimiter]),
    case("delimiter );", &["x"], ");", Some("x"), &[Delimiter]),
    case("delimiter (", &["x"], "(", Some("x"), &[Delimiter]),
    case("formatting .", &["x"], ".", Some("x"), &[Formatting]),
    case("formatting ,", &["x"], ",", Some("x"), &[Formatting]),
    case("formatting //", &["x"], " //", Some("x"), &[Formatting]),
    case("numeric 123", &["x"], "123", Some("x"), &[Numeric]),
    case("numeric 14", &["x"], " 14", Some("x"), &[Numeric]),
    case("numeric 2024", &["x"], " 2024", Some("x"), &[Numeric]),
    PatternCase {
        truncated: true,
        ..case(
            "word end at window boundary",
            &["x"],
            "cat",
            None,
            &[WordPart],
        )
    },
    case(
        "word end before formatting",
        &["x"],
        "cat",
        Some("."),
        &[WordEnd],
    ),
    case(
        "word end before delimiter",
        &["x"],
        "cat",
        Some("("),
        &[WordEnd],
    ),
    case(
        "word end before newline",
        &["x"],
        "cat",
        Some("\n"),
        &[WordEnd],
    ),
    case(
        "word end before run of spaces",
        &["x"],
        "cat",
        Some("    "),
        &[WordEnd],
    ),
    case(
        "no word end before word start",
        &["x"],
        "cat",
        Some(" dog"),
        &[WordPart],
    ),
    case(
        "no word end before digit",
        &["x"],
        "cat",
        Some("1"),
        &[WordPart],
    ),
    case("capitalized word end", &["x"], "The", Some(","), &[WordEnd]),
    case(
        "single letter word part",
        &["x"],
        "x",
        Some("2"),
        &[WordPart],
    ),
    case(
        "induction rare bigram",
        &["P", "ot", "x", "P"],
        "ot",
        Some(" "),
        &[Induction, WordEnd],
    ),
    case(
        "induction common bigram",
        &["th", "at", "x", "th"],
        "at",
        Some("ed"),
        &[WordPart],
    ),
    case(
        "induction at threshold",
        &["Q", "ux", "Q"],
        "ux",
        Some("."),
        &[Induction, WordEnd],
    ),
    case(
        "induction excluded first token",
        &["a", "Zz", "a"],
        "Zz",
        Some("."),
        &[WordEnd],
    ),
    PatternCase {
        truncated: true,
        ..case(
            "induction with empty gap",
            &["Zz", "Yy", "Zz"],
            "Yy",
            None,
            &[Induction],
        )
    },
    case(
        "induction needs u last",
        &["Zz", "Yy", "Ww"],
        "Yy",
        Some("Yy"),
        &[WordPart],
    ),
    case(
        "induction order matters",
        &["Yy", "Zz", "Zz"],
        "Yy",
        Some("."),
        &[WordEnd],
    ),
    case(
        "induction unseen bigram",
        &["Yy", "Ww", "x", "Yy"],
        "Ww",
        Some(")"),
        &[Induction, WordEnd],
    ),
    case(
        "induction excluded target",
        &["Zz", " ", "Zz"],
        " ",
        Some("x"),
        &[Spacing],
    ),
    PatternCase {
        spacing_run: 2,
        ..case(
            "multi-char spacing run",
            &["x", "  ", "\n"],
            "    ",
            Some("x"),
            &[Spacing],
        )
    },
    PatternCase {
        spacing_run: 3,
        ..case(
            "three spaces before space",
            &["w", " ", " ", " "],
            " ",
            Some("x"),
            &[Spacing],
        )
    },
    case(
        "no spacing before space",
        &["w"],
        " ",
        Some("x"),
        &[Spacing],
    ),
    PatternCase {
        spacing_run: 5,
        ..case(
            "all-spacing context",
            &[" ", "\n", " \t", "\r", "\x0c"],
            "x",
            Some("."),
            &[WordEnd],
        )
    },
    case("spacing tab space", &["x"], " \t", Some("x"), &[Spacing]),
    case(
        "spacing carriage return",
        &["x"],
        "\r",
        Some("x"),
        &[Spacing],
    ),
    case("spacing form feed", &["x"], "\x0c", Some("x"), &[Spacing]),
    case("digits with letters", &["x"], "1a", Some("x"), &[]),
    case(
        "numeric with inner space",
        &["x"],
        " 1 2",
        Some("x"),
        &[Numeric],
    ),
    case("end of text", &["x"], END_OF_TEXT, Some("x"), &[Formatting]),
    case(
        "left delimiter brace quote",
        &["x"],
        "{\"",
        Some("x"),
        &[Delimiter],
    ),
    case(
        "right delimiter percent",
        &["x"],
        "%)",
        Some("x"),
        &[Delimiter],
    ),
    case(
        "right delimiter dollar",
        &["x"],
        "$",
        Some("x"),
        &[Delimiter],
    ),
    case(
        "left delimiter space dollar",
        &["x"],
        " $",
        Some("x"),
        &[Delimiter],
    ),
    case("formatting arrow", &["x"], " ->", Some("x"), &[Formatting]),
    case(
        "formatting long dash",
        &["x"],
        "\u{2014}",
        Some("x"),
        &[Formatting],
    ),
    case(
        "formatting rule",
        &["x"],
        "========",
        Some("x"),
        &[Formatting],
    ),
    case("plain symbol", &["x"], "@", Some("x"), &[]),
];

/// Classify one case and compare every flag; returns a description of the
/// first mismatch.
pub fn check_case(
    classifier: &PatternClassifier,
    tok: &Tokenizer,
    c: &PatternCase,
) -> Result<(), String> {
    let sample = Sample {
        id: 0,
        tag: "fixture".into(),
        doc_index: 0,
        position: c.context.len(),
        context: c.context.iter().map(|s| id(tok, s)).collect(),
        target: id(tok, c.target),
        lookahead: c.lookahead.map(|s| id(tok, s)),
    };
    let got = classifier.classify(&sample);
    let mut want = PatternLabelSet {
        preceding_spacing_count: c.spacing_run,
        word_end_truncated: c.truncated,
        ..Default::default()
    };
    for &p in c.expect {
        want.set(p, true);
    }
    if got == want {
        Ok(())
    } else {
        Err(format!("{}: got {got:?}, want {want:?}", c.name))
    }
}
