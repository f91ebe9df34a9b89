//! Sample (context, target) pairs from the synthetic corpus and label them
//! with the eight token patterns.

use suscept_atlas::corpus::{
    estimate_bigram_table, load_corpus, read_manifest, read_texts, sample_contexts,
};
use suscept_atlas::patterns::{pattern_percentages, PatternClassifier};
use suscept_atlas::synth::{write_synthetic_corpus, SynthConfig};
use suscept_atlas::tokenizer::Tokenizer;

fn main() -> suscept_atlas::Result<()> {
    let dir = std::env::temp_dir().join("suscept-atlas-patterns");
    let manifest = write_synthetic_corpus(
        &dir,
        &SynthConfig {
            docs_per_tag: 60,
            ..Default::default()
        },
    )?;
    let entries = read_manifest(&manifest)?;
    let texts: Vec<String> = read_texts(&entries)?.into_iter().map(|(_, t)| t).collect();
    let tok = Tokenizer::train(&texts, 384)?;
    let corpus = load_corpus(&entries, &tok)?;
    let bigrams = estimate_bigram_table(&corpus)?;
    let classifier = PatternClassifier::new(&tok, &bigrams);

    let set = sample_contexts(&corpus, 500, 32, 1)?;
    let labels: Vec<_> = set.samples.iter().map(|s| classifier.classify(s)).collect();
    println!(
        "{} samples over tags {:?}",
        set.samples.len(),
        corpus.tags()
    );
    for (p, pct) in pattern_percentages(&labels) {
        println!("{:<12} {pct:5.1}%", p.label());
    }

    println!("\nfirst induction samples:");
    for (s, l) in set
        .samples
        .iter()
        .zip(&labels)
        .filter(|(_, l)| l.induction)
        .take(5)
    {
        let tail = &s.context[s.context.len().saturating_sub(8)..];
        println!(
            "  ...{:?} => {:?}",
            tok.decode_lossy(tail),
            tok.token_str(s.target)
        );
        assert!(l.is_consistent());
    }
    Ok(())
}
