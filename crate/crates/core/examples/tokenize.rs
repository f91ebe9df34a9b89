//! Train a byte-level BPE vocabulary on the synthetic corpus and show how a
//! few strings split into tokens.

use suscept_atlas::synth::{synthetic_documents, SynthConfig};
use suscept_atlas::tokenizer::Tokenizer;

fn main() -> suscept_atlas::Result<()> {
    let docs = synthetic_documents(&SynthConfig {
        docs_per_tag: 40,
        ..Default::default()
    });
    let texts: Vec<&str> = docs.iter().map(|(_, t)| t.as_str()).collect();
    let tok = Tokenizer::train(&texts, 512)?;
    println!("vocabulary: {} tokens", tok.vocab_size());

    for s in [
        "The old house was quiet.",
        "        return value",
        "1. red boat [42] (7%)",
    ] {
        let ids = tok.encode(s)?;
        let pieces: Vec<String> = ids
            .iter()
            .map(|&i| format!("{:?}", tok.token_str(i)))
            .collect();
        println!("{s:?}\n  -> {}", pieces.join(" "));
        assert_eq!(tok.decode(&ids), s.as_bytes());
    }
    Ok(())
}
