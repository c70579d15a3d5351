//! Tokenizes a short text, builds a vocabulary with topic masking and shows
//! the sliding-window units with their fandom prefix.
//!
//! ```text
//! cargo run --example preprocess_document
//! ```

use bayes_av::corpus::PairRecord;
use bayes_av::preprocess::{PreprocessConfig, Prefix, prepare_text};
use bayes_av::train::build_vocabulary;

fn main() -> bayes_av::Result<()> {
    let texts = [
        "The rain fell, and she waited. The rain did not stop; she waited anyway.",
        "He waited by the door. Rain, again, and the door stayed shut.",
    ];
    let pairs = vec![PairRecord {
        id: "p1".into(),
        fandoms: ["Harry Potter".into(), "Sherlock Holmes".into()],
        texts: texts.map(String::from),
    }];
    let cfg = PreprocessConfig {
        hop_length: 6,
        overlapping_length: 2,
        max_tokens: 12,
        ..PreprocessConfig::default()
    };
    let vocab = build_vocabulary(&pairs, &cfg)?;
    println!("{} tokens kept, {} characters, {} fandom prefixes", vocab.num_tokens(), vocab.num_chars(), vocab.num_prefixes());

    for (fandom, text) in [("Harry Potter", texts[0]), ("Discworld", "The Luggage waited, and waited.")] {
        let doc = prepare_text(text, fandom, &vocab, &cfg);
        let prefix = match &doc.prefix {
            Prefix::Slot(s) => format!("slot {s}"),
            Prefix::Average(ids) => format!("mean of token rows {ids:?}"),
        };
        println!("\n[{fandom}] prefix: {prefix}");
        for (k, u) in doc.units.iter().enumerate() {
            let masked: Vec<String> = u
                .tokens
                .iter()
                .zip(&u.token_ids)
                .map(|(t, &id)| if vocab.contains_token(t) { t.clone() } else { format!("<UNK:{t}:{id}>") })
                .collect();
            println!("  unit {k}: {}", masked.join(" "));
        }
    }
    Ok(())
}
