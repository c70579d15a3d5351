//! Dissolves labeled pairs into per-author documents and draws balanced
//! same/different pairs for a few epochs.
//!
//! ```text
//! cargo run --example resample_epoch -- [epochs] [out_dir]
//! ```

use bayes_av::corpus::author_records;
use bayes_av::resample::{AuthorPool, sample_pairs, write_epoch};
use bayes_av::seed::derive;
use bayes_av::synth::{SynthConfig, generate_corpus};

fn main() -> bayes_av::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().map_or(3, |a| a.parse().expect("epoch count"));
    let out = args.next();

    let corpus = generate_corpus(&SynthConfig {
        authors: 30,
        ..SynthConfig::default()
    })?;
    let (records, docs) = author_records(&corpus.train.pairs, &corpus.train.truth)?;
    let pool = AuthorPool::from_records(records)?;
    println!("{} training pairs -> {} documents by {} authors", corpus.train.pairs.len(), pool.documents(), pool.authors());

    for e in 0..epochs {
        let pairs = sample_pairs(&pool, derive(0, "epoch", e as u64));
        let same = pairs.iter().filter(|p| p.same).count();
        println!("epoch {e}: {} pairs, {same} same, {} different", pairs.len(), pairs.len() - same);
        if let Some(dir) = &out {
            std::fs::create_dir_all(dir).expect("output directory");
            let p = write_epoch(std::path::Path::new(dir), &pairs, &docs, e)?;
            println!("  wrote {}", p.display());
        }
    }
    Ok(())
}
