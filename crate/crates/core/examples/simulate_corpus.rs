//! Generate a small labeled replay corpus and write it to disk.
//!
//! `cargo run --example simulate_corpus -- /tmp/corpus`

use antispoof::protocol::Label;
use antispoof::replay::{generate_corpus, CorpusConfig, Split};

fn main() -> antispoof::Result<()> {
    let cfg = CorpusConfig { n_sources: 5, utts_per_source: 2, split_ratios: [0.4, 0.2, 0.4], seed: 3, ..Default::default() };
    let corpus = generate_corpus(&cfg, 2)?;
    for s in Split::ALL {
        let sc = corpus.split(s);
        let p = sc.protocol();
        println!(
            "{:5} sources {:?}: {} bonafide, {} spoof",
            s.name(),
            sc.sources,
            p.count(Label::Bonafide),
            p.count(Label::Spoof)
        );
    }
    if let Some(dir) = std::env::args().nth(1) {
        corpus.write(dir.as_ref())?;
        println!("wrote {dir}");
    }
    Ok(())
}
