//! End-to-end in memory: simulate a corpus, extract pooled STFT grams,
//! train the small network with cross-entropy and with balanced focal
//! loss, then compare eval metrics per attack.
//!
//! Takes a few minutes in release mode.

use std::collections::HashMap;

use antispoof::features::{Extractor, FeatureConfig, FeatureKind};
use antispoof::metrics::{breakdown, MetricSummary, TdcfParams};
use antispoof::model::{score_dataset, train, Dataset, ResNet, ResNetConfig, TrainConfig};
use antispoof::objectives::ObjectiveKind;
use antispoof::replay::{generate_corpus, CorpusConfig, Split};

fn main() -> antispoof::Result<()> {
    let corpus = generate_corpus(
        &CorpusConfig { n_sources: 12, utts_per_source: 4, split_ratios: [0.5, 0.25, 0.25], seed: 5, ..Default::default() },
        1,
    )?;
    let mut ex = Extractor::new(FeatureConfig { n_frames: 96, pool: Some((32, 32)), ..Default::default() });
    let mut sets = HashMap::new();
    for s in Split::ALL {
        let sc = corpus.split(s);
        let mut grams = HashMap::new();
        for e in &sc.entries {
            grams.insert(e.utt_id.clone(), ex.extract(&e.wav, FeatureKind::Stft)?);
        }
        sets.insert(s, Dataset::from_grams(&sc.protocol(), |id| Ok(grams[id].clone()))?);
    }

    let p = TdcfParams::default();
    for objective in [ObjectiveKind::Bce, ObjectiveKind::Bfl] {
        let cfg = TrainConfig { lr: 1e-3, max_epochs: 4, objective, ..Default::default() };
        let out = train(ResNet::new(ResNetConfig::desk(32, 32), 0)?, &sets[&Split::Train], &sets[&Split::Dev], &cfg)?;
        print!("{}", out.log.to_text());
        let scores = score_dataset(&out.best.model()?, &sets[&Split::Eval])?;
        println!("{objective:?} (best epoch {}): {}", out.best_epoch, MetricSummary::compute(&scores, &p)?.line());
        let per: Vec<String> = breakdown(&scores, &p)?.iter().map(|r| format!("{}={:.3}", r.attack, r.eer)).collect();
        println!("  {}", per.join(" "));
    }
    Ok(())
}
