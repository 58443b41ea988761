//! Extract every feature gram from a harmonic tone and save one to disk.

use antispoof::audio::synth_tone_complex;
use antispoof::features::{gramfile, read_gram, write_gram, Extractor, FeatureConfig, FeatureKind};

fn main() -> antispoof::Result<()> {
    let w = synth_tone_complex(220.0, 12, 1.0, 16_000, 1)?;
    let mut ex = Extractor::new(FeatureConfig { n_frames: 100, ..Default::default() });
    for kind in [FeatureKind::Stft, FeatureKind::Gd, FeatureKind::Mgd, FeatureKind::Cqt] {
        let g = ex.extract(&w, kind)?;
        let (lo, hi) = g.data().iter().fold((f64::MAX, f64::MIN), |(a, b), v| (a.min(*v), b.max(*v)));
        println!("{:4} {:4} x {:3}  range [{lo:.2}, {hi:.2}]", kind.name(), g.n_bins(), g.n_frames());
    }

    let pooled = Extractor::new(FeatureConfig { n_frames: 96, pool: Some((32, 32)), ..Default::default() })
        .extract(&w, FeatureKind::Stft)?;
    let path = std::env::temp_dir().join(format!("tone.{}", gramfile::GRAM_EXT));
    write_gram(&pooled, &path)?;
    let back = read_gram(&path, "tone")?;
    let err = back.data().iter().zip(pooled.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("pooled {}x{} written to {}, max f32 storage error {err:.1e}", back.n_bins(), back.n_frames(), path.display());
    Ok(())
}
