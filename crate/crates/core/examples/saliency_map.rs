//! Which time-frequency cells drive the bonafide decision: the absolute
//! input gradient of a network on one gram, summarized per frequency band.

use antispoof::audio::synth_tone_complex;
use antispoof::features::{Extractor, FeatureConfig, FeatureKind};
use antispoof::model::{ResNet, ResNetConfig};

fn main() -> antispoof::Result<()> {
    let w = synth_tone_complex(180.0, 20, 1.0, 16_000, 2)?;
    let g = Extractor::new(FeatureConfig { n_frames: 96, pool: Some((32, 32)), ..Default::default() })
        .extract(&w, FeatureKind::Stft)?;
    let net = ResNet::new(ResNetConfig::desk(32, 32), 4)?;
    let sal = net.saliency(&g, 0)?;
    println!("saliency {}x{}", sal.n_bins(), sal.n_frames());
    // Rows are frequency bins; sum each group of four.
    let bands: Vec<f64> = sal.data().chunks(4 * sal.n_frames()).map(|rows| rows.iter().sum()).collect();
    let top = bands.iter().cloned().fold(0.0, f64::max);
    for (k, e) in bands.iter().enumerate() {
        println!("bins {:2}-{:2}  {}", 4 * k, 4 * k + 3, "#".repeat((40.0 * e / top).round() as usize));
    }
    Ok(())
}
