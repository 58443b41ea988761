//! Replay one synthetic utterance through all nine attack codes and show
//! how far each copy drifts from the clean capture.

use antispoof::protocol::AttackSpec;
use antispoof::replay::{capture_bonafide, degrade, log_spectral_distance, synth_utterance, ReplayConfig, Voice};
use antispoof::rng;

fn main() -> antispoof::Result<()> {
    let cfg = ReplayConfig::default();
    let voice = Voice::sample(&mut rng::stream(7, &[0]));
    let clean = synth_utterance(&voice, 16_000, 1.0, 7)?;
    let bona = capture_bonafide(&clean, 7, &cfg)?;
    println!("voice f0 {:.1} Hz, bonafide LSD {:.2} dB", voice.f0, log_spectral_distance(&clean, &bona)?);
    println!("code  distance  lowpass  drive  LSD(dB)");
    for spec in AttackSpec::all() {
        let p = cfg.draw(spec, 7);
        let replay = degrade(&clean, spec, 7, &cfg)?;
        println!(
            "{spec}    {:6.1}cm  {:6.0}Hz  {:.2}   {:.2}",
            p.distance_cm,
            p.lowpass_hz,
            p.drive,
            log_spectral_distance(&clean, &replay)?
        );
    }
    Ok(())
}
