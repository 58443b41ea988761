//! EER, normalized min t-DCF and the per-attack breakdown of a score list.

use antispoof::metrics::{breakdown, breakdown_tsv, ErrorCurve, MetricSummary, TdcfParams};
use antispoof::protocol::{AttackSpec, Label};
use antispoof::rng;
use antispoof::scoring::ScoreRecord;
use rand_distr::{Distribution, Normal};

fn main() -> antispoof::Result<()> {
    let mut r = rng::stream(11, &[]);
    let mut records = Vec::new();
    for i in 0..200 {
        let s = Normal::new(2.0, 1.0).unwrap().sample(&mut r);
        records.push(ScoreRecord::labeled(format!("b{i}"), s, Label::Bonafide, None));
    }
    for (k, spec) in AttackSpec::all().into_iter().enumerate() {
        // Harder codes sit closer to the bonafide scores.
        let mean = -2.0 + 0.35 * (8 - k) as f64;
        for i in 0..100 {
            let s = Normal::new(mean, 1.0).unwrap().sample(&mut r);
            records.push(ScoreRecord::labeled(format!("s{k}_{i}"), s, Label::Spoof, Some(spec)));
        }
    }
    let p = TdcfParams::default();
    println!("{}", MetricSummary::compute(&records, &p)?.line());
    print!("{}", breakdown_tsv(&breakdown(&records, &p)?));

    let curve = ErrorCurve::new(&[0.9, 0.4], &[0.5, 0.1])?;
    println!("two-and-two example: EER {:.4}", curve.eer().0);
    Ok(())
}
