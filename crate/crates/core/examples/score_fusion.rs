//! Mean and logistic-regression fusion of three score files.

use antispoof::metrics::eer;
use antispoof::protocol::{Protocol, ProtocolEntry};
use antispoof::rng;
use antispoof::scoring::{attach_labels, mean_fuse, FusionModel, ScoreRecord};
use rand_distr::{Distribution, Normal};

/// Three systems with different noise levels and offsets on the same trials.
fn systems(seed: u64, n: usize) -> (Protocol, Vec<Vec<ScoreRecord>>) {
    let mut r = rng::stream(seed, &[]);
    let truth: Vec<bool> = (0..n).map(|i| i % 10 == 0).collect();
    let entries = truth
        .iter()
        .enumerate()
        .map(|(i, b)| ProtocolEntry::new(format!("u{i}"), if *b { None } else { Some("BB".parse().unwrap()) }))
        .collect();
    let sys = [(1.0, 0.0), (2.0, 3.0), (0.7, -1.0)]
        .iter()
        .map(|&(noise, offset)| {
            let nd = Normal::new(0.0, noise).unwrap();
            truth
                .iter()
                .enumerate()
                .map(|(i, b)| ScoreRecord::new(format!("u{i}"), offset + if *b { 1.5 } else { -1.5 } + nd.sample(&mut r)))
                .collect()
        })
        .collect();
    (Protocol { entries }, sys)
}

fn main() -> antispoof::Result<()> {
    let (dev_p, dev) = systems(1, 400);
    let (eval_p, eval) = systems(2, 400);
    for (k, s) in eval.iter().enumerate() {
        println!("system {k}: eval EER {:.4}", eer(&attach_labels(s, &eval_p)?)?.0);
    }
    let mean = mean_fuse(&eval)?;
    println!("mean fusion: eval EER {:.4}", eer(&attach_labels(&mean, &eval_p)?)?.0);
    let lr = FusionModel::train_on_dev(&dev, &dev_p)?;
    println!("logistic fusion weights {:?} bias {:.3}", lr.weights, lr.bias);
    let fused = lr.apply(&eval)?;
    println!("logistic fusion: eval EER {:.4}", eer(&attach_labels(&fused, &eval_p)?)?.0);
    print!("{}", lr.to_text());
    Ok(())
}
