//! Balanced focal loss against cross-entropy: the focal term shrinks the
//! loss of confident predictions so training concentrates on hard ones.

use antispoof::objectives::{bce, bfl, bfl_with_logit_grad, loss_ratio, ClassWeights};

fn main() -> antispoof::Result<()> {
    let w = ClassWeights::auto(600, 5400)?;
    println!("auto weights: bonafide {:.3}, spoof {:.3}", w.alpha(0), w.alpha(1));
    println!(" p_t    BCE      BFL(2)   ratio");
    for p in [0.1f64, 0.3, 0.5, 0.7, 0.9, 0.99] {
        let lp = [p.ln(), (1.0 - p).ln()];
        let u = ClassWeights::uniform();
        println!("{p:4.2}  {:.5}  {:.5}  {:.4}", bce(&lp, 0, &u)?, bfl(&lp, 0, &u, 2.0)?, loss_ratio(p, 2.0)?);
    }
    let (l, g) = bfl_with_logit_grad(&[0.4, -0.3], 1, &w, 2.0)?;
    println!("spoof target, logits [0.4, -0.3]: loss {l:.5}, dL/dz [{:+.5}, {:+.5}]", g[0], g[1]);
    Ok(())
}
