//! Reverse-mode gradients on a tiny two-layer network, checked against a
//! central finite difference.

use antispoof::autodiff::{Tape, Tensor};

fn loss(w1: &Tensor, w2: &Tensor, x: &Tensor) -> antispoof::Result<(f32, Vec<f32>)> {
    let mut t = Tape::new();
    let (x, w1, w2) = (t.constant(x.clone()), t.leaf(w1.clone(), true), t.leaf(w2.clone(), true));
    let h = t.linear(x, w1, None)?;
    let h = t.relu(h);
    let z = t.linear(h, w2, None)?;
    let lp = t.log_softmax(z)?;
    let picked = t.select(lp, &[0, 1])?;
    let l = t.neg(picked);
    let l = t.mean(l);
    let g = t.backward(l)?;
    Ok((t.value(l).item(), g.get(w1).unwrap().to_vec()))
}

fn main() -> antispoof::Result<()> {
    let x = Tensor::from_fn(&[2, 3], |i| (i as f32 * 0.7).sin());
    let w1 = Tensor::from_fn(&[4, 3], |i| (i as f32 * 1.3).cos() * 0.5);
    let w2 = Tensor::from_fn(&[2, 4], |i| (i as f32 * 0.9).sin() * 0.5);
    let (l, g) = loss(&w1, &w2, &x)?;
    println!("loss {l:.6}");
    let h = 1e-3;
    for k in [0, 5, 11] {
        let mut plus = w1.clone();
        plus.data_mut()[k] += h;
        let mut minus = w1.clone();
        minus.data_mut()[k] -= h;
        let fd = (loss(&plus, &w2, &x)?.0 - loss(&minus, &w2, &x)?.0) / (2.0 * h);
        println!("dL/dw1[{k}]  tape {:+.5}  finite difference {:+.5}", g[k], fd);
    }
    Ok(())
}
