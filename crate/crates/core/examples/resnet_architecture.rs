//! Stage shapes and parameter counts of the full-size network, and a
//! forward pass through the small variant.

use antispoof::autodiff::Tensor;
use antispoof::model::{ResNet, ResNetConfig};

fn main() -> antispoof::Result<()> {
    let full = ResNet::new(ResNetConfig::default(), 0)?;
    let shapes = full.config().stage_shapes()?;
    println!("input (1, 513, 500)");
    for (name, s) in ["stem", "stage1", "stage2", "stage3", "stage4"].iter().zip(&shapes) {
        println!("{name:7} {:?}  params {}", s, full.count_params(name));
    }
    println!("fc {}  out {}  total {}", full.count_params("fc."), full.count_params("out."), full.n_params());

    let small = ResNet::new(ResNetConfig::desk(32, 32), 0)?;
    let x = Tensor::from_fn(&[2, 1, 32, 32], |i| ((i * 37) % 11) as f32 / 11.0);
    println!("scale-4 network: {} params, scores {:?}", small.n_params(), small.score_batch(&x)?);
    Ok(())
}
