//! Residual countermeasure network, optimizer, scheduler, training loop
//! and checkpoints.

pub mod checkpoint;
pub mod net;
pub mod optim;
pub mod train;

pub use checkpoint::Checkpoint;
pub use net::{gram_tensor, llr, score_utterance, BnRunning, Forward, Mode, Param, ResNet, ResNetConfig};
pub use optim::{AdamW, Plateau};
pub use train::{
    score_dataset, score_dataset_parallel, train, AlphaKeyword, AlphaSpec, Dataset, EpochRecord, Example, TrainConfig, TrainOutcome,
    TrainingLog,
};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    #[test]
    fn full_scale_shapes_and_counts() {
        let cfg = ResNetConfig::default();
        let shapes = cfg.stage_shapes().unwrap();
        assert_eq!(
            shapes,
            [[16, 513, 500], [16, 513, 500], [32, 257, 250], [64, 129, 125], [128, 65, 63]]
        );
        let net = ResNet::new(cfg, 0).unwrap();
        assert_eq!(net.count_params("stem.conv"), 144);
        assert_eq!(net.count_params("out."), 66);
        assert_eq!(net.count_params("fc."), 4128);
        assert_eq!(net.count_params("stage1.block2.conv"), 4608 + 64);
    }

    #[test]
    fn desk_forward_is_normalized() {
        let net = ResNet::new(ResNetConfig::desk(16, 12), 3).unwrap();
        let z = net.logits(&Tensor::zeros(&[2, 1, 16, 12])).unwrap();
        for row in z.data().chunks(2) {
            let lp = crate::objectives::log_softmax(&[row[0] as f64, row[1] as f64]);
            assert!((lp.iter().map(|v| v.exp()).sum::<f64>() - 1.0).abs() < 1e-6);
        }
        assert!(z.all_finite());
    }

    #[test]
    fn llr_examples() {
        assert_eq!(llr(&[0.3, 0.3]), 0.0);
        let p: f64 = 0.9;
        let s = llr(&[p.ln(), (1.0 - p).ln()]);
        assert!((s - 9f64.ln()).abs() < 1e-12);
        assert!((llr(&[1.7, -0.2]) + llr(&[-0.2, 1.7])).abs() < 1e-15);
    }

    #[test]
    fn checkpoint_bytes_round_trip() {
        let net = ResNet::new(ResNetConfig::desk(8, 8), 1).unwrap();
        let opt = AdamW::new(net.params(), 1e-3, (0.9, 0.999), 5e-5);
        let ck = Checkpoint::capture(&net, &opt, 4);
        let back = Checkpoint::decode(&ck.encode().unwrap()).unwrap();
        assert_eq!(back, ck);
        let mut bytes = ck.encode().unwrap();
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(Checkpoint::decode(&bytes), Err(crate::Error::Format(_))));
    }
}
