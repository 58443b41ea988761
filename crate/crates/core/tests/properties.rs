use antispoof::audio::{read_wav, write_wav, Waveform};
use antispoof::autodiff::{Tape, Tensor};
use antispoof::metrics::{eer_of, ErrorCurve, TdcfParams};
use antispoof::model::{AdamW, Mode, ResNet, ResNetConfig};
use antispoof::objectives::{batch_loss, bfl, bfl_with_logit_grad, log_softmax, ClassWeights, Objective};
use antispoof::protocol::{AttackSpec, Protocol, ProtocolEntry};
use antispoof::replay::{generate_corpus, CorpusConfig};
use antispoof::scoring::{mean_fuse, FusionModel, ScoreRecord};
use proptest::prelude::*;
use rand::Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn wav_round_trip_within_one_lsb(samples in proptest::collection::vec(-1.0f64..=1.0, 1..400)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        let w = Waveform::new(samples.clone(), 16_000, "x").unwrap();
        write_wav(&w, &path).unwrap();
        let back = read_wav(&path).unwrap();
        prop_assert_eq!(back.len(), samples.len());
        for (a, b) in back.samples().iter().zip(&samples) {
            prop_assert!((a - b).abs() <= 2f64.powi(-15));
        }
    }

    #[test]
    fn bfl_gradient_matches_finite_differences(
        z0 in -6.0f64..6.0,
        z1 in -6.0f64..6.0,
        t in 0usize..2,
        gi in 0usize..4,
    ) {
        let gamma = [0.5, 1.0, 2.0, 5.0][gi];
        let w = ClassWeights::auto(10, 90).unwrap();
        let (_, g) = bfl_with_logit_grad(&[z0, z1], t, &w, gamma).unwrap();
        let h = 1e-6;
        for k in 0..2 {
            let f = |d: f64| {
                let mut z = [z0, z1];
                z[k] += d;
                bfl(&log_softmax(&z), t, &w, gamma).unwrap()
            };
            let fd = (f(h) - f(-h)) / (2.0 * h);
            prop_assert!((g[k] - fd).abs() / g[k].abs().max(fd.abs()).max(1e-8) < 1e-4, "γ={} g={} fd={}", gamma, g[k], fd);
        }
    }

    #[test]
    fn fusion_is_permutation_invariant(
        a in proptest::collection::vec(-5.0f64..5.0, 12),
        b in proptest::collection::vec(-5.0f64..5.0, 12),
        c in proptest::collection::vec(-5.0f64..5.0, 12),
    ) {
        let sys = |v: &[f64]| v.iter().enumerate().map(|(i, s)| ScoreRecord::new(format!("u{i}"), *s)).collect::<Vec<_>>();
        let (a, b, c) = (sys(&a), sys(&b), sys(&c));
        let x = mean_fuse(&[a.clone(), b.clone(), c.clone()]).unwrap();
        let y = mean_fuse(&[c, a, b]).unwrap();
        for (p, q) in x.iter().zip(&y) {
            prop_assert_eq!(&p.utt_id, &q.utt_id);
            prop_assert!((p.score - q.score).abs() <= 1e-12);
        }
    }

    #[test]
    fn metric_bounds_and_shift_invariance(
        bona in proptest::collection::vec(-256i32..256, 1..60),
        spoof in proptest::collection::vec(-256i32..256, 1..60),
        shift in -6400i32..6400,
    ) {
        // Dyadic scores and shifts add exactly, so ties survive the shift.
        let d = |v: &[i32], k: i32| v.iter().map(|x| (x + k) as f64 / 64.0).collect::<Vec<_>>();
        let p = TdcfParams::default();
        let c = ErrorCurve::new(&d(&bona, 0), &d(&spoof, 0)).unwrap();
        let (e, _) = c.eer();
        prop_assert!((0.0..=0.5 + 1e-12).contains(&e), "eer {}", e);
        let t = c.min_tdcf(&p).unwrap().0;
        prop_assert!(t >= 0.0);
        let cs = ErrorCurve::new(&d(&bona, shift), &d(&spoof, shift)).unwrap();
        prop_assert!((cs.min_tdcf(&p).unwrap().0 - t).abs() <= 1e-12);
        prop_assert!((cs.eer().0 - e).abs() <= 1e-12);
    }
}

#[test]
fn focusing_ratio_exceeds_one_hundred() {
    let w = ClassWeights::uniform();
    let lp = |p: f64| [p.ln(), (1.0 - p).ln()];
    let bce_ratio = bfl(&lp(0.6), 0, &w, 0.0).unwrap() / bfl(&lp(0.99), 0, &w, 0.0).unwrap();
    let bfl_ratio = bfl(&lp(0.6), 0, &w, 2.0).unwrap() / bfl(&lp(0.99), 0, &w, 2.0).unwrap();
    assert!(bfl_ratio / bce_ratio > 100.0, "{bfl_ratio} vs {bce_ratio}");
}

#[test]
fn mean_of_copies_keeps_eer() {
    let mut r = antispoof::rng::stream(11, &[]);
    let p = Protocol::new(
        (0..40)
            .map(|i| ProtocolEntry::new(format!("u{i}"), (i % 4 != 0).then(|| AttackSpec::all()[i % 9])))
            .collect(),
    )
    .unwrap();
    let recs: Vec<ScoreRecord> = (0..40).map(|i| ScoreRecord::new(format!("u{i}"), r.gen_range(-3.0..3.0))).collect();
    let lab = |v: &[ScoreRecord]| antispoof::scoring::attach_labels(v, &p).unwrap();
    let single = antispoof::metrics::eer(&lab(&recs)).unwrap().0;
    for k in 1..5 {
        let fused = mean_fuse(&vec![recs.clone(); k]).unwrap();
        assert_eq!(antispoof::metrics::eer(&lab(&fused)).unwrap().0, single);
    }
}

#[test]
fn duplicated_system_keeps_ranking() {
    let mut r = antispoof::rng::stream(11, &[]);
    let s: Vec<f64> = (0..80).map(|_| r.gen_range(-3.0..3.0)).collect();
    let bona: Vec<bool> = s.iter().map(|v| *v + r.gen_range(-2.0..2.0) > 0.5).collect();
    let rows: Vec<Vec<f64>> = s.iter().map(|v| vec![*v, *v]).collect();
    let m = FusionModel::train_logistic(&rows, &bona).unwrap();
    let fused: Vec<f64> = rows.iter().map(|row| m.fuse_row(row)).collect();
    let rank = |v: &[f64]| {
        let mut i: Vec<usize> = (0..v.len()).collect();
        i.sort_by(|a, b| v[*a].total_cmp(&v[*b]));
        i
    };
    assert_eq!(rank(&fused), rank(&s));
    let (b, sp): (Vec<f64>, Vec<f64>) = (
        fused.iter().zip(&bona).filter(|x| *x.1).map(|x| *x.0).collect(),
        fused.iter().zip(&bona).filter(|x| !*x.1).map(|x| *x.0).collect(),
    );
    let (b0, s0): (Vec<f64>, Vec<f64>) = (
        s.iter().zip(&bona).filter(|x| *x.1).map(|x| *x.0).collect(),
        s.iter().zip(&bona).filter(|x| !*x.1).map(|x| *x.0).collect(),
    );
    assert_eq!(eer_of(&b, &sp).unwrap(), eer_of(&b0, &s0).unwrap());
}

#[test]
fn codes_are_balanced_in_every_split() {
    let cfg = CorpusConfig { n_sources: 5, utts_per_source: 2, duration_s: 0.3, ..CorpusConfig::default() };
    let c = generate_corpus(&cfg, 2).unwrap();
    for s in &c.splits {
        let p = s.protocol();
        let n_bona = p.count(antispoof::protocol::Label::Bonafide);
        for a in AttackSpec::all() {
            assert_eq!(p.entries.iter().filter(|e| e.attack == Some(a)).count(), n_bona, "{a} in {:?}", s.split);
        }
    }
}

#[test]
fn forward_is_bit_deterministic() {
    let net = ResNet::new(ResNetConfig::desk(16, 12), 4).unwrap();
    let x = Tensor::from_fn(&[3, 1, 16, 12], |i| ((i * 7919) % 101) as f32 / 50.0 - 1.0);
    let a = net.logits(&x).unwrap();
    let b = ResNet::new(ResNetConfig::desk(16, 12), 4).unwrap().logits(&x).unwrap();
    assert_eq!(a.data(), b.data());
}

#[test]
fn small_step_decreases_frozen_batch_loss() {
    let targets = [0, 1, 1, 1, 0, 1];
    let w = ClassWeights::auto(2, 4).unwrap();
    let obj = Objective::bfl(2.0);
    for seed in 0..20u64 {
        let mut net = ResNet::new(ResNetConfig::desk(8, 8), seed).unwrap();
        let mut r = antispoof::rng::stream(seed, &[77]);
        let x = Tensor::from_fn(&[6, 1, 8, 8], |_| r.gen_range(-1.0f32..1.0));
        let loss_of = |net: &ResNet| {
            let mut tape = Tape::new();
            let xv = tape.constant(x.clone());
            let f = net.forward(&mut tape, xv, Mode::Train).unwrap();
            let l = batch_loss(&mut tape, f.logits, &targets, &w, &obj).unwrap();
            (tape, f, l)
        };
        let (tape, f, l) = loss_of(&net);
        let before = tape.value(l).item() as f64;
        let grads = tape.backward(l).unwrap();
        let gs: Vec<&[f32]> = f.params.iter().map(|v| grads.get(*v).unwrap()).collect();
        let mut opt = AdamW::new(net.params(), 1e-4, (0.9, 0.999), 5e-5);
        opt.update(net.params_mut(), &gs).unwrap();
        let (tape, _, l) = loss_of(&net);
        let after = tape.value(l).item() as f64;
        assert!(after < before, "seed {seed}: {before} -> {after}");
    }
}
