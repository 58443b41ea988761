//! The whole command-line pipeline on a toy corpus, driven in-process:
//! simulate, extract, train, score, fuse, evaluate, breakdown, saliency.

use std::path::Path;

use antispoof::cli::main_with;

fn run(args: &[&str]) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = main_with(std::iter::once("antispoof").chain(args.iter().copied()), &mut out, &mut err);
    print!("{}", String::from_utf8_lossy(&out));
    if code != 0 {
        panic!("{} failed: {}", args[0], String::from_utf8_lossy(&err));
    }
}

fn main() {
    let tmp = tempfile::tempdir().unwrap();
    let d = |p: &str| tmp.path().join(p).to_string_lossy().into_owned();
    let (corpus, feats) = (d("corpus"), d("feats"));
    std::fs::write(d("exp.toml"), "[features]\nn_frames = 64\npool = [16, 16]\n[train]\nmax_epochs = 2\nlr = 0.001\n").unwrap();

    run(&["simulate", "--out", &corpus, "--sources", "3", "--utts", "2", "--seed", "1"]);
    let proto = |s: &str| Path::new(&corpus).join(format!("protocol_{s}.txt")).to_string_lossy().into_owned();
    for s in ["train", "dev", "eval"] {
        run(&["extract", "--feature", "stft", "--protocol", &proto(s), "--wav-dir", &corpus, "--out", &feats, "--config", &d("exp.toml")]);
    }
    run(&["train", "--feature-dir", &feats, "--protocol-train", &proto("train"), "--protocol-dev", &proto("dev"),
        "--objective", "bfl", "--gamma", "2", "--config", &d("exp.toml"), "--out", &d("cm.ckpt")]);
    print!("{}", std::fs::read_to_string(d("cm.ckpt.log")).unwrap());
    run(&["score", "--ckpt", &d("cm.ckpt"), "--feature-dir", &feats, "--protocol", &proto("eval"), "--out", &d("eval.scores")]);
    run(&["fuse", "--method", "mean", "--scores", &d("eval.scores"), &d("eval.scores"), "--out", &d("fused.scores")]);
    run(&["evaluate", "--scores", &d("fused.scores"), "--protocol", &proto("eval")]);
    run(&["breakdown", "--scores", &d("eval.scores"), "--protocol", &proto("eval")]);
    let first = std::fs::read_to_string(proto("eval")).unwrap().split_whitespace().next().unwrap().to_string();
    run(&["saliency", "--ckpt", &d("cm.ckpt"), "--feature", &format!("{feats}/{first}.fgrm"), "--out", &d("sal.fgrm")]);
    println!("saliency written for {first}");
}
