//! Temporary diagnostic: upper-bound the seg decoder with an oracle task
//! code. Not part of the suite; run with --ignored.

use mit_core::encoders::ImageEncoder;
use mit_core::heads::SegDecoder;
use mit_core::loss::dice_loss;
use mit_core::params::{Bound, ParamSet};
use mit_core::synth::{gen_seg, SEG_IMG};
use mit_core::tensor::Graph;
use mit_core::train::{train_loop, TrainConfig};

#[test]
#[ignore]
fn decoder_with_oracle_code() {
    let n: usize = std::env::var("N").ok().and_then(|v| v.parse().ok()).unwrap_or(160);
    let w0: usize = std::env::var("W0").ok().and_then(|v| v.parse().ok()).unwrap_or(12);
    let w1: usize = std::env::var("W1").ok().and_then(|v| v.parse().ok()).unwrap_or(10);
    let w2: usize = std::env::var("W2").ok().and_then(|v| v.parse().ok()).unwrap_or(8);
    let td: usize = std::env::var("TD").ok().and_then(|v| v.parse().ok()).unwrap_or(8);
    let epochs: usize = std::env::var("EP").ok().and_then(|v| v.parse().ok()).unwrap_or(30);
    let samples = gen_seg(n, 7);
    let enc = ImageEncoder::new(32).unwrap();
    let dec = SegDecoder { d_model: 24, d_modal: 32, widths: [w0, w1, w2], task_dim: td };
    let mut ps = ParamSet::new();
    enc.init_params(&mut ps, 1007);
    dec.init_params(&mut ps, 2007);

    let feats: Vec<_> =
        samples.iter().map(|s| enc.encode(&ps, &s.image, SEG_IMG, SEG_IMG).unwrap()).collect();
    let code = |i: usize| {
        let t = samples[i].shapes[samples[i].target];
        let mut v = vec![0.0; 24];
        v[t.color * 4 + t.shape] = 1.0;
        v
    };

    let n_train = n * 3 / 4;
    let tcfg = TrainConfig {
        lr0: 1e-2,
        decay_every: 15,
        epochs,
        batch: 2,
        seed: 7,
        ..TrainConfig::default()
    };
    let out = train_loop(&mut ps, &tcfg, n_train, |g, bound, k| {
        let emb = g.constant(vec![1, 24], code(k));
        let logits = dec.forward(g, bound, &feats[k], emb).unwrap();
        let probs = g.sigmoid(logits);
        let target = g.constant(vec![SEG_IMG * SEG_IMG], samples[k].mask.clone());
        Ok(dice_loss(g, probs, target).unwrap())
    })
    .unwrap();

    let dice_of = |idx: std::ops::Range<usize>, ps: &ParamSet| {
        let mut acc = 0.0;
        for i in idx.clone() {
            let mut g = Graph::new();
            let bound = Bound::new(&mut g, ps);
            let emb = g.constant(vec![1, 24], code(i));
            let logits = dec.forward(&mut g, &bound, &feats[i], emb).unwrap();
            let pred: Vec<bool> = g.data(logits).iter().map(|&v| v > 0.0).collect();
            let truth: Vec<bool> = samples[i].mask.iter().map(|&v| v == 1.0).collect();
            acc += mit_core::metrics::dice_score(&pred, &truth);
        }
        acc / idx.len() as f64
    };
    println!(
        "oracle-code decoder n={n} widths=[{w0},{w1},{w2}] td={td}: final loss {:.4} train dice {:.4} test dice {:.4}",
        out.history.last().unwrap().mean_loss,
        dice_of(0..n_train, &ps),
        dice_of(n_train..n, &ps)
    );
}
