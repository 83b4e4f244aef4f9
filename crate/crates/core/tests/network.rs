use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use toxbias_core::corpus::Comment;
use toxbias_core::embed::EmbeddingTable;
use toxbias_core::loss::{loss_grad_heads, multitask_loss, LossConfig, LossExample, Reduction};
use toxbias_core::nn::{backward, forward, init_params, predict, predict_one, HeadGrads, Hyper, ModelParams, Pooling};

fn rand_params(hyper: &Hyper, seed: u64) -> ModelParams {
    // Glorot init plus noisy biases so no unit sits exactly at a ReLU kink.
    let mut p = init_params(hyper, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut flat = p.to_flat();
    flat.iter_mut().for_each(|x| *x += rng.gen_range(-0.3..0.3));
    p.set_flat(&flat).unwrap();
    p
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Unrolled re-derivation of the network, written against the parameter
/// layout only: one direction step at a time, plain loops, std math.
fn straight_line(p: &ModelParams, x: &[Vec<f64>]) -> (f64, Vec<f64>) {
    let h = p.hyper.hidden;
    let lstm = |dir: &toxbias_core::nn::LstmDirection, xs: &[Vec<f64>]| -> Vec<Vec<f64>> {
        let mut hs = vec![vec![0.0; h]; xs.len()];
        let mut hp = vec![0.0; h];
        let mut cp = vec![0.0; h];
        for (t, xt) in xs.iter().enumerate() {
            let mut a = vec![0.0; 4 * h];
            for r in 0..4 * h {
                let mut s = dir.b[r];
                for (c, xv) in xt.iter().enumerate() {
                    s += dir.w_x.data[r * xt.len() + c] * xv;
                }
                for c in 0..h {
                    s += dir.w_h.data[r * h + c] * hp[c];
                }
                a[r] = s;
            }
            for j in 0..h {
                let i = sigmoid(a[j]);
                let f = sigmoid(a[h + j]);
                let g = a[2 * h + j].tanh();
                let o = sigmoid(a[3 * h + j]);
                cp[j] = f * cp[j] + i * g;
                hp[j] = o * cp[j].tanh();
            }
            hs[t] = hp.clone();
        }
        hs
    };
    let bilstm = |layer: &toxbias_core::nn::LstmLayerParams, xs: &[Vec<f64>]| -> Vec<Vec<f64>> {
        let fwd = lstm(&layer.forward, xs);
        let rev: Vec<Vec<f64>> = xs.iter().rev().cloned().collect();
        let mut bwd = lstm(&layer.backward, &rev);
        bwd.reverse();
        fwd.into_iter().zip(bwd).map(|(a, b)| [a, b].concat()).collect()
    };
    let l1 = bilstm(&p.lstm1, x);
    let l2 = bilstm(&p.lstm2, &l1);
    let e: Vec<f64> = l2.iter().map(|hm| hm.iter().zip(&p.attention.w).map(|(a, b)| a * b).sum::<f64>().tanh()).collect();
    let z: f64 = e.iter().map(|v| v.exp()).sum();
    let mut pooled = vec![0.0; 2 * h];
    for (hm, ev) in l2.iter().zip(&e) {
        for k in 0..2 * h {
            pooled[k] += ev.exp() / z * hm[k];
        }
    }
    let dense = |d: &toxbias_core::nn::DenseParams, v: &[f64]| -> Vec<f64> {
        (0..d.b.len())
            .map(|r| {
                let s = d.b[r] + (0..v.len()).map(|c| d.w.data[r * v.len() + c] * v[c]).sum::<f64>();
                if s > 0.0 { s } else { 0.0 }
            })
            .collect()
    };
    let hf = dense(&p.dense2, &dense(&p.dense1, &pooled));
    let head = |w: &[f64], b: f64| sigmoid(b + w.iter().zip(&hf).map(|(a, c)| a * c).sum::<f64>());
    let tox = head(&p.heads.toxicity.w.data, p.heads.toxicity.b[0]);
    let f2 = hf.len();
    let aux = (0..p.hyper.heads)
        .map(|k| head(&p.heads.auxiliary.w.data[k * f2..(k + 1) * f2], p.heads.auxiliary.b[k]))
        .collect();
    (tox, aux)
}

fn tiny_hyper(heads: usize) -> Hyper {
    Hyper { embed_dim: 2, hidden: 2, dense1: 2, dense2: 2, heads, dropout_rate: 0.0, pooling: Pooling::Attention }
}

#[test]
fn forward_matches_straight_line_evaluation() {
    for seed in 0..10 {
        let p = rand_params(&tiny_hyper(1), seed);
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let rows: Vec<Vec<f64>> = (0..3).map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
        for len in 1..=3 {
            let tr = forward(&p, &rows.concat(), len, None).unwrap();
            let (tox, aux) = straight_line(&p, &rows[..len]);
            assert!((tr.toxicity - tox).abs() < 1e-10, "seed {seed} len {len}");
            assert!((tr.auxiliary[0] - aux[0]).abs() < 1e-10);
            let s: f64 = tr.attention[..len].iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
            assert!(tr.attention[len..].iter().all(|&a| a == 0.0));
        }
    }
}

fn pre_activation(d: &toxbias_core::nn::DenseParams, v: &[f64]) -> Vec<f64> {
    (0..d.b.len()).map(|r| d.b[r] + (0..v.len()).map(|c| d.w.data[r * v.len() + c] * v[c]).sum::<f64>()).collect()
}

fn min_relu_margin(p: &ModelParams, x: &[f64], len: usize) -> f64 {
    let tr = forward(p, x, len, None).unwrap();
    pre_activation(&p.dense1, &tr.pooled)
        .into_iter()
        .chain(pre_activation(&p.dense2, &tr.dense1))
        .map(f64::abs)
        .fold(f64::INFINITY, f64::min)
}

/// Largest element-wise relative error between `backward` and central
/// differences of the summed loss, over every parameter.
fn max_gradient_error(hyper: &Hyper, seed: u64) -> f64 {
    let p = rand_params(hyper, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(31) + 7);
    let max_len = 5;
    // ReLU is not differentiable at 0; redraw inputs that put a dense
    // pre-activation within reach of the finite-difference step.
    let (len, x) = loop {
        let len = rng.gen_range(1..=max_len);
        let x: Vec<f64> = (0..max_len * hyper.embed_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        if min_relu_margin(&p, &x, len) > 1e-3 {
            break (len, x);
        }
    };
    let y: f64 = rng.gen_range(0.0..1.0);
    let aux: Vec<f64> = (0..hyper.heads).map(|_| rng.gen_range(0.0..1.0)).collect();
    let beta = if rng.gen_bool(0.5) { 3.0 } else { 1.0 };
    let cfg = LossConfig { alpha: 0.6, heads: hyper.heads, reduction: Reduction::Sum, ..LossConfig::default() };

    let loss_at = |q: &ModelParams| {
        let tr = forward(q, &x, len, None).unwrap();
        let ex = LossExample { y_hat: tr.toxicity, aux_hat: &tr.auxiliary, y, aux: &aux, beta };
        multitask_loss(&[ex], &cfg).unwrap().total
    };
    let tr = forward(&p, &x, len, None).unwrap();
    let ex = LossExample { y_hat: tr.toxicity, aux_hat: &tr.auxiliary, y, aux: &aux, beta };
    let hg = loss_grad_heads(&[ex], &cfg).unwrap();
    let analytic = backward(&p, &tr, &hg[0]).unwrap().to_flat();

    let eps = 1e-4;
    let base = p.to_flat();
    let mut q = p.clone();
    let mut worst: f64 = 0.0;
    for i in 0..base.len() {
        let mut flat = base.clone();
        flat[i] = base[i] + eps;
        q.set_flat(&flat).unwrap();
        let up = loss_at(&q);
        flat[i] = base[i] - eps;
        q.set_flat(&flat).unwrap();
        let down = loss_at(&q);
        let numeric = (up - down) / (2.0 * eps);
        let scale = analytic[i].abs().max(numeric.abs()).max(1e-6);
        let e = (analytic[i] - numeric).abs() / scale;
        worst = worst.max(e);
    }
    worst
}

#[test]
fn backward_matches_finite_differences() {
    for seed in 0..24u64 {
        let heads = if seed % 2 == 0 { 1 } else { 3 };
        let hyper = Hyper {
            embed_dim: 2 + (seed as usize % 7),
            hidden: 1 + (seed as usize % 4),
            dense1: 3,
            dense2: 2 + (seed as usize % 3),
            heads,
            dropout_rate: 0.0,
            pooling: if seed % 5 == 4 { Pooling::Mean } else { Pooling::Attention },
        };
        let err = max_gradient_error(&hyper, seed);
        assert!(err < 1e-4, "seed {seed}: max relative error {err:e}");
    }
}

#[test]
fn doubling_upstream_doubles_gradients() {
    let p = rand_params(&tiny_hyper(3), 9);
    let x = [0.3, -0.4, 0.8, 0.1, -0.6, 0.2];
    let tr = forward(&p, &x, 3, None).unwrap();
    let g1 = backward(&p, &tr, &HeadGrads { toxicity: 0.7, auxiliary: vec![-0.2, 0.4, 1.1] }).unwrap();
    let g2 = backward(&p, &tr, &HeadGrads { toxicity: 1.4, auxiliary: vec![-0.4, 0.8, 2.2] }).unwrap();
    for (a, b) in g1.to_flat().iter().zip(g2.to_flat()) {
        assert_eq!(2.0 * a, b);
    }
}

fn random_table(rows: usize, dim: usize, seed: u64) -> EmbeddingTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data: Vec<f64> = (0..rows * dim).map(|_| rng.gen_range(-0.5..0.5)).collect();
    data[..dim].iter_mut().for_each(|x| *x = 0.0);
    EmbeddingTable::from_rows(dim / 2, dim - dim / 2, rows, data).unwrap()
}

fn comment(ids: Vec<u32>, true_length: usize) -> Comment {
    Comment {
        id: String::new(),
        token_ids: ids,
        true_length,
        y: 0.0,
        y_bin: false,
        identity_labels: vec![],
        subtype_labels: vec![],
        identity_present: false,
        beta: 1.0,
        needs_propagation: false,
        propagated: false,
    }
}

#[test]
fn padded_positions_never_change_outputs() {
    let hyper = Hyper { embed_dim: 4, hidden: 3, dense1: 4, dense2: 4, heads: 2, dropout_rate: 0.0, pooling: Pooling::Attention };
    let p = rand_params(&hyper, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let m = rng.gen_range(2..9);
        let len = rng.gen_range(1..m);
        let mut x: Vec<f64> = (0..m * 4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let a = forward(&p, &x, len, None).unwrap();
        x[len * 4..].iter_mut().for_each(|v| *v = rng.gen_range(-50.0..50.0));
        let b = forward(&p, &x, len, None).unwrap();
        assert!((a.toxicity - b.toxicity).abs() <= 1e-12);
        for (u, v) in a.auxiliary.iter().zip(&b.auxiliary) {
            assert!((u - v).abs() <= 1e-12);
        }
    }
}

#[test]
fn empty_comment_ignores_its_padding_slots() {
    let hyper = Hyper { embed_dim: 4, hidden: 3, dense1: 4, dense2: 4, heads: 2, dropout_rate: 0.0, pooling: Pooling::Attention };
    let p = rand_params(&hyper, 4);
    let table = random_table(20, 4, 8);
    let clean = predict_one(&p, &table, &[0, 0, 0], 0).unwrap();
    assert_eq!(predict_one(&p, &table, &[7, 3, 9], 0).unwrap(), clean);
    assert_eq!(predict_one(&p, &table, &[0], 1).unwrap(), clean);
    assert!(predict_one(&p, &table, &[1, 2], 3).is_err());
}

#[test]
fn batch_prediction_equals_loop() {
    let hyper = Hyper { embed_dim: 4, hidden: 3, dense1: 4, dense2: 4, heads: 2, dropout_rate: 0.0, pooling: Pooling::Attention };
    let p = rand_params(&hyper, 5);
    let table = random_table(20, 4, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let batch: Vec<Comment> = (0..25)
        .map(|_| {
            let len = rng.gen_range(0..=6);
            let mut ids: Vec<u32> = (0..len).map(|_| rng.gen_range(1..20)).collect();
            ids.resize(6, 0);
            comment(ids, len)
        })
        .collect();
    let preds = predict(&p, &table, &batch).unwrap();
    for (c, pr) in batch.iter().zip(&preds) {
        let one = predict_one(&p, &table, &c.token_ids, c.true_length).unwrap();
        assert!((one.toxicity - pr.toxicity).abs() <= 1e-12);
        assert_eq!(&one, pr);
    }
    let mut rev = batch.clone();
    rev.reverse();
    let mut rp = predict(&p, &table, &rev).unwrap();
    rp.reverse();
    assert_eq!(rp, preds);
}

#[test]
fn dropout_mask_is_applied_per_channel() {
    let p = rand_params(&tiny_hyper(1), 2);
    let x = [0.3, -0.4, 0.8, 0.1];
    let masked = forward(&p, &x, 2, Some(&[0.0, 1.25])).unwrap();
    let manual = forward(&p, &[0.0, -0.5, 0.0, 0.125], 2, None).unwrap();
    assert_eq!(masked.toxicity, manual.toxicity);
    let a = forward(&p, &x, 2, Some(&[1.0, 1.0])).unwrap();
    let b = forward(&p, &x, 2, None).unwrap();
    assert_eq!(a.toxicity, b.toxicity);
}
