use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::vocab::{train_bpe, BpeTrainerConfig, MASK_ID};

fn weights(rows: &[Vec<f64>], out: usize, rng: &mut ChaCha8Rng) -> EncoderWeights<f64> {
    let d = rows[0].len();
    let mut r = |n: usize| (0..n).map(|_| rng.gen_range(-0.8..0.8)).collect::<Vec<f64>>();
    EncoderWeights {
        embedding: Matrix::from_rows(rows),
        proj_weight: Matrix::from_vec(out, d, r(out * d)),
        proj_bias: r(out),
        mlm_weight: Matrix::from_vec(d, d, r(d * d)),
        cls_weight: r(2 * d),
        cls_bias: 0.1,
    }
}

fn random_weights(v: usize, d: usize, out: usize, seed: u64) -> EncoderWeights<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..v)
        .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    weights(&rows, out, &mut rng)
}

#[test]
fn hand_computed_embedding() {
    let mut w = random_weights(2, 2, 2, 0);
    w.embedding = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
    w.proj_weight = Matrix::identity(2);
    w.proj_bias = vec![0.0, 0.0];
    let batch = TokenBatch::new(vec![0, 1], vec![1, 1], 1, 2).unwrap();

    let (raw, _) = embed_forward(&w, &batch, false).unwrap();
    let t = 0.5f64.tanh();
    assert!((raw.get(0, 0) - t).abs() < 1e-15 && (raw.get(0, 1) - t).abs() < 1e-15);

    let (unit, _) = embed_forward(&w, &batch, true).unwrap();
    let r = std::f64::consts::FRAC_1_SQRT_2;
    assert!((unit.get(0, 0) - r).abs() < 1e-15 && (unit.get(0, 1) - r).abs() < 1e-15);
}

#[test]
fn normalized_rows_and_padding_invariance() {
    let w = random_weights(12, 6, 5, 1);
    let short = TokenBatch::from_sequences(&[vec![3, 4, 5], vec![7]], 16);
    let (a, _) = embed_forward(&w, &short, true).unwrap();
    for r in a.iter_rows() {
        assert!((crate::linalg::l2_norm(r) - 1.0).abs() < 1e-12);
    }
    let padded = TokenBatch::new(
        vec![3, 4, 5, 2, 2, 7, 2, 2, 2, 2],
        vec![1, 1, 1, 0, 0, 1, 0, 0, 0, 0],
        2,
        5,
    )
    .unwrap();
    let (b, _) = embed_forward(&w, &padded, true).unwrap();
    assert_eq!(a, b);
}

#[test]
fn pooling_idempotence_and_permutation_equivariance() {
    let w = random_weights(10, 4, 4, 2);
    let once = TokenBatch::from_sequences(&[vec![6]], 8);
    let many = TokenBatch::from_sequences(&[vec![6, 6, 6, 6]], 8);
    let (a, _) = embed_forward(&w, &once, true).unwrap();
    let (b, _) = embed_forward(&w, &many, true).unwrap();
    for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
        assert!((x - y).abs() < 1e-15);
    }

    let fwd = TokenBatch::from_sequences(&[vec![1, 2], vec![3, 4, 5], vec![9]], 8);
    let rev = TokenBatch::from_sequences(&[vec![9], vec![3, 4, 5], vec![1, 2]], 8);
    let (f, _) = embed_forward(&w, &fwd, true).unwrap();
    let (r, _) = embed_forward(&w, &rev, true).unwrap();
    for i in 0..3 {
        assert_eq!(f.row(i), r.row(2 - i));
    }
}

#[test]
fn all_pad_row_is_input_error() {
    let w = random_weights(4, 2, 2, 3);
    let batch = TokenBatch::new(vec![1, 2], vec![1, 0], 2, 1).unwrap();
    assert!(matches!(embed_forward(&w, &batch, true), Err(Error::Input(_))));
}

#[test]
fn zero_upstream_gives_zero_gradients() {
    let w = random_weights(8, 4, 3, 4);
    let batch = TokenBatch::from_sequences(&[vec![1, 2, 3], vec![5]], 8);
    let (_, cache) = embed_forward(&w, &batch, true).unwrap();
    let g = embed_backward(&w, &batch, &cache, &Matrix::zeros(2, 3)).unwrap();
    assert!(g.is_zero());
}

fn fd_check(
    w: &EncoderWeights<f64>,
    grads: &EncoderGrads<f64>,
    loss: impl Fn(&EncoderWeights<f64>) -> f64,
) {
    let h = 1e-5;
    let check = |name: &str, i: usize, analytic: f64, perturb: &dyn Fn(&mut EncoderWeights<f64>, f64)| {
        let mut p = w.clone();
        perturb(&mut p, h);
        let up = loss(&p);
        let mut m = w.clone();
        perturb(&mut m, -h);
        let down = loss(&m);
        let numeric = (up - down) / (2.0 * h);
        let err = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-6);
        assert!(err < 1e-4, "{name}[{i}]: analytic {analytic} vs numeric {numeric}");
    };
    for i in 0..w.embedding.as_slice().len() {
        check("E", i, grads.embedding.as_slice()[i], &|p, d| p.embedding.as_mut_slice()[i] += d);
    }
    for i in 0..w.proj_weight.as_slice().len() {
        check("W", i, grads.proj_weight.as_slice()[i], &|p, d| p.proj_weight.as_mut_slice()[i] += d);
    }
    for i in 0..w.proj_bias.len() {
        check("b", i, grads.proj_bias[i], &|p, d| p.proj_bias[i] += d);
    }
    for i in 0..w.mlm_weight.as_slice().len() {
        check("W_m", i, grads.mlm_weight.as_slice()[i], &|p, d| p.mlm_weight.as_mut_slice()[i] += d);
    }
    for i in 0..w.cls_weight.len() {
        check("cls", i, grads.cls_weight[i], &|p, d| p.cls_weight[i] += d);
    }
    check("cls_b", 0, grads.cls_bias, &|p, d| p.cls_bias += d);
}

#[test]
fn embed_gradients_match_finite_differences() {
    let w = random_weights(7, 4, 4, 5);
    let batch = TokenBatch::new(vec![1, 2, 3, 4, 4, 2], vec![1, 1, 0, 1, 1, 1], 2, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let up = Matrix::from_vec(2, 4, (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect());
    for normalize in [false, true] {
        let (_, cache) = embed_forward(&w, &batch, normalize).unwrap();
        let g = embed_backward(&w, &batch, &cache, &up).unwrap();
        // rows 0, 5, 6 never appear (id 3 is masked out)
        for absent in [0, 3, 5, 6] {
            assert!(g.embedding.row(absent).iter().all(|&x| x == 0.0));
        }
        fd_check(&w, &g, |p| {
            let (o, _) = embed_forward(p, &batch, normalize).unwrap();
            crate::linalg::dot(o.as_slice(), up.as_slice())
        });
    }
}

#[test]
fn mlm_hand_computation_and_zero_transform() {
    let mut w = random_weights(4, 2, 2, 7);
    w.embedding = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0], vec![2.0, -1.0]]);
    w.mlm_weight = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]);
    let batch = TokenBatch::new(vec![0, 1], vec![1, 1], 1, 2).unwrap();
    let (logits, _) = mlm_forward(&w, &batch, &[(0, 1)]).unwrap();
    assert_eq!(logits.as_slice(), &[1.5, 0.5, 2.0, 2.5]);

    w.mlm_weight = Matrix::zeros(2, 2);
    let (logits, _) = mlm_forward(&w, &batch, &[(0, 0), (0, 1)]).unwrap();
    assert!(logits.as_slice().iter().all(|&x| x == 0.0));

    assert!(matches!(mlm_forward(&w, &batch, &[]), Err(Error::Input(_))));
}

#[test]
fn mlm_gradients_match_finite_differences() {
    let w = random_weights(6, 3, 3, 8);
    let batch = TokenBatch::new(vec![5, MASK_ID, 1, 2, MASK_ID, 0], vec![1, 1, 1, 1, 1, 0], 2, 3).unwrap();
    let positions = [(0, 1), (1, 1), (1, 0)];
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let up = Matrix::from_vec(3, 6, (0..18).map(|_| rng.gen_range(-1.0..1.0)).collect());
    let (_, cache) = mlm_forward(&w, &batch, &positions).unwrap();
    let g = mlm_backward(&w, &batch, &positions, &cache, &up).unwrap();
    fd_check(&w, &g, |p| {
        let (l, _) = mlm_forward(p, &batch, &positions).unwrap();
        crate::linalg::dot(l.as_slice(), up.as_slice())
    });
}

#[test]
fn cross_encoder_gradients_match_finite_differences() {
    let w = random_weights(9, 3, 3, 10);
    let tokens = TokenBatch::new(vec![0, 5, 1, 6, 1, 0, 7, 1, 8, 2], vec![1, 1, 1, 1, 1, 1, 1, 1, 1, 0], 2, 5)
        .unwrap();
    let pairs = PairBatch::new(tokens, vec![0, 0, 0, 1, 1, 0, 0, 0, 1, 1]).unwrap();
    let up = [0.7, -1.3];
    let (_, cache) = cross_forward(&w, &pairs).unwrap();
    let g = cross_backward(&w, &pairs, &cache, &up).unwrap();
    fd_check(&w, &g, |p| {
        let (s, _) = cross_forward(p, &pairs).unwrap();
        s[0] * up[0] + s[1] * up[1]
    });
}

fn tiny_encoder() -> BiEncoder {
    let tok = train_bpe(["alpha beta gamma delta"], &BpeTrainerConfig::new(40)).unwrap();
    BiEncoder::init(tok, 8, EncoderConfig::default(), 11).unwrap()
}

#[test]
fn zero_head_scores_one_half_and_ignores_padding() {
    let enc = tiny_encoder();
    let pairs = enc.pair_batch(&[("alpha beta", "gamma"), ("delta", "alpha")]);
    let scores = enc.cross_encode(&pairs).unwrap();
    assert_eq!(scores, vec![0.5, 0.5]);

    let mut enc = enc;
    enc.weights_mut().cls_weight.iter_mut().enumerate().for_each(|(i, x)| *x = i as f32 * 0.3 - 1.0);
    let a = enc.cross_encode(&pairs).unwrap();
    let b = enc.cross_encode(&pairs.with_extra_padding(4)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn checkpoint_round_trip_preserves_encoder() {
    let enc = tiny_encoder();
    let ckpt = enc.to_checkpoint();
    ckpt.validate().unwrap();
    let back = BiEncoder::from_checkpoint(ckpt.clone(), enc.tokenizer().clone(), EncoderConfig::default(), 99)
        .unwrap();
    assert_eq!(back.weights(), enc.weights());
    assert_eq!(back.to_checkpoint().to_bytes(), ckpt.to_bytes());
}

#[test]
fn text_embeddings_are_unit_norm() {
    let enc = tiny_encoder();
    let m = enc.encode(&["alpha", "beta gamma", "unseen zzz"]).unwrap();
    for r in m.iter_rows() {
        let n: f32 = r.iter().map(|x| x * x).sum::<f32>().sqrt();
        assert!((n - 1.0).abs() < 1e-5);
    }
}
