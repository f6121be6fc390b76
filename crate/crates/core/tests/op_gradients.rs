//! Finite-difference verification of every differentiable operation and of
//! the composite blocks, on random inputs.

use std::cell::RefCell;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use topicpath_core::tensor::{
    attention_reference, gcn_forward, multi_head_attention, transformer_block, AttentionParams,
    FeedForwardParams, GcnParams, LayerNormParams, Tape, Tensor, TransformerBlockParams,
};

const FD_STEP: f64 = 1e-6;
const TOLERANCE: f64 = 1e-4;

fn random_data(rng: &mut ChaCha12Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Check d(loss)/d(input_i) against central differences for every input
/// coordinate. `build` must map the raw input buffers to a scalar loss.
fn fd_check(inputs: &[(Vec<usize>, Vec<f64>)], build: impl Fn(&Tape, &[Tensor]) -> Tensor) {
    let loss_of = |datas: &[Vec<f64>]| -> f64 {
        let tape = Tape::new();
        let tensors: Vec<Tensor> = inputs
            .iter()
            .zip(datas)
            .map(|((shape, _), data)| Tensor::from_vec(shape.clone(), data.clone()))
            .collect();
        build(&tape, &tensors).item()
    };

    // analytic gradients
    let tape = Tape::new();
    let vars: Vec<Tensor> = inputs
        .iter()
        .map(|(shape, data)| tape.var(&Tensor::from_vec(shape.clone(), data.clone())))
        .collect();
    let loss = build(&tape, &vars);
    let grads = tape.backward(&loss).unwrap();

    let mut datas: Vec<Vec<f64>> = inputs.iter().map(|(_, d)| d.clone()).collect();
    for (which, (_, original)) in inputs.iter().enumerate() {
        let analytic = grads.of(&vars[which]).map(|g| g.to_vec()).unwrap_or_else(|| {
            vec![0.0; original.len()]
        });
        for i in 0..original.len() {
            datas[which][i] = original[i] + FD_STEP;
            let plus = loss_of(&datas);
            datas[which][i] = original[i] - FD_STEP;
            let minus = loss_of(&datas);
            datas[which][i] = original[i];
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let denom = numeric.abs().max(analytic[i].abs()).max(1e-3);
            let rel = (numeric - analytic[i]).abs() / denom;
            assert!(
                rel <= TOLERANCE,
                "input {which} coord {i}: analytic {} vs numeric {numeric} (rel {rel})",
                analytic[i]
            );
        }
    }
}

/// Reduce any output to a scalar through a fixed random projection, so the
/// checked gradients exercise every output coordinate.
fn spread(tape: &Tape, t: &Tensor, seed: u64) -> Tensor {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let weights = Tensor::from_vec(vec![t.len()], random_data(&mut rng, t.len()));
    let flat = tape.reshape(t, vec![t.len()]).unwrap();
    // elementwise weight then sum, built from existing ops
    let weighted = tape.matmul(
        &tape.reshape(&flat, vec![1, t.len()]).unwrap(),
        &tape
            .reshape(&weights, vec![t.len(), 1])
            .unwrap(),
    );
    tape.sum_all(&weighted.unwrap())
}

#[test]
fn matmul_gradients() {
    let mut rng = ChaCha12Rng::seed_from_u64(1);
    let a = (vec![3, 4], random_data(&mut rng, 12));
    let b = (vec![4, 2], random_data(&mut rng, 8));
    fd_check(&[a, b], |tape, t| {
        spread(tape, &tape.matmul(&t[0], &t[1]).unwrap(), 10)
    });
}

#[test]
fn add_scale_bias_gradients() {
    let mut rng = ChaCha12Rng::seed_from_u64(2);
    let x = (vec![3, 4], random_data(&mut rng, 12));
    let y = (vec![3, 4], random_data(&mut rng, 12));
    let bias = (vec![4], random_data(&mut rng, 4));
    fd_check(&[x, y, bias], |tape, t| {
        let sum = tape.add(&t[0], &t[1]).unwrap();
        let scaled = tape.scale(&sum, -1.7);
        spread(tape, &tape.add_row_bias(&scaled, &t[2]).unwrap(), 11)
    });
}

#[test]
fn concat_and_reshape_gradients() {
    let mut rng = ChaCha12Rng::seed_from_u64(3);
    let a = (vec![2, 3], random_data(&mut rng, 6));
    let b = (vec![2, 2], random_data(&mut rng, 4));
    let c = (vec![1, 5], random_data(&mut rng, 5));
    fd_check(&[a, b, c], |tape, t| {
        let wide = tape.concat_cols(&[t[0].clone(), t[1].clone()]).unwrap();
        let tall = tape.concat_rows(&[wide, t[2].clone()]).unwrap();
        spread(tape, &tape.reshape(&tall, vec![5, 3]).unwrap(), 12)
    });
}

#[test]
fn pooling_and_gather_gradients() {
    let mut rng = ChaCha12Rng::seed_from_u64(4);
    let table = (vec![5, 3], random_data(&mut rng, 15));
    fd_check(&[table], |tape, t| {
        // repeated indices exercise scatter accumulation
        let picked = tape.gather_rows(&t[0], &[0, 2, 2, 4]).unwrap();
        spread(tape, &tape.mean_rows(&picked).unwrap(), 13)
    });
}

#[test]
fn transpose_relu_sigmoid_gradients() {
    let mut rng = ChaCha12Rng::seed_from_u64(5);
    // keep inputs away from the ReLU kink
    let x = (
        vec![3, 4],
        (0..12)
            .map(|_| {
                let v: f64 = rng.gen_range(0.1..1.0);
                if rng.gen_bool(0.5) {
                    v
                } else {
                    -v
                }
            })
            .collect(),
    );
    fd_check(&[x], |tape, t| {
        let tr = tape.transpose(&t[0]).unwrap();
        let act = tape.sigmoid(&tape.relu(&tr));
        spread(tape, &act, 14)
    });
}

#[test]
fn softmax_gradients() {
    let mut rng = ChaCha12Rng::seed_from_u64(6);
    let x = (vec![3, 5], random_data(&mut rng, 15));
    fd_check(&[x], |tape, t| {
        spread(tape, &tape.softmax_rows(&t[0]).unwrap(), 15)
    });
}

#[test]
fn layer_norm_gradients() {
    let mut rng = ChaCha12Rng::seed_from_u64(7);
    let x = (vec![3, 6], random_data(&mut rng, 18));
    let gain = (vec![6], random_data(&mut rng, 6));
    let bias = (vec![6], random_data(&mut rng, 6));
    fd_check(&[x, gain, bias], |tape, t| {
        spread(
            tape,
            &tape.layer_norm(&t[0], &t[1], &t[2], 1e-5).unwrap(),
            16,
        )
    });
}

#[test]
fn dropout_gradients_with_fixed_mask() {
    let mut rng = ChaCha12Rng::seed_from_u64(8);
    let x = (vec![4, 4], random_data(&mut rng, 16));
    fd_check(&[x], |tape, t| {
        // same seed per evaluation keeps the mask constant under FD probes
        let drop_rng = RefCell::new(ChaCha12Rng::seed_from_u64(99));
        spread(tape, &tape.dropout(&t[0], 0.4, Some(&drop_rng)), 17)
    });
}

#[test]
fn clamp_and_bce_gradients() {
    let mut rng = ChaCha12Rng::seed_from_u64(9);
    let logits = (vec![1, 6], random_data(&mut rng, 6));
    let targets = vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0];
    fd_check(&[logits], |tape, t| {
        let probs = tape.clamp(&tape.sigmoid(&t[0]), 1e-12, 1.0 - 1e-12);
        tape.bce_nll(&probs, &targets, 1e-12).unwrap()
    });
}

fn random_attention(rng: &mut ChaCha12Rng, heads: usize, h: usize) -> AttentionParams {
    AttentionParams {
        wq: (0..heads)
            .map(|_| Tensor::from_vec(vec![h, h], random_data(rng, h * h)))
            .collect(),
        wk: (0..heads)
            .map(|_| Tensor::from_vec(vec![h, h], random_data(rng, h * h)))
            .collect(),
        wv: (0..heads)
            .map(|_| Tensor::from_vec(vec![h, h], random_data(rng, h * h)))
            .collect(),
        wo: Tensor::from_vec(vec![heads * h, h], random_data(rng, heads * h * h)),
    }
}

#[test]
fn attention_gradients_and_reference_agreement() {
    let mut rng = ChaCha12Rng::seed_from_u64(10);
    let (s, h, heads) = (3, 4, 2);
    let divisor = (heads as f64).sqrt();
    let params = random_attention(&mut rng, heads, h);
    let q = (vec![s, h], random_data(&mut rng, s * h));
    let k = (vec![s, h], random_data(&mut rng, s * h));
    let v = (vec![s, h], random_data(&mut rng, s * h));

    // forward agreement with the direct-summation reference
    {
        let tape = Tape::new();
        let out = multi_head_attention(
            &tape,
            &Tensor::from_vec(q.0.clone(), q.1.clone()),
            &Tensor::from_vec(k.0.clone(), k.1.clone()),
            &Tensor::from_vec(v.0.clone(), v.1.clone()),
            &params,
            divisor,
        )
        .unwrap()
        .0;
        let reference = attention_reference(&q.1, &k.1, &v.1, s, s, h, &params, divisor);
        for (a, b) in out.data().iter().zip(&reference) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    // gradients through q, k, v
    fd_check(&[q, k, v], |tape, t| {
        let (out, _) =
            multi_head_attention(tape, &t[0], &t[1], &t[2], &params, divisor).unwrap();
        spread(tape, &out, 18)
    });
}

#[test]
fn attention_gradients_through_projections() {
    let mut rng = ChaCha12Rng::seed_from_u64(20);
    let (s, h) = (3, 4);
    let x_data = random_data(&mut rng, s * h);
    let wq = (vec![h, h], random_data(&mut rng, h * h));
    let wk = (vec![h, h], random_data(&mut rng, h * h));
    let wv = (vec![h, h], random_data(&mut rng, h * h));
    let wo = (vec![h, h], random_data(&mut rng, h * h));
    fd_check(&[wq, wk, wv, wo], |tape, t| {
        let params = AttentionParams {
            wq: vec![t[0].clone()],
            wk: vec![t[1].clone()],
            wv: vec![t[2].clone()],
            wo: t[3].clone(),
        };
        let x = Tensor::from_vec(vec![s, h], x_data.clone());
        let (out, _) = multi_head_attention(tape, &x, &x, &x, &params, 1.0).unwrap();
        spread(tape, &out, 19)
    });
}

#[test]
fn transformer_block_gradients() {
    let mut rng = ChaCha12Rng::seed_from_u64(21);
    let (s, h, heads) = (3, 4, 2);
    let params = TransformerBlockParams {
        attention: random_attention(&mut rng, heads, h),
        ln1: LayerNormParams {
            gain: Tensor::from_vec(vec![h], random_data(&mut rng, h)),
            bias: Tensor::from_vec(vec![h], random_data(&mut rng, h)),
        },
        ff: FeedForwardParams {
            w1: Tensor::from_vec(vec![h, h], random_data(&mut rng, h * h)),
            b1: Tensor::from_vec(vec![h], random_data(&mut rng, h)),
            w2: Tensor::from_vec(vec![h, h], random_data(&mut rng, h * h)),
            b2: Tensor::from_vec(vec![h], random_data(&mut rng, h)),
        },
        ln2: LayerNormParams {
            gain: Tensor::from_vec(vec![h], random_data(&mut rng, h)),
            bias: Tensor::from_vec(vec![h], random_data(&mut rng, h)),
        },
    };
    let x = (vec![s, h], random_data(&mut rng, s * h));
    fd_check(&[x], |tape, t| {
        let (out, _) =
            transformer_block(tape, &t[0], &params, (heads as f64).sqrt(), 0.0, None).unwrap();
        spread(tape, &out, 20)
    });
}

#[test]
fn gcn_gradients() {
    let mut rng = ChaCha12Rng::seed_from_u64(22);
    let (n, h) = (4, 3);
    let adj: Vec<f64> = (0..n * n)
        .map(|i| {
            if i % (n + 1) == 0 {
                0.0
            } else {
                rng.gen_range(0.0..1.0)
            }
        })
        .collect();
    let h0 = (vec![n, h], random_data(&mut rng, n * h));
    let w0 = (vec![h, h], random_data(&mut rng, h * h));
    let w1 = (vec![h, h], random_data(&mut rng, h * h));
    fd_check(&[h0, w0, w1], |tape, t| {
        let params = GcnParams {
            layers: vec![t[1].clone(), t[2].clone()],
        };
        spread(tape, &gcn_forward(tape, &adj, &t[0], &params).unwrap(), 21)
    });
}
