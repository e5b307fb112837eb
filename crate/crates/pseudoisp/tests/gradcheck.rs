//! Central-difference gradient checks for every differentiable primitive.
//! The numeric oracle below is independent of the backward implementations:
//! it only calls tape forward passes.

use pseudoisp::tensor::{Tape, Tensor, Val};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

/// Checks analytic vs central-difference gradients for all leaf tensors.
fn check(name: &str, leaves: Vec<Tensor>, build: impl Fn(&mut Tape, &[Val]) -> Val) {
    let leaves: Vec<Tensor> = leaves
        .into_iter()
        .map(|t| t.set_requires_grad(true))
        .collect();
    let eval = |data: &[Vec<f64>]| -> f64 {
        let tensors: Vec<Tensor> = leaves
            .iter()
            .zip(data)
            .map(|(t, d)| {
                Tensor::new(t.shape().to_vec(), d.clone())
                    .unwrap()
                    .set_requires_grad(true)
            })
            .collect();
        let mut tape = Tape::new();
        let vals: Vec<Val> = tensors.iter().map(|t| tape.leaf(t)).collect();
        let loss = build(&mut tape, &vals);
        tape.value(loss)[0]
    };

    // Analytic pass.
    let mut tape = Tape::new();
    let vals: Vec<Val> = leaves.iter().map(|t| tape.leaf(t)).collect();
    let loss = build(&mut tape, &vals);
    let grads = tape.backward(loss).expect("backward");

    let base: Vec<Vec<f64>> = leaves.iter().map(|t| t.data().to_vec()).collect();
    let mut max_rel: f64 = 0.0;
    for (li, leaf) in leaves.iter().enumerate() {
        let analytic = grads
            .get(vals[li])
            .map(|g| g.to_vec())
            .unwrap_or_else(|| vec![0.0; leaf.numel()]);
        for i in 0..leaf.numel() {
            let mut plus = base.clone();
            plus[li][i] += H;
            let mut minus = base.clone();
            minus[li][i] -= H;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * H);
            let denom = analytic[i].abs().max(numeric.abs()).max(1e-6);
            let rel = (analytic[i] - numeric).abs() / denom;
            max_rel = max_rel.max(rel);
            assert!(
                rel < TOL,
                "{name}: leaf {li} elem {i}: analytic {} vs numeric {numeric} (rel {rel:.3e})",
                analytic[i]
            );
        }
    }
    let _ = max_rel;
}

fn rand_tensor(shape: Vec<usize>, rng: &mut impl Rng, lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::new(shape, data).unwrap()
}

/// Random values bounded away from zero (for abs/relu kinks).
fn rand_tensor_nonzero(shape: Vec<usize>, rng: &mut impl Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n)
        .map(|_| {
            let v: f64 = rng.gen_range(0.1..1.0);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

#[test]
fn gradcheck_elementwise_ops() {
    let mut rng = ChaCha12Rng::seed_from_u64(42);
    for trial in 0..20 {
        let shape = vec![1 + trial % 3, 2 + trial % 4];
        let a = rand_tensor_nonzero(shape.clone(), &mut rng);
        let b = rand_tensor_nonzero(shape.clone(), &mut rng);
        let zero = Tensor::zeros(shape.clone());

        check("add", vec![a.clone(), b.clone()], |t, v| {
            let s = t.add(v[0], v[1]).unwrap();
            let z = t.constant(t.shape(s).to_vec(), vec![0.0; t.value(s).len()]).unwrap();
            t.mse(s, z).unwrap()
        });
        check("sub", vec![a.clone(), b.clone()], |t, v| {
            let s = t.sub(v[0], v[1]).unwrap();
            let z = t.constant(t.shape(s).to_vec(), vec![0.25; t.value(s).len()]).unwrap();
            t.mse(s, z).unwrap()
        });
        check("mul", vec![a.clone(), b.clone()], |t, v| {
            let s = t.mul(v[0], v[1]).unwrap();
            let z = t.constant(t.shape(s).to_vec(), vec![0.1; t.value(s).len()]).unwrap();
            t.mse(s, z).unwrap()
        });
        check("abs", vec![a.clone()], |t, v| {
            let s = t.abs(v[0]);
            let z = t.constant(t.shape(s).to_vec(), vec![0.5; t.value(s).len()]).unwrap();
            t.mse(s, z).unwrap()
        });
        check("scale", vec![a.clone()], |t, v| {
            let s = t.scale(v[0], -1.7);
            let z = t.constant(t.shape(s).to_vec(), vec![0.0; t.value(s).len()]).unwrap();
            t.mse(s, z).unwrap()
        });
        check("relu", vec![a.clone()], |t, v| {
            let s = t.relu(v[0]);
            let z = t.constant(t.shape(s).to_vec(), vec![0.3; t.value(s).len()]).unwrap();
            t.mse(s, z).unwrap()
        });
        check("softplus", vec![a.clone()], |t, v| {
            let s = t.softplus(v[0]);
            let z = t.constant(t.shape(s).to_vec(), vec![0.3; t.value(s).len()]).unwrap();
            t.mse(s, z).unwrap()
        });
        check("mse", vec![a.clone(), b.clone()], |t, v| t.mse(v[0], v[1]).unwrap());

        // sqrt on strictly positive inputs.
        let pos = rand_tensor(shape.clone(), &mut rng, 0.2, 1.5);
        check("sqrt", vec![pos], |t, v| {
            let s = t.sqrt(v[0]);
            let z = t.constant(t.shape(s).to_vec(), vec![0.4; t.value(s).len()]).unwrap();
            t.mse(s, z).unwrap()
        });
        let _ = &zero;
    }
}

#[test]
fn gradcheck_conv2d_dense_and_grouped() {
    let mut rng = ChaCha12Rng::seed_from_u64(7);
    for trial in 0..20 {
        // Dense 3x3.
        let (h, w) = (3 + trial % 3, 3 + (trial / 2) % 3);
        let input = rand_tensor(vec![1, 2, h, w], &mut rng, -1.0, 1.0);
        let weight = rand_tensor(vec![3, 2, 3, 3], &mut rng, -0.5, 0.5);
        let bias = rand_tensor(vec![3], &mut rng, -0.2, 0.2);
        check("conv3x3", vec![input, weight, bias], |t, v| {
            let s = t.conv2d(v[0], v[1], v[2], 1, 1).unwrap();
            let z = t
                .constant(t.shape(s).to_vec(), vec![0.0; t.value(s).len()])
                .unwrap();
            t.mse(s, z).unwrap()
        });

        // Grouped 1x1.
        let input = rand_tensor(vec![1, 4, 3, 3], &mut rng, -1.0, 1.0);
        let weight = rand_tensor(vec![8, 1, 1, 1], &mut rng, -0.5, 0.5);
        let bias = rand_tensor(vec![8], &mut rng, -0.2, 0.2);
        check("conv1x1g4", vec![input, weight, bias], |t, v| {
            let s = t.conv2d(v[0], v[1], v[2], 4, 0).unwrap();
            let z = t
                .constant(t.shape(s).to_vec(), vec![0.0; t.value(s).len()])
                .unwrap();
            t.mse(s, z).unwrap()
        });
    }
}

#[test]
fn gradcheck_structural_ops() {
    let mut rng = ChaCha12Rng::seed_from_u64(11);
    for _ in 0..20 {
        let a = rand_tensor(vec![1, 3, 4, 4], &mut rng, -1.0, 1.0);
        let b = rand_tensor(vec![1, 2, 4, 4], &mut rng, -1.0, 1.0);
        check("concat", vec![a.clone(), b], |t, v| {
            let s = t.concat_channels(&[v[0], v[1]]).unwrap();
            let z = t
                .constant(t.shape(s).to_vec(), vec![0.1; t.value(s).len()])
                .unwrap();
            t.mse(s, z).unwrap()
        });
        check("crop", vec![a.clone()], |t, v| {
            let s = t.crop(v[0], 1, 0, 2, 3).unwrap();
            let z = t
                .constant(t.shape(s).to_vec(), vec![0.1; t.value(s).len()])
                .unwrap();
            t.mse(s, z).unwrap()
        });
        check("reflect_pad", vec![a.clone()], |t, v| {
            let s = t.reflect_pad(v[0], 2).unwrap();
            let z = t
                .constant(t.shape(s).to_vec(), vec![0.1; t.value(s).len()])
                .unwrap();
            t.mse(s, z).unwrap()
        });
        check("bayer", vec![a.clone()], |t, v| {
            let s = t.bayer_sample(v[0]).unwrap();
            let z = t
                .constant(t.shape(s).to_vec(), vec![0.2; t.value(s).len()])
                .unwrap();
            t.mse(s, z).unwrap()
        });
        check("space_to_depth", vec![a.clone()], |t, v| {
            let s = t.space_to_depth(v[0]).unwrap();
            let z = t
                .constant(t.shape(s).to_vec(), vec![0.2; t.value(s).len()])
                .unwrap();
            t.mse(s, z).unwrap()
        });
        let d = rand_tensor(vec![1, 4, 2, 2], &mut rng, -1.0, 1.0);
        check("depth_to_space", vec![d], |t, v| {
            let s = t.depth_to_space(v[0]).unwrap();
            let z = t
                .constant(t.shape(s).to_vec(), vec![0.2; t.value(s).len()])
                .unwrap();
            t.mse(s, z).unwrap()
        });
    }
}

#[test]
fn conv_zero_padding_arithmetic() {
    // All-ones 3x3 input and kernel: center 9, corners 4.
    let input = Tensor::new(vec![1, 1, 3, 3], vec![1.0; 9]).unwrap();
    let weight = Tensor::new(vec![1, 1, 3, 3], vec![1.0; 9]).unwrap();
    let bias = Tensor::zeros(vec![1]);
    let mut tape = Tape::new();
    let (i, w, b) = (tape.leaf(&input), tape.leaf(&weight), tape.leaf(&bias));
    let out = tape.conv2d(i, w, b, 1, 1).unwrap();
    let v = tape.value(out);
    assert_eq!(v[4], 9.0);
    for corner in [0, 2, 6, 8] {
        assert_eq!(v[corner], 4.0);
    }
    for edge in [1, 3, 5, 7] {
        assert_eq!(v[edge], 6.0);
    }
}

#[test]
fn grouped_identity_conv_is_identity() {
    let mut rng = ChaCha12Rng::seed_from_u64(3);
    let input = rand_tensor(vec![1, 4, 3, 3], &mut rng, -1.0, 1.0);
    let weight = Tensor::new(vec![4, 1, 1, 1], vec![1.0; 4]).unwrap();
    let bias = Tensor::zeros(vec![4]);
    let mut tape = Tape::new();
    let (i, w, b) = (tape.leaf(&input), tape.leaf(&weight), tape.leaf(&bias));
    let out = tape.conv2d(i, w, b, 4, 0).unwrap();
    assert_eq!(tape.value(out), input.data());
}

#[test]
fn grouped_conv_channel_purity() {
    // Perturbing input channel c' leaves output channel c != c' bit-identical.
    let mut rng = ChaCha12Rng::seed_from_u64(5);
    let base = rand_tensor(vec![1, 4, 6, 6], &mut rng, 0.0, 1.0);
    let weight = rand_tensor(vec![4, 1, 1, 1], &mut rng, -1.0, 1.0);
    let bias = rand_tensor(vec![4], &mut rng, -0.1, 0.1);
    let forward = |t: &Tensor| -> Vec<f64> {
        let mut tape = Tape::new();
        let (i, w, b) = (tape.leaf(t), tape.leaf(&weight), tape.leaf(&bias));
        let out = tape.conv2d(i, w, b, 4, 0).unwrap();
        tape.value(out).to_vec()
    };
    let out0 = forward(&base);
    for perturbed_ch in 0..4usize {
        let mut data = base.data().to_vec();
        for i in 0..36 {
            data[perturbed_ch * 36 + i] += 0.37;
        }
        let out1 = forward(&Tensor::new(vec![1, 4, 6, 6], data).unwrap());
        for c in 0..4 {
            let same = out0[c * 36..(c + 1) * 36] == out1[c * 36..(c + 1) * 36];
            assert_eq!(same, c != perturbed_ch, "channel {c} vs perturbed {perturbed_ch}");
        }
    }
}

#[test]
fn backward_hand_derivative_and_disconnected_leaf() {
    // loss = mse(w*x, y) for scalars: d/dw = 2x(wx - y).
    let w = Tensor::new(vec![1], vec![1.5]).unwrap().set_requires_grad(true);
    let x = Tensor::new(vec![1], vec![2.0]).unwrap();
    let y = Tensor::new(vec![1], vec![5.0]).unwrap();
    let orphan = Tensor::new(vec![1], vec![9.0]).unwrap().set_requires_grad(true);
    let mut tape = Tape::new();
    let wv = tape.leaf(&w);
    let xv = tape.leaf(&x);
    let yv = tape.leaf(&y);
    let ov = tape.leaf(&orphan);
    let prod = tape.mul(wv, xv).unwrap();
    let loss = tape.mse(prod, yv).unwrap();
    let grads = tape.backward(loss).unwrap();
    let expect = 2.0 * 2.0 * (1.5 * 2.0 - 5.0);
    assert!((grads.get(wv).unwrap()[0] - expect).abs() < 1e-12);
    assert!(grads.get(ov).is_none(), "disconnected leaf got a gradient");
}

#[test]
fn backward_rejects_non_scalar() {
    let a = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap().set_requires_grad(true);
    let mut tape = Tape::new();
    let av = tape.leaf(&a);
    let s = tape.scale(av, 2.0);
    assert!(tape.backward(s).is_err());
}

#[test]
fn repeated_backward_accumulates_into_tensor() {
    let mut w = Tensor::new(vec![1], vec![1.0]).unwrap().set_requires_grad(true);
    for _ in 0..2 {
        let mut tape = Tape::new();
        let wv = tape.leaf(&w);
        let sq = tape.mul(wv, wv).unwrap();
        let z = tape.constant(vec![1], vec![0.0]).unwrap();
        let loss = tape.mse(sq, z).unwrap();
        let grads = tape.backward(loss).unwrap();
        w.accumulate_grad(grads.get(wv).unwrap()).unwrap();
    }
    // d/dw w^4 evaluated... loss = (w^2)^2 = w^4? No: mse(w^2, 0) = w^4. grad = 4w^3 = 4.
    assert!((w.grad().unwrap()[0] - 8.0).abs() < 1e-12, "two backward passes accumulate");
}
