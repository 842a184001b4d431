mod common;

use common::gradcheck::{away_from_zero, random_tensor, relative_errors};
use orchardseg::grad::{adam_step, AdamParams, AdamState, Graph, Tensor};
use orchardseg::seed;
use rand::Rng;

const SHAPES: u64 = 20;
const CONV_TOL: f64 = 1e-3;
const POINTWISE_TOL: f64 = 1e-4;

fn assert_all_below(errors: &[f64], tol: f64, what: &str) {
    for (i, e) in errors.iter().enumerate() {
        assert!(*e <= tol, "{what}: input {i} relative error {e:.3e} > {tol:.0e}");
    }
}

#[test]
fn conv2d_gradients_match_finite_differences() {
    let mut rng = seed::rng(101);
    for case in 0..SHAPES {
        let n = rng.random_range(1..=2);
        let c = rng.random_range(1..=3);
        let o = rng.random_range(1..=3);
        let k = rng.random_range(1..=4);
        let stride = rng.random_range(1..=2);
        let pad = rng.random_range(0..k.min(3));
        let h = rng.random_range(k..k + 5);
        let w = rng.random_range(k..k + 5);
        let inputs = vec![
            random_tensor(&mut rng, [n, c, h, w], -1.0, 1.0),
            random_tensor(&mut rng, [o, c, k, k], -1.0, 1.0),
            random_tensor(&mut rng, [1, o, 1, 1], -1.0, 1.0),
        ];
        let build = move |g: &mut Graph, v: &[_]| g.conv2d(v[0], v[1], v[2], stride, pad).unwrap();
        let errs = relative_errors(&build, &inputs, 1e-2, case);
        assert_all_below(
            &errs,
            CONV_TOL,
            &format!("conv2d case {case} k{k} s{stride} p{pad} in {h}x{w}"),
        );
    }
}

#[test]
fn conv2d_transpose_gradients_match_finite_differences() {
    let mut rng = seed::rng(202);
    for case in 0..SHAPES {
        let n = rng.random_range(1..=2);
        let c = rng.random_range(1..=3);
        let o = rng.random_range(1..=3);
        let k = rng.random_range(1..=4);
        let stride = rng.random_range(1..=2);
        let pad = rng.random_range(0..=(k - 1) / 2);
        let h = rng.random_range(1..5);
        let w = rng.random_range(1..5);
        if (h - 1) * stride + k <= 2 * pad || (w - 1) * stride + k <= 2 * pad {
            continue;
        }
        let inputs = vec![
            random_tensor(&mut rng, [n, c, h, w], -1.0, 1.0),
            random_tensor(&mut rng, [c, o, k, k], -1.0, 1.0),
            random_tensor(&mut rng, [1, o, 1, 1], -1.0, 1.0),
        ];
        let build = move |g: &mut Graph, v: &[_]| g.conv2d_transpose(v[0], v[1], v[2], stride, pad).unwrap();
        let errs = relative_errors(&build, &inputs, 1e-2, case);
        assert_all_below(
            &errs,
            CONV_TOL,
            &format!("conv2d_transpose case {case} k{k} s{stride} p{pad}"),
        );
    }
}

fn random_shape(rng: &mut impl Rng) -> [usize; 4] {
    [
        rng.random_range(1..=2),
        rng.random_range(1..=3),
        rng.random_range(1..=5),
        rng.random_range(1..=5),
    ]
}

#[test]
fn pointwise_gradients_match_finite_differences() {
    let mut rng = seed::rng(303);
    for case in 0..SHAPES {
        let shape = random_shape(&mut rng);
        // Steps stay inside the margin so no probe crosses the kink.
        let kinked = vec![away_from_zero(&mut rng, shape, 3.0, 0.05)];
        let leaky = |g: &mut Graph, v: &[_]| g.leaky_relu(v[0], 0.2);
        assert_all_below(
            &relative_errors(&leaky, &kinked, 4e-2, case),
            POINTWISE_TOL,
            "leaky_relu",
        );
        let relu = |g: &mut Graph, v: &[_]| g.relu(v[0]);
        assert_all_below(&relative_errors(&relu, &kinked, 4e-2, case), POINTWISE_TOL, "relu");

        let smooth = vec![random_tensor(&mut rng, shape, -3.0, 3.0)];
        let sigmoid = |g: &mut Graph, v: &[_]| g.sigmoid(v[0]);
        assert_all_below(
            &relative_errors(&sigmoid, &smooth, 2e-2, case),
            POINTWISE_TOL,
            "sigmoid",
        );
        let tanh = |g: &mut Graph, v: &[_]| g.tanh(v[0]);
        assert_all_below(&relative_errors(&tanh, &smooth, 2e-2, case), POINTWISE_TOL, "tanh");
        let scale = |g: &mut Graph, v: &[_]| g.scale(v[0], -1.7);
        assert_all_below(&relative_errors(&scale, &smooth, 1e-2, case), POINTWISE_TOL, "scale");
    }
}

#[test]
fn concat_and_add_gradients_match_finite_differences() {
    let mut rng = seed::rng(404);
    for case in 0..SHAPES {
        let [n, c, h, w] = random_shape(&mut rng);
        let c2 = rng.random_range(1..=3);
        let inputs = vec![
            random_tensor(&mut rng, [n, c, h, w], -1.0, 1.0),
            random_tensor(&mut rng, [n, c2, h, w], -1.0, 1.0),
        ];
        let concat = |g: &mut Graph, v: &[_]| g.concat_channels(v[0], v[1]).unwrap();
        assert_all_below(&relative_errors(&concat, &inputs, 1e-2, case), POINTWISE_TOL, "concat");

        let same = vec![inputs[0].clone(), random_tensor(&mut rng, [n, c, h, w], -1.0, 1.0)];
        let add = |g: &mut Graph, v: &[_]| g.add(v[0], v[1]).unwrap();
        assert_all_below(&relative_errors(&add, &same, 1e-2, case), POINTWISE_TOL, "add");
    }
}

#[test]
fn loss_gradients_match_finite_differences() {
    let mut rng = seed::rng(505);
    for case in 0..SHAPES {
        // Mean reductions spread each element's effect over the whole tensor;
        // small tensors keep that effect well above f32 rounding of the loss.
        let shape = [
            rng.random_range(1..=2),
            rng.random_range(1..=2),
            rng.random_range(1..=3),
            rng.random_range(1..=3),
        ];
        let target = random_tensor(&mut rng, shape, 0.0, 1.0);
        // Keep |pred − target| clear of the L1 kink.
        let offset = away_from_zero(&mut rng, shape, 1.0, 0.05);
        let pred: Vec<f32> = target.data().iter().zip(offset.data()).map(|(t, d)| t + d).collect();
        let pred = Tensor::new(shape, pred).unwrap();
        let l1 = |g: &mut Graph, v: &[_]| {
            let t = g.constant(v_target(g, v[1]));
            g.l1_loss(v[0], t).unwrap()
        };
        let errs = relative_errors(&l1, &[pred, target.clone()], 4e-2, case);
        assert_all_below(&errs[..1], POINTWISE_TOL, "l1_loss");

        let logits = random_tensor(&mut rng, shape, -4.0, 4.0);
        let bce = |g: &mut Graph, v: &[_]| {
            let t = g.constant(v_target(g, v[1]));
            g.bce_with_logits(v[0], t).unwrap()
        };
        let errs = relative_errors(&bce, &[logits, target], 1e-1, case);
        assert_all_below(&errs[..1], POINTWISE_TOL, "bce_with_logits");
    }
}

/// Targets enter the loss as constants, so only the prediction is checked.
fn v_target(g: &Graph, v: orchardseg::grad::Var) -> Tensor {
    g.value(v).clone()
}

#[test]
fn small_network_chain_matches_finite_differences() {
    let mut rng = seed::rng(606);
    let inputs = vec![
        random_tensor(&mut rng, [1, 2, 8, 8], -1.0, 1.0),
        random_tensor(&mut rng, [3, 2, 4, 4], -0.5, 0.5),
        random_tensor(&mut rng, [1, 3, 1, 1], -0.1, 0.1),
        random_tensor(&mut rng, [3, 1, 4, 4], -0.5, 0.5),
        random_tensor(&mut rng, [1, 1, 1, 1], -0.1, 0.1),
        random_tensor(&mut rng, [1, 1, 8, 8], 0.0, 1.0),
    ];
    let build = |g: &mut Graph, v: &[_]| {
        let down = g.conv2d(v[0], v[1], v[2], 2, 1).unwrap();
        let act = g.tanh(down);
        let up = g.conv2d_transpose(act, v[3], v[4], 2, 1).unwrap();
        let logits = g.scale(up, 0.5);
        let t = g.constant(v_target(g, v[5]));
        g.bce_with_logits(logits, t).unwrap()
    };
    let errs = relative_errors(&build, &inputs, 5e-2, 1);
    assert_all_below(&errs[..5], CONV_TOL, "conv → tanh → convT → bce");
}

#[test]
fn concat_backward_conserves_gradient_mass() {
    let mut rng = seed::rng(707);
    for _ in 0..SHAPES {
        let [n, c, h, w] = random_shape(&mut rng);
        let mut g = Graph::new();
        let a = g.param(random_tensor(&mut rng, [n, c, h, w], -1.0, 1.0));
        let b = g.param(random_tensor(&mut rng, [n, 2, h, w], -1.0, 1.0));
        let out = g.concat_channels(a, b).unwrap();
        let seed = random_tensor(&mut rng, g.value(out).shape(), -1.0, 1.0);
        g.backward_with(out, seed.clone()).unwrap();
        let total: f64 = seed.data().iter().map(|&v| f64::from(v)).sum();
        let split: f64 = [a, b]
            .iter()
            .flat_map(|v| g.grad(*v).unwrap().data())
            .map(|&v| f64::from(v))
            .sum();
        assert!((total - split).abs() < 1e-5, "{total} vs {split}");
    }
}

#[test]
fn conv_bias_gradient_is_channel_sum_of_upstream() {
    let mut rng = seed::rng(808);
    for transpose in [false, true] {
        let mut g = Graph::new();
        let x = g.param(random_tensor(&mut rng, [2, 3, 6, 6], -1.0, 1.0));
        let (w, b) = if transpose {
            (
                g.param(random_tensor(&mut rng, [3, 4, 4, 4], -1.0, 1.0)),
                g.param(Tensor::zeros([1, 4, 1, 1])),
            )
        } else {
            (
                g.param(random_tensor(&mut rng, [4, 3, 3, 3], -1.0, 1.0)),
                g.param(Tensor::zeros([1, 4, 1, 1])),
            )
        };
        let out = if transpose {
            g.conv2d_transpose(x, w, b, 2, 1)
        } else {
            g.conv2d(x, w, b, 1, 1)
        }
        .unwrap();
        let seed = random_tensor(&mut rng, g.value(out).shape(), -1.0, 1.0);
        g.backward_with(out, seed.clone()).unwrap();
        let [n, o, h, wd] = seed.shape();
        for ch in 0..o {
            let mut s = 0.0f64;
            for i in 0..n {
                let base = (i * o + ch) * h * wd;
                s += seed.data()[base..base + h * wd]
                    .iter()
                    .map(|&v| f64::from(v))
                    .sum::<f64>();
            }
            let got = f64::from(g.grad(b).unwrap().data()[ch]);
            assert!((got - s).abs() < 1e-4, "channel {ch}: {got} vs {s}");
        }
    }
}

#[test]
fn identical_adam_runs_are_bit_identical() {
    let run = || {
        let mut rng = seed::rng(9);
        let mut p: Vec<f32> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut st = AdamState::new(16);
        for _ in 0..50 {
            let grads: Vec<f32> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
            adam_step(&mut p, &grads, &mut st, &AdamParams::default());
        }
        (p, st)
    };
    assert_eq!(run(), run());
}
