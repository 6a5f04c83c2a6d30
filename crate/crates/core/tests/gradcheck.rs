//! Central finite differences against the tape's analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uvnet_core::{ParamStore, Shape, Tape, Tensor, Var};

const STEP: f64 = 1e-3;
const REL_TOL: f64 = 1e-4;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

/// `build` records a scalar loss from the leaves; returns the worst relative error.
fn check<F>(inputs: &[Tensor<f64>], build: F) -> f64
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Var,
{
    let mut store = ParamStore::new();
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let root = build(&mut tape, &vars);
    let grads = tape.backward(root, &mut store).unwrap();

    let eval = |perturbed: &[Tensor<f64>]| -> f64 {
        let mut t = Tape::new();
        let vs: Vec<Var> = perturbed.iter().map(|x| t.constant(x.clone())).collect();
        let r = build(&mut t, &vs);
        t.value(r).data()[0]
    };

    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[k]).expect("leaf gradient");
        for i in 0..input.numel() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= STEP;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * STEP);
            worst = worst.max(rel_err(analytic.data()[i], numeric));
        }
    }
    worst
}

fn rand_shape(rng: &mut ChaCha8Rng, even: bool) -> Shape {
    let mut dim = |lo: usize, hi: usize| rng.gen_range(lo..=hi);
    let (n, c) = (1, dim(1, 4));
    let (mut h, mut w) = (dim(2, 8), dim(2, 8));
    if even {
        h -= h % 2;
        w -= w % 2;
    }
    Shape::new(n, c, h, w)
}

/// Values bounded away from 0 so that ReLU kinks are never straddled.
fn away_from_zero(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let data = (0..shape.numel())
        .map(|_| {
            let m = rng.gen_range(0.05..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Huber loss against a random target keeps every op's gradient O(1/N).
fn loss_on(tape: &mut Tape<f64>, y: Var, seed: u64, delta: f64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = tape.value(y).shape();
    let t = tape.constant(Tensor::uniform(shape, -1.0, 1.0, &mut rng));
    tape.huber_loss(y, t, delta).unwrap()
}

const INSTANCES: u64 = 20;

#[test]
fn conv2d_gradients() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs = rand_shape(&mut rng, false);
        let k = [1, 3][rng.gen_range(0..2)];
        let pad = if k == 1 { 0 } else { rng.gen_range(0..=1) };
        let xs = Shape::new(xs.batch, xs.channels, xs.height.max(k), xs.width.max(k));
        let out_ch = rng.gen_range(1..=3);
        let x = Tensor::uniform(xs, -1.0, 1.0, &mut rng);
        let w = Tensor::uniform(Shape::new(out_ch, xs.channels, k, k), -1.0, 1.0, &mut rng);
        let b = Tensor::uniform(Shape::new(out_ch, 1, 1, 1), -0.5, 0.5, &mut rng);
        // delta large enough to stay quadratic
        let err = check(&[x, w, b], |t, v| {
            let y = t.conv2d(v[0], v[1], v[2], pad).unwrap();
            loss_on(t, y, seed + 100, 100.0)
        });
        assert!(err <= REL_TOL, "seed {seed}: rel err {err:e}");
    }
}

#[test]
fn maxpool_gradients() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = rand_shape(&mut rng, true);
        // distinct values spaced well beyond the FD step
        let mut vals: Vec<f64> = (0..s.numel()).map(|i| i as f64 * 0.01).collect();
        for i in (1..vals.len()).rev() {
            let j = rng.gen_range(0..=i);
            vals.swap(i, j);
        }
        let x = Tensor::from_vec(s, vals).unwrap();
        let err = check(&[x], |t, v| {
            let y = t.maxpool2d(v[0]).unwrap();
            loss_on(t, y, seed + 200, 100.0)
        });
        assert!(err <= REL_TOL, "seed {seed}: rel err {err:e}");
    }
}

#[test]
fn upsample_gradients() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = rand_shape(&mut rng, false);
        let s = Shape::new(1, s.channels, s.height.min(4), s.width.min(4));
        let x = Tensor::uniform(s, -1.0, 1.0, &mut rng);
        let err = check(&[x], |t, v| {
            let y = t.upsample2x(v[0]);
            loss_on(t, y, seed + 300, 100.0)
        });
        assert!(err <= REL_TOL, "seed {seed}: rel err {err:e}");
    }
}

#[test]
fn concat_gradients_route_to_each_operand() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = rand_shape(&mut rng, false);
        let a = Tensor::uniform(s, -1.0, 1.0, &mut rng);
        let b = Tensor::uniform(
            Shape::new(s.batch, rng.gen_range(1..=3), s.height, s.width),
            -1.0,
            1.0,
            &mut rng,
        );
        let err = check(&[a, b], |t, v| {
            let y = t.concat_channels(v[0], v[1]).unwrap();
            loss_on(t, y, seed + 400, 100.0)
        });
        assert!(err <= REL_TOL, "seed {seed}: rel err {err:e}");
    }
}

#[test]
fn relu_gradients() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = away_from_zero(rand_shape(&mut rng, false), &mut rng);
        let err = check(&[x], |t, v| {
            let y = t.relu(v[0]);
            loss_on(t, y, seed + 500, 100.0)
        });
        assert!(err <= REL_TOL, "seed {seed}: rel err {err:e}");
    }
}

#[test]
fn huber_gradients_both_regimes() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = rand_shape(&mut rng, false);
        let delta = 0.5;
        // residuals in (0.05, 0.45) ∪ (0.55, 1.5): never within the FD step of ±δ
        let t = Tensor::uniform(s, -1.0, 1.0, &mut rng);
        let p_data = t
            .data()
            .iter()
            .map(|&tv| {
                let m = if rng.gen_bool(0.5) {
                    rng.gen_range(0.05..0.45)
                } else {
                    rng.gen_range(0.55..1.5)
                };
                tv + if rng.gen_bool(0.5) { m } else { -m }
            })
            .collect();
        let p = Tensor::from_vec(s, p_data).unwrap();
        let err = check(&[p, t], |tape, v| {
            tape.huber_loss(v[0], v[1], delta).unwrap()
        });
        assert!(err <= REL_TOL, "seed {seed}: rel err {err:e}");
    }
}

#[test]
fn composed_conv_relu_pool_gradients() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::uniform(Shape::new(1, 2, 8, 8), -1.0, 1.0, &mut rng);
        let w = Tensor::uniform(Shape::new(3, 2, 3, 3), -1.0, 1.0, &mut rng);
        let b = Tensor::uniform(Shape::new(3, 1, 1, 1), -0.1, 0.1, &mut rng);
        let err = check(&[x, w, b], |t, v| {
            let y = t.conv2d(v[0], v[1], v[2], 1).unwrap();
            let p = t.maxpool2d(y).unwrap();
            let u = t.upsample2x(p);
            let c = t.concat_channels(u, y).unwrap();
            loss_on(t, c, seed, 100.0)
        });
        // kinks are possible here, so only report gross failures
        assert!(err <= 1e-3, "seed {seed}: rel err {err:e}");
    }
}
