//! Central finite-difference checks for every tape primitive, run at f64.
//!
//! For each op, 100 random probes with inputs in [-2, 2]: the analytic
//! gradient from `backward` is compared against (f(x+h) - f(x-h)) / 2h with
//! h = 1e-3. Relative error uses the denominator max(1e-6, |a| + |n|).

use asm_core::rng::SplitMix64;
use asm_core::tensor::{Tape, Tensor, Var};

const H: f64 = 1e-3;
const TOL: f64 = 1e-3;
const PROBES: usize = 100;

type Builder = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Var>;

fn rand_tensor(rng: &mut SplitMix64, shape: Vec<usize>) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.uniform(-2.0, 2.0)).collect();
    Tensor::new(shape, data).unwrap().with_grad()
}

/// Sensitizing weights so the scalar loss sees every output element.
fn mix_weights(rng: &mut SplitMix64, shape: Vec<usize>) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
    Tensor::new(shape, data).unwrap()
}

/// Max relative gradient error over all elements of all inputs.
fn fd_max_rel(inputs: &[Tensor<f64>], build: &Builder) -> f64 {
    let mut tape: Tape<f64> = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t)).collect();
    let loss = build(&mut tape, &vars);
    tape.backward(loss).unwrap();

    let eval = |k: usize, i: usize, delta: f64| -> f64 {
        let mut tape: Tape<f64> = Tape::new();
        let vars: Vec<Var> = inputs
            .iter()
            .enumerate()
            .map(|(j, t)| {
                if j == k {
                    let mut data = t.data().to_vec();
                    data[i] += delta;
                    let t2 = Tensor::new(t.shape().to_vec(), data).unwrap();
                    tape.leaf(&t2)
                } else {
                    tape.leaf(t)
                }
            })
            .collect();
        let loss = build(&mut tape, &vars);
        tape.scalar_value(loss)
    };

    let mut max_rel = 0f64;
    for (k, t) in inputs.iter().enumerate() {
        let analytic = tape.grad(vars[k]).expect("input gets a gradient");
        for i in 0..t.numel() {
            let numeric = (eval(k, i, H) - eval(k, i, -H)) / (2.0 * H);
            let denom = (analytic[i].abs() + numeric.abs()).max(1e-6);
            max_rel = max_rel.max((analytic[i] - numeric).abs() / denom);
        }
    }
    max_rel
}

fn run_probes(name: &str, mut gen: impl FnMut(&mut SplitMix64) -> (Vec<Tensor<f64>>, Builder)) {
    let mut rng = SplitMix64::new(0xA11 ^ name.len() as u64);
    let mut worst = 0f64;
    for probe in 0..PROBES {
        let (inputs, build) = gen(&mut rng);
        let rel = fd_max_rel(&inputs, &build);
        assert!(rel < TOL, "{name} probe {probe}: max rel err {rel:e}");
        worst = worst.max(rel);
    }
    println!("{name}: worst relative error over {PROBES} probes = {worst:.3e}");
}

fn dims(rng: &mut SplitMix64) -> (usize, usize) {
    (1 + rng.below(4), 3 + rng.below(3))
}

#[test]
fn grad_add() {
    run_probes("add", |rng| {
        let (n, d) = dims(rng);
        let a = rand_tensor(rng, vec![n, d]);
        let b = rand_tensor(rng, vec![n, d]);
        let m = mix_weights(rng, vec![n, d]);
        let build: Builder = Box::new(move |tape, vars| {
            let s = tape.add(vars[0], vars[1]).unwrap();
            let mv = tape.leaf(&m);
            let w = tape.mul_elem(s, mv).unwrap();
            tape.sum(w).unwrap()
        });
        (vec![a, b], build)
    });
}

#[test]
fn grad_mul_elem() {
    run_probes("mul_elem", |rng| {
        let (n, d) = dims(rng);
        let a = rand_tensor(rng, vec![n, d]);
        let b = rand_tensor(rng, vec![n, d]);
        let m = mix_weights(rng, vec![n, d]);
        let build: Builder = Box::new(move |tape, vars| {
            let s = tape.mul_elem(vars[0], vars[1]).unwrap();
            let mv = tape.leaf(&m);
            let w = tape.mul_elem(s, mv).unwrap();
            tape.sum(w).unwrap()
        });
        (vec![a, b], build)
    });
}

#[test]
fn grad_sum() {
    run_probes("sum", |rng| {
        let (n, d) = dims(rng);
        let a = rand_tensor(rng, vec![n, d]);
        let build: Builder = Box::new(|tape, vars| tape.sum(vars[0]).unwrap());
        (vec![a], build)
    });
}

#[test]
fn grad_linear() {
    run_probes("linear", |rng| {
        let (n, d_in) = dims(rng);
        let d_out = 2 + rng.below(3);
        let x = rand_tensor(rng, vec![n, d_in]);
        let w = rand_tensor(rng, vec![d_in, d_out]);
        let b = rand_tensor(rng, vec![d_out]);
        let m = mix_weights(rng, vec![n, d_out]);
        let build: Builder = Box::new(move |tape, vars| {
            let y = tape.linear(vars[0], vars[1], vars[2]).unwrap();
            let mv = tape.leaf(&m);
            let w = tape.mul_elem(y, mv).unwrap();
            tape.sum(w).unwrap()
        });
        (vec![x, w, b], build)
    });
}

#[test]
fn grad_layer_norm() {
    run_probes("layer_norm", |rng| {
        let (n, d) = dims(rng);
        let x = rand_tensor(rng, vec![n, d]);
        let gamma = rand_tensor(rng, vec![d]);
        let beta = rand_tensor(rng, vec![d]);
        let m = mix_weights(rng, vec![n, d]);
        let build: Builder = Box::new(move |tape, vars| {
            let y = tape.layer_norm(vars[0], vars[1], vars[2], 1e-5).unwrap();
            let mv = tape.leaf(&m);
            let w = tape.mul_elem(y, mv).unwrap();
            tape.sum(w).unwrap()
        });
        (vec![x, gamma, beta], build)
    });
}

#[test]
fn grad_transpose() {
    run_probes("transpose2d", |rng| {
        let (n, d) = dims(rng);
        let x = rand_tensor(rng, vec![n, d]);
        let m = mix_weights(rng, vec![d, n]);
        let build: Builder = Box::new(move |tape, vars| {
            let y = tape.transpose(vars[0]).unwrap();
            let mv = tape.leaf(&m);
            let w = tape.mul_elem(y, mv).unwrap();
            tape.sum(w).unwrap()
        });
        (vec![x], build)
    });
}

#[test]
fn grad_mean_rows() {
    run_probes("mean_rows", |rng| {
        let (n, d) = dims(rng);
        let x = rand_tensor(rng, vec![n, d]);
        let m = mix_weights(rng, vec![d]);
        let build: Builder = Box::new(move |tape, vars| {
            let y = tape.mean_rows(vars[0]).unwrap();
            let mv = tape.leaf(&m);
            let w = tape.mul_elem(y, mv).unwrap();
            tape.sum(w).unwrap()
        });
        (vec![x], build)
    });
}

#[test]
fn grad_reshape() {
    run_probes("reshape", |rng| {
        let (n, d) = dims(rng);
        let x = rand_tensor(rng, vec![n, d]);
        let m = mix_weights(rng, vec![1, n * d]);
        let build: Builder = Box::new(move |tape, vars| {
            let y = tape.reshape(vars[0], vec![1, m.numel()]).unwrap();
            let mv = tape.leaf(&m);
            let w = tape.mul_elem(y, mv).unwrap();
            tape.sum(w).unwrap()
        });
        (vec![x], build)
    });
}

#[test]
fn grad_cross_entropy() {
    run_probes("cross_entropy", |rng| {
        let n = 1 + rng.below(4);
        let c = 2 + rng.below(4);
        let logits = rand_tensor(rng, vec![n, c]);
        let labels: Vec<usize> = (0..n).map(|_| rng.below(c)).collect();
        let build: Builder =
            Box::new(move |tape, vars| tape.cross_entropy(vars[0], &labels).unwrap());
        (vec![logits], build)
    });
}

fn activation_probe(rng: &mut SplitMix64, which: u8) -> (Vec<Tensor<f64>>, Builder) {
    let (n, d) = dims(rng);
    let x = rand_tensor(rng, vec![n, d]);
    let m = mix_weights(rng, vec![n, d]);
    let build: Builder = Box::new(move |tape, vars| {
        let y = match which {
            0 => tape.gelu(vars[0]).unwrap(),
            1 => tape.mish(vars[0]).unwrap(),
            _ => tape.swish(vars[0]).unwrap(),
        };
        let mv = tape.leaf(&m);
        let w = tape.mul_elem(y, mv).unwrap();
        tape.sum(w).unwrap()
    });
    (vec![x], build)
}

#[test]
fn grad_gelu() {
    run_probes("gelu", |rng| activation_probe(rng, 0));
}

#[test]
fn grad_mish() {
    run_probes("mish", |rng| activation_probe(rng, 1));
}

#[test]
fn grad_swish() {
    run_probes("swish", |rng| activation_probe(rng, 2));
}

#[test]
fn grad_aconc_all_parameters() {
    run_probes("aconc", |rng| {
        let (n, d) = dims(rng);
        let x = rand_tensor(rng, vec![n, d]);
        let p1 = rand_tensor(rng, vec![d]);
        let p2 = rand_tensor(rng, vec![d]);
        let beta = rand_tensor(rng, vec![d]);
        let m = mix_weights(rng, vec![n, d]);
        let build: Builder = Box::new(move |tape, vars| {
            let y = tape.aconc(vars[0], vars[1], vars[2], vars[3]).unwrap();
            let mv = tape.leaf(&m);
            let w = tape.mul_elem(y, mv).unwrap();
            tape.sum(w).unwrap()
        });
        (vec![x, p1, p2, beta], build)
    });
}

/// The production f32 instantiation agrees with f64 finite differences too.
#[test]
fn grad_f32_instantiation_sane() {
    let mut rng = SplitMix64::new(77);
    for _ in 0..10 {
        let n = 2 + rng.below(3);
        let d = 3 + rng.below(3);
        let x64 = rand_tensor(&mut rng, vec![n, d]);
        let g64 = rand_tensor(&mut rng, vec![d]);
        let b64 = rand_tensor(&mut rng, vec![d]);
        let labels: Vec<usize> = (0..n).map(|_| rng.below(d)).collect();

        // analytic at f32
        let mut tape: Tape<f32> = Tape::new();
        let x = tape.leaf(&x64.cast::<f32>());
        let g = tape.leaf(&g64.cast::<f32>());
        let b = tape.leaf(&b64.cast::<f32>());
        let y = tape.layer_norm(x, g, b, 1e-5).unwrap();
        let z = tape.gelu(y).unwrap();
        let loss = tape.cross_entropy(z, &labels).unwrap();
        tape.backward(loss).unwrap();
        let analytic: Vec<f64> = tape.grad(x).unwrap().iter().map(|&v| v as f64).collect();

        // finite differences at f64 through the same graph
        let eval = |i: usize, delta: f64| -> f64 {
            let mut data = x64.data().to_vec();
            data[i] += delta;
            let mut tape: Tape<f64> = Tape::new();
            let x = tape.leaf(&Tensor::new(x64.shape().to_vec(), data).unwrap());
            let g = tape.leaf(&g64);
            let b = tape.leaf(&b64);
            let y = tape.layer_norm(x, g, b, 1e-5).unwrap();
            let z = tape.gelu(y).unwrap();
            let loss = tape.cross_entropy(z, &labels).unwrap();
            tape.scalar_value(loss)
        };
        for i in 0..x64.numel() {
            let numeric = (eval(i, H) - eval(i, -H)) / (2.0 * H);
            let denom = (analytic[i].abs() + numeric.abs()).max(1e-6);
            assert!(
                (analytic[i] - numeric).abs() / denom < TOL,
                "f32 grad off at {i}: {} vs {numeric}",
                analytic[i]
            );
        }
    }
}
