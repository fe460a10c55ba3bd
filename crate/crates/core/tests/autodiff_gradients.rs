//! Reverse-mode gradients of every tape operation against central differences.
//!
//! Each case builds a function of one or more leaf tensors, contracts its
//! output with a fixed random vector `s` to get a scalar, and compares the
//! tape's gradient of `s·f` with `(g(x + h) − g(x − h)) / 2h`.

use qadqn_core::autodiff::{relative_error, LstmParams, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-5;
// With h = 1e-5 the central difference of a smooth O(1) function carries
// about h²·|f'''|/6 + ε/h ≈ 1e-10 absolute error, so gradients are compared
// relative to at least this floor.
const FLOOR: f64 = 1e-4;
const TRIALS: usize = 20;

type Build = dyn Fn(&mut Tape, &[Var]) -> Var;

fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

fn contracted(build: &Build, inputs: &[Tensor], s: &[f64]) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&mut tape, &vars);
    tape.value(out).data().iter().zip(s).map(|(a, b)| a * b).sum()
}

/// Worst relative error over every input entry of one trial.
fn check(build: &Build, inputs: &[Tensor], rng: &mut ChaCha8Rng) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&mut tape, &vars);
    let s = random_vec(rng, tape.value(out).len(), 1.0);
    let grads = tape.backward(out, &Tensor::vector(s.clone())).unwrap();

    let mut worst = 0.0f64;
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(*var);
        for i in 0..inputs[k].len() {
            let mut plus = inputs.to_vec();
            let mut minus = inputs.to_vec();
            plus[k].data_mut()[i] += H;
            minus[k].data_mut()[i] -= H;
            let fd = (contracted(build, &plus, &s) - contracted(build, &minus, &s)) / (2.0 * H);
            worst = worst.max(relative_error(analytic.data()[i], fd, FLOOR));
        }
    }
    worst
}

fn run(name: &str, shapes: &[Vec<usize>], build: &Build) {
    let mut rng = ChaCha8Rng::seed_from_u64(name.bytes().map(u64::from).sum());
    let mut worst = 0.0f64;
    for _ in 0..TRIALS {
        let inputs: Vec<Tensor> = shapes
            .iter()
            .map(|shape| {
                let n = shape.iter().product();
                Tensor::new(shape.clone(), random_vec(&mut rng, n, 2.0)).unwrap()
            })
            .collect();
        worst = worst.max(check(build, &inputs, &mut rng));
    }
    assert!(worst < TOL, "{name}: max relative error {worst:e}");
}

#[test]
fn add_sub_mul() {
    run("add", &[vec![5], vec![5]], &|t, v| t.add(v[0], v[1]).unwrap());
    run("sub", &[vec![5], vec![5]], &|t, v| t.sub(v[0], v[1]).unwrap());
    run("mul", &[vec![5], vec![5]], &|t, v| t.mul(v[0], v[1]).unwrap());
    // Same operand on both sides accumulates two contributions.
    run("square", &[vec![4]], &|t, v| t.mul(v[0], v[0]).unwrap());
}

#[test]
fn scale() {
    run("scale", &[vec![6]], &|t, v| t.scale(v[0], -1.7));
}

#[test]
fn matvec_vecmat_linear() {
    run("matvec", &[vec![3, 4], vec![4]], &|t, v| t.matvec(v[0], v[1]).unwrap());
    run("vecmat", &[vec![3], vec![3, 4]], &|t, v| t.vecmat(v[0], v[1]).unwrap());
    run("linear", &[vec![3, 4], vec![4], vec![3]], &|t, v| t.linear(v[0], v[1], v[2]).unwrap());
}

#[test]
fn activations() {
    run("elu", &[vec![8]], &|t, v| t.elu(v[0]));
    run("sigmoid", &[vec![8]], &|t, v| t.sigmoid(v[0]));
    run("tanh", &[vec![8]], &|t, v| t.tanh(v[0]));
    run("softmax", &[vec![6]], &|t, v| t.softmax(v[0]));
}

#[test]
fn structural_ops() {
    run("concat", &[vec![2], vec![3]], &|t, v| t.concat(&[v[0], v[1], v[0]]));
    run("slice", &[vec![7]], &|t, v| t.slice(v[0], 2, 3).unwrap());
    run("broadcast", &[vec![1]], &|t, v| t.broadcast(v[0], 5).unwrap());
    run("reshape", &[vec![6]], &|t, v| {
        let m = t.reshape(v[0], vec![2, 3]).unwrap();
        let x = t.leaf(Tensor::vector(vec![0.3, -1.1]));
        t.vecmat(x, m).unwrap()
    });
}

#[test]
fn composite_attention_weights() {
    // softmax(−(q − k)²·c)·V, the shape of one attention row.
    run("attention_row", &[vec![1], vec![5], vec![5, 3]], &|t, v| {
        let qb = t.broadcast(v[0], 5).unwrap();
        let d = t.sub(qb, v[1]).unwrap();
        let sq = t.mul(d, d).unwrap();
        let logits = t.scale(sq, -0.5);
        let w = t.softmax(logits);
        t.vecmat(w, v[2]).unwrap()
    });
}

fn lstm_params(input: usize, hidden: usize) -> LstmParams {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    LstmParams::init(input, hidden, &mut rng)
}

#[test]
fn lstm_step() {
    let (input, hidden) = (4, 5);
    let p = lstm_params(input, hidden);
    run(
        "lstm_step",
        &[p.weight.shape().to_vec(), vec![4 * hidden], vec![input], vec![hidden], vec![hidden]],
        &move |t, v| {
            let vars = qadqn_core::autodiff::LstmVars {
                hidden,
                weight: v[0],
                bias: v[1],
            };
            let (h, c) = vars.step(t, v[2], v[3], v[4]).unwrap();
            t.concat(&[h, c])
        },
    );
}

#[test]
fn lstm_sequence() {
    let (input, hidden, steps) = (4, 5, 6);
    let p = lstm_params(input, hidden);
    run(
        "lstm_sequence",
        &[p.weight.shape().to_vec(), vec![4 * hidden], vec![steps, input]],
        &move |t, v| {
            let vars = qadqn_core::autodiff::LstmVars {
                hidden,
                weight: v[0],
                bias: v[1],
            };
            vars.sequence(t, v[2]).unwrap()
        },
    );
}
