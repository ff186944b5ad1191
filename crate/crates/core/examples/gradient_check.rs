//! Checks reverse-mode gradients of a small conv + tanh network against
//! central differences.

use lmvp::numerics::{Padding, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};

fn random(rng: &mut impl Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn loss(tape: &mut Tape<f64>, x: Var, k: Var) -> lmvp::Result<Var> {
    let y = tape.conv2d(x, k, 1, Padding::SameReplicate)?;
    let y = tape.tanh(y)?;
    let y = tape.square(y)?;
    tape.sum(y)
}

fn eval(x: &Tensor<f64>, k: &Tensor<f64>) -> f64 {
    let mut tape = Tape::new();
    let (x, k) = (tape.constant(x.clone()), tape.constant(k.clone()));
    let l = loss(&mut tape, x, k).unwrap();
    tape.value(l).item()
}

fn main() -> lmvp::Result<()> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    let x = random(&mut rng, &[2, 3, 6, 6]);
    let k = random(&mut rng, &[4, 3, 3, 3]);

    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let kv = tape.param(k.clone());
    let l = loss(&mut tape, xv, kv)?;
    let grads = tape.backward(l, &[kv])?;
    let analytic = grads.get(kv).expect("kernel gradient");

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..k.numel() {
        let (mut up, mut down) = (k.clone(), k.clone());
        up.data_mut()[i] += h;
        down.data_mut()[i] -= h;
        let numeric = (eval(&x, &up) - eval(&x, &down)) / (2.0 * h);
        let a = analytic.data()[i];
        worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8));
    }
    println!("{} kernel entries, worst relative error {worst:.2e}", k.numel());
    Ok(())
}
