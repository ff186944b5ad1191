use crate::error::Result;

use super::{Padding, Real, Tape, Var};

/// Weights of one convolutional GRU cell.
///
/// Each gate kernel is `[hidden, input + hidden, k, k]` and reads the
/// channel concatenation `[x, h]` (the candidate reads `[x, r ⊙ h]`).
#[derive(Clone, Copy, Debug)]
pub struct ConvGruParams {
    pub update_w: Var,
    pub update_b: Var,
    pub reset_w: Var,
    pub reset_b: Var,
    pub cand_w: Var,
    pub cand_b: Var,
}

/// One convolutional GRU step:
///
/// ```text
/// z  = σ(W_z * [x, h] + b_z)
/// r  = σ(W_r * [x, h] + b_r)
/// n  = tanh(W_n * [x, r ⊙ h] + b_n)
/// h' = (1 - z) ⊙ n + z ⊙ h
/// ```
///
/// `z → 1` keeps the previous state.
pub fn conv_gru_step<T: Real>(tape: &mut Tape<T>, h: Var, x: Var, p: &ConvGruParams) -> Result<Var> {
    let xh = tape.concat_channels(&[x, h])?;
    let z = gate(tape, xh, p.update_w, p.update_b)?;
    let z = tape.sigmoid(z)?;
    let r = gate(tape, xh, p.reset_w, p.reset_b)?;
    let r = tape.sigmoid(r)?;
    let rh = tape.mul(r, h)?;
    let xrh = tape.concat_channels(&[x, rh])?;
    let n = gate(tape, xrh, p.cand_w, p.cand_b)?;
    let n = tape.tanh(n)?;
    let keep = tape.mul(z, h)?;
    let one_minus_z = tape.affine(z, -1.0, 1.0)?;
    let fresh = tape.mul(one_minus_z, n)?;
    tape.add(fresh, keep)
}

fn gate<T: Real>(tape: &mut Tape<T>, input: Var, w: Var, b: Var) -> Result<Var> {
    let pre = tape.conv2d(input, w, 1, Padding::SameZero)?;
    tape.add_bias(pre, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
        let n = shape.iter().product();
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
        Tensor::new(shape.to_vec(), v).unwrap()
    }

    fn params(tape: &mut Tape<f64>, tensors: [Tensor<f64>; 6]) -> ConvGruParams {
        let [uw, ub, rw, rb, cw, cb] = tensors.map(|t| tape.constant(t));
        ConvGruParams { update_w: uw, update_b: ub, reset_w: rw, reset_b: rb, cand_w: cw, cand_b: cb }
    }

    #[test]
    fn zero_everything_gives_zero_state() {
        let mut tape = Tape::<f64>::new();
        let p = params(
            &mut tape,
            [
                Tensor::zeros([2, 3, 3, 3]),
                Tensor::zeros([2]),
                Tensor::zeros([2, 3, 3, 3]),
                Tensor::zeros([2]),
                Tensor::zeros([2, 3, 3, 3]),
                Tensor::zeros([2]),
            ],
        );
        let h = tape.zeros([2, 4, 4]);
        let x = tape.zeros([1, 4, 4]);
        let out = conv_gru_step(&mut tape, h, x, &p).unwrap();
        assert!(tape.value(out).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn saturated_update_gate_keeps_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut tape = Tape::<f64>::new();
        let p = params(
            &mut tape,
            [
                Tensor::zeros([2, 3, 3, 3]),
                Tensor::full([2], 60.0),
                random(&mut rng, &[2, 3, 3, 3], 0.5),
                Tensor::zeros([2]),
                random(&mut rng, &[2, 3, 3, 3], 0.5),
                Tensor::zeros([2]),
            ],
        );
        let h0 = random(&mut rng, &[2, 4, 4], 0.9);
        let h = tape.constant(h0.clone());
        let x = tape.constant(random(&mut rng, &[1, 4, 4], 1.0));
        let out = conv_gru_step(&mut tape, h, x, &p).unwrap();
        for (a, b) in tape.value(out).data().iter().zip(h0.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    /// Hand-unrolled gate formulas with explicit loops over taps.
    #[test]
    fn matches_hand_unrolled_formulas() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (ch, cx, hh, ww) = (2usize, 1usize, 3usize, 4usize);
        let ws: Vec<Tensor<f64>> = (0..3).map(|_| random(&mut rng, &[ch, cx + ch, 3, 3], 0.6)).collect();
        let bs: Vec<Tensor<f64>> = (0..3).map(|_| random(&mut rng, &[ch], 0.3)).collect();
        let h0 = random(&mut rng, &[ch, hh, ww], 0.9);
        let x0 = random(&mut rng, &[cx, hh, ww], 1.0);

        let conv = |w: &Tensor<f64>, b: &Tensor<f64>, input: &dyn Fn(usize, isize, isize) -> f64| {
            let mut out = vec![0.0; ch * hh * ww];
            for o in 0..ch {
                for i in 0..hh {
                    for j in 0..ww {
                        let mut s = b.data()[o];
                        for c in 0..cx + ch {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let (y, x) = (i as isize + ky as isize - 1, j as isize + kx as isize - 1);
                                    if y < 0 || x < 0 || y >= hh as isize || x >= ww as isize {
                                        continue;
                                    }
                                    s += w.data()[((o * (cx + ch) + c) * 3 + ky) * 3 + kx] * input(c, y, x);
                                }
                            }
                        }
                        out[(o * hh + i) * ww + j] = s;
                    }
                }
            }
            out
        };
        let hv = |c: usize, y: isize, x: isize| h0.data()[(c * hh + y as usize) * ww + x as usize];
        let xv = |c: usize, y: isize, x: isize| x0.data()[(c * hh + y as usize) * ww + x as usize];
        let cat = |c: usize, y: isize, x: isize| if c < cx { xv(c, y, x) } else { hv(c - cx, y, x) };
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let z: Vec<f64> = conv(&ws[0], &bs[0], &cat).into_iter().map(sig).collect();
        let r: Vec<f64> = conv(&ws[1], &bs[1], &cat).into_iter().map(sig).collect();
        let cat_r = |c: usize, y: isize, x: isize| {
            if c < cx {
                xv(c, y, x)
            } else {
                let k = c - cx;
                r[(k * hh + y as usize) * ww + x as usize] * hv(k, y, x)
            }
        };
        let n: Vec<f64> = conv(&ws[2], &bs[2], &cat_r).into_iter().map(f64::tanh).collect();
        let expect: Vec<f64> = (0..ch * hh * ww).map(|i| (1.0 - z[i]) * n[i] + z[i] * h0.data()[i]).collect();

        let mut tape = Tape::<f64>::new();
        let p = params(
            &mut tape,
            [ws[0].clone(), bs[0].clone(), ws[1].clone(), bs[1].clone(), ws[2].clone(), bs[2].clone()],
        );
        let h = tape.constant(h0.clone());
        let x = tape.constant(x0.clone());
        let out = conv_gru_step(&mut tape, h, x, &p).unwrap();
        for (a, b) in tape.value(out).data().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-6);
            assert!(a.abs() < 1.0);
        }
    }
}
