//! Per-pixel adaptive filtering: softmax-normalized filters move a sprite one
//! pixel to the right, and outputs never leave the neighbourhood's range.

use lmvp::numerics::{Tape, Tensor};

fn main() -> lmvp::Result<()> {
    let (h, w, k) = (8, 8, 3);
    let mut frame = vec![0.0f32; h * w];
    for y in 2..5 {
        for x in 2..5 {
            frame[y * w + x] = 1.0;
        }
    }

    // Tap (row 1, column 0) reads the left neighbour.
    let mut logits = vec![0.0f32; k * k * h * w];
    let left = k;
    logits[left * h * w..(left + 1) * h * w].fill(12.0);

    let mut tape = Tape::<f32>::new();
    let x = tape.constant(Tensor::new(vec![1, 1, h, w], frame.clone())?);
    let l = tape.constant(Tensor::new(vec![1, k * k, h, w], logits)?);
    let filters = tape.softmax_sites(l)?;
    let out = tape.dynamic_filter(x, filters)?;

    let show = |data: &[f32]| {
        for row in data.chunks(w) {
            println!("  {}", row.iter().map(|v| format!("{v:4.2}")).collect::<Vec<_>>().join(" "));
        }
    };
    println!("input");
    show(&frame);
    println!("filtered");
    show(tape.value(out).data());
    let range = tape.value(out).data().iter().fold((f32::MAX, f32::MIN), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    println!("output range [{}, {}]", range.0, range.1);
    Ok(())
}
