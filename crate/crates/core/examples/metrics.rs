//! Scores a shifted and a blurred frame against the truth with BCE, MSE,
//! PSNR and SSIM.

use lmvp::metrics::{FrameDims, MetricRow};

fn square(size: usize, x0: usize, y0: usize) -> Vec<f32> {
    let mut f = vec![0.0; size * size];
    for y in y0..y0 + 6 {
        for x in x0..x0 + 6 {
            f[y * size + x] = 1.0;
        }
    }
    f
}

fn main() -> lmvp::Result<()> {
    let n = 24;
    let dims = FrameDims { channels: 1, height: n, width: n };
    let truth = square(n, 9, 9);
    let shifted = square(n, 11, 9);
    let grey = vec![truth.iter().sum::<f32>() / (n * n) as f32; n * n];

    println!("{:>8} {:>8} {:>8} {:>8} {:>8}", "pred", "bce", "mse", "psnr", "ssim");
    for (name, pred) in [("exact", &truth), ("shifted", &shifted), ("mean", &grey)] {
        let r = MetricRow::of_frame(&truth, pred, dims)?;
        println!("{name:>8} {:8.4} {:8.4} {:8.2} {:8.4}", r.bce, r.mse, r.psnr, r.ssim);
    }
    Ok(())
}
