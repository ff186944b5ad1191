//! Generates a few bouncing-sprite videos, round-trips them through the
//! container format and prints the first video as ASCII art.

use lmvp::data::{generate_bouncing, read_videoset, write_videoset, DataConfig, SpriteKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = DataConfig {
        videos: 4,
        frames: 6,
        height: 16,
        width: 16,
        context: 3,
        sprite: SpriteKind::Cross,
        sprite_size: 5,
        ..DataConfig::default()
    };
    let set = generate_bouncing(&cfg)?;
    let path = std::env::temp_dir().join("lmvp-example.lmvpvid");
    write_videoset(&path, &set)?;
    assert_eq!(read_videoset(&path)?, set);
    println!("{} videos, shape {:?}, stored at {}", set.len(), set.tensor().shape(), path.display());

    let (frames, h, w, _) = set.frame_dims();
    for t in 0..frames {
        println!("t = {t}");
        let frame = set.frame_chw(0, t);
        for row in frame.chunks(w).take(h) {
            println!("  {}", row.iter().map(|&v| if v > 0.5 { '#' } else { '.' }).collect::<String>());
        }
    }
    Ok(())
}
