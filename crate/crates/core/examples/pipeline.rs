//! The command-line pipeline driven from code: parse a `key = value` config,
//! then gen-data, train, eval and predict into one output directory.

use lmvp::cli::{cmd_eval, cmd_gen_data, cmd_predict, cmd_train, parse_config};

const CONFIG: &str = "
# tiny run
videos = 8
test_videos = 4
T = 7
T0 = 4
H = 16
W = 16
sprite_size = 4
c = 2
K = 3
base_channels = 4
feature_channels = 8
guider_hidden = 8
batch_size = 4
pretrain_iters = 4
main_iters = 4
eval_interval = 4
n_show = 2
";

fn main() -> lmvp::Result<()> {
    let cfg = parse_config(CONFIG)?;
    let out = std::env::temp_dir().join("lmvp-example-run");
    cmd_gen_data(&cfg, &out)?;
    let summary = cmd_train(&cfg, &out)?;
    println!("{summary:?}");
    let table = cmd_eval(&cfg, &out)?;
    print!("{}", table.to_csv());
    for p in cmd_predict(&cfg, &out)? {
        println!("wrote {}", p.display());
    }
    Ok(())
}
