//! Writes the bundled grippers, clouds and sample configs.
//!
//! `cargo run -p kigrasp --example make_fixtures -- fixtures`

use std::path::PathBuf;

const RUN_JAW: &str = r#"object = "sphere.ply"
gripper = "parallel_jaw.json"
output = "out/jaw_sphere"
"#;

const RUN_CLAW: &str = r#"object = "sphere.ply"
gripper = "claw.json"
output = "out/claw_sphere"
"#;

const BENCH: &str = r#"object = "sphere.ply"
gripper = "parallel_jaw.json"
densities = [1, 2, 4, 8, 16]
output = "out/fgt_bench.csv"
"#;

fn main() -> kigrasp::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "fixtures".into()));
    kigrasp::fixtures::write_all(&dir)?;
    for (name, text) in [("run.toml", RUN_JAW), ("run_claw.toml", RUN_CLAW), ("bench.toml", BENCH)] {
        kigrasp::io::write_text(&dir.join(name), text)?;
    }
    println!("wrote fixtures to {}", dir.display());
    Ok(())
}
