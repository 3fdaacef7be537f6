//! Render every head's bias for the default model as PGM heatmaps.
//!
//! ```text
//! cargo run --example bias_heatmap -- out/bias
//! ```

use std::path::PathBuf;

use penguin::bias::DumpFormat;
use penguin::model::PenguinConfig;

fn main() -> penguin::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "bias-heatmaps".into()));
    let config = PenguinConfig::default();
    let stack = config.bias_stack()?;
    for head in stack.heads() {
        println!(
            "head {:>2}  group {}  {:<14} slope {:.4}  min {:.2}",
            head.head,
            head.group + 1,
            head.kind.to_string(),
            head.slope,
            head.matrix.min()
        );
    }
    let files = stack.dump(&dir, DumpFormat::Pgm)?;
    println!("{} heatmaps in {}", files.len(), dir.display());
    Ok(())
}
