//! Check backpropagated gradients against central differences, then show
//! that a slightly wrong gradient is caught.

use penguin::gradcheck::{gradcheck, GradcheckOptions};
use penguin::model::PenguinConfig;

fn main() -> penguin::Result<()> {
    let config = PenguinConfig::tiny();
    let report = gradcheck(&config, &GradcheckOptions::default())?;
    println!("{report}\n");

    let block = "layers.0.ffn.w1";
    let tampered = GradcheckOptions {
        corrupt: Some((block.into(), 1.01)),
        ..Default::default()
    };
    let report = gradcheck(&config, &tampered)?;
    let worst = report.worst().expect("blocks");
    println!("with a 1% error in {block}: worst block {} at {:.2e}", worst.name, worst.max_rel_error);
    Ok(())
}
