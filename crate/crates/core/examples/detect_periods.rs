//! Detect candidate periods of a synthetic two-tone series with the ACF.

use penguin::data::{detect_periods_acf, synth_series, Component, SynthSpec};

fn main() -> penguin::Result<()> {
    let spec = SynthSpec {
        length: 4000,
        channels: 1,
        components: vec![Component::new(24.0, 1.0), Component::new(56.0, 1.0)],
        trend: 0.0,
        noise: 0.3,
        seed: 7,
    };
    let series = synth_series(&spec)?.column(0);
    let report = detect_periods_acf(&series, 200, 8)?;
    println!("lag  r");
    for peak in &report.peaks {
        println!("{:>3}  {:.3}", peak.lag, peak.r);
    }
    Ok(())
}
