//! Regenerates the synthetic CSV fixtures under `fixtures/`.
//!
//! cargo run -p elspin-core --example make_fixtures -- <fixtures dir>

use std::fs::File;

use elspin_core::dataset::write_records;
use elspin_core::synth;

fn main() -> elspin_core::Result<()> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "fixtures".into());
    for (name, n, seed) in [("synthetic.csv", 2000, 7), ("frozen_500.csv", 500, 2024)] {
        let ds = synth::generate(n, 0.05, seed)?;
        write_records(File::create(format!("{dir}/{name}"))?, ds.records(), b',')?;
        println!("{name}: {} rows, fingerprint {}", ds.len(), ds.fingerprint());
    }
    Ok(())
}
