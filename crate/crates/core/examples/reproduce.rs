//! The whole experiment in one call: data, training, test report,
//! calibration, and the perfect / disturbed / calibrated comparison.
//!
//! `cargo run --release --example reproduce -- <out_dir> [samples] [epochs]`
//!
//! Without extra arguments this runs the desk-scale configuration, which
//! takes tens of minutes on one core.

use formnet::cli::{read_hybrid_table, run_reproduce, Cli, Command};
use clap::Parser;

fn main() -> formnet::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| "reproduce-out".into());
    let mut flags = vec!["formnet".to_string(), "reproduce".into(), "--seed".into(), "42".into(), "--out".into(), out.clone()];
    if let Some(n) = args.next() {
        flags.extend(["--num-samples".into(), n]);
    }
    if let Some(e) = args.next() {
        flags.extend(["--epochs".into(), e]);
    }
    let Command::Reproduce(a) = Cli::parse_from(&flags).command else {
        unreachable!()
    };
    let manifest = run_reproduce(&a, &flags)?;
    println!("{} artifacts written to {out}", manifest.artifacts.len());
    let table = read_hybrid_table(&std::path::Path::new(&out).join("hybrid/table.json"))?;
    print!("{}", table.table());
    Ok(())
}
