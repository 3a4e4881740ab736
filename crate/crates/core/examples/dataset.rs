//! Generate a small seeded dataset, split it, save it, and compute the
//! normalization the network will use.

use formnet::data::{compute_norm_stats, generate_dataset, load_dataset, save_dataset, split_dataset, SamplingParams};
use formnet::{Design, ForwardConfig};

fn main() -> formnet::Result<()> {
    let cfg = ForwardConfig::for_design(Design::Freeform, 64);
    let ds = generate_dataset(&cfg, 200, 42, &SamplingParams::default())?;
    let (train, test) = split_dataset(&ds, 0.1, 43)?;
    println!("{} samples -> {} train / {} test, digest {}", ds.len(), train.len(), test.len(), &ds.digest()[..16]);

    let norm = compute_norm_stats(&train)?;
    for (k, c) in norm.inputs.iter().enumerate() {
        println!("input channel {k}: mean {:.2} nm, std {:.2} nm", c.mean, c.std);
    }
    println!("target: mean {:.2} nm, std {:.2} nm", norm.target.mean, norm.target.std);

    let dir = tempfile::tempdir()?;
    save_dataset(&train, dir.path())?;
    let back = load_dataset(dir.path())?;
    println!("reloaded: digest matches = {}", back.digest() == train.digest());
    Ok(())
}
