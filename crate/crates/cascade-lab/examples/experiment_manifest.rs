//! Run one experiment end to end through the library runner and inspect
//! the sealed manifest: every output file is hashed, seeds are recorded,
//! and an identical rerun reproduces the same summary hash bit for bit.

use cascade_lab::config::{ExperimentConfig, RunManifest, SpdeRunConfig};
use cascade_lab::runner::{run_spde, RunContext};

fn main() {
    let mut config = ExperimentConfig::default();
    config.master_seed = 7;
    config.spde_run = Some(SpdeRunConfig {
        trajectories: 8,
        t_end: 0.02,
        ..SpdeRunConfig::default()
    });

    let dir = std::env::temp_dir().join("cascade-lab-example-manifest");
    std::fs::remove_dir_all(&dir).ok();
    let ctx = RunContext::new(config, Some(dir.clone()), None);

    let first = run_spde(&ctx).unwrap();
    let manifest = RunManifest::load(&first.manifest_path).unwrap();
    println!("\nmanifest {}:", first.manifest_path.display());
    println!("  subcommand     {}", manifest.subcommand);
    println!("  config hash    {}", &manifest.config_hash[..16]);
    println!("  code revision  {}", manifest.code_revision);
    println!("  seeds          {:?}", manifest.trajectory_seeds);
    for output in &manifest.outputs {
        println!("  output         {} ({} bytes, sha256 {})", output.path, output.bytes, &output.sha256[..16]);
    }
    println!("  summary hash   {}", manifest.summary_hash);

    let second = run_spde(&ctx).unwrap();
    println!(
        "\nrerun with the same config and seed: summary hashes match = {}",
        first.summary_hash == second.summary_hash
    );
    std::fs::remove_dir_all(&dir).ok();
}
