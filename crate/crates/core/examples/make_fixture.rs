//! Regenerates the shipped fixture files: `cargo run --example make_fixture [dir]`.

use gridmix::fixture::{shipped_dir, Fixture, FixtureConfig};

fn main() -> std::io::Result<()> {
    let dir = std::env::args().nth(1).map(Into::into).unwrap_or_else(shipped_dir);
    Fixture::generate(FixtureConfig::default()).write_to(&dir)?;
    println!("wrote fixture to {}", dir.display());
    Ok(())
}
