//! Regenerates the shipped `fixtures/` directory.

use std::path::PathBuf;

fn main() -> anyhow::Result<()> {
    let dir = std::env::args_os()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("fixtures"));
    folio_cli::fixtures::generate(&dir)?;
    println!("wrote fixtures to {}", dir.display());
    Ok(())
}
