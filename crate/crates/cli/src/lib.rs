//! Command implementations and the pose-editing HTTP service behind the
//! `skinsplat` binary.

pub mod args;
pub mod commands;
pub mod documents;
pub mod server;

/// Caps the global rayon pool at `SKINSPLAT_THREADS` when set.
pub fn configure_threads() -> anyhow::Result<()> {
    let Ok(value) = std::env::var("SKINSPLAT_THREADS") else { return Ok(()) };
    let n: usize = value
        .trim()
        .parse()
        .map_err(|_| anyhow::anyhow!("SKINSPLAT_THREADS must be a positive integer, got `{value}`"))?;
    anyhow::ensure!(n > 0, "SKINSPLAT_THREADS must be at least 1");
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}
