//! Fits the synthetic fixture from its reset starting point and reports PSNR
//! on the held-out view.
//!
//! cargo run --release -p skinsplat --example synthetic_fit -- [iterations] [fit.json]

use std::time::Instant;

use skinsplat::fit::{optimize_with, FitConfig};
use skinsplat::fixtures::fit_fixture;

fn main() {
    let fx = fit_fixture().unwrap();
    let base: FitConfig = match std::env::args().nth(2) {
        Some(path) => skinsplat::io::read_json(path).unwrap(),
        None => FitConfig::default(),
    };
    let iterations = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(base.iterations);
    let config = FitConfig { iterations, ..base };
    let held = fx.held_out();
    println!("human texels: {}", fx.initial.human.len());
    let start = Instant::now();
    let result = optimize_with(fx.initial.clone(), fx.training(), &config, |it, loss, b| {
        if it % 250 == 0 {
            let img = b.render(&fx.pose, &held.camera).unwrap();
            println!(
                "{it:5} loss {:.5} l1 {:.4} ssim {:.4} held-out psnr {:.2} ({:.1}s)",
                loss.total,
                loss.l1,
                loss.ssim,
                img.psnr(&held.image),
                start.elapsed().as_secs_f64()
            );
        }
        Ok(())
    })
    .unwrap();
    let img = result.bundle.render(&fx.pose, &held.camera).unwrap();
    println!(
        "initial {:.5} final {:.5} ratio {:.4} held-out psnr {:.2} in {:.1}s",
        result.initial_loss,
        result.final_loss,
        result.final_loss / result.initial_loss,
        img.psnr(&held.image),
        start.elapsed().as_secs_f64()
    );
}
