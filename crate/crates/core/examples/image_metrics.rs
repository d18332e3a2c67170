//! Scores noisier and noisier copies of a simulated normal-dose slice with
//! RMSE, SSIM and VIF.
//!
//! ```text
//! cargo run --release --example image_metrics -- [size]
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use transct::ct_sim::{simulate_pair, CtImage, SimConfig};
use transct::metrics::{evaluate_pairs, ImageMetrics};
use transct::tensor::Tensor;

fn main() -> transct::Result<()> {
    let size: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(128);
    let sim = simulate_pair(&SimConfig::for_size(size), 3, 0)?;
    let reference = sim.pair.nd;

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut outputs = Vec::new();
    println!("{:>8} {:>10} {:>8} {:>8}", "noise", "rmse HU", "ssim", "vif");
    for sd in [0.0f64, 5.0, 20.0, 80.0] {
        let noise = Normal::new(0.0, sd.max(f64::MIN_POSITIVE)).unwrap();
        let data = reference.data().iter().map(|v| v + noise.sample(&mut rng)).collect();
        let img = CtImage::new(Tensor::new(reference.grid.shape(), data)?, reference.unit, reference.pixel_spacing_mm)?;
        let m = ImageMetrics::compute(&img, &reference)?;
        println!("{sd:8.1} {:10.3} {:8.4} {:8.4}", m.rmse_hu, m.ssim, m.vif);
        outputs.push(img);
    }
    outputs.push(sim.pair.ld);
    let refs = vec![reference; outputs.len()];
    print!("{}", evaluate_pairs(&outputs, &refs)?.to_table("noisy copies + ld"));
    Ok(())
}
