//! Prints every intermediate shape of one forward pass, plus the parameter
//! count of each variant.
//!
//! ```text
//! cargo run --release --example model_shapes -- [size] [width]
//! ```

use std::time::Instant;

use transct::model::{ModelConfig, TransCt, Variant};
use transct::tensor::Tensor;

fn main() -> transct::Result<()> {
    let mut args = std::env::args().skip(1);
    let size: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(512);
    let width: f64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let cfg = ModelConfig { width, ..ModelConfig::default() };

    let model = TransCt::<f32>::new(cfg.clone(), Variant::Full, 0)?;
    let x = Tensor::full(&[1, 1, size, size], 1.0);
    let start = Instant::now();
    let (_, trace) = {
        let _g = transct::tensor::no_grad();
        model.forward_traced(&x)?
    };
    println!("{size}x{size} input, width {width}, forward {:.2?}", start.elapsed());
    for (name, shape) in &trace.shapes {
        println!("  {name:<8} {shape:?}");
    }
    println!("  decoder memory reads: {}", trace.memory_reads);

    for v in Variant::ALL {
        let m = TransCt::<f32>::new(cfg.clone(), v, 0)?;
        println!("{v:<15} {:>10} parameters", m.num_parameters());
    }
    Ok(())
}
