//! Compares one reverse-mode gradient of a two-layer perceptron with a
//! central difference, then fits `y = sin(3x)` with Adam.
//!
//! ```text
//! cargo run --release --example autograd -- [steps]
//! ```

use transct::tensor::{leaky_relu, linear, mean, mul, no_grad, sub, xavier_init, AdamConfig, AdamState, ParamSet, Tensor};

fn loss(p: &ParamSet<f64>, x: &Tensor<f64>, y: &Tensor<f64>) -> transct::Result<Tensor<f64>> {
    let h = leaky_relu(&linear(x, p.get("fc1.w")?, p.get("fc1.b")?)?, 0.1);
    let out = linear(&h, p.get("fc2.w")?, p.get("fc2.b")?)?;
    let d = sub(&out, y)?;
    Ok(mean(&mul(&d, &d)?))
}

fn main() -> transct::Result<()> {
    let steps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(500);
    let n = 64;
    let xs: Vec<f64> = (0..n).map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64).collect();
    let x = Tensor::new(&[n, 1], xs.clone())?;
    let y = Tensor::new(&[n, 1], xs.iter().map(|v| (3.0 * v).sin()).collect())?;

    let mut p = ParamSet::new();
    p.insert("fc1.w", xavier_init(&[1, 32], 0)?)?;
    p.insert("fc1.b", Tensor::leaf(&[32], vec![0.0; 32], true)?)?;
    p.insert("fc2.w", xavier_init(&[32, 1], 1)?)?;
    p.insert("fc2.b", Tensor::leaf(&[1], vec![0.0], true)?)?;
    p.zero_grad();
    loss(&p, &x, &y)?.backward()?;
    let analytic = p.get("fc1.w")?.grad().unwrap()[3];
    let h = 1e-6;
    let w = p.get("fc1.w")?.clone();
    let mut at = |delta: f64| -> transct::Result<f64> {
        let mut d = w.to_vec();
        d[3] += delta;
        p.set("fc1.w", Tensor::new(w.shape(), d)?)?;
        Ok(loss(&p, &x, &y)?.item())
    };
    let numeric = {
        let _g = no_grad();
        (at(h)? - at(-h)?) / (2.0 * h)
    };
    p.set("fc1.w", w)?;
    println!("d loss / d fc1.w[3]: reverse {analytic:.9}  central {numeric:.9}");

    let mut adam = AdamState::new(AdamConfig::default());
    for step in 0..=steps {
        p.zero_grad();
        let l = loss(&p, &x, &y)?;
        if step % (steps / 5).max(1) == 0 {
            println!("step {step:5}  mse {:.6}", l.item());
        }
        if step < steps {
            l.backward()?;
            adam.step(&mut p, 1e-2)?;
        }
    }
    Ok(())
}
