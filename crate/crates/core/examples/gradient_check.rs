//! Backpropagation against central finite differences on random networks.
//!
//! cargo run --release --example gradient_check

use adaptive_decoding::net::{Mlp, Mode};
use adaptive_decoding::rng::Streams;
use rand::Rng;

fn main() -> adaptive_decoding::Result<()> {
    let streams = Streams::new(2024);
    let mut worst = 0.0f64;
    for trial in 0..20u64 {
        let mut rng = streams.stream("net", &[trial]);
        let depth = rng.gen_range(2..5);
        let dims: Vec<usize> = (0..depth).map(|_| rng.gen_range(1..7)).collect();
        let mut net = Mlp::new(&dims, 0.0, &mut rng)?;
        let x: Vec<f64> = (0..dims[0]).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..dims[depth - 1]).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let loss = |net: &Mlp| -> adaptive_decoding::Result<f64> {
            Ok(net.predict(&x)?.iter().zip(&w).map(|(o, w)| o * w).sum())
        };
        let (_, cache) = net.forward(&x, Mode::Eval, &mut rng)?;
        let (grad, _) = net.backward(&cache, &w)?;
        for (i, &g) in grad.iter().enumerate() {
            let h = 1e-6;
            let orig = net.params()[i];
            net.params_mut()[i] = orig + h;
            let up = loss(&net)?;
            net.params_mut()[i] = orig - h;
            let dn = loss(&net)?;
            net.params_mut()[i] = orig;
            let fd = (up - dn) / (2.0 * h);
            let rel = (fd - g).abs() / fd.abs().max(g.abs()).max(1e-8);
            worst = worst.max(rel);
        }
        println!("dims {dims:?}: {} params checked", net.num_params());
    }
    println!("worst relative error {worst:.2e}");
    Ok(())
}
