use std::time::Instant;

use mcdnn_core::{NetDescriptor, Network, Rng, Tensor};

fn main() {
    let desc = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "1x29x29-20C4-MP2-40C5-MP3-150N-10N".to_string());
    let d = NetDescriptor::parse(&desc).expect("descriptor");
    let (m, h, w) = d.input_shape();
    let mut net = Network::new(d);
    let mut rng = Rng::new(1);
    net.init_weights(&mut rng);
    let mut x = Tensor::zeros(&[m, h, w]).unwrap();
    x.fill_uniform(&mut rng, -1.0, 1.0).unwrap();
    let n = 500;
    let t = Instant::now();
    for i in 0..n {
        net.train_step(&x, i % net.class_count(), 0.001).unwrap();
    }
    let per = t.elapsed().as_secs_f64() / n as f64;
    println!("{desc}: {:.3} ms per online step", per * 1e3);
}
