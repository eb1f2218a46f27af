use mcdnn_core::{NetDescriptor, Network, Rng, Tensor};

const H: f64 = 1e-5;

fn rel(a: f64, n: f64) -> f64 {
    (a - n).abs() / (1e-8f64).max(a.abs() + n.abs())
}

fn random_input(rng: &mut Rng) -> Tensor {
    let mut x = Tensor::zeros(&[1, 8, 8]).unwrap();
    x.fill_uniform(rng, -1.0, 1.0).unwrap();
    x
}

#[test]
fn every_parameter_and_pixel_matches_central_differences() {
    let d = NetDescriptor::parse("1x8x8-3C3-MP2-4C2-MP2-5N-3N").unwrap();
    let mut net = Network::new(d);
    let mut rng = Rng::new(2024);
    // larger weights than the default init so every layer carries signal
    let params: Vec<f64> = (0..net.param_count()).map(|_| rng.symmetric(0.5)).collect();
    net.set_params(&params).unwrap();

    let mut worst = 0.0f64;
    for sample in 0..5 {
        let x = random_input(&mut rng);
        let label = sample % 3;
        let pass = net.forward_train(&x).unwrap();
        let bp = net.backward(&pass, label, true).unwrap();
        let analytic = bp.grads.flatten();

        let mut probe = net.clone();
        for (i, &a) in analytic.iter().enumerate() {
            let mut p = params.clone();
            p[i] = params[i] + H;
            probe.set_params(&p).unwrap();
            let up = probe.loss(&x, label).unwrap();
            p[i] = params[i] - H;
            probe.set_params(&p).unwrap();
            let down = probe.loss(&x, label).unwrap();
            worst = worst.max(rel(a, (up - down) / (2.0 * H)));
        }

        let gx = bp.input_grad.expect("input gradient requested");
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += H;
            let up = net.loss(&xp, label).unwrap();
            xp.data_mut()[i] -= 2.0 * H;
            let down = net.loss(&xp, label).unwrap();
            worst = worst.max(rel(gx.data()[i], (up - down) / (2.0 * H)));
        }
    }
    assert!(worst < 1e-4, "max relative error {worst}");
}
