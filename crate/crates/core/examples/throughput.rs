use std::time::Instant;

use uhdn::net::{build, NetworkConfig};
use uhdn::training::{loss_and_gradients, TrainConfig};
use uhdn::Tensor;

fn main() {
    let base: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(64);
    let net = NetworkConfig {
        base_channels: base,
        ..Default::default()
    };
    let params = build::<f32>(&net).unwrap();
    let x = Tensor::from_fn([1, 3, 64, 96], |_, c, y, x| ((c + y * x) % 13) as f32 / 13.0);
    let m = Tensor::from_fn([1, 1, 64, 96], |_, _, y, x| (y == x / 2) as u8 as f32);
    let t = Instant::now();
    let fwd = uhdn::net::forward(&params, &net, &x).unwrap();
    println!("forward {:?} {:?}", t.elapsed(), fwd.fused.shape());
    let t = Instant::now();
    let (l, _) = loss_and_gradients(&params, &net, &TrainConfig::default(), &x, &m).unwrap();
    println!("forward+backward {:?} loss {l}", t.elapsed());
}
