// The inner throughput region of two symmetric channels: vertices,
// membership queries and a boundary fan.

use std::error::Error;

use qrrnum::capacity::{region_summary, InnerRegion, DEFAULT_ENUMERATION_CAP};
use qrrnum::channel::ChannelModel;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let models = vec![ChannelModel::new(0.2, 0.2)?; 2];
    let region = InnerRegion::exhaustive(&models, DEFAULT_ENUMERATION_CAP)?;

    for v in region.vertices() {
        println!("phi = {}  eta = {:.6?}", v.phi.to_bit_string(), v.eta.0);
    }

    for lambda in [[0.2, 0.2], [0.4, 0.1], [0.3, 0.3], [0.32, 0.32]] {
        let m = region.membership(&lambda)?;
        println!("{lambda:?}: {} (slack {:+.4})", m.label(), m.slack());
    }

    for i in 0..=6 {
        let theta = std::f64::consts::FRAC_PI_2 * i as f64 / 6.0;
        let point = region.boundary_probe(&[theta.cos(), theta.sin()])?;
        println!("ray {i}: boundary at {point:.4?}");
    }

    let s = region_summary(&models, &region)?;
    println!("E[T] = {:.4}, E[T^2] = {:.4}, B = {:.4}", s.mean_round_length, s.round_length_second_moment, s.b_constant);
    Ok(())
}

fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
