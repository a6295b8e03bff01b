// How the controller's belief about one channel evolves between
// observations.

use std::error::Error;

use qrrnum::channel::{BeliefState, ChannelModel, ChannelState};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let model = ChannelModel::new(0.1, 0.3)?;
    println!("stationary P(ON) = {:.4}", model.pi_on());

    let mut belief = BeliefState::new(1);
    println!("unobserved: omega = {:.4}", belief.omega(0, &model));

    belief.advance(Some((0, ChannelState::On)))?;
    for k in 1..=8 {
        println!("{k} slots after seeing ON: omega = {:.6}", belief.omega(0, &model));
        belief.advance(None)?;
    }

    belief.advance(Some((0, ChannelState::Off)))?;
    for k in 1..=8 {
        println!("{k} slots after seeing OFF: omega = {:.6}", belief.omega(0, &model));
        belief.advance(None)?;
    }

    println!("P11^(3) = {:.6}, P01^(3) = {:.6}", model.p11_k(3)?, model.p01_k(3)?);
    Ok(())
}

fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
