// Saturated round robin against the analytical vertex, plus a randomized
// mixture hitting an interior point.

use std::error::Error;

use qrrnum::capacity::{eta_vector, ActivationVector};
use qrrnum::channel::ChannelModel;
use qrrnum::policy::PolicyRandRR;
use qrrnum::sim::{run_fixed_policy, RunConfig};
use qrrnum::utility::UtilityFunction;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let models = vec![ChannelModel::new(0.2, 0.2)?, ChannelModel::new(0.1, 0.3)?];
    let config = RunConfig::new(models.clone(), UtilityFunction::sum_log1p(2), 1.0, 7).with_horizon(300_000);

    for bits in [[true, false], [false, true], [true, true]] {
        let phi = ActivationVector::from_bits(&bits)?;
        let m = run_fixed_policy(&config, &PolicyRandRR::pure(phi)?, &[1.0, 1.0])?;
        let eta = eta_vector(&models, &phi)?;
        println!(
            "RR({}): simulated {:.4?}, analytical {:.4?}",
            phi.to_bit_string(),
            m.mean_delivered,
            eta.0
        );
    }

    // Half the frames on each singleton, admitting below capacity.
    let mix = PolicyRandRR::new(
        2,
        vec![
            (ActivationVector::from_bits(&[true, false])?, 0.5),
            (ActivationVector::from_bits(&[false, true])?, 0.5),
        ],
    )?;
    let m = run_fixed_policy(&config, &mix, &[0.15, 0.08])?;
    println!("mixture: delivered {:.4?}, mean backlog {:.2}", m.mean_delivered, m.mean_backlog);
    Ok(())
}

fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
