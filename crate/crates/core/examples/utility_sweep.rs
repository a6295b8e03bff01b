// The utility/backlog tradeoff as V_g grows.

use std::error::Error;

use rayon::prelude::*;

use qrrnum::capacity::{b_constant, solve_offline_optimum, InnerRegion};
use qrrnum::channel::ChannelModel;
use qrrnum::sim::{run_qrrnum, RunConfig};
use qrrnum::utility::UtilityFunction;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let models = vec![ChannelModel::new(0.2, 0.2)?; 2];
    let utility = UtilityFunction::sum_log1p(2);
    let g_star = solve_offline_optimum(&InnerRegion::exhaustive(&models, 16)?, &utility)?.value;
    let b = b_constant(&models)?;

    let v_values = [5.0, 10.0, 50.0, 250.0];
    let runs = v_values
        .par_iter()
        .map(|&v| run_qrrnum(&RunConfig::new(models.clone(), utility.clone(), v, 3).with_horizon(300_000)))
        .collect::<Result<Vec<_>, _>>()?;

    println!("{:>6} {:>10} {:>12} {:>12}", "V_g", "g(y)", "g* - B/V", "backlog");
    for (v, m) in v_values.iter().zip(&runs) {
        println!("{v:>6} {:>10.6} {:>12.6} {:>12.2}", m.utility, g_star - b / v, m.mean_backlog);
    }
    Ok(())
}

fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
