// Maximizing a utility over the inner region with Frank-Wolfe.

use std::error::Error;

use qrrnum::capacity::{solve_offline_optimum, InnerRegion};
use qrrnum::channel::ChannelModel;
use qrrnum::utility::{BuiltinUtility, UtilityFunction};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let models = vec![
        ChannelModel::new(0.2, 0.2)?,
        ChannelModel::new(0.05, 0.15)?,
        ChannelModel::new(0.3, 0.1)?,
    ];
    let region = InnerRegion::exhaustive(&models, 16)?;

    let fair = solve_offline_optimum(&region, &UtilityFunction::sum_log1p(3))?;
    println!("log1p: y* = {:.4?}, g* = {:.6} ({} iterations, gap {:.1e})", fair.point, fair.value, fair.iterations, fair.gap);

    let linear = solve_offline_optimum(&region, &UtilityFunction::builtin(BuiltinUtility::Linear, &[1.0, 1.0, 3.0])?)?;
    println!("weighted sum: y* = {:.4?}, g* = {:.6}", linear.point, linear.value);

    let pairs = InnerRegion::pairs_only(&models)?;
    let restricted = solve_offline_optimum(&pairs, &UtilityFunction::sum_log1p(3))?;
    println!("pairs only: g* = {:.6}", restricted.value);
    Ok(())
}

fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
