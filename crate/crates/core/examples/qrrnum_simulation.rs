// One QRRNUM run on the two-user benchmark, compared with the offline
// optimum and checked for stability.

use std::error::Error;

use qrrnum::capacity::{b_constant, solve_offline_optimum, InnerRegion};
use qrrnum::channel::ChannelModel;
use qrrnum::sim::{run_qrrnum, stability_diagnostic, RunConfig, DEFAULT_SLOPE_THRESHOLD};
use qrrnum::utility::UtilityFunction;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let models = vec![ChannelModel::new(0.2, 0.2)?; 2];
    let utility = UtilityFunction::sum_log1p(2);
    let v_g = 50.0;

    let mut config = RunConfig::new(models.clone(), utility.clone(), v_g, 1).with_horizon(400_000);
    config.record_frames = true;
    let m = run_qrrnum(&config)?;

    let optimum = solve_offline_optimum(&InnerRegion::exhaustive(&models, 16)?, &utility)?;
    let b = b_constant(&models)?;
    println!("delivered {:.4?}, admitted {:.4?}", m.mean_delivered, m.mean_admitted);
    println!("g(y) = {:.6}, g* = {:.6}, g* - B/V = {:.6}", m.utility, optimum.value, optimum.value - b / v_g);
    println!("{} frames ({} idle), ledger residual {:.1e}", m.frames, m.idle_frames, m.max_ledger_residual);

    let report = stability_diagnostic(&m, DEFAULT_SLOPE_THRESHOLD);
    println!("mean backlog {:.2}, slope {:?}: {:?}", m.mean_backlog, report.slope, report.verdict);

    for f in m.frame_log.iter().take(5) {
        println!("t = {:>3}  T = {}  phi = {:?}  Q = {:.2?}", f.start, f.length, f.phi.map(|p| p.to_bit_string()), f.backlog);
    }
    Ok(())
}

fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
