// Single-frame decisions of the controller: admission and subset choice.

use std::error::Error;

use qrrnum::capacity::ActivationVector;
use qrrnum::channel::ChannelModel;
use qrrnum::controller::{ratio_metric, select_phi, solve_admission, Controller, SelectionMode};
use qrrnum::utility::UtilityFunction;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let models = vec![ChannelModel::new(0.2, 0.2)?; 2];
    let g = UtilityFunction::sum_log1p(2);

    let a = solve_admission(&[5.0, 8.0], &g, 10.0)?;
    println!("admission at Q = (5, 8), V = 10: r = {:?}, h* = {:.4}", a.rates, a.h_star);

    let q = [10.0, 1.0];
    for bits in [[true, false], [false, true], [true, true]] {
        let phi = ActivationVector::from_bits(&bits)?;
        println!("ratio of {} at Q = {q:?}: {:.4}", phi.to_bit_string(), ratio_metric(&q, &models, &phi)?);
    }

    for mode in [SelectionMode::Exhaustive, SelectionMode::SymmetricFast] {
        let d = select_phi(&[10.0, 10.0], &models, mode, 16)?;
        println!("{}: pick {:?} (value {:.4})", mode.as_str(), d.phi.map(|p| p.to_bit_string()), d.value);
    }

    let controller = Controller::new(&models, g, 50.0, SelectionMode::Exhaustive, 16)?;
    let frame = controller.frame(&[0.0, 0.0])?;
    println!("empty queues: admit {:?}, idle = {}", frame.admission.rates, frame.selection.phi.is_none());
    Ok(())
}

fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
