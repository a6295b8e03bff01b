use qrrnum::capacity::{eta_vector, ActivationVector};
use qrrnum::channel::ChannelModel;
use qrrnum::controller::SelectionMode;
use qrrnum::policy::PolicyRandRR;
use qrrnum::sim::{run_fixed_policy, run_qrrnum, stability_diagnostic, RunConfig, Stability, DEFAULT_SLOPE_THRESHOLD};
use qrrnum::utility::UtilityFunction;
use rayon::prelude::*;

fn sym(n: usize) -> Vec<ChannelModel> {
    vec![ChannelModel::new(0.2, 0.2).unwrap(); n]
}

fn config(models: Vec<ChannelModel>, v_g: f64, horizon: u64, seed: u64) -> RunConfig {
    let n = models.len();
    RunConfig::new(models, UtilityFunction::sum_log1p(n), v_g, seed).with_horizon(horizon)
}

#[test]
fn saturated_pair_round_hits_the_vertex() {
    let c = config(sym(2), 1.0, 1_000_000, 21).with_warmup(0);
    let m = run_fixed_policy(&c, &PolicyRandRR::pure(ActivationVector::all(2).unwrap()).unwrap(), &[1.0, 1.0]).unwrap();
    for y in &m.mean_delivered {
        assert!((y - 4.0 / 13.0).abs() < 0.005, "{:?}", m.mean_delivered);
    }
    // Saturated queues never starve, so delivery equals service.
    assert_eq!(m.mean_delivered, m.mean_service);
}

#[test]
fn singleton_mixture_below_its_rate_is_stable() {
    // Equal frame weights on the two singletons give each user half the
    // time at c_1 = 0.5, i.e. 0.25 each; admit strictly less.
    let mix = PolicyRandRR::new(
        2,
        vec![
            (ActivationVector::from_channels(&[0], 2).unwrap(), 0.5),
            (ActivationVector::from_channels(&[1], 2).unwrap(), 0.5),
        ],
    )
    .unwrap();
    let c = config(sym(2), 1.0, 1_000_000, 22);
    let m = run_fixed_policy(&c, &mix, &[0.24, 0.24]).unwrap();
    let report = stability_diagnostic(&m, DEFAULT_SLOPE_THRESHOLD);
    assert_eq!(report.verdict, Stability::Stable, "{report:?}");
    assert!(m.mean_backlog < 500.0);
}

#[test]
fn over_demand_is_unstable() {
    let c = config(sym(2), 1.0, 1_000_000, 23);
    let rr = PolicyRandRR::pure(ActivationVector::all(2).unwrap()).unwrap();
    let m = run_fixed_policy(&c, &rr, &[0.45, 0.45]).unwrap();
    let report = stability_diagnostic(&m, DEFAULT_SLOPE_THRESHOLD);
    assert_eq!(report.verdict, Stability::Unstable);
    // Growth rate is the demand surplus 0.9 - 8/13.
    assert!((report.slope.unwrap() - (0.9 - 8.0 / 13.0)).abs() < 0.01, "{report:?}");
}

#[test]
fn backlog_and_utility_grow_with_vg() {
    let v = [10.0, 50.0, 250.0];
    let seeds = [1u64, 2, 3];
    let runs: Vec<Vec<(f64, f64)>> = seeds
        .par_iter()
        .map(|&seed| {
            v.iter()
                .map(|&vg| {
                    let m = run_qrrnum(&config(sym(2), vg, 300_000, seed)).unwrap();
                    (m.mean_backlog, m.utility)
                })
                .collect()
        })
        .collect();
    for per_seed in &runs {
        assert!(per_seed.windows(2).all(|w| w[0].0 <= w[1].0), "{per_seed:?}");
    }
    // Sign test on utility: each step up in V_g helps in a majority of seeds.
    for i in 0..v.len() - 1 {
        let up = runs.iter().filter(|r| r[i + 1].1 >= r[i].1).count();
        assert!(up >= 2, "V_g {} -> {}: {runs:?}", v[i], v[i + 1]);
    }
}

#[test]
fn ledger_holds_in_every_mode() {
    let hetero = vec![
        ChannelModel::new(0.2, 0.2).unwrap(),
        ChannelModel::new(0.1, 0.3).unwrap(),
        ChannelModel::new(0.3, 0.15).unwrap(),
        ChannelModel::new(0.05, 0.1).unwrap(),
    ];
    let cases = [
        (hetero.clone(), SelectionMode::Exhaustive),
        (hetero, SelectionMode::PairsOnly),
        (sym(5), SelectionMode::SymmetricFast),
    ];
    for (models, mode) in cases {
        let m = run_qrrnum(&config(models, 40.0, 200_000, 8).with_mode(mode)).unwrap();
        assert!(m.max_ledger_residual <= 1e-9, "{mode:?}: {}", m.max_ledger_residual);
        assert_eq!(stability_diagnostic(&m, DEFAULT_SLOPE_THRESHOLD).verdict, Stability::Stable, "{mode:?}");
    }
}

#[test]
fn fast_and_exhaustive_selection_agree_on_symmetric_runs() {
    let mut a = config(sym(4), 30.0, 100_000, 4);
    a.record_frames = true;
    let b = a.clone().with_mode(SelectionMode::SymmetricFast);
    let ma = run_qrrnum(&a).unwrap();
    let mb = run_qrrnum(&b).unwrap();
    assert_eq!(ma.frame_log.len(), mb.frame_log.len());
    for (fa, fb) in ma.frame_log.iter().zip(&mb.frame_log) {
        assert_eq!(fa.phi, fb.phi, "frame at t = {}", fa.start);
    }
    assert_eq!(ma.mean_delivered, mb.mean_delivered);
}

#[test]
fn heterogeneous_vertices_by_simulation() {
    let models = vec![
        ChannelModel::new(0.25, 0.3).unwrap(),
        ChannelModel::new(0.4, 0.2).unwrap(),
        ChannelModel::new(0.3, 0.45).unwrap(),
    ];
    let c = config(models.clone(), 1.0, 1_000_000, 31).with_warmup(0);
    let phi = ActivationVector::all(3).unwrap();
    let m = run_fixed_policy(&c, &PolicyRandRR::pure(phi).unwrap(), &[1.0; 3]).unwrap();
    let eta = eta_vector(&models, &phi).unwrap();
    for (y, e) in m.mean_delivered.iter().zip(eta.iter()) {
        assert!((y - e).abs() < 0.005, "{y} vs {e}");
    }
}
