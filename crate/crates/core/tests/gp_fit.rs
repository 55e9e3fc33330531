mod common;

use common::{identity_inputs, random_coefficients, rng, spread_points};
use fungp::funspace::ProjectedInputs;
use fungp::gp::{
    fit_ml, log_marginal_likelihood, loo, FittedModel, HyperparameterMode, Hyperparameters, LooConfig, OptimizerConfig,
    TensorTrainingSet, TrainingSet,
};
use fungp::kernels::KernelKind;
use fungp::synth::{generate, SpatialLayout, SynthConfig};
use nalgebra::DMatrix;
use rand::Rng;

fn small_tensor(seed: u64, r: usize, s: usize) -> TensorTrainingSet {
    let mut g = rng(seed);
    let inputs = identity_inputs(random_coefficients(&mut g, r, &[2, 1], 2.0));
    let locs = spread_points(&mut g, s, 0.05);
    let y = DMatrix::from_fn(r, s, |i, j| (i as f64 + 1.0).sin() * locs[j][0] + g.random_range(-0.3..0.3));
    TensorTrainingSet::new(inputs, locs, y).unwrap()
}

fn hyp(q: usize) -> Hyperparameters {
    Hyperparameters {
        functional_kind: KernelKind::Matern52,
        functional_lengthscales: vec![1.0; q],
        spatial_kind: KernelKind::Matern52,
        spatial_lengthscales: [0.3, 0.3],
        spatial_variance: 1.0,
    }
}

/// `R = 50` maps of the centered 8-channel generator on a 10×10 grid,
/// projected at 99.9% inertia.
fn forecast_data(seed: u64) -> (TensorTrainingSet, Hyperparameters) {
    let cfg = SynthConfig::forecast_preset(50, SpatialLayout::Grid { n1: 10, n2: 10 }, seed);
    let data = generate(&cfg).unwrap();
    let inputs = ProjectedInputs::fit(&data.inputs, 0.999).unwrap();
    let truth = Hyperparameters {
        functional_kind: KernelKind::Matern52,
        functional_lengthscales: cfg.maps.grid_lengthscales(data.inputs.grid()).unwrap(),
        spatial_kind: KernelKind::Matern52,
        spatial_lengthscales: cfg.maps.spatial_lengthscales,
        spatial_variance: cfg.maps.spatial_variance,
    };
    (TensorTrainingSet::new(inputs, data.locations, data.maps).unwrap(), truth)
}

#[test]
fn same_seed_gives_identical_diagnostics() {
    let ts = small_tensor(1, 6, 8);
    let cfg = OptimizerConfig { seed: 42, ..OptimizerConfig::default() };
    let a = fit_ml(ts.clone().into(), &hyp(2), &cfg).unwrap();
    let b = fit_ml(ts.into(), &hyp(2), &cfg).unwrap();
    assert_eq!(a.diagnostics(), b.diagnostics());
    assert_eq!(a.hyperparameters(), b.hyperparameters());
}

#[test]
fn fitted_likelihood_dominates_init() {
    for seed in 0..5 {
        let ts = small_tensor(seed, 5, 7);
        let init = hyp(2);
        let ll0 = log_marginal_likelihood(&init, &ts.clone().into()).unwrap();
        let m = fit_ml(ts.into(), &init, &OptimizerConfig::default()).unwrap();
        assert!(m.diagnostics().log_likelihood >= ll0, "seed {seed}");
        assert_eq!(m.diagnostics().init_log_likelihood, Some(ll0));
    }
}

#[test]
fn stationary_start_does_not_move() {
    // one scenario, two points: the profiled likelihood depends on ℓ_x only
    let inputs = identity_inputs(vec![DMatrix::from_element(1, 1, 0.0)]);
    let locs = vec![[0.0, 0.0], [1.0, 0.0]];
    let y = DMatrix::from_row_slice(1, 2, &[1.0, -1.0]);
    let ts: TrainingSet = TensorTrainingSet::new(inputs, locs, y).unwrap().into();
    let cfg = OptimizerConfig { restarts: 1, ..OptimizerConfig::default() };
    let first = fit_ml(ts.clone(), &hyp(1), &cfg).unwrap();
    let again = fit_ml(ts, first.hyperparameters(), &cfg).unwrap();
    let l0 = first.hyperparameters().spatial_lengthscales;
    let l1 = again.hyperparameters().spatial_lengthscales;
    for k in 0..2 {
        assert!((l1[k].ln() - l0[k].ln()).abs() < 1e-2, "{l0:?} -> {l1:?}");
    }
    assert!((again.diagnostics().log_likelihood - first.diagnostics().log_likelihood).abs() < 1e-8);
}

#[test]
fn recovers_spatial_lengthscales() {
    let (ts, truth) = forecast_data(7);
    let ll_truth = log_marginal_likelihood(&truth, &ts.clone().into()).unwrap();
    let init = Hyperparameters::default_init(ts.inputs(), ts.locations(), KernelKind::Matern52, KernelKind::Matern52);
    let m = fit_ml(ts.into(), &init, &OptimizerConfig { seed: 7, ..OptimizerConfig::default() }).unwrap();
    assert!(m.diagnostics().log_likelihood >= ll_truth);
    for l in m.hyperparameters().spatial_lengthscales {
        assert!((0.1..=0.3).contains(&l), "{l}");
    }
}

#[test]
fn loo_on_duplicated_scenario() {
    let inputs = identity_inputs(vec![DMatrix::from_element(2, 1, 0.4)]);
    let mut g = rng(2);
    let locs = spread_points(&mut g, 6, 0.1);
    let row: Vec<f64> = (0..6).map(|_| g.random_range(-1.0..1.0)).collect();
    let y = DMatrix::from_fn(2, 6, |_, j| row[j]);
    let ts = TensorTrainingSet::new(inputs, locs, y).unwrap();
    let cfg = LooConfig { mode: HyperparameterMode::Fixed(hyp(1)), ..LooConfig::default() };
    let report = loo(&ts, &cfg).unwrap();
    assert_eq!(report.fits, 0);
    for f in &report.folds {
        let p = f.prediction.as_ref().unwrap();
        for (m, v) in p.mean.iter().zip(&row) {
            assert!((m - v).abs() < 1e-6);
        }
    }
}

#[test]
fn fit_once_runs_one_fit() {
    let ts = small_tensor(4, 5, 6);
    let cfg = LooConfig { mode: HyperparameterMode::FitOnce, ..LooConfig::default() };
    let report = loo(&ts, &cfg).unwrap();
    assert_eq!(report.fits, 1);
    assert_eq!(report.folds.len(), 5);
    let h = report.folds[0].hyperparameters.clone();
    assert!(report.folds.iter().all(|f| f.hyperparameters == h));
}

#[test]
fn permuting_scenarios_permutes_loo() {
    let ts = small_tensor(8, 6, 7);
    let perm = [3usize, 0, 5, 1, 4, 2];
    let permuted = ts.select_scenarios(&perm).unwrap();
    let ll = log_marginal_likelihood(&hyp(2), &ts.clone().into()).unwrap();
    let llp = log_marginal_likelihood(&hyp(2), &permuted.clone().into()).unwrap();
    assert!((ll - llp).abs() <= 1e-10 * ll.abs());

    let cfg = LooConfig { mode: HyperparameterMode::Fixed(hyp(2)), ..LooConfig::default() };
    let a = loo(&ts, &cfg).unwrap();
    let b = loo(&permuted, &cfg).unwrap();
    for (k, &orig) in perm.iter().enumerate() {
        let pa = a.folds[orig].prediction.as_ref().unwrap();
        let pb = b.folds[k].prediction.as_ref().unwrap();
        for (x, y) in pa.mean.iter().zip(&pb.mean).chain(pa.variance.iter().zip(&pb.variance)) {
            assert!((x - y).abs() <= 1e-10 * x.abs().max(1.0));
        }
    }
}

#[test]
fn loo_median_q2_on_fifty_maps() {
    let (ts, _) = forecast_data(3);
    let cfg = LooConfig { optimizer: OptimizerConfig { seed: 3, ..OptimizerConfig::default() }, ..LooConfig::default() };
    let report = loo(&ts, &cfg).unwrap();
    assert!(report.folds.iter().all(|f| f.error.is_none()));
    // first verified run: 0.4623
    let q2 = report.median_q2.unwrap();
    assert!(q2 >= 0.45, "{q2}");
}

#[test]
fn document_round_trip() {
    let ts = small_tensor(9, 4, 5);
    let m = fit_ml(ts.clone().into(), &hyp(2), &OptimizerConfig::default()).unwrap();
    let doc = m.to_document(Vec::new());
    let json = serde_json::to_string(&doc).unwrap();
    let back: fungp::gp::ModelDocument = serde_json::from_str(&json).unwrap();
    assert_eq!(back, doc);
    let rebuilt = FittedModel::from_document(&back, ts.clone().into()).unwrap();
    assert_eq!(rebuilt.hyperparameters(), m.hyperparameters());

    let mut tampered = back.clone();
    tampered.diagnostics.log_likelihood += 1.0;
    let err = FittedModel::from_document(&tampered, ts.into()).unwrap_err();
    assert!(err.is_numerical());
}
