//! Library-level pipeline: data generation, training, evaluation and checks.

use polyflex::datagen::{self, Partition};
use polyflex::kinematics::diag;
use polyflex::reference_models::{default_params, ref_stress, MaterialModel};
use polyflex::training::{self, mse_loss, TrainConfig};
use polyflex::verify::{self, Check};
use polyflex::{Architecture, Family, Tensor3, VariantKind};

fn small_config(kind: VariantKind, archs: &[&[usize]], restarts: usize) -> TrainConfig {
    TrainConfig {
        architectures: archs
            .iter()
            .map(|h| Architecture::new(kind.input_size(), h.to_vec()).unwrap())
            .collect(),
        restarts,
        ..TrainConfig::standard(kind)
    }
}

#[test]
fn neo_hooke_fit_with_every_incompressible_family() {
    let params = default_params(MaterialModel::NeoHooke);
    let data = datagen::build_dataset(&params, &datagen::incompressible_loadcases(), true).unwrap();
    let mut best = Vec::new();
    for family in [Family::Cssv, Family::ReducedCssv, Family::Ball, Family::UInvar] {
        let kind = VariantKind::incompressible(family);
        let result = training::multi_restart(kind, &data, &small_config(kind, &[&[8]], 2)).unwrap();
        let model = &result.best_model;
        // the record agrees with an independent evaluation of the loss
        let mse = mse_loss(model, &data, Partition::Train).unwrap();
        assert!((mse - result.best().train_mse).abs() <= 1e-9 * (1.0 + mse), "{kind}");
        assert!(model.energy(&Tensor3::identity()).unwrap().abs() <= 1e-12);
        for check in [Check::Convexity, Check::Objectivity, Check::Pi3, Check::AngularMomentum, Check::StressFd] {
            let r = verify::run_model_check(model, check, 500, 1).unwrap();
            assert!(r.pass, "{kind}: {r}");
        }
        if kind.is_monotone() {
            assert!(verify::run_model_check(model, Check::Monotone, 500, 1).unwrap().pass);
        }
        best.push((family, mse));
    }
    let cssv = best[0].1;
    let uinvar = best[3].1;
    assert!(cssv < 1e-3, "{best:?}");
    assert!(uinvar > 10.0 * cssv, "{best:?}");
}

#[test]
fn compressible_additive_mielke_is_learnable() {
    let params = default_params(MaterialModel::AdditiveMielkeSmooth);
    let data = datagen::build_dataset(&params, &datagen::mielke_compressible_grid(), false).unwrap();
    let kind = VariantKind::compressible(Family::Cssv);
    let config = TrainConfig { max_iter: 3000, ..small_config(kind, &[&[4]], 1) };
    let result = training::multi_restart(kind, &data, &config).unwrap();
    assert!(result.best().train_mse < 1e-4, "{:?}", result.best());
}

/// Synthetic rows in the Treloar layout, sampled from the Neo–Hooke model.
fn synthetic_treloar() -> String {
    let params = default_params(MaterialModel::NeoHooke);
    let mut text = String::from("loadcase,stretch,stress\n# synthetic\n");
    let mut push = |case: &str, l: f64, f: Tensor3| {
        let p = ref_stress(&params, &f, true).unwrap();
        text.push_str(&format!("{case},{l},{}\n", p[(0, 0)]));
    };
    for k in 0..25 {
        let l = 1.0 + 0.25 * k as f64;
        push("UT", l, diag(l, 1.0 / l.sqrt(), 1.0 / l.sqrt()));
    }
    for k in 0..17 {
        let l = 1.0 + 0.2 * k as f64;
        push("ET", l, diag(l, l, 1.0 / (l * l)));
    }
    for k in 0..14 {
        let l = 1.0 + 0.25 * k as f64;
        push("PS", l, diag(l, 1.0, 1.0 / l));
    }
    text
}

#[test]
fn treloar_layout_split_and_validation_selection() {
    let text = synthetic_treloar();
    let data = datagen::parse_treloar(&text, 3).unwrap();
    assert_eq!(data.len(), 56);
    assert_eq!(
        (data.count(Partition::Train), data.count(Partition::Val), data.count(Partition::Test)),
        (41, 10, 5)
    );
    assert_eq!(data, datagen::parse_treloar(&text, 3).unwrap());
    assert_ne!(data.partition, datagen::parse_treloar(&text, 4).unwrap().partition);

    // the split survives the dataset CSV
    let mut buf = Vec::new();
    datagen::write_csv_to(&data, &mut buf).unwrap();
    assert_eq!(datagen::read_csv_from(buf.as_slice()).unwrap(), data);

    let kind = VariantKind::incompressible(Family::ReducedCssv);
    let result = training::multi_restart(kind, &data, &small_config(kind, &[&[4], &[8]], 2)).unwrap();
    let best = result.best();
    let val = best.val_mse.expect("validation split present");
    assert!(result.records.iter().all(|r| r.val_mse.unwrap() >= val));
    let model = &result.best_model;
    assert!((mse_loss(model, &data, Partition::Val).unwrap() - val).abs() <= 1e-9 * (1.0 + val));
    assert!(mse_loss(model, &data, Partition::Test).unwrap().is_finite());
    assert!(val < 1e-2, "{best:?}");
}

#[test]
fn reports_are_reproducible() {
    let params = default_params(MaterialModel::Gent);
    let data = datagen::build_dataset(&params, &datagen::incompressible_loadcases(), true).unwrap();
    let kind = VariantKind::incompressible(Family::Ball);
    let config = TrainConfig { base_seed: 11, max_iter: 150, ..small_config(kind, &[&[4], &[4, 2]], 2) };
    let a = training::multi_restart(kind, &data, &config).unwrap();
    let b = training::multi_restart(kind, &data, &config).unwrap();
    assert_eq!(a.report_json().to_string(), b.report_json().to_string());
    assert_eq!(a.best_model.to_json(), b.best_model.to_json());
    let seeds: Vec<u64> = a.records.iter().map(|r| r.seed).collect();
    assert_eq!(seeds, [11, 12, 13, 14]);
}
