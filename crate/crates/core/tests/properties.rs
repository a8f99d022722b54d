//! Randomized properties of the kinematics, networks and file formats.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use proptest::prelude::*;

use polyflex::datagen::{self, Dataset, Partition, Sample};
use polyflex::kinematics::{self, SignedSingularValues, Tensor3};
use polyflex::variants::pi3_orbit;
use polyflex::{Architecture, Family, IcnnParams, VariantKind, VariantModel};

fn tensor() -> impl Strategy<Value = Tensor3> {
    prop::array::uniform9(-1.0f64..1.0).prop_map(|e| {
        // near-identity perturbation keeps det F > 0 and the spectrum separated
        Tensor3::identity() + kinematics::from_row_major(&e) * 0.45
    })
}

fn rotation() -> impl Strategy<Value = Tensor3> {
    (prop::array::uniform3(-1.0f64..1.0), -3.1f64..3.1).prop_filter_map("axis", |(axis, angle)| {
        let v = Vector3::from(axis);
        (v.norm() > 1e-3).then(|| {
            *UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_normalize(v), angle)
                .to_rotation_matrix()
                .matrix()
        })
    })
}

fn nu_inc() -> impl Strategy<Value = SignedSingularValues> {
    (0.5f64..2.0, 0.5f64..2.0).prop_map(|(a, b)| SignedSingularValues([a, b, 1.0 / (a * b)]))
}

fn all_kinds() -> Vec<VariantKind> {
    VariantKind::all()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn svd_reconstructs_and_matches_eigenvalues(f in tensor()) {
        prop_assume!(kinematics::det(&f) > 0.05);
        let svd = kinematics::svd3(&f).unwrap();
        prop_assert!((svd.reconstruct() - f).norm() < 1e-11);
        prop_assert!((svd.nu.product() - kinematics::det(&f)).abs() < 1e-11);
        // squared stretches are the eigenvalues of FᵀF
        let mut eig: Vec<f64> = (f.transpose() * f).symmetric_eigenvalues().iter().copied().collect();
        let mut sq: Vec<f64> = svd.nu.stretches().iter().map(|l| l * l).collect();
        eig.sort_by(f64::total_cmp);
        sq.sort_by(f64::total_cmp);
        for (a, b) in eig.iter().zip(&sq) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn cofactor_is_det_times_inverse_transpose(f in tensor()) {
        prop_assume!(kinematics::det(&f).abs() > 0.05);
        let expected = f.try_inverse().unwrap().transpose() * kinematics::det(&f);
        prop_assert!((kinematics::cofactor(&f) - expected).norm() < 1e-12);
    }

    #[test]
    fn network_energy_is_isotropic_and_objective(f in tensor(), q in rotation(), r in rotation(), seed in 0u64..1000) {
        prop_assume!(kinematics::det(&f) > 0.05);
        for kind in all_kinds().into_iter().filter(|k| k.compressible) {
            let model = VariantModel::init(kind, &[6, 3], seed).unwrap();
            let a = model.potential(&f).unwrap();
            let b = model.potential(&(q * f * r)).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()), "{kind}: {a} vs {b}");
        }
    }

    #[test]
    fn network_energy_is_pi3_invariant(nu in nu_inc(), seed in 0u64..1000) {
        for kind in all_kinds() {
            let model = VariantModel::init(kind, &[5], seed).unwrap();
            let e0 = model.energy_from_nu(&nu);
            for t in pi3_orbit(&nu) {
                prop_assert!((model.energy_from_nu(&t) - e0).abs() <= 1e-12 * (1.0 + e0.abs()));
            }
        }
    }

    #[test]
    fn stress_is_symmetric_in_the_current_frame(f in tensor(), seed in 0u64..1000) {
        prop_assume!(kinematics::det(&f) > 0.05);
        let model = VariantModel::init(VariantKind::compressible(Family::Cssv), &[8, 4], seed).unwrap();
        let p = model.stress(&f).unwrap();
        let tau = p * f.transpose();
        prop_assert!((tau - tau.transpose()).norm() < 1e-8);
    }

    #[test]
    fn stress_matches_central_differences(f in tensor(), seed in 0u64..1000) {
        prop_assume!(kinematics::det(&f) > 0.05);
        let model = VariantModel::init(VariantKind::compressible(Family::Ball), &[6], seed).unwrap();
        let p = model.stress(&f).unwrap();
        let h = 1e-6;
        for i in 0..3 {
            for j in 0..3 {
                let mut e = Matrix3::zeros();
                e[(i, j)] = h;
                let fd = (model.potential(&(f + e)).unwrap() - model.potential(&(f - e)).unwrap()) / (2.0 * h);
                prop_assert!((fd - p[(i, j)]).abs() < 1e-6, "({i},{j}): {fd} vs {}", p[(i, j)]);
            }
        }
    }

    #[test]
    fn icnn_is_convex_along_segments(
        x in prop::collection::vec(-3.0f64..3.0, 7),
        y in prop::collection::vec(-3.0f64..3.0, 7),
        t in 0.0f64..1.0,
        seed in 0u64..1000,
    ) {
        let arch = Architecture::new(7, vec![8, 4, 4]).unwrap();
        let kind = VariantKind::compressible(Family::Cssv);
        let p = IcnnParams::init(&arch, &kind.constraints(), seed);
        let mid: Vec<f64> = x.iter().zip(&y).map(|(a, b)| t * a + (1.0 - t) * b).collect();
        let lhs = p.forward(&mid).unwrap();
        let rhs = t * p.forward(&x).unwrap() + (1.0 - t) * p.forward(&y).unwrap();
        prop_assert!(lhs <= rhs + 1e-10);
    }

    #[test]
    fn model_json_round_trips(seed in 0u64..1000, k in 0usize..8) {
        let kind = all_kinds()[k];
        let model = VariantModel::init(kind, &[4, 3], seed).unwrap().normalized();
        let back = VariantModel::from_json(&model.to_json()).unwrap();
        prop_assert_eq!(back, model);
    }

    #[test]
    fn dataset_csv_round_trips(
        entries in prop::collection::vec((prop::array::uniform9(-5.0f64..5.0), any::<[bool; 9]>(), 0usize..3), 1..8)
    ) {
        let samples: Vec<Sample> = entries
            .iter()
            .map(|(p, mask, _)| Sample { f: kinematics::diag(1.3, 0.9, 1.1), p: kinematics::from_row_major(p), mask: *mask })
            .collect();
        let partition = entries.iter().map(|e| Partition::ALL[e.2]).collect();
        let set = Dataset { samples, partition, incompressible: false };
        let mut buf = Vec::new();
        datagen::write_csv_to(&set, &mut buf).unwrap();
        let back = datagen::read_csv_from(buf.as_slice()).unwrap();
        prop_assert_eq!(back, set);
    }
}
