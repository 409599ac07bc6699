mod common;

use cmg_core::domains;
use cmg_core::game::{flatten, GameSpec, Matrix, PolicyProfile};
use cmg_core::occupancy::{flow_matrix, player_occupancy};
use cmg_core::pgl::*;
use cmg_core::rng::seeded_rng;
use cmg_core::solvers::LogitProfile;
use cmg_core::utilities::{UtilitySpec, UtilityTerm, Weight};
use nalgebra::DVector;
use proptest::prelude::*;
use rand::Rng as _;

use common::*;

fn entropy_game(spec: &GameSpec, rewards: Vec<Vec<f64>>) -> UtilitySpec {
    UtilitySpec::new(
        rewards
            .into_iter()
            .map(|reward| vec![UtilityTerm::LinearReward { reward }, UtilityTerm::EntropyBonus { tau: Weight::Live }])
            .take(spec.n_players())
            .collect(),
    )
}

#[test]
fn softmax_optimum_has_zero_gradient() {
    // one state, one player: argmax of r.pi + tau H(pi) is softmax(r / tau)
    let r = [0.3, -0.7, 1.1];
    let tau = 0.4;
    let spec = GameSpec::new(1, vec![3], vec![1.0; 3], 0.9, vec![1.0]).unwrap();
    let utilities = entropy_game(&spec, vec![r.to_vec()]);
    let z: f64 = r.iter().map(|v| (v / tau).exp()).sum();
    let pi = Matrix::from_row_slice(1, 3, &r.map(|v| (v / tau).exp() / z));
    let profile = PolicyProfile::new(&spec, vec![pi]).unwrap();
    let logits = LogitProfile::from_policy(&profile).unwrap();
    let (report, grads) = pgl_loss_gradient(&spec, &utilities, &logits, tau).unwrap();
    assert!(report.norms[0] <= 1e-8);
    assert!(grads[0].amax() <= 1e-8);
}

#[test]
fn symmetric_profile_gives_mirrored_gradients() {
    let entry = domains::build_ipd();
    let mut rng = seeded_rng(4);
    let l0 = Matrix::from_fn(4, 1, |_, _| rng.random_range(-1.0..1.0));
    let swap = [0, 2, 1, 3];
    let l1 = Matrix::from_fn(4, 1, |s, _| l0[(swap[s], 0)]);
    let logits = LogitProfile::new(&entry.spec, vec![l0, l1]).unwrap();
    let (report, grads) = pgl_loss_gradient(&entry.spec, &entry.utilities, &logits, 0.3).unwrap();
    assert!((report.norms[0] - report.norms[1]).abs() <= 1e-9);
    for s in 0..4 {
        assert!((grads[0][(swap[s], 0)] - grads[1][(s, 0)]).abs() <= 1e-9);
    }
}

#[test]
fn singular_gram_is_refused() {
    let a = Matrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
    assert!(tangent_projection(&a).is_err());
}

#[test]
fn bound_formula() {
    let entry = domains::build_ipgg();
    let profile = PolicyProfile::uniform(&entry.spec);
    let report = pgl_loss(&entry.spec, &entry.utilities, &profile, 0.1).unwrap();
    let expected = 0.1 * (8.0f64 * 2.0).ln() + (2.0 * 3.0 * report.loss).sqrt();
    assert!((report.bound - expected).abs() < 1e-15);
    let sum: f64 = report.norms.iter().map(|n| n * n).sum();
    assert!((sum - report.loss).abs() <= 1e-15 * report.loss.max(1.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn projection_invariants(seed in any::<u64>()) {
        let mut rng = seeded_rng(seed);
        let spec = random_small_spec(&mut rng, 3, 4, 3);
        let profile = random_profile(&mut rng, &spec);
        for i in 0..spec.n_players() {
            let a = flow_matrix(&spec, &profile, i).unwrap().a;
            let p = tangent_projection(&a).unwrap();
            prop_assert!((&p * &p - &p).amax() <= 1e-9);
            prop_assert!((&p - p.transpose()).amax() <= 1e-12);
            prop_assert!((&a * &p).amax() <= 1e-9);
            let other = with_policy(&profile, i, random_profile(&mut rng, &spec).policy(i).clone());
            let v = DVector::from_vec(flatten(
                &(player_occupancy(&spec, &profile, i).unwrap() - player_occupancy(&spec, &other, i).unwrap()),
            ));
            prop_assert!((&p * &v - &v).amax() <= 1e-9);
            let g = DVector::from_fn(v.len(), |_, _| rng.random_range(-1.0..1.0));
            let (proj, _) = project(&a, &g).unwrap();
            prop_assert!((&p * &g - proj).amax() <= 1e-9);
        }
    }

    #[test]
    fn loss_gradient_matches_finite_differences(seed in any::<u64>()) {
        let mut rng = seeded_rng(seed);
        let spec = random_small_spec(&mut rng, 2, 3, 3);
        let utilities = entropy_game(&spec, random_rewards(&mut rng, &spec));
        let logits = LogitProfile::from_policy(&random_profile(&mut rng, &spec)).unwrap();
        let tau = rng.random_range(0.01..1.0);
        let (report, grads) = pgl_loss_gradient(&spec, &utilities, &logits, tau).unwrap();
        prop_assert!(report.loss >= 0.0);
        let h = 1e-5;
        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        for (i, g) in grads.iter().enumerate() {
            for s in 0..g.nrows() {
                for k in 0..g.ncols() {
                    let at = |delta: f64| {
                        let mut l = logits.clone();
                        l.logits_mut()[i][(s, k)] += delta;
                        pgl_loss(&spec, &utilities, &l.to_policy().unwrap(), tau).unwrap().loss
                    };
                    analytic.push(g[(s, k)]);
                    numeric.push((at(h) - at(-h)) / (2.0 * h));
                }
            }
        }
        prop_assert!(rel_err(&analytic, &numeric) <= 1e-4);
    }
}
