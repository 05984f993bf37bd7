use hindsight::oracle::{
    dice_codes, dice_ground_truth, dice_joint, entropy, exact_contrastive_bonus, exact_invariance_bonus, kl,
    random_critic, random_joint, random_simplex, verify_ba_bound, verify_cmi_identity, verify_contrastive_lower_bound,
    verify_lemma_normalization, verify_theorem1, DiscreteCritic, DiscreteJoint, JointSizes, OracleError, Sampling,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn instance(seed: u64, sizes: JointSizes) -> DiscreteJoint {
    random_joint(&mut ChaCha8Rng::seed_from_u64(seed), sizes).unwrap()
}

const SMALL: JointSizes = JointSizes { x: 3, a: 2, y: 4, z: 5 };

// Independent reference computations, written as plain loops over the tables.

fn naive_posterior(j: &DiscreteJoint, x: usize, a: usize) -> Vec<f64> {
    let mut out = vec![0.0; j.num_z()];
    for y in 0..j.num_y() {
        for z in 0..j.num_z() {
            out[z] += j.tau(x, a)[y] * j.generator(x, a, y)[z];
        }
    }
    out
}

fn naive_marginal(j: &DiscreteJoint) -> Vec<f64> {
    let mut out = vec![0.0; j.num_z()];
    for x in 0..j.num_x() {
        for a in 0..j.num_a() {
            let post = naive_posterior(j, x, a);
            for z in 0..j.num_z() {
                out[z] += j.rho()[x] * j.policy(x)[a] * post[z];
            }
        }
    }
    out
}

/// Σ over every (positive, negatives) tuple written out for K = 2 and K = 3.
fn naive_contrastive(j: &DiscreteJoint, g: &[f64], x: usize, a: usize, k: usize, exponentiate: bool) -> f64 {
    let post = naive_posterior(j, x, a);
    let pz = naive_marginal(j);
    let n = j.num_z();
    let term = |z: usize, negs: &[usize]| {
        let denom: f64 = (g[z].exp() + negs.iter().map(|&m| g[m].exp()).sum::<f64>()) / k as f64;
        let v = (g[z].exp() / denom).ln();
        if exponentiate { v.exp() } else { v }
    };
    // For the normalization check the positive is drawn from p(z), not p(z|x,a).
    let pos = if exponentiate { &pz } else { &post };
    let mut s = 0.0;
    for z in 0..n {
        match k {
            2 => {
                for m in 0..n {
                    s += pos[z] * pz[m] * term(z, &[m]);
                }
            }
            3 => {
                for m1 in 0..n {
                    for m2 in 0..n {
                        s += pos[z] * pz[m1] * pz[m2] * term(z, &[m1, m2]);
                    }
                }
            }
            _ => unreachable!(),
        }
    }
    s
}

#[test]
fn posterior_and_marginal_match_naive_sums() {
    for seed in 0..10 {
        let j = instance(seed, SMALL);
        let m = naive_marginal(&j);
        for (u, v) in j.z_marginal().iter().zip(&m) {
            assert!((u - v).abs() < 1e-14);
        }
        for x in 0..j.num_x() {
            for a in 0..j.num_a() {
                for (u, v) in j.z_given_xa(x, a).iter().zip(naive_posterior(&j, x, a)) {
                    assert!((u - v).abs() < 1e-14);
                }
            }
        }
    }
}

#[test]
fn contrastive_bonus_matches_explicit_tuple_sums() {
    for seed in 0..10 {
        let j = instance(seed, SMALL);
        let critic = random_critic(&mut ChaCha8Rng::seed_from_u64(100 + seed), 3, 2, 5, 2.0);
        for (x, a) in [(0, 0), (2, 1)] {
            for k in [2, 3] {
                let exact = exact_contrastive_bonus(&j, &critic, x, a, k, Sampling::Exact).unwrap().mean;
                let naive = naive_contrastive(&j, critic.energies(x, a), x, a, k, false);
                assert!((exact - naive).abs() < 1e-12, "K={k}: {exact} vs {naive}");
                let norm = verify_lemma_normalization(&j, &critic, x, a, k).unwrap();
                let naive_norm = naive_contrastive(&j, critic.energies(x, a), x, a, k, true);
                assert!((norm.lhs - naive_norm).abs() < 1e-12);
                assert!(norm.holds, "{norm:?}");
            }
        }
    }
}

#[test]
fn conditional_mutual_information_matches_joint_table() {
    for seed in 0..10 {
        let j = instance(seed, SMALL);
        for x in 0..j.num_x() {
            for a in 0..j.num_a() {
                let post = naive_posterior(&j, x, a);
                let tau = j.tau(x, a);
                let mut mi = 0.0;
                for y in 0..j.num_y() {
                    for z in 0..j.num_z() {
                        let p = tau[y] * j.generator(x, a, y)[z];
                        if p > 0.0 {
                            mi += p * (p / (tau[y] * post[z])).ln();
                        }
                    }
                }
                let r = verify_cmi_identity(&j, x, a).unwrap();
                assert!(r.holds, "{r:?}");
                assert!((r.lhs - mi).abs() < 1e-12 && (r.rhs - mi).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn ba_bound_is_tight_at_the_posterior() {
    let j = instance(3, SMALL);
    for x in 0..3 {
        for a in 0..2 {
            let r = verify_ba_bound(&j, j.z_given_xa(x, a), x, a).unwrap();
            assert!(r.holds && r.gap.abs() < 1e-12, "{r:?}");
        }
    }
}

#[test]
fn pmi_critic_with_one_sample_gives_zero() {
    let j = instance(4, SMALL);
    let c = DiscreteCritic::exact_pmi(&j).unwrap();
    assert_eq!(exact_contrastive_bonus(&j, &c, 1, 1, 1, Sampling::Exact).unwrap().mean, 0.0);
}

#[test]
fn theorem1_vanishes_at_ground_truth_for_every_bet() {
    let j = dice_joint();
    let checks = verify_theorem1(&j, &dice_ground_truth(), &dice_codes(), 1.0 / std::f64::consts::PI).unwrap();
    assert_eq!(checks.len(), 6);
    for c in checks {
        assert!(c.reward.abs() <= 1e-9 && c.model_kl <= 1e-9, "{c:?}");
        assert!(c.report.applicable && c.report.holds);
    }
}

#[test]
fn theorem1_rejects_bad_lambda_and_flags_loose_constraint() {
    let j = dice_joint();
    let truth = dice_ground_truth();
    assert!(matches!(verify_theorem1(&j, &truth, &dice_codes(), 0.0), Err(OracleError::Lambda(_))));
    assert!(matches!(verify_theorem1(&j, &truth, &dice_codes(), f64::NAN), Err(OracleError::Lambda(_))));
    let checks = verify_theorem1(&j, &truth, &dice_codes(), 1e3).unwrap();
    assert!(checks.iter().all(|c| !c.report.applicable));
}

#[test]
fn malformed_tables_are_rejected() {
    let bad = DiscreteJoint::new(vec![0.5, 0.6], vec![vec![1.0]; 2], vec![vec![vec![1.0]]; 2], vec![vec![vec![vec![1.0]]]; 2]);
    assert!(matches!(bad, Err(OracleError::NotDistribution(_))));
    let ragged = DiscreteJoint::new(vec![1.0], vec![vec![1.0]], vec![vec![vec![0.5, 0.5]]], vec![vec![vec![vec![1.0]]]]);
    assert!(matches!(ragged, Err(OracleError::Shape(_))));
}

fn simplex_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1usize..8, any::<u64>()).prop_map(|(n, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (random_simplex(&mut rng, n), random_simplex(&mut rng, n))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn kl_is_nonnegative_and_zero_on_the_diagonal((p, q) in simplex_pair()) {
        prop_assert!(kl(&p, &q).unwrap() >= 0.0);
        prop_assert!(kl(&p, &p).unwrap().abs() < 1e-12);
    }

    #[test]
    fn entropy_lies_between_zero_and_log_n((p, _) in simplex_pair()) {
        let h = entropy(&p).unwrap();
        prop_assert!(h >= 0.0);
        prop_assert!(h <= (p.len() as f64).ln() + 1e-12);
    }

    #[test]
    fn invariance_bonus_is_kl_to_marginal(seed in any::<u64>()) {
        let j = instance(seed, SMALL);
        for x in 0..3 {
            for a in 0..2 {
                let want = kl(&naive_posterior(&j, x, a), &naive_marginal(&j)).unwrap();
                prop_assert!((exact_invariance_bonus(&j, x, a) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ba_gap_equals_kl_for_any_variational_row(seed in any::<u64>()) {
        let j = instance(seed, SMALL);
        let q = random_simplex(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5a5a), 5);
        let r = verify_ba_bound(&j, &q, 1, 0).unwrap();
        prop_assert!(r.holds, "{:?}", r);
        prop_assert!((r.gap - kl(j.z_given_xa(1, 0), &q).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn contrastive_never_exceeds_invariance(seed in any::<u64>(), k in 1usize..=3, spread in 0.1f64..10.0) {
        let j = instance(seed, SMALL);
        let critic = random_critic(&mut ChaCha8Rng::seed_from_u64(seed.wrapping_add(1)), 3, 2, 5, spread);
        let r = verify_contrastive_lower_bound(&j, &critic, k).unwrap();
        prop_assert!(r.holds, "{:?}", r);
    }

    #[test]
    fn contrastive_density_normalizes(seed in any::<u64>(), k in 1usize..=3) {
        let j = instance(seed, SMALL);
        let critic = random_critic(&mut ChaCha8Rng::seed_from_u64(seed.wrapping_add(2)), 3, 2, 5, 3.0);
        let r = verify_lemma_normalization(&j, &critic, 2, 1, k).unwrap();
        prop_assert!(r.holds, "{:?}", r);
    }
}

#[test]
fn uniform_generator_mixing_keeps_the_model_exact() {
    // Mixing every row toward uniform leaves p(z|x,a) unchanged, and with the
    // exact reconstructor the model outcome distribution stays exact too.
    let j = dice_joint();
    let truth = dice_ground_truth();
    let generator = truth
        .generator
        .iter()
        .map(|rx| {
            rx.iter()
                .map(|ra| {
                    ra.iter().map(|row| row.iter().map(|p| 0.9 * p + 0.1 / row.len() as f64).collect()).collect()
                })
                .collect()
        })
        .collect();
    let model = hindsight::oracle::HindsightTables { generator, reconstructor: truth.reconstructor.clone() };
    let checks = verify_theorem1(&j, &model, &dice_codes(), 1.0 / std::f64::consts::PI).unwrap();
    assert!(checks.iter().all(|c| c.model_kl.abs() <= 1e-12 && c.report.holds), "{checks:?}");
    assert!(checks.iter().any(|c| c.reward > 0.0), "{checks:?}");
}
