use rand::Rng;
use rand_distr::Exp1;

use super::{DiscreteCritic, DiscreteJoint, HindsightTables, OracleError};
use crate::worlds::{dice_mdp, DiscreteMDP, DICE_CONTEXT, DICE_LOSE, DICE_WIN};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct JointSizes {
    pub x: usize,
    pub a: usize,
    pub y: usize,
    pub z: usize,
}

/// A draw from Dirichlet(1, …, 1), as normalized Exp(1) variates.
pub fn random_simplex<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|e| e / s).collect()
}

/// Every table row drawn from Dirichlet(1).
pub fn random_joint<R: Rng>(rng: &mut R, n: JointSizes) -> Result<DiscreteJoint, OracleError> {
    let rho = random_simplex(rng, n.x);
    let policy = (0..n.x).map(|_| random_simplex(rng, n.a)).collect();
    let tau = (0..n.x).map(|_| (0..n.a).map(|_| random_simplex(rng, n.y)).collect()).collect();
    let generator = (0..n.x)
        .map(|_| (0..n.a).map(|_| (0..n.y).map(|_| random_simplex(rng, n.z)).collect()).collect())
        .collect();
    DiscreteJoint::new(rho, policy, tau, generator)
}

/// Energies uniform in `[−spread, spread]`.
pub fn random_critic<R: Rng>(rng: &mut R, nx: usize, na: usize, nz: usize, spread: f64) -> DiscreteCritic {
    let table = (0..nx)
        .map(|_| (0..na).map(|_| (0..nz).map(|_| rng.random_range(-spread..=spread)).collect()).collect())
        .collect();
    DiscreteCritic::new(table).expect("finite energies")
}

/// Mixes every generator row with weight `weight` on a fresh Dirichlet(1) row.
pub fn perturb_generator<R: Rng>(
    rng: &mut R,
    generator: &[Vec<Vec<Vec<f64>>>],
    weight: f64,
) -> Vec<Vec<Vec<Vec<f64>>>> {
    generator
        .iter()
        .map(|rx| {
            rx.iter()
                .map(|ra| {
                    ra.iter()
                        .map(|row| {
                            let noise = random_simplex(rng, row.len());
                            row.iter().zip(noise).map(|(p, q)| (1.0 - weight) * p + weight * q).collect()
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// Bayes posterior of the exogenous latent: `p(z|s,a,s') ∝ p(z) [f(s,a,z) = s']`,
/// the prior where `s'` is unreachable.
fn exogenous_posterior(mdp: &DiscreteMDP) -> Vec<Vec<Vec<Vec<f64>>>> {
    let exo = mdp.exogenous.as_ref().expect("dice MDP has a factorization");
    let mut out = vec![vec![vec![Vec::new(); mdp.states]; mdp.actions]; mdp.states];
    for s in 0..mdp.states {
        for a in 0..mdp.actions {
            for y in 0..mdp.states {
                let w: Vec<f64> =
                    exo.prior.iter().enumerate().map(|(z, p)| if exo.next[s][a][z] == y { *p } else { 0.0 }).collect();
                let total: f64 = w.iter().sum();
                out[s][a][y] = if total > 0.0 { w.iter().map(|v| v / total).collect() } else { exo.prior.clone() };
            }
        }
    }
    out
}

/// The dice bet as a joint: all visitation on the context state, a uniform
/// bet, and the exact posterior over the roll as generator.
pub fn dice_joint() -> DiscreteJoint {
    let mdp = dice_mdp();
    let mut rho = vec![0.0; mdp.states];
    rho[DICE_CONTEXT] = 1.0;
    let policy = vec![vec![1.0 / mdp.actions as f64; mdp.actions]; mdp.states];
    DiscreteJoint::new(rho, policy, mdp.tau.clone(), exogenous_posterior(&mdp)).expect("dice joint is valid")
}

/// Scalar outcome codes: lose 0, win 10, context 20. The spacing keeps the
/// Gaussian likelihood of a wrong code negligible at λ = 1/π.
pub fn dice_codes() -> Vec<Vec<f64>> {
    let mut c = vec![Vec::new(); 3];
    c[DICE_LOSE] = vec![0.0];
    c[DICE_WIN] = vec![10.0];
    c[DICE_CONTEXT] = vec![20.0];
    c
}

/// Exact posterior generator and the true outcome map as reconstructor.
pub fn dice_ground_truth() -> HindsightTables {
    let mdp = dice_mdp();
    let exo = mdp.exogenous.as_ref().expect("dice MDP has a factorization");
    let codes = dice_codes();
    let reconstructor = (0..mdp.states)
        .map(|s| (0..mdp.actions).map(|a| exo.next[s][a].iter().map(|&y| codes[y].clone()).collect()).collect())
        .collect();
    HindsightTables { generator: exogenous_posterior(&mdp), reconstructor }
}
