//! Tabular MDPs with an optional exogenous-noise factorization.

use super::WorldError;

const PROB_TOL: f64 = 1e-12;

/// `s' = next[s][a][z]` with `z ~ prior`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExogenousModel {
    pub prior: Vec<f64>,
    pub next: Vec<Vec<Vec<usize>>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteMDP {
    pub states: usize,
    pub actions: usize,
    /// `tau[s][a][s']`.
    pub tau: Vec<Vec<Vec<f64>>>,
    pub exogenous: Option<ExogenousModel>,
}

impl DiscreteMDP {
    pub fn new(tau: Vec<Vec<Vec<f64>>>, exogenous: Option<ExogenousModel>) -> Result<Self, WorldError> {
        let states = tau.len();
        let actions = tau.first().map_or(0, |r| r.len());
        let mdp = Self { states, actions, tau, exogenous };
        mdp.validate()?;
        Ok(mdp)
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        let bad = |m: String| Err(WorldError::InvalidMdp(m));
        if self.states == 0 || self.actions == 0 {
            return bad("empty state or action set".into());
        }
        for (s, row) in self.tau.iter().enumerate() {
            if row.len() != self.actions {
                return bad(format!("tau[{s}] has {} actions", row.len()));
            }
            for (a, p) in row.iter().enumerate() {
                check_distribution(p, self.states).map_err(|m| WorldError::InvalidMdp(format!("tau[{s}][{a}]: {m}")))?;
            }
        }
        if let Some(exo) = &self.exogenous {
            check_distribution(&exo.prior, exo.prior.len()).map_err(|m| WorldError::InvalidMdp(format!("prior: {m}")))?;
            if self.factorization_error() > PROB_TOL {
                return bad(format!("factorization differs from tau by {:e}", self.factorization_error()));
            }
        }
        Ok(())
    }

    /// `Σ_z p(z) [f(s,a,z) = s']`, or `None` without a factorization.
    pub fn marginal_from_factorization(&self) -> Option<Vec<Vec<Vec<f64>>>> {
        let exo = self.exogenous.as_ref()?;
        let mut out = vec![vec![vec![0.0; self.states]; self.actions]; self.states];
        for s in 0..self.states {
            for a in 0..self.actions {
                for (z, pz) in exo.prior.iter().enumerate() {
                    out[s][a][exo.next[s][a][z]] += pz;
                }
            }
        }
        Some(out)
    }

    /// Largest absolute difference between `tau` and the factorized marginal.
    pub fn factorization_error(&self) -> f64 {
        let Some(m) = self.marginal_from_factorization() else { return 0.0 };
        let mut worst: f64 = 0.0;
        for (rs, ms) in self.tau.iter().zip(&m) {
            for (ra, ma) in rs.iter().zip(ms) {
                for (x, y) in ra.iter().zip(ma) {
                    worst = worst.max((x - y).abs());
                }
            }
        }
        worst
    }
}

fn check_distribution(p: &[f64], n: usize) -> Result<(), String> {
    if p.len() != n {
        return Err(format!("length {} != {n}", p.len()));
    }
    if p.iter().any(|&x| !(x >= 0.0)) {
        return Err("negative or NaN entry".into());
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > PROB_TOL {
        return Err(format!("sums to {s}"));
    }
    Ok(())
}

pub const DICE_CONTEXT: usize = 0;
pub const DICE_LOSE: usize = 1;
pub const DICE_WIN: usize = 2;
pub const DICE_FACES: usize = 6;

/// Bet on one of six faces of a fair die. From the context state action `k`
/// wins when the hidden roll is `k`; both outcome states return to context.
pub fn dice_mdp() -> DiscreteMDP {
    let prior = vec![1.0 / DICE_FACES as f64; DICE_FACES];
    let mut next = vec![vec![vec![DICE_CONTEXT; DICE_FACES]; DICE_FACES]; 3];
    for k in 0..DICE_FACES {
        for z in 0..DICE_FACES {
            next[DICE_CONTEXT][k][z] = if z == k { DICE_WIN } else { DICE_LOSE };
        }
    }
    let mut tau = vec![vec![vec![0.0; 3]; DICE_FACES]; 3];
    for k in 0..DICE_FACES {
        tau[DICE_CONTEXT][k][DICE_WIN] = 1.0 / 6.0;
        tau[DICE_CONTEXT][k][DICE_LOSE] = 5.0 / 6.0;
        tau[DICE_LOSE][k][DICE_CONTEXT] = 1.0;
        tau[DICE_WIN][k][DICE_CONTEXT] = 1.0;
    }
    DiscreteMDP::new(tau, Some(ExogenousModel { prior, next })).expect("dice MDP is valid")
}
