//! Exact computations on small discrete instances: entropies, divergences,
//! pointwise mutual information of a tabular hindsight generator, and
//! verifiers for the bounds relating the reconstruction, invariance and
//! contrastive bonuses.

mod bounds;
mod instances;

pub use bounds::{
    contrastive_gap_trend, exact_contrastive_bonus, exact_invariance_bonus, exact_pmi, gaussian_loglik,
    verify_ba_bound, verify_cmi_identity, verify_contrastive_lower_bound, verify_lemma_normalization,
    verify_theorem1, Estimate, GapPoint, HindsightTables, Sampling, Theorem1Check,
};
pub use instances::{
    dice_codes, dice_ground_truth, dice_joint, perturb_generator, random_critic, random_joint, random_simplex,
    JointSizes,
};

/// Row-sum tolerance for probability tables.
pub const TABLE_TOL: f64 = 1e-12;
/// Largest negative-tuple count enumerated exactly.
pub const MAX_ENUMERATION: usize = 1_000_000;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum OracleError {
    #[error("not a probability vector: {0}")]
    NotDistribution(String),
    #[error("table shape: {0}")]
    Shape(String),
    #[error("p(z = {z}) is zero")]
    ZeroMarginal { z: usize },
    #[error("enumerating {terms} negative tuples exceeds the limit; use Monte Carlo")]
    EnumerationTooLarge { terms: u128 },
    #[error("lambda must be positive, got {0}")]
    Lambda(f64),
    #[error("critic entry at ({x}, {a}, {z}) is not finite")]
    NonFiniteCritic { x: usize, a: usize, z: usize },
}

/// Outcome of one verifier. Unless a verifier says otherwise,
/// `holds ⇔ lhs ≤ rhs + tolerance` and `gap = rhs − lhs`. Equality checks
/// use `holds ⇔ |lhs − rhs| ≤ tolerance` and `gap = lhs − rhs`.
/// `applicable` is false when a precondition failed, in which case `holds`
/// is still computed but asserts nothing.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct BoundReport {
    pub lhs: f64,
    pub rhs: f64,
    pub gap: f64,
    pub holds: bool,
    pub tolerance: f64,
    pub applicable: bool,
}

impl BoundReport {
    pub fn upper(lhs: f64, rhs: f64, tolerance: f64) -> Self {
        Self { lhs, rhs, gap: rhs - lhs, holds: lhs <= rhs + tolerance, tolerance, applicable: true }
    }

    pub fn equal(lhs: f64, rhs: f64, tolerance: f64) -> Self {
        let gap = lhs - rhs;
        Self { lhs, rhs, gap, holds: gap.abs() <= tolerance || lhs == rhs, tolerance, applicable: true }
    }
}

fn check_distribution(p: &[f64]) -> Result<(), OracleError> {
    if p.is_empty() {
        return Err(OracleError::NotDistribution("empty".into()));
    }
    if let Some(x) = p.iter().find(|x| !(**x >= 0.0)) {
        return Err(OracleError::NotDistribution(format!("entry {x}")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > TABLE_TOL {
        return Err(OracleError::NotDistribution(format!("sums to {s}")));
    }
    Ok(())
}

/// `−Σ p ln p` in nats, with `0 ln 0 = 0`.
pub fn entropy(p: &[f64]) -> Result<f64, OracleError> {
    check_distribution(p)?;
    Ok(p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.ln()).sum())
}

/// `Σ p ln(p/q)` in nats. Returns `f64::INFINITY` when `p` puts mass where
/// `q` has none; check with `is_finite`.
pub fn kl(p: &[f64], q: &[f64]) -> Result<f64, OracleError> {
    check_distribution(p)?;
    check_distribution(q)?;
    if p.len() != q.len() {
        return Err(OracleError::Shape(format!("kl of lengths {} and {}", p.len(), q.len())));
    }
    Ok(kl_unchecked(p, q))
}

/// `Σ p ln(p/q)` without normalization checks; `q` may be any non-negative vector.
fn kl_unchecked(p: &[f64], q: &[f64]) -> f64 {
    let mut s = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi == 0.0 {
            continue;
        }
        if qi <= 0.0 {
            return f64::INFINITY;
        }
        s += pi * (pi / qi).ln();
    }
    s
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Visitation `ρ(x)`, policy `π(a|x)`, dynamics `τ(y|x,a)` and hindsight
/// generator `p(z|x,a,y)` over finite supports, with the induced `p(z|x,a)`
/// and `p(z)` cached.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteJoint {
    rho: Vec<f64>,
    policy: Vec<Vec<f64>>,
    tau: Vec<Vec<Vec<f64>>>,
    generator: Vec<Vec<Vec<Vec<f64>>>>,
    z_given_xa: Vec<Vec<Vec<f64>>>,
    z_marginal: Vec<f64>,
}

impl DiscreteJoint {
    /// Tables are indexed `policy[x][a]`, `tau[x][a][y]` and `generator[x][a][y][z]`.
    pub fn new(
        rho: Vec<f64>,
        policy: Vec<Vec<f64>>,
        tau: Vec<Vec<Vec<f64>>>,
        generator: Vec<Vec<Vec<Vec<f64>>>>,
    ) -> Result<Self, OracleError> {
        check_distribution(&rho)?;
        let nx = rho.len();
        let shape = |m: String| Err(OracleError::Shape(m));
        if policy.len() != nx || tau.len() != nx || generator.len() != nx {
            return shape(format!("tables disagree on |X| = {nx}"));
        }
        let na = policy[0].len();
        let ny = tau[0].first().map_or(0, Vec::len);
        let nz = generator[0].first().and_then(|r| r.first()).map_or(0, Vec::len);
        for x in 0..nx {
            if policy[x].len() != na || tau[x].len() != na || generator[x].len() != na {
                return shape(format!("row x = {x} disagrees on |A| = {na}"));
            }
            check_distribution(&policy[x])?;
            for a in 0..na {
                if tau[x][a].len() != ny || generator[x][a].len() != ny {
                    return shape(format!("row ({x}, {a}) disagrees on |Y| = {ny}"));
                }
                check_distribution(&tau[x][a])?;
                for y in 0..ny {
                    if generator[x][a][y].len() != nz {
                        return shape(format!("row ({x}, {a}, {y}) disagrees on |Z| = {nz}"));
                    }
                    check_distribution(&generator[x][a][y])?;
                }
            }
        }
        let mut z_given_xa = vec![vec![vec![0.0; nz]; na]; nx];
        let mut z_marginal = vec![0.0; nz];
        for x in 0..nx {
            for a in 0..na {
                for y in 0..ny {
                    for z in 0..nz {
                        z_given_xa[x][a][z] += tau[x][a][y] * generator[x][a][y][z];
                    }
                }
                let w = rho[x] * policy[x][a];
                for z in 0..nz {
                    z_marginal[z] += w * z_given_xa[x][a][z];
                }
            }
        }
        Ok(Self { rho, policy, tau, generator, z_given_xa, z_marginal })
    }

    /// The same world with a different generator.
    pub fn with_generator(&self, generator: Vec<Vec<Vec<Vec<f64>>>>) -> Result<Self, OracleError> {
        Self::new(self.rho.clone(), self.policy.clone(), self.tau.clone(), generator)
    }

    pub fn num_x(&self) -> usize {
        self.rho.len()
    }

    pub fn num_a(&self) -> usize {
        self.policy[0].len()
    }

    pub fn num_y(&self) -> usize {
        self.tau[0][0].len()
    }

    pub fn num_z(&self) -> usize {
        self.z_marginal.len()
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn policy(&self, x: usize) -> &[f64] {
        &self.policy[x]
    }

    pub fn tau(&self, x: usize, a: usize) -> &[f64] {
        &self.tau[x][a]
    }

    pub fn generator(&self, x: usize, a: usize, y: usize) -> &[f64] {
        &self.generator[x][a][y]
    }

    pub fn generator_table(&self) -> &[Vec<Vec<Vec<f64>>>] {
        &self.generator
    }

    /// `p(z|x,a) = Σ_y τ(y|x,a) p(z|x,a,y)`.
    pub fn z_given_xa(&self, x: usize, a: usize) -> &[f64] {
        &self.z_given_xa[x][a]
    }

    /// `p(z) = Σ_{x,a} ρ(x) π(a|x) p(z|x,a)`.
    pub fn z_marginal(&self) -> &[f64] {
        &self.z_marginal
    }

    /// `p(y|x,a,z)` by Bayes' rule; `None` when `p(z|x,a) = 0`.
    pub fn y_given_xaz(&self, x: usize, a: usize, z: usize) -> Option<Vec<f64>> {
        let pz = self.z_given_xa[x][a][z];
        if pz <= 0.0 {
            return None;
        }
        Some((0..self.num_y()).map(|y| self.tau[x][a][y] * self.generator[x][a][y][z] / pz).collect())
    }

    /// `(x, a)` pairs with positive visitation.
    pub fn visited(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for x in 0..self.num_x() {
            for a in 0..self.num_a() {
                if self.rho[x] * self.policy[x][a] > 0.0 {
                    out.push((x, a));
                }
            }
        }
        out
    }
}

/// Critic energies `g(x,a,z)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteCritic {
    table: Vec<Vec<Vec<f64>>>,
}

impl DiscreteCritic {
    pub fn new(table: Vec<Vec<Vec<f64>>>) -> Result<Self, OracleError> {
        for (x, rx) in table.iter().enumerate() {
            for (a, ra) in rx.iter().enumerate() {
                if let Some(z) = ra.iter().position(|g| !g.is_finite()) {
                    return Err(OracleError::NonFiniteCritic { x, a, z });
                }
            }
        }
        Ok(Self { table })
    }

    pub fn constant(nx: usize, na: usize, nz: usize, value: f64) -> Self {
        Self { table: vec![vec![vec![value; nz]; na]; nx] }
    }

    /// The critic whose energies are the exact PMI of `joint`.
    pub fn exact_pmi(joint: &DiscreteJoint) -> Result<Self, OracleError> {
        let mut table = vec![vec![vec![0.0; joint.num_z()]; joint.num_a()]; joint.num_x()];
        for (x, rx) in table.iter_mut().enumerate() {
            for (a, ra) in rx.iter_mut().enumerate() {
                for (z, g) in ra.iter_mut().enumerate() {
                    *g = exact_pmi(joint, x, a, z)?;
                }
            }
        }
        Self::new(table)
    }

    pub fn energies(&self, x: usize, a: usize) -> &[f64] {
        &self.table[x][a]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entropy_examples() {
        assert!((entropy(&[0.25; 4]).unwrap() - 4f64.ln()).abs() < 1e-15);
        assert_eq!(entropy(&[0.0, 1.0, 0.0]).unwrap(), 0.0);
        assert!((entropy(&[0.5, 0.5]).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!(entropy(&[0.5, 0.6]).is_err());
        assert!(entropy(&[-0.5, 1.5]).is_err());
    }

    #[test]
    fn kl_examples() {
        let p = [0.1, 0.2, 0.3, 0.4];
        assert_eq!(kl(&p, &p).unwrap(), 0.0);
        let u = [0.25; 4];
        assert!((kl(&p, &u).unwrap() - (4f64.ln() - entropy(&p).unwrap())).abs() < 1e-14);
        assert_eq!(kl(&[0.5, 0.5], &[1.0, 0.0]).unwrap(), f64::INFINITY);
        assert!(kl(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn joint_rejects_bad_rows() {
        let ok = DiscreteJoint::new(vec![1.0], vec![vec![1.0]], vec![vec![vec![1.0]]], vec![vec![vec![vec![1.0]]]]);
        assert!(ok.is_ok());
        let bad = DiscreteJoint::new(vec![1.0], vec![vec![1.0]], vec![vec![vec![0.9]]], vec![vec![vec![vec![1.0]]]]);
        assert!(matches!(bad, Err(OracleError::NotDistribution(_))));
    }

    #[test]
    fn critic_rejects_non_finite() {
        let e = DiscreteCritic::new(vec![vec![vec![0.0, f64::NAN]]]).unwrap_err();
        assert_eq!(e, OracleError::NonFiniteCritic { x: 0, a: 0, z: 1 });
    }
}
