use std::f64::consts::PI;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    check_distribution, entropy, kl_unchecked, log_sum_exp, BoundReport, DiscreteCritic, DiscreteJoint, OracleError,
    MAX_ENUMERATION, TABLE_TOL,
};

/// Tolerance of the exact verifiers.
const EXACT_TOL: f64 = 1e-9;

/// `ln(p(z|x,a) / p(z))`; `−∞` when `p(z|x,a) = 0`.
pub fn exact_pmi(joint: &DiscreteJoint, x: usize, a: usize, z: usize) -> Result<f64, OracleError> {
    let pz = joint.z_marginal()[z];
    if pz <= 0.0 {
        return Err(OracleError::ZeroMarginal { z });
    }
    Ok((joint.z_given_xa(x, a)[z] / pz).ln())
}

/// `E_{Y~τ(·|x,a), Z~p(·|x,a,Y)} PMI(x,a;Z)` by nested summation.
pub fn exact_invariance_bonus(joint: &DiscreteJoint, x: usize, a: usize) -> f64 {
    let mut s = 0.0;
    for (y, &py) in joint.tau(x, a).iter().enumerate() {
        if py == 0.0 {
            continue;
        }
        for (z, &pzy) in joint.generator(x, a, y).iter().enumerate() {
            if pzy == 0.0 {
                continue;
            }
            let pmi = (joint.z_given_xa(x, a)[z] / joint.z_marginal()[z]).ln();
            s += py * pzy * pmi;
        }
    }
    s
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Sampling {
    /// Enumerate every tuple of negatives.
    Exact,
    MonteCarlo { samples: usize, seed: u64 },
}

/// Expectation with its standard error (zero for exact values).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
}

fn enumeration_size(nz: usize, negatives: usize) -> Result<usize, OracleError> {
    let terms = (nz as u128).pow(negatives as u32);
    if terms > MAX_ENUMERATION as u128 {
        return Err(OracleError::EnumerationTooLarge { terms });
    }
    Ok(terms as usize)
}

/// Calls `f(weight, tuple)` for every tuple of `negatives` i.i.d. draws from `p`.
fn for_each_tuple(p: &[f64], negatives: usize, mut f: impl FnMut(f64, &[usize])) {
    let mut idx = vec![0usize; negatives];
    loop {
        let w: f64 = idx.iter().map(|&i| p[i]).product();
        if w > 0.0 {
            f(w, &idx);
        }
        let mut d = 0;
        loop {
            if d == negatives {
                return;
            }
            idx[d] += 1;
            if idx[d] < p.len() {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
    }
}

/// `ln K + g(z) − ln(e^{g(z)} + Σ_i e^{g(z_i)})`.
fn contrastive_term(g: &[f64], z: usize, negatives: &[usize], k: usize) -> f64 {
    let lse = log_sum_exp(std::iter::once(g[z]).chain(negatives.iter().map(|&i| g[i])));
    (k as f64).ln() + g[z] - lse
}

fn check_k(k: usize) -> Result<(), OracleError> {
    if k == 0 {
        return Err(OracleError::Shape("K must be at least 1".into()));
    }
    Ok(())
}

/// Expected contrastive objective at `(x, a)`: positive `z ~ p(·|x,a)`, `K − 1`
/// negatives i.i.d. from `p(z)`.
pub fn exact_contrastive_bonus(
    joint: &DiscreteJoint,
    critic: &DiscreteCritic,
    x: usize,
    a: usize,
    k: usize,
    sampling: Sampling,
) -> Result<Estimate, OracleError> {
    check_k(k)?;
    let g = critic.energies(x, a);
    if g.len() != joint.num_z() {
        return Err(OracleError::Shape(format!("critic has {} energies for |Z| = {}", g.len(), joint.num_z())));
    }
    let post = joint.z_given_xa(x, a);
    match sampling {
        Sampling::Exact => {
            enumeration_size(joint.num_z(), k - 1)?;
            let mut s = 0.0;
            for_each_tuple(joint.z_marginal(), k - 1, |w, negs| {
                for (z, &pz) in post.iter().enumerate() {
                    if pz > 0.0 {
                        s += w * pz * contrastive_term(g, z, negs, k);
                    }
                }
            });
            Ok(Estimate { mean: s, stderr: 0.0 })
        }
        Sampling::MonteCarlo { samples, seed } => {
            if samples < 2 {
                return Err(OracleError::Shape("Monte Carlo needs at least two samples".into()));
            }
            let pos = WeightedIndex::new(post).map_err(|e| OracleError::NotDistribution(e.to_string()))?;
            let neg = WeightedIndex::new(joint.z_marginal()).map_err(|e| OracleError::NotDistribution(e.to_string()))?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut negs = vec![0usize; k - 1];
            let (mut mean, mut m2) = (0.0, 0.0);
            for n in 1..=samples {
                let z = pos.sample(&mut rng);
                for v in negs.iter_mut() {
                    *v = neg.sample(&mut rng);
                }
                let v = contrastive_term(g, z, &negs, k);
                let d = v - mean;
                mean += d / n as f64;
                m2 += d * (v - mean);
            }
            let var = m2 / (samples - 1) as f64;
            Ok(Estimate { mean, stderr: (var / samples as f64).sqrt() })
        }
    }
}

/// Total mass of the contrastive variational density
/// `q(z|x,a) = E_negatives[p(z) e^{g(z)} / ((e^{g(z)} + Σ_i e^{g(z_i)}) / K)]`.
/// Equality check against 1.
pub fn verify_lemma_normalization(
    joint: &DiscreteJoint,
    critic: &DiscreteCritic,
    x: usize,
    a: usize,
    k: usize,
) -> Result<BoundReport, OracleError> {
    check_k(k)?;
    enumeration_size(joint.num_z(), k - 1)?;
    let g = critic.energies(x, a);
    let pz = joint.z_marginal();
    let mut total = 0.0;
    for_each_tuple(pz, k - 1, |w, negs| {
        for z in 0..pz.len() {
            if pz[z] > 0.0 {
                total += w * pz[z] * contrastive_term(g, z, negs, k).exp();
            }
        }
    });
    Ok(BoundReport::equal(total, 1.0, EXACT_TOL))
}

/// Pointwise Barber–Agakov bound for a variational row `q(z|x,a)`:
/// `lhs = E_{p(z|x,a)} ln(q/p(z))`, `rhs = E_{p(z|x,a)} PMI`. `holds` also
/// requires `gap` to equal `KL(p(·|x,a) ‖ q)` within tolerance.
pub fn verify_ba_bound(joint: &DiscreteJoint, q: &[f64], x: usize, a: usize) -> Result<BoundReport, OracleError> {
    check_distribution(q)?;
    if q.len() != joint.num_z() {
        return Err(OracleError::Shape(format!("q has {} entries for |Z| = {}", q.len(), joint.num_z())));
    }
    let post = joint.z_given_xa(x, a);
    let pz = joint.z_marginal();
    let (mut lhs, mut rhs) = (0.0, 0.0);
    for z in 0..post.len() {
        if post[z] > 0.0 {
            lhs += post[z] * (q[z] / pz[z]).ln();
            rhs += post[z] * (post[z] / pz[z]).ln();
        }
    }
    let mut r = BoundReport::upper(lhs, rhs, EXACT_TOL);
    let divergence = kl_unchecked(post, q);
    let identity = if divergence.is_finite() { (r.gap - divergence).abs() <= EXACT_TOL } else { r.gap == divergence };
    r.holds &= identity;
    Ok(r)
}

/// Contrastive bonus ≤ invariance bonus at every `(x, a)`, enumerated exactly.
/// The report carries the pair where the bound is tightest.
pub fn verify_contrastive_lower_bound(
    joint: &DiscreteJoint,
    critic: &DiscreteCritic,
    k: usize,
) -> Result<BoundReport, OracleError> {
    let mut worst: Option<BoundReport> = None;
    for x in 0..joint.num_x() {
        for a in 0..joint.num_a() {
            let c = exact_contrastive_bonus(joint, critic, x, a, k, Sampling::Exact)?.mean;
            let r = BoundReport::upper(c, exact_invariance_bonus(joint, x, a), EXACT_TOL);
            if worst.as_ref().is_none_or(|w| r.gap < w.gap) {
                worst = Some(r);
            }
        }
    }
    worst.ok_or_else(|| OracleError::Shape("empty joint".into()))
}

/// Invariance bonus minus the Monte Carlo contrastive bonus at `(x, a)`,
/// with the critic set to the exact PMI.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GapPoint {
    pub k: usize,
    pub gap: f64,
    pub stderr: f64,
}

pub fn contrastive_gap_trend(
    joint: &DiscreteJoint,
    x: usize,
    a: usize,
    ks: &[usize],
    samples: usize,
    seed: u64,
) -> Result<Vec<GapPoint>, OracleError> {
    let critic = DiscreteCritic::exact_pmi(joint)?;
    let inv = exact_invariance_bonus(joint, x, a);
    ks.iter()
        .map(|&k| {
            let sampling = Sampling::MonteCarlo { samples, seed: seed.wrapping_add(k as u64) };
            let e = exact_contrastive_bonus(joint, &critic, x, a, k, sampling)?;
            Ok(GapPoint { k, gap: inv - e.mean, stderr: e.stderr })
        })
        .collect()
}

/// `I(Y;Z|x,a)` from its definition `E_{Z~p(·|x,a)} KL(p(Y|x,a,Z) ‖ τ(Y|x,a))`
/// (lhs) and as `H[Y|x,a] − H[Y|x,a,Z]` (rhs). Equality check.
pub fn verify_cmi_identity(joint: &DiscreteJoint, x: usize, a: usize) -> Result<BoundReport, OracleError> {
    let tau = joint.tau(x, a);
    let post = joint.z_given_xa(x, a);
    let (mut definition, mut cond_entropy) = (0.0, 0.0);
    for (z, &pz) in post.iter().enumerate() {
        let Some(py) = joint.y_given_xaz(x, a, z) else { continue };
        definition += pz * kl_unchecked(&py, tau);
        cond_entropy += pz * entropy_unnormalized(&py);
    }
    Ok(BoundReport::equal(definition, entropy(tau)? - cond_entropy, EXACT_TOL))
}

/// Entropy of a row that is a distribution up to rounding.
fn entropy_unnormalized(p: &[f64]) -> f64 {
    p.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.ln()).sum()
}

/// `−½ ln(λπ) − ‖y − f‖² / λ`.
pub fn gaussian_loglik(y: &[f64], f: &[f64], lambda: f64) -> Result<f64, OracleError> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(OracleError::Lambda(lambda));
    }
    if y.len() != f.len() {
        return Err(OracleError::Shape(format!("outcome of length {} vs reconstruction of length {}", y.len(), f.len())));
    }
    let sq: f64 = y.iter().zip(f).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(-0.5 * (lambda * PI).ln() - sq / lambda)
}

/// Tabular hindsight model: generator `p(z|x,a,y)` indexed `[x][a][y][z]`
/// and reconstructor `f(x,a,z)` indexed `[x][a][z]`, a point in the space of
/// outcome codes.
#[derive(Clone, Debug, PartialEq)]
pub struct HindsightTables {
    pub generator: Vec<Vec<Vec<Vec<f64>>>>,
    pub reconstructor: Vec<Vec<Vec<Vec<f64>>>>,
}

/// One visited `(x, a)` of [`verify_theorem1`].
#[derive(Clone, Debug, PartialEq)]
pub struct Theorem1Check {
    pub x: usize,
    pub a: usize,
    /// `R_rec / λ + R_inv`.
    pub reward: f64,
    /// `KL(τ(·|x,a) ‖ τ_model(·|x,a))`.
    pub model_kl: f64,
    /// `½ ln(λπ)`.
    pub constraint_lhs: f64,
    /// `H[Y|x,a,Z] + KL(p(Z|x,a) ‖ p(Z))`.
    pub constraint_rhs: f64,
    /// `lhs = model_kl`, `rhs = reward`; not applicable when the λ constraint fails.
    pub report: BoundReport,
}

/// Hindsight reward against the model divergence at every visited `(x, a)`.
/// Outcome `y` is embedded as `codes[y]`; the model is
/// `τ_model(y|x,a) = Σ_z p(z|x,a) exp(gaussian_loglik(codes[y], f(x,a,z), λ))`.
pub fn verify_theorem1(
    joint: &DiscreteJoint,
    model: &HindsightTables,
    codes: &[Vec<f64>],
    lambda: f64,
) -> Result<Vec<Theorem1Check>, OracleError> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(OracleError::Lambda(lambda));
    }
    if codes.len() != joint.num_y() {
        return Err(OracleError::Shape(format!("{} codes for |Y| = {}", codes.len(), joint.num_y())));
    }
    let joint = joint.with_generator(model.generator.clone())?;
    let constraint_lhs = 0.5 * (lambda * PI).ln();
    let mut out = Vec::new();
    for (x, a) in joint.visited() {
        let f = &model.reconstructor[x][a];
        if f.len() != joint.num_z() {
            return Err(OracleError::Shape(format!("reconstructor row ({x}, {a}) has {} entries", f.len())));
        }
        let tau = joint.tau(x, a);
        let mut rec = 0.0;
        for (y, &py) in tau.iter().enumerate() {
            if py == 0.0 {
                continue;
            }
            for (z, &pzy) in joint.generator(x, a, y).iter().enumerate() {
                if pzy > 0.0 {
                    let sq: f64 = codes[y].iter().zip(&f[z]).map(|(u, v)| (u - v) * (u - v)).sum();
                    rec += py * pzy * sq;
                }
            }
        }
        let reward = rec / lambda + exact_invariance_bonus(&joint, x, a);

        let post = joint.z_given_xa(x, a);
        let mut cond_entropy = 0.0;
        let mut model_tau = vec![0.0; joint.num_y()];
        for (z, &pz) in post.iter().enumerate() {
            if pz == 0.0 {
                continue;
            }
            if let Some(py) = joint.y_given_xaz(x, a, z) {
                cond_entropy += pz * entropy_unnormalized(&py);
            }
            for (y, m) in model_tau.iter_mut().enumerate() {
                *m += pz * gaussian_loglik(&codes[y], &f[z], lambda)?.exp();
            }
        }
        let constraint_rhs = cond_entropy + kl_unchecked(post, joint.z_marginal());
        let model_kl = kl_unchecked(tau, &model_tau);
        let mut report = BoundReport::upper(model_kl, reward, EXACT_TOL);
        report.applicable = constraint_lhs <= constraint_rhs + TABLE_TOL;
        out.push(Theorem1Check { x, a, reward, model_kl, constraint_lhs, constraint_rhs, report });
    }
    Ok(out)
}
