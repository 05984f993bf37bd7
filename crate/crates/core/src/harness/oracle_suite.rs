use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::run::stream_rng;
use super::HarnessError;
use crate::oracle::{
    contrastive_gap_trend, dice_codes, dice_ground_truth, dice_joint, entropy, exact_invariance_bonus, kl, perturb_generator, random_critic, random_joint, random_simplex, verify_ba_bound,
    verify_cmi_identity, verify_contrastive_lower_bound, verify_lemma_normalization, verify_theorem1, DiscreteCritic,
    DiscreteJoint, HindsightTables, JointSizes, OracleError,
};
use crate::worlds::DICE_CONTEXT;

pub const SUITES: [&str; 4] = ["lemmas", "theorem1", "theorem2", "all"];
/// Master seed of the instance battery.
pub const ORACLE_SEED: u64 = 20_230_601;
pub const RANDOM_INSTANCES: usize = 20;
pub const PERTURBED_GENERATORS: usize = 10;
/// Monte Carlo draws per K in the K-growth check.
pub const TREND_SAMPLES: usize = 1_000_000;
const TOL: f64 = 1e-9;

/// One verifier applied to one instance. `value` is the statistic compared
/// against `tolerance`; `detail` says which.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleRow {
    pub check: String,
    pub instance: usize,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleReport {
    pub suite: String,
    pub rows: Vec<OracleRow>,
}

impl OracleReport {
    pub fn all_passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed)
    }

    /// Fixed-width pass/fail table with a closing summary line.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<28} {:>4} {:>13} {:>9}  {:<4}  detail", "check", "inst", "value", "tol", "ok");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<28} {:>4} {:>13.4e} {:>9.1e}  {:<4}  {}",
                r.check,
                r.instance,
                r.value,
                r.tolerance,
                if r.passed { "PASS" } else { "FAIL" },
                r.detail
            );
        }
        let failed = self.rows.iter().filter(|r| !r.passed).count();
        let _ = writeln!(s, "suite {}: {} checks, {} failed", self.suite, self.rows.len(), failed);
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn row(check: &str, instance: usize, value: f64, tolerance: f64, passed: bool, detail: &str) -> OracleRow {
    OracleRow { check: check.into(), instance, value, tolerance, passed, detail: detail.into() }
}

fn oracle_err(e: OracleError) -> HarnessError {
    HarnessError::Runtime(format!("oracle: {e}"))
}

/// Sizes capped at |X|·|A| ≤ 16, |Y| ≤ 6, |Z| ≤ 8.
fn random_instance(rng: &mut ChaCha8Rng) -> Result<DiscreteJoint, HarnessError> {
    let sizes = JointSizes {
        x: rng.random_range(2..=4),
        a: rng.random_range(2..=4),
        y: rng.random_range(2..=6),
        z: rng.random_range(2..=8),
    };
    random_joint(rng, sizes).map_err(oracle_err)
}

fn pairs(j: &DiscreteJoint) -> impl Iterator<Item = (usize, usize)> + '_ {
    (0..j.num_x()).flat_map(move |x| (0..j.num_a()).map(move |a| (x, a)))
}

fn instance_rng(check: u64, i: usize) -> ChaCha8Rng {
    stream_rng(ORACLE_SEED + i as u64, check)
}

fn lemmas() -> Result<Vec<OracleRow>, HarnessError> {
    let mut rows = Vec::new();
    for i in 0..RANDOM_INSTANCES {
        let mut rng = instance_rng(1, i);
        let j = random_instance(&mut rng)?;
        let (mut ba_err, mut ba_ok, mut tight, mut tight_ok) = (0f64, true, 0f64, true);
        for (x, a) in pairs(&j) {
            let q = random_simplex(&mut rng, j.num_z());
            let r = verify_ba_bound(&j, &q, x, a).map_err(oracle_err)?;
            let d = kl(j.z_given_xa(x, a), &q).map_err(oracle_err)?;
            ba_err = ba_err.max((r.gap - d).abs());
            ba_ok &= r.holds && r.gap >= -TOL;
            let r = verify_ba_bound(&j, j.z_given_xa(x, a), x, a).map_err(oracle_err)?;
            tight = tight.max(r.gap.abs());
            tight_ok &= r.holds;
        }
        rows.push(row("lemma1_barber_agakov", i, ba_err, TOL, ba_ok && ba_err <= TOL, "max |gap - KL(post||q)|"));
        rows.push(row("lemma1_tight_at_posterior", i, tight, TOL, tight_ok && tight <= TOL, "max |gap| with q = posterior"));
    }
    for i in 0..RANDOM_INSTANCES {
        let mut rng = instance_rng(2, i);
        let j = random_instance(&mut rng)?;
        let k = rng.random_range(1..=4);
        let c = random_critic(&mut rng, j.num_x(), j.num_a(), j.num_z(), 3.0);
        rows.push(normalization_row("lemma2_normalization", i, &j, &c, k)?);
    }
    for i in 0..5 {
        let mut rng = instance_rng(3, i);
        let j = random_instance(&mut rng)?;
        let c = random_critic(&mut rng, j.num_x(), j.num_a(), j.num_z(), 30.0);
        rows.push(normalization_row("lemma2_energy_spread_30", i, &j, &c, 4)?);
    }
    for i in 0..RANDOM_INSTANCES {
        let mut rng = instance_rng(4, i);
        let j = random_instance(&mut rng)?;
        let (mut worst, mut ok) = (0f64, true);
        for (x, a) in pairs(&j) {
            let r = verify_cmi_identity(&j, x, a).map_err(oracle_err)?;
            worst = worst.max(r.gap.abs());
            ok &= r.holds;
        }
        rows.push(row("lemma5_cmi_identity", i, worst, TOL, ok, "max |definition - entropy difference|"));
    }
    let dice = dice_joint();
    let (mut worst, mut ok) = (0f64, true);
    for bet in 0..dice.num_a() {
        let r = verify_cmi_identity(&dice, DICE_CONTEXT, bet).map_err(oracle_err)?;
        let h = entropy(dice.tau(DICE_CONTEXT, bet)).map_err(oracle_err)?;
        worst = worst.max((r.lhs - h).abs());
        ok &= r.holds;
    }
    rows.push(row("lemma5_dice_full_resolution", 0, worst, TOL, ok && worst <= TOL, "max |I(Y;Z|x,a) - H[Y|x,a]|"));
    for i in 0..RANDOM_INSTANCES {
        let mut rng = instance_rng(5, i);
        let j = random_instance(&mut rng)?;
        let mut worst = 0f64;
        for (x, a) in pairs(&j) {
            let d = kl(j.z_given_xa(x, a), j.z_marginal()).map_err(oracle_err)?;
            worst = worst.max((exact_invariance_bonus(&j, x, a) - d).abs());
        }
        rows.push(row("invariance_equals_kl", i, worst, TOL, worst <= TOL, "max |R_inv - KL(p(z|x,a)||p(z))|"));
    }
    Ok(rows)
}

fn normalization_row(
    check: &str,
    i: usize,
    j: &DiscreteJoint,
    c: &DiscreteCritic,
    k: usize,
) -> Result<OracleRow, HarnessError> {
    let (mut worst, mut ok) = (0f64, true);
    for (x, a) in pairs(j) {
        let r = verify_lemma_normalization(j, c, x, a, k).map_err(oracle_err)?;
        worst = worst.max(r.gap.abs());
        ok &= r.holds;
    }
    Ok(row(check, i, worst, TOL, ok, &format!("max |sum_z q - 1|, K = {k}")))
}

fn theorem1() -> Result<Vec<OracleRow>, HarnessError> {
    let dice = dice_joint();
    let codes = dice_codes();
    let truth = dice_ground_truth();
    let lambda = 1.0 / PI;
    let mut rows = Vec::new();

    let checks = verify_theorem1(&dice, &truth, &codes, lambda).map_err(oracle_err)?;
    let worst = checks.iter().map(|c| c.reward.max(c.model_kl)).fold(f64::NEG_INFINITY, f64::max);
    let ok = checks.iter().all(|c| c.report.applicable && c.reward <= TOL && c.model_kl <= TOL);
    rows.push(row("theorem1_ground_truth", 0, worst, TOL, ok, "max(reward, KL) over bets, lambda = 1/pi"));

    for i in 0..PERTURBED_GENERATORS {
        let mut rng = instance_rng(6, i);
        let model = HindsightTables {
            generator: perturb_generator(&mut rng, &truth.generator, 0.1),
            reconstructor: truth.reconstructor.clone(),
        };
        let checks = verify_theorem1(&dice, &model, &codes, lambda).map_err(oracle_err)?;
        let min_gap = checks.iter().map(|c| c.report.gap).fold(f64::INFINITY, f64::min);
        let ok = checks.iter().all(|c| c.report.applicable && c.report.holds && c.reward > 0.0 && c.model_kl > 0.0);
        rows.push(row("theorem1_perturbed_generator", i, min_gap, TOL, ok, "min (reward - KL) over bets"));
    }

    let checks = verify_theorem1(&dice, &truth, &codes, 1e3).map_err(oracle_err)?;
    let excess = checks.iter().map(|c| c.constraint_lhs - c.constraint_rhs).fold(f64::INFINITY, f64::min);
    let ok = checks.iter().all(|c| !c.report.applicable);
    rows.push(row("theorem1_lambda_guard", 0, excess, 0.0, ok, "lambda = 1e3 must be flagged not applicable"));
    Ok(rows)
}

fn theorem2() -> Result<Vec<OracleRow>, HarnessError> {
    let mut rows = Vec::new();
    for k in 2..=4 {
        for i in 0..RANDOM_INSTANCES {
            let mut rng = instance_rng(7, i);
            let j = random_instance(&mut rng)?;
            let c = random_critic(&mut rng, j.num_x(), j.num_a(), j.num_z(), 3.0);
            let r = verify_contrastive_lower_bound(&j, &c, k).map_err(oracle_err)?;
            rows.push(row(
                &format!("theorem2_bound_k{k}"),
                i,
                -r.gap,
                TOL,
                r.holds,
                "max (contrastive - invariance) over (x,a)",
            ));
        }
    }
    for i in 0..3 {
        let mut rng = instance_rng(8, i);
        let j = random_joint(&mut rng, JointSizes { x: 2, a: 2, y: 4, z: 8 }).map_err(oracle_err)?;
        let (x, a) = pairs(&j)
            .max_by(|p, q| exact_invariance_bonus(&j, p.0, p.1).total_cmp(&exact_invariance_bonus(&j, q.0, q.1)))
            .expect("non-empty joint");
        let trend = contrastive_gap_trend(&j, x, a, &[2, 4, 8], TREND_SAMPLES, ORACLE_SEED + i as u64)
            .map_err(oracle_err)?;
        let (g2, g8) = (trend[0], trend[2]);
        let separation = (g2.gap - g8.gap) / (g2.stderr.powi(2) + g8.stderr.powi(2)).sqrt();
        rows.push(row(
            "lemma4_gap_shrinks_with_k",
            i,
            separation,
            3.0,
            separation > 3.0,
            &format!("(gap K=2 - gap K=8)/SE; gaps {:.4} {:.4} {:.4}", trend[0].gap, trend[1].gap, trend[2].gap),
        ));
    }
    Ok(rows)
}

/// Runs one named suite of oracle checks over the seeded instance battery.
pub fn run_oracle_suite(suite: &str) -> Result<OracleReport, HarnessError> {
    let rows = match suite {
        "lemmas" => lemmas()?,
        "theorem1" => theorem1()?,
        "theorem2" => theorem2()?,
        "all" => {
            let mut r = lemmas()?;
            r.extend(theorem1()?);
            r.extend(theorem2()?);
            r
        }
        other => {
            return Err(HarnessError::Usage(format!("unknown oracle suite '{other}'; expected one of {}", SUITES.join(", "))))
        }
    };
    Ok(OracleReport { suite: suite.into(), rows })
}
