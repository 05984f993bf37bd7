//! Curiosity objectives: prediction and reconstruction losses, the batched
//! contrastive loss, per-transition intrinsic rewards and their normalization,
//! plus the world-model update steps in [`train`].

mod train;

use serde::{Deserialize, Serialize};

use crate::ndgrad::{log_sum_exp, AdamConfig, Graph, NdError, Var};

pub use train::{
    build_forward, byol_explore_update, byol_hindsight_update, critic_step, evaluate, model_step, ForwardPass,
    LossBreakdown, SegmentBatch, TermVars, UpdateOutput, WorldModelOptim,
};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CuriosityError {
    #[error("vectors of length {0} and {1}")]
    Dimension(usize, usize),
    #[error("contrastive batch needs at least 2 items, got {0}")]
    BatchTooSmall(usize),
    #[error("{0}")]
    Misaligned(String),
    #[error(transparent)]
    Graph(#[from] NdError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HindsightTrainConfig {
    /// Weight `1/λ` on the reconstruction term, for both learning and rewards.
    pub lambda: f64,
    /// Critic energies are divided by this before the contrastive softmax.
    pub temperature: f64,
    pub horizon: usize,
    pub ema: f64,
    pub model_optim: AdamConfig,
    pub critic_optim: AdamConfig,
    /// Critic ascent steps per model descent step.
    pub critic_steps: usize,
}

impl Default for HindsightTrainConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            temperature: 0.5,
            horizon: 1,
            ema: 0.99,
            model_optim: AdamConfig::with_lr(1e-3),
            critic_optim: AdamConfig::with_lr(3e-3),
            critic_steps: 1,
        }
    }
}

impl HindsightTrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.lambda > 0.0) {
            return Err("lambda must be positive".into());
        }
        if !(self.temperature > 0.0) {
            return Err("temperature must be positive".into());
        }
        if self.horizon == 0 {
            return Err("horizon must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.ema) {
            return Err("ema must lie in [0, 1]".into());
        }
        Ok(())
    }
}

/// `‖x − x̂‖²`.
pub fn prediction_loss(x_target: &[f64], x_hat: &[f64]) -> Result<f64, CuriosityError> {
    if x_target.len() != x_hat.len() {
        return Err(CuriosityError::Dimension(x_target.len(), x_hat.len()));
    }
    Ok(x_target.iter().zip(x_hat).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// Same form as [`prediction_loss`], applied to a reconstruction.
pub fn reconstruction_loss(x_target: &[f64], x_hat: &[f64]) -> Result<f64, CuriosityError> {
    prediction_loss(x_target, x_hat)
}

/// `ln[ e^{g₊} / (1/K)(e^{g₊} + Σ e^{g₋}) ]` on energies divided by
/// `temperature`, with `K = 1 + negatives`.
pub fn contrastive_inner(g_pos: f64, g_negs: &[f64], temperature: f64) -> f64 {
    let k = (g_negs.len() + 1) as f64;
    let mut scaled = Vec::with_capacity(g_negs.len() + 1);
    scaled.push(g_pos / temperature);
    scaled.extend(g_negs.iter().map(|g| g / temperature));
    let v = scaled[0] - log_sum_exp(&scaled) + k.ln();
    // The algebra is exactly zero for a single sample or equal energies; do
    // not let rounding in the log-sum-exp turn that into ±1e-16.
    if g_negs.iter().all(|&g| g == g_pos) {
        0.0
    } else {
        v
    }
}

/// Batched contrastive loss where each item's negatives are the other items.
///
/// `energy(j, k)` is the critic energy of item `j`'s `(b, a)` against item
/// `k`'s `z`. Returns the mean and the per-item values.
pub fn contrastive_batch_loss(
    items: usize,
    energy: impl Fn(usize, usize) -> f64,
    temperature: f64,
) -> Result<(f64, Vec<f64>), CuriosityError> {
    if items < 2 {
        return Err(CuriosityError::BatchTooSmall(items));
    }
    let per: Vec<f64> = (0..items)
        .map(|j| {
            let negs: Vec<f64> = (0..items).filter(|&k| k != j).map(|k| energy(j, k)).collect();
            contrastive_inner(energy(j, j), &negs, temperature)
        })
        .collect();
    Ok((per.iter().sum::<f64>() / items as f64, per))
}

/// Graph form of the batched contrastive loss on a `[rows, K]` energy matrix
/// whose positive for row `j` sits in column `j mod K`. Returns `[rows]`.
pub fn contrastive_rows(g: &mut Graph, energies: Var, temperature: f64) -> Result<Var, NdError> {
    let shape = g.shape(energies).to_vec();
    let (rows, k) = (shape[0], shape[1]);
    let scaled = g.scale(energies, 1.0 / temperature)?;
    let logp = g.log_softmax(scaled)?;
    let diag: Vec<usize> = (0..rows).map(|j| j % k).collect();
    let picked = g.pick(logp, &diag)?;
    g.add_scalar(picked, (k as f64).ln())
}

/// Per-term losses of a segment, indexed by horizon step `i` (1-based) and
/// start time `t`, with `envs` parallel sequences stored `t`-major.
#[derive(Clone, Debug, PartialEq)]
pub struct LossGrid {
    pub len: usize,
    pub envs: usize,
    pub horizon: usize,
    /// `rec[i - 1][t * envs + e]` for `t` in `0..=len - i`.
    pub rec: Vec<Vec<f64>>,
    /// Same layout as `rec`; all zeros for agents without a contrastive term.
    pub con: Vec<Vec<f64>>,
}

impl LossGrid {
    pub fn zeros(len: usize, envs: usize, horizon: usize) -> Self {
        let rows = |i: usize| (len + 1 - i) * envs;
        Self {
            len,
            envs,
            horizon,
            rec: (1..=horizon).map(|i| vec![0.0; rows(i)]).collect(),
            con: (1..=horizon).map(|i| vec![0.0; rows(i)]).collect(),
        }
    }

    fn validate(&self) -> Result<(), CuriosityError> {
        if self.horizon == 0 || self.horizon > self.len {
            return Err(CuriosityError::Misaligned(format!("horizon {} for length {}", self.horizon, self.len)));
        }
        for i in 1..=self.horizon {
            let want = (self.len + 1 - i) * self.envs;
            for (name, v) in [("rec", &self.rec), ("con", &self.con)] {
                let have = v.get(i - 1).map_or(0, |r| r.len());
                if have != want {
                    return Err(CuriosityError::Misaligned(format!("{name}[{i}] has {have} terms, expected {want}")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IntrinsicRewardRecord {
    pub reward: f64,
    /// `(1/λ)·rec` part of `reward`.
    pub reconstruction: f64,
    pub contrastive: f64,
    pub normalized: f64,
}

/// Transition `s` (from `o_s` to `o_{s+1}`) collects every term `(t, i)` with
/// `t + i = s + 1`. Records are returned `s`-major, one per environment.
pub fn assemble_intrinsic_rewards(grid: &LossGrid, lambda: f64) -> Result<Vec<IntrinsicRewardRecord>, CuriosityError> {
    grid.validate()?;
    let e = grid.envs;
    let mut out = vec![
        IntrinsicRewardRecord { reward: 0.0, reconstruction: 0.0, contrastive: 0.0, normalized: 0.0 };
        grid.len * e
    ];
    for i in 1..=grid.horizon {
        for t in 0..=grid.len - i {
            let s = t + i - 1;
            for env in 0..e {
                let r = &mut out[s * e + env];
                r.reconstruction += grid.rec[i - 1][t * e + env] / lambda;
                r.contrastive += grid.con[i - 1][t * e + env];
            }
        }
    }
    for r in &mut out {
        r.reward = r.reconstruction + r.contrastive;
    }
    Ok(out)
}

/// Divides rewards by a running root-mean-square estimate.
///
/// The second moment `E[r²]` is tracked with an exponential moving average
/// and bias-corrected like Adam's moments, so a constant reward `c` maps to
/// exactly 1 from the first batch on.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardNormalizer {
    pub decay: f64,
    pub floor: f64,
    second_moment: f64,
    updates: i32,
}

impl Default for RewardNormalizer {
    fn default() -> Self {
        Self::new(0.99, 1e-8)
    }
}

impl RewardNormalizer {
    pub fn new(decay: f64, floor: f64) -> Self {
        Self { decay, floor, second_moment: 0.0, updates: 0 }
    }

    pub fn scale(&self) -> f64 {
        if self.updates == 0 {
            return self.floor.max(1.0);
        }
        let debiased = self.second_moment / (1.0 - self.decay.powi(self.updates));
        debiased.sqrt().max(self.floor)
    }

    /// Updates the statistics with the batch, then normalizes it.
    pub fn normalize(&mut self, rewards: &[f64]) -> Vec<f64> {
        if !rewards.is_empty() {
            let m = rewards.iter().map(|r| r * r).sum::<f64>() / rewards.len() as f64;
            self.second_moment = self.decay * self.second_moment + (1.0 - self.decay) * m;
            self.updates = self.updates.saturating_add(1);
        }
        let s = self.scale();
        rewards.iter().map(|r| r / s).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prediction_loss_examples() {
        let x = [0.6, 0.8];
        assert_eq!(prediction_loss(&x, &x).unwrap(), 0.0);
        assert!((prediction_loss(&x, &[-0.6, -0.8]).unwrap() - 4.0).abs() < 1e-12);
        assert!((prediction_loss(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - 2.0).abs() < 1e-15);
        assert_eq!(reconstruction_loss(&[1.0], &[1.0, 0.0]), Err(CuriosityError::Dimension(1, 2)));
    }

    #[test]
    fn contrastive_inner_examples() {
        assert_eq!(contrastive_inner(3.7, &[], 0.5), 0.0);
        assert_eq!(contrastive_inner(1.2, &[1.2, 1.2, 1.2], 0.5), 0.0);
        let want = 1.0 - ((1f64.exp() + 1.0) / 2.0).ln();
        assert!((contrastive_inner(1.0, &[0.0], 1.0) - want).abs() < 1e-12);
        assert!((want - 0.37988).abs() < 1e-5);
    }

    #[test]
    fn batch_loss_edge_cases() {
        assert_eq!(contrastive_batch_loss(1, |_, _| 0.0, 1.0), Err(CuriosityError::BatchTooSmall(1)));
        let (m, per) = contrastive_batch_loss(2, |_, _| 0.4, 0.5).unwrap();
        assert_eq!(m, 0.0);
        assert_eq!(per, vec![0.0, 0.0]);
    }

    #[test]
    fn horizon_one_rewards() {
        let mut grid = LossGrid::zeros(3, 1, 1);
        grid.rec[0] = vec![0.5, 1.0, 2.0];
        grid.con[0] = vec![0.1, -0.2, 0.0];
        let out = assemble_intrinsic_rewards(&grid, 2.0).unwrap();
        let rewards: Vec<f64> = out.iter().map(|r| r.reward).collect();
        assert_eq!(rewards, vec![0.25 + 0.1, 0.5 - 0.2, 1.0]);
        let zero = assemble_intrinsic_rewards(&LossGrid::zeros(3, 2, 1), 1.0).unwrap();
        assert!(zero.iter().all(|r| r.reward == 0.0));
    }

    #[test]
    fn horizon_three_term_counts() {
        let (len, h) = (6, 3);
        let mut grid = LossGrid::zeros(len, 1, h);
        for v in &mut grid.rec {
            v.fill(1.0);
        }
        let out = assemble_intrinsic_rewards(&grid, 1.0).unwrap();
        // Transition s gets one term per i in 1..=min(h, s + 1).
        let counts: Vec<f64> = out.iter().map(|r| r.reward).collect();
        assert_eq!(counts, vec![1.0, 2.0, 3.0, 3.0, 3.0, 3.0]);
        let total_terms: usize = grid.rec.iter().map(|v| v.len()).sum();
        assert_eq!(counts.iter().sum::<f64>(), total_terms as f64);
    }

    #[test]
    fn misaligned_grid_is_rejected() {
        let mut grid = LossGrid::zeros(4, 2, 2);
        grid.con[1].pop();
        assert!(matches!(assemble_intrinsic_rewards(&grid, 1.0), Err(CuriosityError::Misaligned(_))));
    }

    #[test]
    fn normalizer_examples() {
        let mut n = RewardNormalizer::default();
        assert_eq!(n.normalize(&[0.0, 0.0]), vec![0.0, 0.0]);
        let mut n = RewardNormalizer::default();
        for _ in 0..50 {
            let out = n.normalize(&[3.0; 4]);
            assert!(out.iter().all(|x| (x - 1.0).abs() < 1e-12));
        }
        let mut n = RewardNormalizer::default();
        let out = n.normalize(&[1e-20]);
        assert!(out[0].is_finite() && out[0] <= 1e-11);
    }
}
