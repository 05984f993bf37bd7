//! Recurrent advantage actor-critic with n-step returns.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ndgrad::{adam_step, gru_cell, init_gru, mlp, AdamConfig, Graph, MlpShape, NdError, OptimState, ParamStore, Tensor, Var};

pub const POLICY_ENCODER: &str = "pol_enc";
pub const POLICY_CELL: &str = "pol_gru";
pub const POLICY_HEAD: &str = "pi";
pub const VALUE_HEAD: &str = "v";

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum RlError {
    #[error("empty rollout buffer")]
    EmptyBuffer,
    #[error("{0}")]
    Misaligned(String),
    #[error(transparent)]
    Graph(#[from] NdError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub obs_dim: usize,
    pub num_actions: usize,
    pub encoder_hidden: Vec<usize>,
    pub embedding: usize,
    pub hidden: usize,
    pub head_hidden: Vec<usize>,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            obs_dim: crate::worlds::OBS_DIM,
            num_actions: crate::worlds::NUM_ACTIONS,
            encoder_hidden: vec![128],
            embedding: 64,
            hidden: 64,
            head_hidden: vec![64],
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<(), String> {
        if [self.obs_dim, self.num_actions, self.embedding, self.hidden].contains(&0) {
            return Err("policy sizes must be positive".into());
        }
        if self.encoder_hidden.contains(&0) || self.head_hidden.contains(&0) {
            return Err("hidden layer widths must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct A2cConfig {
    pub gamma: f64,
    pub n_step: usize,
    pub entropy_weight: f64,
    pub value_weight: f64,
    /// Subtract the batch mean from the advantages before the policy-gradient term.
    pub center_advantages: bool,
    pub optim: AdamConfig,
}

impl Default for A2cConfig {
    fn default() -> Self {
        Self { gamma: 0.999, n_step: 16, entropy_weight: 0.001, value_weight: 0.5, center_advantages: true, optim: AdamConfig::with_lr(3e-4) }
    }
}

impl A2cConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err("gamma must lie in [0, 1]".into());
        }
        if self.n_step == 0 {
            return Err("n_step must be at least 1".into());
        }
        if self.entropy_weight < 0.0 || self.value_weight < 0.0 {
            return Err("loss weights must be non-negative".into());
        }
        Ok(())
    }
}

/// Policy trunk (encoder + GRU) with policy and value heads.
#[derive(Clone, Debug, PartialEq)]
pub struct Policy {
    pub cfg: PolicyConfig,
    pub params: ParamStore,
}

/// Graph handles for one recurrent policy step.
#[derive(Clone, Copy, Debug)]
pub struct PolicyStep {
    pub logits: Var,
    /// `[rows]`.
    pub value: Var,
    pub hidden: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActOutput {
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub next_hidden: Tensor,
}

impl Policy {
    pub fn new(cfg: PolicyConfig, rng: &mut impl Rng) -> Self {
        let mut p = ParamStore::new();
        MlpShape::new(cfg.obs_dim, &cfg.encoder_hidden, cfg.embedding).init(&mut p, POLICY_ENCODER, rng);
        init_gru(&mut p, POLICY_CELL, cfg.embedding, cfg.hidden, rng);
        MlpShape::new(cfg.hidden, &cfg.head_hidden, cfg.num_actions).init(&mut p, POLICY_HEAD, rng);
        MlpShape::new(cfg.hidden, &cfg.head_hidden, 1).init(&mut p, VALUE_HEAD, rng);
        Self { cfg, params: p }
    }

    pub fn zero_hidden(&self, rows: usize) -> Tensor {
        Tensor::zeros(&[rows, self.cfg.hidden])
    }

    pub fn step(&self, g: &mut Graph, obs: Var, hidden: Var) -> Result<PolicyStep, NdError> {
        let w = mlp(g, &self.params, POLICY_ENCODER, self.cfg.encoder_hidden.len() + 1, obs)?;
        let w = g.relu(w)?;
        let h = gru_cell(g, &self.params, POLICY_CELL, w, hidden)?;
        let layers = self.cfg.head_hidden.len() + 1;
        let logits = mlp(g, &self.params, POLICY_HEAD, layers, h)?;
        let v = mlp(g, &self.params, VALUE_HEAD, layers, h)?;
        let rows = g.shape(v)[0];
        let value = g.reshape(v, &[rows])?;
        Ok(PolicyStep { logits, value, hidden: h })
    }

    /// Samples one action per row of `obs` from the softmax of the logits.
    pub fn act(&self, obs: &Tensor, hidden: &Tensor, rng: &mut impl Rng) -> Result<ActOutput, NdError> {
        let mut g = Graph::new();
        let o = g.input("obs", obs.clone());
        let h = g.input("hidden", hidden.clone());
        let s = self.step(&mut g, o, h)?;
        let logits = g.value(s.logits);
        let (rows, _) = logits.as_matrix();
        let mut actions = Vec::with_capacity(rows);
        let mut log_probs = Vec::with_capacity(rows);
        for i in 0..rows {
            let (a, lp) = sample_categorical(logits.row(i), rng);
            actions.push(a);
            log_probs.push(lp);
        }
        Ok(ActOutput {
            actions,
            log_probs,
            values: g.value(s.value).data().to_vec(),
            next_hidden: g.value(s.hidden).clone(),
        })
    }
}

/// Softmax probabilities of a logit row.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// Draws an index from `softmax(logits)`; returns it with its log-probability.
pub fn sample_categorical(logits: &[f64], rng: &mut impl Rng) -> (usize, f64) {
    let p = softmax(logits);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut pick = p.len() - 1;
    for (i, pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            pick = i;
            break;
        }
    }
    (pick, p[pick].ln())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    IntrinsicOnly,
    Mixed,
}

/// Intrinsic-only: `intr`. Mixed: `ext + c·intr`.
pub fn mix_rewards(ext: f64, intr: f64, c: f64, regime: Regime) -> f64 {
    match regime {
        Regime::IntrinsicOnly => intr,
        Regime::Mixed => ext + c * intr,
    }
}

/// `envs` parallel segments, stored time-major (row `t * envs + e`).
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutBuffer {
    pub envs: usize,
    pub len: usize,
    /// `o_0..=o_len`, `[(len + 1) * envs, obs_dim]`.
    pub obs: Tensor,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    /// `dones[t * envs + e]`: the episode ended with transition `t`.
    pub dones: Vec<bool>,
    /// Policy hidden state before `o_0`.
    pub init_hidden: Tensor,
}

/// n-step bootstrapped returns, truncated at episode ends and at the end of
/// the segment. `values` holds `V(o_0..=o_len)` time-major.
pub fn nstep_returns(
    rewards: &[f64],
    dones: &[bool],
    values: &[f64],
    envs: usize,
    len: usize,
    gamma: f64,
    n: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; len * envs];
    for e in 0..envs {
        for t in 0..len {
            let mut g = 0.0;
            let mut discount = 1.0;
            let mut k = 0;
            loop {
                let idx = (t + k) * envs + e;
                g += discount * rewards[idx];
                discount *= gamma;
                if dones[idx] {
                    break;
                }
                k += 1;
                if k == n || t + k == len {
                    g += discount * values[(t + k) * envs + e];
                    break;
                }
            }
            out[t * envs + e] = g;
        }
    }
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct A2cStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
}

/// One optimizer step on policy-gradient, value-regression and entropy terms.
pub fn a2c_update(
    policy: &mut Policy,
    optim: &mut OptimState,
    buf: &RolloutBuffer,
    cfg: &A2cConfig,
) -> Result<A2cStats, RlError> {
    let (e, len) = (buf.envs, buf.len);
    if e == 0 || len == 0 {
        return Err(RlError::EmptyBuffer);
    }
    if buf.obs.shape() != [(len + 1) * e, policy.cfg.obs_dim]
        || buf.actions.len() != len * e
        || buf.rewards.len() != len * e
        || buf.dones.len() != len * e
        || buf.init_hidden.shape() != [e, policy.cfg.hidden]
    {
        return Err(RlError::Misaligned("rollout buffer fields disagree on envs/len".into()));
    }
    let mut g = Graph::new();
    let obs = g.input("obs", buf.obs.clone());
    let mut h = g.input("hidden", buf.init_hidden.clone());
    let mut logits = Vec::with_capacity(len);
    let mut values = Vec::with_capacity(len + 1);
    for t in 0..=len {
        let o = g.slice_rows(obs, t * e, (t + 1) * e)?;
        let s = policy.step(&mut g, o, h)?;
        values.push(s.value);
        if t == len {
            break;
        }
        logits.push(s.logits);
        h = s.hidden;
        let dones = &buf.dones[t * e..(t + 1) * e];
        if dones.iter().any(|&d| d) {
            let mask: Vec<f64> = dones
                .iter()
                .flat_map(|&d| std::iter::repeat_n(if d { 0.0 } else { 1.0 }, policy.cfg.hidden))
                .collect();
            let m = g.constant(Tensor::matrix(e, policy.cfg.hidden, mask)?);
            h = g.mul(h, m)?;
        }
    }
    let value_data: Vec<f64> = values.iter().flat_map(|v| g.value(*v).data().to_vec()).collect();
    let returns = nstep_returns(&buf.rewards, &buf.dones, &value_data, e, len, cfg.gamma, cfg.n_step);
    let mut adv: Vec<f64> = returns.iter().zip(&value_data).map(|(r, v)| r - v).collect();
    if cfg.center_advantages {
        let mean = adv.iter().sum::<f64>() / adv.len() as f64;
        adv.iter_mut().for_each(|a| *a -= mean);
    }

    let logits = g.concat_rows(&logits)?;
    let v_now = g.concat(&values[..len])?;
    let logp = g.log_softmax(logits)?;
    let p = g.softmax(logits)?;
    let plogp = g.mul(p, logp)?;
    let neg_entropy = g.row_sum(plogp)?;
    let entropy = g.mean(neg_entropy)?;
    let lp_a = g.pick(logp, &buf.actions)?;
    let adv_c = g.constant(Tensor::vector(adv));
    let weighted = g.mul(lp_a, adv_c)?;
    let pg = g.mean(weighted)?;
    let ret_c = g.constant(Tensor::vector(returns));
    let diff = g.sub(v_now, ret_c)?;
    let sq = g.mul(diff, diff)?;
    let vloss = g.mean(sq)?;

    // loss = -pg + c_v·vloss - c_H·H, with H = -neg_entropy.
    let a = g.scale(pg, -1.0)?;
    let b = g.scale(vloss, cfg.value_weight)?;
    let c = g.scale(entropy, cfg.entropy_weight)?;
    let ab = g.add(a, b)?;
    let loss = g.add(ab, c)?;
    let stats = A2cStats {
        policy_loss: -g.value(pg).item(),
        value_loss: g.value(vloss).item(),
        entropy: -g.value(entropy).item(),
    };
    let grads = g.param_gradients(loss, |_| true)?;
    adam_step(&mut policy.params, &grads, optim, &cfg.optim)?;
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_logits() {
        let p = softmax(&[0.3; 5]);
        assert!(p.iter().all(|x| (x - 0.2).abs() < 1e-15));
    }

    #[test]
    fn sampling_is_seeded() {
        let logits = [0.1, -1.0, 2.0];
        let a = sample_categorical(&logits, &mut ChaCha8Rng::seed_from_u64(4));
        let b = sample_categorical(&logits, &mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(a, b);
    }

    #[test]
    fn sample_frequencies() {
        let logits = [0.5, -0.3, 1.2, 0.0, -2.0];
        let p = softmax(&logits);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 100_000;
        let mut counts = [0usize; 5];
        for _ in 0..n {
            counts[sample_categorical(&logits, &mut rng).0] += 1;
        }
        for (c, pi) in counts.iter().zip(&p) {
            assert!((*c as f64 / n as f64 - pi).abs() < 0.01);
        }
    }

    #[test]
    fn mixing() {
        assert_eq!(mix_rewards(1.0, 5.0, 0.0, Regime::Mixed), 1.0);
        assert_eq!(mix_rewards(0.0, 5.0, 0.2, Regime::Mixed), 1.0);
        assert_eq!(mix_rewards(1.0, 5.0, 0.2, Regime::IntrinsicOnly), 5.0);
    }

    #[test]
    fn returns_with_zero_discount() {
        let r = [1.0, 2.0, 3.0];
        let v = [9.0, 9.0, 9.0, 9.0];
        let out = nstep_returns(&r, &[false; 3], &v, 1, 3, 0.0, 16);
        assert_eq!(out, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn returns_truncate_at_done_and_segment_end() {
        // envs = 1, len = 4, done after t = 1.
        let r = [1.0, 1.0, 1.0, 1.0];
        let v = [0.0, 0.0, 0.0, 0.0, 10.0];
        let out = nstep_returns(&r, &[false, true, false, false], &v, 1, 4, 0.5, 16);
        assert_eq!(out, vec![1.5, 1.0, 1.0 + 0.5 + 0.25 * 10.0, 1.0 + 0.5 * 10.0]);
        let out = nstep_returns(&r, &[false; 4], &v, 1, 4, 1.0, 2);
        assert_eq!(out, vec![2.0, 2.0, 2.0 + 10.0, 1.0 + 10.0]);
    }
}
