//! World-model training steps on a batch of trajectory segments.

use std::collections::HashMap;

use super::{contrastive_rows, CuriosityError, HindsightTrainConfig, LossGrid};
use crate::models::{HeadKind, WorldModel};
use crate::ndgrad::{adam_step, Graph, OptimState, Tensor, Var};

/// `envs` parallel segments of `len` transitions, stored time-major
/// (row `t * envs + e`).
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentBatch {
    pub envs: usize,
    pub len: usize,
    /// Observations `o_0..=o_len`, shape `[(len + 1) * envs, obs_dim]`.
    pub obs: Tensor,
    /// Actions `a_0..a_len`.
    pub actions: Vec<usize>,
    /// Action before `o_0` per environment (the start token at episode start).
    pub prev_actions: Vec<usize>,
    /// Closed-loop belief before `o_0`, shape `[envs, belief]`.
    pub init_belief: Tensor,
    /// Generator noise, one row per loss term, horizon-major; see [`SegmentBatch::term_rows`].
    pub noise: Option<Tensor>,
}

impl SegmentBatch {
    /// Number of `(t, i)` terms: `Σ_{i=1..=horizon} (len + 1 - i) * envs`.
    pub fn term_rows(len: usize, envs: usize, horizon: usize) -> usize {
        (1..=horizon).map(|i| (len + 1 - i) * envs).sum()
    }

    fn validate(&self, model: &WorldModel, horizon: usize) -> Result<(), CuriosityError> {
        let bad = |m: String| Err(CuriosityError::Misaligned(m));
        let (e, t) = (self.envs, self.len);
        if e == 0 || t == 0 {
            return bad("empty batch".into());
        }
        if horizon == 0 || horizon > t {
            return bad(format!("horizon {horizon} does not fit segments of length {t}"));
        }
        if self.obs.shape() != [(t + 1) * e, model.cfg.obs_dim] {
            return bad(format!("observations have shape {:?}", self.obs.shape()));
        }
        if self.actions.len() != t * e || self.prev_actions.len() != e {
            return bad(format!("{} actions and {} previous actions", self.actions.len(), self.prev_actions.len()));
        }
        if self.actions.iter().chain(&self.prev_actions).any(|&a| a > model.cfg.num_actions) {
            return bad("action index out of range".into());
        }
        if self.init_belief.shape() != [e, model.cfg.belief] {
            return bad(format!("initial belief has shape {:?}", self.init_belief.shape()));
        }
        if model.head == HeadKind::Reconstructor {
            let want = [Self::term_rows(t, e, horizon), model.cfg.noise];
            match &self.noise {
                Some(n) if n.shape() == want => {}
                Some(n) => return bad(format!("noise has shape {:?}, expected {want:?}", n.shape())),
                None => return bad("hindsight model needs generator noise".into()),
            }
        }
        Ok(())
    }
}

/// Graph handles of the terms for one horizon step `i`.
#[derive(Clone, Debug)]
pub struct TermVars {
    pub rows: usize,
    /// Input belief `b_{t,i-1}`.
    pub b_prev: Var,
    /// Embedding of `a_{t+i-1}`.
    pub action: Var,
    pub b_open: Var,
    pub x_target: Var,
    pub z: Option<Var>,
    /// Per-term squared error, `[rows]`.
    pub rec: Var,
    /// Per-term contrastive value, `[rows]`.
    pub con: Option<Var>,
}

/// A recorded forward pass over one batch.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    pub graph: Graph,
    pub terms: Vec<TermVars>,
    /// Closed-loop belief after the last observation used, `[envs, belief]`.
    pub final_belief: Var,
    pub rec_mean: Var,
    pub con_mean: Option<Var>,
    /// `(1/λ)·rec_mean + con_mean` (or the prediction loss alone).
    pub objective: Var,
    envs: usize,
    len: usize,
    horizon: usize,
}

impl ForwardPass {
    /// Current per-term losses.
    pub fn grid(&self) -> LossGrid {
        let mut grid = LossGrid::zeros(self.len, self.envs, self.horizon);
        for (i, term) in self.terms.iter().enumerate() {
            grid.rec[i] = self.graph.value(term.rec).data().to_vec();
            if let Some(c) = term.con {
                grid.con[i] = self.graph.value(c).data().to_vec();
            }
        }
        grid
    }

    pub fn breakdown(&self, head: HeadKind) -> LossBreakdown {
        let rec = self.graph.value(self.rec_mean).item();
        let (prediction, reconstruction) = match head {
            HeadKind::Predictor => (rec, 0.0),
            HeadKind::Reconstructor => (0.0, rec),
        };
        LossBreakdown {
            prediction,
            reconstruction,
            contrastive: self.con_mean.map_or(0.0, |c| self.graph.value(c).item()),
            objective: self.graph.value(self.objective).item(),
        }
    }
}

/// Batch means of the world-model losses.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub prediction: f64,
    pub reconstruction: f64,
    pub contrastive: f64,
    pub objective: f64,
}

#[derive(Clone, Debug, Default)]
pub struct WorldModelOptim {
    pub model: OptimState,
    pub critic: OptimState,
    pub ema_updates: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UpdateOutput {
    /// Losses at the parameters the step started from (after the critic step).
    pub losses: LossBreakdown,
    pub grid: LossGrid,
    pub final_belief: Tensor,
}

/// Builds the full world-model graph for `batch`.
pub fn build_forward(
    model: &WorldModel,
    batch: &SegmentBatch,
    cfg: &HindsightTrainConfig,
) -> Result<ForwardPass, CuriosityError> {
    let horizon = cfg.horizon;
    batch.validate(model, horizon)?;
    let (e, len) = (batch.envs, batch.len);
    let obs_dim = model.cfg.obs_dim;
    let mut g = Graph::new();

    let obs_now = Tensor::new(vec![len * e, obs_dim], batch.obs.data()[..len * e * obs_dim].to_vec())?;
    let obs_next = Tensor::new(vec![len * e, obs_dim], batch.obs.data()[e * obs_dim..].to_vec())?;
    let x_all = model.target_encode(&obs_next)?;

    let o = g.input("obs", obs_now);
    let w = model.encode(&mut g, o)?;
    let mut prev = batch.prev_actions.clone();
    prev.extend_from_slice(&batch.actions[..(len - 1) * e]);
    let a_prev = model.embed_actions(&mut g, &prev)?;
    let a_cur = model.embed_actions(&mut g, &batch.actions)?;

    let mut b = g.input("belief0", batch.init_belief.clone());
    let mut beliefs = Vec::with_capacity(len);
    for t in 0..len {
        let wt = g.slice_rows(w, t * e, (t + 1) * e)?;
        let at = g.slice_rows(a_prev, t * e, (t + 1) * e)?;
        b = model.closed_step(&mut g, wt, at, b)?;
        beliefs.push(b);
    }
    let final_belief = b;
    let b_stack = g.concat_rows(&beliefs)?;

    let hindsight = model.head == HeadKind::Reconstructor;
    let mut terms = Vec::with_capacity(horizon);
    let mut noise_offset = 0;
    let mut b_in = b_stack;
    for i in 1..=horizon {
        let rows = (len + 1 - i) * e;
        let b_prev = if i == 1 { b_in } else { g.slice_rows(b_in, 0, rows)? };
        let action = g.slice_rows(a_cur, (i - 1) * e, (i - 1) * e + rows)?;
        let b_open = model.open_step(&mut g, action, b_prev)?;
        let x_rows = x_all.data()[(i - 1) * e * model.cfg.embedding..((i - 1) * e + rows) * model.cfg.embedding].to_vec();
        let x_target = g.constant(Tensor::new(vec![rows, model.cfg.embedding], x_rows)?);
        let term = if hindsight {
            let noise = batch.noise.as_ref().expect("validated");
            let cols = model.cfg.noise;
            let eps_rows = noise.data()[noise_offset * cols..(noise_offset + rows) * cols].to_vec();
            noise_offset += rows;
            let eps = g.input(&format!("noise{i}"), Tensor::new(vec![rows, cols], eps_rows)?);
            let b_sg = g.stop_gradient(b_prev)?;
            let a_sg = g.stop_gradient(action)?;
            let z = model.generate(&mut g, b_sg, a_sg, x_target, eps)?;
            let x_hat = model.reconstruction_head(&mut g, b_open, z)?;
            let rec = g.squared_error(x_hat, x_target)?;
            let energies = model.critic_pairwise(&mut g, b_sg, a_sg, z, e)?;
            let con = contrastive_rows(&mut g, energies, cfg.temperature)?;
            TermVars { rows, b_prev, action, b_open, x_target, z: Some(z), rec, con: Some(con) }
        } else {
            let x_hat = model.prediction_head(&mut g, b_open)?;
            let rec = g.squared_error(x_hat, x_target)?;
            TermVars { rows, b_prev, action, b_open, x_target, z: None, rec, con: None }
        };
        b_in = term.b_open;
        terms.push(term);
    }

    let recs: Vec<Var> = terms.iter().map(|t| t.rec).collect();
    let rec_all = g.concat(&recs)?;
    let rec_mean = g.mean(rec_all)?;
    let (con_mean, objective) = if hindsight {
        let cons: Vec<Var> = terms.iter().filter_map(|t| t.con).collect();
        let con_all = g.concat(&cons)?;
        let con_mean = g.mean(con_all)?;
        let weighted = g.scale(rec_mean, 1.0 / cfg.lambda)?;
        (Some(con_mean), g.add(weighted, con_mean)?)
    } else {
        (None, rec_mean)
    };
    Ok(ForwardPass { graph: g, terms, final_belief, rec_mean, con_mean, objective, envs: e, len, horizon })
}

/// Losses at the current parameters, without updating anything.
pub fn evaluate(
    model: &WorldModel,
    batch: &SegmentBatch,
    cfg: &HindsightTrainConfig,
) -> Result<(LossBreakdown, LossGrid), CuriosityError> {
    let fwd = build_forward(model, batch, cfg)?;
    Ok((fwd.breakdown(model.head), fwd.grid()))
}

/// One ascent step of the critic on the contrastive objective, holding the
/// generator's samples from `fwd` fixed. Returns the objective before the step.
pub fn critic_step(
    model: &mut WorldModel,
    optim: &mut WorldModelOptim,
    fwd: &ForwardPass,
    cfg: &HindsightTrainConfig,
) -> Result<f64, CuriosityError> {
    let mut g = Graph::new();
    let mut cons = Vec::with_capacity(fwd.terms.len());
    for term in &fwd.terms {
        let z = term.z.ok_or_else(|| CuriosityError::Misaligned("critic step on a predictor model".into()))?;
        let b = g.constant(fwd.graph.value(term.b_prev).clone());
        let a = g.constant(fwd.graph.value(term.action).clone());
        let z = g.constant(fwd.graph.value(z).clone());
        let energies = model.critic_pairwise(&mut g, b, a, z, fwd.envs)?;
        cons.push(contrastive_rows(&mut g, energies, cfg.temperature)?);
    }
    let all = g.concat(&cons)?;
    let objective = g.mean(all)?;
    let before = g.value(objective).item();
    let mut grads = g.param_gradients(objective, WorldModel::is_critic_param)?;
    for t in grads.values_mut() {
        *t = t.map(|x| -x);
    }
    adam_step(&mut model.params, &grads, &mut optim.critic, &cfg.critic_optim)?;
    Ok(before)
}

/// One descent step of the encoder, recurrent cells, head and generator.
///
/// `fwd` is first replayed with the model's current critic parameters, so a
/// preceding [`critic_step`] is taken into account. Returns the losses at the
/// parameters the step started from.
pub fn model_step(
    model: &mut WorldModel,
    optim: &mut WorldModelOptim,
    fwd: &mut ForwardPass,
    cfg: &HindsightTrainConfig,
) -> Result<LossBreakdown, CuriosityError> {
    if model.head == HeadKind::Reconstructor {
        let critic: HashMap<String, Tensor> = fwd
            .graph
            .param_names()
            .filter(|n| WorldModel::is_critic_param(n))
            .map(|n| (n.to_string(), model.params.tensor(n).clone()))
            .collect();
        fwd.graph.eval(&critic)?;
    }
    let losses = fwd.breakdown(model.head);
    let grads = fwd.graph.param_gradients(fwd.objective, WorldModel::is_model_param)?;
    adam_step(&mut model.params, &grads, &mut optim.model, &cfg.model_optim)?;
    Ok(losses)
}

fn finish(model: &mut WorldModel, optim: &mut WorldModelOptim, fwd: &ForwardPass, losses: LossBreakdown, ema: f64) -> UpdateOutput {
    model.ema_update(ema);
    optim.ema_updates += 1;
    UpdateOutput { losses, grid: fwd.grid(), final_belief: fwd.graph.value(fwd.final_belief).clone() }
}

/// Prediction-loss step on encoder, recurrent cells and predictor, then EMA.
pub fn byol_explore_update(
    model: &mut WorldModel,
    optim: &mut WorldModelOptim,
    batch: &SegmentBatch,
    cfg: &HindsightTrainConfig,
) -> Result<UpdateOutput, CuriosityError> {
    if model.head != HeadKind::Predictor {
        return Err(CuriosityError::Misaligned("explore update needs a predictor head".into()));
    }
    let mut fwd = build_forward(model, batch, cfg)?;
    let losses = model_step(model, optim, &mut fwd, cfg)?;
    Ok(finish(model, optim, &fwd, losses, cfg.ema))
}

/// Critic ascent step(s), then a model descent step on
/// `(1/λ)·reconstruction + contrastive`, then EMA.
pub fn byol_hindsight_update(
    model: &mut WorldModel,
    optim: &mut WorldModelOptim,
    batch: &SegmentBatch,
    cfg: &HindsightTrainConfig,
) -> Result<UpdateOutput, CuriosityError> {
    if model.head != HeadKind::Reconstructor {
        return Err(CuriosityError::Misaligned("hindsight update needs a reconstructor head".into()));
    }
    if batch.envs < 2 {
        return Err(CuriosityError::BatchTooSmall(batch.envs));
    }
    let mut fwd = build_forward(model, batch, cfg)?;
    for _ in 0..cfg.critic_steps {
        critic_step(model, optim, &fwd, cfg)?;
    }
    let losses = model_step(model, optim, &mut fwd, cfg)?;
    Ok(finish(model, optim, &fwd, losses, cfg.ema))
}
