//! World-model networks: online/target encoders, closed- and open-loop GRU
//! beliefs, predictor or reconstructor head, hindsight generator and critic.
//!
//! All builders take a [`Graph`] so they can be composed into one training
//! graph. [`WorldModel::target_encode`], [`WorldModel::closed_loop_rollup`] and
//! [`WorldModel::open_loop_rollout`] evaluate directly, without gradients.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ndgrad::{gru_cell, init_gru, l2_normalize, mlp, Graph, MlpShape, NdError, ParamStore, Tensor, Var, NORM_EPS};

pub const ENCODER: &str = "enc";
pub const TARGET: &str = "target";
pub const CLOSED: &str = "closed";
pub const OPEN: &str = "open";
pub const ACTION_EMBEDDING: &str = "act_emb";
pub const PREDICTOR: &str = "pred";
pub const RECONSTRUCTOR: &str = "rec";
pub const GENERATOR: &str = "gen";
pub const CRITIC: &str = "critic";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub obs_dim: usize,
    pub num_actions: usize,
    pub embedding: usize,
    pub belief: usize,
    pub hindsight: usize,
    pub noise: usize,
    pub action_embedding: usize,
    pub encoder_hidden: Vec<usize>,
    pub head_hidden: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            obs_dim: crate::worlds::OBS_DIM,
            num_actions: crate::worlds::NUM_ACTIONS,
            embedding: 64,
            belief: 64,
            hindsight: 32,
            noise: 32,
            action_embedding: 8,
            encoder_hidden: vec![128],
            head_hidden: vec![128, 128],
        }
    }
}

impl ModelConfig {
    /// Sizes used for the large Atari-style networks; kept as a preset only.
    pub fn large() -> Self {
        Self {
            embedding: 512,
            belief: 256,
            hindsight: 256,
            noise: 256,
            action_embedding: 32,
            encoder_hidden: vec![512],
            head_hidden: vec![512, 512, 512],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let sizes = [
            ("obs_dim", self.obs_dim),
            ("num_actions", self.num_actions),
            ("embedding", self.embedding),
            ("belief", self.belief),
            ("hindsight", self.hindsight),
            ("noise", self.noise),
            ("action_embedding", self.action_embedding),
        ];
        for (name, v) in sizes {
            if v == 0 {
                return Err(format!("model.{name} must be positive"));
            }
        }
        if self.encoder_hidden.contains(&0) || self.head_hidden.contains(&0) {
            return Err("hidden layer widths must be positive".into());
        }
        Ok(())
    }

    fn encoder_shape(&self) -> MlpShape {
        MlpShape::new(self.obs_dim, &self.encoder_hidden, self.embedding)
    }

    /// Index of the action-embedding row used before the first action of an episode.
    pub fn start_action(&self) -> usize {
        self.num_actions
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// Predicts the next embedding from the open-loop belief alone.
    Predictor,
    /// Reconstructs the next embedding from the open-loop belief and a hindsight vector.
    Reconstructor,
}

/// Parameters of one world model, including the EMA target encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct WorldModel {
    pub cfg: ModelConfig,
    pub head: HeadKind,
    pub params: ParamStore,
}

fn has_prefix(name: &str, prefix: &str) -> bool {
    name.len() > prefix.len() && name.starts_with(prefix) && name.as_bytes()[prefix.len()] == b'.'
        || name == prefix
}

impl WorldModel {
    pub fn new(cfg: ModelConfig, head: HeadKind, rng: &mut impl Rng) -> Self {
        let mut p = ParamStore::new();
        let enc = cfg.encoder_shape();
        enc.init(&mut p, ENCODER, rng);
        for i in 0..enc.layers() {
            for part in ["w", "b"] {
                let t = p.tensor(&format!("{ENCODER}.l{i}.{part}")).clone();
                p.insert(format!("{TARGET}.l{i}.{part}"), t);
            }
        }
        let s = 1.0 / (cfg.action_embedding as f64).sqrt();
        let rows = cfg.num_actions + 1;
        let emb = (0..rows * cfg.action_embedding).map(|_| rng.random_range(-s..=s)).collect();
        p.insert(ACTION_EMBEDDING, Tensor::matrix(rows, cfg.action_embedding, emb).expect("shape"));
        init_gru(&mut p, CLOSED, cfg.embedding + cfg.action_embedding, cfg.belief, rng);
        init_gru(&mut p, OPEN, cfg.action_embedding, cfg.belief, rng);
        match head {
            HeadKind::Predictor => MlpShape::new(cfg.belief, &cfg.head_hidden, cfg.embedding).init(&mut p, PREDICTOR, rng),
            HeadKind::Reconstructor => {
                MlpShape::new(cfg.belief + cfg.hindsight, &cfg.head_hidden, cfg.embedding).init(&mut p, RECONSTRUCTOR, rng);
                let gen_in = cfg.belief + cfg.action_embedding + cfg.embedding + cfg.noise;
                MlpShape::new(gen_in, &cfg.head_hidden, cfg.hindsight).init(&mut p, GENERATOR, rng);
                let critic_in = cfg.belief + cfg.action_embedding + cfg.hindsight;
                MlpShape::new(critic_in, &cfg.head_hidden, 1).init(&mut p, CRITIC, rng);
            }
        }
        Self { cfg, head, params: p }
    }

    pub fn is_target_param(name: &str) -> bool {
        has_prefix(name, TARGET)
    }

    pub fn is_critic_param(name: &str) -> bool {
        has_prefix(name, CRITIC)
    }

    /// Parameters trained by the prediction/reconstruction objective.
    pub fn is_model_param(name: &str) -> bool {
        !Self::is_target_param(name) && !Self::is_critic_param(name)
    }

    fn encoder_layers(&self) -> usize {
        self.cfg.encoder_hidden.len() + 1
    }

    fn head_layers(&self) -> usize {
        self.cfg.head_hidden.len() + 1
    }

    /// `w = ω(o)`, row-wise.
    pub fn encode(&self, g: &mut Graph, obs: Var) -> Result<Var, NdError> {
        check_width(g, obs, self.cfg.obs_dim, "encode")?;
        mlp(g, &self.params, ENCODER, self.encoder_layers(), obs)
    }

    /// `x = ω_target(o)/‖ω_target(o)‖`, evaluated outside any training graph.
    pub fn target_encode(&self, obs: &Tensor) -> Result<Tensor, NdError> {
        let mut g = Graph::new();
        let o = g.input("obs", obs.clone());
        check_width(&g, o, self.cfg.obs_dim, "target_encode")?;
        let w = mlp(&mut g, &self.params, TARGET, self.encoder_layers(), o)?;
        Ok(l2_normalize(g.value(w), NORM_EPS))
    }

    /// `ω_target ← α ω_target + (1 − α) ω`.
    pub fn ema_update(&mut self, alpha: f64) {
        assert!((0.0..=1.0).contains(&alpha), "EMA rate {alpha} outside [0, 1]");
        let online: Vec<(String, Tensor)> = self
            .params
            .iter()
            .filter(|(n, _)| has_prefix(n, ENCODER))
            .map(|(n, t)| (format!("{TARGET}{}", &n[ENCODER.len()..]), t.clone()))
            .collect();
        for (name, w) in online {
            let t = self.params.get_mut(&name).expect("target mirrors encoder");
            for (x, y) in t.data_mut().iter_mut().zip(w.data()) {
                *x = alpha * *x + (1.0 - alpha) * y;
            }
        }
    }

    /// Rows of the action-embedding table; `start_action()` is the pre-episode token.
    pub fn embed_actions(&self, g: &mut Graph, actions: &[usize]) -> Result<Var, NdError> {
        let table = g.param(ACTION_EMBEDDING, self.params.tensor(ACTION_EMBEDDING));
        g.gather_rows(table, actions)
    }

    /// One closed-loop step: `b_t = GRU([w_t, emb(a_{t-1})], b_{t-1})`.
    pub fn closed_step(&self, g: &mut Graph, w: Var, prev_action: Var, b: Var) -> Result<Var, NdError> {
        let x = g.concat(&[w, prev_action])?;
        gru_cell(g, &self.params, CLOSED, x, b)
    }

    /// One open-loop step: `b_{t,i} = GRU(emb(a_{t+i-1}), b_{t,i-1})`.
    pub fn open_step(&self, g: &mut Graph, action: Var, b: Var) -> Result<Var, NdError> {
        gru_cell(g, &self.params, OPEN, action, b)
    }

    /// Normalized prediction from an open-loop belief.
    pub fn prediction_head(&self, g: &mut Graph, b_open: Var) -> Result<Var, NdError> {
        self.require(HeadKind::Predictor)?;
        let raw = mlp(g, &self.params, PREDICTOR, self.head_layers(), b_open)?;
        g.l2_normalize(raw, NORM_EPS)
    }

    /// Normalized reconstruction from an open-loop belief and hindsight vector.
    pub fn reconstruction_head(&self, g: &mut Graph, b_open: Var, z: Var) -> Result<Var, NdError> {
        self.require(HeadKind::Reconstructor)?;
        let x = g.concat(&[b_open, z])?;
        let raw = mlp(g, &self.params, RECONSTRUCTOR, self.head_layers(), x)?;
        g.l2_normalize(raw, NORM_EPS)
    }

    /// `x̂ = h(open(b, a))`, normalized.
    pub fn predict(&self, g: &mut Graph, b: Var, action: Var) -> Result<Var, NdError> {
        self.require(HeadKind::Predictor)?;
        let b1 = self.open_step(g, action, b)?;
        self.prediction_head(g, b1)
    }

    /// `x̂ = h(open(b, a), z)`, normalized.
    pub fn reconstruct(&self, g: &mut Graph, b: Var, action: Var, z: Var) -> Result<Var, NdError> {
        self.require(HeadKind::Reconstructor)?;
        let b1 = self.open_step(g, action, b)?;
        self.reconstruction_head(g, b1, z)
    }

    /// `z = G(b, emb(a), x_target, ε)`.
    pub fn generate(&self, g: &mut Graph, b: Var, action: Var, x_target: Var, eps: Var) -> Result<Var, NdError> {
        self.require(HeadKind::Reconstructor)?;
        check_width(g, eps, self.cfg.noise, "generate")?;
        let x = g.concat(&[b, action, x_target, eps])?;
        mlp(g, &self.params, GENERATOR, self.head_layers(), x)
    }

    /// Critic energy `g(b, emb(a), z)` per row, shape `[rows]`.
    pub fn critic_energy(&self, g: &mut Graph, b: Var, action: Var, z: Var) -> Result<Var, NdError> {
        self.require(HeadKind::Reconstructor)?;
        let x = g.concat(&[b, action, z])?;
        let e = mlp(g, &self.params, CRITIC, self.head_layers(), x)?;
        let rows = g.shape(e)[0];
        g.reshape(e, &[rows])
    }

    /// Energies of every row's `(b, a)` against all `z` in its group.
    ///
    /// Rows are split into consecutive groups of `group` rows. The result has
    /// shape `[rows, group]` with entry `(j, k)` equal to
    /// `g(b_j, a_j, z_{start(j) + k})`, where `start(j)` is the first row of
    /// `j`'s group. The first layer is split so each row is projected once.
    pub fn critic_pairwise(&self, g: &mut Graph, b: Var, action: Var, z: Var, group: usize) -> Result<Var, NdError> {
        self.require(HeadKind::Reconstructor)?;
        let rows = g.shape(b)[0];
        if group == 0 || !rows.is_multiple_of(group) {
            return Err(NdError::Shape {
                node: b.index(),
                op: "critic_pairwise",
                detail: format!("{rows} rows do not split into groups of {group}"),
            });
        }
        let w = g.param(&format!("{CRITIC}.l0.w"), self.params.tensor(&format!("{CRITIC}.l0.w")));
        let bias = g.param(&format!("{CRITIC}.l0.b"), self.params.tensor(&format!("{CRITIC}.l0.b")));
        let split = self.cfg.belief + self.cfg.action_embedding;
        let total = g.shape(w)[0];
        let w_ba = g.slice_rows(w, 0, split)?;
        let w_z = g.slice_rows(w, split, total)?;
        let ba = g.concat(&[b, action])?;
        let p = g.matmul(ba, w_ba)?;
        let q = g.matmul(z, w_z)?;
        let mut left = Vec::with_capacity(rows * group);
        let mut right = Vec::with_capacity(rows * group);
        for j in 0..rows {
            let start = j / group * group;
            for k in 0..group {
                left.push(j);
                right.push(start + k);
            }
        }
        let pl = g.gather_rows(p, &left)?;
        let qr = g.gather_rows(q, &right)?;
        let mut h = g.add(pl, qr)?;
        h = g.add_bias(h, bias)?;
        let layers = self.head_layers();
        for i in 1..layers {
            h = g.relu(h)?;
            h = crate::ndgrad::linear(g, &self.params, &format!("{CRITIC}.l{i}"), h)?;
        }
        g.reshape(h, &[rows, group])
    }

    fn require(&self, head: HeadKind) -> Result<(), NdError> {
        if self.head == head {
            Ok(())
        } else {
            Err(NdError::InvalidTensor(format!("operation needs a {head:?} head, model has {:?}", self.head)))
        }
    }

    /// Folds the closed-loop cell over a history, starting from zeros.
    ///
    /// `prev_actions[t]` is the action taken before observation `t` (the
    /// start token for `t = 0`); `embeddings[t]` is `w_t`. An empty history
    /// gives the zero belief.
    pub fn closed_loop_rollup(&self, prev_actions: &[usize], embeddings: &[Tensor]) -> Result<Tensor, NdError> {
        if prev_actions.len() != embeddings.len() {
            return Err(NdError::InvalidTensor(format!(
                "{} actions for {} embeddings",
                prev_actions.len(),
                embeddings.len()
            )));
        }
        let mut g = Graph::new();
        let mut b = g.input("b0", Tensor::zeros(&[1, self.cfg.belief]));
        for (t, (&a, w)) in prev_actions.iter().zip(embeddings).enumerate() {
            let w = g.input(&format!("w{t}"), w.reshaped(vec![1, w.len()])?);
            let a = self.embed_actions(&mut g, &[a])?;
            b = self.closed_step(&mut g, w, a, b)?;
        }
        Ok(g.value(b).clone())
    }

    /// Open-loop beliefs `b_{t,1..=horizon}` from `b_t` (shape `[1, belief]`).
    pub fn open_loop_rollout(&self, b: &Tensor, actions: &[usize], horizon: usize) -> Result<Vec<Tensor>, NdError> {
        if horizon == 0 || actions.len() < horizon {
            return Err(NdError::InvalidTensor(format!(
                "horizon {horizon} needs at least that many actions, got {}",
                actions.len()
            )));
        }
        let mut g = Graph::new();
        let mut cur = g.input("b", b.clone());
        let emb = self.embed_actions(&mut g, &actions[..horizon])?;
        let mut out = Vec::with_capacity(horizon);
        for i in 0..horizon {
            let a = g.slice_rows(emb, i, i + 1)?;
            cur = self.open_step(&mut g, a, cur)?;
            out.push(g.value(cur).clone());
        }
        Ok(out)
    }
}

fn check_width(g: &Graph, v: Var, want: usize, op: &'static str) -> Result<(), NdError> {
    let have = g.shape(v).last().copied().unwrap_or(0);
    if have == want {
        Ok(())
    } else {
        Err(NdError::Shape { node: v.index(), op, detail: format!("input width {have}, expected {want}") })
    }
}
