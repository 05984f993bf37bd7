#![allow(dead_code)]

use std::collections::HashMap;

use hindsight::curiosity::{build_forward, HindsightTrainConfig, SegmentBatch};
use hindsight::models::{HeadKind, ModelConfig, WorldModel, CRITIC, GENERATOR, OPEN, RECONSTRUCTOR};
use hindsight::ndgrad::{gru_cell, init_gru, linear, mlp, Graph, MlpShape, ParamStore, Tensor, Var, NORM_EPS};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const FD_STEP: f64 = 1e-5;
/// Gradients smaller than this are compared in absolute terms.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct FdReport {
    pub max_rel: f64,
    pub worst: String,
    pub entries: usize,
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

/// Reverse-mode gradients of `loss` against central differences, element by
/// element, for every parameter in `names`.
pub fn fd_check(g: &mut Graph, params: &ParamStore, loss: Var, names: &[String]) -> FdReport {
    let refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
    let analytic = g.gradients(loss, &refs).expect("gradients");
    g.mark_output("fd_loss", loss);
    let mut report = FdReport { max_rel: 0.0, worst: String::new(), entries: 0 };
    for name in names {
        let base = params.tensor(name).clone();
        let grad = &analytic[name];
        for i in 0..base.len() {
            let mut eval_at = |delta: f64| {
                let mut t = base.clone();
                t.data_mut()[i] += delta;
                let out = g.eval(&HashMap::from([(name.clone(), t)])).expect("eval");
                out["fd_loss"].item()
            };
            let numeric = (eval_at(FD_STEP) - eval_at(-FD_STEP)) / (2.0 * FD_STEP);
            let e = rel_err(grad.data()[i], numeric);
            if e > report.max_rel {
                report.max_rel = e;
                report.worst = format!("{name}[{i}]: analytic {} numeric {numeric}", grad.data()[i]);
            }
            report.entries += 1;
        }
        g.eval(&HashMap::from([(name.clone(), base)])).expect("restore");
    }
    report
}

pub fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::matrix(rows, cols, data).expect("shape")
}

fn hidden_widths(rng: &mut ChaCha8Rng) -> Vec<usize> {
    (0..rng.random_range(1..=2)).map(|_| rng.random_range(2..=6)).collect()
}

/// The five network families exercised by the gradient check.
pub const NET_KINDS: [&str; 5] = ["mlp_regression", "mlp_softmax", "gru_unrolled", "normalized_head", "contrastive_world_model"];

/// Builds random network number `index` (family `index % 5`) and checks it.
pub fn random_net_check(index: usize, rng: &mut ChaCha8Rng) -> FdReport {
    match index % NET_KINDS.len() {
        0 => mlp_regression(rng),
        1 => mlp_softmax(rng),
        2 => gru_unrolled(rng),
        3 => normalized_head(rng),
        _ => contrastive_world_model(rng),
    }
}

fn init_mlp(rng: &mut ChaCha8Rng, input: usize, output: usize) -> (ParamStore, usize) {
    let shape = MlpShape::new(input, &hidden_widths(rng), output);
    let mut params = ParamStore::new();
    shape.init(&mut params, "net", rng);
    randomize_biases(&mut params, rng);
    (params, shape.layers())
}

/// Zero biases can put a whole row on a kink (every ReLU dead, so a zero
/// vector gets normalized), where finite differences are meaningless.
pub fn randomize_biases(params: &mut ParamStore, rng: &mut ChaCha8Rng) {
    let names: Vec<String> = params.names().filter(|n| n.ends_with(".b") || n.ends_with(".bx") || n.ends_with(".bh")).map(String::from).collect();
    for name in names {
        for v in params.get_mut(&name).unwrap().data_mut() {
            *v = rng.random_range(-0.5..0.5);
        }
    }
}

fn all_names(params: &ParamStore) -> Vec<String> {
    params.names().map(String::from).collect()
}

fn mlp_regression(rng: &mut ChaCha8Rng) -> FdReport {
    let (rows, input, output) = (rng.random_range(1..=4), rng.random_range(1..=5), rng.random_range(1..=4));
    let (params, layers) = init_mlp(rng, input, output);
    let mut g = Graph::new();
    let x = g.input("x", normal_matrix(rng, rows, input));
    let y = g.constant(normal_matrix(rng, rows, output));
    let h = mlp(&mut g, &params, "net", layers, x).unwrap();
    let h = g.tanh(h).unwrap();
    let se = g.squared_error(h, y).unwrap();
    let loss = g.mean(se).unwrap();
    fd_check(&mut g, &params, loss, &all_names(&params))
}

fn mlp_softmax(rng: &mut ChaCha8Rng) -> FdReport {
    let (rows, input, classes) = (rng.random_range(1..=4), rng.random_range(1..=5), rng.random_range(2..=5));
    let (params, layers) = init_mlp(rng, input, classes);
    let mut g = Graph::new();
    let x = g.input("x", normal_matrix(rng, rows, input));
    let labels: Vec<usize> = (0..rows).map(|_| rng.random_range(0..classes)).collect();
    let logits = mlp(&mut g, &params, "net", layers, x).unwrap();
    let logp = g.log_softmax(logits).unwrap();
    let picked = g.pick(logp, &labels).unwrap();
    // Entropy term through softmax and log.
    let p = g.softmax(logits).unwrap();
    let lp = g.log(p).unwrap();
    let plp = g.mul(p, lp).unwrap();
    let ent = g.sum(plp).unwrap();
    let nll = g.mean(picked).unwrap();
    let ent = g.scale(ent, 0.1).unwrap();
    let loss = g.sub(ent, nll).unwrap();
    fd_check(&mut g, &params, loss, &all_names(&params))
}

fn gru_unrolled(rng: &mut ChaCha8Rng) -> FdReport {
    let (rows, input, hidden, steps) =
        (rng.random_range(1..=3), rng.random_range(1..=4), rng.random_range(2..=5), rng.random_range(1..=3));
    let mut params = ParamStore::new();
    init_gru(&mut params, "cell", input, hidden, rng);
    params.init_linear("out", hidden, 2, rng);
    randomize_biases(&mut params, rng);
    let mut g = Graph::new();
    let mut h = g.input("h0", normal_matrix(rng, rows, hidden));
    for s in 0..steps {
        let x = g.input(&format!("x{s}"), normal_matrix(rng, rows, input));
        h = gru_cell(&mut g, &params, "cell", x, h).unwrap();
    }
    let out = linear(&mut g, &params, "out", h).unwrap();
    let y = g.constant(normal_matrix(rng, rows, 2));
    let se = g.squared_error(out, y).unwrap();
    let loss = g.sum(se).unwrap();
    fd_check(&mut g, &params, loss, &all_names(&params))
}

fn normalized_head(rng: &mut ChaCha8Rng) -> FdReport {
    let (rows, input, output) = (rng.random_range(1..=4), rng.random_range(1..=5), rng.random_range(2..=5));
    let (params, layers) = init_mlp(rng, input, output);
    let mut g = Graph::new();
    let x = g.input("x", normal_matrix(rng, rows, input));
    let target = hindsight::ndgrad::l2_normalize(&normal_matrix(rng, rows, output), NORM_EPS);
    let y = g.constant(target);
    let raw = mlp(&mut g, &params, "net", layers, x).unwrap();
    let h = g.l2_normalize(raw, NORM_EPS).unwrap();
    let se = g.squared_error(h, y).unwrap();
    let loss = g.mean(se).unwrap();
    fd_check(&mut g, &params, loss, &all_names(&params))
}

pub fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        obs_dim: 5,
        num_actions: 3,
        embedding: 3,
        belief: 3,
        hindsight: 2,
        noise: 2,
        action_embedding: 2,
        encoder_hidden: vec![4],
        head_hidden: vec![4],
    }
}

pub fn random_batch(rng: &mut ChaCha8Rng, cfg: &ModelConfig, envs: usize, len: usize, horizon: usize, hindsight: bool) -> SegmentBatch {
    let obs_rows = (len + 1) * envs;
    let obs = Tensor::matrix(obs_rows, cfg.obs_dim, (0..obs_rows * cfg.obs_dim).map(|_| rng.random::<f64>()).collect())
        .unwrap();
    let noise = hindsight.then(|| normal_matrix(rng, SegmentBatch::term_rows(len, envs, horizon), cfg.noise));
    SegmentBatch {
        envs,
        len,
        obs,
        actions: (0..len * envs).map(|_| rng.random_range(0..cfg.num_actions)).collect(),
        prev_actions: vec![cfg.start_action(); envs],
        init_belief: Tensor::zeros(&[envs, cfg.belief]),
        noise,
    }
}

/// End-to-end hindsight objective (reconstruction plus contrastive). Only
/// parameters whose every path to the loss avoids the stop-gradients feeding
/// generator and critic are compared: a finite difference sees those paths.
fn contrastive_world_model(rng: &mut ChaCha8Rng) -> FdReport {
    let cfg = tiny_model_config();
    let mut model = WorldModel::new(cfg.clone(), HeadKind::Reconstructor, rng);
    randomize_biases(&mut model.params, rng);
    let envs = rng.random_range(2..=3);
    let batch = random_batch(rng, &cfg, envs, 2, 1, true);
    let train = HindsightTrainConfig { lambda: rng.random_range(0.5..2.0), temperature: rng.random_range(0.3..1.5), ..Default::default() };
    let mut fwd = build_forward(&model, &batch, &train).unwrap();
    let names: Vec<String> = model
        .params
        .names()
        .filter(|n| [GENERATOR, CRITIC, RECONSTRUCTOR, OPEN].iter().any(|p| n.starts_with(&format!("{p}."))))
        .map(String::from)
        .collect();
    let objective = fwd.objective;
    fd_check(&mut fwd.graph, &model.params, objective, &names)
}

/// Random-action segments from the maze, encoded as the harness does
/// (noise layer scaled by √channels). Each environment starts at reset.
pub fn recorded_maze_batch(
    variant: hindsight::worlds::NoiseVariant,
    envs: usize,
    len: usize,
    horizon: usize,
    noise_cols: Option<usize>,
    seed: u64,
) -> SegmentBatch {
    use hindsight::worlds::{maze_reset, maze_step, Action, MazeConfig, NoiseSetting, NUM_ACTIONS, NUM_CHANNELS, OBS_DIM};
    let cfg = MazeConfig::new(NoiseSetting::new(variant));
    let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
    let scale = (NUM_CHANNELS as f64).sqrt();
    let mut obs = vec![0.0; (len + 1) * envs * OBS_DIM];
    let mut actions = vec![0; len * envs];
    for e in 0..envs {
        let (mut state, o) = maze_reset(&cfg, seed * 1000 + e as u64);
        o.write_scaled(&mut obs[e * OBS_DIM..(e + 1) * OBS_DIM], scale);
        for t in 0..len {
            let a = rng.random_range(0..NUM_ACTIONS);
            actions[t * envs + e] = a;
            let out = maze_step(&cfg, &mut state, Action::from_index(a).unwrap()).unwrap();
            let row = (t + 1) * envs + e;
            out.obs.write_scaled(&mut obs[row * OBS_DIM..(row + 1) * OBS_DIM], scale);
        }
    }
    let noise = noise_cols.map(|c| normal_matrix(&mut rng, SegmentBatch::term_rows(len, envs, horizon), c));
    SegmentBatch {
        envs,
        len,
        obs: Tensor::matrix((len + 1) * envs, OBS_DIM, obs).unwrap(),
        actions,
        prev_actions: vec![NUM_ACTIONS; envs],
        init_belief: Tensor::zeros(&[envs, ModelConfig::default().belief]),
        noise,
    }
}

/// Result of the fixed-batch training-dynamics check.
#[derive(Clone, Debug)]
pub struct DynamicsReport {
    pub objective_before: f64,
    pub objective_after: f64,
    /// Smallest `after − before` over all critic steps.
    pub worst_critic_change: f64,
    pub critic_steps: usize,
}

/// `steps` hindsight updates on one recorded batch, spelled out as
/// critic step, model step, EMA so each critic step can be observed.
pub fn hindsight_dynamics(steps: usize, seed: u64) -> DynamicsReport {
    use hindsight::curiosity::{critic_step, evaluate, model_step, WorldModelOptim};
    use hindsight::worlds::NoiseVariant;
    let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
    let cfg = ModelConfig::default();
    let mut model = WorldModel::new(cfg.clone(), HeadKind::Reconstructor, &mut rng);
    let train = HindsightTrainConfig::default();
    let batch = recorded_maze_batch(NoiseVariant::BrownianOscillators, 4, 16, train.horizon, Some(cfg.noise), seed);
    let mut optim = WorldModelOptim::default();
    let objective_before = evaluate(&model, &batch, &train).unwrap().0.objective;
    let mut worst = f64::INFINITY;
    for _ in 0..steps {
        let mut fwd = build_forward(&model, &batch, &train).unwrap();
        let before = critic_step(&mut model, &mut optim, &fwd, &train).unwrap();
        // The model step replays the graph with the new critic first.
        let after = model_step(&mut model, &mut optim, &mut fwd, &train).unwrap().contrastive;
        worst = worst.min(after - before);
        model.ema_update(train.ema);
    }
    let objective_after = evaluate(&model, &batch, &train).unwrap().0.objective;
    DynamicsReport { objective_before, objective_after, worst_critic_change: worst, critic_steps: steps }
}

/// A run small enough for a test: narrow networks, short episodes.
pub fn small_run(kind: hindsight::harness::AgentKind, variant: hindsight::worlds::NoiseVariant) -> hindsight::harness::RunConfig {
    let mut cfg = hindsight::harness::RunConfig::default();
    cfg.run.total_steps = 4_000;
    cfg.run.num_envs = 4;
    cfg.run.metrics_every = 300;
    cfg.env.variant = variant;
    cfg.env.episode_length = 100;
    cfg.agent.kind = kind;
    cfg.model.embedding = 16;
    cfg.model.belief = 16;
    cfg.model.hindsight = 8;
    cfg.model.noise = 8;
    cfg.model.encoder_hidden = vec![32];
    cfg.model.head_hidden = vec![32];
    cfg.policy.encoder_hidden = vec![32];
    cfg.policy.embedding = 16;
    cfg.policy.hidden = 16;
    cfg.policy.head_hidden = vec![16];
    cfg
}
