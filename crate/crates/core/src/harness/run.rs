use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::config::{AgentKind, RunConfig};
use super::metrics::{CsvSink, EpisodeRecord, MetricsRow, TimingRow};
use super::HarnessError;
use crate::curiosity::{
    assemble_intrinsic_rewards, byol_explore_update, byol_hindsight_update, RewardNormalizer, SegmentBatch,
    WorldModelOptim,
};
use crate::models::{HeadKind, WorldModel};
use crate::ndgrad::{OptimState, Tensor};
use crate::rl::{a2c_update, mix_rewards, Policy, RolloutBuffer};
use crate::worlds::{maze_reset, maze_step, Action, MazeState, Observation, NUM_ACTIONS};

// RNG streams. Every stream is a ChaCha8 generator keyed by the master seed
// and told apart by its stream id, so changing how often one consumer draws
// leaves the others untouched.
pub const STREAM_INIT: u64 = 0;
pub const STREAM_POLICY: u64 = 1;
pub const STREAM_GENERATOR: u64 = 2;
/// Environment `e` uses stream `STREAM_ENV_BASE + e`; it seeds each episode.
pub const STREAM_ENV_BASE: u64 = 1000;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Output files of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunPaths {
    pub metrics: PathBuf,
    pub episodes: PathBuf,
    pub timing: PathBuf,
    pub config: PathBuf,
}

impl RunPaths {
    pub fn new(out_dir: &Path, seed: u64) -> Self {
        Self {
            metrics: out_dir.join(format!("metrics_seed{seed}.csv")),
            episodes: out_dir.join(format!("episodes_seed{seed}.csv")),
            timing: out_dir.join(format!("timing_seed{seed}.csv")),
            config: out_dir.join(format!("config_seed{seed}.toml")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub paths: RunPaths,
    pub rows: Vec<MetricsRow>,
    pub episodes: Vec<EpisodeRecord>,
    pub env_steps: u64,
    pub updates: u64,
}

/// Loads `config_path`, applies the seed override and runs it into `out_dir`.
pub fn run_experiment(config_path: &Path, seed: Option<u64>, out_dir: &Path) -> Result<RunSummary, HarnessError> {
    let mut cfg = RunConfig::load(config_path)?;
    if let Some(s) = seed {
        cfg.run.seed = s;
    }
    run_config(&cfg, out_dir)
}

enum WorldLearner {
    None,
    Model { model: WorldModel, optim: WorldModelOptim },
}

/// Running window behind one metrics row.
#[derive(Default)]
struct Window {
    returns: Vec<f64>,
    trackers: Vec<f64>,
    pred: Vec<f64>,
    rec: Vec<f64>,
    con: Vec<f64>,
    intr: Vec<f64>,
    last: Option<MetricsRow>,
}

fn mean_or(xs: &[f64], fallback: f64) -> f64 {
    if xs.is_empty() {
        fallback
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

impl Window {
    fn row(&mut self, env_step: u64) -> MetricsRow {
        let prev = self.last.clone().unwrap_or(MetricsRow {
            env_step: 0,
            episode_return: f64::NAN,
            trackers_touched_count: f64::NAN,
            prediction_loss: f64::NAN,
            reconstruction_loss: f64::NAN,
            contrastive_loss: f64::NAN,
            intrinsic_reward_mean: f64::NAN,
        });
        let row = MetricsRow {
            env_step,
            episode_return: mean_or(&self.returns, prev.episode_return),
            trackers_touched_count: mean_or(&self.trackers, prev.trackers_touched_count),
            prediction_loss: mean_or(&self.pred, prev.prediction_loss),
            reconstruction_loss: mean_or(&self.rec, prev.reconstruction_loss),
            contrastive_loss: mean_or(&self.con, prev.contrastive_loss),
            intrinsic_reward_mean: mean_or(&self.intr, prev.intrinsic_reward_mean),
        };
        *self = Window { last: Some(row.clone()), ..Window::default() };
        row
    }
}

struct Outputs {
    metrics: CsvSink,
    episodes: CsvSink,
    timing: CsvSink,
    start: Instant,
    rows: Vec<MetricsRow>,
}

impl Outputs {
    fn emit(&mut self, row: MetricsRow) -> Result<(), HarnessError> {
        self.metrics.write(&row)?;
        let t = TimingRow { env_step: row.env_step, wall_seconds: self.start.elapsed().as_secs_f64() };
        self.timing.write(&t)?;
        self.rows.push(row);
        Ok(())
    }
}

fn obs_matrix(obs: &[Observation], dim: usize, noise_scale: f64) -> Tensor {
    let mut data = vec![0.0; obs.len() * dim];
    for (o, chunk) in obs.iter().zip(data.chunks_mut(dim)) {
        o.write_scaled(chunk, noise_scale);
    }
    Tensor::matrix(obs.len(), dim, data).expect("observation rows")
}

fn zero_rows(t: &mut Tensor, rows: &[usize]) {
    let cols = t.shape()[1];
    let data = t.data_mut();
    for &r in rows {
        data[r * cols..(r + 1) * cols].fill(0.0);
    }
}

/// Collect→train loop. Writes the metrics, episode and timing CSVs plus the
/// resolved config into `out_dir`. Wall-clock time goes only to the timing
/// file so the metrics file is a pure function of `(config, seed)`.
pub fn run_config(cfg: &RunConfig, out_dir: &Path) -> Result<RunSummary, HarnessError> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| HarnessError::io(out_dir, e))?;
    let seed = cfg.run.seed;
    let paths = RunPaths::new(out_dir, seed);
    std::fs::write(&paths.config, cfg.to_toml()).map_err(|e| HarnessError::io(&paths.config, e))?;

    let maze = cfg.env.maze_config()?;
    let envs = cfg.run.num_envs;
    let seg = cfg.run.segment_len;
    let obs_dim = cfg.policy.obs_dim;
    let total = cfg.run.total_steps;
    let cadence = cfg.run.metrics_every;

    let mut init_rng = stream_rng(seed, STREAM_INIT);
    let mut policy_rng = stream_rng(seed, STREAM_POLICY);
    let mut gen_rng = stream_rng(seed, STREAM_GENERATOR);
    let mut env_rngs: Vec<ChaCha8Rng> = (0..envs as u64).map(|e| stream_rng(seed, STREAM_ENV_BASE + e)).collect();

    let mut policy = Policy::new(cfg.policy.clone(), &mut init_rng);
    let mut policy_optim = OptimState::new();
    let mut learner = match cfg.agent.kind {
        AgentKind::RandomPolicy => WorldLearner::None,
        AgentKind::ByolExplore => WorldLearner::Model {
            model: WorldModel::new(cfg.model.clone(), HeadKind::Predictor, &mut init_rng),
            optim: WorldModelOptim::default(),
        },
        AgentKind::ByolHindsight => WorldLearner::Model {
            model: WorldModel::new(cfg.model.clone(), HeadKind::Reconstructor, &mut init_rng),
            optim: WorldModelOptim::default(),
        },
    };
    let mut normalizer = RewardNormalizer::new(cfg.agent.reward_decay, 1e-8);
    let start_action = cfg.model.start_action();

    let mut states: Vec<MazeState> = Vec::with_capacity(envs);
    let mut current: Vec<Observation> = Vec::with_capacity(envs);
    for rng in env_rngs.iter_mut() {
        let (s, o) = maze_reset(&maze, rng.random());
        states.push(s);
        current.push(o);
    }
    let mut hidden = policy.zero_hidden(envs);
    let mut belief = Tensor::zeros(&[envs, cfg.model.belief]);
    let mut prev_actions = vec![start_action; envs];
    let mut returns = vec![0.0; envs];

    let mut out = Outputs {
        metrics: CsvSink::create(&paths.metrics)?,
        episodes: CsvSink::create(&paths.episodes)?,
        timing: CsvSink::create(&paths.timing)?,
        start: Instant::now(),
        rows: Vec::new(),
    };
    let mut window = Window::default();
    let mut episodes = Vec::new();
    out.emit(window.row(0))?;
    let mut next_row = cadence;
    let mut env_step = 0u64;
    let mut updates = 0u64;

    while env_step < total {
        let mut obs_data: Vec<f64> = Vec::with_capacity((seg + 1) * envs * obs_dim);
        let mut actions = Vec::with_capacity(seg * envs);
        let mut ext = Vec::with_capacity(seg * envs);
        let mut dones = Vec::with_capacity(seg * envs);
        let seg_hidden = hidden.clone();
        for t in 0..seg {
            let o = obs_matrix(&current, obs_dim, cfg.env.noise_input_scale);
            let chosen: Vec<usize> = match learner {
                WorldLearner::None => (0..envs).map(|_| policy_rng.random_range(0..NUM_ACTIONS)).collect(),
                WorldLearner::Model { .. } => {
                    let act = policy.act(&o, &hidden, &mut policy_rng)?;
                    hidden = act.next_hidden;
                    act.actions
                }
            };
            obs_data.extend_from_slice(o.data());
            for (e, &a) in chosen.iter().enumerate() {
                let action = Action::from_index(a).expect("policy samples valid actions");
                let step = maze_step(&maze, &mut states[e], action)?;
                returns[e] += step.reward;
                current[e] = step.obs;
                ext.push(step.reward);
                dones.push(step.done);
                if step.done {
                    if t + 1 != seg {
                        return Err(HarnessError::Runtime("episode ended inside a segment".into()));
                    }
                    let rec = EpisodeRecord {
                        env_step: env_step + envs as u64,
                        env: e,
                        episode_return: returns[e],
                        trackers_touched: states[e].touched_count(),
                    };
                    window.returns.push(rec.episode_return);
                    window.trackers.push(rec.trackers_touched as f64);
                    out.episodes.write(&rec)?;
                    episodes.push(rec);
                }
            }
            actions.extend_from_slice(&chosen);
            env_step += envs as u64;
            while next_row <= env_step && next_row <= total {
                out.emit(window.row(next_row))?;
                next_row += cadence;
            }
        }
        obs_data.extend_from_slice(obs_matrix(&current, obs_dim, cfg.env.noise_input_scale).data());
        let obs = Tensor::matrix((seg + 1) * envs, obs_dim, obs_data)?;

        if let WorldLearner::Model { model, optim } = &mut learner {
            let noise = if model.head == HeadKind::Reconstructor {
                let rows = SegmentBatch::term_rows(seg, envs, cfg.world_model.horizon);
                let data: Vec<f64> = (0..rows * cfg.model.noise).map(|_| gen_rng.sample(StandardNormal)).collect();
                Some(Tensor::matrix(rows, cfg.model.noise, data)?)
            } else {
                None
            };
            let batch = SegmentBatch {
                envs,
                len: seg,
                obs: obs.clone(),
                actions: actions.clone(),
                prev_actions: prev_actions.clone(),
                init_belief: belief.clone(),
                noise,
            };
            let (upd, lambda) = match model.head {
                HeadKind::Predictor => (byol_explore_update(model, optim, &batch, &cfg.world_model)?, 1.0),
                HeadKind::Reconstructor => {
                    (byol_hindsight_update(model, optim, &batch, &cfg.world_model)?, cfg.world_model.lambda)
                }
            };
            let raw: Vec<f64> = assemble_intrinsic_rewards(&upd.grid, lambda)?.iter().map(|r| r.reward).collect();
            let intr = normalizer.normalize(&raw);
            match model.head {
                HeadKind::Predictor => window.pred.push(upd.losses.prediction),
                HeadKind::Reconstructor => {
                    window.rec.push(upd.losses.reconstruction);
                    window.con.push(upd.losses.contrastive);
                }
            }
            window.intr.push(raw.iter().sum::<f64>() / raw.len() as f64);
            belief = upd.final_belief;

            let rewards: Vec<f64> = ext
                .iter()
                .zip(&intr)
                .map(|(&x, &i)| mix_rewards(x, i, cfg.agent.mixing, cfg.agent.regime))
                .collect();
            let buf = RolloutBuffer { envs, len: seg, obs, actions: actions.clone(), rewards, dones: dones.clone(), init_hidden: seg_hidden };
            a2c_update(&mut policy, &mut policy_optim, &buf, &cfg.a2c)?;
            updates += 1;
        }

        let last = (seg - 1) * envs;
        let mut finished = Vec::new();
        for e in 0..envs {
            if dones[last + e] {
                let (s, o) = maze_reset(&maze, env_rngs[e].random());
                states[e] = s;
                current[e] = o;
                returns[e] = 0.0;
                prev_actions[e] = start_action;
                finished.push(e);
            } else {
                prev_actions[e] = actions[last + e];
            }
        }
        zero_rows(&mut hidden, &finished);
        zero_rows(&mut belief, &finished);
    }

    out.metrics.finish()?;
    out.episodes.finish()?;
    out.timing.finish()?;
    Ok(RunSummary { paths, rows: out.rows, episodes, env_steps: env_step, updates })
}
