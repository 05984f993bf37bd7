//! Environments: the oscillator maze with its noise wrappers, and tabular MDPs.

mod dice;
mod maze;
mod noise;

pub use dice::{dice_mdp, DiscreteMDP, ExogenousModel, DICE_CONTEXT, DICE_FACES, DICE_LOSE, DICE_WIN};
pub use maze::{
    maze_reset, maze_step, Action, Axis, CellKind, MazeConfig, MazeMap, MazeState, Observation, OscillatorSpec,
    OscillatorState, StepInfo, StepOutcome, DEFAULT_EPISODE_LENGTH, NUM_ACTIONS, NUM_CHANNELS, NUM_COINS,
    NUM_TRACKERS, OBS_DIM, WINDOW, WINDOW_CELLS,
};
pub use noise::{
    apply_pixel_noise, corrupt_observation, persistive_step_size, persistive_update, sticky_filter, NoiseSetting,
    NoiseVariant, PersistiveLayer, DEFAULT_PIXEL_PROB, PERSISTIVE_MOD,
};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum WorldError {
    #[error("map line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("{0}")]
    Io(String),
    #[error("step called after the episode ended")]
    EpisodeDone,
    #[error("invalid MDP: {0}")]
    InvalidMdp(String),
}
