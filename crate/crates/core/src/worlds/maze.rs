//! Grid maze with oscillating blocks, tracker cells and coins.
//!
//! Map legend (one character per cell):
//!
//! ```text
//! #  wall            .  floor          S  spawn
//! V  vertical oscillator home, its track is the run of `v` cells below it
//! H  horizontal oscillator home, its track is the run of `h` cells to its right
//! 1-4  tracker cells        C  coin spawn region
//! ```
//!
//! Oscillator homes and tracks are walkable whenever the block is elsewhere.
//! Oscillators are numbered in reading order, vertical ones first.

use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::noise::{apply_pixel_noise, persistive_update, sticky_filter, NoiseSetting, NoiseVariant, PersistiveLayer};
use super::WorldError;

pub const WINDOW: usize = 5;
pub const WINDOW_CELLS: usize = WINDOW * WINDOW;
pub const NUM_CHANNELS: usize = 5;
/// Length of [`Observation::to_vector`].
pub const OBS_DIM: usize = WINDOW_CELLS * NUM_CHANNELS + WINDOW_CELLS;
pub const NUM_ACTIONS: usize = 5;
pub const NUM_TRACKERS: usize = 4;
pub const NUM_COINS: usize = 2;
pub const DEFAULT_EPISODE_LENGTH: usize = 500;

const DEFAULT_MAP: &str = include_str!("../../assets/maze.txt");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
    NoOp,
}

impl Action {
    pub const ALL: [Action; NUM_ACTIONS] = [Action::Up, Action::Down, Action::Left, Action::Right, Action::NoOp];

    /// Integer key code; its parity picks the persistive step size.
    pub fn key(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Self::ALL.get(i).copied()
    }

    fn delta(self) -> (isize, isize) {
        match self {
            Action::Up => (-1, 0),
            Action::Down => (1, 0),
            Action::Left => (0, -1),
            Action::Right => (0, 1),
            Action::NoOp => (0, 0),
        }
    }
}

/// What a cell shows in the observation window.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CellKind {
    Wall,
    Floor,
    Block,
    Tracker,
    Coin,
}

impl CellKind {
    pub fn channel(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Tile {
    Wall,
    Floor,
    Tracker(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Vertical,
    Horizontal,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OscillatorSpec {
    pub axis: Axis,
    pub home: (usize, usize),
    /// Largest offset; the block moves over `0..=range`.
    pub range: usize,
}

impl OscillatorSpec {
    pub fn cell(&self, offset: usize) -> (usize, usize) {
        match self.axis {
            Axis::Vertical => (self.home.0 + offset, self.home.1),
            Axis::Horizontal => (self.home.0, self.home.1 + offset),
        }
    }
}

/// Parsed, immutable map layout.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MazeMap {
    rows: usize,
    cols: usize,
    tiles: Vec<Tile>,
    spawn: (usize, usize),
    trackers: [(usize, usize); NUM_TRACKERS],
    oscillators: Vec<OscillatorSpec>,
    coin_cells: Vec<(usize, usize)>,
}

impl MazeMap {
    /// The bundled 15×20 layout.
    pub fn default_map() -> Self {
        Self::parse(DEFAULT_MAP).expect("bundled map parses")
    }

    pub fn load(path: &Path) -> Result<Self, WorldError> {
        let text = std::fs::read_to_string(path).map_err(|e| WorldError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, WorldError> {
        let lines: Vec<(usize, &str)> = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim_end()))
            .filter(|(_, l)| !l.is_empty())
            .collect();
        let err = |line: usize, msg: String| WorldError::Parse { line, msg };
        let Some(&(first_line, first)) = lines.first() else {
            return Err(err(1, "map is empty".into()));
        };
        let cols = first.chars().count();
        let rows = lines.len();
        let mut grid = Vec::with_capacity(rows);
        for &(ln, l) in &lines {
            let row: Vec<char> = l.chars().collect();
            if row.len() != cols {
                return Err(err(ln, format!("row has {} cells, expected {cols}", row.len())));
            }
            grid.push(row);
        }
        let line_of = |r: usize| lines[r].0;

        let mut tiles = vec![Tile::Wall; rows * cols];
        let mut spawn = None;
        let mut trackers: [Option<(usize, usize)>; NUM_TRACKERS] = [None; NUM_TRACKERS];
        let mut coin_cells = Vec::new();
        let mut homes = Vec::new();
        for (r, row) in grid.iter().enumerate() {
            for (c, &ch) in row.iter().enumerate() {
                let tile = match ch {
                    '#' => Tile::Wall,
                    '.' | 'v' | 'h' => Tile::Floor,
                    'S' => {
                        if spawn.replace((r, c)).is_some() {
                            return Err(err(line_of(r), "second spawn cell".into()));
                        }
                        Tile::Floor
                    }
                    'C' => {
                        coin_cells.push((r, c));
                        Tile::Floor
                    }
                    'V' | 'H' => {
                        homes.push((ch, r, c));
                        Tile::Floor
                    }
                    '1'..='4' => {
                        let k = ch as usize - '1' as usize;
                        if trackers[k].replace((r, c)).is_some() {
                            return Err(err(line_of(r), format!("tracker {ch} appears twice")));
                        }
                        Tile::Tracker(k)
                    }
                    other => return Err(err(line_of(r), format!("unknown cell '{other}' at column {}", c + 1))),
                };
                tiles[r * cols + c] = tile;
            }
        }
        let spawn = spawn.ok_or_else(|| err(first_line, "no spawn cell 'S'".into()))?;
        let mut tracker_cells = [(0, 0); NUM_TRACKERS];
        for (k, t) in trackers.iter().enumerate() {
            tracker_cells[k] = t.ok_or_else(|| err(first_line, format!("tracker {} missing", k + 1)))?;
        }
        if coin_cells.len() < NUM_COINS {
            return Err(err(first_line, format!("need at least {NUM_COINS} coin cells 'C'")));
        }

        let mut oscillators = Vec::new();
        for axis in [Axis::Vertical, Axis::Horizontal] {
            for &(ch, r, c) in &homes {
                let (want, track) = match axis {
                    Axis::Vertical => ('V', 'v'),
                    Axis::Horizontal => ('H', 'h'),
                };
                if ch != want {
                    continue;
                }
                let mut range = 0;
                loop {
                    let (nr, nc) = match axis {
                        Axis::Vertical => (r + range + 1, c),
                        Axis::Horizontal => (r, c + range + 1),
                    };
                    if nr < rows && nc < cols && grid[nr][nc] == track {
                        range += 1;
                    } else {
                        break;
                    }
                }
                if range == 0 {
                    return Err(err(line_of(r), format!("oscillator '{ch}' at column {} has no track", c + 1)));
                }
                oscillators.push(OscillatorSpec { axis, home: (r, c), range });
            }
        }

        Ok(Self { rows, cols, tiles, spawn, trackers: tracker_cells, oscillators, coin_cells })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn spawn(&self) -> (usize, usize) {
        self.spawn
    }

    pub fn tracker_cell(&self, k: usize) -> (usize, usize) {
        self.trackers[k]
    }

    pub fn oscillators(&self) -> &[OscillatorSpec] {
        &self.oscillators
    }

    pub fn coin_cells(&self) -> &[(usize, usize)] {
        &self.coin_cells
    }

    fn tile(&self, r: usize, c: usize) -> Tile {
        self.tiles[r * self.cols + c]
    }

    pub fn is_walkable(&self, r: usize, c: usize) -> bool {
        r < self.rows && c < self.cols && self.tile(r, c) != Tile::Wall
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MazeConfig {
    pub map: MazeMap,
    pub noise: NoiseSetting,
    pub episode_length: usize,
}

impl MazeConfig {
    pub fn new(noise: NoiseSetting) -> Self {
        Self { map: MazeMap::default_map(), noise, episode_length: DEFAULT_EPISODE_LENGTH }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OscillatorState {
    pub offset: usize,
    /// +1 or -1; only used by the deterministic triangle wave.
    pub dir: i8,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MazeState {
    pub agent: (usize, usize),
    pub oscillators: Vec<OscillatorState>,
    pub coins: Vec<(usize, usize)>,
    pub trackers_touched: [bool; NUM_TRACKERS],
    pub step: usize,
    pub prev_executed: Action,
    pub persistive: Option<PersistiveLayer>,
    rng: ChaCha8Rng,
}

impl MazeState {
    pub fn touched_count(&self) -> usize {
        self.trackers_touched.iter().filter(|&&t| t).count()
    }

    pub fn is_done(&self, cfg: &MazeConfig) -> bool {
        self.step >= cfg.episode_length
    }

    fn block_at(&self, map: &MazeMap, cell: (usize, usize)) -> bool {
        map.oscillators.iter().zip(&self.oscillators).any(|(o, s)| o.cell(s.offset) == cell)
    }

    fn cell_kind(&self, map: &MazeMap, r: isize, c: isize) -> CellKind {
        if r < 0 || c < 0 || !map.is_walkable(r as usize, c as usize) {
            return CellKind::Wall;
        }
        let cell = (r as usize, c as usize);
        if self.block_at(map, cell) {
            CellKind::Block
        } else if self.coins.contains(&cell) {
            CellKind::Coin
        } else if matches!(map.tile(cell.0, cell.1), Tile::Tracker(_)) {
            CellKind::Tracker
        } else {
            CellKind::Floor
        }
    }

    fn observe(&self, map: &MazeMap) -> Observation {
        let mut cells = [CellKind::Wall; WINDOW_CELLS];
        let half = (WINDOW / 2) as isize;
        for i in 0..WINDOW {
            for j in 0..WINDOW {
                let r = self.agent.0 as isize + i as isize - half;
                let c = self.agent.1 as isize + j as isize - half;
                cells[i * WINDOW + j] = self.cell_kind(map, r, c);
            }
        }
        Observation { cells, noise: [0.0; WINDOW_CELLS] }
    }
}

/// 5×5 egocentric window plus a real-valued noise layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub cells: [CellKind; WINDOW_CELLS],
    pub noise: [f64; WINDOW_CELLS],
}

impl Observation {
    /// One-hot cell channels (cell-major), followed by the noise layer.
    pub fn to_vector(&self) -> Vec<f64> {
        let mut v = vec![0.0; OBS_DIM];
        self.write_into(&mut v);
        v
    }

    pub fn write_into(&self, out: &mut [f64]) {
        self.write_scaled(out, 1.0);
    }

    /// Like [`Observation::write_into`], with the noise layer multiplied by
    /// `noise_scale` on its way into the vector.
    pub fn write_scaled(&self, out: &mut [f64], noise_scale: f64) {
        assert_eq!(out.len(), OBS_DIM);
        out.fill(0.0);
        for (i, cell) in self.cells.iter().enumerate() {
            out[i * NUM_CHANNELS + cell.channel()] = 1.0;
        }
        for (o, n) in out[WINDOW_CELLS * NUM_CHANNELS..].iter_mut().zip(&self.noise) {
            *o = n * noise_scale;
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepInfo {
    pub executed: Action,
    pub trackers_touched: usize,
    pub coin_collected: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub obs: Observation,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

pub fn maze_reset(cfg: &MazeConfig, seed: u64) -> (MazeState, Observation) {
    let map = &cfg.map;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coins = sample(&mut rng, map.coin_cells.len(), NUM_COINS).into_iter().map(|i| map.coin_cells[i]).collect();
    let persistive = (cfg.noise.variant == NoiseVariant::Persistive).then(|| PersistiveLayer::random(&mut rng));
    let mut state = MazeState {
        agent: map.spawn,
        oscillators: map.oscillators.iter().map(|_| OscillatorState { offset: 0, dir: 1 }).collect(),
        coins,
        trackers_touched: [false; NUM_TRACKERS],
        step: 0,
        prev_executed: Action::NoOp,
        persistive,
        rng,
    };
    let mut obs = state.observe(map);
    apply_pixel_noise(&mut obs, &cfg.noise, None, state.persistive.as_ref(), &mut state.rng);
    (state, obs)
}

pub fn maze_step(cfg: &MazeConfig, state: &mut MazeState, action: Action) -> Result<StepOutcome, WorldError> {
    if state.is_done(cfg) {
        return Err(WorldError::EpisodeDone);
    }
    let map = &cfg.map;
    let executed = sticky_filter(action, state.prev_executed, cfg.noise.sticky, &mut state.rng);
    state.prev_executed = executed;

    let (dr, dc) = executed.delta();
    let (r, c) = (state.agent.0 as isize + dr, state.agent.1 as isize + dc);
    if r >= 0 && c >= 0 {
        let target = (r as usize, c as usize);
        if map.is_walkable(target.0, target.1) && !state.block_at(map, target) {
            state.agent = target;
        }
    }

    let brownian = cfg.noise.variant == NoiseVariant::BrownianOscillators;
    for (spec, osc) in map.oscillators.iter().zip(state.oscillators.iter_mut()) {
        let range = spec.range as isize;
        let cur = osc.offset as isize;
        let next = if brownian {
            let step = state.rng.random_range(-1..=1i64) as isize;
            let n = cur + step;
            if (0..=range).contains(&n) {
                n
            } else {
                cur - step
            }
        } else {
            let mut n = cur + osc.dir as isize;
            if !(0..=range).contains(&n) {
                osc.dir = -osc.dir;
                n = cur + osc.dir as isize;
            }
            n
        };
        // A block never moves onto the agent; it waits instead.
        if spec.cell(next as usize) != state.agent {
            osc.offset = next as usize;
        } else if !brownian {
            osc.dir = -osc.dir;
        }
    }

    if let Tile::Tracker(k) = map.tile(state.agent.0, state.agent.1) {
        state.trackers_touched[k] = true;
    }
    let mut reward = 0.0;
    let coin_collected = if let Some(i) = state.coins.iter().position(|&p| p == state.agent) {
        state.coins.swap_remove(i);
        reward = 1.0;
        true
    } else {
        false
    };

    state.step += 1;
    let done = state.is_done(cfg);
    if let Some(layer) = &state.persistive {
        state.persistive = Some(persistive_update(layer, executed, &mut state.rng));
    }
    let mut obs = state.observe(map);
    apply_pixel_noise(&mut obs, &cfg.noise, Some(executed), state.persistive.as_ref(), &mut state.rng);
    Ok(StepOutcome {
        obs,
        reward,
        done,
        info: StepInfo { executed, trackers_touched: state.touched_count(), coin_collected },
    })
}
