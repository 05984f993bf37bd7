//! Stochasticity wrappers: sticky actions and the pixel-noise layers.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::maze::{Action, CellKind, Observation, WINDOW_CELLS};

/// Activation probability used by the random-pixel and on-demand layers.
pub const DEFAULT_PIXEL_PROB: f64 = 0.25;
/// Modulus of the persistive offset layer.
pub const PERSISTIVE_MOD: i32 = 50;

/// Which noise process corrupts observations and oscillators.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseVariant {
    Baseline,
    BrownianOscillators,
    RandomPixel,
    OnDemandPixel,
    Persistive,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSetting {
    pub variant: NoiseVariant,
    /// Activation probability of the random layer (random and on-demand pixel noise).
    #[serde(default = "default_pixel_prob")]
    pub pixel_prob: f64,
    /// Sticky-action repeat probability.
    #[serde(default)]
    pub sticky: f64,
}

fn default_pixel_prob() -> f64 {
    DEFAULT_PIXEL_PROB
}

impl Default for NoiseSetting {
    fn default() -> Self {
        Self::new(NoiseVariant::Baseline)
    }
}

impl NoiseSetting {
    pub fn new(variant: NoiseVariant) -> Self {
        Self { variant, pixel_prob: DEFAULT_PIXEL_PROB, sticky: 0.0 }
    }

    pub fn with_sticky(mut self, sticky: f64) -> Self {
        self.sticky = sticky;
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, p) in [("pixel_prob", self.pixel_prob), ("sticky", self.sticky)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("{name} = {p} is not a probability"));
            }
        }
        Ok(())
    }
}

/// With probability `rho` repeats the previously executed action.
pub fn sticky_filter(intended: Action, previous: Action, rho: f64, rng: &mut impl Rng) -> Action {
    if rho > 0.0 && rng.random::<f64>() < rho {
        previous
    } else {
        intended
    }
}

/// Additive per-cell offsets in `[0, 50)` that random-walk across frames.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PersistiveLayer {
    offsets: [i32; WINDOW_CELLS],
}

impl PersistiveLayer {
    pub fn new(offsets: [i32; WINDOW_CELLS]) -> Self {
        assert!(offsets.iter().all(|u| (0..PERSISTIVE_MOD).contains(u)));
        Self { offsets }
    }

    pub fn random(rng: &mut impl Rng) -> Self {
        let mut offsets = [0; WINDOW_CELLS];
        for u in offsets.iter_mut() {
            *u = rng.random_range(0..PERSISTIVE_MOD);
        }
        Self { offsets }
    }

    pub fn offsets(&self) -> &[i32; WINDOW_CELLS] {
        &self.offsets
    }
}

/// Per-cell step magnitude for an action: 1 for odd key codes, 11 for even.
pub fn persistive_step_size(prev_action: Action) -> i32 {
    if prev_action.key() % 2 == 1 {
        1
    } else {
        11
    }
}

/// `U ← U + ε mod 50` with `ε` uniform over `{-s, +s}` per cell.
pub fn persistive_update(layer: &PersistiveLayer, prev_action: Action, rng: &mut impl Rng) -> PersistiveLayer {
    let s = persistive_step_size(prev_action);
    let mut offsets = layer.offsets;
    for u in offsets.iter_mut() {
        let step = if rng.random::<bool>() { s } else { -s };
        *u = (*u + step).rem_euclid(PERSISTIVE_MOD);
    }
    PersistiveLayer { offsets }
}

/// `(base + u) mod 256` on 8-bit intensities.
pub fn corrupt_observation(base: u8, offset: i32) -> u8 {
    (base as i32 + offset).rem_euclid(256) as u8
}

/// Fills the observation's noise layer according to `setting`.
///
/// `last_action` is the executed (post-sticky) action that produced this
/// frame, `None` right after a reset. `persistive` must be supplied for the
/// persistive variant.
pub fn apply_pixel_noise(
    obs: &mut Observation,
    setting: &NoiseSetting,
    last_action: Option<Action>,
    persistive: Option<&PersistiveLayer>,
    rng: &mut impl Rng,
) {
    obs.noise = [0.0; WINDOW_CELLS];
    match setting.variant {
        NoiseVariant::Baseline | NoiseVariant::BrownianOscillators => {}
        NoiseVariant::RandomPixel => {
            if rng.random::<f64>() < setting.pixel_prob {
                fill_uniform(&mut obs.noise, rng);
            }
        }
        NoiseVariant::OnDemandPixel => {
            if last_action == Some(Action::NoOp) {
                fill_uniform(&mut obs.noise, rng);
            }
        }
        NoiseVariant::Persistive => {
            let layer = persistive.expect("persistive noise needs a layer");
            for ((n, cell), u) in obs.noise.iter_mut().zip(&obs.cells).zip(layer.offsets()) {
                *n = corrupt_observation(cell.intensity(), *u) as f64 / 255.0;
            }
        }
    }
}

fn fill_uniform(layer: &mut [f64; WINDOW_CELLS], rng: &mut impl Rng) {
    for x in layer.iter_mut() {
        *x = rng.random::<f64>();
    }
}

impl CellKind {
    /// 8-bit intensity of the cell type, used as the base of persistive noise.
    pub fn intensity(self) -> u8 {
        match self {
            CellKind::Wall => 0,
            CellKind::Floor => 64,
            CellKind::Block => 128,
            CellKind::Tracker => 192,
            CellKind::Coin => 255,
        }
    }
}
