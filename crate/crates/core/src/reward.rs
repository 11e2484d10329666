//! Change reward (validity supervision) and push-into-box reward.

use serde::{Deserialize, Serialize};

use crate::percept::{self, DepthImage};
use crate::pushsim::PushOutcome;
use crate::world::WorkspaceConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    /// Changed-pixel count at which a push counts as valid.
    pub tau_mask: u32,
    pub change_thresh: f64,
    pub in_box_bonus: f64,
    pub height_thresh: f64,
}

impl RewardConfig {
    /// Threshold of 1000 pixels at 224×224, scaled by image area.
    pub fn for_resolution(resolution: usize) -> Self {
        let scale = resolution as f64 / 224.0;
        Self {
            tau_mask: (1000.0 * scale * scale).round().max(1.0) as u32,
            change_thresh: percept::DEFAULT_CHANGE_THRESH,
            in_box_bonus: 10.0,
            height_thresh: percept::DEFAULT_HEIGHT_THRESH,
        }
    }
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self::for_resolution(64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_change: u8,
    pub delta_dm: f64,
    pub r_dist: f64,
    pub r_inbox: f64,
    pub r_push: f64,
}

pub fn change_reward(c_t: usize, cfg: &RewardConfig) -> u8 {
    u8::from(c_t >= cfg.tau_mask as usize)
}

pub fn push_reward(
    dm_t: f64,
    dm_t1: f64,
    n_box: u32,
    n_ground: u32,
    either_pixelset_empty: bool,
    cfg: &RewardConfig,
) -> RewardBreakdown {
    let delta_dm = dm_t - dm_t1;
    let r_dist = if either_pixelset_empty { 0.0 } else { delta_dm.max(0.0) };
    let r_inbox = cfg.in_box_bonus * n_box as f64;
    let r_push = if n_ground > 0 { 0.0 } else { r_dist + r_inbox };
    RewardBreakdown { r_change: 0, delta_dm, r_dist, r_inbox, r_push }
}

/// Everything the two learners need from one executed push.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PushSignals {
    pub c_t: usize,
    pub rewards: RewardBreakdown,
}

/// Scores an executed push from the before/after heightmaps.
pub fn score_push(
    before: &DepthImage,
    after: &DepthImage,
    outcome: &PushOutcome,
    ws: &WorkspaceConfig,
    cfg: &RewardConfig,
) -> PushSignals {
    let c_t = percept::change_count(before, after, cfg.change_thresh).expect("same workspace");
    let o_t = percept::object_pixels(before, cfg.height_thresh);
    let o_t1 = percept::object_pixels(after, cfg.height_thresh);
    let dm_t = percept::mean_box_distance(&o_t, &ws.box_target, ws);
    let dm_t1 = percept::mean_box_distance(&o_t1, &ws.box_target, ws);
    let mut rewards = push_reward(dm_t, dm_t1, outcome.n_box, outcome.n_ground, o_t.is_empty() || o_t1.is_empty(), cfg);
    rewards.r_change = change_reward(c_t, cfg);
    PushSignals { c_t, rewards }
}
