//! Replay, TD targets, masked action selection and the training loops for
//! the validity network (PushMask) and the value network (PushReward).

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::actionmap::{MaskTensor, QMaps};
use crate::dataset::{MaskRecord, PushLabelRecord};
use crate::error::{Error, Result};
use crate::maskheur::par_map;
use crate::net::{self, loss, AdamState, Hourglass, Tensor};
use crate::percept::{self, DepthImage};
use crate::pushsim::{self, PushAction};
use crate::reward::{self, RewardConfig};
use crate::rng::{self, Purpose, Rng};
use crate::world::{self, Scene, WorkspaceConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ExperienceStats {
    pub c_t: u32,
    pub n_box: u32,
    pub n_ground: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Experience {
    pub image_t: DepthImage,
    pub action: PushAction,
    pub reward: f32,
    pub image_t1: DepthImage,
    /// No object left on the table after the push.
    pub terminal: bool,
    pub stats: ExperienceStats,
}

/// Fixed-capacity ring of experiences.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Experience>,
    inserted: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        Self { capacity, items: Vec::with_capacity(capacity.min(4096)), inserted: 0 }
    }

    pub fn push(&mut self, e: Experience) {
        if self.items.len() < self.capacity {
            self.items.push(e);
        } else {
            let slot = (self.inserted % self.capacity as u64) as usize;
            self.items[slot] = e;
        }
        self.inserted += 1;
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn items(&self) -> &[Experience] {
        &self.items
    }

    /// `n` uniform draws with replacement.
    pub fn sample<'a>(&'a self, n: usize, rng: &mut Rng) -> Vec<&'a Experience> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..n).map(|_| &self.items[rng.gen_range(0..self.items.len())]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub gamma: f64,
    pub batch_size: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of online steps over which epsilon decays linearly.
    pub epsilon_decay_fraction: f64,
    pub tau_prob: f64,
    pub offline_steps: usize,
    pub online_steps: usize,
    pub replay_capacity: usize,
    pub max_episode_pushes: usize,
    pub max_no_motion: usize,
    /// Objects per online training scenario, inclusive range.
    pub online_objects: (usize, usize),
    pub log_every: usize,
    pub seed: u64,
    pub adam: net::AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.0,
            batch_size: 16,
            epsilon_start: 0.5,
            epsilon_end: 0.05,
            epsilon_decay_fraction: 0.5,
            tau_prob: 0.14,
            offline_steps: 2000,
            online_steps: 2000,
            replay_capacity: 20000,
            max_episode_pushes: 30,
            max_no_motion: 10,
            online_objects: (1, 10),
            log_every: 50,
            seed: 0,
            adam: net::AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1)");
        }
        if !(self.epsilon_start > 0.0 && self.epsilon_start <= 1.0 && self.epsilon_end > 0.0 && self.epsilon_end <= 1.0) {
            return bad("epsilon must lie in (0, 1]");
        }
        if self.batch_size == 0 || self.replay_capacity == 0 {
            return bad("batch_size and replay_capacity must be positive");
        }
        if !(0.0..=1.0).contains(&self.tau_prob) {
            return bad("tau_prob must lie in [0, 1]");
        }
        if self.online_objects.0 == 0 || self.online_objects.0 > self.online_objects.1 {
            return bad("online_objects must be a nonempty range starting at 1 or more");
        }
        Ok(())
    }

    /// Linear decay over the first `epsilon_decay_fraction` of online steps.
    pub fn epsilon(&self, step: usize) -> f64 {
        let span = (self.online_steps as f64 * self.epsilon_decay_fraction).max(1.0);
        let f = (step as f64 / span).min(1.0);
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * f
    }
}

/// Supervised mask training schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub log_every: usize,
    pub seed: u64,
    pub adam: net::AdamConfig,
}

impl Default for MaskTrainConfig {
    fn default() -> Self {
        Self { steps: 3000, batch_size: 8, log_every: 50, seed: 0, adam: net::AdamConfig { lr: 1e-3, ..Default::default() } }
    }
}

/// One line of a training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: usize,
    pub loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub episode_return: Option<f64>,
}

/// Actions whose mask value reaches `tau_prob`.
pub fn valid_set(mask: &MaskTensor, tau_prob: f64) -> Vec<usize> {
    let t = tau_prob as f32;
    mask.data.iter().enumerate().filter(|(_, &m)| m >= t).map(|(i, _)| i).collect()
}

/// Bootstrapped regression target; terminal states do not bootstrap.
pub fn td_target(
    reward: f64,
    next_q: Option<&QMaps>,
    next_mask: Option<&MaskTensor>,
    terminal: bool,
    gamma: f64,
    tau_prob: f64,
) -> Result<f64> {
    if terminal || gamma == 0.0 {
        return Ok(reward);
    }
    let q = next_q.ok_or_else(|| Error::EmptyInput("bootstrapping needs next-state values".into()))?;
    net::tensor::ensure_finite(&q.data, "next_q")?;
    let restricted = next_mask.map(|m| valid_set(m, tau_prob)).filter(|v| !v.is_empty());
    let max = match restricted {
        Some(v) => v.iter().map(|&i| q.data[i]).fold(f32::NEG_INFINITY, f32::max),
        None => q.data.iter().copied().fold(f32::NEG_INFINITY, f32::max),
    };
    Ok(reward + gamma * max as f64)
}

/// Epsilon-greedy choice restricted to the valid set when it is nonempty.
/// Ties go to the smallest flat index.
pub fn select_action(q: &QMaps, mask: Option<&MaskTensor>, epsilon: f64, tau_prob: f64, rng: &mut Rng) -> PushAction {
    let v = mask.map(|m| valid_set(m, tau_prob)).unwrap_or_default();
    let explore = rng.gen::<f64>() < epsilon;
    let flat = if explore {
        if v.is_empty() {
            rng.gen_range(0..q.len())
        } else {
            v[rng.gen_range(0..v.len())]
        }
    } else if v.is_empty() {
        q.argmax()
    } else {
        let mut best = v[0];
        for &i in &v[1..] {
            if q.data[i] > q.data[best] {
                best = i;
            }
        }
        best
    };
    q.action(flat)
}

/// Cycles through shuffled permutations of `0..n`.
struct EpochSampler {
    order: Vec<usize>,
    pos: usize,
    rng: Rng,
}

impl EpochSampler {
    fn new(n: usize, rng: Rng) -> Self {
        Self { order: (0..n).collect(), pos: n, rng }
    }

    fn next_batch(&mut self, b: usize) -> Vec<usize> {
        (0..b)
            .map(|_| {
                if self.pos == self.order.len() {
                    self.order.shuffle(&mut self.rng);
                    self.pos = 0;
                }
                self.pos += 1;
                self.order[self.pos - 1]
            })
            .collect()
    }
}

fn new_adam(net: &Hourglass<f32>, cfg: net::AdamConfig, existing: Option<AdamState<f32>>) -> AdamState<f32> {
    existing.unwrap_or_else(|| AdamState::new(cfg, &net.params()))
}

fn should_log(step: usize, every: usize, total: usize) -> bool {
    every > 0 && (step % every == 0 || step + 1 == total)
}

/// Stage 1: dense BCE against heuristic masks over all `16·R·R` outputs.
pub fn train_pushmask_heuristic(
    net: &mut Hourglass<f32>,
    adam: Option<AdamState<f32>>,
    records: &[MaskRecord],
    ws: &WorkspaceConfig,
    cfg: &MaskTrainConfig,
) -> Result<(AdamState<f32>, Vec<LogRecord>)> {
    if records.is_empty() {
        return Err(Error::EmptyInput("mask dataset is empty".into()));
    }
    let mut adam = new_adam(net, cfg.adam, adam);
    let mut sampler = EpochSampler::new(records.len(), rng::stream(cfg.seed, Purpose::Batch, 1));
    let mut log = Vec::new();
    for step in 0..cfg.steps {
        let idx = sampler.next_batch(cfg.batch_size.min(records.len()));
        let images: Vec<&DepthImage> = idx.iter().map(|&i| &records[i].image).collect();
        let x = net::encode_input(&images, &net.config, ws)?;
        let cache = net.forward_cached(&x)?;
        let mut target = Vec::with_capacity(cache.output.data.len());
        for &i in &idx {
            if records[i].mask.data.len() != cache.output.item_len() {
                return Err(Error::ShapeMismatch("mask record does not match network output".into()));
            }
            target.extend_from_slice(&records[i].mask.data);
        }
        let weight = loss::balanced_weights(&target);
        let (l, g) = loss::bce(&cache.output.data, &target, &weight);
        net.zero_grad();
        net.backward(&cache, &Tensor { shape: cache.output.shape, data: g })?;
        adam.step(&mut net.params_mut())?;
        if !l.is_finite() {
            return Err(Error::NonFinite(format!("mask loss at step {step}")));
        }
        if should_log(step, cfg.log_every, cfg.steps) {
            log.push(LogRecord { step, loss: l as f64, epsilon: None, episode_return: None });
        }
    }
    Ok((adam, log))
}

/// Stage 2: BCE on the executed action only, labelled by the change reward.
pub fn train_pushmask_refinement(
    net: &mut Hourglass<f32>,
    adam: Option<AdamState<f32>>,
    records: &[PushLabelRecord],
    ws: &WorkspaceConfig,
    cfg: &MaskTrainConfig,
) -> Result<(AdamState<f32>, Vec<LogRecord>)> {
    if records.is_empty() {
        return Err(Error::EmptyInput("push label dataset is empty".into()));
    }
    let mut adam = new_adam(net, cfg.adam, adam);
    let mut sampler = EpochSampler::new(records.len(), rng::stream(cfg.seed, Purpose::Batch, 2));
    let mut log = Vec::new();
    let r = ws.resolution;
    for step in 0..cfg.steps {
        let idx = sampler.next_batch(cfg.batch_size.min(records.len()));
        let images: Vec<&DepthImage> = idx.iter().map(|&i| &records[i].image).collect();
        let x = net::encode_input(&images, &net.config, ws)?;
        let cache = net.forward_cached(&x)?;
        let n = cache.output.item_len();
        let slots: Vec<usize> = idx
            .iter()
            .enumerate()
            .map(|(b, &i)| b * n + records[i].action.flat_index(r))
            .collect();
        let pred: Vec<f32> = slots.iter().map(|&s| cache.output.data[s]).collect();
        let target: Vec<f32> = idx.iter().map(|&i| records[i].label).collect();
        let weight = loss::balanced_weights(&target);
        let (l, g) = loss::bce(&pred, &target, &weight);
        let mut dout = Tensor::zeros(cache.output.shape);
        for (&s, gv) in slots.iter().zip(g) {
            dout.data[s] += gv;
        }
        net.zero_grad();
        net.backward(&cache, &dout)?;
        adam.step(&mut net.params_mut())?;
        if !l.is_finite() {
            return Err(Error::NonFinite(format!("refinement loss at step {step}")));
        }
        if should_log(step, cfg.log_every, cfg.steps) {
            log.push(LogRecord { step, loss: l as f64, epsilon: None, episode_return: None });
        }
    }
    Ok((adam, log))
}

/// One squared-TD-error update on a batch; returns the batch mean loss.
pub fn q_update(
    net: &mut Hourglass<f32>,
    adam: &mut AdamState<f32>,
    batch: &[&Experience],
    mask: Option<&Hourglass<f32>>,
    ws: &WorkspaceConfig,
    cfg: &TrainConfig,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("empty batch".into()));
    }
    let mut targets: Vec<f64> = batch.iter().map(|e| e.reward as f64).collect();
    if cfg.gamma > 0.0 {
        let boot: Vec<usize> = (0..batch.len()).filter(|&i| !batch[i].terminal).collect();
        if !boot.is_empty() {
            let imgs: Vec<&DepthImage> = boot.iter().map(|&i| &batch[i].image_t1).collect();
            let next_q = net::predict(net, &imgs, ws)?;
            let next_m = match mask {
                Some(m) => Some(net::predict(m, &imgs, ws)?),
                None => None,
            };
            for (j, &i) in boot.iter().enumerate() {
                let m = next_m.as_ref().map(|v| &v[j]);
                targets[i] = td_target(batch[i].reward as f64, Some(&next_q[j]), m, false, cfg.gamma, cfg.tau_prob)?;
            }
        }
    }
    let imgs: Vec<&DepthImage> = batch.iter().map(|e| &e.image_t).collect();
    let x = net::encode_input(&imgs, &net.config, ws)?;
    let cache = net.forward_cached(&x)?;
    let n = cache.output.item_len();
    let inv_b = 1.0 / batch.len() as f64;
    let mut dout = Tensor::zeros(cache.output.shape);
    let mut total = 0.0;
    for (b, (e, &t)) in batch.iter().zip(&targets).enumerate() {
        let s = b * n + e.action.flat_index(ws.resolution);
        let (l, g) = loss::loss_sq(cache.output.data[s] as f64, t);
        total += l;
        dout.data[s] += (g * inv_b) as f32;
    }
    net.zero_grad();
    net.backward(&cache, &dout)?;
    adam.step(&mut net.params_mut())?;
    let mean = total * inv_b;
    if !mean.is_finite() {
        return Err(Error::NonFinite("TD loss".into()));
    }
    Ok(mean)
}

/// Mini-batch TD regression over a fixed experience set.
pub fn train_pushreward_offline(
    net: &mut Hourglass<f32>,
    adam: Option<AdamState<f32>>,
    data: &[Experience],
    mask: Option<&Hourglass<f32>>,
    ws: &WorkspaceConfig,
    cfg: &TrainConfig,
) -> Result<(AdamState<f32>, Vec<LogRecord>)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyInput("experience dataset is empty".into()));
    }
    let mut adam = new_adam(net, cfg.adam, adam);
    let mut sampler = EpochSampler::new(data.len(), rng::stream(cfg.seed, Purpose::Batch, 3));
    let mut log = Vec::new();
    for step in 0..cfg.offline_steps {
        let batch: Vec<&Experience> = sampler.next_batch(cfg.batch_size.min(data.len())).into_iter().map(|i| &data[i]).collect();
        let l = q_update(net, &mut adam, &batch, mask, ws, cfg)?;
        if should_log(step, cfg.log_every, cfg.offline_steps) {
            log.push(LogRecord { step, loss: l, epsilon: None, episode_return: None });
        }
    }
    Ok((adam, log))
}

/// Executes `action` and packages the transition with its push reward.
pub fn step_env(
    scene: &Scene,
    image: &DepthImage,
    action: PushAction,
    ws: &WorkspaceConfig,
    rew: &RewardConfig,
) -> Result<(Scene, Experience, bool)> {
    let outcome = pushsim::apply_push(scene, action, ws)?;
    let next = percept::render(&outcome.next_scene, ws);
    let sig = reward::score_push(image, &next, &outcome, ws, rew);
    let terminal = outcome.next_scene.n_on_table() == 0;
    let exp = Experience {
        image_t: image.clone(),
        action,
        reward: sig.rewards.r_push as f32,
        image_t1: next,
        terminal,
        stats: ExperienceStats { c_t: sig.c_t as u32, n_box: outcome.n_box, n_ground: outcome.n_ground },
    };
    Ok((outcome.next_scene, exp, outcome.any_motion))
}

/// Summary of the online stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineReport {
    pub episodes: usize,
    pub steps: usize,
    pub replay_len: usize,
    pub log: Vec<LogRecord>,
}

/// Epsilon-greedy interaction with one TD update per step. The mask network
/// is only read.
#[allow(clippy::too_many_arguments)]
pub fn train_pushreward_online(
    net: &mut Hourglass<f32>,
    adam: Option<AdamState<f32>>,
    mask: Option<&Hourglass<f32>>,
    prefill: &[Experience],
    ws: &WorkspaceConfig,
    rew: &RewardConfig,
    cfg: &TrainConfig,
) -> Result<(AdamState<f32>, OnlineReport)> {
    cfg.validate()?;
    let mut adam = new_adam(net, cfg.adam, adam);
    let mut replay = ReplayBuffer::new(cfg.replay_capacity);
    for e in prefill {
        replay.push(e.clone());
    }
    let mut explore = rng::stream(cfg.seed, Purpose::Explore, 0);
    let mut batch_rng = rng::stream(cfg.seed, Purpose::Batch, 4);
    let mut log = Vec::new();
    let mut episodes = 0usize;
    let mut current: Option<(Scene, DepthImage)> = None;
    let (mut pushes, mut still, mut ret) = (0usize, 0usize, 0.0f64);
    let mut episode_returns: Vec<f64> = Vec::new();
    for step in 0..cfg.online_steps {
        if current.is_none() {
            let mut srng = rng::stream(cfg.seed, Purpose::Scenario, episodes as u64);
            let n = srng.gen_range(cfg.online_objects.0..=cfg.online_objects.1);
            let scene = world::sample_scenario(srng.gen(), n, ws)?;
            let img = percept::render(&scene, ws);
            current = Some((scene, img));
            episodes += 1;
            (pushes, still, ret) = (0, 0, 0.0);
        }
        let (scene, img) = current.take().unwrap();
        let eps = cfg.epsilon(step);
        let q = &net::predict(net, &[&img], ws)?[0];
        let m = match mask {
            Some(mn) => Some(net::predict(mn, &[&img], ws)?.remove(0)),
            None => None,
        };
        let action = select_action(q, m.as_ref(), eps, cfg.tau_prob, &mut explore);
        let (next_scene, exp, moved) = step_env(&scene, &img, action, ws, rew)?;
        let terminal = exp.terminal;
        ret += exp.reward as f64;
        let next_img = exp.image_t1.clone();
        replay.push(exp);
        let batch = replay.sample(cfg.batch_size, &mut batch_rng);
        let l = q_update(net, &mut adam, &batch, mask, ws, cfg)?;
        pushes += 1;
        still = if moved { 0 } else { still + 1 };
        let done = terminal || still >= cfg.max_no_motion || pushes >= cfg.max_episode_pushes;
        if done {
            episode_returns.push(ret);
        } else {
            current = Some((next_scene, next_img));
        }
        if should_log(step, cfg.log_every, cfg.online_steps) || done {
            log.push(LogRecord { step, loss: l, epsilon: Some(eps), episode_return: done.then_some(ret) });
        }
    }
    let report = OnlineReport { episodes, steps: cfg.online_steps, replay_len: replay.len(), log };
    Ok((adam, report))
}

/// Counts of how offline actions were chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RewDataStats {
    pub uniform: usize,
    pub guided: usize,
    /// Guided draws that fell back to uniform because the valid set was empty.
    pub fallback: usize,
    pub scenes: usize,
}

/// Offline experiences: each push is uniform with probability 1/2 and
/// otherwise uniform over the mask's valid set. A slot that clears its table
/// continues on a fresh scene, so every slot yields exactly
/// `pushes_per_scene` experiences.
#[allow(clippy::too_many_arguments)]
pub fn build_offline_rew_dataset(
    n_scenes: usize,
    pushes_per_scene: usize,
    objects: (usize, usize),
    mask: Option<&Hourglass<f32>>,
    tau_prob: f64,
    ws: &WorkspaceConfig,
    rew: &RewardConfig,
    seed: u64,
    workers: usize,
) -> Result<(Vec<Experience>, RewDataStats)> {
    if objects.0 == 0 || objects.0 > objects.1 {
        return Err(Error::Config("object range must be nonempty and start at 1 or more".into()));
    }
    let slots: Vec<usize> = (0..n_scenes).collect();
    let per_slot = par_map(&slots, workers, |&s| -> Result<(Vec<Experience>, RewDataStats)> {
        let mut rng = rng::stream(seed, Purpose::Dataset, s as u64);
        let mut stats = RewDataStats::default();
        let fresh = |rng: &mut Rng, stats: &mut RewDataStats| -> Result<(Scene, DepthImage)> {
            let n = rng.gen_range(objects.0..=objects.1);
            let scene = world::sample_scenario(rng.gen(), n, ws)?;
            let img = percept::render(&scene, ws);
            stats.scenes += 1;
            Ok((scene, img))
        };
        let (mut scene, mut img) = fresh(&mut rng, &mut stats)?;
        let mut out = Vec::with_capacity(pushes_per_scene);
        let n_actions = ws.n_actions();
        for _ in 0..pushes_per_scene {
            let guided = rng.gen_bool(0.5);
            let flat = match (guided, mask) {
                (true, Some(m)) => {
                    let v = valid_set(&net::predict(m, &[&img], ws)?[0], tau_prob);
                    if v.is_empty() {
                        stats.fallback += 1;
                        rng.gen_range(0..n_actions)
                    } else {
                        stats.guided += 1;
                        v[rng.gen_range(0..v.len())]
                    }
                }
                (true, None) => {
                    stats.fallback += 1;
                    rng.gen_range(0..n_actions)
                }
                (false, _) => {
                    stats.uniform += 1;
                    rng.gen_range(0..n_actions)
                }
            };
            let action = PushAction::from_flat(flat, ws.resolution);
            let (next, exp, _) = step_env(&scene, &img, action, ws, rew)?;
            let terminal = exp.terminal;
            img = exp.image_t1.clone();
            scene = next;
            out.push(exp);
            if terminal {
                (scene, img) = fresh(&mut rng, &mut stats)?;
            }
        }
        Ok((out, stats))
    });
    let mut all = Vec::with_capacity(n_scenes * pushes_per_scene);
    let mut total = RewDataStats::default();
    for r in per_slot {
        let (exps, st) = r?;
        all.extend(exps);
        total.uniform += st.uniform;
        total.guided += st.guided;
        total.fallback += st.fallback;
        total.scenes += st.scenes;
    }
    Ok((all, total))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn qmaps(r: usize, data: Vec<f32>) -> QMaps {
        QMaps::from_vec(data.len() / (r * r), r, data)
    }

    #[test]
    fn td_target_examples() {
        let mut q = QMaps::zeros(16, 4);
        q.data[5] = 2.0;
        assert_eq!(td_target(10.03, None, None, false, 0.0, 0.14).unwrap(), 10.03);
        assert!((td_target(1.0, Some(&q), None, false, 0.4, 0.14).unwrap() - 1.8).abs() < 1e-12);
        assert_eq!(td_target(10.0, Some(&q), None, true, 0.4, 0.14).unwrap(), 10.0);
        let mut mask = MaskTensor::zeros(16, 4);
        mask.data[7] = 0.9;
        q.data[7] = 0.5;
        assert!((td_target(1.0, Some(&q), Some(&mask), false, 0.4, 0.14).unwrap() - 1.2).abs() < 1e-7);
        q.data[0] = f32::NAN;
        assert!(matches!(td_target(1.0, Some(&q), None, false, 0.4, 0.14), Err(Error::NonFinite(_))));
    }

    #[test]
    fn greedy_selection_respects_mask() {
        let mut rng = rng::stream(0, Purpose::Explore, 0);
        let mut q = QMaps::zeros(16, 4);
        q.data[3] = 5.0;
        q.data[40] = 1.0;
        assert_eq!(select_action(&q, None, 0.0, 0.14, &mut rng).flat_index(4), 3);
        let mut mask = MaskTensor::zeros(16, 4);
        mask.data[100] = 0.2;
        assert_eq!(select_action(&q, Some(&mask), 0.0, 0.14, &mut rng).flat_index(4), 100);
        // empty valid set: global argmax
        let empty = MaskTensor::zeros(16, 4);
        assert_eq!(select_action(&q, Some(&empty), 0.0, 0.14, &mut rng).flat_index(4), 3);
    }

    #[test]
    fn replay_is_a_ring() {
        let e = |r: f32| Experience {
            image_t: DepthImage::zeros(2),
            action: PushAction::new(0, 0, 0),
            reward: r,
            image_t1: DepthImage::zeros(2),
            terminal: false,
            stats: ExperienceStats::default(),
        };
        let mut rb = ReplayBuffer::new(3);
        for i in 0..5 {
            rb.push(e(i as f32));
            assert!(rb.len() <= 3);
        }
        let rewards: Vec<f32> = rb.items().iter().map(|x| x.reward).collect();
        assert_eq!(rewards, vec![3.0, 4.0, 2.0]);
        let mut a = rng::stream(1, Purpose::Batch, 0);
        let mut b = rng::stream(1, Purpose::Batch, 0);
        let sa: Vec<f32> = rb.sample(8, &mut a).iter().map(|x| x.reward).collect();
        let sb: Vec<f32> = rb.sample(8, &mut b).iter().map(|x| x.reward).collect();
        assert_eq!(sa, sb);
    }

    #[test]
    fn epsilon_schedule() {
        let cfg = TrainConfig { online_steps: 100, ..Default::default() };
        assert_eq!(cfg.epsilon(0), 0.5);
        assert!((cfg.epsilon(25) - 0.275).abs() < 1e-12);
        assert!((cfg.epsilon(50) - 0.05).abs() < 1e-12);
        assert!((cfg.epsilon(99) - 0.05).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn restricted_argmax_equals_hadamard_argmax(
            q in proptest::collection::vec(0.0f32..10.0, 16 * 4 * 4),
            m in proptest::collection::vec(prop_oneof![Just(0.0f32), 0.0f32..1.0], 16 * 4 * 4),
        ) {
            let q = qmaps(4, q);
            let mask = MaskTensor::from_vec(16, 4, m);
            let v = valid_set(&mask, 0.14);
            prop_assume!(!v.is_empty());
            let mut rng = rng::stream(0, Purpose::Explore, 0);
            let a = select_action(&q, Some(&mask), 0.0, 0.14, &mut rng).flat_index(4);
            prop_assert!(mask.data[a] >= 0.14);
            let had: Vec<f32> = q.data.iter().zip(&mask.data).map(|(&x, &mm)| if mm >= 0.14 { x } else { 0.0 }).collect();
            let best = had.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            prop_assert_eq!(q.data[a], best);
        }
    }
}
