//! Command implementations behind the `pushlab` binary.
//!
//! Every command takes a resolved [`RunConfig`] and explicit paths, writes its
//! outputs plus a `<output>.config.json` copy of the configuration, and is
//! deterministic given both.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng as _;
use serde::Serialize;

use crate::config::RunConfig;
use crate::dataset::{self, MaskRecord, PushLabelRecord};
use crate::dqn::{self, Experience, LogRecord, RewDataStats};
use crate::error::{Error, Result};
use crate::harness::{self, GreedyTowardBox, NetPolicy, PolicyReport, PrReport, RandomPolicy};
use crate::maskheur;
use crate::net::{self, AdamState, Checkpoint, Hourglass, HourglassConfig};
use crate::percept;
use crate::pushsim::PushAction;
use crate::rng::{self, Purpose};
use crate::world::{self, Scene};

/// Parses `"a..b"` (half-open), `"a-b"` (inclusive), `"a,b,c"` or `"a"`.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let bad = || Error::Config(format!("cannot parse seed list `{text}`"));
    let num = |s: &str| s.trim().parse::<u64>().map_err(|_| bad());
    let seeds: Vec<u64> = if let Some((a, b)) = text.split_once("..") {
        (num(a)?..num(b)?).collect()
    } else if let Some((a, b)) = text.split_once('-') {
        (num(a)?..=num(b)?).collect()
    } else {
        text.split(',').map(num).collect::<Result<_>>()?
    };
    if seeds.is_empty() {
        return Err(Error::Config(format!("seed list `{text}` is empty")));
    }
    Ok(seeds)
}

fn sidecar(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".config.json");
    PathBuf::from(s)
}

fn archive_config(cfg: &RunConfig, out: &Path, extra: serde_json::Value) -> Result<()> {
    let doc = serde_json::json!({ "config": cfg.to_json(), "command": extra });
    std::fs::write(sidecar(out), serde_json::to_string_pretty(&doc)? + "\n")?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(v)? + "\n")?;
    Ok(())
}

fn write_log(path: Option<&Path>, log: &[LogRecord]) -> Result<()> {
    if let Some(p) = path {
        let mut w = BufWriter::new(File::create(p)?);
        for l in log {
            writeln!(w, "{}", serde_json::to_string(l)?)?;
        }
        w.flush()?;
    }
    Ok(())
}

fn load_net(path: &Path, expect: &HourglassConfig, what: &str) -> Result<Checkpoint> {
    let ck = Checkpoint::load(path)?;
    if ck.net.config.out_channels != expect.out_channels || ck.net.config.head_activation != expect.head_activation {
        return Err(Error::Config(format!("{what} checkpoint {} has an incompatible head", path.display())));
    }
    Ok(ck)
}

pub fn gen_scenes(cfg: &RunConfig, seeds: &[u64], objects: Option<usize>, out: &Path) -> Result<usize> {
    let mut w = BufWriter::new(File::create(out)?);
    for &s in seeds {
        let n = objects.unwrap_or_else(|| maskheur::objects_for_seed(s, cfg.data.objects));
        writeln!(w, "{}", world::sample_scenario(s, n, &cfg.workspace)?.to_json())?;
    }
    w.flush()?;
    archive_config(cfg, out, serde_json::json!({"gen-scenes": {"seeds": seeds.len(), "objects": objects}}))?;
    Ok(seeds.len())
}

pub fn gen_mask_data(cfg: &RunConfig, seeds: &[u64], out: &Path, workers: usize) -> Result<usize> {
    let recs = maskheur::build_mask_dataset(seeds, cfg.data.objects, &cfg.workspace, &cfg.heuristic, workers)?;
    dataset::save(out, &cfg.to_json(), &recs)?;
    archive_config(cfg, out, serde_json::json!({"gen-mask-data": {"seeds": seeds}}))?;
    Ok(recs.len())
}

pub fn gen_push_labels(cfg: &RunConfig, seeds: &[u64], out: &Path, workers: usize) -> Result<usize> {
    let recs = maskheur::build_push_refinement_dataset(
        seeds,
        cfg.data.pushes_per_scene,
        cfg.data.objects,
        &cfg.workspace,
        &cfg.reward,
        workers,
    )?;
    dataset::save(out, &cfg.to_json(), &recs)?;
    archive_config(cfg, out, serde_json::json!({"gen-push-labels": {"seeds": seeds}}))?;
    Ok(recs.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskStage {
    Heuristic,
    Refinement,
}

pub fn train_mask(
    cfg: &RunConfig,
    stage: MaskStage,
    data: &Path,
    init: Option<&Path>,
    out: &Path,
    log: Option<&Path>,
) -> Result<Vec<LogRecord>> {
    let (net, adam) = match (stage, init) {
        (MaskStage::Refinement, None) => {
            return Err(Error::Config("refinement starts from a stage-1 checkpoint (--init)".into()))
        }
        (_, Some(p)) => {
            let ck = load_net(p, &cfg.mask_net, "mask")?;
            // refinement restarts the optimizer
            let adam = if stage == MaskStage::Heuristic { ck.adam } else { None };
            (ck.net, adam)
        }
        (_, None) => (Hourglass::new(cfg.mask_net.clone(), cfg.init_seed)?, None),
    };
    let mut net = net;
    let (adam, records) = match stage {
        MaskStage::Heuristic => {
            let (_, recs): (_, Vec<MaskRecord>) = dataset::load(data)?;
            dqn::train_pushmask_heuristic(&mut net, adam, &recs, &cfg.workspace, &cfg.mask_training)?
        }
        MaskStage::Refinement => {
            let (_, recs): (_, Vec<PushLabelRecord>) = dataset::load(data)?;
            dqn::train_pushmask_refinement(&mut net, adam, &recs, &cfg.workspace, &cfg.mask_training)?
        }
    };
    Checkpoint::new(net, Some(adam)).save(out)?;
    write_log(log, &records)?;
    archive_config(cfg, out, serde_json::json!({"train-mask": {"stage": stage, "data": data, "init": init}}))?;
    Ok(records)
}

pub fn gen_rew_data(cfg: &RunConfig, mask_ckpt: Option<&Path>, n_scenes: usize, out: &Path, workers: usize) -> Result<RewDataStats> {
    let mask = mask_ckpt.map(|p| load_net(p, &cfg.mask_net, "mask")).transpose()?;
    let (exps, stats) = dqn::build_offline_rew_dataset(
        n_scenes,
        cfg.data.pushes_per_scene,
        cfg.data.objects,
        mask.as_ref().map(|c| &c.net),
        cfg.training.tau_prob,
        &cfg.workspace,
        &cfg.reward,
        cfg.data.seed,
        workers,
    )?;
    dataset::save(out, &cfg.to_json(), &exps)?;
    archive_config(cfg, out, serde_json::json!({"gen-rew-data": {"scenes": n_scenes, "mask_ckpt": mask_ckpt, "stats": stats}}))?;
    Ok(stats)
}

fn start_reward_net(cfg: &RunConfig, init: Option<&Path>) -> Result<(Hourglass<f32>, Option<AdamState<f32>>)> {
    match init {
        Some(p) => {
            let ck = load_net(p, &cfg.reward_net, "reward")?;
            Ok((ck.net, ck.adam))
        }
        None => Ok((Hourglass::new(cfg.reward_net.clone(), cfg.init_seed)?, None)),
    }
}

pub fn train_offline(
    cfg: &RunConfig,
    data: &Path,
    mask_ckpt: Option<&Path>,
    init: Option<&Path>,
    out: &Path,
    log: Option<&Path>,
) -> Result<Vec<LogRecord>> {
    let (_, exps): (_, Vec<Experience>) = dataset::load(data)?;
    let mask = mask_ckpt.map(|p| load_net(p, &cfg.mask_net, "mask")).transpose()?;
    let (mut net, adam) = start_reward_net(cfg, init)?;
    let (adam, records) =
        dqn::train_pushreward_offline(&mut net, adam, &exps, mask.as_ref().map(|c| &c.net), &cfg.workspace, &cfg.training)?;
    Checkpoint::new(net, Some(adam)).save(out)?;
    write_log(log, &records)?;
    archive_config(cfg, out, serde_json::json!({"train-offline": {"data": data, "mask_ckpt": mask_ckpt, "init": init}}))?;
    Ok(records)
}

pub fn train_online(
    cfg: &RunConfig,
    init: Option<&Path>,
    mask_ckpt: Option<&Path>,
    prefill: Option<&Path>,
    out: &Path,
    log: Option<&Path>,
) -> Result<dqn::OnlineReport> {
    let mask = mask_ckpt.map(|p| load_net(p, &cfg.mask_net, "mask")).transpose()?;
    let exps: Vec<Experience> = match prefill {
        Some(p) => dataset::load(p)?.1,
        None => Vec::new(),
    };
    let (mut net, adam) = start_reward_net(cfg, init)?;
    let (adam, report) = dqn::train_pushreward_online(
        &mut net,
        adam,
        mask.as_ref().map(|c| &c.net),
        &exps,
        &cfg.workspace,
        &cfg.reward,
        &cfg.training,
    )?;
    Checkpoint::new(net, Some(adam)).save(out)?;
    write_log(log, &report.log)?;
    archive_config(
        cfg,
        out,
        serde_json::json!({"train-online": {"init": init, "mask_ckpt": mask_ckpt, "prefill": prefill, "episodes": report.episodes}}),
    )?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct MaskEvalReport {
    pub push_labels: PrReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dense: Option<PrReport>,
}

pub fn eval_mask(
    cfg: &RunConfig,
    ckpt: &Path,
    seeds: &[u64],
    dense: Option<&Path>,
    out: &Path,
    workers: usize,
) -> Result<MaskEvalReport> {
    let ck = load_net(ckpt, &cfg.mask_net, "mask")?;
    let push_labels = harness::eval_pushmask(
        &ck.net,
        seeds,
        cfg.data.pushes_per_scene,
        cfg.data.objects,
        &cfg.workspace,
        &cfg.reward,
        workers,
    )?;
    let dense = match dense {
        Some(p) => {
            let (_, recs): (_, Vec<MaskRecord>) = dataset::load(p)?;
            Some(harness::eval_dense_masks(&ck.net, &recs, &cfg.workspace, workers)?)
        }
        None => None,
    };
    let report = MaskEvalReport { push_labels, dense };
    write_json(out, &report)?;
    archive_config(cfg, out, serde_json::json!({"eval-mask": {"ckpt": ckpt, "seeds": seeds.len()}}))?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    /// Greedy over the value network.
    Net,
    Random,
    GreedyTowardBox,
}

pub fn eval_policy(
    cfg: &RunConfig,
    kind: PolicyKind,
    reward_ckpt: Option<&Path>,
    mask_ckpt: Option<&Path>,
    out_json: &Path,
    out_csv: Option<&Path>,
    workers: usize,
) -> Result<PolicyReport> {
    let ws = &cfg.workspace;
    let mask = mask_ckpt.map(|p| load_net(p, &cfg.mask_net, "mask")).transpose()?;
    let mask_net = mask.as_ref().map(|c| &c.net);
    let tau = cfg.training.tau_prob;
    let suffix = if mask_net.is_some() { "+mask" } else { "" };
    let report = match kind {
        PolicyKind::Net => {
            let p = reward_ckpt.ok_or_else(|| Error::Config("--reward-ckpt is required for the net policy".into()))?;
            let r = load_net(p, &cfg.reward_net, "reward")?;
            let make = || NetPolicy { reward: &r.net, mask: mask_net, tau_prob: tau, ws };
            harness::eval_policy(&format!("net{suffix}"), make, &cfg.eval, ws, workers)?
        }
        PolicyKind::Random => {
            let make = || RandomPolicy { mask: mask_net, tau_prob: tau, ws };
            harness::eval_policy(&format!("random{suffix}"), make, &cfg.eval, ws, workers)?
        }
        PolicyKind::GreedyTowardBox => {
            let make = || GreedyTowardBox { ws, height_thresh: cfg.reward.height_thresh };
            harness::eval_policy("greedy_toward_box", make, &cfg.eval, ws, workers)?
        }
    };
    debug_assert!(report.episodes.iter().all(|e| e.conserved()));
    write_json(out_json, &report)?;
    if let Some(c) = out_csv {
        std::fs::write(c, PolicyReport::to_csv(std::slice::from_ref(&report)))?;
    }
    archive_config(cfg, out_json, serde_json::json!({"eval-policy": {"policy": kind, "reward_ckpt": reward_ckpt, "mask_ckpt": mask_ckpt}}))?;
    Ok(report)
}

/// Binary 8-bit PGM, values mapped linearly from `[lo, hi]` to `[0, 255]`.
pub fn gray_pgm(values: &[f32], r: usize, lo: f32, hi: f32) -> Vec<u8> {
    let mut out = format!("P5\n{r} {r}\n255\n").into_bytes();
    let span = if hi > lo { hi - lo } else { 1.0 };
    out.extend(values.iter().map(|&v| (((v - lo) / span).clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct QMapAnnotation {
    pub argmax: PushAction,
    pub value: f32,
    pub min: f32,
    pub max: f32,
    pub files: Vec<String>,
}

/// Writes `heightmap.pgm`, `q_00.pgm`..`q_15.pgm` (shared gray scale) and
/// `argmax.json`. In the argmax map the selected pixel is drawn white.
pub fn render_qmaps(ckpt: &Path, scene: &Scene, cfg: &RunConfig, out_dir: &Path) -> Result<QMapAnnotation> {
    let ck = Checkpoint::load(ckpt)?;
    let ws = &cfg.workspace;
    std::fs::create_dir_all(out_dir)?;
    let img = percept::render(scene, ws);
    let q = net::predict(&ck.net, &[&img], ws)?.remove(0);
    let flat = q.argmax();
    let argmax = q.action(flat);
    let lo = q.data.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = q.data.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let r = ws.resolution;
    let mut files = vec!["heightmap.pgm".to_string()];
    std::fs::write(out_dir.join("heightmap.pgm"), gray_pgm(&img.data, r, 0.0, world::MAX_OBJECT_HEIGHT as f32))?;
    for o in 0..q.n_orientations {
        let mut plane = q.plane(o).to_vec();
        if o == argmax.o as usize {
            plane[argmax.y as usize * r + argmax.x as usize] = hi.max(lo + 1.0);
        }
        let name = format!("q_{o:02}.pgm");
        std::fs::write(out_dir.join(&name), gray_pgm(&plane, r, lo, hi))?;
        files.push(name);
    }
    let ann = QMapAnnotation { argmax, value: q.data[flat], min: lo, max: hi, files };
    write_json(&out_dir.join("argmax.json"), &ann)?;
    Ok(ann)
}

/// First scene of a JSON or JSON-lines file.
pub fn read_scene(path: &Path) -> Result<Scene> {
    let mut line = String::new();
    BufReader::new(File::open(path)?).read_line(&mut line)?;
    Scene::from_json(line.trim()).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// A scene drawn like the evaluation scenes.
pub fn scene_for_seed(seed: u64, objects: usize, cfg: &RunConfig) -> Result<Scene> {
    world::sample_scenario(rng::stream(seed, Purpose::Eval, 0).gen(), objects, &cfg.workspace)
}

/// One self-test line.
#[derive(Debug, Clone, Serialize)]
pub struct SelfTestResult {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

/// Gradient checks, simulator invariants and format round trips.
pub fn selftest() -> Vec<SelfTestResult> {
    let mut out = Vec::new();
    for g in net::gradcheck::run_all(1) {
        out.push(SelfTestResult {
            name: format!("gradient {}", g.name),
            pass: g.max_rel_err < 1e-4,
            detail: format!("max relative error {:.2e} over {} entries", g.max_rel_err, g.checked),
        });
    }
    let ws = crate::world::WorkspaceConfig::default();
    let mut conserved = true;
    let mut invariants = true;
    for s in 0..20u64 {
        let Ok(scene) = world::sample_scenario(s, 1 + (s % 10) as usize, &ws) else {
            invariants = false;
            continue;
        };
        let mut rng = rng::stream(s, Purpose::Push, 0);
        let mut cur = scene;
        for _ in 0..5 {
            let a = PushAction::from_flat(rng.gen_range(0..ws.n_actions()), ws.resolution);
            match crate::pushsim::apply_push(&cur, a, &ws) {
                Ok(o) => {
                    conserved &= o.next_scene.objects.len() == cur.objects.len()
                        && o.next_scene.n_on_table() as u32 + o.next_scene.n_box + o.next_scene.n_ground
                            == o.next_scene.objects.len() as u32;
                    invariants &= o.next_scene.check_invariants(&ws).is_ok();
                    cur = o.next_scene;
                }
                Err(_) => invariants = false,
            }
        }
    }
    out.push(SelfTestResult { name: "push conservation".into(), pass: conserved, detail: "20 scenes x 5 pushes".into() });
    out.push(SelfTestResult { name: "scene invariants".into(), pass: invariants, detail: "no overlaps after pushes".into() });
    let recs = maskheur::build_mask_dataset(&[1, 2], (1, 4), &ws, &maskheur::HeuristicConfig::for_workspace(&ws), 1);
    let roundtrip = recs.map(|r| {
        let mut bytes = Vec::new();
        dataset::write_dataset(&mut bytes, &serde_json::json!({}), &r).is_ok()
            && dataset::read_dataset::<_, MaskRecord>(&mut bytes.as_slice()).map(|(_, b)| b == r).unwrap_or(false)
    });
    out.push(SelfTestResult {
        name: "dataset round trip".into(),
        pass: roundtrip.unwrap_or(false),
        detail: "mask records".into(),
    });
    out
}
