use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pushlab::config::RunConfig;
use pushlab::pipeline::{self, MaskStage, PolicyKind};
use pushlab::{Error, Result};

#[derive(Parser)]
#[command(name = "pushlab", version, about = "Push-into-box laboratory: data generation, training and evaluation")]
struct Cli {
    /// JSON run configuration; missing fields take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config field, e.g. `--set training.gamma=0.4`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Worker threads for data generation and evaluation.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample scenes and write them as JSON lines.
    GenScenes {
        #[arg(long)]
        seeds: String,
        /// Objects per scene; default draws from data.objects.
        #[arg(long)]
        objects: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Heuristic mask dataset, one record per seed.
    GenMaskData {
        #[arg(long)]
        seeds: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Random pushes labeled with the change reward.
    GenPushLabels {
        #[arg(long)]
        seeds: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the validity network.
    TrainMask {
        #[arg(long, value_enum)]
        stage: MaskStage,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Offline experiences, half uniform and half mask-guided.
    GenRewData {
        #[arg(long)]
        mask_ckpt: Option<PathBuf>,
        #[arg(long)]
        tau_prob: Option<f64>,
        #[arg(long)]
        scenes: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the value network on a fixed experience set.
    TrainOffline {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        mask_ckpt: Option<PathBuf>,
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Continue training the value network by interacting with the simulator.
    TrainOnline {
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        mask_ckpt: Option<PathBuf>,
        /// Experience file used to prefill the replay buffer.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Precision/recall sweep of a validity network.
    EvalMask {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        seeds: String,
        /// Also sweep over every element of this heuristic mask dataset.
        #[arg(long)]
        dense: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Push-into-box episodes.
    EvalPolicy {
        #[arg(long, value_enum, default_value_t = PolicyKind::Net)]
        policy: PolicyKind,
        #[arg(long)]
        reward_ckpt: Option<PathBuf>,
        #[arg(long)]
        mask_ckpt: Option<PathBuf>,
        #[arg(long, value_parser = ["on", "off"], default_value = "on")]
        mask: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Write one gray map per orientation plus the argmax.
    RenderQmaps {
        #[arg(long)]
        ckpt: PathBuf,
        /// Scene JSON (first line of a JSON-lines file).
        #[arg(long, conflicts_with = "seed")]
        scene: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 10)]
        objects: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Gradient checks, simulator invariants and format round trips.
    Selftest,
}

fn run(cli: Cli) -> Result<()> {
    let mut sets = cli.set.clone();
    match &cli.cmd {
        Cmd::GenRewData { tau_prob: Some(t), .. } => sets.push(format!("training.tau_prob={t}")),
        Cmd::TrainOffline { gamma: Some(g), .. } | Cmd::TrainOnline { gamma: Some(g), .. } => {
            sets.push(format!("training.gamma={g}"))
        }
        _ => {}
    }
    let cfg = RunConfig::load(cli.config.as_deref(), &sets)?;
    let w = cli.workers.max(1);
    match cli.cmd {
        Cmd::GenScenes { seeds, objects, out } => {
            let n = pipeline::gen_scenes(&cfg, &pipeline::parse_seeds(&seeds)?, objects, &out)?;
            println!("wrote {n} scenes to {}", out.display());
        }
        Cmd::GenMaskData { seeds, out } => {
            let n = pipeline::gen_mask_data(&cfg, &pipeline::parse_seeds(&seeds)?, &out, w)?;
            println!("wrote {n} mask records to {}", out.display());
        }
        Cmd::GenPushLabels { seeds, out } => {
            let n = pipeline::gen_push_labels(&cfg, &pipeline::parse_seeds(&seeds)?, &out, w)?;
            println!("wrote {n} push labels to {}", out.display());
        }
        Cmd::TrainMask { stage, data, init, out, log } => {
            let l = pipeline::train_mask(&cfg, stage, &data, init.as_deref(), &out, log.as_deref())?;
            println!("final loss {:.6}", l.last().map_or(f64::NAN, |r| r.loss));
        }
        Cmd::GenRewData { mask_ckpt, scenes, out, .. } => {
            let s = pipeline::gen_rew_data(&cfg, mask_ckpt.as_deref(), scenes, &out, w)?;
            println!("{}", serde_json::to_string(&s)?);
        }
        Cmd::TrainOffline { data, mask_ckpt, init, out, log, .. } => {
            let l = pipeline::train_offline(&cfg, &data, mask_ckpt.as_deref(), init.as_deref(), &out, log.as_deref())?;
            println!("final loss {:.6}", l.last().map_or(f64::NAN, |r| r.loss));
        }
        Cmd::TrainOnline { init, mask_ckpt, data, out, log, .. } => {
            let r = pipeline::train_online(&cfg, init.as_deref(), mask_ckpt.as_deref(), data.as_deref(), &out, log.as_deref())?;
            println!("{} episodes, replay {}", r.episodes, r.replay_len);
        }
        Cmd::EvalMask { ckpt, seeds, dense, out } => {
            let r = pipeline::eval_mask(&cfg, &ckpt, &pipeline::parse_seeds(&seeds)?, dense.as_deref(), &out, w)?;
            let b = r.push_labels.best;
            println!("best threshold {:.2} F {:.4} P {:.4} R {:.4}", b.threshold, b.f_score, b.precision, b.recall);
        }
        Cmd::EvalPolicy { policy, reward_ckpt, mask_ckpt, mask, out, csv } => {
            let mask_ckpt = if mask == "on" { mask_ckpt } else { None };
            if mask == "on" && mask_ckpt.is_none() && policy == PolicyKind::Net {
                return Err(Error::Config("--mask on needs --mask-ckpt".into()));
            }
            let r = pipeline::eval_policy(&cfg, policy, reward_ckpt.as_deref(), mask_ckpt.as_deref(), &out, csv.as_deref(), w)?;
            print!("{}", pushlab::harness::PolicyReport::to_csv(&[r]));
        }
        Cmd::RenderQmaps { ckpt, scene, seed, objects, out_dir } => {
            let scene = match (scene, seed) {
                (Some(p), _) => pipeline::read_scene(&p)?,
                (None, Some(s)) => pipeline::scene_for_seed(s, objects, &cfg)?,
                (None, None) => return Err(Error::Config("render-qmaps needs --scene or --seed".into())),
            };
            let a = pipeline::render_qmaps(&ckpt, &scene, &cfg, &out_dir)?;
            println!("argmax x={} y={} o={} q={:.6}", a.argmax.x, a.argmax.y, a.argmax.o, a.value);
        }
        Cmd::Selftest => {
            let results = pipeline::selftest();
            for r in &results {
                println!("{} {}: {}", if r.pass { "PASS" } else { "FAIL" }, r.name, r.detail);
            }
            if results.iter().any(|r| !r.pass) {
                return Err(Error::NonFinite("self-test failed".into()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error kind={} code={} msg={}", e.kind(), e.exit_code(), serde_json::to_string(&msg).unwrap_or(msg));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
