use pushlab::dqn::{self, valid_set};
use pushlab::net::{HeadActivation, Hourglass, HourglassConfig};
use pushlab::reward::RewardConfig;
use pushlab::rng::{stream, Purpose};
use pushlab::{ActionMap, WorkspaceConfig};
use rand::Rng;

/// Chi-square statistic of observed counts against a uniform expectation.
fn chi_square(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    let e = total as f64 / counts.len() as f64;
    counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum()
}

#[test]
fn full_exploration_is_uniform_over_the_grid() {
    let r = 4;
    let n = 16 * r * r;
    let mut rng = stream(31, Purpose::Explore, 0);
    let q = ActionMap::from_vec(16, r, (0..n).map(|i| i as f32).collect());
    let mut counts = vec![0u64; n];
    for _ in 0..n * 200 {
        counts[dqn::select_action(&q, None, 1.0, 0.14, &mut rng).flat_index(r)] += 1;
    }
    // 255 degrees of freedom; 330.5 is the 0.999 quantile
    let chi = chi_square(&counts);
    assert!(chi < 330.5, "chi-square {chi}");
}

#[test]
fn full_exploration_is_uniform_over_the_valid_set() {
    let r = 4;
    let n = 16 * r * r;
    let mut rng = stream(32, Purpose::Explore, 0);
    let q = ActionMap::from_vec(16, r, vec![0.0; n]);
    let mask = ActionMap::from_vec(16, r, (0..n).map(|i| if i % 5 == 0 { 0.9 } else { 0.1 }).collect());
    let v = valid_set(&mask, 0.14);
    assert_eq!(v.len(), n.div_ceil(5));
    let mut counts = vec![0u64; v.len()];
    for _ in 0..v.len() * 300 {
        let flat = dqn::select_action(&q, Some(&mask), 1.0, 0.14, &mut rng).flat_index(r);
        counts[v.iter().position(|&i| i == flat).expect("action outside the valid set")] += 1;
    }
    // 51 degrees of freedom; 87.97 is the 0.999 quantile
    let chi = chi_square(&counts);
    assert!(chi < 87.97, "chi-square {chi}");
}

#[test]
fn greedy_fraction_follows_epsilon() {
    let r = 4;
    let n = 16 * r * r;
    let mut rng = stream(33, Purpose::Explore, 0);
    let q = ActionMap::from_vec(16, r, (0..n).map(|i| if i == 77 { 1.0 } else { 0.0 }).collect());
    let draws = 20_000;
    let greedy = (0..draws).filter(|_| dqn::select_action(&q, None, 0.3, 0.14, &mut rng).flat_index(r) == 77).count();
    // expected 0.7 + 0.3/n
    let p = greedy as f64 / draws as f64;
    assert!((p - (0.7 + 0.3 / n as f64)).abs() < 0.015, "{p}");
}

#[test]
fn offline_dataset_is_half_guided() {
    let ws = WorkspaceConfig::with_resolution(16);
    let rew = RewardConfig::for_resolution(16);
    let cfg = HourglassConfig { stem_channels: 2, bottleneck_channels: 4, depth: 2, ..Default::default() };
    let mask = Hourglass::<f32>::new(cfg, 4).unwrap();
    let (data, stats) = dqn::build_offline_rew_dataset(250, 8, (1, 4), Some(&mask), 0.14, &ws, &rew, 8, 2).unwrap();
    assert_eq!(data.len(), 2000);
    assert_eq!(stats.uniform + stats.guided + stats.fallback, 2000);
    let guided = (stats.guided + stats.fallback) as f64 / 2000.0;
    assert!((guided - 0.5).abs() <= 0.05, "guided fraction {guided}");
    // an untrained sigmoid head sits near 0.5, so nothing should fall back
    assert_eq!(stats.fallback, 0);
}

#[test]
fn offline_dataset_does_not_depend_on_workers() {
    let ws = WorkspaceConfig::with_resolution(16);
    let rew = RewardConfig::for_resolution(16);
    let (a, sa) = dqn::build_offline_rew_dataset(12, 5, (1, 4), None, 0.14, &ws, &rew, 9, 1).unwrap();
    let (b, sb) = dqn::build_offline_rew_dataset(12, 5, (1, 4), None, 0.14, &ws, &rew, 9, 3).unwrap();
    assert_eq!(a, b);
    assert_eq!(sa, sb);
}

#[test]
fn reward_net_memorizes_a_tiny_batch() {
    let ws = WorkspaceConfig::with_resolution(16);
    let rew = RewardConfig::for_resolution(16);
    let (mut data, _) = dqn::build_offline_rew_dataset(4, 1, (2, 4), None, 0.14, &ws, &rew, 10, 1).unwrap();
    let mut rng = stream(34, Purpose::Batch, 0);
    for e in &mut data {
        e.reward = rng.gen_range(0.0..2.0);
    }
    let cfg = HourglassConfig {
        in_channels: 3,
        stem_channels: 4,
        bottleneck_channels: 8,
        depth: 2,
        head_activation: HeadActivation::Identity,
        ..Default::default()
    };
    let mut net = Hourglass::<f32>::new(cfg, 11).unwrap();
    let train = dqn::TrainConfig {
        batch_size: 4,
        offline_steps: 600,
        log_every: 100,
        adam: pushlab::net::AdamConfig { lr: 3e-3, ..Default::default() },
        ..Default::default()
    };
    let (_, log) = dqn::train_pushreward_offline(&mut net, None, &data, None, &ws, &train).unwrap();
    let first = log.first().unwrap().loss;
    let last = log.last().unwrap().loss;
    assert!(last < 1e-3 && last < first, "{first} -> {last}");
}
