use tpaoi_core::agent::{self, GreedyNetPolicy, ObsEncoding};
use tpaoi_core::metrics::moving_average;
use tpaoi_harness::config::{cell_seed, ExperimentSpec, GridPoint, DelayTag};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let lambda: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let omega: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let n: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(2);
    let rep: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(0);
    let eta: f64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(0.003);
    let eta_decay: f64 = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(0.9985);
    let name: String = args.get(7).cloned().unwrap_or_else(|| "acceptance-main".into());
    let conv: bool = args.get(8).map(|s| s == "conv").unwrap_or(false);
    let episodes: usize = args.get(9).and_then(|s| s.parse().ok()).unwrap_or(1500);
    let eps_min: f64 = args.get(10).and_then(|s| s.parse().ok()).unwrap_or(0.01);
    let eps_decay: f64 = args.get(11).and_then(|s| s.parse().ok()).unwrap_or(0.98);
    let hid: usize = args.get(12).and_then(|s| s.parse().ok()).unwrap_or(32);
    let head: usize = args.get(13).and_then(|s| s.parse().ok()).unwrap_or(16);
    let buffer: usize = args.get(14).and_then(|s| s.parse().ok()).unwrap_or(50_000);

    let spec = ExperimentSpec::from_toml_str(&format!(
        "name = \"{name}\"\n[sim]\nseed = 20260808\n[train]\neta = {eta}\neta_decay = {eta_decay}\nepisodes = {episodes}\nepsilon_min = {eps_min}\nepsilon_decay = {eps_decay}\nhidden = [{hid}, {hid}]\nhead_hidden = {head}\nreplay_capacity = {buffer}\n"
    ))
    .unwrap();
    let point = GridPoint { lambda, omega, n_updates: n, delay: DelayTag::Exp };
    let role = if conv { "conaoi_agent" } else { "tpaoi_agent" };
    let train_seed = cell_seed(spec.sim.seed, &spec.name, &point, rep, role);
    let eval_seed = cell_seed(spec.sim.seed, &spec.name, &point, rep, "eval");

    let mut sim = spec.sim_config_for(&point);
    sim.seed = train_seed;
    let t0 = std::time::Instant::now();
    let result = if conv {
        tpaoi_core::baselines::train_conventional_aoi_agent(&sim, &spec.train_config(), &spec.agent_spec()).unwrap()
    } else {
        agent::train(&sim, &spec.train_config(), &spec.agent_spec()).unwrap()
    };
    let rewards: Vec<f64> = result.history.iter().map(|h| h.total_reward).collect();
    let ma = moving_average(&rewards, 100);
    let tail = &ma[ma.len() - ma.len() / 3..];
    let mean = tail.iter().sum::<f64>() / tail.len() as f64;
    let std = (tail.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / tail.len() as f64).sqrt();

    let encoding = if conv { ObsEncoding::DropAccessClock } else { ObsEncoding::Full };
    let mut pol = GreedyNetPolicy::new(result.params, encoding, spec.train.obs_norm);
    let eval_eps = if lambda == 1.0 && omega == 1.0 { 50 } else { 100 };
    let rec = agent::rollout(&mut pol, &sim, eval_eps, eval_seed).unwrap();
    println!(
        "lam={lambda} om={omega} n={n} rep={rep} eta={eta} decay={eta_decay} {role}: tpaoi={:.2} upd/acc={:.2} c8={:.4} ma_final={:.1} ({:.0}s)",
        rec.mean_tpaoi().unwrap(),
        rec.update_count as f64 / rec.access_count as f64,
        std / mean.abs(),
        ma[ma.len() - 1],
        t0.elapsed().as_secs_f64()
    );
}
