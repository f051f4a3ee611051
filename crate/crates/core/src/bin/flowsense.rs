use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use log::info;

use flowsense::dataio::{self, write_csv_rows, write_json, write_results, NetworkBundle, BENCH_HEADER, DATASETS};
use flowsense::experiment::{default_budgets, run_bench, run_grid, RunConfig, SelectOn};
use flowsense::flows::SyntheticParams;
use flowsense::graph::{EdgeFlow, FlowNetwork};
use flowsense::instances;
use flowsense::metrics::Scope;
use flowsense::placement::{Algorithm, Budget, RecursiveRoute};

#[derive(Parser, Debug)]
#[command(name = "flowsense", about = "Sensor placement for flow networks", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Select sensors, predict the remaining flows and score them.
    Place(PlaceArgs),
    /// Select sensors on synthetic near-conserved flows, score on the real ones.
    Synth(SynthArgs),
    /// Select sensors on noisy flow estimates, score on the real ones.
    NoiseSweep(NoiseArgs),
    /// Time greedy with brute-force, lazy and lazy+recursive evaluation.
    Bench(BenchArgs),
    /// Download the public road networks.
    FetchData(FetchArgs),
}

#[derive(Args, Debug, Clone)]
struct NetArgs {
    /// Dataset key (anaheim, barcelona, chicago, winnipeg), a TNTP network file, or grid:RxC
    #[arg(long)]
    net: String,

    /// Flow file when --net is a path
    #[arg(long)]
    flow: Option<PathBuf>,

    /// Dataset directory (default: $FLOWSENSE_DATA or ./data)
    #[arg(long)]
    data_dir: Option<PathBuf>,

    /// Seed of the generated grid flows
    #[arg(long, default_value_t = 0)]
    grid_seed: u64,
}

#[derive(Args, Debug, Clone)]
struct CommonArgs {
    #[command(flatten)]
    net: NetArgs,

    /// Comma-separated budgets: fractions (0.1, 10%) or counts (25); default 1%..20%
    #[arg(long, value_delimiter = ',')]
    budget: Vec<Budget>,

    /// Seeds as a list (1,2,3) or an inclusive range (1..10)
    #[arg(long, default_value = "0")]
    seed: String,

    #[arg(long, default_value_t = flowsense::prediction::DEFAULT_LAMBDA)]
    lambda: f64,

    /// Scoring scopes
    #[arg(long, value_delimiter = ',', default_value = "all,unlabeled")]
    scope: Vec<Scope>,

    /// Per-run time limit in seconds
    #[arg(long)]
    time_limit: Option<f64>,

    /// Update used by lazy_recursive: node or edge
    #[arg(long, default_value = "node")]
    route: RecursiveRoute,

    #[arg(long, default_value = "results")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PlaceArgs {
    #[command(flatten)]
    common: CommonArgs,

    /// Comma-separated algorithms
    #[arg(long, value_delimiter = ',', default_value = "lazy_recursive")]
    algo: Vec<Algorithm>,

    /// Flow that drives selection: truth, synthetic or noisy
    #[arg(long, default_value = "truth")]
    select_on: SelectOn,

    /// Noise ratios for --select-on noisy
    #[arg(long, value_delimiter = ',', default_value = "0.5")]
    noise_r: Vec<f64>,

    #[arg(long, default_value_t = 20.0)]
    synth_b: f64,

    #[arg(long, default_value_t = 0.1)]
    synth_eps: f64,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[command(flatten)]
    common: CommonArgs,

    #[arg(long, value_delimiter = ',', default_value = "lazy_recursive,max_flow")]
    algo: Vec<Algorithm>,

    #[arg(long, default_value_t = 20.0)]
    b: f64,

    #[arg(long, default_value_t = 0.1)]
    eps: f64,
}

#[derive(Args, Debug)]
struct NoiseArgs {
    #[command(flatten)]
    common: CommonArgs,

    #[arg(
        long,
        value_delimiter = ',',
        default_value = "lazy_recursive,max_flow,random,recursive_bisection,rrqr"
    )]
    algo: Vec<Algorithm>,

    #[arg(long, value_delimiter = ',', default_value = "0,0.5,1,2")]
    noise_r: Vec<f64>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[command(flatten)]
    net: NetArgs,

    #[arg(long, default_value = "0.1")]
    budget: Budget,

    #[arg(long, value_delimiter = ',', default_value = "greedy,lazy_greedy,lazy_recursive")]
    modes: Vec<Algorithm>,

    /// Seconds before a mode is stopped and marked truncated
    #[arg(long, default_value_t = 3600.0)]
    time_limit: f64,

    #[arg(long, default_value_t = flowsense::prediction::DEFAULT_LAMBDA)]
    lambda: f64,

    #[arg(long, default_value = "node")]
    route: RecursiveRoute,

    #[arg(long, default_value = "results")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct FetchArgs {
    /// Dataset keys, or "all"
    #[arg(long, value_delimiter = ',', default_value = "all")]
    dataset: Vec<String>,

    /// Target directory (default: $FLOWSENSE_DATA or ./data)
    #[arg(long)]
    dir: Option<PathBuf>,
}

fn parse_seeds(s: &str) -> anyhow::Result<Vec<u64>> {
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse()?, b.trim().parse()?);
        if b < a {
            bail!("empty seed range {s}");
        }
        return Ok((a..=b).collect());
    }
    s.split(',')
        .map(|t| t.trim().parse().with_context(|| format!("bad seed {t:?}")))
        .collect()
}

struct LoadedNet {
    net: FlowNetwork,
    flow: EdgeFlow,
    network_path: Option<String>,
    flow_path: Option<String>,
}

fn load_net(args: &NetArgs) -> anyhow::Result<LoadedNet> {
    if let Some(shape) = args.net.strip_prefix("grid:") {
        let (r, c) = shape
            .split_once('x')
            .with_context(|| format!("grid shape {shape:?} should look like 8x8"))?;
        let (rows, cols): (usize, usize) = (r.parse()?, c.parse()?);
        if rows * cols < 2 {
            bail!("grid {shape} needs at least two nodes");
        }
        let (net, flow) = instances::seeded_road_grid(rows, cols, 10 * rows * cols, args.grid_seed);
        return Ok(LoadedNet {
            net,
            flow,
            network_path: None,
            flow_path: None,
        });
    }
    let bundle = if let Some(info) = dataio::dataset(&args.net) {
        let root = args.data_dir.clone().unwrap_or_else(dataio::default_data_root);
        NetworkBundle::load_dataset(info, &root).with_context(|| {
            format!(
                "loading {} from {} (run `flowsense fetch-data` first)",
                info.key,
                root.display()
            )
        })?
    } else {
        let net_path = PathBuf::from(&args.net);
        let flow_path = args.flow.clone().context("--flow is required when --net is a file")?;
        let name = net_path
            .file_stem()
            .map(|s| s.to_string_lossy().trim_end_matches("_net").to_string())
            .unwrap_or_else(|| "network".into());
        NetworkBundle::load(&name, &net_path, &flow_path).with_context(|| format!("loading {}", net_path.display()))?
    };
    info!(
        "{}: {} nodes, {} edges",
        bundle.net.name(),
        bundle.net.node_count(),
        bundle.net.edge_count()
    );
    Ok(LoadedNet {
        network_path: Some(bundle.network_path.display().to_string()),
        flow_path: Some(bundle.flow_path.display().to_string()),
        net: bundle.net,
        flow: bundle.flows,
    })
}

fn base_config(command: &str, common: &CommonArgs, loaded: &LoadedNet) -> anyhow::Result<RunConfig> {
    Ok(RunConfig {
        command: command.into(),
        network: loaded.net.name().to_string(),
        network_path: loaded.network_path.clone(),
        flow_path: loaded.flow_path.clone(),
        budgets: if common.budget.is_empty() {
            default_budgets()
        } else {
            common.budget.clone()
        },
        seeds: parse_seeds(&common.seed)?,
        lambda: common.lambda,
        scopes: common.scope.clone(),
        time_limit_s: common.time_limit,
        route: common.route,
        ..RunConfig::default()
    })
}

fn run_and_write(loaded: &LoadedNet, config: &RunConfig, out: &Path) -> anyhow::Result<()> {
    let records = run_grid(&loaded.net, &loaded.flow, config)?;
    write_results(out, &records, config)?;
    info!("wrote {} runs to {}", records.len(), out.display());
    Ok(())
}

fn fetch(args: &FetchArgs) -> anyhow::Result<()> {
    let root = args.dir.clone().unwrap_or_else(dataio::default_data_root);
    let wanted: Vec<&dataio::DatasetInfo> = if args.dataset.iter().any(|d| d == "all") {
        DATASETS.iter().collect()
    } else {
        args.dataset
            .iter()
            .map(|d| dataio::dataset(d).with_context(|| format!("unknown dataset {d:?}")))
            .collect::<anyhow::Result<_>>()?
    };
    for info in wanted {
        let dir = root.join(info.dir);
        fs::create_dir_all(&dir)?;
        for (file, url) in [
            (info.network_file, info.network_url()),
            (info.flow_file, info.flow_url()),
        ] {
            let path = dir.join(file);
            if path.exists() {
                info!("{} already present", path.display());
                continue;
            }
            info!("fetching {url}");
            let body = ureq::get(&url)
                .call()
                .with_context(|| format!("downloading {url}"))?
                .body_mut()
                .with_config()
                .limit(64 * 1024 * 1024)
                .read_to_string()?;
            fs::write(&path, body)?;
        }
        let bundle = NetworkBundle::load_dataset(info, &root)?;
        if bundle.net.node_count() != info.nodes || bundle.net.edge_count() != info.links {
            bail!(
                "{}: expected {} nodes / {} links, parsed {} / {}",
                info.key,
                info.nodes,
                info.links,
                bundle.net.node_count(),
                bundle.net.edge_count()
            );
        }
        info!("{} ok: {} nodes, {} links", info.key, info.nodes, info.links);
    }
    Ok(())
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Place(args) => {
            let loaded = load_net(&args.common.net)?;
            let config = RunConfig {
                algorithms: args.algo,
                select_on: args.select_on,
                noise_ratios: args.noise_r,
                synthetic: SyntheticParams {
                    b: args.synth_b,
                    eps: args.synth_eps,
                },
                ..base_config("place", &args.common, &loaded)?
            };
            run_and_write(&loaded, &config, &args.common.out)
        }
        Command::Synth(args) => {
            let loaded = load_net(&args.common.net)?;
            let config = RunConfig {
                algorithms: args.algo,
                select_on: SelectOn::Synthetic,
                synthetic: SyntheticParams {
                    b: args.b,
                    eps: args.eps,
                },
                ..base_config("synth", &args.common, &loaded)?
            };
            run_and_write(&loaded, &config, &args.common.out)
        }
        Command::NoiseSweep(args) => {
            let loaded = load_net(&args.common.net)?;
            let config = RunConfig {
                algorithms: args.algo,
                select_on: SelectOn::Noisy,
                noise_ratios: args.noise_r,
                ..base_config("noise-sweep", &args.common, &loaded)?
            };
            run_and_write(&loaded, &config, &args.common.out)
        }
        Command::Bench(args) => {
            let loaded = load_net(&args.net)?;
            let rows = run_bench(
                &loaded.net,
                &loaded.flow,
                args.budget,
                &args.modes,
                args.lambda,
                Some(Duration::from_secs_f64(args.time_limit)),
                args.route,
            )?;
            fs::create_dir_all(&args.out)?;
            write_csv_rows(&args.out.join("bench.csv"), &rows, BENCH_HEADER)?;
            let config = RunConfig {
                command: "bench".into(),
                network: loaded.net.name().to_string(),
                network_path: loaded.network_path.clone(),
                flow_path: loaded.flow_path.clone(),
                algorithms: args.modes.clone(),
                budgets: vec![args.budget],
                lambda: args.lambda,
                time_limit_s: Some(args.time_limit),
                route: args.route,
                ..RunConfig::default()
            };
            write_json(&args.out.join("config.json"), &config)?;
            for row in &rows {
                println!(
                    "{:<16} {:>5}/{:<5} {:>12.1} ms {:>9} evaluations{}",
                    row.mode,
                    row.picked,
                    row.k,
                    row.elapsed_ms,
                    row.evaluations,
                    if row.truncated { " (truncated)" } else { "" }
                );
            }
            Ok(())
        }
        Command::FetchData(args) => fetch(&args),
    }
}
