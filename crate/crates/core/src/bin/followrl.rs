use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use followrl::config::Config;
use followrl::control::{
    collect_reverse_data, control_mse, load_samples, save_samples, square_wave_probe, train_control_net, ControlNet,
};
use followrl::datasets::Source;
use followrl::reward::step_reward;
use followrl::sim::gen_leader_profile;
use followrl::workflow::{self, ScenarioSpec, TrainMode, TrainOptions};

#[derive(Parser)]
#[command(name = "followrl", version, about = "Car-following reinforcement learning laboratory")]
struct Cli {
    /// TOML configuration file; defaults apply to anything it leaves out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write an OU leader speed profile as `t_s,v_mps` CSV.
    GenLeader {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long = "duration-s", default_value_t = 150.0)]
        duration_s: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train an agent and write its parameters and reward curves.
    Train {
        #[arg(long, value_parser = parse_mode)]
        mode: TrainMode,
        #[arg(long)]
        ratio: Option<f64>,
        /// Environment steps, or gradient updates for off-policy.
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Transition store produced by `ingest`.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Stage-one agent directory to resume from (two-stage).
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long, default_value_t = 0.95)]
        train_frac: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run agents on scenarios and write TTC reports.
    Eval {
        /// e.g. `rl=ddpg:runs/a,bc=bc:runs/b,idm`
        #[arg(long)]
        agents: String,
        /// replay:FILE, builtin:s53 or suite:synthetic
        #[arg(long)]
        scenario: String,
        #[arg(long, default_value_t = 20)]
        suite_size: usize,
        #[arg(long, default_value_t = 77)]
        suite_seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rebuild TTC summaries from the traces of an `eval` directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Relabel recorded trajectories into a binary transition store.
    Ingest {
        #[arg(long = "in")]
        input: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long, default_value = "napoli")]
        source: Source,
    },
    /// Record IDM rollouts against generated leaders as trajectory CSVs.
    MakeSynthetic {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        episodes: usize,
        #[arg(long, default_value_t = 1234)]
        seed: u64,
    },
    /// Grid-search IDM parameters against recorded followers.
    CalibrateIdm {
        /// Trajectory CSV files (glob).
        #[arg(long)]
        dataset: String,
        #[arg(long, default_value = "napoli")]
        source: Source,
        /// Optional JSON output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Inverse pedal controller.
    #[command(subcommand)]
    Control(ControlCmd),
    /// Print the reward breakdown for one state.
    RewardProbe {
        #[arg(long, allow_hyphen_values = true)]
        v: f64,
        #[arg(long, allow_hyphen_values = true)]
        vl: f64,
        #[arg(long, allow_hyphen_values = true)]
        g: f64,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        jerk: f64,
    },
}

#[derive(Subcommand)]
enum ControlCmd {
    /// Drive the powertrain with random pedals and log reverse data.
    Collect {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        duration_s: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the control network to reverse data.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Track a +-2 m/s^2 square wave through the trained network.
    Probe {
        #[arg(long)]
        net: PathBuf,
        /// Optional `t_s,commanded,achieved` CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_mode(s: &str) -> std::result::Result<TrainMode, String> {
    s.parse().map_err(|e: followrl::Error| e.to_string())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let cfg = Config::load_or_default(cli.config.as_deref()).context("loading config")?;
    match cli.cmd {
        Cmd::GenLeader { seed, duration_s, out } => {
            let p = gen_leader_profile(seed, duration_s, &cfg.sim)?;
            p.write_csv(BufWriter::new(File::create(&out).with_context(|| out.display().to_string())?))?;
            println!("{} samples -> {}", p.len(), out.display());
        }
        Cmd::Train { mode, ratio, budget, seed, dataset, init, train_frac, out } => {
            let opts = TrainOptions { mode, ratio, budget, seed, dataset, init, train_frac };
            let s = workflow::train_to_dir(&opts, &cfg, &out)?;
            println!("{}", serde_json::to_string_pretty(&s)?);
        }
        Cmd::Eval { agents, scenario, suite_size, suite_seed, out } => {
            let agents = workflow::parse_agents(&agents)?;
            let sc = ScenarioSpec::parse(&scenario, suite_size, suite_seed)?;
            let reports = workflow::eval_to_dir(&agents, &sc, &cfg, &out)?;
            print_reports(&reports);
        }
        Cmd::Report { input } => print_reports(&workflow::report_dir(&input, &cfg)?),
        Cmd::Ingest { input, out, dt, source } => {
            let m = workflow::ingest(&input, &out, dt, source, &cfg)?;
            println!(
                "{} transitions from {} episodes, {} actions clipped, {:.1}% of rewards >= 0.4 -> {}",
                m.transitions,
                m.episodes.len(),
                m.clipped,
                100.0 * m.histogram.frac_good,
                out.display()
            );
        }
        Cmd::MakeSynthetic { out, episodes, seed } => {
            let paths = workflow::make_synthetic(&out, episodes, seed, &cfg)?;
            println!("{} episodes -> {}", paths.len(), out.display());
        }
        Cmd::CalibrateIdm { dataset, source, out } => {
            let c = workflow::calibrate_from_glob(&dataset, source, &cfg)?;
            let json = serde_json::to_string_pretty(&c)?;
            if let Some(out) = out {
                std::fs::write(&out, &json)?;
            }
            println!("{json}");
        }
        Cmd::Control(c) => control(c, &cfg)?,
        Cmd::RewardProbe { v, vl, g, jerk } => match step_reward(v, vl, g, jerk, &cfg.reward)? {
            (r, None) => println!("collision: reward {r}"),
            (_, Some(b)) => println!("{}", serde_json::to_string_pretty(&b)?),
        },
    }
    Ok(())
}

fn control(cmd: ControlCmd, cfg: &Config) -> Result<()> {
    match cmd {
        ControlCmd::Collect { seed, duration_s, out } => {
            let mut cc = cfg.collect.clone();
            if let Some(d) = duration_s {
                cc.duration = d;
            }
            let samples = collect_reverse_data(&cfg.powertrain, &cc, seed)?;
            save_samples(&out, &samples)?;
            println!("{} samples -> {}", samples.len(), out.display());
        }
        ControlCmd::Train { data, seed, out } => {
            let samples = load_samples(&data)?;
            let net = train_control_net(&samples, &cfg.control, seed)?;
            net.save(&out)?;
            println!("training mse {:.3e} -> {}", control_mse(&net, &samples), out.display());
        }
        ControlCmd::Probe { net, out } => {
            let cn = ControlNet::load(&net)?;
            let r = square_wave_probe(&cn, &cfg.powertrain)?;
            println!("rmse {:.4} m/s^2, infeasible {}, saturated {}", r.rmse, r.infeasible, r.saturated);
            if let Some(out) = out {
                write_probe(&out, &r, cfg.sim.dt)?;
            }
        }
    }
    Ok(())
}

fn write_probe(path: &Path, r: &followrl::control::TrackingResult, dt: f64) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(["t_s", "commanded", "achieved"])?;
    for (k, (c, a)) in r.commanded.iter().zip(&r.achieved).enumerate() {
        w.write_record([format!("{}", k as f64 * dt), format!("{c}"), format!("{a}")])?;
    }
    w.flush()?;
    Ok(())
}

fn print_reports(reports: &[(String, Vec<followrl::eval::ReportRow>)]) {
    if reports.len() == 1 {
        print!("{}", workflow::format_report(&reports[0].1));
        return;
    }
    println!("{:<14} {:>9} {:>10} {:>8} {:>5} {:>9} {:>8}", "agent", "scenarios", "collisions", "minTTC", "n<2s", "reward", "gap");
    for r in workflow::suite_rows(reports) {
        let f = |x: Option<f64>| x.map(|v| format!("{v:.3}")).unwrap_or_else(|| "NA".into());
        println!(
            "{:<14} {:>9} {:>10} {:>8} {:>5} {:>9.4} {:>8}",
            r.agent,
            r.scenarios,
            r.collisions,
            f(r.min_ttc),
            r.count_below_2s,
            r.mean_reward,
            f(r.mean_gap)
        );
    }
}
