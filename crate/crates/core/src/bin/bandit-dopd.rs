use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bandit_dopd::config::{ConfigMap, RunConfig};
use bandit_dopd::harness::{exit_code, run_experiment, sweep, SweepParam, METRICS_FILE, SUMMARY_FILE};
use bandit_dopd::{Error, Result};

#[derive(Parser)]
#[command(name = "bandit-dopd", version, about = "Event-triggered bandit primal-dual simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration.
    Run(RunArgs),
    /// Run one configuration per (value, seed) pair and aggregate.
    Sweep {
        #[command(flatten)]
        common: RunArgs,
        /// tau0, theta, c or kappa
        #[arg(long)]
        param: String,
        /// comma-separated values
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        /// comma-separated seeds
        #[arg(long, value_delimiter = ',', default_value = "1")]
        seeds: Vec<u64>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// flat `key = value` file
    #[arg(long)]
    config: Option<PathBuf>,
    /// desk or paper-sec4, applied before the config file
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// bandit or full-info
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    tau0: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    debug_invariants: bool,
    /// broadcast every round
    #[arg(long)]
    no_trigger: bool,
    #[arg(long)]
    static_comparator: bool,
    #[arg(long)]
    dynamic_comparator: bool,
    /// extra `key=value` overrides, applied last
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl RunArgs {
    fn config_map(&self) -> Result<ConfigMap> {
        if self.config.is_none() && self.preset.is_none() {
            return Err(Error::config("config", "pass --config FILE or --preset NAME"));
        }
        let mut map = match &self.preset {
            Some(name) => ConfigMap::from_preset(name)?,
            None => ConfigMap::new(),
        };
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::config("config", format!("{}: {e}", path.display())))?;
            map.merge_text(&text)?;
        }
        if let Some(seed) = self.seed {
            map.set("seed", &seed.to_string())?;
        }
        if let Some(mode) = &self.mode {
            map.set("mode", mode)?;
        }
        if let Some(tau0) = self.tau0 {
            map.set("trigger", "scaled_power")?;
            map.set("trigger.tau0", &tau0.to_string())?;
        }
        if self.no_trigger {
            map.set("trigger", "none")?;
        }
        if let Some(out) = &self.out {
            map.set("out", out.to_str().ok_or_else(|| Error::config("out", "path is not UTF-8"))?)?;
        }
        for (flag, key) in [
            (self.debug_invariants, "debug_invariants"),
            (self.static_comparator, "compute_static_comparator"),
            (self.dynamic_comparator, "compute_dynamic_comparator"),
        ] {
            if flag {
                map.set(key, "true")?;
            }
        }
        for o in &self.overrides {
            map.apply_override(o)?;
        }
        Ok(map)
    }
}

fn init_threads() -> Result<()> {
    let Ok(raw) = std::env::var("BANDIT_DOPD_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| Error::config("BANDIT_DOPD_THREADS", format!("expected a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::config("BANDIT_DOPD_THREADS", e.to_string()))
}

fn execute(cli: Cli) -> Result<()> {
    init_threads()?;
    match cli.command {
        Command::Run(args) => {
            let cfg = RunConfig::from_map(&args.config_map()?)?;
            let outcome = run_experiment(&cfg)?;
            let s = &outcome.summary;
            println!(
                "T={} avg_cum_loss={:.6e} avg_cum_ccv={:.6e} triggers={}",
                s.horizon, s.final_avg_cum_loss, s.final_avg_cum_ccv, s.total_triggers
            );
            println!(
                "wrote {} and {}",
                cfg.out.join(METRICS_FILE).display(),
                cfg.out.join(SUMMARY_FILE).display()
            );
        }
        Command::Sweep {
            common,
            param,
            values,
            seeds,
        } => {
            let param = SweepParam::parse(&param)?;
            let map = common.config_map()?;
            let root = PathBuf::from(map.resolved()?["out"].clone());
            let rows = sweep(&map, param, &values, &seeds, &root)?;
            for r in rows {
                println!(
                    "{}={} runs={} avg_cum_loss={:.6e} avg_cum_ccv={:.6e} triggers={:.1}",
                    param.name(),
                    r.value,
                    r.runs,
                    r.mean_final_avg_cum_loss,
                    r.mean_final_avg_cum_ccv,
                    r.mean_total_triggers
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
