use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use prunegnn::baselines::Baseline;
use prunegnn::gnn::{self, GnnModel};
use prunegnn::harness::{self, CsvMeta, ExperimentConfig, GnnVariant, ReproduceOutcome, Target, TEST_INDEX_OFFSET};
use prunegnn::metrics::{self, ResultRow};
use prunegnn::netsim::{generate_dataset, read_dataset, write_dataset, ScenarioConfig};
use prunegnn::stochgeo::ThresholdSpec;

#[derive(Parser)]
#[command(name = "prunegnn", version = env!("PRUNEGNN_GIT_DESCRIBE"), about = "Threshold-pruned GNN power allocation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON experiment config; missing fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Start from full-scale sample sizes instead of the defaults.
    #[arg(long, global = true)]
    paper_scale: bool,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) if self.paper_scale => bail!("--config and --paper-scale are mutually exclusive ({})", p.display()),
            Some(p) => ExperimentConfig::load(p)?,
            None if self.paper_scale => ExperimentConfig::paper_scale(),
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(d) = &self.output_dir {
            cfg.output_dir = d.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Solve the distance and neighbour threshold tables.
    Thresholds {
        #[command(flatten)]
        common: Common,
        /// Path-loss exponents; defaults to 3 to 5.5 in steps of 0.5.
        #[arg(long, value_delimiter = ',')]
        alpha: Option<Vec<f64>>,
        /// Intensities for the neighbour table.
        #[arg(long, value_delimiter = ',')]
        lambda: Option<Vec<f64>>,
        /// Target ratios for the distance table; the neighbour table uses `target_ratio`.
        #[arg(long, value_delimiter = ',')]
        ratio: Option<Vec<f64>>,
        #[arg(long, value_enum, default_value = "both")]
        kind: Kind,
        /// Shortcut for the full pipeline of one table (1 to 4).
        #[arg(long)]
        table: Option<u8>,
    },
    /// Sample network instances.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        count: usize,
        #[arg(long, conflicts_with = "lambda")]
        pairs: Option<usize>,
        #[arg(long)]
        lambda: Option<f64>,
        /// Side of the square region in metres.
        #[arg(long)]
        region: Option<f64>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        dmin: Option<f64>,
        #[arg(long)]
        dmax: Option<f64>,
        /// Index of the first instance.
        #[arg(long, default_value_t = 0)]
        start: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one GNN and save it.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset written by `generate`; sampled from the config otherwise.
        #[arg(long)]
        data: Option<PathBuf>,
        /// `distance:t`, `neighbour:n` or `complete`; solved from the config when absent.
        #[arg(long)]
        spec: Option<ThresholdSpec>,
        /// Variant whose rule is solved when `--spec` is absent.
        #[arg(long, default_value = "n-gnn")]
        model: GnnVariant,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch CSV log.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Score saved models and baselines on a test set.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long = "model")]
        models: Vec<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        baselines: Option<Vec<Baseline>>,
        #[arg(long)]
        csv: PathBuf,
    },
    /// Monte-Carlo variance of captured interference.
    Variance {
        #[command(flatten)]
        common: Common,
    },
    /// Inference time against network size.
    Timing {
        #[command(flatten)]
        common: Common,
    },
    /// Regenerate one table or figure.
    Reproduce {
        #[command(flatten)]
        common: Common,
        #[arg(long, conflicts_with = "figure", required_unless_present = "figure")]
        table: Option<u8>,
        #[arg(long)]
        figure: Option<u8>,
    },
    /// Inspect configuration.
    Config {
        #[command(subcommand)]
        action: ConfigAction,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Kind {
    Distance,
    Neighbour,
    Both,
}

#[derive(Subcommand)]
enum ConfigAction {
    /// Print the effective config and its hash.
    Show {
        #[command(flatten)]
        common: Common,
    },
}

fn report(outcome: &ReproduceOutcome) -> bool {
    for f in &outcome.files {
        println!("wrote {}", f.display());
    }
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    for a in &outcome.assertions {
        println!("[{}] {}: {}", if a.passed { "PASS" } else { "FAIL" }, a.name, a.detail);
    }
    outcome.passed()
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Thresholds { common, alpha, lambda, ratio, kind, table } => {
            let cfg = common.load()?;
            if let Some(t) = table {
                if !(1..=4).contains(&t) {
                    bail!("--table takes 1 to 4 here; use `reproduce` for the others");
                }
                return Ok(report(&harness::reproduce(&cfg, Target::Table(t))?));
            }
            let tables = harness::run_threshold_tables(
                &ratio.unwrap_or(harness::RATIO_GRID.to_vec()),
                &alpha.unwrap_or(harness::ALPHA_GRID.to_vec()),
                &lambda.unwrap_or(harness::INTENSITY_GRID.to_vec()),
                cfg.target_ratio,
                cfg.d0,
            )?;
            let meta = CsvMeta::for_config(&cfg);
            let dir = &cfg.output_dir;
            let mut out = ReproduceOutcome::default();
            let mut files = Vec::new();
            if kind != Kind::Neighbour {
                files.push((tables.distance_csv(), "distance_thresholds.csv"));
                files.push((tables.distance_cells_csv(), "distance_threshold_cells.csv"));
                out.assertions.extend(harness::threshold_assertions("distance", &tables.distance));
            }
            if kind != Kind::Distance {
                files.push((tables.neighbour_csv(), "neighbour_thresholds.csv"));
                files.push((tables.neighbour_cells_csv(), "neighbour_threshold_cells.csv"));
                out.assertions.extend(harness::threshold_assertions("neighbour", &tables.neighbour));
            }
            for (table, name) in files {
                table.write(&dir.join(name), &meta)?;
                out.files.push(dir.join(name));
            }
            // reference comparisons are informational outside `reproduce`
            report(&out);
            Ok(true)
        }
        Command::Generate { common, count, pairs, lambda, region, alpha, dmin, dmax, start, out } => {
            let cfg = common.load()?;
            let base = cfg.scenario();
            let scenario = ScenarioConfig {
                pairs: if lambda.is_some() { None } else { pairs.or(base.pairs) },
                intensity: if lambda.is_some() {
                    lambda
                } else if pairs.is_some() {
                    None
                } else {
                    base.intensity
                },
                region_side: region.unwrap_or(base.region_side),
                alpha: alpha.unwrap_or(base.alpha),
                d_min: dmin.unwrap_or(base.d_min),
                d_max: dmax.unwrap_or(base.d_max),
                ..base
            };
            scenario.validate()?;
            let data = generate_dataset(&scenario, start, count)?;
            write_dataset(&out, Some(&scenario), &data)?;
            println!("wrote {} instances to {}", data.len(), out.display());
            Ok(true)
        }
        Command::Train { common, data, spec, model, epochs, out, log } => {
            let mut cfg = common.load()?;
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            let (scenario, train_set) = match data {
                Some(p) => {
                    let ds = read_dataset(&p).with_context(|| format!("reading {}", p.display()))?;
                    (ds.scenario.unwrap_or_else(|| cfg.scenario()), ds.instances)
                }
                None => {
                    let s = cfg.scenario();
                    let d = generate_dataset(&s, 0, cfg.train_samples)?;
                    (s, d)
                }
            };
            let spec = match spec {
                Some(s) => s,
                None => cfg.resolve_spec(model, &scenario)?,
            };
            let (trained, history) = harness::train_with_spec(&cfg, spec, &scenario, &train_set, None)?;
            trained.save(&out)?;
            if let Some(l) = log {
                gnn::write_train_log(&mut BufWriter::new(File::create(&l)?), &history)?;
            }
            let last = history.last().map(|e| e.loss).unwrap_or(f64::NAN);
            println!("trained under {spec}, final loss {last:.6}, saved to {}", out.display());
            Ok(true)
        }
        Command::Eval { common, models, data, baselines, csv } => {
            let cfg = common.load()?;
            let test = match data {
                Some(p) => read_dataset(&p)?.instances,
                None => generate_dataset(&cfg.scenario(), TEST_INDEX_OFFSET, cfg.test_samples)?,
            };
            let wm = cfg.wmmse_config();
            let wmmse: Vec<f64> = test.iter().map(|n| Baseline::Wmmse.run(n, &wm, 0).weighted_sum_rate).collect();
            let mut rows = Vec::new();
            let mut push = |name: &str, rates: Vec<f64>, times: Vec<f64>| {
                let norm = metrics::normalized_performance(&rates, &wmmse).unwrap_or(f64::NAN);
                println!("{name}: normalized {norm:.4}");
                for (i, (r, t)) in rates.into_iter().zip(times).enumerate() {
                    rows.push(ResultRow {
                        instance_id: i,
                        algorithm: name.to_string(),
                        sum_rate: r,
                        normalized: Some(r / wmmse[i]),
                        time_s: Some(t),
                    });
                }
            };
            for b in baselines.unwrap_or_else(|| cfg.baselines.clone()) {
                let (r, t) = test
                    .iter()
                    .enumerate()
                    .map(|(i, n)| {
                        let a = b.run(n, &wm, cfg.seed.wrapping_add(i as u64));
                        (a.weighted_sum_rate, a.inference_time)
                    })
                    .unzip();
                push(b.name(), r, t);
            }
            for path in &models {
                let model = GnnModel::load(path).with_context(|| format!("loading {}", path.display()))?;
                let (r, t) = harness::evaluate_model(&model, model.spec(), &test)?;
                push(&path.display().to_string(), r, t);
            }
            metrics::write_result_rows(&mut BufWriter::new(File::create(&csv)?), &rows)?;
            println!("wrote {}", csv.display());
            Ok(true)
        }
        Command::Variance { common } => {
            let cfg = common.load()?;
            let study = harness::run_variance_study(&cfg, &harness::INTENSITY_GRID, &harness::ALPHA_GRID)?;
            let meta = CsvMeta::for_config(&cfg);
            let mut out = ReproduceOutcome { warnings: study.warnings.clone(), ..Default::default() };
            for (table, name) in [
                (study.distance_csv(), "variance_distance.csv"),
                (study.neighbour_csv(), "variance_neighbour.csv"),
                (study.cells_csv(), "variance_cells.csv"),
            ] {
                table.write(&cfg.output_dir.join(name), &meta)?;
                out.files.push(cfg.output_dir.join(name));
            }
            out.assertions = harness::variance_assertions(&study);
            report(&out);
            Ok(true)
        }
        Command::Timing { common } => {
            let cfg = common.load()?;
            let study = harness::run_timing(&cfg, cfg.target_ratio)?;
            let meta = CsvMeta::for_config(&cfg);
            let mut out = ReproduceOutcome { warnings: study.warnings.clone(), ..Default::default() };
            for (table, name) in [(study.csv(), "timing.csv"), (study.slopes_csv(), "timing_slopes.csv")] {
                table.write(&cfg.output_dir.join(name), &meta)?;
                out.files.push(cfg.output_dir.join(name));
            }
            out.assertions = harness::timing_assertions(&study);
            report(&out);
            Ok(true)
        }
        Command::Reproduce { common, table, figure } => {
            let cfg = common.load()?;
            let target = match (table, figure) {
                (Some(t), _) => Target::Table(t),
                (None, Some(f)) => Target::Figure(f),
                (None, None) => bail!("one of --table or --figure is required"),
            };
            let outcome = harness::reproduce(&cfg, target)?;
            Ok(report(&outcome))
        }
        Command::Config { action: ConfigAction::Show { common } } => {
            let cfg = common.load()?;
            println!("{}", cfg.to_json_pretty());
            println!("# config_hash: {}", cfg.hash());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
