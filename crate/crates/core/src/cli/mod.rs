//! The `comet` command line. Every subcommand resolves an
//! [`ExperimentConfig`] (defaults, then `--config FILE`, then flags), echoes
//! it to `<output_dir>/config.txt` and works inside a fixed layout:
//!
//! ```text
//! <output_dir>/dataset/data.cmds
//! <output_dir>/checkpoints/{detector,detector_dr,detector_tuned,selector,predictor}.cmtp
//! <output_dir>/logs/{pretrain,train}.csv
//! <output_dir>/reports/{report,ablation,interlocking,summary}.csv
//! <output_dir>/maps/map_NNN.pgm, gt_NNN.pgm
//! ```

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind as ClapKind;
use clap::{Arg, ArgMatches, Command};

use crate::config::{ExperimentConfig, CONFIG_KEYS};
use crate::data::{read_dataset, write_dataset, Dataset, Split};
use crate::error::{Error, Result};
use crate::experiment::{ablate, evaluate_pipeline, EvalOptions};
use crate::image::AttributionMap;
use crate::metrics::{accuracy, read_report_csv, write_pgm, write_report_csv, ClassifierPipeline, ReportRow};
use crate::nets::{read_checkpoint, write_checkpoint, ModelParams};
use crate::trainer::{classifier_for, effective_dataset, pretrain_detector_logged, train_joint, Variant};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;
pub const EXIT_ORDERING: i32 = 3;

/// Paths of the output layout rooted at `output_dir`.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn config_echo(&self) -> PathBuf {
        self.root.join("config.txt")
    }

    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset").join("data.cmds")
    }

    pub fn checkpoint(&self, name: &str) -> PathBuf {
        self.root.join("checkpoints").join(format!("{name}.cmtp"))
    }

    pub fn log(&self, name: &str) -> PathBuf {
        self.root.join("logs").join(format!("{name}.csv"))
    }

    pub fn report(&self, name: &str) -> PathBuf {
        self.root.join("reports").join(format!("{name}.csv"))
    }

    pub fn maps(&self) -> PathBuf {
        self.root.join("maps")
    }
}

/// Checkpoint holding the pre-trained detector a variant trains against.
/// `Dr` detectors see permuted labels and are kept apart.
pub fn detector_name(variant: Variant) -> &'static str {
    if variant == Variant::Dr {
        "detector_dr"
    } else {
        "detector"
    }
}

fn flag(key: &str) -> String {
    key.replace('_', "-")
}

pub fn command() -> Command {
    let mut cmd = Command::new("comet")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Train and evaluate selector/predictor pipelines on synthetic images with exact ground truth")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .global(true)
                .help("`key = value` file applied before flags"),
        );
    for key in CONFIG_KEYS {
        let mut arg = Arg::new(key)
            .long(flag(key))
            .value_name("VALUE")
            .global(true)
            .help(format!("Set `{key}`"));
        if key.contains('_') {
            arg = arg.alias(key);
        }
        cmd = cmd.arg(arg);
    }
    cmd.subcommand(Command::new("gen-data").about("Generate the dataset and print a summary"))
        .subcommand(Command::new("pretrain").about("Pre-train the detector on full images"))
        .subcommand(
            Command::new("train").about("Joint selector/predictor training (pre-trains the detector if needed)"),
        )
        .subcommand(Command::new("eval").about("Score trained checkpoints and export maps"))
        .subcommand(
            Command::new("ablate")
                .about("Run every variant over the seed set and check the comparative orderings")
                .arg(
                    Arg::new("workers")
                        .long("workers")
                        .value_name("N")
                        .value_parser(clap::value_parser!(usize))
                        .help("Seeds trained in parallel (default: available cores)"),
                ),
        )
        .subcommand(
            Command::new("report")
                .about("Summarise a report CSV as mean and standard deviation over seeds")
                .arg(
                    Arg::new("input")
                        .long("input")
                        .value_name("CSV")
                        .help("Report to summarise"),
                ),
        )
}

/// Defaults, then the `--config` file, then flags.
pub fn resolve_config(matches: &ArgMatches) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    if let Some(path) = matches.get_one::<String>("config") {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read config {path}: {e}")))?;
        cfg.apply_text(&text)?;
    }
    for key in CONFIG_KEYS {
        if let Some(v) = matches.get_one::<String>(key) {
            cfg.set(key, v)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ClapKind::DisplayHelp | ClapKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    match dispatch(&matches) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Numerical(_) => EXIT_NUMERICAL,
                _ => EXIT_USAGE,
            }
        }
    }
}

fn dispatch(matches: &ArgMatches) -> Result<i32> {
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let cfg = resolve_config(sub)?;
    let layout = Layout::new(&cfg.output_dir);
    for dir in ["dataset", "checkpoints", "logs", "reports", "maps"] {
        fs::create_dir_all(layout.root.join(dir))?;
    }
    fs::write(layout.config_echo(), cfg.to_text())?;
    match name {
        "gen-data" => gen_data(&cfg, &layout),
        "pretrain" => pretrain(&cfg, &layout),
        "train" => train(&cfg, &layout),
        "eval" => eval(&cfg, &layout),
        "ablate" => run_ablate(&cfg, &layout, sub.get_one::<usize>("workers").copied()),
        "report" => report(&layout, sub.get_one::<String>("input").map(PathBuf::from)),
        _ => unreachable!("unknown subcommand {name}"),
    }
}

fn load_dataset(layout: &Layout) -> Result<Dataset> {
    let path = layout.dataset();
    read_dataset(&path).map_err(|e| match e {
        Error::Io(io) if io.kind() == ErrorKind::NotFound => {
            Error::Config(format!("no dataset at {}; run `comet gen-data` first", path.display()))
        }
        other => other,
    })
}

fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    read_checkpoint(path).map_err(|e| match e {
        Error::Io(io) if io.kind() == ErrorKind::NotFound => Error::Config(format!(
            "missing checkpoint {}; run `comet train` first",
            path.display()
        )),
        other => other,
    })
}

fn gen_data(cfg: &ExperimentConfig, layout: &Layout) -> Result<i32> {
    let ds = cfg.generate()?;
    write_dataset(&ds, &layout.dataset())?;
    let counts = ds.class_counts();
    let total = |split: usize| counts[split].iter().sum::<usize>();
    println!("dataset   {}", layout.dataset().display());
    println!("generator {}", ds.generator);
    println!("K         {}", ds.classes);
    println!("shape     {}x{}x{}", ds.channels, ds.height, ds.width);
    println!("samples   train {} val {} test {}", total(0), total(1), total(2));
    println!("per class {:?}", counts[0]);
    println!("q         {:?}", ds.fill);
    Ok(EXIT_OK)
}

/// Full-image accuracy of a classifier on the validation split.
fn val_accuracy(ds: &Dataset, params: &ModelParams) -> Result<f64> {
    let val = ds.split(Split::Val);
    if val.is_empty() {
        return Ok(f64::NAN);
    }
    let net = classifier_for(ds);
    accuracy(&ClassifierPipeline { net: &net, params }, &val)
}

fn pretrain(cfg: &ExperimentConfig, layout: &Layout) -> Result<i32> {
    let ds = load_dataset(layout)?;
    let (params, log) = pretrain_detector_logged(&ds, &cfg.train)?;
    let path = layout.checkpoint(detector_name(cfg.train.variant));
    write_checkpoint(&params, &path)?;
    fs::write(layout.log("pretrain"), log.to_csv())?;
    let eff = effective_dataset(&ds, &cfg.train);
    println!("detector  {}", path.display());
    if let Some(r) = log.last() {
        println!("train     loss {:.4} acc {:.4}", r.l_p, r.train_acc);
    }
    println!("val acc   {:.4}", val_accuracy(&eff, &params)?);
    Ok(EXIT_OK)
}

fn train(cfg: &ExperimentConfig, layout: &Layout) -> Result<i32> {
    let ds = load_dataset(layout)?;
    let variant = cfg.train.variant;
    let detector = if variant.needs_detector() || variant == Variant::Fp {
        let path = layout.checkpoint(detector_name(variant));
        if path.exists() {
            Some(read_checkpoint(&path)?)
        } else {
            let (params, log) = pretrain_detector_logged(&ds, &cfg.train)?;
            if variant != Variant::Fp {
                write_checkpoint(&params, &path)?;
                fs::write(layout.log("pretrain"), log.to_csv())?;
            }
            Some(params)
        }
    } else {
        None
    };
    let outcome = train_joint(&ds, &cfg.train, detector.as_ref())?;
    write_checkpoint(&outcome.selector, &layout.checkpoint("selector"))?;
    write_checkpoint(&outcome.predictor, &layout.checkpoint("predictor"))?;
    if let (Variant::Td, Some(d)) = (variant, &outcome.detector) {
        write_checkpoint(d, &layout.checkpoint("detector_tuned"))?;
    }
    fs::write(layout.log("train"), outcome.log.to_csv())?;
    println!("variant   {variant}");
    if let Some(r) = outcome.log.last() {
        println!(
            "epoch {}   l_p {:.4} l_d_out {:.4} reg {:.4} total {:.4} val acc {:.4} mean mask {:.4}",
            r.epoch, r.l_p, r.l_d_out, r.reg, r.total, r.val_acc, r.mean_mask
        );
    }
    Ok(EXIT_OK)
}

fn eval(cfg: &ExperimentConfig, layout: &Layout) -> Result<i32> {
    let ds = load_dataset(layout)?;
    let eff = effective_dataset(&ds, &cfg.train);
    let selector = load_checkpoint(&layout.checkpoint("selector"))?;
    let predictor = load_checkpoint(&layout.checkpoint("predictor"))?;
    let seed = cfg.train.seed;
    let opts = EvalOptions {
        n_thresholds: cfg.n_thresholds,
        seed,
    };
    let (report, maps) = evaluate_pipeline(&eff, cfg.train.variant.name(), &selector, &predictor, &opts, seed)?;
    let rows = report.rows();
    write_report_csv(&rows, &layout.report("report"))?;
    let scored = eff.split(Split::Test).into_iter().filter(|s| s.gt_mask.count() > 0);
    for (i, (map, sample)) in maps.iter().zip(scored).take(cfg.n_maps).enumerate() {
        write_pgm(map, &layout.maps().join(format!("map_{i:03}.pgm")))?;
        write_pgm(
            &AttributionMap::from_mask(&sample.gt_mask),
            &layout.maps().join(format!("gt_{i:03}.pgm")),
        )?;
    }
    for r in &rows {
        println!("{:<16} {:.4}", r.metric, r.value);
    }
    Ok(EXIT_OK)
}

fn run_ablate(cfg: &ExperimentConfig, layout: &Layout, workers: Option<usize>) -> Result<i32> {
    let path = layout.dataset();
    let ds = if path.exists() {
        read_dataset(&path)?
    } else {
        let ds = cfg.generate()?;
        write_dataset(&ds, &path)?;
        ds
    };
    let workers = workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, usize::from));
    let result = ablate(cfg, &ds, workers)?;
    write_report_csv(&result.rows(), &layout.report("ablation"))?;
    if let Some(csv) = result.interlocking_csv() {
        fs::write(layout.report("interlocking"), csv)?;
    }
    let checks = result.checks();
    for c in &checks {
        let rule = if c.every_seed { "every seed" } else { ">= 80% of seeds" };
        println!(
            "{} {}/{} ({rule}) {}",
            if c.pass() { "PASS" } else { "FAIL" },
            c.passed,
            c.total,
            c.name
        );
    }
    Ok(if checks.iter().all(|c| c.pass()) {
        EXIT_OK
    } else {
        EXIT_ORDERING
    })
}

/// `(variant, metric) -> (n, mean, sample std)`.
pub fn summarise(rows: &[ReportRow]) -> BTreeMap<(String, String), (usize, f64, f64)> {
    let mut groups: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.variant.clone(), r.metric.clone()))
            .or_default()
            .push(r.value);
    }
    groups
        .into_iter()
        .map(|(k, v)| {
            let n = v.len();
            let mean = v.iter().sum::<f64>() / n as f64;
            let var = if n > 1 {
                v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64
            } else {
                0.0
            };
            (k, (n, mean, var.sqrt()))
        })
        .collect()
}

fn report(layout: &Layout, input: Option<PathBuf>) -> Result<i32> {
    let path = match input {
        Some(p) => p,
        None => [layout.report("ablation"), layout.report("report")]
            .into_iter()
            .find(|p| p.exists())
            .ok_or_else(|| Error::Config(format!("no report under {}", layout.root.join("reports").display())))?,
    };
    let rows = read_report_csv(&path)?;
    let summary = summarise(&rows);
    let mut csv = String::from("variant,metric,n,mean,std\n");
    println!(
        "{:<22} {:<22} {:>3} {:>8} {:>8}",
        "variant", "metric", "n", "mean", "std"
    );
    for ((variant, metric), (n, mean, std)) in &summary {
        println!("{variant:<22} {metric:<22} {n:>3} {mean:>8.4} {std:>8.4}");
        csv.push_str(&format!("{variant},{metric},{n},{mean:?},{std:?}\n"));
    }
    fs::write(layout.report("summary"), csv)?;
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_and_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.txt");
        fs::write(&file, "lr = 0.001\nt = 0.2\n").unwrap();
        let m = command()
            .try_get_matches_from([
                "comet",
                "train",
                "--config",
                file.to_str().unwrap(),
                "--t",
                "0.3",
                "--epochs_joint",
                "7",
            ])
            .unwrap();
        let cfg = resolve_config(m.subcommand().unwrap().1).unwrap();
        assert_eq!(cfg.train.lr, 0.001);
        assert_eq!(cfg.train.t, 0.3);
        assert_eq!(cfg.train.epochs_joint, 7);
    }

    #[test]
    fn every_key_has_a_flag() {
        let cmd = command();
        for key in CONFIG_KEYS {
            assert!(
                cmd.get_arguments().any(|a| a.get_long() == Some(flag(key).as_str())),
                "{key}"
            );
        }
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["comet"]), EXIT_USAGE);
        assert_eq!(run(["comet", "frobnicate"]), EXIT_USAGE);
        assert_eq!(run(["comet", "train", "--lr", "fast"]), EXIT_USAGE);
        assert_eq!(run(["comet", "--version"]), EXIT_OK);
    }

    #[test]
    fn summary_statistics() {
        let row = |v: f64, seed| ReportRow {
            metric: "pxap".into(),
            variant: "COMET".into(),
            dataset: "flower".into(),
            value: v,
            seed,
        };
        let s = summarise(&[row(1.0, 0), row(3.0, 1)]);
        let (n, mean, std) = s[&("COMET".to_string(), "pxap".to_string())];
        assert_eq!((n, mean), (2, 2.0));
        assert!((std - 2f64.sqrt()).abs() < 1e-15);
    }
}
