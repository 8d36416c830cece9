//! Acceptance harness: prints one PASS/FAIL line per criterion.
//!
//! Ordering criteria are reproduced at desk scale on the synthetic datasets,
//! so they are statistical: a FAIL line reports the measured counts rather
//! than aborting the run. The process exits nonzero only if a criterion
//! cannot be evaluated at all.

mod support;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use comet_core::cli;
use comet_core::config::ExperimentConfig;
use comet_core::experiment::{ablate, dual_label_pxap, AblationResult, OrderingCheck};
use comet_core::image::{AttributionMap, Image, Mask};
use comet_core::masking::make_masks;
use comet_core::metrics::{iou_auc, pxap};
use comet_core::trainer::{interlocking_probe, pretrain_detector, train_joint, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::gradcheck;
use support::oracles::{iou_auc_oracle, pxap_oracle};

const SEEDS: usize = 5;

fn config(text: &str) -> ExperimentConfig {
    ExperimentConfig::parse(text).expect("acceptance config parses")
}

fn workers() -> usize {
    std::thread::available_parallelism().map_or(1, usize::from)
}

/// At least 4 of every 5 seeds.
fn most(passed: usize, total: usize) -> bool {
    passed * 5 >= total * 4
}

struct Report {
    failures: usize,
}

impl Report {
    fn line(&mut self, id: &str, pass: bool, detail: String) {
        if !pass {
            self.failures += 1;
        }
        println!("{} [{id}] {detail}", if pass { "PASS" } else { "FAIL" });
    }
}

fn gradients(r: &mut Report) {
    let start = Instant::now();
    let mut failed = Vec::new();
    for (name, check) in gradcheck::ALL {
        if catch_unwind(check).is_err() {
            failed.push(name);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    r.line(
        "1",
        failed.is_empty() && secs < 30.0,
        format!(
            "gradient checks: {} families x {} seeds, rel err < {:e}, {secs:.1}s (limit 30s), failing: {failed:?}",
            gradcheck::ALL.len(),
            gradcheck::SEEDS,
            gradcheck::TOLERANCE
        ),
    );
}

fn masking_identity(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut dyadic = |n: usize| -> Vec<f64> { (0..n).map(|_| f64::from(rng.gen_range(0..=256u32)) / 256.0).collect() };
    let mut bad = 0;
    for case in 0..1000 {
        let (h, w) = (1 + case % 7, 1 + (case / 7) % 7);
        let img = Image::new(3, h, w, dyadic(3 * h * w)).unwrap();
        let map = AttributionMap::new(h, w, dyadic(h * w)).unwrap();
        let q = dyadic(3);
        let pair = make_masks(&img, &map, &q).unwrap();
        let exact = img.data.iter().enumerate().all(|(i, v)| {
            let back = pair.masked_in.data[i] + pair.masked_out.data[i] - q[i / (h * w)];
            back.to_bits() == v.to_bits()
        });
        if !exact {
            bad += 1;
        }
    }
    r.line(
        "2",
        bad == 0,
        format!("masking identity bit-exact on {} of 1000 pairs", 1000 - bad),
    );
}

fn metric_oracles(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (mut worst, mut perfect_ok) = (0.0f64, true);
    for _ in 0..50 {
        let n = if rng.gen_bool(0.5) { 20 } else { rng.gen_range(1..30) };
        let images = rng.gen_range(1..4);
        let mut raw_maps = Vec::new();
        let mut raw_gts = Vec::new();
        for _ in 0..images {
            let m: Vec<f64> = (0..64)
                .map(|_| {
                    if rng.gen_bool(0.5) {
                        rng.gen_range(0..=n) as f64 / n as f64
                    } else {
                        rng.gen_range(0.0..=1.0)
                    }
                })
                .collect();
            let mut g: Vec<bool> = (0..64).map(|_| rng.gen_bool(0.5)).collect();
            g[rng.gen_range(0..64)] = true;
            raw_maps.push(m);
            raw_gts.push(g);
        }
        let maps: Vec<AttributionMap> = raw_maps
            .iter()
            .map(|m| AttributionMap::new(8, 8, m.clone()).unwrap())
            .collect();
        let masks: Vec<Mask> = raw_gts.iter().map(|g| Mask::new(8, 8, g.clone()).unwrap()).collect();
        let gts: Vec<&Mask> = masks.iter().collect();
        worst = worst
            .max((pxap(&maps, &gts, n).unwrap() - pxap_oracle(&raw_maps, &raw_gts, n)).abs())
            .max((iou_auc(&maps, &gts, n).unwrap() - iou_auc_oracle(&raw_maps, &raw_gts, n)).abs());
        let exact: Vec<AttributionMap> = masks.iter().map(AttributionMap::from_mask).collect();
        perfect_ok &= pxap(&exact, &gts, n).unwrap() == 1.0;
    }
    r.line(
        "3",
        worst <= 1e-12 && perfect_ok,
        format!("metric oracles: max |diff| {worst:e} over 50 instances (tol 1e-12); map == gt gives pxap 1.0: {perfect_ok}"),
    );
}

fn interlocking(r: &mut Report) {
    let cfg = config("generator = fgbg\nn = 480\nclasses = 12\nepochs_pretrain = 30\n");
    let ds = cfg.generate().unwrap();
    let start = Instant::now();
    let mut passed = 0;
    for seed in 0..SEEDS as u64 {
        let tc = TrainConfig {
            seed,
            ..cfg.train.clone()
        };
        let table = interlocking_probe(&ds, &tc).unwrap();
        passed += usize::from(table.shows_interlocking_pattern());
    }
    let secs = start.elapsed().as_secs_f64();
    r.line(
        "4",
        most(passed, SEEDS) && secs < 600.0,
        format!("interlocking pattern on fgbg in {passed}/{SEEDS} seeds, {secs:.0}s (limit 600s)"),
    );
}

fn find<'a>(checks: &'a [OrderingCheck], key: &str) -> &'a OrderingCheck {
    checks
        .iter()
        .find(|c| c.name.contains(key))
        .expect("ordering check present")
}

fn describe(checks: &[&OrderingCheck]) -> String {
    checks
        .iter()
        .map(|c| format!("{} ({}/{})", c.name, c.passed, c.total))
        .collect::<Vec<_>>()
        .join("; ")
}

fn flower_orderings(r: &mut Report) {
    let cfg = config("generator = flower\nn_per_class = 40\nepochs_pretrain = 30\nepochs_joint = 30\nn_seeds = 5\n");
    let ds = cfg.generate().unwrap();
    let start = Instant::now();
    let result: AblationResult = ablate(&cfg, &ds, workers()).unwrap();
    println!(
        "info: flower ablation of {SEEDS} seeds took {:.0}s",
        start.elapsed().as_secs_f64()
    );
    let checks = result.checks();
    for (id, keys) in [
        ("5", &["pxap: COMET"][..]),
        ("6", &["sanity: "][..]),
        ("7", &["< gradient acc@20%", "<= acc@5%"][..]),
        ("8", &["sparsity: "][..]),
        ("9", &[">= 0.8 x clean", "noise20 pxap > NO_DETECTOR"][..]),
        ("10", &["accuracy: "][..]),
    ] {
        let picked: Vec<&OrderingCheck> = keys.iter().map(|p| find(&checks, p)).collect();
        r.line(id, picked.iter().all(|c| c.pass()), describe(&picked));
    }
}

/// Runs the `comet` binary twice on a tiny fgbg ablation; its own ordering
/// output is captured, not part of this report.
fn determinism(r: &mut Report) {
    let run = |dir: &Path| {
        Command::new(env!("CARGO_BIN_EXE_comet"))
            .args(["--generator", "fgbg", "--n", "48", "--classes", "4"])
            .args(["--epochs-pretrain", "1", "--epochs-joint", "1", "--n-seeds", "2"])
            .args(["--output-dir", dir.to_str().unwrap(), "ablate", "--workers", "2"])
            .output()
            .expect("comet binary runs")
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let outputs = [run(a.path()), run(b.path())];
    let codes: Vec<Option<i32>> = outputs.iter().map(|o| o.status.code()).collect();
    let read = |d: &Path, f: &str| std::fs::read(d.join("reports").join(f)).ok();
    let same = ["ablation.csv", "interlocking.csv"]
        .iter()
        .all(|f| read(a.path(), f).is_some() && read(a.path(), f) == read(b.path(), f))
        && outputs[0].stdout == outputs[1].stdout;
    let completed = codes
        .iter()
        .all(|c| *c == Some(cli::EXIT_OK) || *c == Some(cli::EXIT_ORDERING));
    r.line(
        "11",
        same && completed,
        format!("repeated ablate byte-identical reports and stdout: {same} (exit codes {codes:?})"),
    );
}

fn dual_label(r: &mut Report) {
    let cfg = config("generator = dual\nn = 240\nepochs_pretrain = 20\nepochs_joint = 20\n");
    let ds = cfg.generate().unwrap();
    let mut passed = 0;
    for seed in 0..SEEDS as u64 {
        let tc = TrainConfig {
            seed,
            ..cfg.train.clone()
        };
        let det = pretrain_detector(&ds, &tc).unwrap();
        let run = train_joint(&ds, &tc, Some(&det)).unwrap();
        let d = dual_label_pxap(&ds, &tc, &run, cfg.n_thresholds).unwrap();
        passed += usize::from(d[0][0] > d[1][0] && d[1][1] > d[0][1]);
    }
    r.line(
        "12",
        most(passed, SEEDS),
        format!("object/scene models each localise their own mask better in {passed}/{SEEDS} seeds"),
    );
}

fn main() {
    let start = Instant::now();
    let mut report = Report { failures: 0 };
    let sections: [fn(&mut Report); 7] = [
        gradients,
        masking_identity,
        metric_oracles,
        interlocking,
        flower_orderings,
        determinism,
        dual_label,
    ];
    let mut crashed = false;
    for section in sections {
        if catch_unwind(AssertUnwindSafe(|| section(&mut report))).is_err() {
            crashed = true;
            println!("FAIL a criterion could not be evaluated");
        }
    }
    let total = start.elapsed();
    println!(
        "info: {} failing criteria, total runtime {:.1} min on {} worker(s) (target {} min on 4 cores)",
        report.failures,
        total.as_secs_f64() / 60.0,
        workers(),
        Duration::from_secs(45 * 60).as_secs() / 60
    );
    if crashed {
        std::process::exit(1);
    }
}
