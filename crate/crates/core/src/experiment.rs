//! End-to-end experiment pieces shared by the command line and tests:
//! evaluation of a trained pipeline, the input-gradient baseline, and the
//! multi-seed ablation with its ordering checks.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::config::{ExperimentConfig, Generator};
use crate::data::{Dataset, Sample, Split};
use crate::error::{Error, Result};
use crate::image::{AttributionMap, Image, Mask};
use crate::metrics::{
    accuracy, fidelity_curve, input_gradient_saliency_batch, iou_auc, pxap, robustness_eval, ClassifierPipeline,
    CometPipeline, MetricReport, ReportRow, Robustness, FIDELITY_KS,
};
use crate::nets::ModelParams;
use crate::trainer::{
    effective_dataset, interlocking_probe, predictor_for, pretrain_detector, selector_for, train_joint,
    InterlockingTable, JointOutcome, TrainConfig, Variant,
};

/// Fraction of pixels removed by the noise robustness protocol.
pub const NOISE_FRACTION: f64 = 0.2;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub n_thresholds: usize,
    /// Seed of the robustness perturbations.
    pub seed: u64,
}

/// Test-split samples with a non-empty ground truth.
fn scored(ds: &Dataset) -> Vec<&Sample> {
    ds.split(Split::Test)
        .into_iter()
        .filter(|s| s.gt_mask.count() > 0)
        .collect()
}

fn mean_of(maps: &[AttributionMap]) -> f64 {
    maps.iter().map(AttributionMap::mean).sum::<f64>() / maps.len().max(1) as f64
}

/// All metrics for a trained selector/predictor pair on the test split of
/// `ds` (the dataset the pair was trained on). Returns the report and the
/// test maps.
pub fn evaluate_pipeline(
    ds: &Dataset,
    variant: &str,
    selector_params: &ModelParams,
    predictor_params: &ModelParams,
    opts: &EvalOptions,
    seed: u64,
) -> Result<(MetricReport, Vec<AttributionMap>)> {
    let selector = selector_for(ds);
    let predictor = predictor_for(ds);
    selector.net.check_params(selector_params)?;
    predictor.net.check_params(predictor_params)?;
    let test = scored(ds);
    if test.is_empty() {
        return Err(Error::Contract("test split has no samples with ground truth".into()));
    }
    let pipeline = CometPipeline {
        selector: &selector,
        selector_params,
        predictor: &predictor,
        predictor_params,
        fill: &ds.fill,
    };
    let images: Vec<&Image> = test.iter().map(|s| &s.image).collect();
    let gts: Vec<&Mask> = test.iter().map(|s| &s.gt_mask).collect();
    let maps = pipeline.explain(&images)?;
    let report = MetricReport {
        variant: variant.to_string(),
        dataset: ds.generator.clone(),
        seed,
        accuracy: accuracy(&pipeline, &test)?,
        pxap: pxap(&maps, &gts, opts.n_thresholds)?,
        iou_auc: iou_auc(&maps, &gts, opts.n_thresholds)?,
        fidelity: fidelity_curve(&pipeline, &test, &maps, &FIDELITY_KS, &ds.fill)?,
        robustness: vec![
            (
                "noise20".to_string(),
                robustness_eval(
                    &selector,
                    selector_params,
                    &test,
                    Robustness::Noise(NOISE_FRACTION),
                    &ds.fill,
                    opts.seed,
                    opts.n_thresholds,
                )?,
            ),
            (
                "bgswap".to_string(),
                robustness_eval(
                    &selector,
                    selector_params,
                    &test,
                    Robustness::BackgroundSwap,
                    &ds.fill,
                    opts.seed,
                    opts.n_thresholds,
                )?,
            ),
        ],
        mean_mask: mean_of(&maps),
    };
    report.check()?;
    Ok((report, maps))
}

/// Post-hoc baseline: input-gradient saliency of a classifier trained on
/// full images, scored with the same protocols.
#[derive(Clone, Debug, PartialEq)]
pub struct BaselineReport {
    /// Full-image accuracy of the classifier.
    pub accuracy: f64,
    pub pxap: f64,
    pub iou_auc: f64,
    pub fidelity: Vec<(f64, f64)>,
    /// Images whose gradient was identically zero.
    pub degenerate: usize,
}

impl BaselineReport {
    pub fn rows(&self, dataset: &str, seed: u64) -> Vec<ReportRow> {
        let mut named = vec![
            ("classifier_accuracy".to_string(), self.accuracy),
            ("grad_pxap".to_string(), self.pxap),
            ("grad_iou_auc".to_string(), self.iou_auc),
        ];
        named.extend(self.fidelity.iter().map(|(k, v)| (format!("grad_fidelity_k{k}"), *v)));
        named
            .into_iter()
            .map(|(metric, value)| ReportRow {
                metric,
                variant: "GRAD".to_string(),
                dataset: dataset.to_string(),
                value,
                seed,
            })
            .collect()
    }
}

pub fn evaluate_gradient_baseline(
    ds: &Dataset,
    classifier_params: &ModelParams,
    opts: &EvalOptions,
) -> Result<BaselineReport> {
    let net = predictor_for(ds);
    net.net.check_params(classifier_params)?;
    let test = scored(ds);
    let images: Vec<&Image> = test.iter().map(|s| &s.image).collect();
    let labels: Vec<usize> = test.iter().map(|s| s.label).collect();
    let gts: Vec<&Mask> = test.iter().map(|s| &s.gt_mask).collect();
    let saliency = input_gradient_saliency_batch(&net, classifier_params, &images, &labels)?;
    let degenerate = saliency.iter().filter(|s| s.degenerate).count();
    let maps: Vec<AttributionMap> = saliency.into_iter().map(|s| s.map).collect();
    let pipeline = ClassifierPipeline {
        net: &net,
        params: classifier_params,
    };
    Ok(BaselineReport {
        accuracy: accuracy(&pipeline, &test)?,
        pxap: pxap(&maps, &gts, opts.n_thresholds)?,
        iou_auc: iou_auc(&maps, &gts, opts.n_thresholds)?,
        fidelity: fidelity_curve(&pipeline, &test, &maps, &FIDELITY_KS, &ds.fill)?,
        degenerate,
    })
}

/// Results of all variants for one training seed.
#[derive(Clone, Debug, PartialEq)]
pub struct SeedResult {
    pub seed: u64,
    /// One report per variant, in [`Variant::ALL`] order.
    pub reports: Vec<MetricReport>,
    pub baseline: BaselineReport,
    pub interlocking: Option<InterlockingTable>,
    /// For dual-label data: `pxap[model][mask]` with models trained on
    /// object (0) and scene (1) labels, scored against the object (0) and
    /// scene (1) masks.
    pub dual: Option<[[f64; 2]; 2]>,
}

impl SeedResult {
    pub fn report(&self, variant: Variant) -> &MetricReport {
        let i = Variant::ALL.iter().position(|v| *v == variant).expect("variant listed");
        &self.reports[i]
    }
}

/// Trains and evaluates every variant for one seed on `ds`.
pub fn run_seed(cfg: &ExperimentConfig, ds: &Dataset, seed: u64) -> Result<SeedResult> {
    let base = TrainConfig {
        seed,
        variant: Variant::Comet,
        ..cfg.train.clone()
    };
    let opts = EvalOptions {
        n_thresholds: cfg.n_thresholds,
        seed,
    };
    let detector = pretrain_detector(ds, &base)?;
    let mut reports = Vec::with_capacity(Variant::ALL.len());
    let mut comet: Option<JointOutcome> = None;
    for variant in Variant::ALL {
        let tc = TrainConfig {
            variant,
            ..base.clone()
        };
        let own_detector;
        let det = match variant {
            Variant::Dr => {
                own_detector = pretrain_detector(ds, &tc)?;
                Some(&own_detector)
            }
            Variant::NoDetector => None,
            _ => Some(&detector),
        };
        let outcome = train_joint(ds, &tc, det)?;
        let eff = effective_dataset(ds, &tc);
        let (report, _) = evaluate_pipeline(&eff, variant.name(), &outcome.selector, &outcome.predictor, &opts, seed)?;
        reports.push(report);
        if variant == Variant::Comet {
            comet = Some(outcome);
        }
    }
    let baseline = evaluate_gradient_baseline(ds, &detector, &opts)?;
    let interlocking = match cfg.generator {
        Generator::FgBg => Some(interlocking_probe(ds, &base)?),
        _ => None,
    };
    let dual = match cfg.generator {
        Generator::Dual => Some(dual_label_pxap(
            ds,
            &base,
            comet.as_ref().expect("comet trained"),
            cfg.n_thresholds,
        )?),
        _ => None,
    };
    Ok(SeedResult {
        seed,
        reports,
        baseline,
        interlocking,
        dual,
    })
}

/// Trains COMET on the other label view of a dual-label dataset and scores
/// both models against both masks. `ds` carries the labels `trained` was
/// fit on.
pub fn dual_label_pxap(ds: &Dataset, config: &TrainConfig, trained: &JointOutcome, n: usize) -> Result<[[f64; 2]; 2]> {
    let scene_view = ds.generator.ends_with("-scene");
    let other = if scene_view {
        return Err(Error::Config("dual-label comparison expects object labels".into()));
    } else {
        ds.with_scene_labels()?
    };
    let other_det = pretrain_detector(&other, config)?;
    let other_run = train_joint(&other, config, Some(&other_det))?;
    let test = ds.split(Split::Test);
    let images: Vec<&Image> = test.iter().map(|s| &s.image).collect();
    let object_masks: Vec<&Mask> = test.iter().map(|s| &s.gt_mask).collect();
    let scene_masks: Vec<Mask> = test.iter().map(|s| s.fg_mask.complement()).collect();
    let scene_refs: Vec<&Mask> = scene_masks.iter().collect();
    let mut table = [[0.0; 2]; 2];
    for (m, params) in [&trained.selector, &other_run.selector].into_iter().enumerate() {
        let maps = selector_for(ds).maps(params, &images)?;
        table[m][0] = pxap(&maps, &object_masks, n)?;
        table[m][1] = pxap(&maps, &scene_refs, n)?;
    }
    Ok(table)
}

/// A comparative claim checked on every seed.
#[derive(Clone, Debug, PartialEq)]
pub struct OrderingCheck {
    pub name: &'static str,
    pub passed: usize,
    pub total: usize,
    /// Must hold on every seed rather than on at least 80% of them.
    pub every_seed: bool,
}

impl OrderingCheck {
    pub fn pass(&self) -> bool {
        if self.every_seed {
            self.passed == self.total
        } else {
            self.passed * 5 >= self.total * 4
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationResult {
    pub dataset: String,
    pub t: f64,
    pub seeds: Vec<SeedResult>,
}

/// Per-seed condition behind one ordering check.
type SeedPredicate = Box<dyn Fn(&SeedResult) -> bool>;

fn fid(r: &MetricReport, k: f64) -> f64 {
    r.fidelity.iter().find(|(kk, _)| *kk == k).map_or(f64::NAN, |(_, v)| *v)
}

fn robust(r: &MetricReport, name: &str) -> f64 {
    r.robustness
        .iter()
        .find(|(n, _)| n == name)
        .map_or(f64::NAN, |(_, v)| *v)
}

impl AblationResult {
    pub fn rows(&self) -> Vec<ReportRow> {
        let mut rows = Vec::new();
        for s in &self.seeds {
            for r in &s.reports {
                rows.extend(r.rows());
            }
            rows.extend(s.baseline.rows(&self.dataset, s.seed));
            if let Some(d) = &s.dual {
                for (m, model) in ["object", "scene"].iter().enumerate() {
                    for (k, mask) in ["object", "scene"].iter().enumerate() {
                        rows.push(ReportRow {
                            metric: format!("dual_pxap_{mask}_mask"),
                            variant: format!("COMET_{model}_labels"),
                            dataset: self.dataset.clone(),
                            value: d[m][k],
                            seed: s.seed,
                        });
                    }
                }
            }
        }
        rows
    }

    /// Interlocking tables as CSV (`seed,fit,input,ce,accuracy`), when the
    /// dataset provides them. Cross-entropies are not bounded by 1, so they
    /// are kept out of the metric report.
    pub fn interlocking_csv(&self) -> Option<String> {
        let mut out = String::from("seed,fit,input,ce,accuracy\n");
        let mut any = false;
        for s in &self.seeds {
            if let Some(t) = &s.interlocking {
                any = true;
                for line in t.to_csv().lines().skip(1) {
                    out.push_str(&format!("{},{line}\n", s.seed));
                }
            }
        }
        any.then_some(out)
    }

    pub fn checks(&self) -> Vec<OrderingCheck> {
        let mut checks: Vec<(&'static str, bool, SeedPredicate)> = Vec::new();
        let t = self.t;
        let has = |f: fn(&SeedResult) -> bool| self.seeds.iter().all(f);
        if has(|s| s.interlocking.is_some()) {
            checks.push((
                "interlocking: diagonal CE below off-diagonal, F/F minimal",
                false,
                Box::new(|s| {
                    s.interlocking
                        .as_ref()
                        .is_some_and(InterlockingTable::shows_interlocking_pattern)
                }),
            ));
        }
        if has(|s| s.dual.is_some()) {
            checks.push((
                "dual-label: each model localises its own label's mask better",
                false,
                Box::new(|s| s.dual.is_some_and(|d| d[0][0] > d[1][0] && d[1][1] > d[0][1])),
            ));
        }
        let c = Variant::Comet;
        checks.push((
            "pxap: COMET > NO_DETECTOR and COMET > gradient baseline",
            false,
            Box::new(move |s| {
                let p = s.report(c).pxap;
                p > s.report(Variant::NoDetector).pxap && p > s.baseline.pxap
            }),
        ));
        checks.push((
            "sanity: iou_auc(COMET) >= 2 x iou_auc(DR)",
            true,
            Box::new(move |s| s.report(c).iou_auc >= 2.0 * s.report(Variant::Dr).iou_auc),
        ));
        checks.push((
            "fidelity: COMET acc@20% < gradient acc@20%",
            false,
            Box::new(move |s| fid(s.report(c), 20.0) < fid_baseline(&s.baseline, 20.0)),
        ));
        checks.push((
            "fidelity: COMET acc@20% <= acc@5%",
            false,
            Box::new(move |s| fid(s.report(c), 20.0) <= fid(s.report(c), 5.0)),
        ));
        checks.push((
            "sparsity: COMET mean mask <= t + 0.05",
            true,
            Box::new(move |s| s.report(c).mean_mask <= t + 0.05),
        ));
        checks.push((
            "robustness: COMET noise20 pxap >= 0.8 x clean",
            false,
            Box::new(move |s| robust(s.report(c), "noise20") >= 0.8 * s.report(c).pxap),
        ));
        checks.push((
            "robustness: COMET noise20 pxap > NO_DETECTOR",
            false,
            Box::new(move |s| robust(s.report(c), "noise20") > robust(s.report(Variant::NoDetector), "noise20")),
        ));
        checks.push((
            "accuracy: COMET >= full-image classifier - 0.02",
            true,
            Box::new(move |s| s.report(c).accuracy >= s.baseline.accuracy - 0.02),
        ));
        checks
            .into_iter()
            .map(|(name, every_seed, f)| OrderingCheck {
                name,
                passed: self.seeds.iter().filter(|s| f(s)).count(),
                total: self.seeds.len(),
                every_seed,
            })
            .collect()
    }
}

fn fid_baseline(b: &BaselineReport, k: f64) -> f64 {
    b.fidelity.iter().find(|(kk, _)| *kk == k).map_or(f64::NAN, |(_, v)| *v)
}

/// Runs every variant for seeds `seed .. seed + n_seeds` on the configured
/// dataset. Seeds are spread over up to `workers` threads; results do not
/// depend on the worker count.
pub fn ablate(cfg: &ExperimentConfig, ds: &Dataset, workers: usize) -> Result<AblationResult> {
    cfg.validate()?;
    let seeds: Vec<u64> = (0..cfg.n_seeds as u64).map(|i| cfg.train.seed + i).collect();
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<SeedResult>>>> = Mutex::new((0..seeds.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers.clamp(1, seeds.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= seeds.len() {
                    break;
                }
                let r = run_seed(cfg, ds, seeds[i]);
                results.lock().expect("worker panicked")[i] = Some(r);
            });
        }
    });
    let seeds = results
        .into_inner()
        .expect("worker panicked")
        .into_iter()
        .map(|r| r.expect("every seed ran"))
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationResult {
        dataset: ds.generator.clone(),
        t: cfg.train.t,
        seeds,
    })
}
