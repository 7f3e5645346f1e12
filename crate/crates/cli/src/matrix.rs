//! The full comparison: every student variant and both teachers, over
//! several independently seeded replicates, summarized in one table.
//!
//! Replicate `r` lives in `<out>/replicate-<r>/` with master seed
//! `derive_seed(seed, "replicate-<r>")`. Completed stages are reused, so
//! raising `matrix.replicates` only computes the new replicates.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use distortkd::augmentor::Condition;
use distortkd::eval::EvalReport;
use distortkd::rng::derive_seed;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{hash_json, RunConfig};
use crate::error::{CliError, Result};
use crate::pipeline::{Run, StudentSummary, TeacherMetrics, VisualSummary};
use crate::stage::{read_json, write_bytes, write_json, Provenance, VERSION};
use crate::variant::{ModelId, Variant};

pub const SUMMARY_CSV: &str = "summary.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const SUMMARY_TXT: &str = "summary.txt";

/// Replicate-mean scores of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub model: String,
    pub n_replicates: usize,
    pub clean: f64,
    #[serde(rename = "2dist")]
    pub two_dist: f64,
    pub fsd_like: f64,
    pub dns_like: f64,
    pub distorted_mean: f64,
    pub invariance: f64,
    /// Exact-match accuracy of the 7-way distortion probe.
    pub distortion_probe: f64,
    pub distortion_probe_per_class: f64,
    /// Reports averaged into this row, relative to the matrix directory.
    pub sources: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub index: usize,
    pub seed: u64,
    pub dir: String,
    pub reports: BTreeMap<String, EvalReport>,
    pub visual: BTreeMap<String, VisualSummary>,
    pub teacher_metrics: BTreeMap<String, TeacherMetrics>,
    pub students: BTreeMap<String, StudentSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub config_sha256: String,
    pub version: String,
    pub seed: u64,
    pub rows: Vec<SummaryRow>,
    pub replicates: Vec<ReplicateResult>,
}

#[derive(Debug, Clone, Copy)]
pub struct MatrixOptions {
    pub jobs: usize,
    pub verbose: bool,
}

impl Default for MatrixOptions {
    fn default() -> Self {
        Self { jobs: 1, verbose: false }
    }
}

pub fn replicate_seed(seed: u64, index: usize) -> u64 {
    derive_seed(seed, &format!("replicate-{index}"))
}

fn replicate_dir(index: usize) -> String {
    format!("replicate-{index}")
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n.max(1) as f64
}

impl SummaryTable {
    pub fn row(&self, model: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.model == model)
    }

    /// One report per replicate for `model`, in replicate order.
    pub fn reports(&self, model: &str) -> Vec<&EvalReport> {
        self.replicates.iter().filter_map(|r| r.reports.get(model)).collect()
    }

    pub fn load(dir: &Path) -> Result<Self> {
        read_json(&dir.join(SUMMARY_JSON))
    }

    fn provenance(&self) -> Provenance {
        Provenance {
            config_sha256: self.config_sha256.clone(),
            version: self.version.clone(),
            stage: "summary".into(),
            stage_key: hash_json(&json!({ "config": self.config_sha256, "seed": self.seed })),
        }
    }

    /// CSV with a `#` provenance line; numbers use the shortest
    /// round-tripping decimal form.
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(self.provenance().csv_comment().into_bytes());
        w.write_record([
            "model",
            "clean",
            "2dist",
            "fsd_like",
            "dns_like",
            "distorted_mean",
            "invariance",
            "distortion_probe",
            "distortion_probe_per_class",
            "n_replicates",
            "sources",
        ])?;
        for r in &self.rows {
            let mut rec: Vec<String> = vec![r.model.clone()];
            rec.extend(
                [
                    r.clean,
                    r.two_dist,
                    r.fsd_like,
                    r.dns_like,
                    r.distorted_mean,
                    r.invariance,
                    r.distortion_probe,
                    r.distortion_probe_per_class,
                ]
                .iter()
                .map(f64::to_string),
            );
            rec.push(r.n_replicates.to_string());
            rec.push(r.sources.join(";"));
            w.write_record(&rec)?;
        }
        w.into_inner().map_err(|e| CliError::Config(format!("csv buffer: {e}")))
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "# config_sha256={} version={} replicates={}\n",
            self.config_sha256,
            self.version,
            self.replicates.len()
        );
        s.push_str(&format!(
            "{:<9} {:>6} {:>6} {:>8} {:>8} {:>6} {:>6} {:>7}\n",
            "model", "clean", "2dist", "fsd_like", "dns_like", "d-mean", "inv", "d-probe"
        ));
        for r in &self.rows {
            s.push_str(&format!(
                "{:<9} {:>6.3} {:>6.3} {:>8.3} {:>8.3} {:>6.3} {:>6.3} {:>7.3}\n",
                r.model, r.clean, r.two_dist, r.fsd_like, r.dns_like, r.distorted_mean, r.invariance, r.distortion_probe
            ));
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_bytes(&dir.join(SUMMARY_CSV), &self.to_csv()?)?;
        write_bytes(&dir.join(SUMMARY_TXT), self.to_text().as_bytes())?;
        write_json(&dir.join(SUMMARY_JSON), self, &self.provenance(), true)
    }
}

fn summarize(config: &RunConfig, seed: u64, replicates: Vec<ReplicateResult>, models: &[ModelId]) -> SummaryTable {
    let rows = models
        .iter()
        .map(|m| {
            let id = m.id();
            let found: Vec<(&ReplicateResult, &EvalReport)> = replicates
                .iter()
                .filter_map(|r| r.reports.get(id).map(|rep| (r, rep)))
                .collect();
            let acc = |c: Condition| mean(found.iter().map(|(_, rep)| rep.accuracy_on(c).unwrap_or(f64::NAN)));
            let sub = if m.is_teacher() { "teacher_reports" } else { "reports" };
            SummaryRow {
                model: id.to_string(),
                n_replicates: found.len(),
                clean: acc(Condition::Clean),
                two_dist: acc(Condition::TwoDist),
                fsd_like: acc(Condition::FsdLike),
                dns_like: acc(Condition::DnsLike),
                distorted_mean: mean(found.iter().map(|(_, rep)| rep.distorted_mean())),
                invariance: mean(found.iter().map(|(_, rep)| rep.invariance)),
                distortion_probe: mean(found.iter().map(|(_, rep)| rep.distortion_probe.exact_match)),
                distortion_probe_per_class: mean(found.iter().map(|(_, rep)| rep.distortion_probe.mean_per_class)),
                sources: found
                    .iter()
                    .map(|(r, _)| format!("{}/{sub}/{}.json", r.dir, m.slug()))
                    .collect(),
            }
        })
        .collect();
    SummaryTable {
        config_sha256: config.sha256(),
        version: VERSION.to_string(),
        seed,
        rows,
        replicates,
    }
}

/// Runs every stage of one replicate that is not already complete.
pub fn run_replicate(run: &Run, variants: &[Variant], visualize: &[ModelId], jobs: usize) -> Result<()> {
    run.gen_corpus()?;
    run.pretrain_teacher()?;
    run.adapt_teacher()?;
    let cache = run.eval_cache()?;
    for id in [ModelId::Teacher { adapted: false }, ModelId::Teacher { adapted: true }] {
        run.assess(&id, visualize.contains(&id), &cache)?;
    }
    let next = AtomicUsize::new(0);
    let failure: Mutex<Option<CliError>> = Mutex::new(None);
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, variants.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= variants.len() || failure.lock().expect("lock").is_some() {
                    break;
                }
                let v = variants[i];
                let id = ModelId::Student(v);
                let result = run.distill(&v).and_then(|_| run.assess(&id, visualize.contains(&id), &cache));
                if let Err(e) = result {
                    failure.lock().expect("lock").get_or_insert(e);
                    break;
                }
            });
        }
    });
    match failure.into_inner().expect("lock") {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn collect_replicate(run: &Run, index: usize, variants: &[Variant], visualize: &[ModelId]) -> Result<ReplicateResult> {
    let teachers = [ModelId::Teacher { adapted: false }, ModelId::Teacher { adapted: true }];
    let mut reports = BTreeMap::new();
    for id in teachers.iter().copied().chain(variants.iter().map(|v| ModelId::Student(*v))) {
        reports.insert(id.id().to_string(), run.load_report(&id)?);
    }
    let mut visual = BTreeMap::new();
    for id in visualize {
        visual.insert(id.id().to_string(), run.load_visual(id)?);
    }
    let (t, ta) = run.load_teacher_metrics()?;
    let mut students = BTreeMap::new();
    for v in variants {
        let stage = run.student_stage(v);
        students.insert(v.id.to_string(), read_json(&stage.base.join("summary.json"))?);
    }
    Ok(ReplicateResult {
        index,
        seed: run.seeds.master,
        dir: replicate_dir(index),
        reports,
        visual,
        teacher_metrics: BTreeMap::from([("T1".to_string(), t), ("T1'".to_string(), ta)]),
        students,
    })
}

/// Runs (or resumes) the whole matrix under `root` and writes the summary
/// table there.
pub fn reproduce_matrix(root: &Path, config: &RunConfig, seed: u64, opts: MatrixOptions) -> Result<SummaryTable> {
    config.validate()?;
    let variants: Vec<Variant> = config
        .matrix
        .variants
        .iter()
        .map(|id| Variant::parse(id))
        .collect::<Result<_>>()?;
    let visualize: Vec<ModelId> = config
        .matrix
        .visualize
        .iter()
        .map(|id| ModelId::parse(id))
        .collect::<Result<_>>()?;
    let mut results = Vec::with_capacity(config.matrix.replicates);
    for r in 0..config.matrix.replicates {
        let mut run = Run::new(root.join(replicate_dir(r)), config.clone(), replicate_seed(seed, r));
        run.verbose = opts.verbose;
        run_replicate(&run, &variants, &visualize, opts.jobs)?;
        results.push(collect_replicate(&run, r, &variants, &visualize)?);
    }
    let models: Vec<ModelId> = [ModelId::Teacher { adapted: false }, ModelId::Teacher { adapted: true }]
        .into_iter()
        .chain(variants.iter().map(|v| ModelId::Student(*v)))
        .collect();
    let table = summarize(config, seed, results, &models);
    table.write(root)?;
    Ok(table)
}

/// Rows of a summary CSV as `(model, column -> value)`, skipping the
/// provenance comment.
pub fn read_summary_csv(path: &Path) -> Result<Vec<BTreeMap<String, String>>> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let header = r.headers()?.clone();
    r.records()
        .map(|rec| Ok(header.iter().zip(rec?.iter()).map(|(h, v)| (h.to_string(), v.to_string())).collect()))
        .collect()
}
