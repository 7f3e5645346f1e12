//! One run directory: every stage of a single seed, each resumable.
//!
//! ```text
//! <out>/corpus/            WAV files + manifest.json
//! <out>/teacher/           labeler.json, checkpoint.json, train_log.jsonl
//! <out>/teacher_adapted/   checkpoint.json, train_log.jsonl, metrics.json
//! <out>/eval_cache/        distorted evaluation audio shared by every model
//! <out>/students/<slug>/   checkpoint.json, train_log.jsonl, summary.json
//! <out>/probes/<slug>/     downstream probe.json
//! <out>/reports/<slug>.json          student evaluation reports
//! <out>/teacher_reports/<slug>.json  teacher evaluation reports
//! <out>/visual/<slug>/     embeddings.csv, tsne.csv, visual.json
//! ```

use std::path::{Path, PathBuf};
use std::time::Instant;

use distortkd::augmentor::Condition;
use distortkd::distill::{distill_run, DistillConfig, StudentModel};
use distortkd::eval::{
    evaluate_with_probe, required_sets, silhouette, train_downstream_probe, tsne, visual_embeddings,
    ConditionCache, EvalReport, FrozenModel, LinearProbe, RepMemo,
};
use distortkd::nn::Checkpoint;
use distortkd::rng::derive_seed;
use distortkd::synth_corpus::{Corpus, Split, Utterance};
use distortkd::teacher::{adapt_teacher, masked_accuracy, pretrain_teacher, PseudoLabeler, TeacherModel};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{hash_json, RunConfig};
use crate::error::{CliError, Result};
use crate::stage::{read_json, stamp_json_file, write_bytes, write_json, write_jsonl, Provenance, Stage, StageRecord};
use crate::variant::{ModelId, Variant};

/// Per-stage seeds fanned out from the run's master seed. Every student of
/// a run shares the distillation seed, so variants differ only in what they
/// are meant to differ in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub master: u64,
    pub corpus: u64,
    pub teacher: u64,
    pub distill: u64,
    pub eval: u64,
    pub probe: u64,
}

impl Seeds {
    pub fn from_master(master: u64) -> Self {
        Self {
            master,
            corpus: derive_seed(master, "corpus"),
            teacher: derive_seed(master, "teacher"),
            distill: derive_seed(master, "distill"),
            eval: derive_seed(master, "eval"),
            probe: derive_seed(master, "probe"),
        }
    }
}

/// Whether a stage did work or found a matching record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Done,
    Cached,
}

#[derive(Debug, Clone, Serialize)]
pub struct Outcome {
    pub stage: String,
    pub status: Status,
    pub dir: PathBuf,
    pub stage_key: String,
}

/// Masked-frame accuracy of both teachers on the dev split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherMetrics {
    pub clean: f64,
    pub distorted: f64,
}

/// Summary of a distillation stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentSummary {
    pub variant: String,
    pub best_step: usize,
    pub best_dev_loss: f64,
    pub first_train_loss: f64,
    pub last_train_loss: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeFile {
    pub model_id: String,
    pub train_accuracy: f64,
    pub probe: LinearProbe,
}

/// Scalar results of a visualization stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisualSummary {
    pub model_id: String,
    pub n_rows: usize,
    pub n_splits: usize,
    pub conditions: Vec<Condition>,
    /// Silhouette of the split-averaged embeddings, labelled by condition.
    pub silhouette_embeddings: f64,
    pub silhouette_tsne: f64,
    pub max_perplexity_error: f64,
    pub initial_kl: f64,
    pub final_kl: f64,
    pub jittered: bool,
}

pub enum LoadedModel {
    Teacher(TeacherModel),
    Student(StudentModel),
}

impl LoadedModel {
    pub fn frozen(&self) -> &dyn FrozenModel {
        match self {
            LoadedModel::Teacher(t) => t,
            LoadedModel::Student(s) => s,
        }
    }
}

pub struct Run {
    pub root: PathBuf,
    pub config: RunConfig,
    pub seeds: Seeds,
    pub config_sha256: String,
    /// Print per-stage progress on stderr.
    pub verbose: bool,
}

fn log_tail(records: &[f64], n: usize) -> (f64, f64) {
    if records.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = n.clamp(1, records.len());
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    (mean(&records[..n]), mean(&records[records.len() - n..]))
}

impl Run {
    pub fn new(root: impl Into<PathBuf>, config: RunConfig, master_seed: u64) -> Self {
        let config_sha256 = config.sha256();
        Self {
            root: root.into(),
            config,
            seeds: Seeds::from_master(master_seed),
            config_sha256,
            verbose: false,
        }
    }

    fn note(&self, msg: impl AsRef<str>) {
        if self.verbose {
            eprintln!("[{}] {}", self.root.display(), msg.as_ref());
        }
    }

    fn prov(&self, stage: &Stage) -> Provenance {
        stage.provenance(&self.config_sha256)
    }

    fn outcome(&self, stage: &Stage, status: Status) -> Outcome {
        Outcome {
            stage: stage.name.clone(),
            status,
            dir: stage.base.clone(),
            stage_key: stage.key.clone(),
        }
    }

    /// The effective distillation config of one variant.
    pub fn distill_config(&self, v: &Variant) -> DistillConfig {
        DistillConfig {
            setup: v.setup,
            dat_enabled: v.dat,
            ..self.config.distill.clone()
        }
    }

    // ---- stage descriptors -------------------------------------------------

    pub fn corpus_stage(&self) -> Stage {
        let key = hash_json(&json!({
            "stage": "corpus",
            "config": self.config.corpus,
            "seed": self.seeds.corpus,
        }));
        Stage::in_dir("corpus", self.root.join("corpus"), key, "gen-corpus")
    }

    pub fn teacher_stage(&self) -> Stage {
        let t = &self.config.teacher;
        let key = hash_json(&json!({
            "stage": "teacher",
            "corpus": self.corpus_stage().key,
            "model": t.model,
            "labeler": t.labeler,
            "pretrain": t.pretrain,
            "seed": self.seeds.teacher,
        }));
        Stage::in_dir("teacher", self.root.join("teacher"), key, "pretrain-teacher")
    }

    pub fn adapted_stage(&self) -> Stage {
        let key = hash_json(&json!({
            "stage": "teacher_adapted",
            "teacher": self.teacher_stage().key,
            "policy": self.config.policy,
            "adapt": self.config.teacher.adapt,
            "seed": self.seeds.teacher,
        }));
        Stage::in_dir("teacher_adapted", self.root.join("teacher_adapted"), key, "adapt-teacher")
    }

    pub fn cache_stage(&self) -> Stage {
        let key = hash_json(&json!({
            "stage": "eval_cache",
            "corpus": self.corpus_stage().key,
            "policy": self.config.policy,
            "sets": required_sets(),
            "seed": self.seeds.eval,
        }));
        // Built on demand by whichever stage first needs it.
        Stage::in_dir("eval_cache", self.root.join("eval_cache"), key, "probe --model <id>")
    }

    pub fn student_stage(&self, v: &Variant) -> Stage {
        let teacher = if v.adapted_teacher {
            self.adapted_stage()
        } else {
            self.teacher_stage()
        };
        let key = hash_json(&json!({
            "stage": "student",
            "variant": v.id,
            "teacher": teacher.key,
            "policy": self.config.policy,
            "distill": self.distill_config(v),
            "seed": self.seeds.distill,
        }));
        let slug = ModelId::Student(*v).slug();
        Stage::in_dir(
            format!("students/{slug}"),
            self.root.join("students").join(&slug),
            key,
            format!("distill --variant \"{}\"", v.id),
        )
    }

    pub fn model_stage(&self, id: &ModelId) -> Stage {
        match id {
            ModelId::Teacher { adapted: false } => self.teacher_stage(),
            ModelId::Teacher { adapted: true } => self.adapted_stage(),
            ModelId::Student(v) => self.student_stage(v),
        }
    }

    pub fn probe_stage(&self, id: &ModelId) -> Stage {
        let key = hash_json(&json!({
            "stage": "probe",
            "model": self.model_stage(id).key,
            "cache": self.cache_stage().key,
            "probe": self.config.eval.eval.probe,
            "n_classes": self.config.eval.eval.n_classes,
            "seed": self.seeds.probe,
        }));
        let slug = id.slug();
        Stage::in_dir(
            format!("probes/{slug}"),
            self.root.join("probes").join(&slug),
            key,
            format!("probe --model \"{id}\""),
        )
    }

    pub fn report_path(&self, id: &ModelId) -> PathBuf {
        self.report_dir(id).join(format!("{}.json", id.slug()))
    }

    fn report_dir(&self, id: &ModelId) -> PathBuf {
        self.root.join(if id.is_teacher() { "teacher_reports" } else { "reports" })
    }

    pub fn report_stage(&self, id: &ModelId) -> Stage {
        let key = hash_json(&json!({
            "stage": "eval",
            "probe": self.probe_stage(id).key,
            "eval": self.config.eval.eval,
        }));
        let slug = id.slug();
        let dir = self.report_dir(id);
        let record = dir.join("stages").join(format!("{slug}.json"));
        Stage::new(format!("eval/{slug}"), dir, record, key, format!("eval --model \"{id}\""))
    }

    pub fn visual_stage(&self, id: &ModelId) -> Stage {
        let key = hash_json(&json!({
            "stage": "visual",
            "model": self.model_stage(id).key,
            "cache": self.cache_stage().key,
            "tsne": self.config.eval.tsne,
            "n_splits": self.config.eval.eval.n_splits,
            "seed": self.seeds.eval,
        }));
        let slug = id.slug();
        Stage::in_dir(
            format!("visual/{slug}"),
            self.root.join("visual").join(&slug),
            key,
            format!("visualize --model \"{id}\""),
        )
    }

    // ---- loaders -------------------------------------------------------------

    pub fn load_corpus(&self) -> Result<Corpus> {
        let stage = self.corpus_stage();
        stage.require()?;
        Ok(Corpus::load(&stage.base)?)
    }

    fn load_labeler(&self) -> Result<PseudoLabeler> {
        let stage = self.teacher_stage();
        stage.require()?;
        read_json(&stage.base.join("labeler.json"))
    }

    pub fn load_teacher(&self, adapted: bool) -> Result<TeacherModel> {
        let stage = if adapted { self.adapted_stage() } else { self.teacher_stage() };
        stage.require()?;
        let ck = Checkpoint::load(&stage.base.join("checkpoint.json"))?;
        Ok(TeacherModel::from_checkpoint(&ck)?)
    }

    pub fn load_model(&self, id: &ModelId) -> Result<LoadedModel> {
        match id {
            ModelId::Teacher { adapted } => Ok(LoadedModel::Teacher(self.load_teacher(*adapted)?)),
            ModelId::Student(v) => {
                let stage = self.student_stage(v);
                stage.require()?;
                let ck = Checkpoint::load(&stage.base.join("checkpoint.json"))?;
                Ok(LoadedModel::Student(StudentModel::from_checkpoint(&ck)?))
            }
        }
    }

    pub fn load_probe(&self, id: &ModelId) -> Result<ProbeFile> {
        let stage = self.probe_stage(id);
        stage.require()?;
        read_json(&stage.base.join("probe.json"))
    }

    pub fn load_report(&self, id: &ModelId) -> Result<EvalReport> {
        self.report_stage(id).require()?;
        read_json(&self.report_path(id))
    }

    pub fn load_visual(&self, id: &ModelId) -> Result<VisualSummary> {
        let stage = self.visual_stage(id);
        stage.require()?;
        read_json(&stage.base.join("visual.json"))
    }

    pub fn load_teacher_metrics(&self) -> Result<(TeacherMetrics, TeacherMetrics)> {
        #[derive(Deserialize)]
        struct Both {
            teacher: TeacherMetrics,
            adapted: TeacherMetrics,
        }
        let stage = self.adapted_stage();
        stage.require()?;
        let b: Both = read_json(&stage.base.join("metrics.json"))?;
        Ok((b.teacher, b.adapted))
    }

    // ---- stages ----------------------------------------------------------------

    pub fn gen_corpus(&self) -> Result<Outcome> {
        let stage = self.corpus_stage();
        if stage.existing()?.is_some() {
            return Ok(self.outcome(&stage, Status::Cached));
        }
        let start = Instant::now();
        let corpus = Corpus::generate(&self.config.corpus, self.seeds.corpus)?;
        corpus.write(&stage.base)?;
        stamp_json_file(&stage.base.join("manifest.json"), &self.prov(&stage))?;
        stage.finish(
            &self.config_sha256,
            self.seeds.corpus,
            &[],
            &["manifest.json"],
            start.elapsed().as_secs_f64(),
        )?;
        self.note(format!("corpus generated ({} utterances)", corpus.utterances.len()));
        Ok(self.outcome(&stage, Status::Done))
    }

    pub fn pretrain_teacher(&self) -> Result<Outcome> {
        let stage = self.teacher_stage();
        if stage.existing()?.is_some() {
            return Ok(self.outcome(&stage, Status::Cached));
        }
        let corpus = self.load_corpus()?;
        let start = Instant::now();
        let t = &self.config.teacher;
        let train: Vec<&Utterance> = corpus.split(Split::Train).collect();
        let labeler = PseudoLabeler::fit(&train, &t.labeler, &t.model.encoder, self.seeds.teacher)?;
        let (teacher, log) = pretrain_teacher(&corpus, &labeler, &t.model, &t.pretrain, self.seeds.teacher)?;
        let prov = self.prov(&stage);
        write_json(&stage.base.join("labeler.json"), &labeler, &prov, false)?;
        let ck = teacher.to_checkpoint(&self.config_sha256, self.seeds.teacher);
        write_json(&stage.base.join("checkpoint.json"), &ck, &prov, false)?;
        let body: String = log
            .records
            .iter()
            .map(|r| serde_json::to_string(r).map(|s| s + "\n"))
            .collect::<std::result::Result<_, _>>()?;
        write_jsonl(&stage.base.join("train_log.jsonl"), &body, &prov)?;
        stage.finish(
            &self.config_sha256,
            self.seeds.teacher,
            &[&self.corpus_stage()],
            &["labeler.json", "checkpoint.json", "train_log.jsonl"],
            start.elapsed().as_secs_f64(),
        )?;
        self.note(format!("teacher pre-trained in {:.1} s", start.elapsed().as_secs_f64()));
        Ok(self.outcome(&stage, Status::Done))
    }

    pub fn adapt_teacher(&self) -> Result<Outcome> {
        let stage = self.adapted_stage();
        if stage.existing()?.is_some() {
            return Ok(self.outcome(&stage, Status::Cached));
        }
        let corpus = self.load_corpus()?;
        let labeler = self.load_labeler()?;
        let teacher = self.load_teacher(false)?;
        let start = Instant::now();
        let t = &self.config.teacher;
        let policy = &self.config.policy;
        let (adapted, log) = adapt_teacher(&teacher, &corpus, &labeler, policy, &t.adapt, self.seeds.teacher)?;
        let prov = self.prov(&stage);
        let ck = adapted.to_checkpoint(&self.config_sha256, self.seeds.teacher);
        write_json(&stage.base.join("checkpoint.json"), &ck, &prov, false)?;
        let body: String = log
            .records
            .iter()
            .map(|r| serde_json::to_string(r).map(|s| s + "\n"))
            .collect::<std::result::Result<_, _>>()?;
        write_jsonl(&stage.base.join("train_log.jsonl"), &body, &prov)?;

        // Both teachers scored on identical masks and distortions.
        let dev: Vec<&Utterance> = corpus.split(Split::Dev).collect();
        let banks = corpus.banks.training();
        let seed = derive_seed(self.seeds.eval, "teacher-masked-eval");
        let score = |m: &TeacherModel| -> Result<TeacherMetrics> {
            Ok(TeacherMetrics {
                clean: masked_accuracy(m, &labeler, &dev, None, &t.pretrain, seed)?,
                distorted: masked_accuracy(m, &labeler, &dev, Some((policy, &banks)), &t.pretrain, seed)?,
            })
        };
        let metrics = json!({ "teacher": score(&teacher)?, "adapted": score(&adapted)? });
        write_json(&stage.base.join("metrics.json"), &metrics, &prov, true)?;
        stage.finish(
            &self.config_sha256,
            self.seeds.teacher,
            &[&self.teacher_stage()],
            &["checkpoint.json", "train_log.jsonl", "metrics.json"],
            start.elapsed().as_secs_f64(),
        )?;
        self.note(format!("teacher adapted in {:.1} s", start.elapsed().as_secs_f64()));
        Ok(self.outcome(&stage, Status::Done))
    }

    /// Loads the shared evaluation audio, building it on first use.
    pub fn eval_cache(&self) -> Result<ConditionCache> {
        let stage = self.cache_stage();
        if stage.existing()?.is_some() {
            return Ok(ConditionCache::load(&stage.base)?);
        }
        let corpus = self.load_corpus()?;
        let start = Instant::now();
        let cache = ConditionCache::build(&corpus, &self.config.policy, &required_sets(), self.seeds.eval)?;
        cache.write(&stage.base)?;
        stamp_json_file(&stage.base.join("manifest.json"), &self.prov(&stage))?;
        stage.finish(
            &self.config_sha256,
            self.seeds.eval,
            &[&self.corpus_stage()],
            &["manifest.json"],
            start.elapsed().as_secs_f64(),
        )?;
        self.note(format!("evaluation audio rendered in {:.1} s", start.elapsed().as_secs_f64()));
        Ok(cache)
    }

    pub fn distill(&self, v: &Variant) -> Result<Outcome> {
        let stage = self.student_stage(v);
        if stage.existing()?.is_some() {
            return Ok(self.outcome(&stage, Status::Cached));
        }
        let corpus = self.load_corpus()?;
        let teacher = self.load_teacher(v.adapted_teacher)?;
        let cfg = self.distill_config(v);
        let prov = self.prov(&stage);
        let out = match distill_run(&cfg, &teacher, &corpus, &self.config.policy, self.seeds.distill) {
            Ok(out) => out,
            Err(distortkd::Error::Diverged {
                step,
                detail,
                last_good,
            }) => {
                write_json(&stage.base.join("last_good.json"), &*last_good, &prov, false)?;
                return Err(distortkd::Error::Diverged { step, detail, last_good }.into());
            }
            Err(e) => return Err(e.into()),
        };
        let ck = out.student.to_checkpoint(&self.config_sha256, self.seeds.distill);
        write_json(&stage.base.join("checkpoint.json"), &ck, &prov, false)?;
        write_jsonl(&stage.base.join("train_log.jsonl"), &out.log.to_jsonl(), &prov)?;
        let train: Vec<f64> = out.log.train().map(|(_, l)| l).collect();
        let (first, last) = log_tail(&train, 20);
        let summary = StudentSummary {
            variant: v.id.to_string(),
            best_step: out.best_step,
            best_dev_loss: out.best_dev_loss,
            first_train_loss: first,
            last_train_loss: last,
            seconds: out.seconds,
        };
        write_json(&stage.base.join("summary.json"), &summary, &prov, true)?;
        let mut outputs = vec!["checkpoint.json", "train_log.jsonl", "summary.json"];
        if let Some(c) = &out.classifier {
            let ck = c.to_checkpoint(&self.config_sha256, self.seeds.distill);
            write_json(&stage.base.join("classifier.json"), &ck, &prov, false)?;
            outputs.push("classifier.json");
        }
        let upstream = if v.adapted_teacher {
            self.adapted_stage()
        } else {
            self.teacher_stage()
        };
        stage.finish(
            &self.config_sha256,
            self.seeds.distill,
            &[&self.corpus_stage(), &upstream],
            &outputs,
            out.seconds,
        )?;
        self.note(format!(
            "{} distilled in {:.1} s (best dev loss {:.3} at step {})",
            v.id, out.seconds, out.best_dev_loss, out.best_step
        ));
        Ok(self.outcome(&stage, Status::Done))
    }

    /// Trains the downstream probe for `id` (clean training audio).
    pub fn probe(&self, id: &ModelId) -> Result<Outcome> {
        let stage = self.probe_stage(id);
        if stage.existing()?.is_some() {
            return Ok(self.outcome(&stage, Status::Cached));
        }
        let model = self.load_model(id)?;
        let cache = self.eval_cache()?;
        let mut memo = RepMemo::new(model.frozen(), &cache);
        self.probe_with(id, &stage, &mut memo)?;
        Ok(self.outcome(&stage, Status::Done))
    }

    fn probe_with(&self, id: &ModelId, stage: &Stage, memo: &mut RepMemo<'_, dyn FrozenModel + '_>) -> Result<StageRecord> {
        let start = Instant::now();
        let (probe, train_accuracy) = train_downstream_probe(memo, &self.config.eval.eval, self.seeds.probe)?;
        let file = ProbeFile {
            model_id: id.id().to_string(),
            train_accuracy,
            probe,
        };
        write_json(&stage.base.join("probe.json"), &file, &self.prov(stage), true)?;
        stage.finish(
            &self.config_sha256,
            self.seeds.probe,
            &[&self.model_stage(id), &self.cache_stage()],
            &["probe.json"],
            start.elapsed().as_secs_f64(),
        )
    }

    /// Scores `id` on every evaluation condition. The downstream probe must
    /// already exist.
    pub fn eval(&self, id: &ModelId) -> Result<Outcome> {
        let stage = self.report_stage(id);
        if stage.existing()?.is_some() {
            return Ok(self.outcome(&stage, Status::Cached));
        }
        let probe = self.load_probe(id)?;
        let model = self.load_model(id)?;
        let cache = self.eval_cache()?;
        let mut memo = RepMemo::new(model.frozen(), &cache);
        self.eval_with(id, &stage, &probe, &mut memo)?;
        Ok(self.outcome(&stage, Status::Done))
    }

    fn eval_with(
        &self,
        id: &ModelId,
        stage: &Stage,
        probe: &ProbeFile,
        memo: &mut RepMemo<'_, dyn FrozenModel + '_>,
    ) -> Result<StageRecord> {
        let start = Instant::now();
        let report = evaluate_with_probe(
            memo,
            &probe.probe,
            probe.train_accuracy,
            id.id(),
            self.seeds.probe,
            &self.config.eval.eval,
        )?;
        let path = self.report_path(id);
        write_json(&path, &report, &self.prov(stage), true)?;
        let rel = path.file_name().expect("report has a file name").to_string_lossy().into_owned();
        let rec = stage.finish(
            &self.config_sha256,
            self.seeds.probe,
            &[&self.probe_stage(id), &self.cache_stage()],
            &[&rel],
            start.elapsed().as_secs_f64(),
        )?;
        self.note(format!(
            "{id}: clean {:.3}, distorted mean {:.3}, invariance {:.3}",
            report.accuracy_on(Condition::Clean).unwrap_or(f64::NAN),
            report.distorted_mean(),
            report.invariance
        ));
        Ok(rec)
    }

    pub fn visualize(&self, id: &ModelId) -> Result<Outcome> {
        let stage = self.visual_stage(id);
        if stage.existing()?.is_some() {
            return Ok(self.outcome(&stage, Status::Cached));
        }
        let model = self.load_model(id)?;
        let cache = self.eval_cache()?;
        let mut memo = RepMemo::new(model.frozen(), &cache);
        self.visualize_with(id, &stage, &mut memo)?;
        Ok(self.outcome(&stage, Status::Done))
    }

    fn visualize_with(&self, id: &ModelId, stage: &Stage, memo: &mut RepMemo<'_, dyn FrozenModel + '_>) -> Result<StageRecord> {
        let start = Instant::now();
        let emb = visual_embeddings(memo, self.config.eval.eval.n_splits)?;
        let labels = emb.condition_ids();
        let result = tsne(&emb.rows, &self.config.eval.tsne, derive_seed(self.seeds.eval, "tsne"))?;
        let projected: Vec<Vec<f64>> = result.embedding.iter().map(|p| p.to_vec()).collect();
        let prov = self.prov(stage);
        write_csv(&stage.base.join("embeddings.csv"), &emb.split, &emb.condition, &emb.rows, "d", &prov)?;
        write_csv(&stage.base.join("tsne.csv"), &emb.split, &emb.condition, &projected, "tsne", &prov)?;
        let target = self.config.eval.tsne.perplexity;
        let summary = VisualSummary {
            model_id: id.id().to_string(),
            n_rows: emb.len(),
            n_splits: emb.n_splits,
            conditions: Condition::VISUAL.to_vec(),
            silhouette_embeddings: silhouette(&emb.rows, &labels)?,
            silhouette_tsne: silhouette(&projected, &labels)?,
            max_perplexity_error: result
                .row_perplexity
                .iter()
                .map(|p| (p - target).abs())
                .fold(0.0, f64::max),
            initial_kl: result.initial_kl,
            final_kl: result.final_kl,
            jittered: result.jittered,
        };
        write_json(&stage.base.join("visual.json"), &summary, &prov, true)?;
        let rec = stage.finish(
            &self.config_sha256,
            self.seeds.eval,
            &[&self.model_stage(id), &self.cache_stage()],
            &["embeddings.csv", "tsne.csv", "visual.json"],
            start.elapsed().as_secs_f64(),
        )?;
        self.note(format!(
            "{id}: visualized, silhouette {:.3} (embeddings) {:.3} (t-SNE)",
            summary.silhouette_embeddings, summary.silhouette_tsne
        ));
        Ok(rec)
    }

    /// Probe, evaluation and (optionally) visualization of one model,
    /// extracting each representation set once. Stages already complete
    /// are skipped.
    pub fn assess(&self, id: &ModelId, visualize: bool, cache: &ConditionCache) -> Result<()> {
        let probe_stage = self.probe_stage(id);
        let report_stage = self.report_stage(id);
        let visual_stage = self.visual_stage(id);
        let need_probe = probe_stage.existing()?.is_none();
        let need_report = report_stage.existing()?.is_none();
        let need_visual = visualize && visual_stage.existing()?.is_none();
        if !(need_probe || need_report || need_visual) {
            return Ok(());
        }
        let model = self.load_model(id)?;
        let mut memo = RepMemo::new(model.frozen(), cache);
        if need_probe {
            self.probe_with(id, &probe_stage, &mut memo)?;
        }
        if need_report {
            let probe = self.load_probe(id)?;
            self.eval_with(id, &report_stage, &probe, &mut memo)?;
        }
        if need_visual {
            self.visualize_with(id, &visual_stage, &mut memo)?;
        }
        Ok(())
    }
}

/// `split,condition,<prefix>0,...` with a provenance comment line.
pub fn write_csv(
    path: &Path,
    split: &[usize],
    condition: &[Condition],
    rows: &[Vec<f64>],
    prefix: &str,
    prov: &Provenance,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(prov.csv_comment().into_bytes());
    let dim = rows.first().map_or(0, Vec::len);
    let mut header = vec!["split".to_string(), "condition".to_string()];
    header.extend((0..dim).map(|j| format!("{prefix}{j}")));
    w.write_record(&header)?;
    for ((s, c), r) in split.iter().zip(condition).zip(rows) {
        let mut rec = vec![s.to_string(), c.as_str().to_string()];
        rec.extend(r.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Config(format!("csv buffer: {e}")))?;
    write_bytes(path, &bytes)
}

/// Reads a CSV written by [`write_csv`]: metadata columns and the numeric
/// block.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let mut meta = Vec::new();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        meta.push(format!("{},{}", &rec[0], &rec[1]));
        let vals = rec
            .iter()
            .skip(2)
            .map(|s| s.parse::<f64>().map_err(|e| CliError::Config(format!("{}: {e}", path.display()))))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(vals);
    }
    Ok((meta, rows))
}
