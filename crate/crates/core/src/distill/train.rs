use std::time::Instant;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::classifier::DistortionClassifier;
use super::loss::{distil_loss, distil_loss_value, sum_all};
use super::student::{init_student_from_teacher, StudentConfig, StudentModel};
use crate::augmentor::{make_cdm_pair, AugmentPolicy, DistortionLabel, Setup};
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig, Graph, Tensor, Var};
use crate::rng::{substream, Rng};
use crate::synth_corpus::{Corpus, Split, Utterance};
use crate::teacher::{Mode, TeacherModel};
use crate::wave::Waveform;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistillConfig {
    pub gamma: f64,
    pub setup: Setup,
    pub dat_enabled: bool,
    pub lambda: f64,
    pub lr_student: f64,
    pub lr_classifier: f64,
    pub warmup_steps: usize,
    pub clip_norm: f64,
    pub steps: usize,
    pub batch_size: usize,
    /// Dev loss is evaluated every this many steps and after the last one.
    pub eval_every: usize,
    pub student: StudentConfig,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            setup: Setup::None,
            dat_enabled: false,
            lambda: 1e-2,
            lr_student: 5e-4,
            lr_classifier: 1e-3,
            warmup_steps: 50,
            clip_norm: 10.0,
            steps: 2000,
            batch_size: 4,
            eval_every: 100,
            student: StudentConfig::default(),
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !(self.gamma >= 0.0) {
            return Err(Error::Config("lambda and gamma must be non-negative".into()));
        }
        if self.steps == 0 || self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::Config("steps, batch_size and eval_every must be positive".into()));
        }
        if !(self.lr_student > 0.0) || !(self.lr_classifier > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        Ok(())
    }

    fn lr_at(&self, base: f64, step: usize) -> f64 {
        if step < self.warmup_steps {
            base * (step + 1) as f64 / self.warmup_steps as f64
        } else {
            base
        }
    }
}

/// One training example: the student's input, the teacher's hidden states
/// at the target layers, and the student-input distortion label.
#[derive(Debug, Clone)]
pub struct PreparedPair {
    pub student_wave: Waveform,
    pub targets: Vec<Tensor>,
    pub label: Option<DistortionLabel>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub l_distil: f64,
    pub l1: f64,
    pub cos: f64,
    /// Classifier loss before its update (DAT only).
    pub l_d: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    Train {
        step: usize,
        l_distil: f64,
        l1: f64,
        cos: f64,
        l_d: Option<f64>,
    },
    Dev {
        step: usize,
        dev_loss: f64,
    },
}

/// Append-only, step-ordered training history.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
}

impl TrainLog {
    pub fn train(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.records.iter().filter_map(|r| match r {
            LogRecord::Train { step, l_distil, .. } => Some((*step, *l_distil)),
            _ => None,
        })
    }

    pub fn dev(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.records.iter().filter_map(|r| match r {
            LogRecord::Dev { step, dev_loss } => Some((*step, *dev_loss)),
            _ => None,
        })
    }

    /// Mean train loss over the first and last `n` steps.
    pub fn head_tail_loss(&self, n: usize) -> Option<(f64, f64)> {
        let v: Vec<f64> = self.train().map(|(_, l)| l).collect();
        if v.is_empty() {
            return None;
        }
        let n = n.clamp(1, v.len());
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        Some((mean(&v[..n]), mean(&v[v.len() - n..])))
    }

    pub fn to_jsonl(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("log record serializes") + "\n")
            .collect()
    }
}

/// Teacher hidden states at the (1-based) target layers.
pub fn teacher_targets(teacher: &TeacherModel, wave: &Waveform, layers: &[usize]) -> Result<Vec<Tensor>> {
    let mut hidden: Vec<Option<Tensor>> = teacher.hidden(wave)?.into_iter().map(Some).collect();
    layers
        .iter()
        .map(|&l| {
            l.checked_sub(1)
                .and_then(|i| hidden.get_mut(i))
                .and_then(Option::take)
                .ok_or_else(|| Error::Config(format!("teacher layer {l} missing or requested twice")))
        })
        .collect()
}

struct Forwarded {
    g: Graph,
    distil: Var,
    l1: Var,
    cos: Var,
    zs: Vec<Var>,
    student_vars: crate::nn::Binding,
}

fn forward_batch(student: &StudentModel, batch: &[PreparedPair], gamma: f64, rng: &mut Rng) -> Result<Forwarded> {
    let mut g = Graph::new();
    let p = student.params.bind(&mut g, true);
    let (mut totals, mut l1s, mut coss, mut zs) = (vec![], vec![], vec![], vec![]);
    for pair in batch {
        let out = student.forward(&mut g, &p, &pair.student_wave, &mut Mode::Train(rng))?;
        let targets: Vec<Var> = pair.targets.iter().map(|t| g.constant(t.clone())).collect();
        let terms = distil_loss(&mut g, &targets, &out.preds, gamma)?;
        totals.push(terms.total);
        l1s.push(terms.l1);
        coss.push(terms.cos);
        zs.push(out.z);
    }
    let inv = 1.0 / batch.len() as f64;
    let s = sum_all(&mut g, &totals)?;
    let distil = g.scale(s, inv);
    let s = sum_all(&mut g, &l1s)?;
    let l1 = g.scale(s, inv);
    let s = sum_all(&mut g, &coss)?;
    let cos = g.scale(s, inv);
    Ok(Forwarded {
        g,
        distil,
        l1,
        cos,
        zs,
        student_vars: p,
    })
}

fn labels_of(batch: &[PreparedPair]) -> Result<Vec<DistortionLabel>> {
    batch
        .iter()
        .map(|p| {
            p.label
                .ok_or_else(|| Error::Config("adversarial training needs a distortion label on every pair".into()))
        })
        .collect()
}

/// Classifier phase: one Adam step on the classifier loss with the student
/// representations treated as constants. Returns the pre-update loss.
pub fn classifier_phase(
    classifier: &mut DistortionClassifier,
    opt: &mut Adam,
    zs: &[Tensor],
    labels: &[DistortionLabel],
) -> Result<f64> {
    let mut g = Graph::new();
    let p = classifier.params.bind(&mut g, true);
    let z: Vec<Var> = zs.iter().map(|t| g.constant(t.clone())).collect();
    let loss = classifier.loss(&mut g, &p, &z, labels)?;
    g.backward(loss)?;
    opt.step(&mut classifier.params, &p.grads(&g))?;
    Ok(g.value(loss).item())
}

/// Gradient of `L_distil - λ·L_D` with respect to the student parameters,
/// classifier frozen. Used by the student phase and by diagnostics.
pub fn student_gradients(
    student: &StudentModel,
    classifier: Option<&DistortionClassifier>,
    batch: &[PreparedPair],
    gamma: f64,
    lambda: f64,
    rng: &mut Rng,
) -> Result<(Vec<Vec<f64>>, StepLosses)> {
    let mut f = forward_batch(student, batch, gamma, rng)?;
    let mut root = f.distil;
    if let (Some(clf), true) = (classifier, lambda != 0.0) {
        let labels = labels_of(batch)?;
        let cp = clf.params.bind(&mut f.g, false);
        let ld = clf.loss(&mut f.g, &cp, &f.zs, &labels)?;
        let scaled = f.g.scale(ld, lambda);
        root = f.g.sub(f.distil, scaled)?;
    }
    f.g.backward(root)?;
    let losses = StepLosses {
        l_distil: f.g.value(f.distil).item(),
        l1: f.g.value(f.l1).item(),
        cos: f.g.value(f.cos).item(),
        l_d: None,
    };
    Ok((f.student_vars.grads(&f.g), losses))
}

/// Optimizer state for one distillation run.
pub struct Optimizers {
    pub student: Adam,
    pub classifier: Option<Adam>,
}

/// One training step. With a classifier this is the alternating update:
/// the classifier first descends `L_D` on detached student states, then the
/// student descends `L_distil - λ·L_D` against the updated, frozen
/// classifier.
pub fn dat_step(
    batch: &[PreparedPair],
    student: &mut StudentModel,
    classifier: Option<&mut DistortionClassifier>,
    opts: &mut Optimizers,
    gamma: f64,
    lambda: f64,
    rng: &mut Rng,
) -> Result<StepLosses> {
    let mut f = forward_batch(student, batch, gamma, rng)?;
    let mut l_d = None;
    let mut root = f.distil;
    if let Some(clf) = classifier {
        let labels = labels_of(batch)?;
        let opt = opts
            .classifier
            .as_mut()
            .ok_or_else(|| Error::Config("classifier optimizer missing".into()))?;
        let zs: Vec<Tensor> = f.zs.iter().map(|&z| f.g.value(z).clone()).collect();
        l_d = Some(classifier_phase(clf, opt, &zs, &labels)?);
        if lambda != 0.0 {
            let cp = clf.params.bind(&mut f.g, false);
            let ld = clf.loss(&mut f.g, &cp, &f.zs, &labels)?;
            let scaled = f.g.scale(ld, lambda);
            root = f.g.sub(f.distil, scaled)?;
        }
    }
    let losses = StepLosses {
        l_distil: f.g.value(f.distil).item(),
        l1: f.g.value(f.l1).item(),
        cos: f.g.value(f.cos).item(),
        l_d,
    };
    if !losses.l_distil.is_finite() {
        return Err(Error::NonFinite {
            step: opts.student.steps_taken() + 1,
            param: "distillation loss".into(),
        });
    }
    f.g.backward(root)?;
    opts.student.step(&mut student.params, &f.student_vars.grads(&f.g))?;
    Ok(losses)
}

/// Mean per-utterance distillation loss of `student` against cached targets.
pub fn dev_loss(student: &StudentModel, dev: &[(Waveform, Vec<Tensor>)], gamma: f64) -> Result<f64> {
    let mut total = 0.0;
    for (wave, targets) in dev {
        let preds = student.predict(wave)?;
        total += distil_loss_value(targets, &preds, gamma)?.0;
    }
    Ok(total / dev.len().max(1) as f64)
}

#[derive(Debug, Clone)]
pub struct DistillOutcome {
    /// Checkpoint with the lowest dev loss.
    pub student: StudentModel,
    pub classifier: Option<DistortionClassifier>,
    pub log: TrainLog,
    pub best_step: usize,
    pub best_dev_loss: f64,
    pub seconds: f64,
}

/// Builds training pairs for one step: each pair is drawn from the train
/// split, distorted per `setup`, and labelled with the student-side
/// distortion.
pub struct PairSource<'a> {
    teacher: &'a TeacherModel,
    corpus: &'a Corpus,
    policy: &'a AugmentPolicy,
    train: Vec<&'a Utterance>,
    layers: Vec<usize>,
    /// Clean-input targets per train utterance, filled on demand.
    clean_cache: Vec<Option<Vec<Tensor>>>,
}

impl<'a> PairSource<'a> {
    pub fn new(teacher: &'a TeacherModel, corpus: &'a Corpus, policy: &'a AugmentPolicy, layers: &[usize]) -> Result<Self> {
        let train: Vec<&Utterance> = corpus.split(Split::Train).collect();
        if train.is_empty() {
            return Err(Error::Config("training split is empty".into()));
        }
        Ok(Self {
            teacher,
            corpus,
            policy,
            clean_cache: vec![None; train.len()],
            train,
            layers: layers.to_vec(),
        })
    }

    pub fn batch(&mut self, setup: Setup, size: usize, rng: &mut Rng) -> Result<Vec<PreparedPair>> {
        let banks = self.corpus.banks.training();
        (0..size)
            .map(|_| {
                let i = rng.random_range(0..self.train.len());
                let pair = make_cdm_pair(&self.train[i].wave, setup, &banks, self.policy, rng)?;
                let targets = if pair.teacher_spec.is_clean() {
                    if self.clean_cache[i].is_none() {
                        self.clean_cache[i] = Some(teacher_targets(self.teacher, &self.train[i].wave, &self.layers)?);
                    }
                    self.clean_cache[i].clone().expect("filled above")
                } else {
                    teacher_targets(self.teacher, &pair.teacher_wave, &self.layers)?
                };
                Ok(PreparedPair {
                    student_wave: pair.student_wave,
                    targets,
                    label: Some(pair.student_label),
                })
            })
            .collect()
    }
}

/// Clean/clean dev pairs with their teacher targets.
pub fn dev_pairs(teacher: &TeacherModel, corpus: &Corpus, layers: &[usize]) -> Result<Vec<(Waveform, Vec<Tensor>)>> {
    corpus
        .split(Split::Dev)
        .map(|u| Ok((u.wave.clone(), teacher_targets(teacher, &u.wave, layers)?)))
        .collect()
}

/// Full distillation run with dev-loss checkpoint selection. The teacher is
/// only read.
pub fn distill_run(
    config: &DistillConfig,
    teacher: &TeacherModel,
    corpus: &Corpus,
    policy: &AugmentPolicy,
    seed: u64,
) -> Result<DistillOutcome> {
    config.validate()?;
    let start = Instant::now();
    let layers = config.student.target_layers.clone();
    let mut student = init_student_from_teacher(teacher, &config.student, seed)?;
    let mut classifier = if config.dat_enabled {
        Some(DistortionClassifier::new(config.student.encoder.dim, seed)?)
    } else {
        None
    };
    let clip = Some(config.clip_norm);
    let mut opts = Optimizers {
        student: Adam::new(
            AdamConfig {
                clip_norm: clip,
                ..AdamConfig::with_lr(config.lr_student)
            },
            &student.params,
        ),
        classifier: classifier
            .as_ref()
            .map(|c| Adam::new(AdamConfig::with_lr(config.lr_classifier), &c.params)),
    };
    let dev = dev_pairs(teacher, corpus, &layers)?;
    let mut source = PairSource::new(teacher, corpus, policy, &layers)?;
    let mut log = TrainLog::default();
    let mut best: Option<(f64, usize, StudentModel, Option<DistortionClassifier>)> = None;

    for step in 0..config.steps {
        let mut rng = substream(seed, "distill-batch", step as u64);
        let batch = source.batch(config.setup, config.batch_size, &mut rng)?;
        opts.student.set_lr(config.lr_at(config.lr_student, step));
        let result = dat_step(
            &batch,
            &mut student,
            classifier.as_mut(),
            &mut opts,
            config.gamma,
            config.lambda,
            &mut rng,
        );
        let losses = match result {
            Ok(l) => l,
            Err(e @ Error::NonFinite { .. }) => {
                let last_good = best.as_ref().map_or(&student, |b| &b.2);
                return Err(Error::Diverged {
                    step: step as u64,
                    detail: e.to_string(),
                    last_good: Box::new(last_good.to_checkpoint("", seed)),
                });
            }
            Err(e) => return Err(e),
        };
        log.records.push(LogRecord::Train {
            step,
            l_distil: losses.l_distil,
            l1: losses.l1,
            cos: losses.cos,
            l_d: losses.l_d,
        });
        let done = step + 1;
        if done % config.eval_every == 0 || done == config.steps {
            let d = dev_loss(&student, &dev, config.gamma)?;
            log.records.push(LogRecord::Dev { step: done, dev_loss: d });
            if d.is_finite() && best.as_ref().is_none_or(|b| d < b.0) {
                best = Some((d, done, student.clone(), classifier.clone()));
            }
        }
    }
    let (best_dev_loss, best_step, student, classifier) = best.ok_or_else(|| Error::Diverged {
        step: config.steps as u64,
        detail: "no finite dev loss was ever recorded".into(),
        last_good: Box::new(student.to_checkpoint("", seed)),
    })?;
    Ok(DistillOutcome {
        student,
        classifier,
        log,
        best_step,
        best_dev_loss,
        seconds: start.elapsed().as_secs_f64(),
    })
}
