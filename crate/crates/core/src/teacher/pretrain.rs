use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::encoder::Mode;
use super::labeler::PseudoLabeler;
use super::model::{TeacherConfig, TeacherModel};
use crate::augmentor::{apply_spec, sample_spec, AugmentPolicy};
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig, Binding, Graph, Var};
use crate::rng::{substream, Rng};
use crate::synth_corpus::{Corpus, Split, TrainingBanks, Utterance};
use crate::wave::Waveform;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskedTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_steps: usize,
    /// Fraction of frames hidden per utterance.
    pub mask_prob: f64,
    pub mask_span: usize,
    pub clip_norm: f64,
}

impl Default for MaskedTrainConfig {
    fn default() -> Self {
        Self {
            steps: 800,
            batch_size: 8,
            lr: 1e-3,
            warmup_steps: 50,
            mask_prob: 0.4,
            mask_span: 5,
            clip_norm: 5.0,
        }
    }
}

impl MaskedTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.mask_span == 0 || !(0.0..=1.0).contains(&self.mask_prob) {
            return Err(Error::Config("masked training needs batch >= 1, span >= 1, mask_prob in [0, 1]".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        Ok(())
    }

    /// Linear warm-up to `lr`, then constant.
    pub fn lr_at(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            self.lr * (step + 1) as f64 / self.warmup_steps as f64
        } else {
            self.lr
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskedTrainRecord {
    pub step: usize,
    pub loss: f64,
    pub masked_acc: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MaskedTrainLog {
    pub records: Vec<MaskedTrainRecord>,
}

impl MaskedTrainLog {
    /// Mean loss over the first / last `n` records.
    pub fn head_tail_loss(&self, n: usize) -> Option<(f64, f64)> {
        let r = &self.records;
        if r.is_empty() {
            return None;
        }
        let n = n.clamp(1, r.len());
        let mean = |s: &[MaskedTrainRecord]| s.iter().map(|x| x.loss).sum::<f64>() / s.len() as f64;
        Some((mean(&r[..n]), mean(&r[r.len() - n..])))
    }
}

/// Marks spans of `span` frames at random starts until at least
/// `round(prob * t)` frames are covered.
pub fn span_mask(t: usize, prob: f64, span: usize, rng: &mut Rng) -> Vec<bool> {
    let mut mask = vec![false; t];
    if t == 0 || prob <= 0.0 {
        return mask;
    }
    let target = ((prob * t as f64).round() as usize).clamp(1, t);
    let span = span.min(t);
    let mut covered = 0;
    while covered < target {
        let start = rng.random_range(0..=t - span);
        for m in &mut mask[start..start + span] {
            if !*m {
                *m = true;
                covered += 1;
            }
        }
    }
    mask
}

/// Cross-entropy over masked frames only, plus (correct, masked) counts.
pub fn masked_loss(
    model: &TeacherModel,
    g: &mut Graph,
    p: &Binding,
    wave: &Waveform,
    labels: &[usize],
    mask: &[bool],
    mode: &mut Mode<'_>,
) -> Result<(Var, usize, usize)> {
    if labels.len() != mask.len() {
        return Err(Error::Shape {
            op: "masked_loss",
            lhs: vec![labels.len()],
            rhs: vec![mask.len()],
        });
    }
    let out = model.forward(g, p, wave, Some(mask), mode)?;
    let targets: Vec<Option<usize>> = labels
        .iter()
        .zip(mask)
        .map(|(&l, &m)| m.then_some(l))
        .collect();
    let loss = g.cross_entropy(out.logits, &targets)?;
    let logits = g.value(out.logits);
    let mut correct = 0;
    let mut total = 0;
    for (r, t) in targets.iter().enumerate() {
        if let Some(t) = t {
            total += 1;
            if argmax(logits.row_slice(r)) == *t {
                correct += 1;
            }
        }
    }
    Ok((loss, correct, total))
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Waveform the teacher sees during training: the clean utterance, or a
/// policy-distorted copy of it.
fn training_input(
    utt: &Utterance,
    distort: Option<(&AugmentPolicy, &TrainingBanks<'_>)>,
    rng: &mut Rng,
) -> Result<Waveform> {
    match distort {
        None => Ok(utt.wave.clone()),
        Some((policy, banks)) => {
            let spec = sample_spec(rng, policy)?;
            Ok(apply_spec(&utt.wave, &spec, banks, rng)?.wave)
        }
    }
}

fn train_masked(
    mut model: TeacherModel,
    corpus: &Corpus,
    labeler: &PseudoLabeler,
    cfg: &MaskedTrainConfig,
    seed: u64,
    policy: Option<&AugmentPolicy>,
    stream: &str,
) -> Result<(TeacherModel, MaskedTrainLog)> {
    cfg.validate()?;
    let train: Vec<&Utterance> = corpus.split(Split::Train).collect();
    if train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    // Targets always come from the clean audio.
    let labels: Vec<Vec<usize>> = train.iter().map(|u| labeler.labels(&u.wave)).collect();
    let banks = corpus.banks.training();
    let distort = policy.map(|p| (p, &banks));
    let mut opt = Adam::new(
        AdamConfig {
            clip_norm: Some(cfg.clip_norm),
            ..AdamConfig::with_lr(cfg.lr)
        },
        &model.params,
    );
    let mut log = MaskedTrainLog::default();
    for step in 0..cfg.steps {
        let mut rng = substream(seed, stream, step as u64);
        let mut g = Graph::new();
        let p = model.params.bind(&mut g, true);
        let mut losses = Vec::with_capacity(cfg.batch_size);
        let (mut correct, mut total) = (0, 0);
        for _ in 0..cfg.batch_size {
            let i = rng.random_range(0..train.len());
            let wave = training_input(train[i], distort, &mut rng)?;
            let mask = span_mask(labels[i].len(), cfg.mask_prob, cfg.mask_span, &mut rng);
            let (l, c, t) = masked_loss(&model, &mut g, &p, &wave, &labels[i], &mask, &mut Mode::Train(&mut rng))?;
            losses.push(l);
            correct += c;
            total += t;
        }
        let mut sum = losses[0];
        for &l in &losses[1..] {
            sum = g.add(sum, l)?;
        }
        let loss = g.scale(sum, 1.0 / cfg.batch_size as f64);
        let value = g.value(loss).item();
        if !value.is_finite() {
            return Err(Error::NonFinite {
                step: step as u64,
                param: "masked-prediction loss".into(),
            });
        }
        g.backward(loss)?;
        opt.set_lr(cfg.lr_at(step));
        opt.step(&mut model.params, &p.grads(&g))?;
        log.records.push(MaskedTrainRecord {
            step,
            loss: value,
            masked_acc: correct as f64 / total.max(1) as f64,
        });
    }
    Ok((model, log))
}

/// Masked-prediction pre-training on clean audio from a fresh init.
pub fn pretrain_teacher(
    corpus: &Corpus,
    labeler: &PseudoLabeler,
    model_cfg: &TeacherConfig,
    cfg: &MaskedTrainConfig,
    seed: u64,
) -> Result<(TeacherModel, MaskedTrainLog)> {
    if model_cfg.n_clusters != labeler.codebook.k() {
        return Err(Error::Config(format!(
            "teacher predicts {} clusters but the labeler has {}",
            model_cfg.n_clusters,
            labeler.codebook.k()
        )));
    }
    let model = TeacherModel::new(model_cfg, seed)?;
    train_masked(model, corpus, labeler, cfg, seed, None, "teacher-pretrain")
}

/// Continues masked prediction on policy-distorted inputs against the
/// clean-derived targets. `cfg.steps == 0` returns the teacher unchanged.
pub fn adapt_teacher(
    teacher: &TeacherModel,
    corpus: &Corpus,
    labeler: &PseudoLabeler,
    policy: &AugmentPolicy,
    cfg: &MaskedTrainConfig,
    seed: u64,
) -> Result<(TeacherModel, MaskedTrainLog)> {
    policy.validate()?;
    train_masked(teacher.clone(), corpus, labeler, cfg, seed, Some(policy), "teacher-adapt")
}

/// Masked-frame accuracy over `utterances`, optionally under training-policy
/// distortions. Masks and distortions come from `seed`, so two teachers
/// evaluated with the same seed see identical inputs.
pub fn masked_accuracy(
    teacher: &TeacherModel,
    labeler: &PseudoLabeler,
    utterances: &[&Utterance],
    distort: Option<(&AugmentPolicy, &TrainingBanks<'_>)>,
    cfg: &MaskedTrainConfig,
    seed: u64,
) -> Result<f64> {
    let (mut correct, mut total) = (0, 0);
    for (i, u) in utterances.iter().enumerate() {
        let mut rng = substream(seed, "teacher-masked-eval", i as u64);
        let wave = training_input(u, distort, &mut rng)?;
        let labels = labeler.labels(&u.wave);
        let mask = span_mask(labels.len(), cfg.mask_prob, cfg.mask_span, &mut rng);
        let mut g = Graph::new();
        let p = teacher.params.bind(&mut g, false);
        let (_, c, t) = masked_loss(teacher, &mut g, &p, &wave, &labels, &mask, &mut Mode::Eval)?;
        correct += c;
        total += t;
    }
    Ok(correct as f64 / total.max(1) as f64)
}
