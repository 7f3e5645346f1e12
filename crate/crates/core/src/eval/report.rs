use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::cache::{ConditionCache, ConditionSet, SetKey};
use super::embed::{split_average_embeddings, EmbeddingMatrix};
use super::invariance::invariance_score;
use super::probe::{train_probe, LinearProbe, MultiLabelScores, ProbeConfig, ProbeTargets};
use super::repr::{extract_all, FrozenModel};
use crate::augmentor::{Condition, DistortionLabel};
use crate::error::{Error, Result};
use crate::synth_corpus::Split;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub probe: ProbeConfig,
    pub distortion_probe: ProbeConfig,
    pub n_classes: usize,
    pub n_splits: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            probe: ProbeConfig::default(),
            distortion_probe: ProbeConfig::default(),
            n_classes: 8,
            n_splits: 100,
        }
    }
}

/// Every set an evaluation reads.
pub fn required_sets() -> Vec<SetKey> {
    let mut keys = vec![
        SetKey::new(Split::Train, Condition::Clean),
        SetKey::new(Split::Train, Condition::TwoDist),
    ];
    for c in Condition::EVAL.into_iter().chain(Condition::VISUAL) {
        let k = SetKey::new(Split::Test, c);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistortionProbeReport {
    /// Fraction of test examples with every output right; the headline
    /// number.
    pub exact_match: f64,
    pub mean_per_class: f64,
    /// Keyed by [`DistortionLabel::NAMES`].
    pub per_class: BTreeMap<String, f64>,
}

impl From<MultiLabelScores> for DistortionProbeReport {
    fn from(s: MultiLabelScores) -> Self {
        Self {
            exact_match: s.exact_match,
            mean_per_class: s.per_class.iter().sum::<f64>() / s.per_class.len() as f64,
            per_class: DistortionLabel::NAMES
                .iter()
                .zip(s.per_class)
                .map(|(n, v)| (n.to_string(), v))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_id: String,
    pub model_seed: u64,
    pub eval_seed: u64,
    /// Downstream accuracy per condition name.
    pub accuracy: BTreeMap<String, f64>,
    pub invariance: f64,
    pub distortion_probe: DistortionProbeReport,
    pub probe_train_accuracy: f64,
    /// Hash of the shared distorted test audio.
    pub condition_cache_sha256: String,
    pub n_test: usize,
}

impl EvalReport {
    pub fn accuracy_on(&self, c: Condition) -> Option<f64> {
        self.accuracy.get(c.as_str()).copied()
    }

    /// Mean accuracy over the distorted evaluation conditions.
    pub fn distorted_mean(&self) -> f64 {
        let d: Vec<f64> = Condition::EVAL
            .iter()
            .filter(|c| c.is_distorted())
            .filter_map(|&c| self.accuracy_on(c))
            .collect();
        d.iter().sum::<f64>() / d.len().max(1) as f64
    }
}

fn same_ids(sets: &[&ConditionSet]) -> Result<()> {
    let first: Vec<&str> = sets[0].ids().collect();
    for s in &sets[1..] {
        if !s.ids().eq(first.iter().copied()) {
            return Err(Error::Eval(format!("{} and {} cover different utterances", sets[0].key, s.key)));
        }
    }
    Ok(())
}

fn labels_of(set: &ConditionSet) -> Result<Vec<DistortionLabel>> {
    set.entries
        .iter()
        .map(|e| {
            e.label
                .ok_or_else(|| Error::Eval(format!("{} has an unlabelled utterance {}", set.key, e.id)))
        })
        .collect()
}

/// Pooled representations of one model, extracted once per cached set.
pub struct RepMemo<'a, M: FrozenModel + ?Sized> {
    model: &'a M,
    cache: &'a ConditionCache,
    reps: BTreeMap<SetKey, Vec<Vec<f64>>>,
}

impl<'a, M: FrozenModel + ?Sized> RepMemo<'a, M> {
    pub fn new(model: &'a M, cache: &'a ConditionCache) -> Self {
        Self {
            model,
            cache,
            reps: BTreeMap::new(),
        }
    }

    pub fn cache(&self) -> &'a ConditionCache {
        self.cache
    }

    pub fn get(&mut self, split: Split, condition: Condition) -> Result<&[Vec<f64>]> {
        let key = SetKey::new(split, condition);
        if !self.reps.contains_key(&key) {
            let set = self.cache.get(split, condition)?;
            let x = extract_all(self.model, set.waves())?;
            self.reps.insert(key, x);
        }
        Ok(&self.reps[&key])
    }
}

/// Downstream probe on clean training audio. Returns the probe and its
/// training accuracy.
pub fn train_downstream_probe<M: FrozenModel + ?Sized>(
    memo: &mut RepMemo<'_, M>,
    cfg: &EvalConfig,
    seed: u64,
) -> Result<(LinearProbe, f64)> {
    let y = memo.cache().get(Split::Train, Condition::Clean)?.class_labels();
    let x = memo.get(Split::Train, Condition::Clean)?;
    let probe = train_probe(
        x,
        &ProbeTargets::Classes {
            labels: &y,
            n_classes: cfg.n_classes,
        },
        &cfg.probe,
        seed,
    )?;
    let acc = probe.accuracy(x, &y)?;
    Ok((probe, acc))
}

/// Test-split representations under each condition, checked to cover the
/// same utterances.
pub fn test_reps<M: FrozenModel + ?Sized>(
    memo: &mut RepMemo<'_, M>,
    conditions: &[Condition],
) -> Result<Vec<(Condition, Vec<Vec<f64>>)>> {
    let sets: Vec<&ConditionSet> = conditions
        .iter()
        .map(|&c| memo.cache().get(Split::Test, c))
        .collect::<Result<_>>()?;
    same_ids(&sets)?;
    conditions
        .iter()
        .map(|&c| Ok((c, memo.get(Split::Test, c)?.to_vec())))
        .collect()
}

/// Per-condition accuracy of a trained downstream probe.
pub fn eval_probe<M: FrozenModel + ?Sized>(
    memo: &mut RepMemo<'_, M>,
    probe: &LinearProbe,
    conditions: &[Condition],
) -> Result<BTreeMap<String, f64>> {
    let labels = memo.cache().get(Split::Test, Condition::Clean)?.class_labels();
    test_reps(memo, conditions)?
        .into_iter()
        .map(|(c, x)| Ok((c.as_str().to_string(), probe.accuracy(&x, &labels)?)))
        .collect()
}

/// Trains a 7-way multi-label probe on distorted training audio and scores it
/// on distorted test audio.
pub fn distortion_probe<M: FrozenModel + ?Sized>(
    memo: &mut RepMemo<'_, M>,
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<DistortionProbeReport> {
    let cache = memo.cache();
    let y = labels_of(cache.get(Split::Train, Condition::TwoDist)?)?;
    let yt = labels_of(cache.get(Split::Test, Condition::TwoDist)?)?;
    let probe = train_probe(memo.get(Split::Train, Condition::TwoDist)?, &ProbeTargets::MultiHot(&y), cfg, seed)?;
    Ok(probe
        .multi_label_scores(memo.get(Split::Test, Condition::TwoDist)?, &yt)?
        .into())
}

/// Probe accuracies, invariance and distortion-probe scores for one model.
/// Trains the downstream probe first; see [`evaluate_with_probe`].
pub fn evaluate<M: FrozenModel + ?Sized>(
    memo: &mut RepMemo<'_, M>,
    model_id: &str,
    model_seed: u64,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    let (probe, train_acc) = train_downstream_probe(memo, cfg, model_seed)?;
    evaluate_with_probe(memo, &probe, train_acc, model_id, model_seed, cfg)
}

/// Like [`evaluate`] with an already trained downstream probe. The
/// distortion probe is always trained fresh.
pub fn evaluate_with_probe<M: FrozenModel + ?Sized>(
    memo: &mut RepMemo<'_, M>,
    probe: &LinearProbe,
    probe_train_accuracy: f64,
    model_id: &str,
    model_seed: u64,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    let cache = memo.cache();
    let reps = test_reps(memo, &Condition::EVAL)?;
    let labels = cache.get(Split::Test, Condition::Clean)?.class_labels();
    let mut accuracy = BTreeMap::new();
    for (c, x) in &reps {
        accuracy.insert(c.as_str().to_string(), probe.accuracy(x, &labels)?);
    }
    let per_condition: Vec<Vec<Vec<f64>>> = reps.into_iter().map(|(_, x)| x).collect();
    Ok(EvalReport {
        model_id: model_id.to_string(),
        model_seed,
        eval_seed: cache.eval_seed,
        accuracy,
        invariance: invariance_score(&per_condition)?,
        distortion_probe: distortion_probe(memo, &cfg.distortion_probe, model_seed)?,
        probe_train_accuracy,
        condition_cache_sha256: cache.sha256(),
        n_test: labels.len(),
    })
}

/// Split-averaged test embeddings over the six visualization conditions.
pub fn visual_embeddings<M: FrozenModel + ?Sized>(memo: &mut RepMemo<'_, M>, n_splits: usize) -> Result<EmbeddingMatrix> {
    let mut per_condition = Vec::new();
    for c in Condition::VISUAL {
        let ids: Vec<String> = memo.cache().get(Split::Test, c)?.ids().map(str::to_string).collect();
        let reps = memo.get(Split::Test, c)?.to_vec();
        per_condition.push((c, ids.into_iter().zip(reps).collect()));
    }
    split_average_embeddings(&per_condition, n_splits)
}
