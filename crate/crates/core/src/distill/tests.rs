use proptest::prelude::*;
use rand::{Rng as _, SeedableRng};

use super::*;
use crate::augmentor::{AugmentPolicy, DistortionLabel, Setup};
use crate::nn::{gradcheck, Binding, Graph, Tensor};
use crate::rng::Rng;
use crate::synth_corpus::{Corpus, CorpusConfig, Split};
use crate::teacher::{ConvSpec, EncoderConfig, Mode, TeacherConfig, TeacherModel};
use crate::wave::Waveform;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn graph_loss(h: &[Tensor], p: &[Tensor], gamma: f64) -> (f64, f64, f64) {
    let mut g = Graph::new();
    let hv: Vec<_> = h.iter().map(|t| g.constant(t.clone())).collect();
    let pv: Vec<_> = p.iter().map(|t| g.constant(t.clone())).collect();
    let t = distil_loss(&mut g, &hv, &pv, gamma).unwrap();
    (g.value(t.total).item(), g.value(t.l1).item(), g.value(t.cos).item())
}

#[test]
fn identical_representations_cost_minus_log_sigmoid_one() {
    let h = vec![Tensor::row(vec![0.3, -1.2, 2.0, 0.7])];
    let expected = -sigmoid(1.0).ln();
    assert!((expected - 0.31326).abs() < 1e-5);
    for (total, l1, cos) in [graph_loss(&h, &h, 1.0), distil_loss_value(&h, &h, 1.0).unwrap()] {
        assert_eq!(l1, 0.0);
        assert!((cos - expected).abs() < 1e-9);
        assert!((total - expected).abs() < 1e-9);
    }
}

#[test]
fn hand_computed_l1_term() {
    let h = vec![Tensor::row(vec![1.0, 3.0])];
    let p = vec![Tensor::row(vec![0.0, 1.0])];
    let (total, l1, cos) = graph_loss(&h, &p, 0.0);
    assert_eq!(total, 1.5);
    assert_eq!(l1, 1.5);
    assert_eq!(cos, 0.0);
}

#[test]
fn per_frame_identity_scales_with_layers_and_frames() {
    // Three layers, five frames: 15 copies of -ln σ(1).
    let mut rng = Rng::seed_from_u64(2);
    let h: Vec<Tensor> = (0..3)
        .map(|_| Tensor::matrix(5, 6, (0..30).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap())
        .collect();
    let (total, _, _) = graph_loss(&h, &h, 1.0);
    assert!((total - 15.0 * -sigmoid(1.0).ln()).abs() < 1e-9);
}

proptest! {
    #[test]
    fn loss_decomposes_and_gamma_scales_cosine_term(
        a in prop::collection::vec(-5.0f64..5.0, 12),
        b in prop::collection::vec(-5.0f64..5.0, 12),
        gamma in 0.0f64..4.0,
    ) {
        let h = vec![Tensor::matrix(3, 4, a).unwrap()];
        let p = vec![Tensor::matrix(3, 4, b).unwrap()];
        let (total, l1, cos) = graph_loss(&h, &p, gamma);
        prop_assert_eq!(total, l1 + cos);
        let (_, l1b, cosb) = graph_loss(&h, &p, 2.0 * gamma);
        prop_assert_eq!(l1b, l1);
        prop_assert_eq!(cosb, 2.0 * cos);
        // Each frame's cosine term lies in [-ln σ(1), -ln σ(-1)]·γ.
        let lo = -sigmoid(1.0).ln() * gamma * 3.0;
        let hi = -sigmoid(-1.0).ln() * gamma * 3.0;
        prop_assert!(cos >= lo - 1e-12 && cos <= hi + 1e-12);
    }
}

#[test]
fn mismatched_shapes_are_errors() {
    let h = vec![Tensor::row(vec![1.0, 2.0])];
    let p = vec![Tensor::row(vec![1.0, 2.0, 3.0])];
    assert!(distil_loss_value(&h, &p, 1.0).is_err());
    let mut g = Graph::new();
    let hv = g.constant(h[0].clone());
    let pv = g.constant(p[0].clone());
    assert!(distil_loss(&mut g, &[hv], &[pv], 1.0).is_err());
    assert!(distil_loss(&mut g, &[hv, hv], &[hv], 1.0).is_err());
}

#[test]
fn gradcheck_distil_loss_and_bce() {
    let mut rng = Rng::seed_from_u64(8);
    let mut rand = |r, c| Tensor::matrix(r, c, (0..r * c).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
    let inputs = vec![rand(3, 5), rand(3, 5), rand(3, 5), rand(3, 5)];
    let r = gradcheck(&inputs, 1e-5, |g, v| Ok(distil_loss(g, &v[..2], &v[2..], 0.7)?.total)).unwrap();
    assert!(r.max_rel_err < 1e-4, "{}", r.max_rel_err);
}

fn tiny_encoder() -> EncoderConfig {
    EncoderConfig {
        dim: 8,
        heads: 2,
        ffn_dim: 12,
        conv: vec![
            ConvSpec {
                channels: 4,
                kernel: 4,
                stride: 2,
            },
            ConvSpec {
                channels: 8,
                kernel: 3,
                stride: 2,
            },
        ],
        dropout: 0.0,
    }
}

#[test]
fn gradcheck_student_parameters_on_a_tiny_batch() {
    let teacher = TeacherModel::new(
        &TeacherConfig {
            encoder: tiny_encoder(),
            layers: 3,
            n_clusters: 4,
        },
        1,
    )
    .unwrap();
    let cfg = StudentConfig {
        encoder: tiny_encoder(),
        layers: 1,
        target_layers: vec![2, 3],
    };
    let student = init_student_from_teacher(&teacher, &cfg, 2).unwrap();
    let mut rng = Rng::seed_from_u64(3);
    let waves: Vec<Waveform> = [40, 52]
        .iter()
        .map(|&n| Waveform::new((0..n).map(|_| rng.random_range(-0.5..0.5)).collect(), 8000).unwrap())
        .collect();
    let targets: Vec<Vec<Tensor>> = waves
        .iter()
        .map(|w| teacher_targets(&teacher, w, &[2, 3]).unwrap())
        .collect();
    let inputs: Vec<Tensor> = student.params.iter().map(|p| p.value.clone()).collect();
    let r = gradcheck(&inputs, 1e-5, |g, v| {
        let b = Binding::from_vars(v.to_vec());
        let mut losses = Vec::new();
        for (w, t) in waves.iter().zip(&targets) {
            let out = student.forward(g, &b, w, &mut Mode::Eval)?;
            let tv: Vec<_> = t.iter().map(|x| g.constant(x.clone())).collect();
            losses.push(distil_loss(g, &tv, &out.preds, 1.0)?.total);
        }
        g.add(losses[0], losses[1])
    })
    .unwrap();
    assert!(r.max_rel_err < 1e-4, "{}", r.max_rel_err);
}

fn small_corpus() -> Corpus {
    let cfg = CorpusConfig {
        train: 10,
        dev: 3,
        test: 3,
        noise_clips_per_bank: 2,
        noise_clip_secs: 1.2,
        ..CorpusConfig::default()
    };
    Corpus::generate(&cfg, 5).unwrap()
}

fn teacher() -> TeacherModel {
    TeacherModel::new(&TeacherConfig::default(), 7).unwrap()
}

#[test]
fn student_copies_teacher_front_end_and_lower_blocks() {
    let t = teacher();
    let s = init_student_from_teacher(&t, &StudentConfig::default(), 1).unwrap();
    let mut copied = 0;
    for p in s.params.iter() {
        if p.name.starts_with("heads.") {
            continue;
        }
        assert_eq!(&t.params.by_name(&p.name).unwrap().value, &p.value, "{}", p.name);
        copied += 1;
    }
    assert!(copied > 20);
    assert!(s.params.iter().all(|p| !p.name.starts_with("blocks.2")));
    assert_eq!(s.heads.len(), 3);
    assert_eq!(s.head_param_count(), 3 * (64 * 64 + 64));
}

#[test]
fn student_frames_match_teacher_and_eval_is_deterministic() {
    let t = teacher();
    let s = init_student_from_teacher(&t, &StudentConfig::default(), 1).unwrap();
    let corpus = small_corpus();
    let w = &corpus.utterances[0].wave;
    let z = s.represent(w).unwrap();
    assert_eq!(z.rows(), t.hidden(w).unwrap()[0].rows());
    assert_eq!(z.cols(), 64);
    assert_eq!(s.represent(w).unwrap(), z);
    assert_eq!(s.predict(w).unwrap().len(), 3);
}

#[test]
fn architecture_mismatch_is_rejected() {
    let t = teacher();
    let deep = StudentConfig {
        layers: 5,
        ..StudentConfig::default()
    };
    assert!(init_student_from_teacher(&t, &deep, 0).is_err());
    let bad_target = StudentConfig {
        target_layers: vec![2, 9],
        ..StudentConfig::default()
    };
    assert!(init_student_from_teacher(&t, &bad_target, 0).is_err());
    let other = StudentConfig {
        encoder: EncoderConfig {
            ffn_dim: 96,
            ..EncoderConfig::default()
        },
        ..StudentConfig::default()
    };
    assert!(init_student_from_teacher(&t, &other, 0).is_err());
}

#[test]
fn untrained_dev_loss_equals_heads_on_truncated_teacher() {
    // Before any update z is the teacher's second block output, so each
    // prediction is head_i applied to h^2.
    let t = teacher();
    let s = init_student_from_teacher(&t, &StudentConfig::default(), 3).unwrap();
    let corpus = small_corpus();
    let dev = dev_pairs(&t, &corpus, &[2, 3, 4]).unwrap();
    let got = dev_loss(&s, &dev, 0.0).unwrap();

    let mut expected = 0.0;
    for u in corpus.split(Split::Dev) {
        let hidden = t.hidden(&u.wave).unwrap();
        let h2 = &hidden[1];
        for (i, layer) in [2usize, 3, 4].iter().enumerate() {
            let w = &s.params.by_name(&format!("heads.{i}.w")).unwrap().value;
            let b = &s.params.by_name(&format!("heads.{i}.b")).unwrap().value;
            let target = &hidden[layer - 1];
            for r in 0..h2.rows() {
                let mut l1 = 0.0;
                for c in 0..64 {
                    let pred: f64 = b.at(0, c) + (0..64).map(|k| h2.at(r, k) * w.at(k, c)).sum::<f64>();
                    l1 += (target.at(r, c) - pred).abs();
                }
                expected += l1 / 64.0;
            }
        }
    }
    expected /= 3.0;
    assert!(got.is_finite());
    assert!((got - expected).abs() < 1e-9 * expected.abs(), "{got} vs {expected}");
    assert_eq!(dev_loss(&s, &dev, 0.0).unwrap(), got);
}

fn toy_batch(corpus: &Corpus, t: &TeacherModel, setup: Setup, seed: u64) -> Vec<PreparedPair> {
    let policy = AugmentPolicy::default();
    let mut src = PairSource::new(t, corpus, &policy, &[2, 3, 4]).unwrap();
    src.batch(setup, 2, &mut Rng::seed_from_u64(seed)).unwrap()
}

#[test]
fn lambda_zero_matches_plain_distillation_bitwise() {
    let t = teacher();
    let corpus = small_corpus();
    let s = init_student_from_teacher(&t, &StudentConfig::default(), 1).unwrap();
    let clf = DistortionClassifier::new(64, 2).unwrap();
    let batch = toy_batch(&corpus, &t, Setup::Setup1, 4);
    let (plain, _) = student_gradients(&s, None, &batch, 1.0, 0.0, &mut Rng::seed_from_u64(0)).unwrap();
    let (dat, _) = student_gradients(&s, Some(&clf), &batch, 1.0, 0.0, &mut Rng::seed_from_u64(0)).unwrap();
    assert_eq!(plain, dat);
}

#[test]
fn adversarial_term_pushes_student_up_the_classifier_loss() {
    let t = teacher();
    let corpus = small_corpus();
    let s = init_student_from_teacher(&t, &StudentConfig::default(), 1).unwrap();
    let clf = DistortionClassifier::new(64, 2).unwrap();
    let batch = toy_batch(&corpus, &t, Setup::Setup2, 6);
    let lambda = 0.5;
    let (g0, _) = student_gradients(&s, Some(&clf), &batch, 1.0, 0.0, &mut Rng::seed_from_u64(0)).unwrap();
    let (g1, _) = student_gradients(&s, Some(&clf), &batch, 1.0, lambda, &mut Rng::seed_from_u64(0)).unwrap();

    // ∂L_D/∂θ_s computed on its own graph.
    let mut g = Graph::new();
    let sp = s.params.bind(&mut g, true);
    let cp = clf.params.bind(&mut g, false);
    let zs: Vec<_> = batch
        .iter()
        .map(|p| s.forward(&mut g, &sp, &p.student_wave, &mut Mode::Eval).unwrap().z)
        .collect();
    let labels: Vec<DistortionLabel> = batch.iter().map(|p| p.label.unwrap()).collect();
    let ld = clf.loss(&mut g, &cp, &zs, &labels).unwrap();
    g.backward(ld).unwrap();
    let gd = sp.grads(&g);

    let dot = |a: &[Vec<f64>], b: &[Vec<f64>]| -> f64 {
        a.iter().flatten().zip(b.iter().flatten()).map(|(x, y)| x * y).sum()
    };
    let norm_d = dot(&gd, &gd);
    assert!(norm_d > 0.0);
    // g1 = g0 - λ·gd, so the descent step gains a component along +gd.
    let along0 = dot(&g0, &gd);
    let along1 = dot(&g1, &gd);
    assert!(along1 < along0);
    assert!((along0 - along1 - lambda * norm_d).abs() < 1e-6 * norm_d.max(1.0));
}

#[test]
fn each_phase_moves_only_its_own_parameters() {
    let t = teacher();
    let corpus = small_corpus();
    let mut s = init_student_from_teacher(&t, &StudentConfig::default(), 1).unwrap();
    let mut clf = DistortionClassifier::new(64, 2).unwrap();
    let batch = toy_batch(&corpus, &t, Setup::Setup2, 8);
    let mut opts = Optimizers {
        student: crate::nn::Adam::new(crate::nn::AdamConfig::with_lr(1e-3), &s.params),
        classifier: Some(crate::nn::Adam::new(crate::nn::AdamConfig::with_lr(1e-3), &clf.params)),
    };

    // Phase 1 alone: only the classifier moves.
    let s_before = s.params.clone();
    let c_before = clf.params.clone();
    let zs: Vec<Tensor> = batch.iter().map(|p| s.represent(&p.student_wave).unwrap()).collect();
    let labels: Vec<DistortionLabel> = batch.iter().map(|p| p.label.unwrap()).collect();
    classifier_phase(&mut clf, opts.classifier.as_mut().unwrap(), &zs, &labels).unwrap();
    assert_eq!(s.params, s_before);
    assert_ne!(clf.params, c_before);

    // Full alternating step: the student moves too, the classifier makes
    // exactly one more update.
    let c_mid = clf.params.clone();
    let losses = dat_step(&batch, &mut s, Some(&mut clf), &mut opts, 1.0, 1e-2, &mut Rng::seed_from_u64(0)).unwrap();
    assert!(losses.l_d.is_some());
    assert_ne!(s.params, s_before);
    assert_ne!(clf.params, c_mid);
    assert_eq!(opts.classifier.as_ref().unwrap().steps_taken(), 2);
    assert_eq!(opts.student.steps_taken(), 1);
}

#[test]
fn adversarial_step_requires_labels() {
    let t = teacher();
    let corpus = small_corpus();
    let mut s = init_student_from_teacher(&t, &StudentConfig::default(), 1).unwrap();
    let mut clf = DistortionClassifier::new(64, 2).unwrap();
    let mut batch = toy_batch(&corpus, &t, Setup::Setup1, 8);
    batch[1].label = None;
    let mut opts = Optimizers {
        student: crate::nn::Adam::new(crate::nn::AdamConfig::default(), &s.params),
        classifier: Some(crate::nn::Adam::new(crate::nn::AdamConfig::default(), &clf.params)),
    };
    let err = dat_step(&batch, &mut s, Some(&mut clf), &mut opts, 1.0, 1e-2, &mut Rng::seed_from_u64(0));
    assert!(err.is_err());
}

#[test]
fn setup1_targets_come_from_clean_audio() {
    let t = teacher();
    let corpus = small_corpus();
    let policy = AugmentPolicy::default();
    let mut src = PairSource::new(&t, &corpus, &policy, &[2, 3, 4]).unwrap();
    let mut rng = Rng::seed_from_u64(1);
    let mut clean_rng = Rng::seed_from_u64(1);
    let train: Vec<_> = corpus.split(Split::Train).collect();
    for _ in 0..5 {
        let batch = src.batch(Setup::Setup1, 2, &mut rng).unwrap();
        // Replay the index draws to find which utterances were used.
        for pair in &batch {
            let i = clean_rng.random_range(0..train.len());
            let _ = crate::augmentor::make_cdm_pair(
                &train[i].wave,
                Setup::Setup1,
                &corpus.banks.training(),
                &policy,
                &mut clean_rng,
            )
            .unwrap();
            assert_eq!(pair.targets, teacher_targets(&t, &train[i].wave, &[2, 3, 4]).unwrap());
        }
    }
}

fn short_run(setup: Setup, dat: bool) -> DistillConfig {
    DistillConfig {
        setup,
        dat_enabled: dat,
        steps: 4,
        batch_size: 2,
        eval_every: 2,
        warmup_steps: 0,
        ..DistillConfig::default()
    }
}

#[test]
fn distill_run_selects_best_dev_checkpoint_and_leaves_teacher_alone() {
    let t = teacher();
    let before = t.to_checkpoint("", 0);
    let corpus = small_corpus();
    let policy = AugmentPolicy::default();
    let out = distill_run(&short_run(Setup::Setup2, true), &t, &corpus, &policy, 3).unwrap();
    assert_eq!(t.to_checkpoint("", 0), before);
    let devs: Vec<(usize, f64)> = out.log.dev().collect();
    assert_eq!(devs.iter().map(|d| d.0).collect::<Vec<_>>(), vec![2, 4]);
    assert!(devs.iter().all(|&(_, d)| out.best_dev_loss <= d));
    assert_eq!(out.log.train().count(), 4);
    let dev = dev_pairs(&t, &corpus, &[2, 3, 4]).unwrap();
    assert_eq!(dev_loss(&out.student, &dev, 1.0).unwrap(), out.best_dev_loss);

    let jsonl = out.log.to_jsonl();
    let parsed: Vec<LogRecord> = jsonl.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(parsed, out.log.records);
}

#[test]
fn distill_run_is_deterministic() {
    let t = teacher();
    let corpus = small_corpus();
    let policy = AugmentPolicy::default();
    let cfg = short_run(Setup::Setup1, false);
    let a = distill_run(&cfg, &t, &corpus, &policy, 9).unwrap();
    let b = distill_run(&cfg, &t, &corpus, &policy, 9).unwrap();
    assert_eq!(
        a.student.to_checkpoint("", 9).param_hash(),
        b.student.to_checkpoint("", 9).param_hash()
    );
    assert_eq!(a.log, b.log);
}

#[test]
fn non_finite_loss_aborts_with_last_good_checkpoint() {
    let mut t = teacher();
    let id = t.params.find("blocks.3.ff2.b").unwrap();
    t.params.get_mut(id).value.data_mut()[0] = f64::NAN;
    let corpus = small_corpus();
    let err = distill_run(&short_run(Setup::None, false), &t, &corpus, &AugmentPolicy::default(), 1).unwrap_err();
    match err {
        crate::Error::Diverged { step, last_good, .. } => {
            assert_eq!(step, 0);
            let s = StudentModel::from_checkpoint(&last_good).unwrap();
            assert!(s.params.iter().all(|p| p.value.data().iter().all(|v| v.is_finite())));
        }
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn config_validation() {
    let bad = [
        DistillConfig {
            lambda: -1.0,
            ..DistillConfig::default()
        },
        DistillConfig {
            gamma: f64::NAN,
            ..DistillConfig::default()
        },
        DistillConfig {
            steps: 0,
            ..DistillConfig::default()
        },
    ];
    for c in bad {
        assert!(c.validate().is_err());
    }
    assert!(DistillConfig::default().validate().is_ok());
    let d = DistillConfig::default();
    assert_eq!((d.gamma, d.lambda, d.steps, d.eval_every), (1.0, 1e-2, 2000, 100));
}
