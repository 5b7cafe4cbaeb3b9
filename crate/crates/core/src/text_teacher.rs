//! Semantic text teacher: encoder backbone plus a transformer classification block.

use std::path::Path;

use mmkd_autograd::{Forward, Graph, ParamStore};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, Manifest};
use crate::classifier::{ClassifierSpec, ExtraInputs, FusionMode, HeadConfig, SequenceClassifier};
use crate::corpus::{Dataset, Post, Split};
use crate::encoder::{BackboneInit, EncoderBackend, Vocab, TOY_BACKEND};
use crate::error::{Error, Result};
use crate::hparams::{check_choice, check_range, DROPOUTS, TEXT_EPOCHS, TEXT_LRS, WEIGHT_DECAYS};
use crate::metrics::{confusion_metrics, MetricsReport};
use crate::teacher::{argmax, softmax, Modality, Teacher};
use crate::train::{fit, ItemLoss, LoopConfig, TrainLog};

const KIND: &str = "text-teacher";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TextTeacherConfig {
    pub backend: String,
    pub encoder_width: Option<usize>,
    pub head: HeadConfig,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub override_ranges: bool,
}

impl Default for TextTeacherConfig {
    fn default() -> Self {
        Self {
            backend: TOY_BACKEND.into(),
            encoder_width: None,
            head: HeadConfig { n_layers: 2, n_heads: 8, dropout: 0.01, activation: mmkd_autograd::Activation::Gelu },
            lr: 4e-5,
            weight_decay: 0.0,
            epochs: 4,
            batch_size: 64,
            seed: 0,
            override_ranges: false,
        }
    }
}

impl TextTeacherConfig {
    pub fn backend(&self) -> Result<EncoderBackend> {
        EncoderBackend::resolve(&self.backend, self.encoder_width)
    }

    /// Checks the training hyperparameters against the search space.
    pub fn validate(&self) -> Result<()> {
        let o = self.override_ranges;
        check_choice("lr", self.lr, &TEXT_LRS, o)?;
        check_choice("weight_decay", self.weight_decay, &WEIGHT_DECAYS, o)?;
        check_choice("dropout", self.head.dropout, &DROPOUTS, o)?;
        check_range("epochs", self.epochs, TEXT_EPOCHS, o)?;
        self.head.validate(self.backend()?.width)
    }
}

#[derive(Clone, Debug)]
pub struct TextTeacher {
    pub model: SequenceClassifier,
    pub store: ParamStore,
    pub spec: ClassifierSpec,
    pub log: TrainLog,
}

/// Every token in the dataset, so fine-tuning can update each row.
pub fn dataset_vocab(backend: &EncoderBackend, dataset: &Dataset) -> Vec<String> {
    Vocab::from_texts(backend, dataset.posts.iter().map(|p| p.text.as_str())).tokens().to_vec()
}

pub fn build_text_teacher(
    backend: &EncoderBackend,
    head: &HeadConfig,
    num_classes: usize,
    vocab: Vec<String>,
    seed: u64,
) -> Result<TextTeacher> {
    let spec = ClassifierSpec {
        backend: backend.clone(),
        vocab,
        init: BackboneInit::Pretrained,
        head: head.clone(),
        num_classes,
        fusion: FusionMode::TextOnly,
        audio_width: 0,
        seed,
    };
    let mut store = ParamStore::new();
    let model = SequenceClassifier::build(&spec, &mut store, "text_teacher")?;
    Ok(TextTeacher { model, store, spec, log: TrainLog::default() })
}

impl TextTeacher {
    pub fn predict(&self, text: &str) -> Result<Vec<f64>> {
        Ok(softmax(&self.model.predict_logits(&self.store, text, ExtraInputs::default())?))
    }

    pub fn save(&self, dir: &Path, classes: &[String]) -> Result<Manifest> {
        let m = Manifest::new(KIND, classes, self.spec.seed, serde_json::to_value(&self.spec)?);
        checkpoint::save(dir, m, &self.store)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (manifest, loaded) = checkpoint::load(dir, KIND)?;
        let spec: ClassifierSpec = serde_json::from_value(manifest.config)?;
        let mut store = ParamStore::new();
        let model = SequenceClassifier::build(&spec, &mut store, "text_teacher")?;
        checkpoint::restore_into(&mut store, &loaded)?;
        Ok(Self { model, store, spec, log: TrainLog::default() })
    }
}

impl Teacher for TextTeacher {
    fn modality(&self) -> Modality {
        Modality::Text
    }

    fn num_classes(&self) -> usize {
        self.model.num_classes
    }

    fn predict_proba(&self, post: &Post) -> Result<Vec<f64>> {
        self.predict(&post.text)
    }

    fn embed(&self, post: &Post) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let tokens = self.model.tokenize(&post.text);
        let h = self.model.summary_state(&mut g, &self.store, &tokens, ExtraInputs::default(), &mut Forward::eval())?;
        Ok(g.value(h).row(0).to_vec())
    }
}

/// Mean cross-entropy of one post; used by teachers and as the student's task term.
pub fn cross_entropy(
    model: &SequenceClassifier,
    g: &mut Graph,
    store: &ParamStore,
    tokens: &[String],
    label: usize,
    extras: ExtraInputs,
    fwd: &mut Forward,
) -> Result<mmkd_autograd::Var> {
    let z = model.logits(g, store, tokens, extras, fwd)?;
    let lp = g.log_softmax_rows(z);
    let picked = g.pick(lp, &[(0, label)]);
    let neg = g.scale(picked, -1.0);
    Ok(g.sum_all(neg))
}

/// Predicts every post in `posts` and scores them.
pub fn evaluate_posts(
    posts: &[&Post],
    classes: &[String],
    mut predict: impl FnMut(&Post) -> Result<Vec<f64>>,
) -> Result<MetricsReport> {
    let mut yt = Vec::with_capacity(posts.len());
    let mut yp = Vec::with_capacity(posts.len());
    for p in posts {
        yt.push(p.label);
        yp.push(argmax(&predict(p)?));
    }
    confusion_metrics(&yt, &yp, classes)
}

/// Cross-entropy fine-tuning of backbone and head on `split.train`.
/// Returns the validation report, or the training report when no
/// validation ids exist.
pub fn finetune_teacher(
    mut teacher: TextTeacher,
    dataset: &Dataset,
    split: &Split,
    cfg: &TextTeacherConfig,
) -> Result<(TextTeacher, MetricsReport)> {
    cfg.validate()?;
    let train = dataset.select(&split.train);
    if train.is_empty() {
        return Err(Error::Config("text teacher has no training posts".into()));
    }
    let tokens: Vec<Vec<String>> = train.iter().map(|p| teacher.model.tokenize(&p.text)).collect();
    let loop_cfg = LoopConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        seed: cfg.seed,
        patience: None,
        plateau: None,
    };
    let mut store = teacher.store.clone();
    let model = &teacher.model;
    let log = fit(
        &mut store,
        train.len(),
        &loop_cfg,
        |s, i, fwd| {
            let mut g = Graph::new();
            let l = cross_entropy(model, &mut g, s, &tokens[i], train[i].label, ExtraInputs::default(), fwd)?;
            Ok(ItemLoss { loss: g.scalar(l), parts: Vec::new(), grads: g.backward(l, s) })
        },
        |_| Ok(None),
    )?;
    teacher.store = store;
    teacher.log = log;
    let val = dataset.select(&split.val);
    let report_on = if val.is_empty() { &train } else { &val };
    let report = evaluate_posts(report_on, &dataset.classes, |p| teacher.predict(&p.text))?;
    Ok((teacher, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkpoint::store_checksum;
    use crate::corpus::Protocol;

    fn toy() -> Dataset {
        let posts = (0..20)
            .map(|i| {
                let text = if i % 2 == 0 { format!("sunny happy walk {i}") } else { format!("dark hopeless night {i}") };
                Post::new(format!("p{i}"), text, i % 2)
            })
            .collect();
        Dataset::new("toy", vec!["ok".into(), "risk".into()], posts, Protocol::Kfold { k: 2 }).unwrap()
    }

    fn cfg() -> TextTeacherConfig {
        TextTeacherConfig {
            encoder_width: Some(16),
            head: HeadConfig { n_layers: 2, n_heads: 2, dropout: 0.01, activation: mmkd_autograd::Activation::Gelu },
            lr: 5e-3,
            epochs: 5,
            batch_size: 4,
            seed: 11,
            override_ranges: true,
            ..Default::default()
        }
    }

    fn run(ds: &Dataset) -> TextTeacher {
        let c = cfg();
        let b = c.backend().unwrap();
        let t = build_text_teacher(&b, &c.head, 2, dataset_vocab(&b, ds), c.seed).unwrap();
        let split = Split { train: ds.posts.iter().map(|p| p.id.clone()).collect(), val: vec![], test: vec![] };
        finetune_teacher(t, ds, &split, &c).unwrap().0
    }

    #[test]
    fn separable_toy_reaches_full_accuracy_deterministically() {
        let ds = toy();
        let a = run(&ds);
        let b = run(&ds);
        assert_eq!(store_checksum(&a.store), store_checksum(&b.store));
        let posts: Vec<&Post> = ds.posts.iter().collect();
        let r = evaluate_posts(&posts, &ds.classes, |p| a.predict_proba(p)).unwrap();
        assert_eq!(r.accuracy, 1.0);
        for p in &ds.posts {
            let probs = a.predict_proba(p).unwrap();
            assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert_eq!(probs, a.predict_proba(p).unwrap());
            let padded = Post::new(p.id.clone(), format!("{}   ", p.text), p.label);
            assert_eq!(argmax(&probs), argmax(&a.predict_proba(&padded).unwrap()));
        }
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_stable() {
        let ds = toy();
        let t = run(&ds);
        let dir = tempfile::tempdir().unwrap();
        t.save(dir.path(), &ds.classes).unwrap();
        let back = TextTeacher::load(dir.path()).unwrap();
        assert_eq!(back.predict_proba(&ds.posts[0]).unwrap(), t.predict_proba(&ds.posts[0]).unwrap());
    }

    #[test]
    fn out_of_range_lr_rejected() {
        let c = TextTeacherConfig { lr: 0.1, ..Default::default() };
        assert!(matches!(c.validate(), Err(Error::RangeError { .. })));
        let best = TextTeacherConfig {
            backend: "bert-base-uncased".into(),
            head: HeadConfig { n_layers: 10, n_heads: 8, dropout: 0.01, activation: mmkd_autograd::Activation::Gelu },
            ..Default::default()
        };
        assert!(best.validate().is_ok());
    }
}
