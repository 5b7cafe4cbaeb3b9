//! Dataset ingestion, de-identification, split planning and descriptive
//! statistics.
//!
//! Dataset files are JSON lines with string keys `id`, `text` and `label`.
//! Class order and evaluation protocol come from a sidecar manifest
//! (`<stem>.manifest.json`) or are supplied by the caller.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::LazyLock;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenize::{URL_MASK, USER_MASK};

/// Fraction of a training portion held out for validation when the protocol
/// declares none.
pub const DEFAULT_VALIDATION_FRACTION: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Post {
    pub id: String,
    pub text: String,
    pub label: usize,
    pub char_length: usize,
    pub word_count: usize,
}

impl Post {
    /// Builds a post from already de-identified text.
    pub fn new(id: impl Into<String>, text: impl Into<String>, label: usize) -> Self {
        let text = text.into();
        Self {
            id: id.into(),
            char_length: text.chars().count(),
            word_count: text.split_whitespace().count(),
            text,
            label,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Kfold { k: usize },
    FixedSplit { train: f64, val: Option<f64>, test: f64 },
    ExplicitIds { train: Vec<String>, val: Option<Vec<String>>, test: Vec<String> },
}

/// Declared class order and protocol for a dataset file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub classes: Option<Vec<String>>,
    #[serde(default)]
    pub protocol: Option<Protocol>,
}

impl DatasetManifest {
    pub fn sidecar_path(data: &Path) -> PathBuf {
        let stem = data.file_stem().and_then(|s| s.to_str()).unwrap_or("dataset");
        data.with_file_name(format!("{stem}.manifest.json"))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&raw)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub classes: Vec<String>,
    pub posts: Vec<Post>,
    pub protocol: Protocol,
}

impl Dataset {
    pub fn new(name: impl Into<String>, classes: Vec<String>, posts: Vec<Post>, protocol: Protocol) -> Result<Self> {
        let name = name.into();
        if classes.len() < 2 {
            return Err(Error::Config(format!("dataset {name:?} declares {} classes, need at least 2", classes.len())));
        }
        let unique: HashSet<_> = classes.iter().collect();
        if unique.len() != classes.len() {
            return Err(Error::Config(format!("dataset {name:?} has duplicate class names")));
        }
        if posts.is_empty() {
            return Err(Error::EmptyDataset(name));
        }
        for (i, p) in posts.iter().enumerate() {
            if p.label >= classes.len() {
                return Err(Error::UnknownLabel { line: i + 1, label: p.label.to_string() });
            }
        }
        Ok(Self { name, classes, posts, protocol })
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn post(&self, id: &str) -> Option<&Post> {
        self.posts.iter().find(|p| p.id == id)
    }

    pub fn index(&self) -> BTreeMap<&str, &Post> {
        self.posts.iter().map(|p| (p.id.as_str(), p)).collect()
    }

    /// Posts for `ids`, in the given order. Unknown ids are skipped.
    pub fn select<'a>(&'a self, ids: &[String]) -> Vec<&'a Post> {
        let idx = self.index();
        ids.iter().filter_map(|id| idx.get(id.as_str()).copied()).collect()
    }

    /// Stable content hash, used to key cached artifacts.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(self.name.as_bytes());
        for c in &self.classes {
            h.update(c.as_bytes());
            h.update([0]);
        }
        for p in &self.posts {
            h.update(p.id.as_bytes());
            h.update([0]);
            h.update(p.text.as_bytes());
            h.update([0]);
            h.update((p.label as u64).to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

#[derive(Deserialize)]
struct RawRecord {
    id: Option<serde_json::Value>,
    text: Option<String>,
    label: Option<serde_json::Value>,
}

/// Reads a JSON-lines dataset. `classes` fixes class order; when absent the
/// sorted set of labels seen in the file is used.
pub fn load_dataset(path: &Path, name: &str, classes: Option<&[String]>, protocol: Protocol) -> Result<Dataset> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RawRecord = serde_json::from_str(line)?;
        let id = match rec.id {
            Some(serde_json::Value::String(s)) => s,
            Some(serde_json::Value::Number(n)) => n.to_string(),
            _ => return Err(Error::MissingField { line: line_no, field: "id" }),
        };
        let text = rec.text.ok_or(Error::MissingField { line: line_no, field: "text" })?;
        let label = match rec.label {
            Some(serde_json::Value::String(s)) => s,
            Some(serde_json::Value::Number(n)) => n.to_string(),
            _ => return Err(Error::MissingField { line: line_no, field: "label" }),
        };
        records.push((line_no, id, text, label));
    }
    if records.is_empty() {
        return Err(Error::EmptyDataset(name.to_string()));
    }
    let classes: Vec<String> = match classes {
        Some(c) => c.to_vec(),
        None => {
            let mut seen: Vec<String> = records.iter().map(|r| r.3.clone()).collect();
            seen.sort();
            seen.dedup();
            seen
        }
    };
    let mut posts = Vec::with_capacity(records.len());
    let mut ids = HashSet::new();
    for (line, id, text, label) in records {
        let idx = classes
            .iter()
            .position(|c| *c == label)
            .ok_or_else(|| Error::UnknownLabel { line, label: label.clone() })?;
        if !ids.insert(id.clone()) {
            return Err(Error::Config(format!("duplicate post id {id:?} on line {line}")));
        }
        let masked = deidentify(&text);
        if masked.trim().is_empty() {
            return Err(Error::MissingField { line, field: "text" });
        }
        posts.push(Post::new(id, masked, idx));
    }
    Dataset::new(name, classes, posts, protocol)
}

/// Loads a dataset using its sidecar manifest for classes and protocol.
pub fn load_with_manifest(path: &Path) -> Result<Dataset> {
    let manifest_path = DatasetManifest::sidecar_path(path);
    let manifest = DatasetManifest::read(&manifest_path)?;
    let protocol = manifest
        .protocol
        .ok_or_else(|| Error::Config(format!("{} declares no protocol", manifest_path.display())))?;
    let name = manifest
        .name
        .unwrap_or_else(|| path.file_stem().and_then(|s| s.to_str()).unwrap_or("dataset").to_string());
    load_dataset(path, &name, manifest.classes.as_deref(), protocol)
}

/// Writes posts back out as JSON lines plus a sidecar manifest.
pub fn write_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut out = String::new();
    for p in &dataset.posts {
        let rec = serde_json::json!({"id": p.id, "text": p.text, "label": dataset.classes[p.label]});
        out.push_str(&serde_json::to_string(&rec)?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))?;
    let manifest = DatasetManifest {
        name: Some(dataset.name.clone()),
        classes: Some(dataset.classes.clone()),
        protocol: Some(dataset.protocol.clone()),
    };
    let mpath = DatasetManifest::sidecar_path(path);
    fs::write(&mpath, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&mpath, e))
}

static URL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)[a-z][a-z0-9+.\-]*://\S*|(?:^|\b)www\.\S*").expect("url pattern"));
static HANDLE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(^|\s)@\w+").expect("handle pattern"));

/// Masks @-handles with `_USER_` and URLs with `_URL_`; everything else is
/// left untouched. A handle must start a whitespace-delimited token, so bare
/// e-mail addresses are kept.
pub fn deidentify(text: &str) -> String {
    let urls = URL.replace_all(text, |caps: &regex::Captures| {
        let m = caps.get(0).expect("whole match");
        // `www.` must begin a token.
        if m.as_str().to_ascii_lowercase().starts_with("www.") {
            let before = &text[..m.start()];
            if before.chars().last().is_some_and(|c| !c.is_whitespace()) {
                return m.as_str().to_string();
            }
        }
        URL_MASK.to_string()
    });
    HANDLE.replace_all(&urls, format!("${{1}}{USER_MASK}")).into_owned()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub seed: u64,
    pub splits: Vec<Split>,
}

fn ids_by_class(dataset: &Dataset) -> Vec<Vec<usize>> {
    let mut by_class = vec![Vec::new(); dataset.num_classes()];
    for (i, p) in dataset.posts.iter().enumerate() {
        by_class[p.label].push(i);
    }
    by_class
}

fn ids_of(dataset: &Dataset, mut idx: Vec<usize>) -> Vec<String> {
    idx.sort_unstable();
    idx.into_iter().map(|i| dataset.posts[i].id.clone()).collect()
}

/// Moves the last `fraction` of a shuffled training portion into validation.
fn carve_validation(dataset: &Dataset, train: Vec<usize>, fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<String>, Vec<String>) {
    let mut shuffled = train;
    shuffled.sort_unstable();
    shuffled.shuffle(rng);
    let n_val = if shuffled.len() >= 2 {
        ((shuffled.len() as f64 * fraction).round() as usize).clamp(1, shuffled.len() - 1)
    } else {
        0
    };
    let val = shuffled.split_off(shuffled.len() - n_val);
    (ids_of(dataset, shuffled), ids_of(dataset, val))
}

/// Plans stratified folds or splits for the dataset's protocol.
pub fn make_splits(dataset: &Dataset, seed: u64) -> Result<SplitPlan> {
    if dataset.posts.is_empty() {
        return Err(Error::EmptyDataset(dataset.name.clone()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let by_class = ids_by_class(dataset);
    let splits = match &dataset.protocol {
        Protocol::Kfold { k } => {
            let k = *k;
            if k < 2 {
                return Err(Error::Config(format!("kfold needs k >= 2, got {k}")));
            }
            for (c, members) in by_class.iter().enumerate() {
                if members.len() < k {
                    return Err(Error::InfeasibleStratification {
                        class: dataset.classes[c].clone(),
                        count: members.len(),
                        k,
                    });
                }
            }
            let mut fold_of = vec![0usize; dataset.posts.len()];
            let mut offset = 0;
            for members in &by_class {
                let mut shuffled = members.clone();
                shuffled.shuffle(&mut rng);
                for (i, &post) in shuffled.iter().enumerate() {
                    fold_of[post] = (offset + i) % k;
                }
                offset += members.len();
            }
            (0..k)
                .map(|fold| {
                    let test: Vec<usize> = (0..fold_of.len()).filter(|&i| fold_of[i] == fold).collect();
                    let train: Vec<usize> = (0..fold_of.len()).filter(|&i| fold_of[i] != fold).collect();
                    let (train, val) = carve_validation(dataset, train, DEFAULT_VALIDATION_FRACTION, &mut rng);
                    Split { train, val, test: ids_of(dataset, test) }
                })
                .collect()
        }
        Protocol::FixedSplit { train, val, test } => {
            let total = train + val.unwrap_or(0.0) + test;
            if (total - 1.0).abs() > 1e-6 || *test < 0.0 || *train <= 0.0 {
                return Err(Error::Config(format!("split fractions must be non-negative and sum to 1, got {total}")));
            }
            let (mut tr, mut va, mut te) = (Vec::new(), Vec::new(), Vec::new());
            for members in &by_class {
                let mut shuffled = members.clone();
                shuffled.shuffle(&mut rng);
                let n = shuffled.len() as f64;
                let n_test = (n * test).round() as usize;
                let n_val = (n * val.unwrap_or(0.0)).round() as usize;
                let n_test = n_test.min(shuffled.len());
                let n_val = n_val.min(shuffled.len() - n_test);
                te.extend_from_slice(&shuffled[..n_test]);
                va.extend_from_slice(&shuffled[n_test..n_test + n_val]);
                tr.extend_from_slice(&shuffled[n_test + n_val..]);
            }
            let (train_ids, val_ids) = if val.is_none() {
                carve_validation(dataset, tr, DEFAULT_VALIDATION_FRACTION, &mut rng)
            } else {
                (ids_of(dataset, tr), ids_of(dataset, va))
            };
            vec![Split { train: train_ids, val: val_ids, test: ids_of(dataset, te) }]
        }
        Protocol::ExplicitIds { train, val, test } => {
            let position: BTreeMap<&str, usize> =
                dataset.posts.iter().enumerate().map(|(i, p)| (p.id.as_str(), i)).collect();
            let resolve = |ids: &[String]| -> Result<Vec<usize>> {
                ids.iter()
                    .map(|id| {
                        position.get(id.as_str()).copied().ok_or_else(|| Error::Config(format!("split references unknown id {id:?}")))
                    })
                    .collect()
            };
            let tr = resolve(train)?;
            let te = resolve(test)?;
            let (train_ids, val_ids) = match val {
                Some(v) => (ids_of(dataset, tr), ids_of(dataset, resolve(v)?)),
                None => carve_validation(dataset, tr, DEFAULT_VALIDATION_FRACTION, &mut rng),
            };
            vec![Split { train: train_ids, val: val_ids, test: ids_of(dataset, te) }]
        }
    };
    Ok(SplitPlan { seed, splits })
}

/// Random 90:10 train/validation split over the given ids (hyperparameter
/// search protocol).
pub fn holdout_split(dataset: &Dataset, ids: &[String], seed: u64) -> Split {
    let position: BTreeMap<&str, usize> = dataset.posts.iter().enumerate().map(|(i, p)| (p.id.as_str(), i)).collect();
    let idx: Vec<usize> = ids.iter().filter_map(|id| position.get(id.as_str()).copied()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (train, val) = carve_validation(dataset, idx, DEFAULT_VALIDATION_FRACTION, &mut rng);
    Split { train, val, test: Vec::new() }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LengthRange {
    pub min: usize,
    pub max: usize,
    pub avg: f64,
}

impl LengthRange {
    fn from_values(values: impl Iterator<Item = usize>) -> Option<Self> {
        let v: Vec<usize> = values.collect();
        if v.is_empty() {
            return None;
        }
        Some(Self {
            min: *v.iter().min().expect("non-empty"),
            max: *v.iter().max().expect("non-empty"),
            avg: v.iter().sum::<usize>() as f64 / v.len() as f64,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    #[serde(rename = "Class")]
    pub class: String,
    #[serde(rename = "Total")]
    pub count: usize,
    #[serde(rename = "%")]
    pub percentage: f64,
    #[serde(rename = "Length")]
    pub char_length: Option<LengthRange>,
    #[serde(rename = "Words")]
    pub word_count: Option<LengthRange>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    #[serde(rename = "Dataset")]
    pub dataset: String,
    #[serde(rename = "Num. Classes")]
    pub num_classes: usize,
    #[serde(rename = "Total Samples")]
    pub total: usize,
    #[serde(rename = "Classes")]
    pub classes: Vec<ClassStats>,
    #[serde(rename = "Length")]
    pub char_length: LengthRange,
    #[serde(rename = "Words")]
    pub word_count: LengthRange,
}

pub fn compute_stats(dataset: &Dataset) -> Result<DatasetStats> {
    if dataset.posts.is_empty() {
        return Err(Error::EmptyDataset(dataset.name.clone()));
    }
    let total = dataset.posts.len();
    let classes = dataset
        .classes
        .iter()
        .enumerate()
        .map(|(c, name)| {
            let members: Vec<&Post> = dataset.posts.iter().filter(|p| p.label == c).collect();
            ClassStats {
                class: name.clone(),
                count: members.len(),
                percentage: 100.0 * members.len() as f64 / total as f64,
                char_length: LengthRange::from_values(members.iter().map(|p| p.char_length)),
                word_count: LengthRange::from_values(members.iter().map(|p| p.word_count)),
            }
        })
        .collect();
    Ok(DatasetStats {
        dataset: dataset.name.clone(),
        num_classes: dataset.num_classes(),
        total,
        classes,
        char_length: LengthRange::from_values(dataset.posts.iter().map(|p| p.char_length)).expect("non-empty"),
        word_count: LengthRange::from_values(dataset.posts.iter().map(|p| p.word_count)).expect("non-empty"),
    })
}

impl DatasetStats {
    /// Plain-text rendering in the class / total / % / length / words layout.
    pub fn render(&self) -> String {
        let fmt = |r: &Option<LengthRange>| match r {
            Some(r) => format!("{}-{} ({:.2})", r.min, r.max, r.avg),
            None => "-".to_string(),
        };
        let mut out = format!("{} ({} samples, {} classes)\n", self.dataset, self.total, self.num_classes);
        out.push_str(&format!("{:<24} {:>6} {:>7} {:>20} {:>16}\n", "Class", "Total", "%", "Length (ave.)", "Words (ave.)"));
        for c in &self.classes {
            out.push_str(&format!(
                "{:<24} {:>6} {:>7.2} {:>20} {:>16}\n",
                c.class,
                c.count,
                c.percentage,
                fmt(&c.char_length),
                fmt(&c.word_count)
            ));
        }
        out
    }
}
