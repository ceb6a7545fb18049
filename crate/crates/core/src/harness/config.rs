//! Plain-text experiment configuration.
//!
//! ```text
//! # comment
//! [section]
//! key = value
//! ```
//!
//! Lists are comma-separated. Unknown sections or keys are errors. The
//! built-in desk-scale configuration below doubles as the schema reference.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::expand::{ExpansionPlan, WidenPlan};
use crate::models::{parse_shape, LayerSpec, Model, ModelSpec};
use crate::optim::{OptimizerConfig, OptimizerKind};
use crate::proxies::{parse_kinds, ProxyKind};
use crate::rng;

/// Name accepted by [`ExperimentConfig::load`] for the built-in configuration.
pub const DEFAULT_CONFIG_NAME: &str = "default";

pub const DEFAULT_CONFIG: &str = "\
# Desk-scale expansion experiment.

[data]
kind = synthetic-blobs
classes = 10
shape = 4x4x4
clusters = 3
spread = 1.6
train = 1000
val = 500
seed = 0

[model]
arch = C1(8)-C2(16)-MaxPool(2)-F1(32)

[optimizer]
kind = adamw
lr = 0.001
beta1 = 0.9
beta2 = 0.999
eps = 1e-8
weight_decay = 0.0001

[training]
batch_size = 128
patience = 5
max_epochs = 60

[experiment]
seed = 0
seeds = 0, 1, 2
epochs = 30
widen_layer = 0
factors = 1.25, 1.5, 2, 3, 4
split_noise = 0.1
preservation_tolerance = 0
proxies = gradnorm, jacov, snip, grasp, synflow, sotl_e
parallel = false

[manifold]
q = 0.4
n = 200
metric_stride = 5
metric_batch_index = 0
sweep_q = 0.05, 0.1, 0.2, 0.4
sweep_n = 50, 100, 250, 500, 1000

[output]
dir = out
";

#[derive(Clone, Debug, PartialEq)]
pub enum DataKind {
    SyntheticBlobs,
    CifarBinary,
}

impl fmt::Display for DataKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DataKind::SyntheticBlobs => "synthetic-blobs",
            DataKind::CifarBinary => "cifar-binary",
        })
    }
}

/// Where examples come from and how many go to each split.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSource {
    pub kind: DataKind,
    pub classes: usize,
    pub shape: Vec<usize>,
    /// Gaussian clusters per class (synthetic only).
    pub clusters: usize,
    /// Within-cluster standard deviation relative to the unit-variance centers.
    pub spread: f64,
    pub train: usize,
    pub val: usize,
    pub seed: u64,
    /// CIFAR binary batch files, concatenated in order.
    pub paths: Vec<PathBuf>,
}

impl DatasetSource {
    pub fn blobs(classes: usize, shape: Vec<usize>, train: usize, val: usize, seed: u64) -> Self {
        Self {
            kind: DataKind::SyntheticBlobs,
            classes,
            shape,
            clusters: 1,
            spread: 1.0,
            train,
            val,
            seed,
            paths: Vec::new(),
        }
    }
}

/// One candidate expansion, named for CSV output.
#[derive(Clone, Debug, PartialEq)]
pub enum PlanSpec {
    Widen { layer: usize, factor: f64 },
    Deepen { after: usize },
}

impl PlanSpec {
    pub fn id(&self) -> String {
        match self {
            PlanSpec::Widen { layer, factor } => format!("L{layer}x{factor}"),
            PlanSpec::Deepen { after } => format!("deepen{after}"),
        }
    }

    /// Concrete plan for `model`, with duplication randomness keyed by `seed`.
    pub fn resolve(&self, model: &Model, seed: u64, split_noise: f64) -> Result<ExpansionPlan> {
        match *self {
            PlanSpec::Widen { layer, factor } => Ok(ExpansionPlan::Widen(
                WidenPlan::by_factor(model, layer, factor, seed)?.with_split_noise(split_noise),
            )),
            PlanSpec::Deepen { after } => Ok(ExpansionPlan::Deepen { after }),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub data: DatasetSource,
    pub arch: String,
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub experiment_seed: u64,
    pub seeds: Vec<u64>,
    /// Post-expansion epochs `T`.
    pub epochs: usize,
    pub widen_layer: usize,
    pub factors: Vec<f64>,
    pub deepen: Vec<usize>,
    pub split_noise: f64,
    pub preservation_tolerance: f64,
    pub proxies: Vec<ProxyKind>,
    pub parallel: bool,
    pub q: f64,
    pub n: usize,
    /// Permuted layer; defaults to the widened layer.
    pub manifold_layer: Option<usize>,
    pub metric_stride: usize,
    pub metric_batch_index: usize,
    pub sweep_q: Vec<f64>,
    pub sweep_n: Vec<usize>,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        DEFAULT_CONFIG.parse().expect("built-in config parses")
    }
}

impl ExperimentConfig {
    /// Reads a config file, or the built-in one when `path` is `default`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if path == Path::new(DEFAULT_CONFIG_NAME) {
            return Ok(Self::default());
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        text.parse()
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        ModelSpec::from_arch(&self.arch, self.data.shape.clone(), self.data.classes)
    }

    pub fn plans(&self) -> Vec<PlanSpec> {
        self.factors
            .iter()
            .map(|&factor| PlanSpec::Widen {
                layer: self.widen_layer,
                factor,
            })
            .chain(self.deepen.iter().map(|&after| PlanSpec::Deepen { after }))
            .collect()
    }

    pub fn permutation_layer(&self) -> usize {
        self.manifold_layer.unwrap_or(self.widen_layer)
    }

    /// Stream for one purpose within a `(seed, plan)` cell.
    pub fn cell_seed(&self, seed: u64, plan: Option<&str>, purpose: &str) -> u64 {
        let plan_tag = plan.map_or(0, rng::tag);
        rng::derive_seed(self.experiment_seed, &[seed, plan_tag, rng::tag(purpose)])
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(Error::Config { line: 0, reason });
        if self.epochs == 0 {
            return bad("experiment.epochs must be >= 1".into());
        }
        if self.seeds.is_empty() {
            return bad("experiment.seeds is empty".into());
        }
        if self.batch_size == 0 || self.metric_stride == 0 || self.n == 0 {
            return bad("batch_size, metric_stride and n must be >= 1".into());
        }
        if !(self.q > 0.0 && self.q < 1.0) {
            return bad(format!("manifold.q = {} outside (0, 1)", self.q));
        }
        if self.sweep_q.iter().any(|&q| !(q > 0.0 && q < 1.0)) || self.sweep_n.contains(&0) {
            return bad("sweep grid values out of range".into());
        }
        if self.factors.iter().any(|&f| !(f >= 1.0 && f.is_finite())) {
            return bad("expansion factors must be >= 1".into());
        }
        let model = Model::new(self.model_spec()?)?;
        for layer in [self.widen_layer, self.permutation_layer()] {
            if layer >= model.spec().layers.len() {
                return bad(format!("layer {layer} does not exist in {}", model.spec().arch_string()));
            }
            model.layer_handle(layer)?;
        }
        for &after in &self.deepen {
            if model.spec().layers.get(after) != Some(&LayerSpec::Relu) {
                return bad(format!("deepen target {after} is not a ReLU layer"));
            }
        }
        if self.data.kind == DataKind::CifarBinary && self.data.paths.is_empty() {
            return bad("cifar-binary data needs data.path".into());
        }
        Ok(())
    }
}

fn join<T: fmt::Display>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(", ")
}

impl fmt::Display for ExperimentConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let d = &self.data;
        let shape: Vec<String> = d.shape.iter().map(usize::to_string).collect();
        writeln!(f, "[data]")?;
        writeln!(f, "kind = {}", d.kind)?;
        writeln!(f, "classes = {}", d.classes)?;
        writeln!(f, "shape = {}", shape.join("x"))?;
        writeln!(f, "clusters = {}", d.clusters)?;
        writeln!(f, "spread = {}", d.spread)?;
        writeln!(f, "train = {}", d.train)?;
        writeln!(f, "val = {}", d.val)?;
        writeln!(f, "seed = {}", d.seed)?;
        if !d.paths.is_empty() {
            let paths: Vec<String> = d.paths.iter().map(|p| p.display().to_string()).collect();
            writeln!(f, "path = {}", paths.join(", "))?;
        }
        writeln!(f, "\n[model]\narch = {}", self.arch)?;
        let o = &self.optimizer;
        writeln!(f, "\n[optimizer]")?;
        writeln!(f, "kind = {}", o.kind)?;
        writeln!(f, "lr = {}", o.lr)?;
        writeln!(f, "beta1 = {}", o.beta1)?;
        writeln!(f, "beta2 = {}", o.beta2)?;
        writeln!(f, "eps = {:e}", o.eps)?;
        writeln!(f, "weight_decay = {}", o.weight_decay)?;
        writeln!(f, "\n[training]")?;
        writeln!(f, "batch_size = {}", self.batch_size)?;
        writeln!(f, "patience = {}", self.patience)?;
        writeln!(f, "max_epochs = {}", self.max_epochs)?;
        writeln!(f, "\n[experiment]")?;
        writeln!(f, "seed = {}", self.experiment_seed)?;
        writeln!(f, "seeds = {}", join(&self.seeds))?;
        writeln!(f, "epochs = {}", self.epochs)?;
        writeln!(f, "widen_layer = {}", self.widen_layer)?;
        writeln!(f, "factors = {}", join(&self.factors))?;
        if !self.deepen.is_empty() {
            writeln!(f, "deepen = {}", join(&self.deepen))?;
        }
        writeln!(f, "split_noise = {}", self.split_noise)?;
        writeln!(f, "preservation_tolerance = {}", self.preservation_tolerance)?;
        writeln!(f, "proxies = {}", join(&self.proxies))?;
        writeln!(f, "parallel = {}", self.parallel)?;
        writeln!(f, "\n[manifold]")?;
        writeln!(f, "q = {}", self.q)?;
        writeln!(f, "n = {}", self.n)?;
        if let Some(l) = self.manifold_layer {
            writeln!(f, "layer = {l}")?;
        }
        writeln!(f, "metric_stride = {}", self.metric_stride)?;
        writeln!(f, "metric_batch_index = {}", self.metric_batch_index)?;
        writeln!(f, "sweep_q = {}", join(&self.sweep_q))?;
        writeln!(f, "sweep_n = {}", join(&self.sweep_n))?;
        writeln!(f, "\n[output]\ndir = {}", self.out_dir.display())
    }
}

struct Entries {
    map: BTreeMap<String, (usize, String)>,
}

impl Entries {
    fn take(&mut self, key: &str) -> Option<(usize, String)> {
        self.map.remove(key)
    }

    fn parse<T: FromStr>(&mut self, key: &str, default: Option<T>) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        match self.take(key) {
            Some((line, v)) => v.parse().map_err(|e: T::Err| Error::Config {
                line,
                reason: format!("{key}: {e}"),
            }),
            None => default.ok_or_else(|| Error::Config {
                line: 0,
                reason: format!("missing required key {key}"),
            }),
        }
    }

    fn list<T: FromStr>(&mut self, key: &str, default: Vec<T>) -> Result<Vec<T>>
    where
        T::Err: fmt::Display,
    {
        match self.take(key) {
            Some((line, v)) => v
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse().map_err(|e: T::Err| Error::Config {
                        line,
                        reason: format!("{key}: {s:?}: {e}"),
                    })
                })
                .collect(),
            None => Ok(default),
        }
    }

    fn with_line<T>(&mut self, key: &str, f: impl FnOnce(&str) -> Result<T>) -> Result<Option<T>> {
        match self.take(key) {
            Some((line, v)) => f(&v).map(Some).map_err(|e| Error::Config {
                line,
                reason: format!("{key}: {e}"),
            }),
            None => Ok(None),
        }
    }
}

const KNOWN: &[(&str, &[&str])] = &[
    ("data", &["kind", "classes", "shape", "clusters", "spread", "train", "val", "seed", "path"]),
    ("model", &["arch"]),
    ("optimizer", &["kind", "lr", "beta1", "beta2", "eps", "weight_decay"]),
    ("training", &["batch_size", "patience", "max_epochs"]),
    (
        "experiment",
        &[
            "seed",
            "seeds",
            "epochs",
            "widen_layer",
            "factors",
            "deepen",
            "split_noise",
            "preservation_tolerance",
            "proxies",
            "parallel",
        ],
    ),
    (
        "manifold",
        &["q", "n", "layer", "metric_stride", "metric_batch_index", "sweep_q", "sweep_n"],
    ),
    ("output", &["dir"]),
];

impl FromStr for ExperimentConfig {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        let mut section: Option<&str> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(name) = content.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                let name = name.trim();
                section = Some(
                    KNOWN
                        .iter()
                        .find(|(s, _)| *s == name)
                        .map(|(s, _)| *s)
                        .ok_or_else(|| Error::Config {
                            line,
                            reason: format!("unknown section [{name}]"),
                        })?,
                );
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::Config {
                line,
                reason: format!("expected `key = value`, found {content:?}"),
            })?;
            let sec = section.ok_or_else(|| Error::Config {
                line,
                reason: "key outside of any [section]".into(),
            })?;
            let key = key.trim();
            let keys = KNOWN.iter().find(|(s, _)| *s == sec).map(|(_, k)| *k).unwrap_or(&[]);
            if !keys.contains(&key) {
                return Err(Error::Config {
                    line,
                    reason: format!("unknown key {key} in [{sec}]"),
                });
            }
            let full = format!("{sec}.{key}");
            if map.insert(full.clone(), (line, value.trim().to_string())).is_some() {
                return Err(Error::Config {
                    line,
                    reason: format!("duplicate key {full}"),
                });
            }
        }
        let mut e = Entries { map };

        let kind = e
            .with_line("data.kind", |v| match v {
                "synthetic-blobs" => Ok(DataKind::SyntheticBlobs),
                "cifar-binary" => Ok(DataKind::CifarBinary),
                other => Err(Error::invalid(format!("unknown data kind {other:?}"))),
            })?
            .unwrap_or(DataKind::SyntheticBlobs);
        let default_shape = if kind == DataKind::CifarBinary { vec![3, 32, 32] } else { vec![64] };
        let data = DatasetSource {
            classes: e.parse("data.classes", Some(10))?,
            shape: e.with_line("data.shape", parse_shape)?.unwrap_or(default_shape),
            clusters: e.parse("data.clusters", Some(1))?,
            spread: e.parse("data.spread", Some(1.0))?,
            train: e.parse("data.train", Some(1000))?,
            val: e.parse("data.val", Some(500))?,
            seed: e.parse("data.seed", Some(0))?,
            paths: e.list::<PathBuf>("data.path", Vec::new())?,
            kind,
        };
        let defaults = OptimizerConfig::default();
        let optimizer = OptimizerConfig {
            kind: e.parse::<OptimizerKind>("optimizer.kind", Some(defaults.kind))?,
            lr: e.parse("optimizer.lr", Some(defaults.lr))?,
            beta1: e.parse("optimizer.beta1", Some(defaults.beta1))?,
            beta2: e.parse("optimizer.beta2", Some(defaults.beta2))?,
            eps: e.parse("optimizer.eps", Some(defaults.eps))?,
            weight_decay: e.parse("optimizer.weight_decay", Some(defaults.weight_decay))?,
        };
        let cfg = ExperimentConfig {
            data,
            arch: e.parse("model.arch", None)?,
            optimizer,
            batch_size: e.parse("training.batch_size", Some(128))?,
            patience: e.parse("training.patience", Some(5))?,
            max_epochs: e.parse("training.max_epochs", Some(60))?,
            experiment_seed: e.parse("experiment.seed", Some(0))?,
            seeds: e.list("experiment.seeds", vec![0])?,
            epochs: e.parse("experiment.epochs", Some(30))?,
            widen_layer: e.parse("experiment.widen_layer", Some(0))?,
            factors: e.list("experiment.factors", Vec::new())?,
            deepen: e.list("experiment.deepen", Vec::new())?,
            split_noise: e.parse("experiment.split_noise", Some(0.0))?,
            preservation_tolerance: e.parse("experiment.preservation_tolerance", Some(0.0))?,
            proxies: e
                .with_line("experiment.proxies", parse_kinds)?
                .unwrap_or_else(|| ProxyKind::ALL.to_vec()),
            parallel: e.parse("experiment.parallel", Some(false))?,
            q: e.parse("manifold.q", Some(0.4))?,
            n: e.parse("manifold.n", Some(1000))?,
            manifold_layer: e.with_line("manifold.layer", |v| v.parse().map_err(|_| Error::invalid("not an integer")))?,
            metric_stride: e.parse("manifold.metric_stride", Some(5))?,
            metric_batch_index: e.parse("manifold.metric_batch_index", Some(0))?,
            sweep_q: e.list("manifold.sweep_q", vec![0.05, 0.1, 0.2, 0.4])?,
            sweep_n: e.list("manifold.sweep_n", vec![50, 100, 250, 500, 1000])?,
            out_dir: e.parse("output.dir", Some(PathBuf::from("out")))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
