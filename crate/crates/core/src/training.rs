//! Alternating WGAN-GP optimisation, checkpoints and sampling.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diff::{ParamGrads, ParameterStore, Tensor};
use crate::error::{Error, Result};
use crate::losses::{critic_loss_with_grads, generator_loss_with_grads, LossWeights};
use crate::networks::{
    CriticConfig, Generator, GeneratorConfig, SampleBatch, SchNetCritic, TypedSample,
};
use crate::structure::Element;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.0,
            beta2: 0.9,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    pub batch_size: usize,
    pub n_critic: usize,
    /// Number of generator updates.
    pub steps: usize,
    pub generator_optimizer: AdamConfig,
    pub critic_optimizer: AdamConfig,
    pub weights: LossWeights,
    pub generator: GeneratorConfig,
    pub critic: CriticConfig,
    /// Generator steps between checkpoints; 0 writes only the final one.
    pub checkpoint_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            batch_size: 32,
            n_critic: 5,
            steps: 20_000,
            generator_optimizer: AdamConfig::default(),
            critic_optimizer: AdamConfig::default(),
            weights: LossWeights::default(),
            generator: GeneratorConfig::default(),
            critic: CriticConfig::default(),
            checkpoint_interval: 1000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        if self.n_critic == 0 {
            return Err(Error::Config("n_critic must be at least 1".into()));
        }
        for opt in [&self.generator_optimizer, &self.critic_optimizer] {
            let ok = opt.learning_rate > 0.0
                && (0.0..1.0).contains(&opt.beta1)
                && (0.0..1.0).contains(&opt.beta2)
                && opt.epsilon > 0.0;
            if !ok {
                return Err(Error::Config("invalid optimizer hyperparameters".into()));
            }
        }
        if self.generator.n_types != self.critic.n_types {
            return Err(Error::Config("generator and critic disagree on n_types".into()));
        }
        self.weights.validate()?;
        self.generator.validate()?;
        self.critic.validate()
    }
}

/// Adaptive-moment optimiser with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    t: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// Descends along `grads`. Parameters without a gradient are left
    /// untouched.
    pub fn step(&mut self, params: &mut ParameterStore, grads: &ParamGrads) -> Result<()> {
        self.t += 1;
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for (name, g) in grads {
            let p = params
                .get_mut(name)
                .ok_or_else(|| Error::InvalidInput(format!("no parameter {name}")))?;
            if p.numel() != g.numel() {
                return Err(Error::dim(format!("gradient of {name} has wrong size")));
            }
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.numel()]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.numel()]);
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = c.beta1 * *mi + (1.0 - c.beta1) * gi;
                *vi = c.beta2 * *vi + (1.0 - c.beta2) * gi * gi;
                let mh = *mi / bc1;
                let vh = *vi / bc2;
                *w -= c.learning_rate * mh / (vh.sqrt() + c.epsilon);
            }
        }
        Ok(())
    }
}

/// One row of the metrics log, written after every generator update.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: usize,
    pub critic_loss: f64,
    pub generator_loss: f64,
    pub wasserstein_estimate: f64,
    pub gp: f64,
    pub drift: f64,
    pub types: f64,
    pub repulsion: f64,
    pub edm: f64,
    pub rank: f64,
}

pub const METRICS_HEADER: &str =
    "step,critic_loss,generator_loss,wasserstein_estimate,gp,drift,types,repulsion,edm,rank";

impl MetricsRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
            self.step,
            self.critic_loss,
            self.generator_loss,
            self.wasserstein_estimate,
            self.gp,
            self.drift,
            self.types,
            self.repulsion,
            self.edm,
            self.rank
        )
    }
}

pub const CHECKPOINT_FORMAT: &str = "edmgan-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Serialized model state. Parameters are stored by name with their shape
/// and row-major values; floats round-trip exactly through JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub step: usize,
    /// Element named by each generator type channel.
    pub types: Vec<Element>,
    pub generator_config: GeneratorConfig,
    pub critic_config: CriticConfig,
    pub generator: ParameterStore,
    pub critic: ParameterStore,
}

impl Checkpoint {
    pub fn new(step: usize, types: Vec<Element>, generator: &Generator, critic: &SchNetCritic) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            step,
            types,
            generator_config: generator.config.clone(),
            critic_config: critic.config.clone(),
            generator: generator.params.clone(),
            critic: critic.params.clone(),
        }
    }

    /// Writes to a temporary sibling and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("json.tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            serde_json::to_writer(&mut f, self)?;
            f.write_all(b"\n")?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        let format = value.get("format").and_then(|v| v.as_str());
        let version = value.get("version").and_then(|v| v.as_u64());
        if format != Some(CHECKPOINT_FORMAT) {
            return Err(Error::Version(format!("{} is not a checkpoint", path.display())));
        }
        if version != Some(u64::from(CHECKPOINT_VERSION)) {
            return Err(Error::Version(format!(
                "checkpoint version {version:?}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let ck: Checkpoint = serde_json::from_value(value)?;
        if ck.types.len() != ck.generator_config.n_types {
            return Err(Error::Version("type names do not match the generator".into()));
        }
        Ok(ck)
    }

    pub fn generator(&self) -> Result<Generator> {
        Generator::from_parts(self.generator_config.clone(), self.generator.clone())
    }

    pub fn critic(&self) -> Result<SchNetCritic> {
        SchNetCritic::from_parts(self.critic_config.clone(), self.critic.clone())
    }
}

fn normal_tensor<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::new(vec![rows, cols], data).expect("shape matches data")
}

/// `count` samples from the generator, with noise drawn from `seed`.
pub fn sample(generator: &Generator, count: usize, seed: u64) -> Result<Vec<TypedSample>> {
    const CHUNK: usize = 256;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let m = CHUNK.min(count - out.len());
        let z = normal_tensor(&mut rng, m, generator.config.noise_dim);
        out.extend(generator.generate(&z)?);
    }
    Ok(out)
}

pub fn sample_checkpoint(ck: &Checkpoint, count: usize, seed: u64) -> Result<Vec<TypedSample>> {
    sample(&ck.generator()?, count, seed)
}

/// Training state; one call to [`Trainer::step`] performs `n_critic`
/// critic updates followed by one generator update.
pub struct Trainer {
    pub config: TrainConfig,
    pub generator: Generator,
    pub critic: SchNetCritic,
    pub step: usize,
    gen_opt: Adam,
    critic_opt: Adam,
    rng: ChaCha8Rng,
    data: Vec<TypedSample>,
    t_ref: DMatrix<f64>,
    types: Vec<Element>,
}

impl Trainer {
    /// `r_min` resolves the repulsion target when the config leaves it
    /// open; `types` names the type channels.
    pub fn new(
        mut config: TrainConfig,
        data: Vec<TypedSample>,
        types: Vec<Element>,
        r_min: Option<f64>,
    ) -> Result<Self> {
        if config.weights.r_min.is_none() {
            config.weights.r_min = r_min;
        }
        config.validate()?;
        let first = data
            .first()
            .ok_or_else(|| Error::InvalidInput("training set is empty".into()))?;
        let t_ref = first.t.clone();
        if first.n() != config.generator.n_points || first.n_types() != config.generator.n_types {
            return Err(Error::Config(format!(
                "data has {} points and {} types, generator expects {} and {}",
                first.n(),
                first.n_types(),
                config.generator.n_points,
                config.generator.n_types
            )));
        }
        if data.iter().any(|s| s.t != t_ref) {
            return Err(Error::InvalidInput(
                "training samples must share one type assignment".into(),
            ));
        }
        if types.len() != config.generator.n_types {
            return Err(Error::Config("one type name per type channel required".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let generator = Generator::new(config.generator.clone(), &mut rng)?;
        let critic = SchNetCritic::new(config.critic.clone(), &mut rng)?;
        Ok(Self {
            gen_opt: Adam::new(config.generator_optimizer.clone()),
            critic_opt: Adam::new(config.critic_optimizer.clone()),
            config,
            generator,
            critic,
            step: 0,
            rng,
            data,
            t_ref,
            types,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(self.step, self.types.clone(), &self.generator, &self.critic)
    }

    fn real_batch(&mut self) -> Result<SampleBatch> {
        let m = self.config.batch_size;
        let picks: Vec<&TypedSample> = (0..m)
            .map(|_| &self.data[self.rng.random_range(0..self.data.len())])
            .collect();
        SampleBatch::from_samples(&picks)
    }

    fn noise(&mut self) -> Tensor {
        normal_tensor(&mut self.rng, self.config.batch_size, self.config.generator.noise_dim)
    }

    pub fn step(&mut self) -> Result<MetricsRow> {
        let m = self.config.batch_size;
        let mut row = MetricsRow {
            step: self.step + 1,
            ..MetricsRow::default()
        };
        for _ in 0..self.config.n_critic {
            let real = self.real_batch()?;
            let z = self.noise();
            let fake = self.generator.generate_batch(&z)?;
            let alphas: Vec<f64> = (0..m).map(|_| self.rng.random::<f64>()).collect();
            let (parts, grads) = critic_loss_with_grads(
                &self.critic,
                &real,
                &fake,
                &alphas,
                &self.config.weights,
                true,
            )
            .map_err(|e| at_step(e, row.step))?;
            self.critic_opt
                .step(&mut self.critic.params, &grads.expect("requested gradients"))?;
            row.critic_loss = parts.total;
            row.wasserstein_estimate = parts.wasserstein;
            row.gp = parts.gp;
            row.drift = parts.drift;
        }
        let z = self.noise();
        let (parts, grads) = generator_loss_with_grads(
            &self.generator,
            &self.critic,
            &z,
            &self.config.weights,
            &self.t_ref,
            true,
        )
        .map_err(|e| at_step(e, row.step))?;
        self.gen_opt
            .step(&mut self.generator.params, &grads.expect("requested gradients"))?;
        row.generator_loss = parts.total;
        row.types = parts.types;
        row.repulsion = parts.repulsion;
        row.edm = parts.edm;
        row.rank = parts.rank;
        let finite = [
            row.critic_loss,
            row.generator_loss,
            row.wasserstein_estimate,
        ]
        .iter()
        .all(|v| v.is_finite());
        let params_ok = self.generator.params.iter().all(|(_, t)| t.is_finite())
            && self.critic.params.iter().all(|(_, t)| t.is_finite());
        if !finite || !params_ok {
            return Err(Error::numeric(format!("non-finite loss at step {}", row.step)));
        }
        self.step += 1;
        Ok(row)
    }
}

fn at_step(e: Error, step: usize) -> Error {
    match e {
        Error::Numeric(msg) => Error::Numeric(format!("step {step}: {msg}")),
        other => other,
    }
}

/// Files produced by [`train`] in its output directory.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub metrics: PathBuf,
    pub checkpoint: PathBuf,
}

impl TrainOutput {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            metrics: dir.join("metrics.csv"),
            checkpoint: dir.join("checkpoint.json"),
        }
    }
}

pub struct TrainOutcome {
    pub trainer: Trainer,
    pub metrics: Vec<MetricsRow>,
}

/// Runs `config.steps` generator updates. With `out` set, the metrics log
/// is written as it grows and checkpoints are saved at the configured
/// interval and at the end; on a non-finite loss the last checkpoint on
/// disk is left in place.
pub fn train(
    config: TrainConfig,
    data: Vec<TypedSample>,
    types: Vec<Element>,
    r_min: Option<f64>,
    out: Option<&TrainOutput>,
) -> Result<TrainOutcome> {
    let steps = config.steps;
    let interval = config.checkpoint_interval;
    let mut trainer = Trainer::new(config, data, types, r_min)?;
    let mut log = match out {
        Some(o) => {
            if let Some(parent) = o.metrics.parent() {
                fs::create_dir_all(parent)?;
            }
            let mut f = std::io::BufWriter::new(fs::File::create(&o.metrics)?);
            writeln!(f, "{METRICS_HEADER}")?;
            trainer.checkpoint().save(&o.checkpoint)?;
            Some(f)
        }
        None => None,
    };
    let mut metrics = Vec::with_capacity(steps);
    for _ in 0..steps {
        let row = trainer.step()?;
        if let Some(f) = log.as_mut() {
            writeln!(f, "{}", row.csv_line())?;
        }
        if row.step % 100 == 0 {
            log::info!(
                "step {} critic {:.4} generator {:.4} w {:.4}",
                row.step,
                row.critic_loss,
                row.generator_loss,
                row.wasserstein_estimate
            );
        }
        metrics.push(row);
        if let (Some(o), Some(f)) = (out, log.as_mut()) {
            if interval > 0 && row.step % interval == 0 {
                f.flush()?;
                trainer.checkpoint().save(&o.checkpoint)?;
            }
        }
    }
    if let (Some(o), Some(mut f)) = (out, log) {
        f.flush()?;
        trainer.checkpoint().save(&o.checkpoint)?;
    }
    Ok(TrainOutcome { trainer, metrics })
}
