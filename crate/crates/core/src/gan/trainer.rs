use rand_distr::{Distribution, StandardNormal};

use super::history::{StepRecord, TrainHistory};
use super::loss::{discriminator_loss, generator_loss};
use crate::autodiff::Graph;
use crate::data::dataset::{batch_indices, batches_per_epoch, tile_grid, ImageDataset, ImageGrid};
use crate::error::{Error, Result};
use crate::nn::{arch, Adam, AdamConfig, Checkpoint, Moments, Network, ParameterSet};
use crate::rng::{derive_seed, stream_rng, Stream};
use crate::tensor::Tensor;

/// Default number of images in a sample grid.
pub const DEFAULT_SAMPLE_COUNT: usize = 20;
/// Forward passes for sampling run in chunks of this many images.
const SAMPLE_CHUNK: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct GanConfig {
    pub latent_dim: usize,
    pub batch_size: usize,
    pub steps: u64,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Steps between sample grids; 0 disables them.
    pub sample_every: u64,
    pub sample_count: usize,
    pub image_size: usize,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            latent_dim: arch::DEFAULT_LATENT_DIM,
            batch_size: 32,
            steps: 2000,
            seed: 0,
            adam: AdamConfig::default(),
            sample_every: 500,
            sample_count: DEFAULT_SAMPLE_COUNT,
            image_size: arch::DEFAULT_IMAGE_SIZE,
        }
    }
}

impl GanConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.latent_dim == 0 {
            return bad("latent_dim must be >= 1".into());
        }
        if self.sample_count == 0 {
            return bad("sample_count must be >= 1".into());
        }
        arch::stage_count(self.image_size)?;
        let a = &self.adam;
        if !(a.lr > 0.0) || !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return bad(format!("invalid Adam settings {a:?}"));
        }
        Ok(())
    }
}

/// `[m, latent_dim]` i.i.d. standard normal draws, a pure function of `(seed, stream, index)`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseBatch(pub Tensor<f32>);

impl NoiseBatch {
    pub fn draw(seed: u64, stream: Stream, index: u64, m: usize, latent_dim: usize) -> Result<Self> {
        let mut rng = stream_rng(seed, stream, index);
        let t = Tensor::from_fn([m, latent_dim], |_| StandardNormal.sample(&mut rng))?;
        Ok(Self(t))
    }
}

/// Generator images `[n, 1, S, S]` from the sampling stream of `seed`.
pub fn generate(generator: &Network, n: usize, seed: u64) -> Result<Tensor<f32>> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be >= 1".into()));
    }
    let latent = generator.input_shape().iter().product();
    let z = NoiseBatch::draw(seed, Stream::Sample, 0, n, latent)?.0;
    let idx: Vec<usize> = (0..n).collect();
    let parts = idx
        .chunks(SAMPLE_CHUNK)
        .map(|c| generator.predict(&z.gather_outer(c)?))
        .collect::<Result<Vec<_>>>()?;
    let all: Vec<f32> = parts.into_iter().flat_map(Tensor::into_data).collect();
    let mut shape = vec![n];
    shape.extend_from_slice(generator.output_shape());
    Tensor::new(shape, all)
}

/// `n` generated images tiled five to a row and denormalized to u8.
pub fn sample_images(generator: &Network, n: usize, seed: u64) -> Result<ImageGrid> {
    tile_grid(&generate(generator, n, seed)?)
}

fn check_finite(what: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("{what} = {v}")))
    }
}

/// Both networks with their optimizers and the number of completed steps.
#[derive(Clone, Debug)]
pub struct Trainer {
    config: GanConfig,
    generator: Network,
    discriminator: Network,
    g_opt: Adam,
    d_opt: Adam,
    step: u64,
}

impl Trainer {
    /// Default architectures initialized from the run seed.
    pub fn new(config: GanConfig) -> Result<Self> {
        config.validate()?;
        let mut generator = arch::generator(config.latent_dim, config.image_size)?;
        let mut discriminator = arch::discriminator(config.image_size)?;
        generator.init_params(derive_seed(config.seed, Stream::GeneratorInit, 0));
        discriminator.init_params(derive_seed(config.seed, Stream::DiscriminatorInit, 0));
        Self::with_networks(config, generator, discriminator)
    }

    /// Uses caller-supplied networks as-is. The generator's output shape must match the
    /// discriminator's input shape.
    pub fn with_networks(config: GanConfig, generator: Network, discriminator: Network) -> Result<Self> {
        if generator.output_shape() != discriminator.input_shape() {
            return Err(Error::ShapeMismatch {
                op: "trainer",
                lhs: generator.output_shape().to_vec(),
                rhs: discriminator.input_shape().to_vec(),
            });
        }
        if generator.input_shape() != [config.latent_dim] {
            return Err(Error::InvalidArgument(format!(
                "generator input {:?} does not match latent_dim {}",
                generator.input_shape(),
                config.latent_dim
            )));
        }
        let g_opt = Adam::new(config.adam, &generator);
        let d_opt = Adam::new(config.adam, &discriminator);
        Ok(Self {
            config,
            generator,
            discriminator,
            g_opt,
            d_opt,
            step: 0,
        })
    }

    pub fn config(&self) -> &GanConfig {
        &self.config
    }

    pub fn generator(&self) -> &Network {
        &self.generator
    }

    pub fn discriminator(&self) -> &Network {
        &self.discriminator
    }

    /// Completed steps.
    pub fn step(&self) -> u64 {
        self.step
    }

    fn check_batch(&self, real: &Tensor<f32>) -> Result<()> {
        let s = real.shape();
        if s.len() != self.discriminator.input_shape().len() + 1 || s[1..] != *self.discriminator.input_shape() {
            let mut expected = vec![s.first().copied().unwrap_or(0)];
            expected.extend_from_slice(self.discriminator.input_shape());
            return Err(Error::ShapeMismatch {
                op: "train_step",
                lhs: s.to_vec(),
                rhs: expected,
            });
        }
        if let Some(v) = real.data().iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!("real batch value {v} outside [-1, 1]")));
        }
        Ok(())
    }

    /// One discriminator update with generator outputs as constants.
    /// Returns `(d_loss, mean D(x), mean D(G(z)))` measured before the update.
    pub fn discriminator_step(&mut self, real: &Tensor<f32>) -> Result<(f64, f64, f64)> {
        self.check_batch(real)?;
        let m = real.shape()[0];
        let z = NoiseBatch::draw(self.config.seed, Stream::DiscriminatorNoise, self.step, m, self.config.latent_dim)?;
        let fake = self.generator.predict(&z.0)?;

        let mut g = Graph::new();
        let params = self.discriminator.bind(&mut g, true);
        let xr = g.constant(real.clone());
        let xf = g.constant(fake);
        let d_real = self.discriminator.forward(&mut g, &params, xr)?;
        let d_fake = self.discriminator.forward(&mut g, &params, xf)?;
        let loss = discriminator_loss(&mut g, d_real, d_fake)?;
        g.backward(loss)?;

        let d_loss = check_finite("d_loss", g.value(loss).data()[0].into())?;
        let real_mean = g.value(d_real).mean_value();
        let fake_mean = g.value(d_fake).mean_value();
        self.discriminator.zero_grad();
        self.discriminator.accumulate_grads(&g, &params)?;
        self.d_opt.step(&mut self.discriminator)?;
        Ok((d_loss, real_mean, fake_mean))
    }

    /// One generator update through a frozen discriminator on fresh noise.
    pub fn generator_step(&mut self, m: usize) -> Result<f64> {
        let z = NoiseBatch::draw(self.config.seed, Stream::GeneratorNoise, self.step, m, self.config.latent_dim)?;
        let mut g = Graph::new();
        let gen_params = self.generator.bind(&mut g, true);
        let disc_params = self.discriminator.bind(&mut g, false);
        let zv = g.constant(z.0);
        let fake = self.generator.forward(&mut g, &gen_params, zv)?;
        let d_fake = self.discriminator.forward(&mut g, &disc_params, fake)?;
        let loss = generator_loss(&mut g, d_fake)?;
        g.backward(loss)?;

        let g_loss = check_finite("g_loss", g.value(loss).data()[0].into())?;
        self.generator.zero_grad();
        self.generator.accumulate_grads(&g, &gen_params)?;
        self.g_opt.step(&mut self.generator)?;
        Ok(g_loss)
    }

    /// Discriminator phase, then generator phase, on one real batch.
    pub fn train_step(&mut self, real: &Tensor<f32>) -> Result<StepRecord> {
        let (d_loss, d_real_mean, d_fake_mean) = self.discriminator_step(real)?;
        let g_loss = self.generator_step(real.shape()[0])?;
        self.step += 1;
        Ok(StepRecord {
            step: self.step,
            d_loss,
            g_loss,
            d_real_mean,
            d_fake_mean,
        })
    }

    /// The real batch used at a given (0-based) step.
    pub fn batch_for_step(&self, dataset: &ImageDataset, step: u64) -> Result<Tensor<f32>> {
        let per_epoch = batches_per_epoch(dataset.len(), self.config.batch_size)? as u64;
        let epoch = step / per_epoch;
        let idx = batch_indices(dataset.len(), self.config.batch_size, self.config.seed, epoch)?;
        dataset.images().gather_outer(&idx[(step % per_epoch) as usize])
    }

    /// Trains until `config.steps` steps are complete. `on_step` runs after every step and
    /// receives the trainer state together with the step's record.
    pub fn train(
        &mut self,
        dataset: &ImageDataset,
        mut on_step: impl FnMut(&Trainer, &StepRecord) -> Result<()>,
    ) -> Result<TrainHistory> {
        if dataset.image_size() != self.config.image_size {
            return Err(Error::InvalidArgument(format!(
                "dataset images are {}x{0}, config expects {}",
                dataset.image_size(),
                self.config.image_size
            )));
        }
        let mut history = TrainHistory::default();
        if self.step < self.config.steps {
            batches_per_epoch(dataset.len(), self.config.batch_size)?;
        }
        while self.step < self.config.steps {
            let batch = self.batch_for_step(dataset, self.step)?;
            let record = self.train_step(&batch)?;
            history.push(record)?;
            if self.config.sample_every > 0 && record.step % self.config.sample_every == 0 {
                history.snapshots.push(record.step);
            }
            on_step(self, &record)?;
        }
        Ok(history)
    }

    pub fn sample(&self, n: usize, seed: u64) -> Result<ImageGrid> {
        sample_images(&self.generator, n, seed)
    }

    /// Parameters of both networks, optimizer moments, the step count and shape metadata.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint::new();
        for net in [&self.generator, &self.discriminator] {
            for (name, t) in net.parameters().entries {
                ckpt.push(name, t);
            }
        }
        for (net, opt) in [(&self.generator, &self.g_opt), (&self.discriminator, &self.d_opt)] {
            let params = net.parameters();
            for mom in opt.moments() {
                let shape = params.get(&mom.name).expect("moment names follow parameters").shape().to_vec();
                ckpt.push(format!("opt.m.{}", mom.name), Tensor::new(shape.clone(), mom.m.clone()).expect("moment shape"));
                ckpt.push(format!("opt.v.{}", mom.name), Tensor::new(shape, mom.v.clone()).expect("moment shape"));
            }
        }
        ckpt.push("opt.t", Tensor::new([1], vec![self.step as f32]).expect("scalar"));
        ckpt.push("meta.latent_dim", Tensor::new([1], vec![self.config.latent_dim as f32]).expect("scalar"));
        ckpt.push("meta.image_size", Tensor::new([1], vec![self.config.image_size as f32]).expect("scalar"));
        ckpt
    }

    /// Restores a trainer saved by [`checkpoint`](Self::checkpoint). Shape metadata must match `config`.
    pub fn from_checkpoint(config: GanConfig, ckpt: &Checkpoint) -> Result<Self> {
        check_meta(&config, ckpt)?;
        let mut trainer = Self::new(config)?;
        let set = ParameterSet {
            entries: ckpt.entries.clone(),
        };
        trainer.generator.load_parameters(&set)?;
        trainer.discriminator.load_parameters(&set)?;
        let t = ckpt.scalar_u64("opt.t")?;
        let moments = |net: &Network| -> Result<Vec<Moments>> {
            net.param_names()
                .into_iter()
                .map(|name| {
                    let m = ckpt.require(&format!("opt.m.{name}"))?.data().to_vec();
                    let v = ckpt.require(&format!("opt.v.{name}"))?.data().to_vec();
                    Ok(Moments { name, m, v })
                })
                .collect()
        };
        let (gm, dm) = (moments(&trainer.generator)?, moments(&trainer.discriminator)?);
        trainer.g_opt.restore(t, gm)?;
        trainer.d_opt.restore(t, dm)?;
        trainer.step = t;
        Ok(trainer)
    }
}

fn check_meta(config: &GanConfig, ckpt: &Checkpoint) -> Result<()> {
    for (name, want) in [("meta.latent_dim", config.latent_dim), ("meta.image_size", config.image_size)] {
        let got = ckpt.scalar_u64(name)?;
        if got != want as u64 {
            return Err(Error::Format(format!("checkpoint {name} is {got}, config has {want}")));
        }
    }
    Ok(())
}

/// Rebuilds the default generator stored in a checkpoint.
pub fn load_generator(ckpt: &Checkpoint) -> Result<Network> {
    let latent = ckpt.scalar_u64("meta.latent_dim")? as usize;
    let size = ckpt.scalar_u64("meta.image_size")? as usize;
    let mut generator = arch::generator(latent, size)?;
    generator.load_parameters(&ParameterSet {
        entries: ckpt.entries.clone(),
    })?;
    Ok(generator)
}
