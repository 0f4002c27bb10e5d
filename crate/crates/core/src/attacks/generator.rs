use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::oracle::{OracleHandle, OracleMode};
use super::replay::{AsrCount, ModifiableMask};
use crate::authenticator::Ensemble;
use crate::dataio::{
    windows_to_tensor, Batch, DriverId, Window, BATCH_SIZE, WINDOW_SIZE, WINDOW_STEP,
};
use crate::netkernels::{
    layer_backward, layer_forward, optimizer_step, sigmoid, softmax_xent_batch, Activation, Cache,
    Gradients, LayerParams, OptimState, Tensor,
};
use crate::rng::{stage_rng, StageRng};
use crate::{Error, Result};

/// Seconds covered by one crafted batch.
pub const SLICE_SECONDS: usize = (BATCH_SIZE - 1) * WINDOW_STEP + WINDOW_SIZE;

/// Maps a latent vector to a 40-second timeline of modifiable signals in
/// `[0, 1]`. A shared tanh trunk feeds two heads: one per-signal level held
/// for the whole slice and one per-second detail, summed and squashed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorModel {
    pub latent_dim: usize,
    pub n_outputs: usize,
    /// Trunk, level head, detail head.
    pub layers: Vec<LayerParams>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub latent_dim: usize,
    pub hidden: usize,
    /// Init gain of the level head; large values spread untrained outputs
    /// across the unit interval.
    pub level_gain: f64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec {
            latent_dim: 64,
            hidden: 64,
            level_gain: 6.0,
        }
    }
}

/// A generated 40 x n timeline, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct CraftedSlice {
    pub n_outputs: usize,
    pub values: Vec<f64>,
}

impl CraftedSlice {
    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.n_outputs..(t + 1) * self.n_outputs]
    }

    /// The slice cut into the batch's overlapping windows: `[4, 16, n]`.
    pub fn windows(&self) -> Tensor {
        let n = self.n_outputs;
        let mut data = Vec::with_capacity(BATCH_SIZE * WINDOW_SIZE * n);
        for w in 0..BATCH_SIZE {
            for t in 0..WINDOW_SIZE {
                data.extend_from_slice(self.row(w * WINDOW_STEP + t));
            }
        }
        Tensor::from_vec(&[BATCH_SIZE, WINDOW_SIZE, n], data).expect("slice layout")
    }
}

pub struct GeneratorCache {
    trunk: Cache,
    level: Cache,
    detail: Cache,
    output: Vec<f64>,
    rows: usize,
}

impl GeneratorModel {
    pub fn new(spec: &GeneratorSpec, n_outputs: usize, seed: u64) -> Self {
        let mut rng = stage_rng(seed, "generator/init");
        let h = spec.hidden;
        GeneratorModel {
            latent_dim: spec.latent_dim,
            n_outputs,
            layers: vec![
                LayerParams::dense(spec.latent_dim, h, Activation::Tanh, 1.0, &mut rng),
                LayerParams::dense(
                    h,
                    n_outputs,
                    Activation::Identity,
                    spec.level_gain,
                    &mut rng,
                ),
                LayerParams::dense(
                    h,
                    SLICE_SECONDS * n_outputs,
                    Activation::Identity,
                    1.0,
                    &mut rng,
                ),
            ],
        }
    }

    /// Outputs `[N, 40 * n]` for latents `[N, latent_dim]`.
    pub fn forward(&self, latents: &Tensor) -> Result<(Tensor, GeneratorCache)> {
        if latents.rank() != 2 || latents.dim(1) != self.latent_dim {
            return Err(Error::LatentLength {
                expected: self.latent_dim,
                got: latents.shape().last().copied().unwrap_or(0),
            });
        }
        let rows = latents.dim(0);
        let n = self.n_outputs;
        let trunk = layer_forward(&self.layers[0], latents, None)?;
        let level = layer_forward(&self.layers[1], &trunk.output, None)?;
        let detail = layer_forward(&self.layers[2], &trunk.output, None)?;
        let width = SLICE_SECONDS * n;
        let mut out = Vec::with_capacity(rows * width);
        for r in 0..rows {
            let lv = &level.output.data()[r * n..(r + 1) * n];
            let dt = &detail.output.data()[r * width..(r + 1) * width];
            for (i, d) in dt.iter().enumerate() {
                out.push(sigmoid(lv[i % n] + d));
            }
        }
        let output = Tensor::from_vec(&[rows, width], out.clone())?;
        Ok((
            output,
            GeneratorCache {
                trunk: trunk.cache,
                level: level.cache,
                detail: detail.cache,
                output: out,
                rows,
            },
        ))
    }

    /// Parameter gradients for an upstream gradient on the outputs.
    pub fn backward(&self, cache: &GeneratorCache, d_out: &Tensor) -> Result<Vec<Gradients>> {
        let n = self.n_outputs;
        let width = SLICE_SECONDS * n;
        d_out.expect_shape(&[cache.rows, width], "generator upstream")?;
        let d_pre: Vec<f64> = d_out
            .data()
            .iter()
            .zip(&cache.output)
            .map(|(g, y)| g * y * (1.0 - y))
            .collect();
        let mut d_level = vec![0.0; cache.rows * n];
        for (i, g) in d_pre.iter().enumerate() {
            let (r, k) = (i / width, i % width);
            d_level[r * n + k % n] += g;
        }
        let d_detail = Tensor::from_vec(&[cache.rows, width], d_pre)?;
        let d_level = Tensor::from_vec(&[cache.rows, n], d_level)?;
        let lb = layer_backward(&self.layers[1], &cache.level, &d_level, None)?;
        let db = layer_backward(&self.layers[2], &cache.detail, &d_detail, None)?;
        let mut d_hidden = lb.input_grad;
        d_hidden.add_assign(&db.input_grad);
        let tb = layer_backward(&self.layers[0], &cache.trunk, &d_hidden, None)?;
        Ok(vec![tb.grads, lb.grads, db.grads])
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        crate::netkernels::checkpoint::save(path, "generator", self)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        crate::netkernels::checkpoint::load(path, "generator")
    }
}

/// One crafted slice from one latent vector.
pub fn generator_forward(g: &GeneratorModel, latent: &[f64]) -> Result<CraftedSlice> {
    if latent.len() != g.latent_dim {
        return Err(Error::LatentLength {
            expected: g.latent_dim,
            got: latent.len(),
        });
    }
    let (out, _) = g.forward(&Tensor::from_vec(&[1, g.latent_dim], latent.to_vec())?)?;
    Ok(CraftedSlice {
        n_outputs: g.n_outputs,
        values: out.into_data(),
    })
}

/// The attacker's batch with its modifiable columns taken from `slice`.
pub fn craft_batch(context: &Batch, slice: &CraftedSlice, mask: &ModifiableMask) -> Result<Batch> {
    if slice.n_outputs != mask.len() {
        return Err(Error::Shape(format!(
            "slice has {} signals, mask {}",
            slice.n_outputs,
            mask.len()
        )));
    }
    if context.windows.len() != BATCH_SIZE || context.span() != SLICE_SECONDS {
        return Err(Error::Shape("context batch is not a 4x16 batch".into()));
    }
    let mut rows = context.timeline();
    for (t, row) in rows.iter_mut().enumerate() {
        for (j, &c) in mask.columns.iter().enumerate() {
            row[c] = slice.row(t)[j];
        }
    }
    Batch::from_timeline(
        context.driver,
        context.start_time(),
        &rows,
        WINDOW_SIZE,
        WINDOW_STEP,
        BATCH_SIZE,
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RlConfig {
    /// Latent step size.
    pub alpha: f64,
    pub gamma: f64,
    /// Oracle queries per episode before the generator update.
    pub max_episode_length: usize,
    pub num_episodes: usize,
    pub noise_scale: f64,
    /// Adam step size for generator updates.
    pub generator_lr: f64,
    /// Latents (and contexts) per generator update.
    pub update_batch: usize,
    /// Gradient steps per accepted batch in label-only mode.
    pub imitation_steps: usize,
}

impl Default for RlConfig {
    fn default() -> Self {
        RlConfig {
            alpha: 0.1,
            gamma: 0.9,
            max_episode_length: 5,
            num_episodes: 100,
            noise_scale: 1.0,
            generator_lr: 0.05,
            update_batch: 8,
            imitation_steps: 25,
        }
    }
}

impl RlConfig {
    // Negated comparisons so NaN is rejected too.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!(
                "need alpha > 0 and 0 < gamma < 1 (got {}, {})",
                self.alpha, self.gamma
            )));
        }
        if self.max_episode_length == 0 || self.update_batch == 0 || !(self.generator_lr > 0.0) {
            return Err(Error::Config(
                "episode length, update batch and lr must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeState {
    pub latent: Vec<f64>,
    pub episode_reward: f64,
    pub step: usize,
    /// Reward of the latest query.
    pub reward: f64,
    pub td_error: f64,
}

impl EpisodeState {
    pub fn new(latent: Vec<f64>) -> Self {
        EpisodeState {
            latent,
            episode_reward: 0.0,
            step: 0,
            reward: 0.0,
            td_error: 0.0,
        }
    }
}

/// Scalar in front of the latent perturbation: `alpha * td * gamma^step`.
pub fn latent_step_factor(cfg: &RlConfig, td_error: f64, step: usize) -> f64 {
    cfg.alpha * td_error * cfg.gamma.powi(step as i32)
}

/// One latent update. The TD error is the latest reward minus the reward
/// accumulated so far this episode; the latent moves by
/// `factor * latent * noise` elementwise, with standard normal noise scaled
/// by `noise_scale`. The reward is then added to the episode total.
pub fn rl_latent_update<R: Rng + ?Sized>(
    s: &EpisodeState,
    cfg: &RlConfig,
    rng: &mut R,
) -> EpisodeState {
    let td_error = s.reward - s.episode_reward;
    let factor = latent_step_factor(cfg, td_error, s.step);
    let latent = s
        .latent
        .iter()
        .map(|&z| {
            let noise: f64 = rng.sample(StandardNormal);
            z + factor * z * noise * cfg.noise_scale
        })
        .collect();
    EpisodeState {
        latent,
        episode_reward: s.episode_reward + s.reward,
        step: s.step + 1,
        reward: s.reward,
        td_error,
    }
}

fn random_latent(dim: usize, rng: &mut StageRng) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

/// Gradient of the summed slice values through the window layout.
fn windows_grad_to_slice(dx: &[f64], n_features: usize, mask: &ModifiableMask) -> Vec<f64> {
    let n = mask.len();
    let mut out = vec![0.0; SLICE_SECONDS * n];
    for w in 0..BATCH_SIZE {
        for t in 0..WINDOW_SIZE {
            let row = &dx[(w * WINDOW_SIZE + t) * n_features..][..n_features];
            let at = (w * WINDOW_STEP + t) * n;
            for (j, &c) in mask.columns.iter().enumerate() {
                out[at + j] += row[c];
            }
        }
    }
    out
}

/// Mean cross-entropy towards `target` over every window of `batches`,
/// averaged over the members, and its gradient with respect to the inputs.
pub fn ensemble_input_grad(
    e: &Ensemble,
    batches: &[Batch],
    target: DriverId,
) -> Result<(f64, Tensor)> {
    let windows: Vec<Window> = batches
        .iter()
        .flat_map(|b| b.windows.iter().cloned())
        .collect();
    let x = windows_to_tensor(&windows);
    let targets = vec![target; windows.len()];
    let mut total = 0.0;
    let mut dx = Tensor::zeros(x.shape());
    let k = e.members().len() as f64;
    for m in e.members() {
        let (logits, cache) = m.forward(&x)?;
        let (loss, dlogits) = softmax_xent_batch(&logits, &targets)?;
        let (_, mut d) = m.backward(&cache, &dlogits)?;
        d.scale(1.0 / k);
        dx.add_assign(&d);
        total += loss / k;
    }
    Ok((total, dx))
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorTraining {
    pub generator: GeneratorModel,
    /// How the oracle answered during training.
    pub mode: OracleMode,
    /// Episode (1-based) at which the third consecutive authenticated batch
    /// was produced.
    pub convergence_episode: Option<usize>,
    pub episodes_run: usize,
    pub queries: u64,
    /// Whether each episode's final crafted batch was accepted as the target.
    pub successes: Vec<bool>,
}

/// Consecutive successes required to call the generator converged.
pub const CONVERGENCE_RUN: usize = 3;

/// Trains the generator against the oracle to produce batches the
/// authenticator attributes to `target`. `contexts` are attacker batches
/// supplying the signals the attacker cannot overwrite.
///
/// With full probabilities, each episode runs `max_episode_length` latent
/// search queries, one final query, and one cross-entropy gradient step
/// through the ensemble; all episodes are run. With labels only, each
/// episode is a single query; accepted batches are imitated by the
/// generator and training stops at convergence.
#[allow(clippy::too_many_arguments)]
pub fn train_generator(
    g: &GeneratorModel,
    oracle: &mut OracleHandle<'_>,
    target: DriverId,
    cfg: &RlConfig,
    contexts: &[Batch],
    mask: &ModifiableMask,
    seed: u64,
) -> Result<GeneratorTraining> {
    cfg.validate()?;
    if contexts.is_empty() {
        return Err(Error::EmptyAttackData(
            "generator training needs attacker batches".into(),
        ));
    }
    if target >= oracle.n_classes() {
        return Err(Error::TargetOutOfRange {
            target,
            classes: oracle.n_classes(),
        });
    }
    let mut rng = stage_rng(seed, "generator/train");
    let mut gen = g.clone();
    let mut opt = OptimState::adaptive(cfg.generator_lr);
    let mut successes = Vec::with_capacity(cfg.num_episodes);
    let mut convergence_episode = None;
    let mut run = 0;

    for episode in 1..=cfg.num_episodes {
        let context = &contexts[rng.random_range(0..contexts.len())];
        let mut state = EpisodeState::new(random_latent(gen.latent_dim, &mut rng));
        let success = match oracle.mode() {
            OracleMode::FullProbs => {
                for _ in 0..cfg.max_episode_length {
                    let b = craft_batch(context, &generator_forward(&gen, &state.latent)?, mask)?;
                    let (_, labels) = oracle.window_labels(&b)?;
                    state.reward = labels.iter().filter(|&&l| l == target).count() as f64
                        / labels.len() as f64;
                    state = rl_latent_update(&state, cfg, &mut rng);
                }
                let b = craft_batch(context, &generator_forward(&gen, &state.latent)?, mask)?;
                let accepted = oracle.probabilities(&b)?.label == target;
                gradient_update(
                    &mut gen,
                    &mut opt,
                    oracle.white_box()?,
                    target,
                    &state.latent,
                    context,
                    contexts,
                    cfg,
                    mask,
                    &mut rng,
                )?;
                accepted
            }
            OracleMode::LabelOnly => {
                let slice = generator_forward(&gen, &state.latent)?;
                let b = craft_batch(context, &slice, mask)?;
                let accepted = oracle.classify(&b)? == target;
                state.reward = if accepted { 1.0 } else { 0.0 };
                let next = rl_latent_update(&state, cfg, &mut rng);
                if accepted {
                    imitation_update(&mut gen, &mut opt, &slice, &next.latent, cfg, &mut rng)?;
                }
                accepted
            }
        };
        successes.push(success);
        run = if success { run + 1 } else { 0 };
        if run >= CONVERGENCE_RUN && convergence_episode.is_none() {
            convergence_episode = Some(episode);
            if oracle.mode() == OracleMode::LabelOnly {
                break;
            }
        }
    }
    Ok(GeneratorTraining {
        generator: gen,
        mode: oracle.mode(),
        convergence_episode,
        episodes_run: successes.len(),
        queries: oracle.queries(),
        successes,
    })
}

/// One white-box step: cross-entropy towards the target through every
/// ensemble member, for the episode's final latent plus fresh latents on
/// random contexts.
#[allow(clippy::too_many_arguments)]
fn gradient_update(
    gen: &mut GeneratorModel,
    opt: &mut OptimState,
    e: &Ensemble,
    target: DriverId,
    latent: &[f64],
    context: &Batch,
    contexts: &[Batch],
    cfg: &RlConfig,
    mask: &ModifiableMask,
    rng: &mut StageRng,
) -> Result<()> {
    let mut latents = latent.to_vec();
    let mut ctxs = vec![context];
    for _ in 1..cfg.update_batch {
        latents.extend(random_latent(gen.latent_dim, rng));
        ctxs.push(&contexts[rng.random_range(0..contexts.len())]);
    }
    let z = Tensor::from_vec(&[ctxs.len(), gen.latent_dim], latents)?;
    let (out, cache) = gen.forward(&z)?;
    let width = SLICE_SECONDS * gen.n_outputs;
    let batches = ctxs
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let slice = CraftedSlice {
                n_outputs: gen.n_outputs,
                values: out.data()[i * width..(i + 1) * width].to_vec(),
            };
            craft_batch(c, &slice, mask)
        })
        .collect::<Result<Vec<_>>>()?;
    let (_, dx) = ensemble_input_grad(e, &batches, target)?;
    let nf = mask.n_features;
    let per_batch = BATCH_SIZE * WINDOW_SIZE * nf;
    let d_out: Vec<f64> = (0..batches.len())
        .flat_map(|i| {
            windows_grad_to_slice(&dx.data()[i * per_batch..(i + 1) * per_batch], nf, mask)
        })
        .collect();
    let grads = gen.backward(&cache, &Tensor::from_vec(&[batches.len(), width], d_out)?)?;
    optimizer_step(opt, &mut gen.layers, &grads)
}

/// Pulls the generator's output towards an accepted slice (squared error),
/// for the episode's latent and fresh ones.
fn imitation_update(
    gen: &mut GeneratorModel,
    opt: &mut OptimState,
    accepted: &CraftedSlice,
    latent: &[f64],
    cfg: &RlConfig,
    rng: &mut StageRng,
) -> Result<()> {
    let width = accepted.values.len();
    for _ in 0..cfg.imitation_steps {
        let mut latents = latent.to_vec();
        for _ in 1..cfg.update_batch {
            latents.extend(random_latent(gen.latent_dim, rng));
        }
        let z = Tensor::from_vec(&[cfg.update_batch, gen.latent_dim], latents)?;
        let (out, cache) = gen.forward(&z)?;
        let scale = 2.0 / out.len() as f64;
        let d_out: Vec<f64> = out
            .data()
            .iter()
            .enumerate()
            .map(|(i, y)| scale * (y - accepted.values[i % width]))
            .collect();
        let grads = gen.backward(&cache, &Tensor::from_vec(out.shape(), d_out)?)?;
        optimizer_step(opt, &mut gen.layers, &grads)?;
    }
    Ok(())
}

/// Post-training success rate: fresh latents on the given attacker
/// contexts, judged by the ensemble's batch decision.
pub fn generator_asr(
    g: &GeneratorModel,
    e: &Ensemble,
    target: DriverId,
    contexts: &[Batch],
    mask: &ModifiableMask,
    samples: usize,
    seed: u64,
) -> Result<AsrCount> {
    if contexts.is_empty() {
        return Err(Error::EmptyAttackData(
            "no attacker batches to evaluate on".into(),
        ));
    }
    let mut rng = stage_rng(seed, "generator/eval");
    let mut count = AsrCount::default();
    for i in 0..samples {
        let slice = generator_forward(g, &random_latent(g.latent_dim, &mut rng))?;
        let b = craft_batch(&contexts[i % contexts.len()], &slice, mask)?;
        count.record(e.predict_batch(&b)?.label == target);
    }
    Ok(count)
}

/// Samples a slice from a fresh latent.
pub fn sample_slice(g: &GeneratorModel, rng: &mut StageRng) -> Result<CraftedSlice> {
    generator_forward(g, &random_latent(g.latent_dim, rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn eq1_factor_hand_arithmetic() {
        let cfg = RlConfig {
            alpha: 0.01,
            gamma: 0.9,
            ..Default::default()
        };
        assert!((latent_step_factor(&cfg, 0.5, 2) - 0.00405).abs() < 1e-15);
        assert!(latent_step_factor(&cfg, 0.5, 10) < latent_step_factor(&cfg, 0.5, 0));
    }

    #[test]
    fn zero_td_error_is_a_fixed_point() {
        let cfg = RlConfig::default();
        let mut s = EpisodeState::new(vec![0.3, -1.2, 2.0]);
        s.reward = 0.0;
        let next = rl_latent_update(&s, &cfg, &mut seeded(1));
        assert_eq!(next.latent, s.latent);
        assert_eq!(next.step, 1);
        let mut s2 = next.clone();
        s2.reward = 0.5;
        let moved = rl_latent_update(&s2, &cfg, &mut seeded(1));
        assert_eq!(moved.td_error, 0.5);
        assert_eq!(moved.episode_reward, 0.5);
        assert_ne!(moved.latent, s2.latent);
    }

    #[test]
    fn output_is_bounded_and_deterministic() {
        let g = GeneratorModel::new(&GeneratorSpec::default(), 22, 3);
        let z = random_latent(64, &mut seeded(4));
        let a = generator_forward(&g, &z).unwrap();
        assert_eq!(a, generator_forward(&g, &z).unwrap());
        assert_eq!(a.values.len(), 40 * 22);
        assert!(a.values.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(a.windows().shape(), &[4, 16, 22]);
        assert!(matches!(
            generator_forward(&g, &z[..10]),
            Err(Error::LatentLength {
                expected: 64,
                got: 10
            })
        ));
    }
}
