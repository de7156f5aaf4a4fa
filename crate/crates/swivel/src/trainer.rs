//! Embedding storage, the Adagrad training step, and the shard-sampling
//! training loop.
//!
//! One step gathers the k row vectors and k column vectors of a shard,
//! multiplies them into k^2 predicted PMI values, evaluates the piecewise
//! objective, back-propagates through the two block products, and applies
//! per-parameter Adagrad updates. Embeddings are stored in single precision;
//! all step math runs in double precision.

use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Result, SwivelError};
use crate::hogwild::Hogwild;
use crate::math::{block_product, col_gradients, row_gradients};
use crate::matrix::Shard;
use crate::objective::{shard_objective_into, ObjectiveConfig};

/// Dense row-major f32 matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Mat {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Mat {
        assert_eq!(data.len(), rows * cols);
        Mat { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f32] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }
}

/// Row (focus) and column (context) embeddings with their Adagrad
/// squared-gradient accumulators. Dimensions are the padded matrix
/// dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    pub focus: Mat,
    pub context: Mat,
    pub focus_acc: Mat,
    pub context_acc: Mat,
}

impl EmbeddingStore {
    pub fn m(&self) -> usize {
        self.focus.rows()
    }

    pub fn n(&self) -> usize {
        self.context.rows()
    }

    pub fn dim(&self) -> usize {
        self.focus.cols()
    }

    /// Predicted PMI for one cell: the dot product of focus row `i` and
    /// context row `j`, accumulated in double precision.
    pub fn predict(&self, i: usize, j: usize) -> f64 {
        self.focus
            .row(i)
            .iter()
            .zip(self.context.row(j))
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum()
    }

    pub fn all_finite(&self) -> bool {
        [&self.focus, &self.context, &self.focus_acc, &self.context_acc]
            .iter()
            .all(|m| m.data().iter().all(|v| v.is_finite()))
    }
}

/// Initialize embeddings with i.i.d. Gaussian entries of standard deviation
/// 1/sqrt(d), so initial predictions have unit-order variance. Accumulators
/// start at zero. Deterministic given the seed.
pub fn init_embeddings(m: usize, n: usize, d: usize, seed: u64) -> Result<EmbeddingStore> {
    if m == 0 || n == 0 || d == 0 {
        return Err(SwivelError::Config(format!(
            "embedding dimensions must be at least 1, got m={m}, n={n}, d={d}"
        )));
    }
    let sigma = 1.0 / (d as f64).sqrt();
    let normal = Normal::new(0.0, sigma).expect("sigma is positive and finite");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sample = |len: usize| -> Vec<f32> {
        (0..len).map(|_| normal.sample(&mut rng) as f32).collect()
    };
    Ok(EmbeddingStore {
        focus: Mat::from_vec(m, d, sample(m * d)),
        context: Mat::from_vec(n, d, sample(n * d)),
        focus_acc: Mat::zeros(m, d),
        context_acc: Mat::zeros(n, d),
    })
}

/// How shards are picked within an epoch of `num_shards` steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    /// Reshuffle all shards each epoch; every shard is visited exactly once
    /// per full epoch.
    Permutation,
    /// Sample shards independently and uniformly.
    Uniform,
}

impl std::str::FromStr for Schedule {
    type Err = SwivelError;

    fn from_str(s: &str) -> Result<Schedule> {
        match s {
            "permutation" => Ok(Schedule::Permutation),
            "uniform" => Ok(Schedule::Uniform),
            other => Err(SwivelError::Config(format!(
                "unknown schedule {other:?} (expected permutation or uniform)"
            ))),
        }
    }
}

impl std::fmt::Display for Schedule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Schedule::Permutation => "permutation",
            Schedule::Uniform => "uniform",
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub dim: usize,
    pub steps: u64,
    /// Adagrad base learning rate.
    pub eta: f64,
    /// Adagrad denominator guard.
    pub epsilon: f64,
    pub seed: u64,
    pub workers: usize,
    pub schedule: Schedule,
    pub objective: ObjectiveConfig,
    /// Stop when the epoch-average loss improves by less than 0.1% for
    /// three consecutive epochs.
    pub early_stop: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: 300,
            steps: 1_000_000,
            eta: 0.1,
            epsilon: 1e-8,
            seed: 42,
            workers: 1,
            schedule: Schedule::Permutation,
            objective: ObjectiveConfig::default(),
            early_stop: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(SwivelError::Config("dim must be at least 1".into()));
        }
        if self.steps == 0 {
            return Err(SwivelError::Config("steps must be at least 1".into()));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(SwivelError::Config(format!("eta must be positive, got {}", self.eta)));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(SwivelError::Config(format!(
                "epsilon must be non-negative, got {}",
                self.epsilon
            )));
        }
        if self.workers == 0 {
            return Err(SwivelError::Config("workers must be at least 1".into()));
        }
        self.objective.validate()
    }
}

/// Reusable per-worker buffers for one training step.
pub struct Scratch {
    block: Vec<f64>,
    context_block: Vec<f64>,
    predictions: Vec<f64>,
    grad: Vec<f64>,
    block_grad: Vec<f64>,
    context_grad: Vec<f64>,
}

impl Scratch {
    pub fn new(k: usize, d: usize) -> Scratch {
        Scratch {
            block: vec![0.0; k * d],
            context_block: vec![0.0; k * d],
            predictions: vec![0.0; k * k],
            grad: vec![0.0; k * k],
            block_grad: vec![0.0; k * d],
            context_grad: vec![0.0; k * d],
        }
    }
}

/// Run one training step on `shard` and return the shard loss measured
/// before the update.
pub fn train_step(store: &mut EmbeddingStore, shard: &Shard, cfg: &TrainConfig) -> Result<f64> {
    let mut scratch = Scratch::new(shard.k, store.dim());
    train_step_with(store, shard, cfg, &mut scratch)
}

/// [`train_step`] with caller-provided buffers.
pub fn train_step_with(
    store: &mut EmbeddingStore,
    shard: &Shard,
    cfg: &TrainConfig,
    scratch: &mut Scratch,
) -> Result<f64> {
    let k = shard.k;
    let d = store.dim();
    if shard.k * shard.row_blocks != store.m() || shard.k * shard.col_blocks != store.n() {
        return Err(SwivelError::Config(format!(
            "shard ({}, {}) with k={} R={} C={} does not match a {}x{} store",
            shard.row_block,
            shard.col_block,
            shard.k,
            shard.row_blocks,
            shard.col_blocks,
            store.m(),
            store.n()
        )));
    }
    assert_eq!(scratch.block.len(), k * d, "scratch sized for a different shard shape");

    // Gather the blocks into f64 working copies; gradients are taken with
    // respect to these pre-update values.
    for t in 0..k {
        let row = store.focus.row(shard.row_block as usize + t * shard.row_blocks);
        for (dst, &src) in scratch.block[t * d..(t + 1) * d].iter_mut().zip(row) {
            *dst = src as f64;
        }
    }
    for u in 0..k {
        let row = store.context.row(shard.col_block as usize + u * shard.col_blocks);
        for (dst, &src) in scratch.context_block[u * d..(u + 1) * d].iter_mut().zip(row) {
            *dst = src as f64;
        }
    }

    block_product(&scratch.block, &scratch.context_block, k, d, &mut scratch.predictions);
    let loss = shard_objective_into(&scratch.predictions, shard, &cfg.objective, &mut scratch.grad);
    if !loss.is_finite() {
        return Err(SwivelError::Numeric(format!(
            "non-finite loss on shard ({}, {})",
            shard.row_block, shard.col_block
        )));
    }

    row_gradients(&scratch.grad, &scratch.context_block, k, d, &mut scratch.block_grad);
    col_gradients(&scratch.grad, &scratch.block, k, d, &mut scratch.context_grad);

    let block_desc = (shard.row_block, shard.col_block);
    for t in 0..k {
        let gi = shard.row_block as usize + t * shard.row_blocks;
        adagrad_update(
            store.focus.row_mut(gi),
            store.focus_acc.row_mut(gi),
            &scratch.block_grad[t * d..(t + 1) * d],
            cfg,
            block_desc,
            "row",
        )?;
    }
    for u in 0..k {
        let gj = shard.col_block as usize + u * shard.col_blocks;
        adagrad_update(
            store.context.row_mut(gj),
            store.context_acc.row_mut(gj),
            &scratch.context_grad[u * d..(u + 1) * d],
            cfg,
            block_desc,
            "column",
        )?;
    }
    Ok(loss)
}

/// theta <- theta - eta * g / (sqrt(acc + g^2) + epsilon), with the updated
/// accumulator stored back. Zero gradients leave both the parameter and the
/// accumulator untouched.
fn adagrad_update(
    params: &mut [f32],
    accum: &mut [f32],
    grads: &[f64],
    cfg: &TrainConfig,
    block: (u32, u32),
    side: &str,
) -> Result<()> {
    for ((p, a), &g) in params.iter_mut().zip(accum.iter_mut()).zip(grads) {
        if g == 0.0 {
            continue;
        }
        let acc = *a as f64 + g * g;
        let next = *p as f64 - cfg.eta * g / (acc.sqrt() + cfg.epsilon);
        let next32 = next as f32;
        let acc32 = acc as f32;
        if !next32.is_finite() || !acc32.is_finite() {
            return Err(SwivelError::Numeric(format!(
                "non-finite {side}-block gradient update on shard ({}, {})",
                block.0, block.1
            )));
        }
        *p = next32;
        *a = acc32;
    }
    Ok(())
}

/// Shard visiting order for one epoch, derived from the seed and the epoch
/// index alone so that checkpoint resume continues the exact schedule.
pub fn epoch_order(seed: u64, epoch: u64, num_shards: usize, schedule: Schedule) -> Vec<u32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Stream 0 is used by init_embeddings.
    rng.set_stream(epoch.wrapping_add(1));
    match schedule {
        Schedule::Permutation => {
            let mut order: Vec<u32> = (0..num_shards as u32).collect();
            order.shuffle(&mut rng);
            order
        }
        Schedule::Uniform => (0..num_shards)
            .map(|_| rng.random_range(0..num_shards as u32))
            .collect(),
    }
}

/// Mutable training state carried across epochs and checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainerState {
    pub store: EmbeddingStore,
    /// Completed steps.
    pub step: u64,
    /// Running loss statistics over all completed steps.
    pub loss_sum: f64,
    pub loss_steps: u64,
}

impl TrainerState {
    pub fn new(store: EmbeddingStore) -> TrainerState {
        TrainerState {
            store,
            step: 0,
            loss_sum: 0.0,
            loss_steps: 0,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Where periodic and abort checkpoints are written.
    pub checkpoint_path: Option<PathBuf>,
    /// Checkpoint cadence in epochs; 0 disables periodic checkpoints.
    pub checkpoint_every_epochs: u64,
}

#[derive(Debug, Clone)]
pub struct EpochProgress {
    pub epoch: u64,
    pub steps: usize,
    pub total_steps: u64,
    pub mean_loss: f64,
    pub steps_per_sec: f64,
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub steps: u64,
    /// Epoch-mean losses in epoch order.
    pub loss_trace: Vec<f64>,
    pub early_stopped: bool,
}

/// Train until `cfg.steps` steps have completed (counting any steps already
/// recorded in `state`, so resuming a checkpoint continues rather than
/// restarts).
///
/// Single-worker runs are fully deterministic given the seed. With more
/// workers, each epoch's shard order is split into contiguous per-worker
/// chunks processed concurrently against the shared store without locking;
/// results then vary run to run.
pub fn train(
    shards: &[Shard],
    state: &mut TrainerState,
    cfg: &TrainConfig,
    opts: &TrainOptions,
    progress: &mut dyn FnMut(&EpochProgress),
) -> Result<TrainSummary> {
    cfg.validate()?;
    if shards.is_empty() {
        return Err(SwivelError::Config("no shards to train on".into()));
    }
    for shard in shards {
        if shard.k * shard.row_blocks != state.store.m()
            || shard.k * shard.col_blocks != state.store.n()
            || shard.k != shards[0].k
        {
            return Err(SwivelError::Config(format!(
                "shard ({}, {}) is inconsistent with the store or the other shards",
                shard.row_block, shard.col_block
            )));
        }
    }

    let num_shards = shards.len() as u64;
    let mut trace = Vec::new();
    let mut flat_epochs = 0u32;
    let mut early_stopped = false;
    let mut scratch = Scratch::new(shards[0].k, state.store.dim());

    while state.step < cfg.steps {
        let epoch = state.step / num_shards;
        let pos = (state.step % num_shards) as usize;
        let remaining = (cfg.steps - state.step) as usize;
        let order = epoch_order(cfg.seed, epoch, shards.len(), cfg.schedule);
        let todo = &order[pos..(pos + remaining).min(order.len())];

        let started = Instant::now();
        let epoch_loss = if cfg.workers == 1 {
            run_steps_single(shards, state, cfg, opts, todo, &mut scratch)?
        } else {
            run_steps_hogwild(shards, state, cfg, opts, todo)?
        };
        let elapsed = started.elapsed().as_secs_f64();

        state.loss_sum += epoch_loss;
        state.loss_steps += todo.len() as u64;
        let mean_loss = epoch_loss / todo.len() as f64;
        trace.push(mean_loss);
        progress(&EpochProgress {
            epoch,
            steps: todo.len(),
            total_steps: state.step,
            mean_loss,
            steps_per_sec: todo.len() as f64 / elapsed.max(1e-9),
        });

        if opts.checkpoint_every_epochs > 0 && (epoch + 1) % opts.checkpoint_every_epochs == 0 {
            if let Some(path) = &opts.checkpoint_path {
                crate::checkpoint::save_checkpoint(state, cfg, path)?;
            }
        }

        if cfg.early_stop && trace.len() >= 2 {
            let prev = trace[trace.len() - 2];
            let cur = trace[trace.len() - 1];
            let improvement = if prev > 0.0 { (prev - cur) / prev } else { 0.0 };
            flat_epochs = if improvement < 1e-3 { flat_epochs + 1 } else { 0 };
            if flat_epochs >= 3 {
                early_stopped = true;
                break;
            }
        }
    }

    Ok(TrainSummary {
        steps: state.step,
        loss_trace: trace,
        early_stopped,
    })
}

fn run_steps_single(
    shards: &[Shard],
    state: &mut TrainerState,
    cfg: &TrainConfig,
    opts: &TrainOptions,
    todo: &[u32],
    scratch: &mut Scratch,
) -> Result<f64> {
    let mut epoch_loss = 0.0;
    for &idx in todo {
        match train_step_with(&mut state.store, &shards[idx as usize], cfg, scratch) {
            Ok(loss) => {
                epoch_loss += loss;
                state.step += 1;
            }
            Err(err) => {
                abort_checkpoint(state, cfg, opts);
                return Err(err);
            }
        }
    }
    Ok(epoch_loss)
}

/// Lock-free multi-worker pass over one epoch's shard order. Workers take
/// contiguous chunks of the order, so no two workers ever process the same
/// shard at the same time under the permutation schedule.
fn run_steps_hogwild(
    shards: &[Shard],
    state: &mut TrainerState,
    cfg: &TrainConfig,
    opts: &TrainOptions,
    todo: &[u32],
) -> Result<f64> {
    let chunk_len = todo.len().div_ceil(cfg.workers);
    let k = shards[0].k;
    let d = state.store.dim();
    let abort = AtomicBool::new(false);
    let store = Hogwild::new(&mut state.store);

    let results: Vec<Result<(f64, u64)>> = std::thread::scope(|scope| {
        let handles: Vec<_> = todo
            .chunks(chunk_len)
            .map(|chunk| {
                let store = store.clone();
                let abort = &abort;
                scope.spawn(move || {
                    let mut scratch = Scratch::new(k, d);
                    let mut loss = 0.0;
                    let mut steps = 0u64;
                    for &idx in chunk {
                        if abort.load(Ordering::Relaxed) {
                            break;
                        }
                        // Safety: only element values are updated in place;
                        // racy reads/writes are accepted per the hogwild
                        // contract.
                        let store = unsafe { store.get_mut() };
                        match train_step_with(store, &shards[idx as usize], cfg, &mut scratch) {
                            Ok(l) => {
                                loss += l;
                                steps += 1;
                            }
                            Err(err) => {
                                abort.store(true, Ordering::Relaxed);
                                return Err(err);
                            }
                        }
                    }
                    Ok((loss, steps))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or_else(|_| Err(SwivelError::Numeric("worker thread panicked".into())))
            })
            .collect()
    });

    let mut epoch_loss = 0.0;
    let mut failure = None;
    for result in results {
        match result {
            Ok((loss, steps)) => {
                epoch_loss += loss;
                state.step += steps;
            }
            Err(err) => failure = Some(err),
        }
    }
    if let Some(err) = failure {
        abort_checkpoint(state, cfg, opts);
        return Err(err);
    }
    Ok(epoch_loss)
}

// Best effort: the original error matters more than a failed save.
fn abort_checkpoint(state: &TrainerState, cfg: &TrainConfig, opts: &TrainOptions) {
    if let Some(path) = &opts.checkpoint_path {
        let _ = crate::checkpoint::save_checkpoint(state, cfg, path);
    }
}

/// Which vectors an export combines.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CombineMode {
    Word,
    Context,
    Sum,
}

impl std::str::FromStr for CombineMode {
    type Err = SwivelError;

    fn from_str(s: &str) -> Result<CombineMode> {
        match s {
            "word" => Ok(CombineMode::Word),
            "context" => Ok(CombineMode::Context),
            "sum" => Ok(CombineMode::Sum),
            other => Err(SwivelError::Config(format!(
                "unknown combine mode {other:?} (expected word, context, or sum)"
            ))),
        }
    }
}

impl std::fmt::Display for CombineMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CombineMode::Word => "word",
            CombineMode::Context => "context",
            CombineMode::Sum => "sum",
        })
    }
}

/// Combine trained embeddings over the unpadded vocabulary: the word
/// vectors, the context vectors, or their sum. Padded rows are dropped.
pub fn combined_embeddings(
    store: &EmbeddingStore,
    vocab_len: usize,
    mode: CombineMode,
) -> Result<Mat> {
    let d = store.dim();
    let check = |rows: usize, side: &str| -> Result<()> {
        if vocab_len > rows {
            return Err(SwivelError::Config(format!(
                "vocabulary has {vocab_len} tokens but the {side} embeddings have only {rows} rows"
            )));
        }
        Ok(())
    };
    match mode {
        CombineMode::Word => {
            check(store.m(), "word")?;
            Ok(Mat::from_vec(
                vocab_len,
                d,
                store.focus.data()[..vocab_len * d].to_vec(),
            ))
        }
        CombineMode::Context => {
            check(store.n(), "context")?;
            Ok(Mat::from_vec(
                vocab_len,
                d,
                store.context.data()[..vocab_len * d].to_vec(),
            ))
        }
        CombineMode::Sum => {
            if store.m() != store.n() {
                return Err(SwivelError::Config(format!(
                    "sum combination requires identical row and column vocabularies, \
                     got {}x{} store",
                    store.m(),
                    store.n()
                )));
            }
            check(store.m(), "word")?;
            let data = store.focus.data()[..vocab_len * d]
                .iter()
                .zip(&store.context.data()[..vocab_len * d])
                .map(|(&a, &b)| a + b)
                .collect();
            Ok(Mat::from_vec(vocab_len, d, data))
        }
    }
}

/// Format with six significant digits, trimming trailing zeros, like C's
/// `%.6g`.
pub fn fmt_sig6(v: f32) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    let exp = (v.abs() as f64).log10().floor() as i32;
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        let s = format!("{v:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        let s = format!("{v:.5e}");
        match s.split_once('e') {
            Some((mantissa, exp)) => {
                let mantissa = if mantissa.contains('.') {
                    mantissa.trim_end_matches('0').trim_end_matches('.')
                } else {
                    mantissa
                };
                format!("{mantissa}e{exp}")
            }
            None => s,
        }
    }
}

/// Text export: a `rows dim` header line, then one `token v1 .. vd` line per
/// vocabulary entry with six significant digits.
pub fn write_embeddings_text(
    mat: &Mat,
    vocab: &crate::corpus::Vocabulary,
    mut w: impl std::io::Write,
) -> std::io::Result<()> {
    assert_eq!(mat.rows(), vocab.len());
    writeln!(w, "{} {}", mat.rows(), mat.cols())?;
    let mut line = String::new();
    for id in 0..mat.rows() {
        line.clear();
        line.push_str(vocab.token(id as u32));
        for &v in mat.row(id) {
            line.push(' ');
            line.push_str(&fmt_sig6(v));
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// Raw little-endian f32 export, row-major; the vocabulary file is the
/// sidecar that gives row order.
pub fn write_embeddings_binary(mat: &Mat, mut w: impl std::io::Write) -> std::io::Result<()> {
    use byteorder::{LittleEndian, WriteBytesExt};
    for &v in mat.data() {
        w.write_f32::<LittleEndian>(v)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::CoocAccumulator;
    use crate::matrix::{extract_shard, finalize_matrix};

    fn shard_1x1(count: f32, row_m: f64, col_m: f64, total: f64) -> Shard {
        Shard {
            row_block: 0,
            col_block: 0,
            k: 1,
            row_blocks: 1,
            col_blocks: 1,
            counts: vec![count],
            row_marginals: vec![row_m],
            col_marginals: vec![col_m],
            total,
        }
    }

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let a = init_embeddings(6, 8, 4, 7).unwrap();
        let b = init_embeddings(6, 8, 4, 7).unwrap();
        let c = init_embeddings(6, 8, 4, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.focus.data(), c.focus.data());
        assert!(a.focus_acc.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn init_standard_deviation_matches_configuration() {
        let d = 100;
        let store = init_embeddings(1200, 1, d, 3).unwrap();
        let data = store.focus.data();
        let mean: f64 = data.iter().map(|&v| v as f64).sum::<f64>() / data.len() as f64;
        let var: f64 =
            data.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / data.len() as f64;
        let sd = var.sqrt();
        let expected = 0.1;
        assert!(
            (sd - expected).abs() / expected < 0.05,
            "sample sd {sd} not within 5% of {expected}"
        );
    }

    #[test]
    fn hand_computed_adagrad_step() {
        // W = [1], W~ = [1], observed cell with target 0, f = 1, eta = 1,
        // epsilon = 0: both parameters go to exactly 0.
        let mut store = EmbeddingStore {
            focus: Mat::from_vec(1, 1, vec![1.0]),
            context: Mat::from_vec(1, 1, vec![1.0]),
            focus_acc: Mat::zeros(1, 1),
            context_acc: Mat::zeros(1, 1),
        };
        // Counts chosen so pmi = 0 and f(x) = b0 + b = 1.
        let e = std::f64::consts::E;
        let shard = shard_1x1(1.0, 1.0, e, e);
        let cfg = TrainConfig {
            dim: 1,
            eta: 1.0,
            epsilon: 0.0,
            objective: ObjectiveConfig {
                weights: crate::objective::WeightParams {
                    alpha: 0.5,
                    b0: 0.5,
                    b: 0.5,
                },
                shift: 0.0,
            },
            ..Default::default()
        };
        let loss = train_step(&mut store, &shard, &cfg).unwrap();
        assert_eq!(loss, 0.5); // 1/2 * f * (1 - 0)^2
        assert_eq!(store.focus.data(), &[0.0]);
        assert_eq!(store.context.data(), &[0.0]);
        assert_eq!(store.focus_acc.data(), &[1.0]);
    }

    #[test]
    fn padded_shard_leaves_store_untouched() {
        let mut store = init_embeddings(2, 2, 3, 1).unwrap();
        let before = store.clone();
        let shard = Shard {
            row_block: 0,
            col_block: 0,
            k: 2,
            row_blocks: 1,
            col_blocks: 1,
            counts: vec![0.0; 4],
            row_marginals: vec![0.0; 2],
            col_marginals: vec![0.0; 2],
            total: 0.0,
        };
        let loss = train_step(&mut store, &shard, &TrainConfig::default()).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(store, before);
    }

    #[test]
    fn single_shard_loss_decreases() {
        let mut acc = CoocAccumulator::new();
        for i in 0..4u32 {
            for j in 0..4u32 {
                acc.add(i, j, ((i * 7 + j * 3) % 9 + 1) as f64);
            }
        }
        let (matrix, plan) = finalize_matrix(&acc, 4, 4, 4).unwrap();
        let shard = extract_shard(&matrix, &plan, 0, 0);
        let cfg = TrainConfig {
            dim: 4,
            ..Default::default()
        };
        let mut store = init_embeddings(4, 4, 4, 5).unwrap();
        let mut losses = Vec::new();
        let mut scratch = Scratch::new(4, 4);
        for _ in 0..100 {
            losses.push(train_step_with(&mut store, &shard, &cfg, &mut scratch).unwrap());
        }
        let non_monotone = losses.windows(2).filter(|w| w[1] > w[0]).count();
        assert!(non_monotone <= 5, "{non_monotone} non-monotone steps");
        assert!(losses.last().unwrap() < &(losses[0] * 0.5));
    }

    #[test]
    fn accumulators_never_decrease() {
        let mut acc = CoocAccumulator::new();
        for i in 0..4u32 {
            acc.add(i, (i + 1) % 4, 2.0);
        }
        let (matrix, plan) = finalize_matrix(&acc, 4, 4, 2).unwrap();
        let shards: Vec<Shard> = (0..2)
            .flat_map(|rb| (0..2).map(move |cb| (rb, cb)))
            .map(|(rb, cb)| extract_shard(&matrix, &plan, rb, cb))
            .collect();
        let cfg = TrainConfig {
            dim: 3,
            steps: 40,
            ..Default::default()
        };
        let mut state = TrainerState::new(init_embeddings(4, 4, 3, 2).unwrap());
        let mut prev_focus = state.store.focus_acc.clone();
        let mut prev_context = state.store.context_acc.clone();
        for target in [10u64, 20, 30, 40] {
            let cfg_stage = TrainConfig { steps: target, ..cfg.clone() };
            train(&shards, &mut state, &cfg_stage, &TrainOptions::default(), &mut |_| {}).unwrap();
            for (now, before) in state
                .store
                .focus_acc
                .data()
                .iter()
                .zip(prev_focus.data())
                .chain(state.store.context_acc.data().iter().zip(prev_context.data()))
            {
                assert!(now >= before);
            }
            prev_focus = state.store.focus_acc.clone();
            prev_context = state.store.context_acc.clone();
        }
        assert!(state.store.all_finite());
    }

    #[test]
    fn permutation_schedule_visits_every_shard_equally() {
        let num = 12;
        let mut visits = vec![0u32; num];
        for epoch in 0..2 {
            for idx in epoch_order(9, epoch, num, Schedule::Permutation) {
                visits[idx as usize] += 1;
            }
        }
        assert!(visits.iter().all(|&v| v == 2));
    }

    #[test]
    fn epoch_order_is_deterministic() {
        assert_eq!(
            epoch_order(1, 3, 100, Schedule::Permutation),
            epoch_order(1, 3, 100, Schedule::Permutation)
        );
        assert_ne!(
            epoch_order(1, 3, 100, Schedule::Permutation),
            epoch_order(1, 4, 100, Schedule::Permutation)
        );
        assert_eq!(
            epoch_order(1, 3, 100, Schedule::Uniform),
            epoch_order(1, 3, 100, Schedule::Uniform)
        );
    }

    #[test]
    fn combine_modes() {
        let store = EmbeddingStore {
            focus: Mat::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 9.0, 9.0]),
            context: Mat::from_vec(3, 2, vec![-1.0, -2.0, -3.0, -4.0, 9.0, 9.0]),
            focus_acc: Mat::zeros(3, 2),
            context_acc: Mat::zeros(3, 2),
        };
        // Sum of opposite stores is all zeros; padding row 2 is dropped.
        let sum = combined_embeddings(&store, 2, CombineMode::Sum).unwrap();
        assert_eq!(sum.data(), &[0.0; 4]);
        assert_eq!(sum.rows(), 2);
        let word = combined_embeddings(&store, 2, CombineMode::Word).unwrap();
        assert_eq!(word.row(1), &[3.0, 4.0]);
        let ctx = combined_embeddings(&store, 2, CombineMode::Context).unwrap();
        assert_eq!(ctx.row(0), &[-1.0, -2.0]);
    }

    #[test]
    fn combine_sum_rejects_mismatched_sides() {
        let store = EmbeddingStore {
            focus: Mat::zeros(4, 2),
            context: Mat::zeros(6, 2),
            focus_acc: Mat::zeros(4, 2),
            context_acc: Mat::zeros(6, 2),
        };
        assert!(combined_embeddings(&store, 4, CombineMode::Sum).is_err());
        assert!(combined_embeddings(&store, 4, CombineMode::Word).is_ok());
        assert!(combined_embeddings(&store, 5, CombineMode::Word).is_err());
    }

    #[test]
    fn sig6_formatting() {
        assert_eq!(fmt_sig6(0.0), "0");
        assert_eq!(fmt_sig6(1.0), "1");
        assert_eq!(fmt_sig6(-0.125), "-0.125");
        assert_eq!(fmt_sig6(123456.0), "123456");
        assert_eq!(fmt_sig6(0.333333343), "0.333333");
        assert_eq!(fmt_sig6(1234567.0), "1.23457e6");
        assert_eq!(fmt_sig6(0.00001), "1e-5");
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(TrainConfig { steps: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { dim: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { eta: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { workers: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }
}
