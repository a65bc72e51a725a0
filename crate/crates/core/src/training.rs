//! The generational training loop: SGD epochs per generation, the
//! progressive learning-rate ramp, orchestrator gating of architecture
//! simulations, dataset splitting and history tracking.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::actions::execute;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::graph::LayerGraph;
use crate::mcts::{choose_action, Policy, ScoreMode, SearchBudget, SgdOpts};
use crate::propagation::{forward, loss, train_minibatch, Signal};

/// Learning-rate schedule across the epochs of one generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrMode {
    /// Triangular ramp: starts near zero right after a structure change,
    /// peaks mid-generation, decays again before the next change.
    Progressive,
    Constant,
}

/// When the simulation (architecture search) runs at a generation boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orchestrator {
    /// Every generation.
    Constant,
    /// Only when the last generation brought no test-accuracy improvement.
    ProgressCheck,
    /// When the train/test gap exceeds a threshold, or progress stalled.
    Overfit,
}

pub const DEFAULT_OVERFIT_GAP: f64 = 0.05;

/// Full configuration of one training run.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub generations: usize,
    /// Epochs per generation (K).
    pub epochs_per_generation: usize,
    pub lr_max: f64,
    pub lr_mode: LrMode,
    pub orchestrator: Orchestrator,
    pub score_mode: ScoreMode,
    pub policy: Policy,
    pub budget: SearchBudget,
    pub batch_size: usize,
    pub seed: u64,
    /// Train-minus-test accuracy gap that triggers the overfit orchestrator.
    pub overfit_gap: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            generations: 10,
            epochs_per_generation: 50,
            lr_max: 0.1,
            lr_mode: LrMode::Progressive,
            orchestrator: Orchestrator::ProgressCheck,
            score_mode: ScoreMode::Accuracy,
            policy: Policy::Mcts,
            budget: SearchBudget::default(),
            batch_size: 32,
            seed: 0,
            overfit_gap: DEFAULT_OVERFIT_GAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub generation: usize,
    pub lr: f64,
    pub train_acc: f64,
    pub train_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenRecord {
    pub test_acc: f64,
    /// Text form of the executed action, `None` when no simulation ran.
    pub action: Option<String>,
    /// Whether the model validated after the action.
    pub post_valid: bool,
}

/// Per-epoch and per-generation training history.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub generations: Vec<GenRecord>,
}

impl History {
    /// CSV export: `epoch,generation,lr,train_acc,train_loss,test_acc,action`.
    /// Test accuracy and action appear on the last epoch row of a generation.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,generation,lr,train_acc,train_loss,test_acc,action\n");
        for (i, e) in self.epochs.iter().enumerate() {
            let last_of_gen =
                i + 1 == self.epochs.len() || self.epochs[i + 1].generation != e.generation;
            let (test_acc, action) = if last_of_gen {
                match self.generations.get(e.generation) {
                    Some(g) => (
                        format!("{}", g.test_acc),
                        g.action.clone().unwrap_or_default(),
                    ),
                    None => (String::new(), String::new()),
                }
            } else {
                (String::new(), String::new())
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                i, e.generation, e.lr, e.train_acc, e.train_loss, test_acc, action
            ));
        }
        out
    }

    /// Final epoch's training accuracy of the given generation.
    fn last_train_acc_of_gen(&self, gen: usize) -> Option<f64> {
        self.epochs
            .iter()
            .rev()
            .find(|e| e.generation == gen)
            .map(|e| e.train_acc)
    }
}

/// Learning rate for epoch `epoch_in_gen` of a generation of `k` epochs.
///
/// Progressive mode ramps linearly from `lr_max/k` up to `lr_max` at epoch
/// `floor(k/2)` and back down to `lr_max/k` at the last epoch; it is always
/// positive and attains the peak exactly once.
pub fn lr_at(epoch_in_gen: usize, k: usize, lr_max: f64, mode: LrMode) -> f64 {
    assert!(epoch_in_gen < k, "epoch {epoch_in_gen} outside generation of {k}");
    match mode {
        LrMode::Constant => lr_max,
        LrMode::Progressive => {
            if k == 1 {
                return lr_max;
            }
            let lr_min = lr_max / k as f64;
            let peak = k / 2;
            if epoch_in_gen <= peak {
                lr_min + (lr_max - lr_min) * epoch_in_gen as f64 / peak as f64
            } else {
                let down = (k - 1 - epoch_in_gen) as f64 / (k - 1 - peak) as f64;
                lr_min + (lr_max - lr_min) * down
            }
        }
    }
}

/// Decides whether the architecture simulation runs after the generation
/// whose record was just appended to `history`.
pub fn should_simulate(orchestrator: Orchestrator, history: &History, overfit_gap: f64) -> bool {
    let progress_stalled = || -> bool {
        let gens = &history.generations;
        if gens.len() <= 1 {
            return true; // nothing to compare against yet
        }
        let last = gens[gens.len() - 1].test_acc;
        let prev = gens[gens.len() - 2].test_acc;
        last <= prev
    };
    match orchestrator {
        Orchestrator::Constant => true,
        Orchestrator::ProgressCheck => progress_stalled(),
        Orchestrator::Overfit => {
            let gen = history.generations.len() - 1;
            let train_acc = history.last_train_acc_of_gen(gen).unwrap_or(0.0);
            let test_acc = history.generations[gen].test_acc;
            (train_acc - test_acc) > overfit_gap || progress_stalled()
        }
    }
}

/// Stratified index split; per-class test counts differ from
/// `class_size * test_fraction` by less than one, totals follow largest
/// remainders. Returns (train, test) index lists in ascending order.
pub fn stratified_split_indices<R: Rng>(
    labels: &[usize],
    class_count: usize,
    test_fraction: f64,
    rng: &mut R,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&test_fraction) || test_fraction == 0.0 {
        return Err(Error::InvalidArgument(format!(
            "test_fraction must be in (0, 1), got {test_fraction}"
        )));
    }
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); class_count];
    for (i, &l) in labels.iter().enumerate() {
        per_class[l].push(i);
    }
    if let Some(empty) = per_class.iter().position(|c| c.is_empty()) {
        return Err(Error::InvalidDataset(format!(
            "class {empty} has no samples"
        )));
    }
    let total_test = (labels.len() as f64 * test_fraction).round() as usize;
    let mut base: Vec<usize> = Vec::with_capacity(class_count);
    let mut remainders: Vec<(usize, f64)> = Vec::with_capacity(class_count);
    for (c, members) in per_class.iter().enumerate() {
        let target = members.len() as f64 * test_fraction;
        base.push(target.floor() as usize);
        remainders.push((c, target - target.floor()));
    }
    let mut leftover = total_test.saturating_sub(base.iter().sum::<usize>());
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    for &(c, _) in &remainders {
        if leftover == 0 {
            break;
        }
        if base[c] < per_class[c].len() {
            base[c] += 1;
            leftover -= 1;
        }
    }

    let mut test = Vec::with_capacity(total_test);
    let mut train = Vec::with_capacity(labels.len() - total_test);
    for (c, members) in per_class.iter().enumerate() {
        let mut shuffled = members.clone();
        shuffled.shuffle(rng);
        test.extend_from_slice(&shuffled[..base[c]]);
        train.extend_from_slice(&shuffled[base[c]..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Stratified split of a dataset into disjoint, exhaustive train/test parts.
pub fn stratified_split<R: Rng>(
    ds: &Dataset,
    test_fraction: f64,
    rng: &mut R,
) -> Result<(Dataset, Dataset)> {
    let (train_idx, test_idx) =
        stratified_split_indices(ds.labels(), ds.class_count(), test_fraction, rng)?;
    Ok((ds.subset(&train_idx), ds.subset(&test_idx)))
}

/// Picks `per_class` samples of every class, without replacement.
pub fn simset_indices<R: Rng>(
    labels: &[usize],
    class_count: usize,
    per_class: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let mut per_class_members: Vec<Vec<usize>> = vec![Vec::new(); class_count];
    for (i, &l) in labels.iter().enumerate() {
        per_class_members[l].push(i);
    }
    let mut picked = Vec::with_capacity(per_class * class_count);
    for (c, members) in per_class_members.iter().enumerate() {
        if members.len() < per_class {
            return Err(Error::InvalidDataset(format!(
                "class {c} has {} samples, need {per_class}",
                members.len()
            )));
        }
        let mut shuffled = members.clone();
        shuffled.shuffle(rng);
        picked.extend_from_slice(&shuffled[..per_class]);
    }
    picked.sort_unstable();
    Ok(picked)
}

/// Builds the simulation set: a small stratified subset used to score
/// candidate structures during the search.
pub fn make_simset<R: Rng>(ds: &Dataset, per_class: usize, rng: &mut R) -> Result<Dataset> {
    let idx = simset_indices(ds.labels(), ds.class_count(), per_class, rng)?;
    Ok(ds.subset(&idx))
}

/// One signal per graph input, gathered from the aligned dataset parts.
pub fn signals_for(g: &LayerGraph, parts: &[Dataset], indices: &[usize]) -> Result<Vec<Signal>> {
    if parts.len() != g.inputs().len() {
        return Err(Error::InvalidDataset(format!(
            "model has {} inputs but {} dataset parts were provided",
            g.inputs().len(),
            parts.len()
        )));
    }
    Ok(g.inputs()
        .iter()
        .zip(parts)
        .map(|(&id, part)| Signal::new(id, part.gather(indices)))
        .collect())
}

/// One epoch of shuffled mini-batch SGD. Returns the running mean loss and
/// accuracy across the epoch's batches.
pub fn run_epoch<R: Rng>(
    g: &mut LayerGraph,
    parts: &[Dataset],
    lr: f64,
    batch_size: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    let n = parts
        .first()
        .ok_or_else(|| Error::InvalidDataset("no dataset parts".into()))?
        .len();
    let batch_size = batch_size.clamp(1, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut total_loss = 0.0;
    let mut total_correct = 0.0;
    for chunk in order.chunks(batch_size) {
        let signals = signals_for(g, parts, chunk)?;
        let labels = parts[0].gather_labels(chunk);
        let (l, a) = train_minibatch(g, &signals, &labels, lr)?;
        total_loss += l * chunk.len() as f64;
        total_correct += a * chunk.len() as f64;
    }
    Ok((total_loss / n as f64, total_correct / n as f64))
}

/// Classification accuracy over a dataset.
pub fn evaluate(g: &LayerGraph, parts: &[Dataset], batch_size: usize) -> Result<f64> {
    let n = parts
        .first()
        .ok_or_else(|| Error::InvalidDataset("no dataset parts".into()))?
        .len();
    let batch_size = batch_size.clamp(1, n);
    let indices: Vec<usize> = (0..n).collect();
    let mut correct = 0usize;
    for chunk in indices.chunks(batch_size) {
        let signals = signals_for(g, parts, chunk)?;
        let labels = parts[0].gather_labels(chunk);
        let probs = forward(g, &signals)?;
        correct += probs
            .argmax_columns()
            .iter()
            .zip(&labels)
            .filter(|(p, y)| p == y)
            .count();
    }
    Ok(correct as f64 / n as f64)
}

/// Mean cross-entropy over a dataset.
pub fn evaluate_loss(g: &LayerGraph, parts: &[Dataset], batch_size: usize) -> Result<f64> {
    let n = parts
        .first()
        .ok_or_else(|| Error::InvalidDataset("no dataset parts".into()))?
        .len();
    let batch_size = batch_size.clamp(1, n);
    let indices: Vec<usize> = (0..n).collect();
    let mut total = 0.0;
    for chunk in indices.chunks(batch_size) {
        let signals = signals_for(g, parts, chunk)?;
        let labels = parts[0].gather_labels(chunk);
        let probs = forward(g, &signals)?;
        total += loss(&probs, &labels)? * chunk.len() as f64;
    }
    Ok(total / n as f64)
}

fn check_parts(g: &LayerGraph, parts: &[Dataset], what: &str) -> Result<()> {
    if parts.len() != g.inputs().len() {
        return Err(Error::InvalidDataset(format!(
            "{what}: model has {} inputs but {} parts were provided",
            g.inputs().len(),
            parts.len()
        )));
    }
    for p in parts {
        if p.class_count() != g.classes() {
            return Err(Error::InvalidDataset(format!(
                "{what}: dataset has {} classes but the model outputs {}",
                p.class_count(),
                g.classes()
            )));
        }
        if p.labels() != parts[0].labels() {
            return Err(Error::InvalidDataset(format!(
                "{what}: dataset parts disagree on labels"
            )));
        }
    }
    Ok(())
}

/// Callback observing the model at the end of a generation.
pub type GenerationHook = dyn FnMut(usize, &LayerGraph) -> Result<()> + 'static;

/// Optional observers for a training run.
#[derive(Default)]
pub struct TrainHooks<'a> {
    /// Receives MCTS telemetry lines (`iteration,path,score,elapsed_ms`).
    pub mcts_log: Option<&'a mut (dyn Write + 'static)>,
    /// Called with the model state at the end of every generation, after any
    /// structural action.
    pub on_generation: Option<&'a mut GenerationHook>,
}

/// Runs the full generational loop: per generation, `K` epochs of mini-batch
/// SGD under the learning-rate schedule, then — when the orchestrator fires —
/// one structural action chosen by the configured policy.
///
/// Sequential and fully deterministic for a fixed seed when the budget is
/// iteration-limited.
pub fn train(
    model: LayerGraph,
    train_set: &[Dataset],
    test_set: &[Dataset],
    simset: &[Dataset],
    cfg: &TrainConfig,
    mut hooks: TrainHooks<'_>,
) -> Result<(LayerGraph, History)> {
    if cfg.generations == 0 || cfg.epochs_per_generation == 0 {
        return Err(Error::InvalidArgument(
            "generations and epochs_per_generation must be >= 1".into(),
        ));
    }
    if cfg.lr_max <= 0.0 {
        return Err(Error::InvalidArgument("lr_max must be > 0".into()));
    }
    check_parts(&model, train_set, "train set")?;
    check_parts(&model, test_set, "test set")?;
    check_parts(&model, simset, "simulation set")?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = model;
    let mut history = History::default();
    let sgd = SgdOpts {
        lr: cfg.lr_max,
        batch_size: cfg.batch_size,
    };

    for gen in 0..cfg.generations {
        let attach = |e: Error| Error::Generation {
            generation: gen,
            source: Box::new(e),
        };
        for epoch in 0..cfg.epochs_per_generation {
            let lr = lr_at(epoch, cfg.epochs_per_generation, cfg.lr_max, cfg.lr_mode);
            let (train_loss, train_acc) =
                run_epoch(&mut model, train_set, lr, cfg.batch_size, &mut rng).map_err(attach)?;
            history.epochs.push(EpochRecord {
                generation: gen,
                lr,
                train_acc,
                train_loss,
            });
        }
        let test_acc = evaluate(&model, test_set, cfg.batch_size).map_err(attach)?;
        history.generations.push(GenRecord {
            test_acc,
            action: None,
            post_valid: true,
        });
        if should_simulate(cfg.orchestrator, &history, cfg.overfit_gap) {
            let action = choose_action(
                cfg.policy,
                &model,
                simset,
                &cfg.budget,
                cfg.score_mode,
                &sgd,
                &mut rng,
                hooks.mcts_log.as_deref_mut(),
            )
            .map_err(attach)?;
            model = execute(action, &model, &mut rng).map_err(attach)?;
            let rec = history.generations.last_mut().unwrap();
            rec.action = Some(action.to_string());
            rec.post_valid = model.is_valid();
        }
        if let Some(cb) = hooks.on_generation.as_deref_mut() {
            cb(gen, &model).map_err(attach)?;
        }
    }
    Ok((model, history))
}
