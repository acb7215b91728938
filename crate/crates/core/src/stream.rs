//! Streaming loop: initialization, per-example updates with replay and
//! augmentation, learning-rate schedules, data orderings, multi-task
//! replay strategies, and the JSON-lines metrics log.

use std::collections::BTreeSet;
use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{augment_pipeline, AugFeatures, AugPolicy, PerturbationSpec};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::metrics::{self, Prediction};
use crate::net::{
    self, apply_update_parts, backward_view, forward, trainable_mask, GradientSet, LossTarget,
    Mode, NetView, NetworkParams,
};
use crate::replay::{Codec, EvictionPolicy, Example, ReplayBuffer};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum EtaSchedule {
    Constant { eta: f64 },
    /// Linear decay from `eta_hi` at a class's first example to `eta_lo`
    /// at its last. Only meaningful for class-ordered streams.
    PerClassLinear { eta_hi: f64, eta_lo: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ordering {
    Iid,
    ClassIid,
    Instance,
    ClassInstance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InitSpec {
    Random,
    Checkpoint { path: PathBuf },
}

/// How replay updates for previously seen tasks are scheduled.
/// `full` draws B samples per past task, `split` divides B across them;
/// `sep` applies one update per task, `sum` one combined update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MultitaskReplay {
    FullSep,
    FullSum,
    SplitSep,
    SplitSum,
    /// Ablation switch: no cross-task replay at all.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StreamConfig {
    pub mode: Mode,
    pub m: usize,
    pub depth: usize,
    pub eta: EtaSchedule,
    /// Replay samples drawn per iteration.
    pub replay_samples: usize,
    /// Buffer capacity in examples.
    pub capacity: usize,
    pub codec: Codec,
    pub eviction: EvictionPolicy,
    pub policy: AugPolicy,
    pub ordering: Ordering,
    /// Testing-event cadence in stream steps; 0 means final event only.
    pub eval_every: u64,
    pub seed: u64,
    pub init: InitSpec,
    pub multitask_replay: MultitaskReplay,
    /// Record real wall-clock times. Off by default so that reruns with
    /// the same config and seed produce byte-identical logs.
    pub log_timing: bool,
}

impl Default for StreamConfig {
    fn default() -> Self {
        StreamConfig {
            mode: Mode::Practical,
            m: 64,
            depth: 3,
            eta: EtaSchedule::Constant { eta: 0.05 },
            replay_samples: 16,
            capacity: 200,
            codec: Codec::Identity,
            eviction: EvictionPolicy::ClassBalancedRandom,
            policy: AugPolicy::default(),
            ordering: Ordering::ClassIid,
            eval_every: 0,
            seed: 0,
            init: InitSpec::Random,
            multitask_replay: MultitaskReplay::FullSep,
            log_timing: false,
        }
    }
}

impl StreamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.capacity < 1 {
            return Err(Error::Config("capacity must be >= 1".into()));
        }
        match self.eta {
            EtaSchedule::Constant { eta } => {
                if eta <= 0.0 {
                    return Err(Error::Config(format!("eta must be > 0, got {eta}")));
                }
            }
            EtaSchedule::PerClassLinear { eta_hi, eta_lo } => {
                if eta_hi <= 0.0 || eta_lo <= 0.0 {
                    return Err(Error::Config(format!(
                        "eta_hi and eta_lo must be > 0, got {eta_hi}, {eta_lo}"
                    )));
                }
            }
        }
        if self.m < 1 || self.depth < 2 {
            return Err(Error::Config(format!(
                "need m >= 1 and depth >= 2, got m={} depth={}",
                self.m, self.depth
            )));
        }
        self.codec.validate()?;
        self.policy.validate()
    }
}

/// Shared trunk (W1 .. W_{L-1}) with one output head per task.
#[derive(Debug, Clone)]
pub struct TaskHeadSet {
    pub d: usize,
    pub m: usize,
    pub depth: usize,
    pub mode: Mode,
    base_seed: u64,
    pub w1: Matrix,
    pub w_mid: Vec<Matrix>,
    pub heads: BTreeMap<u32, Matrix>,
}

impl TaskHeadSet {
    pub fn from_params(params: NetworkParams, first_task: u32) -> Self {
        let mut heads = BTreeMap::new();
        let base_seed = params.seed;
        heads.insert(first_task, params.w_out);
        TaskHeadSet {
            d: params.d,
            m: params.m,
            depth: params.depth,
            mode: params.mode,
            base_seed,
            w1: params.w1,
            w_mid: params.w_mid,
            heads,
        }
    }

    /// Create the head for `task` if missing, drawn from a seed derived
    /// deterministically from the base seed and the task id.
    pub fn ensure_head(&mut self, task: u32, k: usize) {
        let seed = self
            .base_seed
            .wrapping_mul(0x9e37_79b9_7f4a_7c15)
            .wrapping_add(task as u64 + 1);
        self.heads
            .entry(task)
            .or_insert_with(|| net::init_head(self.m, k, seed));
    }

    pub fn view(&self, task: u32) -> Result<NetView<'_>> {
        let head = self
            .heads
            .get(&task)
            .ok_or_else(|| Error::State(format!("no head for task {task}")))?;
        Ok(NetView {
            w1: &self.w1,
            w_mid: &self.w_mid,
            w_out: head,
            m: self.m,
        })
    }

    /// Recombine the trunk with one task's head into a standalone
    /// parameter set (e.g. for checkpointing).
    pub fn to_params(&self, task: u32) -> Result<NetworkParams> {
        let head = self
            .heads
            .get(&task)
            .ok_or_else(|| Error::State(format!("no head for task {task}")))?;
        Ok(NetworkParams {
            d: self.d,
            m: self.m,
            depth: self.depth,
            k: head.rows(),
            mode: self.mode,
            seed: self.base_seed,
            w1: self.w1.clone(),
            w_mid: self.w_mid.clone(),
            w_out: head.clone(),
        })
    }

    fn update(&mut self, task: u32, grads: &[GradientSet], eta: f64) -> Result<()> {
        let mask = trainable_mask(self.mode, self.depth);
        let head = self
            .heads
            .get_mut(&task)
            .ok_or_else(|| Error::State(format!("no head for task {task}")))?;
        apply_update_parts(&mut self.w1, &mut self.w_mid, head, &mask, grads, eta)
    }
}

/// One task's data: a training stream and a held-out evaluation set.
#[derive(Debug, Clone)]
pub struct TaskData {
    pub task_id: u32,
    pub num_classes: usize,
    pub train: Vec<Example>,
    pub test: Vec<Example>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub t: u64,
    pub task: u32,
    pub acc_topk: Vec<f64>,
    pub seen_classes: Vec<u32>,
    pub ece: f64,
    pub wall_ms: u64,
}

pub struct StreamState {
    pub model: TaskHeadSet,
    pub buffers: BTreeMap<u32, ReplayBuffer>,
    pub t: u64,
    /// (task, class) -> examples consumed so far, feeding the schedule.
    pub class_consumed: BTreeMap<(u32, u32), u64>,
    /// (task, class) -> total stream size, from the dataset manifest.
    pub class_totals: BTreeMap<(u32, u32), u64>,
    pub seen_classes: BTreeMap<u32, BTreeSet<u32>>,
    pub task_classes: BTreeMap<u32, usize>,
    pub perturb: PerturbationSpec,
    pub numeric_skips: u64,
    pub new_grad_count: u64,
    pub rng: ChaCha8Rng,
    /// Schedule after the ordering compatibility check.
    pub effective_eta: EtaSchedule,
    pub notices: Vec<String>,
}

pub fn schedule_eta(schedule: &EtaSchedule, class_progress: f64) -> f64 {
    match *schedule {
        EtaSchedule::Constant { eta } => eta,
        EtaSchedule::PerClassLinear { eta_hi, eta_lo } => {
            let p = class_progress.clamp(0.0, 1.0);
            eta_hi + (eta_lo - eta_hi) * p
        }
    }
}

/// Permute a task's examples for streaming.
pub fn order_stream(examples: &[Example], ordering: Ordering, seed: u64) -> Result<Vec<Example>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shuffle = |v: &mut Vec<usize>, rng: &mut ChaCha8Rng| {
        // Fisher-Yates; gen_range keeps the draw count deterministic
        for i in (1..v.len()).rev() {
            let j = rng.gen_range(0..=i);
            v.swap(i, j);
        }
    };
    let idx: Vec<usize> = match ordering {
        Ordering::Iid => {
            let mut idx: Vec<usize> = (0..examples.len()).collect();
            shuffle(&mut idx, &mut rng);
            idx
        }
        Ordering::ClassIid | Ordering::ClassInstance => {
            let mut by_class: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
            for (i, e) in examples.iter().enumerate() {
                by_class.entry(e.label).or_default().push(i);
            }
            let mut classes: Vec<u32> = by_class.keys().copied().collect();
            let mut class_order: Vec<usize> = (0..classes.len()).collect();
            shuffle(&mut class_order, &mut rng);
            classes = class_order.into_iter().map(|i| classes[i]).collect();
            let mut idx = Vec::with_capacity(examples.len());
            for class in classes {
                let mut members = by_class.remove(&class).unwrap();
                if ordering == Ordering::ClassIid {
                    shuffle(&mut members, &mut rng);
                    idx.extend(members);
                } else {
                    idx.extend(order_by_group(examples, &members, &mut rng)?);
                }
            }
            idx
        }
        Ordering::Instance => {
            let all: Vec<usize> = (0..examples.len()).collect();
            order_by_group(examples, &all, &mut rng)?
        }
    };
    Ok(idx.into_iter().map(|i| examples[i].clone()).collect())
}

/// Shuffle group order, keeping each group's original internal order.
fn order_by_group(
    examples: &[Example],
    members: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    let mut by_group: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for &i in members {
        let g = examples[i].group_id.ok_or_else(|| {
            Error::Config("instance ordering requires group_id on every example".into())
        })?;
        by_group.entry(g).or_default().push(i);
    }
    let groups: Vec<u32> = by_group.keys().copied().collect();
    let mut group_order: Vec<usize> = (0..groups.len()).collect();
    for i in (1..group_order.len()).rev() {
        let j = rng.gen_range(0..=i);
        group_order.swap(i, j);
    }
    let mut out = Vec::with_capacity(members.len());
    for gi in group_order {
        out.extend(by_group[&groups[gi]].iter().copied());
    }
    Ok(out)
}

pub fn initialize(config: &StreamConfig, tasks: &[TaskData]) -> Result<StreamState> {
    config.validate()?;
    if tasks.is_empty() || tasks.iter().any(|t| t.train.is_empty()) {
        return Err(Error::Config("every task needs a nonempty training stream".into()));
    }
    let first = &tasks[0];
    let d = first.train[0].features.len();
    let k0 = head_width(config.mode, first.num_classes)?;

    let params = match &config.init {
        InitSpec::Random => net::init_params(d, config.m, config.depth, k0, config.seed, config.mode)?,
        InitSpec::Checkpoint { path } => {
            let p = net::load_checkpoint(path)?;
            if p.d != d || p.m != config.m || p.depth != config.depth || p.k != k0 {
                return Err(Error::Config(format!(
                    "checkpoint shape d={} m={} L={} K={} does not match run d={} m={} L={} K={}",
                    p.d, p.m, p.depth, p.k, d, config.m, config.depth, k0
                )));
            }
            if p.mode != config.mode {
                return Err(Error::Config("checkpoint mode does not match run mode".into()));
            }
            p
        }
    };

    let mut notices = Vec::new();
    let effective_eta = match (config.eta, config.ordering) {
        (EtaSchedule::PerClassLinear { eta_hi, .. }, Ordering::Iid | Ordering::Instance) => {
            notices.push(format!(
                "per_class_linear schedule needs a class ordering; using constant eta = {eta_hi}"
            ));
            EtaSchedule::Constant { eta: eta_hi }
        }
        (eta, _) => eta,
    };

    let mut task_classes = BTreeMap::new();
    for t in tasks {
        if config.mode == Mode::Theory && t.num_classes != 2 {
            return Err(Error::Config(format!(
                "theory mode is binary; task {} has {} classes",
                t.task_id, t.num_classes
            )));
        }
        if task_classes.insert(t.task_id, t.num_classes).is_some() {
            return Err(Error::Config(format!("duplicate task id {}", t.task_id)));
        }
    }

    Ok(StreamState {
        model: TaskHeadSet::from_params(params, first.task_id),
        buffers: BTreeMap::new(),
        t: 0,
        class_consumed: BTreeMap::new(),
        class_totals: BTreeMap::new(),
        seen_classes: BTreeMap::new(),
        task_classes,
        perturb: PerturbationSpec::default(),
        numeric_skips: 0,
        new_grad_count: 0,
        rng: ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1)),
        effective_eta,
        notices,
    })
}

fn head_width(mode: Mode, num_classes: usize) -> Result<usize> {
    match mode {
        Mode::Theory => {
            if num_classes != 2 {
                return Err(Error::Config(format!(
                    "theory mode is binary, got {num_classes} classes"
                )));
            }
            Ok(1)
        }
        Mode::Practical => {
            if num_classes < 2 {
                return Err(Error::Config(format!("need >= 2 classes, got {num_classes}")));
            }
            Ok(num_classes)
        }
    }
}

/// Scale augmented features into network input space. Images come in as
/// [0, 255] floats and go out in [0, 1]; vectors pass through.
pub fn net_input(f: &AugFeatures) -> Vec<f64> {
    match f {
        AugFeatures::Vector(v) => v.clone(),
        AugFeatures::Image(img) => img.data.iter().map(|&v| v / 255.0).collect(),
    }
}

fn loss_target(mode: Mode, soft_label: &[f64]) -> LossTarget {
    match mode {
        // binary labels 0/1 map to y in {-1, +1}
        Mode::Theory => LossTarget::Binary {
            y: soft_label[1] - soft_label[0],
        },
        Mode::Practical => LossTarget::Soft(soft_label.to_vec()),
    }
}

/// Gradients for one augmented batch against one task's head.
fn batch_grads(
    model: &TaskHeadSet,
    task: u32,
    inputs: &[AugFeatures],
    labels: &[Vec<f64>],
) -> Result<Vec<GradientSet>> {
    let view = model.view(task)?;
    let mut grads = Vec::with_capacity(inputs.len());
    for (f, label) in inputs.iter().zip(labels.iter()) {
        let x = net_input(f);
        let trace = forward(view, &x)?;
        if !trace.output.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("non-finite network output".into()));
        }
        grads.push(backward_view(view, model.mode, &trace, &loss_target(model.mode, label))?);
    }
    Ok(grads)
}

/// One Algorithm-1 iteration: replay-sample, augment, update, store,
/// evict, then replay-only updates for past tasks. A numeric failure in
/// any update skips that update, flags the iteration, and leaves the
/// parameters from before it; the example is still stored and counted.
pub fn step(state: &mut StreamState, config: &StreamConfig, example: &Example) -> Result<()> {
    let task = example.task_id;
    let num_classes = *state
        .task_classes
        .get(&task)
        .ok_or_else(|| Error::State(format!("unknown task {task}")))?;
    state.model.ensure_head(task, head_width(config.mode, num_classes)?);

    // learning rate from within-class position
    let key = (task, example.label);
    let consumed = *state.class_consumed.get(&key).unwrap_or(&0);
    let total = *state.class_totals.get(&key).unwrap_or(&0);
    let progress = if total > 1 {
        consumed as f64 / (total - 1) as f64
    } else {
        0.0
    };
    let eta = schedule_eta(&state.effective_eta, progress);

    // (1)-(2) replay sample joined with the new example
    let replayed = match state.buffers.get(&task) {
        Some(buf) => buf.sample(config.replay_samples, &mut state.rng)?,
        None => Vec::new(),
    };
    let mut batch = Vec::with_capacity(1 + replayed.len());
    batch.push(example.clone());
    batch.extend(replayed);

    // (3)-(4) augment, then one combined update
    let aug = augment_pipeline(&batch, &config.policy, num_classes, &mut state.perturb, &mut state.rng)?;
    match batch_grads(&state.model, task, &aug.inputs, &aug.labels)
        .and_then(|g| state.model.update(task, &g, eta))
    {
        Ok(()) => {}
        Err(Error::Numeric(_)) => state.numeric_skips += 1,
        Err(e) => return Err(e),
    }
    state.new_grad_count += 1;

    // (5)-(6) compress, store, evict
    let buf = match state.buffers.get_mut(&task) {
        Some(b) => b,
        None => {
            let b = ReplayBuffer::new(config.capacity, config.codec, config.eviction)?;
            state.buffers.entry(task).or_insert(b)
        }
    };
    buf.store(example, &mut state.rng)?;

    // (7) replay-only updates for previously seen tasks
    replay_past_tasks(state, config, task, eta)?;

    // (8) bookkeeping
    state.t += 1;
    *state.class_consumed.entry(key).or_insert(0) += 1;
    state.seen_classes.entry(task).or_default().insert(example.label);
    Ok(())
}

/// Sub-step (7): replay-driven updates for every past task per the
/// configured strategy. `sep` applies one update per task; `sum` applies
/// all tasks' gradients as a single atomic update.
pub fn replay_past_tasks(
    state: &mut StreamState,
    config: &StreamConfig,
    current_task: u32,
    eta: f64,
) -> Result<()> {
    let past: Vec<u32> = state
        .buffers
        .iter()
        .filter(|(&id, buf)| id != current_task && !buf.is_empty())
        .map(|(&id, _)| id)
        .collect();
    if past.is_empty() {
        return Ok(());
    }
    let per_task = match config.multitask_replay {
        MultitaskReplay::None => return Ok(()),
        MultitaskReplay::FullSep | MultitaskReplay::FullSum => config.replay_samples,
        MultitaskReplay::SplitSep | MultitaskReplay::SplitSum => {
            config.replay_samples / past.len()
        }
    };
    if per_task == 0 {
        return Ok(());
    }
    let separate = matches!(
        config.multitask_replay,
        MultitaskReplay::FullSep | MultitaskReplay::SplitSep
    );

    let mut summed: Vec<(u32, Vec<GradientSet>)> = Vec::new();
    for task in past {
        let num_classes = state.task_classes[&task];
        let batch = state.buffers[&task].sample(per_task, &mut state.rng)?;
        if batch.is_empty() {
            continue;
        }
        let aug = augment_pipeline(&batch, &config.policy, num_classes, &mut state.perturb, &mut state.rng)?;
        let grads = match batch_grads(&state.model, task, &aug.inputs, &aug.labels) {
            Ok(g) => g,
            Err(Error::Numeric(_)) => {
                state.numeric_skips += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        if separate {
            match state.model.update(task, &grads, eta) {
                Ok(()) => {}
                Err(Error::Numeric(_)) => state.numeric_skips += 1,
                Err(e) => return Err(e),
            }
        } else {
            summed.push((task, grads));
        }
    }
    if !separate && !summed.is_empty() {
        // atomic: check everything, then apply everything
        if summed.iter().any(|(_, gs)| gs.iter().any(|g| !g.is_finite())) {
            state.numeric_skips += 1;
            return Ok(());
        }
        for (task, grads) in summed {
            state.model.update(task, &grads, eta)?;
        }
    }
    Ok(())
}

/// Evaluate one task's test set restricted to classes seen so far;
/// prediction is the argmax over seen-class logits.
pub fn evaluate_task(
    model: &TaskHeadSet,
    test: &[Example],
    seen: &BTreeSet<u32>,
) -> Result<(Vec<Prediction>, Vec<Vec<f64>>, Vec<u32>)> {
    let mut preds = Vec::new();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for e in test {
        if !seen.contains(&e.label) {
            continue;
        }
        let task_view = model.view(e.task_id)?;
        let x = net_input(&AugFeatures::from_example(&e.features));
        let trace = forward(task_view, &x)?;
        if model.mode == Mode::Theory {
            let z = trace.output[0];
            let predicted = if z > 0.0 { 1 } else { 0 };
            let confidence = 1.0 / (1.0 + (-z.abs()).exp());
            preds.push(Prediction { predicted, confidence, label: e.label });
            rows.push(vec![0.0, z]);
        } else {
            let probs = net::softmax(&trace.output);
            let (mut best, mut best_p) = (0u32, f64::NEG_INFINITY);
            for &c in seen {
                let p = probs[c as usize];
                if p > best_p {
                    best = c;
                    best_p = p;
                }
            }
            preds.push(Prediction { predicted: best, confidence: best_p, label: e.label });
            // unseen classes masked out of the ranking
            let row: Vec<f64> = trace
                .output
                .iter()
                .enumerate()
                .map(|(c, &z)| if seen.contains(&(c as u32)) { z } else { f64::NEG_INFINITY })
                .collect();
            rows.push(row);
        }
        labels.push(e.label);
    }
    Ok((preds, rows, labels))
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub records: Vec<MetricsRecord>,
    pub omega_all: Option<f64>,
    pub numeric_skips: u64,
    pub xi_sq_sup: f64,
    pub examples_consumed: u64,
}

/// Execute a full single-pass run and write the JSON-lines log to `sink`:
/// optional notice lines, one record per testing event, and a final
/// `omega_all` line when offline references are supplied.
pub fn run<W: Write>(
    config: &StreamConfig,
    tasks: &[TaskData],
    offline_refs: Option<&[f64]>,
    sink: &mut W,
) -> Result<RunSummary> {
    run_with_state(config, tasks, offline_refs, sink).map(|(summary, _)| summary)
}

/// [`run`], additionally handing back the final state so callers can
/// checkpoint the model or snapshot the buffers.
pub fn run_with_state<W: Write>(
    config: &StreamConfig,
    tasks: &[TaskData],
    offline_refs: Option<&[f64]>,
    sink: &mut W,
) -> Result<(RunSummary, StreamState)> {
    let mut state = initialize(config, tasks)?;
    let started = Instant::now();

    for notice in &state.notices {
        let line = serde_json::json!({ "notice": notice });
        writeln!(sink, "{line}")?;
    }

    // per-task ordering, tasks streamed in the order given
    let mut stream: Vec<Example> = Vec::new();
    for (i, task) in tasks.iter().enumerate() {
        let ordered = order_stream(&task.train, config.ordering, config.seed.wrapping_add(i as u64))?;
        for e in &ordered {
            let key = (e.task_id, e.label);
            *state.class_totals.entry(key).or_insert(0) += 1;
        }
        stream.extend(ordered);
    }

    let mut records = Vec::new();
    let emit = |state: &StreamState, records: &mut Vec<MetricsRecord>, sink: &mut W| -> Result<()> {
        let wall_ms = if config.log_timing {
            started.elapsed().as_millis() as u64
        } else {
            0
        };
        for task in tasks {
            let seen = match state.seen_classes.get(&task.task_id) {
                Some(s) if !s.is_empty() => s,
                _ => continue,
            };
            let (preds, rows, labels) = evaluate_task(&state.model, &task.test, seen)?;
            if preds.is_empty() {
                continue;
            }
            let mut acc_topk = vec![metrics::topk_accuracy(&rows, &labels, 1)?];
            if task.num_classes > 5 {
                acc_topk.push(metrics::topk_accuracy(&rows, &labels, 5)?);
            }
            let record = MetricsRecord {
                t: state.t,
                task: task.task_id,
                acc_topk,
                seen_classes: seen.iter().copied().collect(),
                ece: metrics::ece(&preds, 15)?,
                wall_ms,
            };
            writeln!(sink, "{}", serde_json::to_string(&record)?)?;
            records.push(record);
        }
        Ok(())
    };

    let mut last_eval_t = u64::MAX;
    for example in &stream {
        step(&mut state, config, example)?;
        if config.eval_every > 0 && state.t % config.eval_every == 0 {
            emit(&state, &mut records, sink)?;
            last_eval_t = state.t;
        }
    }
    if last_eval_t != state.t {
        emit(&state, &mut records, sink)?;
    }

    let omega = match offline_refs {
        Some(refs) => {
            let streaming: Vec<f64> = records.iter().map(|r| r.acc_topk[0]).collect();
            let omega = metrics::omega_all(&metrics::OmegaInputs {
                streaming,
                offline: refs.to_vec(),
            })?;
            writeln!(sink, "{}", serde_json::json!({ "omega_all": omega }))?;
            Some(omega)
        }
        None => None,
    };

    let summary = RunSummary {
        records,
        omega_all: omega,
        numeric_skips: state.numeric_skips,
        xi_sq_sup: state.perturb.xi_sq_sup,
        examples_consumed: state.t,
    };
    Ok((summary, state))
}
