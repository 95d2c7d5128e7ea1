//! Masked sparse fine-tuning: a minimal reverse-mode graph over the
//! dispatched operators, sparse parameters that are re-sparsified into
//! their own format after every update, and the one-shot, iterative, and
//! layer-wise magnitude-pruning schedules.

use crate::dispatch::{OutputFormat, Registry};
use crate::error::{Error, Result};
use crate::matrix::{DenseMatrix, Matrix};
use crate::scalar::Scalar;
use crate::sparsify::{self, SparsifierSpec};
use serde::{Deserialize, Serialize};

// ---------------------------------------------------------------------------
// Graph
// ---------------------------------------------------------------------------

pub type NodeId = usize;

/// Gradient handling for one parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradFormat {
    /// Keep the full dense gradient.
    Dense,
    /// Restrict the gradient to the parameter's stored support, mirroring
    /// the parameter's own sparsity.
    SameFormat,
}

/// A trainable tensor: its current (possibly sparse) value plus the
/// gradient format. After every update the value is re-sparsified into its
/// original layout, so the layout invariants hold at all times.
#[derive(Debug, Clone)]
pub struct SparseParameter<T: Scalar> {
    pub value: Matrix<T>,
    pub grad_format: GradFormat,
}

impl<T: Scalar> SparseParameter<T> {
    pub fn dense(value: DenseMatrix<T>) -> Self {
        SparseParameter {
            value: Matrix::Dense(value),
            grad_format: GradFormat::SameFormat,
        }
    }

    pub fn new(value: Matrix<T>, grad_format: GradFormat) -> Self {
        SparseParameter { value, grad_format }
    }
}

#[derive(Debug, Clone, Copy)]
enum NodeOp {
    Input,
    Parameter,
    Matmul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Relu(NodeId),
    MseLoss(NodeId, NodeId),
}

struct Node<T: Scalar> {
    op: NodeOp,
    value: Option<Matrix<T>>,
    grad: Option<DenseMatrix<T>>,
}

/// Acyclic computation graph; nodes reference only earlier nodes, so id
/// order is a topological order.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    params: Vec<(NodeId, SparseParameter<T>)>,
    ran_forward: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            params: Vec::new(),
            ran_forward: false,
        }
    }

    fn push(&mut self, op: NodeOp) -> NodeId {
        self.nodes.push(Node {
            op,
            value: None,
            grad: None,
        });
        self.nodes.len() - 1
    }

    pub fn input(&mut self) -> NodeId {
        self.push(NodeOp::Input)
    }

    pub fn parameter(&mut self, p: SparseParameter<T>) -> NodeId {
        let id = self.push(NodeOp::Parameter);
        self.params.push((id, p));
        id
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(NodeOp::Matmul(a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(NodeOp::Add(a, b))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.push(NodeOp::Relu(x))
    }

    pub fn mse_loss(&mut self, prediction: NodeId, target: NodeId) -> NodeId {
        self.push(NodeOp::MseLoss(prediction, target))
    }

    pub fn parameters(&self) -> impl Iterator<Item = (NodeId, &SparseParameter<T>)> {
        self.params.iter().map(|(id, p)| (*id, p))
    }

    pub fn parameter_value(&self, id: NodeId) -> Option<&Matrix<T>> {
        self.params.iter().find(|(pid, _)| *pid == id).map(|(_, p)| &p.value)
    }

    pub fn set_parameter_value(&mut self, id: NodeId, value: Matrix<T>) -> Result<()> {
        let slot = self
            .params
            .iter_mut()
            .find(|(pid, _)| *pid == id)
            .ok_or_else(|| Error::State(format!("node {id} is not a parameter")))?;
        slot.1.value = value;
        self.ran_forward = false;
        Ok(())
    }

    /// Gradient cached on a parameter after [`Graph::backward`].
    pub fn parameter_grad(&self, id: NodeId) -> Option<&DenseMatrix<T>> {
        self.nodes[id].grad.as_ref()
    }

    /// Evaluates the graph. `inputs` feeds every Input node; the value of
    /// `loss_id` (a 1x1 matrix) is returned as a scalar.
    pub fn forward(
        &mut self,
        registry: &Registry<T>,
        inputs: &[(NodeId, DenseMatrix<T>)],
        loss_id: NodeId,
    ) -> Result<f64> {
        for node in &mut self.nodes {
            node.value = None;
            node.grad = None;
        }
        for (id, value) in inputs {
            match self.nodes[*id].op {
                NodeOp::Input => self.nodes[*id].value = Some(Matrix::Dense(value.clone())),
                _ => return Err(Error::State(format!("node {id} is not an input"))),
            }
        }
        for (id, p) in &self.params {
            self.nodes[*id].value = Some(p.value.clone());
        }
        for id in 0..self.nodes.len() {
            let value = match self.nodes[id].op {
                NodeOp::Input => {
                    if self.nodes[id].value.is_none() {
                        return Err(Error::State(format!("input node {id} was not fed")));
                    }
                    continue;
                }
                NodeOp::Parameter => continue,
                NodeOp::Matmul(a, b) => {
                    self.run_op(registry, "matmul", &[a, b])?
                }
                NodeOp::Add(a, b) => self.run_op(registry, "add", &[a, b])?,
                NodeOp::Relu(x) => self.run_op(registry, "relu", &[x])?,
                NodeOp::MseLoss(pred, target) => {
                    let p = self.value_of(pred)?.to_dense();
                    let t = self.value_of(target)?.to_dense();
                    if p.shape() != t.shape() {
                        return Err(Error::ShapeMismatch {
                            expected: t.shape(),
                            got: p.shape(),
                            context: "mse_loss".into(),
                        });
                    }
                    let sum: f64 = p
                        .as_slice()
                        .iter()
                        .zip(t.as_slice())
                        .map(|(&a, &b)| {
                            let d = a.as_f64() - b.as_f64();
                            d * d
                        })
                        .sum();
                    let mse = sum / p.len() as f64;
                    Matrix::Dense(DenseMatrix::new(1, 1, vec![T::from_f64(mse)])?)
                }
            };
            self.nodes[id].value = Some(value);
        }
        self.ran_forward = true;
        let loss = self.value_of(loss_id)?.to_dense();
        if loss.shape() != (1, 1) {
            return Err(Error::State("loss node must be scalar".into()));
        }
        Ok(loss.get(0, 0).as_f64())
    }

    fn value_of(&self, id: NodeId) -> Result<&Matrix<T>> {
        self.nodes[id]
            .value
            .as_ref()
            .ok_or_else(|| Error::State(format!("node {id} has no value; run forward")))
    }

    fn run_op(&self, registry: &Registry<T>, op: &str, args: &[NodeId]) -> Result<Matrix<T>> {
        let inputs: Vec<Matrix<T>> = args
            .iter()
            .map(|&a| self.value_of(a).cloned())
            .collect::<Result<_>>()?;
        let mut result = registry.execute(op, &inputs, &[OutputFormat::dense()])?;
        Ok(result.outputs.remove(0))
    }

    /// Reverse accumulation from `loss_id`. Parameter gradients are passed
    /// through their gradient format (SameFormat masks them to the
    /// parameter's stored support).
    pub fn backward(&mut self, registry: &Registry<T>, loss_id: NodeId) -> Result<()> {
        if !self.ran_forward {
            return Err(Error::State("backward called before forward".into()));
        }
        let seed = DenseMatrix::new(1, 1, vec![T::one()])?;
        self.accumulate(loss_id, seed)?;
        for id in (0..self.nodes.len()).rev() {
            let Some(grad) = self.nodes[id].grad.clone() else {
                continue;
            };
            match self.nodes[id].op {
                NodeOp::Input | NodeOp::Parameter => {}
                NodeOp::Matmul(a, b) => {
                    let vals = [self.value_of(a)?.clone(), self.value_of(b)?.clone()];
                    let grads = registry.execute_backward("matmul", &vals, &grad)?;
                    let [da, db]: [DenseMatrix<T>; 2] = grads
                        .try_into()
                        .map_err(|_| Error::Structure("matmul backward arity".into()))?;
                    self.accumulate(a, da)?;
                    self.accumulate(b, db)?;
                }
                NodeOp::Add(a, b) => {
                    let vals = [self.value_of(a)?.clone(), self.value_of(b)?.clone()];
                    let grads = registry.execute_backward("add", &vals, &grad)?;
                    let [da, db]: [DenseMatrix<T>; 2] = grads
                        .try_into()
                        .map_err(|_| Error::Structure("add backward arity".into()))?;
                    self.accumulate(a, da)?;
                    self.accumulate(b, db)?;
                }
                NodeOp::Relu(x) => {
                    let vals = [self.value_of(x)?.clone()];
                    let grads = registry.execute_backward("relu", &vals, &grad)?;
                    let [dx]: [DenseMatrix<T>; 1] = grads
                        .try_into()
                        .map_err(|_| Error::Structure("relu backward arity".into()))?;
                    self.accumulate(x, dx)?;
                }
                NodeOp::MseLoss(pred, target) => {
                    // d/dpred mean((pred - t)^2) = 2 (pred - t) / size
                    let p = self.value_of(pred)?.to_dense();
                    let t = self.value_of(target)?.to_dense();
                    let scale = T::from_f64(2.0 / p.len() as f64) * grad.get(0, 0);
                    let dp = DenseMatrix::from_fn(p.rows(), p.cols(), |i, j| {
                        scale * (p.get(i, j) - t.get(i, j))
                    });
                    self.accumulate(pred, dp)?;
                }
            }
        }
        // apply gradient output formats at the parameters
        for (id, p) in &self.params {
            if p.grad_format == GradFormat::SameFormat {
                if let Some(grad) = self.nodes[*id].grad.take() {
                    let mask = p.value.support_mask();
                    let masked = crate::matrix::MaskedMatrix::apply_mask(&grad, mask)?;
                    self.nodes[*id].grad = Some(masked.to_dense());
                }
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, id: NodeId, grad: DenseMatrix<T>) -> Result<()> {
        match &mut self.nodes[id].grad {
            Some(existing) => {
                if existing.shape() != grad.shape() {
                    return Err(Error::ShapeMismatch {
                        expected: existing.shape(),
                        got: grad.shape(),
                        context: "gradient accumulation".into(),
                    });
                }
                for (e, g) in existing.as_mut_slice().iter_mut().zip(grad.as_slice()) {
                    *e += *g;
                }
            }
            slot @ None => *slot = Some(grad),
        }
        Ok(())
    }

    /// One plain-SGD update: every parameter becomes
    /// `same_format(old, dense(old) - lr * grad)`, restoring its layout
    /// invariants.
    pub fn sgd_step(&mut self, lr: f64) -> Result<()> {
        let lr = T::from_f64(lr);
        for i in 0..self.params.len() {
            let (id, _) = self.params[i];
            let Some(grad) = self.nodes[id].grad.clone() else {
                continue;
            };
            let old = self.params[i].1.value.clone();
            let mut updated = old.to_dense();
            for (v, g) in updated.as_mut_slice().iter_mut().zip(grad.as_slice()) {
                *v = *v - lr * *g;
            }
            self.params[i].1.value = sparsify::apply_same_format(&old, &updated)?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Two-layer MLP and synthetic data
// ---------------------------------------------------------------------------

/// Configuration of the demo regression model and task.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub samples: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            input_dim: 64,
            hidden_dim: 32,
            output_dim: 1,
            samples: 256,
            noise: 0.05,
            seed: 42,
        }
    }
}

/// Bias-free two-layer MLP `w2 * relu(w1 * x)` with MSE loss, wired into a
/// graph. Inputs are column-major batches (`input_dim x samples`).
pub struct Mlp<T: Scalar> {
    pub graph: Graph<T>,
    pub x: NodeId,
    pub target: NodeId,
    pub w1: NodeId,
    pub w2: NodeId,
    pub loss: NodeId,
}

impl<T: Scalar> Mlp<T> {
    pub fn new(cfg: &MlpConfig) -> Self {
        let scale1 = 1.0 / (cfg.input_dim as f64).sqrt();
        let scale2 = 1.0 / (cfg.hidden_dim as f64).sqrt();
        let mut w1 = DenseMatrix::<T>::gaussian(cfg.hidden_dim, cfg.input_dim, cfg.seed ^ 0x5731);
        for v in w1.as_mut_slice() {
            *v = *v * T::from_f64(scale1);
        }
        let mut w2 = DenseMatrix::<T>::gaussian(cfg.output_dim, cfg.hidden_dim, cfg.seed ^ 0x9d2c);
        for v in w2.as_mut_slice() {
            *v = *v * T::from_f64(scale2);
        }
        Mlp::with_weights(w1, w2)
    }

    pub fn with_weights(w1: DenseMatrix<T>, w2: DenseMatrix<T>) -> Self {
        let mut graph = Graph::new();
        let x = graph.input();
        let target = graph.input();
        let w1 = graph.parameter(SparseParameter::dense(w1));
        let w2 = graph.parameter(SparseParameter::dense(w2));
        let h = graph.matmul(w1, x);
        let a = graph.relu(h);
        let y = graph.matmul(w2, a);
        let loss = graph.mse_loss(y, target);
        Mlp {
            graph,
            x,
            target,
            w1,
            w2,
            loss,
        }
    }

    pub fn weight_ids(&self) -> [NodeId; 2] {
        [self.w1, self.w2]
    }

    /// Mean sparsity over all weights.
    pub fn sparsity(&self) -> f64 {
        let mut zeros = 0usize;
        let mut total = 0usize;
        for (_, p) in self.graph.parameters() {
            let d = p.value.to_dense();
            zeros += d.as_slice().iter().filter(|v| v.is_zero()).count();
            total += d.len();
        }
        zeros as f64 / total as f64
    }
}

/// Seeded teacher-generated regression data: inputs are standard normal,
/// targets come from a fixed random MLP plus Gaussian noise.
pub fn synthetic_regression<T: Scalar>(
    cfg: &MlpConfig,
) -> (DenseMatrix<T>, DenseMatrix<T>) {
    use rand::SeedableRng;
    use rand_distr::Distribution;
    let x = DenseMatrix::<T>::gaussian(cfg.input_dim, cfg.samples, cfg.seed);
    let teacher = Mlp::<T>::new(&MlpConfig {
        seed: cfg.seed ^ 0x7eac,
        ..cfg.clone()
    });
    let w1 = teacher.graph.parameter_value(teacher.w1).unwrap().to_dense();
    let w2 = teacher.graph.parameter_value(teacher.w2).unwrap().to_dense();
    let h = crate::kernels::dense_gemm(&w1, &x).unwrap();
    let h = DenseMatrix::from_fn(h.rows(), h.cols(), |i, j| h.get(i, j).max(T::zero()));
    let mut y = crate::kernels::dense_gemm(&w2, &h).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xbeef);
    for v in y.as_mut_slice() {
        let e: f64 = rand_distr::StandardNormal.sample(&mut rng);
        *v = *v + T::from_f64(e * cfg.noise);
    }
    (x, y)
}

// ---------------------------------------------------------------------------
// Pruning schedules
// ---------------------------------------------------------------------------

/// Magnitude-pruning schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "schedule", rename_all = "snake_case")]
pub enum PruneSchedule {
    /// Prune everything to the target once, then fine-tune.
    OneShot { target: f64 },
    /// Alternate pruning and fine-tuning while ramping the sparsity.
    Iterative {
        start: f64,
        step: f64,
        target: f64,
        epochs_per_step: usize,
    },
    /// Prune one layer at a time, fine-tuning after each.
    LayerWise {
        target: f64,
        epochs_per_layer: usize,
    },
}

impl PruneSchedule {
    pub fn validate(&self) -> Result<()> {
        let check = |s: f64| {
            if (0.0..1.0).contains(&s) {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!(
                    "sparsity must be in [0,1), got {s}"
                )))
            }
        };
        match *self {
            PruneSchedule::OneShot { target } => check(target),
            PruneSchedule::Iterative {
                start,
                step,
                target,
                ..
            } => {
                check(start)?;
                check(target)?;
                if step <= 0.0 || start > target {
                    return Err(Error::InvalidParameter(
                        "iterative schedule needs step > 0 and start <= target".into(),
                    ));
                }
                Ok(())
            }
            PruneSchedule::LayerWise { target, .. } => check(target),
        }
    }

    /// Sparsity levels at which pruning events fire.
    pub fn pruning_levels(&self) -> Vec<f64> {
        match *self {
            PruneSchedule::OneShot { target } => vec![target],
            PruneSchedule::Iterative {
                start,
                step,
                target,
                ..
            } => {
                let count = ((target - start) / step).round() as usize;
                (0..=count).map(|k| start + step * k as f64).collect()
            }
            PruneSchedule::LayerWise { target, .. } => vec![target],
        }
    }
}

/// Whether magnitude thresholds pool all layers or act per layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneScope {
    Local,
    Global,
}

/// Fine-tuning knobs shared by the schedules.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub lr: f64,
    pub epochs: usize,
    pub scope: PruneScope,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            lr: 0.5,
            epochs: 60,
            scope: PruneScope::Local,
        }
    }
}

/// One training-log row; serialized as CSV `step,phase,layer,sparsity,loss`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub phase: String,
    pub layer: String,
    pub sparsity: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainingLog {
    pub rows: Vec<LogRow>,
}

impl TrainingLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,phase,layer,sparsity,loss\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.step, r.phase, r.layer, r.sparsity, r.loss
            ));
        }
        out
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.rows.last().map(|r| r.loss)
    }

    pub fn pruning_events(&self) -> usize {
        // one event may prune several layers; count distinct steps
        let mut steps: Vec<usize> = self
            .rows
            .iter()
            .filter(|r| r.phase == "prune")
            .map(|r| r.step)
            .collect();
        steps.dedup();
        steps.len()
    }
}

/// Prunes the given layers of `model` to `sparsity` by magnitude, locally
/// per layer or with a globally pooled threshold.
pub fn prune_model<T: Scalar>(
    model: &mut Mlp<T>,
    layers: &[NodeId],
    sparsity: f64,
    scope: PruneScope,
) -> Result<()> {
    match scope {
        PruneScope::Local => {
            for &id in layers {
                let dense = model
                    .graph
                    .parameter_value(id)
                    .ok_or_else(|| Error::State("missing parameter".into()))?
                    .to_dense();
                let masked =
                    sparsify::apply(&SparsifierSpec::ScalarFraction { fraction: sparsity }, &dense)?;
                model.graph.set_parameter_value(id, Matrix::Masked(masked))?;
            }
        }
        PruneScope::Global => {
            // pooled |value| threshold across all listed layers
            let mut magnitudes: Vec<f64> = Vec::new();
            for &id in layers {
                let dense = model.graph.parameter_value(id).unwrap().to_dense();
                magnitudes.extend(dense.as_slice().iter().map(|v| v.as_f64().abs()));
            }
            magnitudes.sort_by(|a, b| b.total_cmp(a));
            let keep = (((1.0 - sparsity) * magnitudes.len() as f64).ceil() as usize)
                .clamp(1, magnitudes.len());
            let threshold = magnitudes[keep - 1];
            for &id in layers {
                let dense = model.graph.parameter_value(id).unwrap().to_dense();
                let masked =
                    sparsify::apply(&SparsifierSpec::ScalarThreshold { threshold }, &dense)?;
                model.graph.set_parameter_value(id, Matrix::Masked(masked))?;
            }
        }
    }
    Ok(())
}

fn layer_name(ids: &[NodeId], id: NodeId) -> String {
    format!("w{}", ids.iter().position(|&x| x == id).unwrap_or(0) + 1)
}

/// Full-batch fine-tuning; logs one row per epoch.
pub fn finetune<T: Scalar>(
    model: &mut Mlp<T>,
    registry: &Registry<T>,
    data: &(DenseMatrix<T>, DenseMatrix<T>),
    epochs: usize,
    lr: f64,
    phase: &str,
    step: &mut usize,
    log: &mut TrainingLog,
) -> Result<f64> {
    let mut last = f64::NAN;
    for _ in 0..epochs {
        let loss = model.graph.forward(
            registry,
            &[(model.x, data.0.clone()), (model.target, data.1.clone())],
            model.loss,
        )?;
        model.graph.backward(registry, model.loss)?;
        model.graph.sgd_step(lr)?;
        *step += 1;
        log.rows.push(LogRow {
            step: *step,
            phase: phase.to_string(),
            layer: "all".into(),
            sparsity: model.sparsity(),
            loss,
        });
        last = loss;
    }
    Ok(last)
}

/// Runs one pruning schedule on a (pre-trained) model, returning the log.
pub fn run_schedule<T: Scalar>(
    model: &mut Mlp<T>,
    registry: &Registry<T>,
    data: &(DenseMatrix<T>, DenseMatrix<T>),
    schedule: &PruneSchedule,
    cfg: &TrainerConfig,
) -> Result<TrainingLog> {
    schedule.validate()?;
    let mut log = TrainingLog::default();
    let mut step = 0usize;
    let layer_ids = model.weight_ids();

    let log_prune = |model: &Mlp<T>, log: &mut TrainingLog, step: usize, pruned: &[NodeId]| {
        for &id in pruned {
            let s = Matrix::sparsity(model.graph.parameter_value(id).unwrap());
            log.rows.push(LogRow {
                step,
                phase: "prune".into(),
                layer: layer_name(&layer_ids, id),
                sparsity: s,
                loss: f64::NAN,
            });
        }
    };

    match *schedule {
        PruneSchedule::OneShot { target } => {
            prune_model(model, &layer_ids, target, cfg.scope)?;
            step += 1;
            log_prune(model, &mut log, step, &layer_ids);
            finetune(model, registry, data, cfg.epochs, cfg.lr, "finetune", &mut step, &mut log)?;
        }
        PruneSchedule::Iterative { epochs_per_step, .. } => {
            for level in schedule.pruning_levels() {
                prune_model(model, &layer_ids, level, cfg.scope)?;
                step += 1;
                log_prune(model, &mut log, step, &layer_ids);
                finetune(
                    model,
                    registry,
                    data,
                    epochs_per_step,
                    cfg.lr,
                    "finetune",
                    &mut step,
                    &mut log,
                )?;
            }
        }
        PruneSchedule::LayerWise {
            target,
            epochs_per_layer,
        } => {
            for &id in &layer_ids {
                prune_model(model, &[id], target, cfg.scope)?;
                step += 1;
                log_prune(model, &mut log, step, &[id]);
                finetune(
                    model,
                    registry,
                    data,
                    epochs_per_layer,
                    cfg.lr,
                    "finetune",
                    &mut step,
                    &mut log,
                )?;
            }
        }
    }
    Ok(log)
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

/// Central finite-difference check of every dense parameter gradient.
/// Returns the maximum relative error across all entries.
pub fn finite_difference_check(
    model: &mut Mlp<f64>,
    registry: &Registry<f64>,
    data: &(DenseMatrix<f64>, DenseMatrix<f64>),
    h: f64,
) -> Result<f64> {
    let inputs = [(model.x, data.0.clone()), (model.target, data.1.clone())];
    model.graph.forward(registry, &inputs, model.loss)?;
    model.graph.backward(registry, model.loss)?;
    // capture all analytic gradients first; the probe forwards clear them
    let analytic_grads: Vec<(NodeId, DenseMatrix<f64>)> = model
        .weight_ids()
        .iter()
        .map(|&id| {
            model
                .graph
                .parameter_grad(id)
                .cloned()
                .map(|g| (id, g))
                .ok_or_else(|| Error::State("missing gradient".into()))
        })
        .collect::<Result<_>>()?;
    let mut worst = 0.0f64;
    for (id, analytic) in analytic_grads {
        let base = model.graph.parameter_value(id).unwrap().to_dense();
        for i in 0..base.rows() {
            for j in 0..base.cols() {
                let mut plus = base.clone();
                plus.set(i, j, base.get(i, j) + h);
                model.graph.set_parameter_value(id, Matrix::Dense(plus))?;
                let lp = model.graph.forward(registry, &inputs, model.loss)?;
                let mut minus = base.clone();
                minus.set(i, j, base.get(i, j) - h);
                model.graph.set_parameter_value(id, Matrix::Dense(minus))?;
                let lm = model.graph.forward(registry, &inputs, model.loss)?;
                let fd = (lp - lm) / (2.0 * h);
                let a = analytic.get(i, j);
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
                worst = worst.max(rel);
            }
        }
        model.graph.set_parameter_value(id, Matrix::Dense(base))?;
    }
    // restore caches for any later use
    model.graph.forward(registry, &inputs, model.loss)?;
    model.graph.backward(registry, model.loss)?;
    Ok(worst)
}


// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

/// One layer entry in a checkpoint manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestLayer {
    pub name: String,
    pub layout: String,
    pub values: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub layers: Vec<ManifestLayer>,
}

/// Writes every parameter to `dir` using the binary matrix formats plus a
/// JSON manifest. Dense and masked layers use dense files (masks stored as
/// 0/1 matrices); grouped layers use the grouped format.
pub fn save_checkpoint<T: Scalar>(model: &Mlp<T>, dir: &std::path::Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let ids = model.weight_ids();
    let mut layers = Vec::new();
    for &id in &ids {
        let name = layer_name(&ids, id);
        let value = model.graph.parameter_value(id).unwrap();
        let layer = match value {
            Matrix::Dense(d) => {
                let file = format!("{name}.stnm");
                crate::io::write_dense(&dir.join(&file), d)?;
                ManifestLayer {
                    name,
                    layout: "dense".into(),
                    values: file,
                    mask: None,
                }
            }
            Matrix::Masked(mm) => {
                let file = format!("{name}.stnm");
                let mask_file = format!("{name}.mask.stnm");
                crate::io::write_dense(&dir.join(&file), mm.dense())?;
                let (rows, cols) = mm.shape();
                let mask_matrix = DenseMatrix::<T>::new(
                    rows,
                    cols,
                    mm.mask()
                        .iter()
                        .map(|&b| if b { T::one() } else { T::zero() })
                        .collect(),
                )?;
                crate::io::write_dense(&dir.join(&mask_file), &mask_matrix)?;
                ManifestLayer {
                    name,
                    layout: "masked".into(),
                    values: file,
                    mask: Some(mask_file),
                }
            }
            Matrix::GroupedNm(gm) => {
                let file = format!("{name}.stng");
                crate::io::write_grouped(&dir.join(&file), gm)?;
                ManifestLayer {
                    name,
                    layout: "grouped_nm".into(),
                    values: file,
                    mask: None,
                }
            }
            other => {
                return Err(Error::Io(format!(
                    "checkpointing is not defined for {} layers",
                    other.layout_tag()
                )))
            }
        };
        layers.push(layer);
    }
    let manifest = CheckpointManifest { layers };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Io(format!("manifest: {e}")))?;
    std::fs::write(dir.join("manifest.json"), json)?;
    Ok(())
}

/// Reads a checkpoint directory back into (name, matrix) pairs.
pub fn load_checkpoint<T: Scalar>(
    dir: &std::path::Path,
) -> Result<Vec<(String, Matrix<T>)>> {
    let json = std::fs::read_to_string(dir.join("manifest.json"))?;
    let manifest: CheckpointManifest =
        serde_json::from_str(&json).map_err(|e| Error::Io(format!("manifest: {e}")))?;
    let want_dtype = T::DTYPE;
    let load_dense = |file: &str| -> Result<DenseMatrix<T>> {
        let any = crate::io::read_dense(&dir.join(file))?;
        if any.dtype() != want_dtype {
            return Err(Error::Io(format!(
                "{file} holds {} values, expected {}",
                any.dtype(),
                want_dtype
            )));
        }
        Ok(any.to_double().cast())
    };
    let mut out = Vec::new();
    for layer in manifest.layers {
        let value = match layer.layout.as_str() {
            "dense" => Matrix::Dense(load_dense(&layer.values)?),
            "masked" => {
                let dense = load_dense(&layer.values)?;
                let mask_file = layer
                    .mask
                    .as_ref()
                    .ok_or_else(|| Error::Io("masked layer without a mask file".into()))?;
                let mask = load_dense(mask_file)?;
                let mask: Vec<bool> = mask.as_slice().iter().map(|v| !v.is_zero()).collect();
                Matrix::Masked(crate::matrix::MaskedMatrix::new(dense, mask)?)
            }
            "grouped_nm" => match crate::io::read_grouped(&dir.join(&layer.values))? {
                crate::io::AnyGrouped::Single(gm) if want_dtype == crate::scalar::Dtype::Single => {
                    // round-trips exactly: same dtype
                    let bytes = crate::io::grouped_to_bytes(&gm);
                    let _ = bytes;
                    Matrix::GroupedNm(reparse_grouped::<T>(&gm.format(), &gm)?)
                }
                crate::io::AnyGrouped::Double(gm) if want_dtype == crate::scalar::Dtype::Double => {
                    Matrix::GroupedNm(reparse_grouped::<T>(&gm.format(), &gm)?)
                }
                _ => {
                    return Err(Error::Io(format!(
                        "{} holds a different precision than requested",
                        layer.values
                    )))
                }
            },
            other => return Err(Error::Io(format!("unknown layer layout {other}"))),
        };
        out.push((layer.name, value));
    }
    Ok(out)
}

fn reparse_grouped<T: Scalar>(
    fmt: &crate::nmg::NmgFormat,
    gm_any: &(impl GroupedLike + ?Sized),
) -> Result<crate::nmg::GroupedNMMatrix<T>> {
    crate::nmg::GroupedNMMatrix::from_parts(
        *fmt,
        gm_any.shape_of().0,
        gm_any.shape_of().1,
        gm_any.col_index_of().to_vec(),
        gm_any.values_f64().iter().map(|&v| T::from_f64(v)).collect(),
    )
}

/// Precision-erased view of a grouped matrix, for checkpoint loading.
trait GroupedLike {
    fn shape_of(&self) -> (usize, usize);
    fn col_index_of(&self) -> &[u16];
    fn values_f64(&self) -> Vec<f64>;
}

impl<T: Scalar> GroupedLike for crate::nmg::GroupedNMMatrix<T> {
    fn shape_of(&self) -> (usize, usize) {
        self.shape()
    }
    fn col_index_of(&self) -> &[u16] {
        self.col_index()
    }
    fn values_f64(&self) -> Vec<f64> {
        self.values().iter().map(|v| v.as_f64()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::GemmTiling;
    use crate::matrix::Axis;
    use crate::nmg::{from_dense_greedy, NmgFormat};
    use crate::sparsify::apply;

    fn registry() -> Registry<f64> {
        Registry::with_builtins(GemmTiling::default())
    }

    fn eye(n: usize) -> DenseMatrix<f64> {
        DenseMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    #[test]
    fn identity_layer_zero_loss() {
        let r = registry();
        let mut g = Graph::new();
        let x = g.input();
        let t = g.input();
        let w = g.parameter(SparseParameter::dense(eye(4)));
        let y = g.matmul(w, x);
        let loss = g.mse_loss(y, t);
        let data = DenseMatrix::<f64>::gaussian(4, 3, 1);
        let l = g
            .forward(&r, &[(x, data.clone()), (t, data)], loss)
            .unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn masked_forward_equals_dense_with_masked_values() {
        let r = registry();
        let base = DenseMatrix::<f64>::gaussian(4, 4, 2);
        let masked = apply(&SparsifierSpec::ScalarFraction { fraction: 0.5 }, &base).unwrap();
        let x_val = DenseMatrix::<f64>::gaussian(4, 5, 3);
        let t_val = DenseMatrix::<f64>::zeros(4, 5);

        let run = |value: Matrix<f64>| {
            let mut g = Graph::new();
            let x = g.input();
            let t = g.input();
            let w = g.parameter(SparseParameter::new(value, GradFormat::Dense));
            let y = g.matmul(w, x);
            let loss = g.mse_loss(y, t);
            g.forward(&r, &[(x, x_val.clone()), (t, t_val.clone())], loss)
                .unwrap()
        };
        let l_masked = run(Matrix::Masked(masked.clone()));
        let l_dense = run(Matrix::Dense(masked.to_dense()));
        assert_eq!(l_masked, l_dense);
    }

    #[test]
    fn loss_matches_scalar_interpreter() {
        let r = registry();
        let cfg = MlpConfig {
            samples: 8,
            ..Default::default()
        };
        let mut mlp = Mlp::<f64>::new(&cfg);
        let (x, y) = synthetic_regression::<f64>(&cfg);
        let loss = mlp
            .graph
            .forward(&r, &[(mlp.x, x.clone()), (mlp.target, y.clone())], mlp.loss)
            .unwrap();

        // independent scalar-by-scalar evaluation
        let w1 = mlp.graph.parameter_value(mlp.w1).unwrap().to_dense();
        let w2 = mlp.graph.parameter_value(mlp.w2).unwrap().to_dense();
        let mut total = 0.0f64;
        let mut count = 0usize;
        for s in 0..cfg.samples {
            let mut hidden = vec![0.0f64; cfg.hidden_dim];
            for (i, h) in hidden.iter_mut().enumerate() {
                let mut acc = 0.0;
                for k in 0..cfg.input_dim {
                    acc += w1.get(i, k) * x.get(k, s);
                }
                *h = acc.max(0.0);
            }
            for o in 0..cfg.output_dim {
                let mut acc = 0.0;
                for (i, h) in hidden.iter().enumerate() {
                    acc += w2.get(o, i) * h;
                }
                let d = acc - y.get(o, s);
                total += d * d;
                count += 1;
            }
        }
        let expected = total / count as f64;
        assert!((loss - expected).abs() <= 1e-12 * expected.abs().max(1.0));
    }

    #[test]
    fn zero_loss_gives_zero_gradients() {
        let r = registry();
        let mut g = Graph::new();
        let x = g.input();
        let t = g.input();
        let w = g.parameter(SparseParameter::dense(eye(3)));
        let y = g.matmul(w, x);
        let loss = g.mse_loss(y, t);
        let data = DenseMatrix::<f64>::gaussian(3, 4, 7);
        g.forward(&r, &[(x, data.clone()), (t, data)], loss).unwrap();
        g.backward(&r, loss).unwrap();
        let grad = g.parameter_grad(w).unwrap();
        assert!(grad.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_before_forward_is_state_error() {
        let r = registry();
        let mut g = Graph::<f64>::new();
        let x = g.input();
        let t = g.input();
        let loss = g.mse_loss(x, t);
        assert!(matches!(g.backward(&r, loss), Err(Error::State(_))));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let r = registry();
        let cfg = MlpConfig {
            samples: 8,
            ..Default::default()
        };
        let mut mlp = Mlp::<f64>::new(&cfg);
        let data = synthetic_regression::<f64>(&cfg);
        let worst = finite_difference_check(&mut mlp, &r, &data, 1e-5).unwrap();
        assert!(worst <= 1e-4, "max relative error {worst}");
    }

    #[test]
    fn masked_gradient_support_within_mask() {
        let r = registry();
        let cfg = MlpConfig {
            samples: 8,
            ..Default::default()
        };
        let mut mlp = Mlp::<f64>::new(&cfg);
        let data = synthetic_regression::<f64>(&cfg);
        let ids = mlp.weight_ids();
        prune_model(&mut mlp, &ids, 0.5, PruneScope::Local).unwrap();
        mlp.graph
            .forward(&r, &[(mlp.x, data.0.clone()), (mlp.target, data.1.clone())], mlp.loss)
            .unwrap();
        mlp.graph.backward(&r, mlp.loss).unwrap();
        for id in mlp.weight_ids() {
            let grad = mlp.graph.parameter_grad(id).unwrap();
            let mask = mlp.graph.parameter_value(id).unwrap().support_mask();
            for (gv, keep) in grad.as_slice().iter().zip(mask) {
                if !keep {
                    assert_eq!(*gv, 0.0);
                }
            }
        }
    }

    #[test]
    fn sgd_lr_zero_is_identity() {
        let r = registry();
        let cfg = MlpConfig {
            samples: 8,
            ..Default::default()
        };
        let mut mlp = Mlp::<f64>::new(&cfg);
        let data = synthetic_regression::<f64>(&cfg);
        let before: Vec<Vec<f64>> = mlp
            .weight_ids()
            .iter()
            .map(|&id| mlp.graph.parameter_value(id).unwrap().to_dense().into_values())
            .collect();
        mlp.graph
            .forward(&r, &[(mlp.x, data.0.clone()), (mlp.target, data.1.clone())], mlp.loss)
            .unwrap();
        mlp.graph.backward(&r, mlp.loss).unwrap();
        mlp.graph.sgd_step(0.0).unwrap();
        let after: Vec<Vec<f64>> = mlp
            .weight_ids()
            .iter()
            .map(|&id| mlp.graph.parameter_value(id).unwrap().to_dense().into_values())
            .collect();
        assert_eq!(before, after);
    }

    #[test]
    fn mask_persists_across_many_steps() {
        let r = registry();
        let cfg = MlpConfig {
            samples: 16,
            ..Default::default()
        };
        let mut mlp = Mlp::<f64>::new(&cfg);
        let data = synthetic_regression::<f64>(&cfg);
        let ids = mlp.weight_ids();
        prune_model(&mut mlp, &ids, 0.5, PruneScope::Local).unwrap();
        let masks: Vec<Vec<bool>> = mlp
            .weight_ids()
            .iter()
            .map(|&id| mlp.graph.parameter_value(id).unwrap().support_mask())
            .collect();
        let mut step = 0;
        let mut log = TrainingLog::default();
        finetune(&mut mlp, &r, &data, 100, 0.2, "finetune", &mut step, &mut log).unwrap();
        for (k, &id) in mlp.weight_ids().iter().enumerate() {
            let value = mlp.graph.parameter_value(id).unwrap().to_dense();
            for (v, keep) in value.as_slice().iter().zip(&masks[k]) {
                if !keep {
                    assert_eq!(*v, 0.0);
                }
            }
            assert_eq!(
                mlp.graph.parameter_value(id).unwrap().support_mask(),
                masks[k]
            );
        }
    }

    #[test]
    fn grouped_parameter_update_takes_fast_path() {
        let fmt = NmgFormat::new(1, 4, 2, Axis::Cols, Axis::Rows).unwrap();
        let w = DenseMatrix::<f64>::gaussian(8, 8, 5);
        let enc = from_dense_greedy(&w, fmt).unwrap();
        let before_idx = enc.col_index().to_vec();
        // simulate one update step: perturb kept values only
        let mut updated = enc.to_dense();
        for v in updated.as_mut_slice() {
            if *v != 0.0 {
                *v -= 0.01 * *v;
            }
        }
        let (renc, path) = crate::sparsify::same_format_nmg(&enc, &updated).unwrap();
        assert_eq!(path, crate::sparsify::SameFormatPath::ReusedAssignment);
        assert_eq!(renc.col_index(), before_idx);
        // and through the graph-level step
        let r = registry();
        let mut g = Graph::new();
        let x = g.input();
        let t = g.input();
        let wid = g.parameter(SparseParameter::new(
            Matrix::GroupedNm(enc),
            GradFormat::SameFormat,
        ));
        let y = g.matmul(wid, x);
        let loss = g.mse_loss(y, t);
        let xv = DenseMatrix::<f64>::gaussian(8, 4, 6);
        let tv = DenseMatrix::<f64>::gaussian(8, 4, 7);
        g.forward(&r, &[(x, xv), (t, tv)], loss).unwrap();
        g.backward(&r, loss).unwrap();
        g.sgd_step(0.01).unwrap();
        match g.parameter_value(wid).unwrap() {
            Matrix::GroupedNm(after) => assert_eq!(after.col_index(), &before_idx[..]),
            other => panic!("layout changed: {other:?}"),
        }
    }

    #[test]
    fn iterative_schedule_event_count_and_monotone_sparsity() {
        let r = registry();
        let cfg = MlpConfig {
            samples: 32,
            ..Default::default()
        };
        let mut mlp = Mlp::<f64>::new(&cfg);
        let data = synthetic_regression::<f64>(&cfg);
        let schedule = PruneSchedule::Iterative {
            start: 0.1,
            step: 0.1,
            target: 0.5,
            epochs_per_step: 3,
        };
        let log = run_schedule(
            &mut mlp,
            &r,
            &data,
            &schedule,
            &TrainerConfig {
                lr: 0.2,
                epochs: 3,
                scope: PruneScope::Local,
            },
        )
        .unwrap();
        assert_eq!(log.pruning_events(), 5);
        let sparsities: Vec<f64> = log
            .rows
            .iter()
            .filter(|row| row.phase == "finetune")
            .map(|row| row.sparsity)
            .collect();
        assert!(sparsities.windows(2).all(|w| w[1] >= w[0] - 1e-12));
        assert!((mlp.sparsity() - 0.5).abs() < 0.02);
    }

    #[test]
    fn one_shot_zero_is_pure_finetuning() {
        let r = registry();
        let cfg = MlpConfig {
            samples: 32,
            ..Default::default()
        };
        let mut mlp = Mlp::<f64>::new(&cfg);
        let data = synthetic_regression::<f64>(&cfg);
        let log = run_schedule(
            &mut mlp,
            &r,
            &data,
            &PruneSchedule::OneShot { target: 0.0 },
            &TrainerConfig {
                lr: 0.2,
                epochs: 5,
                scope: PruneScope::Local,
            },
        )
        .unwrap();
        assert_eq!(mlp.sparsity(), 0.0);
        assert_eq!(log.pruning_events(), 1); // the no-op prune event is logged
    }

    #[test]
    fn layer_wise_order() {
        let r = registry();
        let cfg = MlpConfig {
            samples: 32,
            ..Default::default()
        };
        let mut mlp = Mlp::<f64>::new(&cfg);
        let data = synthetic_regression::<f64>(&cfg);
        let log = run_schedule(
            &mut mlp,
            &r,
            &data,
            &PruneSchedule::LayerWise {
                target: 0.5,
                epochs_per_layer: 2,
            },
            &TrainerConfig {
                lr: 0.2,
                epochs: 2,
                scope: PruneScope::Local,
            },
        )
        .unwrap();
        let phases: Vec<(String, String)> = log
            .rows
            .iter()
            .map(|row| (row.phase.clone(), row.layer.clone()))
            .collect();
        // w1 pruned, fine-tuned, then w2 pruned, fine-tuned
        let w2_prune = phases
            .iter()
            .position(|(p, l)| p == "prune" && l == "w2")
            .unwrap();
        let w1_finetunes = phases[..w2_prune]
            .iter()
            .filter(|(p, _)| p == "finetune")
            .count();
        assert_eq!(w1_finetunes, 2);
    }

    #[test]
    fn schedule_validation() {
        assert!(PruneSchedule::OneShot { target: 1.0 }.validate().is_err());
        assert!(PruneSchedule::Iterative {
            start: 0.5,
            step: 0.1,
            target: 0.3,
            epochs_per_step: 1
        }
        .validate()
        .is_err());
        assert_eq!(
            PruneSchedule::Iterative {
                start: 0.1,
                step: 0.1,
                target: 0.5,
                epochs_per_step: 1
            }
            .pruning_levels()
            .len(),
            5
        );
    }

    #[test]
    fn checkpoint_roundtrip() {
        let cfg = MlpConfig {
            samples: 8,
            ..Default::default()
        };
        let mut mlp = Mlp::<f64>::new(&cfg);
        let ids = mlp.weight_ids();
        prune_model(&mut mlp, &ids[..1], 0.5, PruneScope::Local).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&mlp, dir.path()).unwrap();
        assert!(dir.path().join("manifest.json").exists());
        let loaded = load_checkpoint::<f64>(dir.path()).unwrap();
        assert_eq!(loaded.len(), 2);
        for (name, value) in &loaded {
            let id = if name == "w1" { mlp.w1 } else { mlp.w2 };
            let orig = mlp.graph.parameter_value(id).unwrap();
            assert_eq!(value.to_dense(), orig.to_dense(), "{name}");
            assert_eq!(value.layout_tag(), orig.layout_tag());
        }
        // wrong precision is rejected
        assert!(load_checkpoint::<f32>(dir.path()).is_err());
    }
}
