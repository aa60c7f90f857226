//! A small two-headed dense network with hand-rolled reverse-mode gradients.
//!
//! Shared trunk (two ReLU layers), a projection head `f` ending in an
//! ℓ2-normalized embedding, and a classification head `g` ending in a
//! softmax. Double precision throughout so finite-difference gradient checks
//! are meaningful. Losses hand the backward pass their gradients w.r.t. the
//! normalized embeddings and the pre-softmax logits; everything upstream of
//! those two tensors is differentiated here.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::{Error, Result};

const NORM_EPS: f64 = 1e-12;

/// One affine layer, `z = x Wᵀ + b`, with `w` stored out×in.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    fn he_init<R: Rng>(out_dim: usize, in_dim: usize, rng: &mut R) -> Dense {
        let scale = (2.0 / in_dim as f64).sqrt();
        let w = Array2::from_shape_fn((out_dim, in_dim), |_| {
            scale * rng.sample::<f64, _>(StandardNormal)
        });
        Dense {
            w,
            b: Array1::zeros(out_dim),
        }
    }

    fn zeros_like(other: &Dense) -> Dense {
        Dense {
            w: Array2::zeros(other.w.raw_dim()),
            b: Array1::zeros(other.b.raw_dim()),
        }
    }
}

/// All learnable parameters: trunk plus the two heads.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub trunk: Vec<Dense>,
    pub head_f: Vec<Dense>,
    pub head_g: Vec<Dense>,
}

impl ModelParams {
    /// He-initialized network: trunk `d → h → h` (ReLU after both layers),
    /// projection head `h → h → e`, classification head `h → h → K`.
    pub fn init<R: Rng>(
        input_dim: usize,
        hidden_dim: usize,
        embedding_dim: usize,
        num_classes: usize,
        rng: &mut R,
    ) -> Result<ModelParams> {
        if input_dim == 0 || hidden_dim == 0 {
            return Err(Error::invalid("layer widths must be positive"));
        }
        if embedding_dim < 2 {
            return Err(Error::invalid(format!(
                "embedding dimension must be >= 2, got {embedding_dim}"
            )));
        }
        if num_classes < 2 {
            return Err(Error::invalid(format!(
                "need at least 2 classes, got {num_classes}"
            )));
        }
        Ok(ModelParams {
            trunk: vec![
                Dense::he_init(hidden_dim, input_dim, rng),
                Dense::he_init(hidden_dim, hidden_dim, rng),
            ],
            head_f: vec![
                Dense::he_init(hidden_dim, hidden_dim, rng),
                Dense::he_init(embedding_dim, hidden_dim, rng),
            ],
            head_g: vec![
                Dense::he_init(hidden_dim, hidden_dim, rng),
                Dense::he_init(num_classes, hidden_dim, rng),
            ],
        })
    }

    pub fn input_dim(&self) -> usize {
        self.trunk[0].w.ncols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.trunk[0].w.nrows()
    }

    pub fn embedding_dim(&self) -> usize {
        self.head_f.last().unwrap().w.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.head_g.last().unwrap().w.nrows()
    }

    fn stacks(&self) -> [&[Dense]; 3] {
        [&self.trunk, &self.head_f, &self.head_g]
    }

    /// All parameters as one flat vector (fixed traversal order). Used by
    /// gradient checks and tests; `assign_flat` is the inverse.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for stack in self.stacks() {
            for layer in stack {
                out.extend(layer.w.iter());
                out.extend(layer.b.iter());
            }
        }
        out
    }

    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        let mut cursor = 0;
        for stack in [&mut self.trunk, &mut self.head_f, &mut self.head_g] {
            for layer in stack {
                for v in layer.w.iter_mut().chain(layer.b.iter_mut()) {
                    *v = *flat
                        .get(cursor)
                        .ok_or_else(|| Error::shape("flat parameter vector too short"))?;
                    cursor += 1;
                }
            }
        }
        if cursor != flat.len() {
            return Err(Error::shape(format!(
                "flat parameter vector has {} extra values",
                flat.len() - cursor
            )));
        }
        Ok(())
    }
}

/// Gradients (or momentum buffers) in the same layout as [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub trunk: Vec<Dense>,
    pub head_f: Vec<Dense>,
    pub head_g: Vec<Dense>,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Gradients {
        Gradients {
            trunk: params.trunk.iter().map(Dense::zeros_like).collect(),
            head_f: params.head_f.iter().map(Dense::zeros_like).collect(),
            head_g: params.head_g.iter().map(Dense::zeros_like).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        let pairs = self
            .trunk
            .iter_mut()
            .chain(self.head_f.iter_mut())
            .chain(self.head_g.iter_mut())
            .zip(
                other
                    .trunk
                    .iter()
                    .chain(other.head_f.iter())
                    .chain(other.head_g.iter()),
            );
        for (a, b) in pairs {
            a.w += &b.w;
            a.b += &b.b;
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for stack in [&self.trunk, &self.head_f, &self.head_g] {
            for layer in stack {
                out.extend(layer.w.iter());
                out.extend(layer.b.iter());
            }
        }
        out
    }

    /// Euclidean norm over every entry.
    pub fn global_norm(&self) -> f64 {
        let mut sq = 0.0;
        for stack in [&self.trunk, &self.head_f, &self.head_g] {
            for layer in stack {
                sq += layer.w.iter().map(|g| g * g).sum::<f64>();
                sq += layer.b.iter().map(|g| g * g).sum::<f64>();
            }
        }
        sq.sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for stack in [&mut self.trunk, &mut self.head_f, &mut self.head_g] {
            for layer in stack {
                layer.w *= factor;
                layer.b *= factor;
            }
        }
    }
}

struct StackCache {
    /// Input to each layer.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation output of each layer.
    pres: Vec<Array2<f64>>,
}

/// Outputs of one batched forward pass plus everything backward needs.
pub struct ForwardResult {
    /// n×e, rows unit norm.
    pub embedding: Array2<f64>,
    /// n×K, rows on the simplex.
    pub class_probs: Array2<f64>,
    /// n×K pre-softmax activations.
    pub logits: Array2<f64>,
    trunk: StackCache,
    f: StackCache,
    g: StackCache,
    /// Pre-normalization row norms (clamped at epsilon).
    norms: Array1<f64>,
}

fn run_stack(layers: &[Dense], input: &Array2<f64>, relu_last: bool) -> StackCache {
    let mut inputs = Vec::with_capacity(layers.len());
    let mut pres = Vec::with_capacity(layers.len());
    let mut x = input.clone();
    for (i, layer) in layers.iter().enumerate() {
        let pre = x.dot(&layer.w.t()) + &layer.b;
        inputs.push(x);
        let is_last = i + 1 == layers.len();
        x = if relu_last || !is_last {
            pre.mapv(|v| v.max(0.0))
        } else {
            pre.clone()
        };
        pres.push(pre);
    }
    inputs.push(x); // final stack output, kept for the caller
    StackCache { inputs, pres }
}

impl StackCache {
    fn output(&self) -> &Array2<f64> {
        self.inputs.last().unwrap()
    }
}

/// Batched forward pass. `x` is n×input_dim.
pub fn forward(params: &ModelParams, x: ArrayView2<f64>) -> Result<ForwardResult> {
    if x.ncols() != params.input_dim() {
        return Err(Error::shape(format!(
            "forward: input dim {} vs model dim {}",
            x.ncols(),
            params.input_dim()
        )));
    }
    let trunk = run_stack(&params.trunk, &x.to_owned(), true);
    let f = run_stack(&params.head_f, trunk.output(), false);
    let g = run_stack(&params.head_g, trunk.output(), false);

    let prenorm = f.output();
    let mut norms = Array1::zeros(prenorm.nrows());
    let mut embedding = prenorm.clone();
    for (i, mut row) in embedding.rows_mut().into_iter().enumerate() {
        let r = row.dot(&row).sqrt().max(NORM_EPS);
        norms[i] = r;
        row /= r;
    }

    let logits = g.output().clone();
    let mut class_probs = logits.clone();
    for mut row in class_probs.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let total = row.sum();
        row /= total;
    }

    Ok(ForwardResult {
        embedding,
        class_probs,
        logits,
        trunk,
        f,
        g,
        norms,
    })
}

fn backward_stack(
    layers: &[Dense],
    cache: &StackCache,
    mut d_out: Array2<f64>,
    relu_last: bool,
) -> (Vec<Dense>, Array2<f64>) {
    let mut grads: Vec<Dense> = layers.iter().map(Dense::zeros_like).collect();
    for i in (0..layers.len()).rev() {
        let is_last = i + 1 == layers.len();
        if relu_last || !is_last {
            // Gate by the ReLU mask of this layer's pre-activation.
            d_out.zip_mut_with(&cache.pres[i], |d, &pre| {
                if pre <= 0.0 {
                    *d = 0.0;
                }
            });
        }
        grads[i].w = d_out.t().dot(&cache.inputs[i]);
        grads[i].b = d_out.sum_axis(Axis(0));
        d_out = d_out.dot(&layers[i].w);
    }
    (grads, d_out)
}

/// Reverse-mode pass. `d_embedding` is the loss gradient w.r.t. the
/// normalized embeddings, `d_logits` w.r.t. the pre-softmax activations;
/// either may be zero when a loss touches only one head.
pub fn backward(
    params: &ModelParams,
    fwd: &ForwardResult,
    d_embedding: ArrayView2<f64>,
    d_logits: ArrayView2<f64>,
) -> Result<Gradients> {
    let n = fwd.embedding.nrows();
    if d_embedding.dim() != (n, params.embedding_dim()) {
        return Err(Error::shape("backward: embedding gradient shape"));
    }
    if d_logits.dim() != (n, params.num_classes()) {
        return Err(Error::shape("backward: logit gradient shape"));
    }

    // Through the ℓ2 normalization: v = u / r. For r above the epsilon
    // guard, du = (dv - (v·dv) v) / r; at the guard the map is linear
    // scaling by 1/eps.
    let mut d_prenorm = d_embedding.to_owned();
    for (i, mut row) in d_prenorm.rows_mut().into_iter().enumerate() {
        let r = fwd.norms[i];
        if r > NORM_EPS {
            let v = fwd.embedding.row(i);
            let vdot = v.dot(&row);
            for (d, &vj) in row.iter_mut().zip(v) {
                *d = (*d - vdot * vj) / r;
            }
        } else {
            row /= NORM_EPS;
        }
    }

    let (grads_f, d_trunk_from_f) = backward_stack(&params.head_f, &fwd.f, d_prenorm, false);
    let (grads_g, d_trunk_from_g) =
        backward_stack(&params.head_g, &fwd.g, d_logits.to_owned(), false);
    let (grads_trunk, _) = backward_stack(
        &params.trunk,
        &fwd.trunk,
        d_trunk_from_f + d_trunk_from_g,
        true,
    );

    Ok(Gradients {
        trunk: grads_trunk,
        head_f: grads_f,
        head_g: grads_g,
    })
}

/// SGD-with-momentum state plus the schedule's fixed shape.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub momentum: f64,
    pub weight_decay: f64,
    pub base_lr: f64,
    pub warmup_epochs: usize,
    pub total_epochs: usize,
    buffers: Gradients,
}

impl OptimizerState {
    pub fn new(
        params: &ModelParams,
        momentum: f64,
        weight_decay: f64,
        base_lr: f64,
        warmup_epochs: usize,
        total_epochs: usize,
    ) -> Result<OptimizerState> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::invalid(format!(
                "momentum must be in [0, 1), got {momentum}"
            )));
        }
        if !(0.0..1.0).contains(&weight_decay) {
            return Err(Error::invalid(format!(
                "weight decay must be in [0, 1), got {weight_decay}"
            )));
        }
        if !(base_lr >= 0.0) {
            return Err(Error::invalid(format!(
                "learning rate must be >= 0, got {base_lr}"
            )));
        }
        Ok(OptimizerState {
            momentum,
            weight_decay,
            base_lr,
            warmup_epochs,
            total_epochs,
            buffers: Gradients::zeros_like(params),
        })
    }
}

/// One SGD update:
/// `buffer ← momentum·buffer + grad + wd·param; param ← param − lr·buffer`.
pub fn sgd_step(
    params: &mut ModelParams,
    grads: &Gradients,
    opt: &mut OptimizerState,
    lr: f64,
) -> Result<()> {
    let params_it = params
        .trunk
        .iter_mut()
        .chain(params.head_f.iter_mut())
        .chain(params.head_g.iter_mut());
    let grads_it = grads
        .trunk
        .iter()
        .chain(grads.head_f.iter())
        .chain(grads.head_g.iter());
    let bufs_it = opt
        .buffers
        .trunk
        .iter_mut()
        .chain(opt.buffers.head_f.iter_mut())
        .chain(opt.buffers.head_g.iter_mut());

    for ((p, g), buf) in params_it.zip(grads_it).zip(bufs_it) {
        if p.w.dim() != g.w.dim() || p.b.dim() != g.b.dim() {
            return Err(Error::shape("sgd_step: gradient shape mismatch"));
        }
        azip_update(&mut buf.w, &g.w, &mut p.w, opt.momentum, opt.weight_decay, lr);
        azip_update_1d(&mut buf.b, &g.b, &mut p.b, opt.momentum, opt.weight_decay, lr);
    }
    Ok(())
}

fn azip_update(
    buf: &mut Array2<f64>,
    grad: &Array2<f64>,
    param: &mut Array2<f64>,
    momentum: f64,
    wd: f64,
    lr: f64,
) {
    ndarray::Zip::from(buf)
        .and(grad)
        .and(param)
        .for_each(|b, &g, p| {
            *b = momentum * *b + g + wd * *p;
            *p -= lr * *b;
        });
}

fn azip_update_1d(
    buf: &mut Array1<f64>,
    grad: &Array1<f64>,
    param: &mut Array1<f64>,
    momentum: f64,
    wd: f64,
    lr: f64,
) {
    ndarray::Zip::from(buf)
        .and(grad)
        .and(param)
        .for_each(|b, &g, p| {
            *b = momentum * *b + g + wd * *p;
            *p -= lr * *b;
        });
}

/// Learning rate at `epoch`: a linear ramp from `base/warmup` that reaches
/// `base` at the end of warmup, then cosine decay to (near) zero over the
/// remaining epochs.
pub fn lr_schedule(epoch: usize, opt: &OptimizerState) -> Result<f64> {
    if epoch >= opt.total_epochs {
        return Err(Error::invalid(format!(
            "epoch {epoch} out of range for {} total epochs",
            opt.total_epochs
        )));
    }
    if epoch < opt.warmup_epochs {
        // First step uses the same rate as epoch 1 rather than zero.
        let t = epoch.max(1) as f64;
        return Ok(opt.base_lr * t / opt.warmup_epochs as f64);
    }
    let progress =
        (epoch - opt.warmup_epochs) as f64 / (opt.total_epochs - opt.warmup_epochs) as f64;
    Ok(opt.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(row: ArrayView1<f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &v) in row.iter().enumerate() {
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best
}

// ---------------------------------------------------------------------------
// Checkpoints: plain text, exact round-trip
// ---------------------------------------------------------------------------

pub fn write_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    fs::write(path, checkpoint_to_string(params))
        .map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn checkpoint_to_string(params: &ModelParams) -> String {
    let mut out = String::from("model-checkpoint v1\n");
    let _ = writeln!(
        out,
        "dims input={} hidden={} embedding={} classes={}",
        params.input_dim(),
        params.hidden_dim(),
        params.embedding_dim(),
        params.num_classes()
    );
    for (name, stack) in [
        ("trunk", &params.trunk),
        ("head_f", &params.head_f),
        ("head_g", &params.head_g),
    ] {
        for (i, layer) in stack.iter().enumerate() {
            let _ = writeln!(
                out,
                "tensor {name}.{i}.w {} {}",
                layer.w.nrows(),
                layer.w.ncols()
            );
            for row in layer.w.rows() {
                push_csv_row(&mut out, row.iter());
            }
            let _ = writeln!(out, "tensor {name}.{i}.b {}", layer.b.len());
            push_csv_row(&mut out, layer.b.iter());
        }
    }
    out
}

fn push_csv_row<'a>(out: &mut String, values: impl Iterator<Item = &'a f64>) {
    let mut first = true;
    for v in values {
        if !first {
            out.push(',');
        }
        let _ = write!(out, "{v}");
        first = false;
    }
    out.push('\n');
}

pub fn read_checkpoint(path: &Path) -> Result<ModelParams> {
    let text =
        fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    checkpoint_from_string(&text, &path.display().to_string())
}

pub fn checkpoint_from_string(text: &str, origin: &str) -> Result<ModelParams> {
    let err = |line: usize, msg: String| Error::Parse {
        path: origin.to_string(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate().peekable();

    let (_, magic) = lines
        .next()
        .ok_or_else(|| err(1, "empty checkpoint".into()))?;
    if magic != "model-checkpoint v1" {
        return Err(err(1, format!("unrecognized header `{magic}`")));
    }
    let (_, dims) = lines
        .next()
        .ok_or_else(|| err(2, "missing dims line".into()))?;
    if !dims.starts_with("dims ") {
        return Err(err(2, "missing dims line".into()));
    }

    let mut stacks: [Vec<Dense>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    let mut pending_w: Option<(usize, Array2<f64>)> = None; // (stack, weights)

    while let Some((lineno, line)) = lines.next() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.first() != Some(&"tensor") || fields.len() < 3 {
            return Err(err(lineno + 1, format!("expected tensor header, got `{line}`")));
        }
        let name_parts: Vec<&str> = fields[1].split('.').collect();
        if name_parts.len() != 3 {
            return Err(err(lineno + 1, format!("bad tensor name `{}`", fields[1])));
        }
        let stack_idx = match name_parts[0] {
            "trunk" => 0,
            "head_f" => 1,
            "head_g" => 2,
            other => return Err(err(lineno + 1, format!("unknown stack `{other}`"))),
        };
        let layer_idx: usize = name_parts[1]
            .parse()
            .map_err(|_| err(lineno + 1, "bad layer index".into()))?;
        match name_parts[2] {
            "w" => {
                if fields.len() != 4 {
                    return Err(err(lineno + 1, "weight tensor needs rows and cols".into()));
                }
                let rows: usize = fields[2]
                    .parse()
                    .map_err(|_| err(lineno + 1, "bad row count".into()))?;
                let cols: usize = fields[3]
                    .parse()
                    .map_err(|_| err(lineno + 1, "bad col count".into()))?;
                let mut w = Array2::zeros((rows, cols));
                for r in 0..rows {
                    let (ln, row_line) = lines
                        .next()
                        .ok_or_else(|| err(lineno + 1, "truncated weight tensor".into()))?;
                    let values = parse_csv_floats(row_line)
                        .map_err(|msg| err(ln + 1, msg))?;
                    if values.len() != cols {
                        return Err(err(ln + 1, format!("expected {cols} values")));
                    }
                    for (c, v) in values.into_iter().enumerate() {
                        w[(r, c)] = v;
                    }
                }
                if layer_idx != stacks[stack_idx].len() || pending_w.is_some() {
                    return Err(err(lineno + 1, "tensors out of order".into()));
                }
                pending_w = Some((stack_idx, w));
            }
            "b" => {
                let len: usize = fields[2]
                    .parse()
                    .map_err(|_| err(lineno + 1, "bad length".into()))?;
                let (ln, row_line) = lines
                    .next()
                    .ok_or_else(|| err(lineno + 1, "truncated bias tensor".into()))?;
                let values = parse_csv_floats(row_line).map_err(|msg| err(ln + 1, msg))?;
                if values.len() != len {
                    return Err(err(ln + 1, format!("expected {len} values")));
                }
                let (stack_of_w, w) = pending_w
                    .take()
                    .ok_or_else(|| err(lineno + 1, "bias before its weights".into()))?;
                if stack_of_w != stack_idx || w.nrows() != len {
                    return Err(err(lineno + 1, "bias does not match weights".into()));
                }
                stacks[stack_idx].push(Dense {
                    w,
                    b: Array1::from_vec(values),
                });
            }
            other => return Err(err(lineno + 1, format!("unknown tensor kind `{other}`"))),
        }
    }

    let [trunk, head_f, head_g] = stacks;
    if trunk.len() != 2 || head_f.len() != 2 || head_g.len() != 2 || pending_w.is_some() {
        return Err(err(1, "checkpoint does not describe a complete model".into()));
    }
    let params = ModelParams {
        trunk,
        head_f,
        head_g,
    };
    let expected = format!(
        "dims input={} hidden={} embedding={} classes={}",
        params.input_dim(),
        params.hidden_dim(),
        params.embedding_dim(),
        params.num_classes()
    );
    if dims != expected {
        return Err(err(2, format!("dims line `{dims}` does not match tensors")));
    }
    Ok(params)
}

fn parse_csv_floats(line: &str) -> std::result::Result<Vec<f64>, String> {
    line.split(',')
        .map(|p| p.parse::<f64>().map_err(|e| format!("bad float `{p}`: {e}")))
        .collect()
}
