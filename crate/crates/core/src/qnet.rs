//! Dueling feed-forward Q-value approximator with manual reverse-mode
//! gradients, plain stochastic gradient descent, and soft target blending.
//!
//! A network is a shared rectifier trunk followed by two affine heads: a
//! one-output state-value head and a two-output advantage head, combined as
//! `Q(s, a) = V(s) + A(s, a) - mean_a A(s, a)`. Everything is 64-bit.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use thiserror::Error;

/// Size of the action space: hold or send.
pub const NUM_ACTIONS: usize = 2;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("invalid layer dimensions: {0}")]
    InvalidDims(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint parse: {0}")]
    Parse(String),
}

/// One dense layer; weights are row-major `[out_dim x in_dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl AffineLayer {
    fn zeroed(in_dim: usize, out_dim: usize) -> AffineLayer {
        AffineLayer { in_dim, out_dim, weights: vec![0.0; in_dim * out_dim], biases: vec![0.0; out_dim] }
    }

    fn init<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> AffineLayer {
        // Symmetric fan-in-scaled uniform weights, zero biases.
        let limit = 1.0 / (in_dim as f64).sqrt();
        let mut layer = AffineLayer::zeroed(in_dim, out_dim);
        for w in &mut layer.weights {
            *w = (rng.random::<f64>() * 2.0 - 1.0) * limit;
        }
        layer
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }
}

/// Parameters of the dueling approximator.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetworkParams {
    pub trunk: Vec<AffineLayer>,
    pub value_head: Vec<AffineLayer>,
    pub advantage_head: Vec<AffineLayer>,
}

impl QNetworkParams {
    pub fn input_dim(&self) -> usize {
        self.trunk
            .first()
            .map(|l| l.in_dim)
            .unwrap_or_else(|| self.value_head[0].in_dim)
    }

    pub fn parameter_count(&self) -> usize {
        self.all_layers().map(AffineLayer::parameter_count).sum()
    }

    fn all_layers(&self) -> impl Iterator<Item = &AffineLayer> {
        self.trunk.iter().chain(&self.value_head).chain(&self.advantage_head)
    }

    fn shape_matches(&self, other: &QNetworkParams) -> bool {
        let dims = |p: &QNetworkParams| -> Vec<(usize, usize)> {
            p.all_layers().map(|l| (l.in_dim, l.out_dim)).collect()
        };
        self.trunk.len() == other.trunk.len()
            && self.value_head.len() == other.value_head.len()
            && self.advantage_head.len() == other.advantage_head.len()
            && dims(self) == dims(other)
    }
}

/// Build layer dimensions from an observation length, trunk hidden sizes,
/// and a per-head hidden size.
pub fn layer_dims(obs_len: usize, hidden: &[usize], head_hidden: usize) -> Vec<usize> {
    let mut dims = Vec::with_capacity(hidden.len() + 2);
    dims.push(obs_len);
    dims.extend_from_slice(hidden);
    dims.push(head_hidden);
    dims
}

/// Initialize parameters. `dims[0]` is the input length, the middle entries
/// are shared trunk widths, and the final entry is the width of the one
/// hidden layer each head keeps for itself.
pub fn init_params<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Result<QNetworkParams, NetError> {
    if dims.len() < 2 {
        return Err(NetError::InvalidDims(format!(
            "need at least [input, head_hidden], got {dims:?}"
        )));
    }
    if dims.iter().any(|&d| d == 0) {
        return Err(NetError::InvalidDims(format!("zero-width layer in {dims:?}")));
    }
    let trunk: Vec<AffineLayer> = dims[..dims.len() - 1]
        .windows(2)
        .map(|w| AffineLayer::init(w[0], w[1], rng))
        .collect();
    let junction = dims[dims.len() - 2];
    let head_hidden = dims[dims.len() - 1];
    let value_head = vec![
        AffineLayer::init(junction, head_hidden, rng),
        AffineLayer::init(head_hidden, 1, rng),
    ];
    let advantage_head = vec![
        AffineLayer::init(junction, head_hidden, rng),
        AffineLayer::init(head_hidden, NUM_ACTIONS, rng),
    ];
    Ok(QNetworkParams { trunk, value_head, advantage_head })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    for (x, y) in (&mut ca).zip(&mut cb) {
        s0 += x[0] * y[0];
        s1 += x[1] * y[1];
        s2 += x[2] * y[2];
        s3 += x[3] * y[3];
    }
    let mut rest = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        rest += x * y;
    }
    (s0 + s1) + (s2 + s3) + rest
}

fn affine_into(layer: &AffineLayer, input: &[f64], out: &mut Vec<f64>, relu: bool) {
    out.resize(layer.out_dim, 0.0);
    for o in 0..layer.out_dim {
        let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
        let z = layer.biases[o] + dot(row, input);
        out[o] = if relu { z.max(0.0) } else { z };
    }
}

/// Reusable activation and delta buffers for one network shape.
#[derive(Debug, Clone)]
pub struct Workspace {
    trunk_acts: Vec<Vec<f64>>,
    value_acts: Vec<Vec<f64>>,
    adv_acts: Vec<Vec<f64>>,
    delta_a: Vec<f64>,
    delta_b: Vec<f64>,
    junction_delta: Vec<f64>,
}

impl Workspace {
    pub fn new(params: &QNetworkParams) -> Workspace {
        let max_dim = params
            .all_layers()
            .map(|l| l.in_dim.max(l.out_dim))
            .max()
            .unwrap_or(1);
        Workspace {
            trunk_acts: params.trunk.iter().map(|l| vec![0.0; l.out_dim]).collect(),
            value_acts: params.value_head.iter().map(|l| vec![0.0; l.out_dim]).collect(),
            adv_acts: params.advantage_head.iter().map(|l| vec![0.0; l.out_dim]).collect(),
            delta_a: vec![0.0; max_dim],
            delta_b: vec![0.0; max_dim],
            junction_delta: vec![0.0; max_dim],
        }
    }
}

fn forward_cached(
    params: &QNetworkParams,
    obs: &[f64],
    ws: &mut Workspace,
) -> Result<(f64, [f64; NUM_ACTIONS]), NetError> {
    if obs.len() != params.input_dim() {
        return Err(NetError::ShapeMismatch(format!(
            "observation length {} does not match network input {}",
            obs.len(),
            params.input_dim()
        )));
    }
    let mut prev = obs;
    for (layer, act) in params.trunk.iter().zip(&mut ws.trunk_acts) {
        affine_into(layer, prev, act, true);
        prev = act;
    }
    let junction: &[f64] = prev;

    let n_v = params.value_head.len();
    let mut prev = junction;
    for (i, (layer, act)) in params.value_head.iter().zip(&mut ws.value_acts).enumerate() {
        affine_into(layer, prev, act, i + 1 < n_v);
        prev = act;
    }
    let value = ws.value_acts.last().unwrap()[0];

    let n_a = params.advantage_head.len();
    let mut prev = junction;
    for (i, (layer, act)) in params.advantage_head.iter().zip(&mut ws.adv_acts).enumerate() {
        affine_into(layer, prev, act, i + 1 < n_a);
        prev = act;
    }
    let adv = ws.adv_acts.last().unwrap();
    Ok((value, [adv[0], adv[1]]))
}

fn aggregate(value: f64, adv: [f64; NUM_ACTIONS]) -> [f64; NUM_ACTIONS] {
    let mean = (adv[0] + adv[1]) / NUM_ACTIONS as f64;
    [value + adv[0] - mean, value + adv[1] - mean]
}

/// Q-values for both actions.
pub fn forward(params: &QNetworkParams, obs: &[f64]) -> Result<[f64; NUM_ACTIONS], NetError> {
    let mut ws = Workspace::new(params);
    forward_ws(params, obs, &mut ws)
}

/// Q-values using caller-provided buffers; the hot-loop entry point.
pub fn forward_ws(
    params: &QNetworkParams,
    obs: &[f64],
    ws: &mut Workspace,
) -> Result<[f64; NUM_ACTIONS], NetError> {
    let (value, adv) = forward_cached(params, obs, ws)?;
    Ok(aggregate(value, adv))
}

/// State value and Q-values together, for checks that compare the two.
pub fn forward_parts(
    params: &QNetworkParams,
    obs: &[f64],
) -> Result<(f64, [f64; NUM_ACTIONS]), NetError> {
    let mut ws = Workspace::new(params);
    let (value, adv) = forward_cached(params, obs, &mut ws)?;
    Ok((value, aggregate(value, adv)))
}

/// Parameter-shaped gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBuffer {
    pub trunk: Vec<AffineLayer>,
    pub value_head: Vec<AffineLayer>,
    pub advantage_head: Vec<AffineLayer>,
}

impl GradientBuffer {
    pub fn zeroed(params: &QNetworkParams) -> GradientBuffer {
        let z = |layers: &[AffineLayer]| {
            layers.iter().map(|l| AffineLayer::zeroed(l.in_dim, l.out_dim)).collect()
        };
        GradientBuffer {
            trunk: z(&params.trunk),
            value_head: z(&params.value_head),
            advantage_head: z(&params.advantage_head),
        }
    }

    pub fn reset(&mut self) {
        for layer in self.trunk.iter_mut().chain(&mut self.value_head).chain(&mut self.advantage_head) {
            layer.weights.iter_mut().for_each(|w| *w = 0.0);
            layer.biases.iter_mut().for_each(|b| *b = 0.0);
        }
    }
}

/// Backprop one head; returns with `ws.junction_delta` holding the gradient
/// w.r.t. the (post-rectifier) trunk output, accumulated in place.
fn backprop_head(
    layers: &[AffineLayer],
    grads: &mut [AffineLayer],
    acts: &[Vec<f64>],
    junction: &[f64],
    out_delta: &[f64],
    scale: f64,
    delta_a: &mut Vec<f64>,
    delta_b: &mut Vec<f64>,
    junction_delta: &mut [f64],
) {
    delta_a.clear();
    delta_a.extend_from_slice(out_delta);
    for l in (0..layers.len()).rev() {
        let layer = &layers[l];
        let input: &[f64] = if l == 0 { junction } else { &acts[l - 1] };
        let grad = &mut grads[l];
        delta_b.resize(layer.in_dim, 0.0);
        delta_b.iter_mut().for_each(|d| *d = 0.0);
        for o in 0..layer.out_dim {
            let d = delta_a[o];
            if d == 0.0 {
                continue;
            }
            let ds = d * scale;
            let grow = &mut grad.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
            let wrow = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
            grad.biases[o] += ds;
            for ((g, w), (x, dp)) in
                grow.iter_mut().zip(wrow).zip(input.iter().zip(delta_b.iter_mut()))
            {
                *g += ds * x;
                *dp += d * w;
            }
        }
        if l > 0 {
            // Rectifier mask for the hidden activation feeding this layer.
            for (d, a) in delta_b.iter_mut().zip(&acts[l - 1]) {
                if *a <= 0.0 {
                    *d = 0.0;
                }
            }
            std::mem::swap(delta_a, delta_b);
        } else {
            for (jd, d) in junction_delta.iter_mut().zip(delta_b.iter()) {
                *jd += d;
            }
        }
    }
}

/// Accumulate `scale * d/dtheta [ (Q(obs, action) - target)^2 / 2 ]` into
/// `grad`, reusing `ws`. Returns the residual `Q(obs, action) - target`.
pub fn accumulate_gradient(
    params: &QNetworkParams,
    obs: &[f64],
    action: usize,
    target: f64,
    scale: f64,
    ws: &mut Workspace,
    grad: &mut GradientBuffer,
) -> Result<f64, NetError> {
    if !target.is_finite() {
        return Err(NetError::NonFinite(format!("target {target}")));
    }
    let (value, adv) = forward_cached(params, obs, ws)?;
    let q = aggregate(value, adv)[action];
    if !q.is_finite() {
        return Err(NetError::NonFinite(format!("q-value {q}")));
    }
    let residual = q - target;

    let junction: Vec<f64> = if params.trunk.is_empty() {
        obs.to_vec()
    } else {
        ws.trunk_acts.last().unwrap().clone()
    };
    let jdim = junction.len();
    ws.junction_delta.resize(jdim, 0.0);
    ws.junction_delta.iter_mut().for_each(|d| *d = 0.0);

    // dQ/dV = 1; dQ/dA_j = [j == action] - 1/|A|.
    let value_delta = [residual];
    let mut adv_delta = [0.0; NUM_ACTIONS];
    for (j, d) in adv_delta.iter_mut().enumerate() {
        let indicator = if j == action { 1.0 } else { 0.0 };
        *d = residual * (indicator - 1.0 / NUM_ACTIONS as f64);
    }

    let mut delta_a = std::mem::take(&mut ws.delta_a);
    let mut delta_b = std::mem::take(&mut ws.delta_b);
    backprop_head(
        &params.value_head,
        &mut grad.value_head,
        &ws.value_acts,
        &junction,
        &value_delta,
        scale,
        &mut delta_a,
        &mut delta_b,
        &mut ws.junction_delta[..jdim],
    );
    backprop_head(
        &params.advantage_head,
        &mut grad.advantage_head,
        &ws.adv_acts,
        &junction,
        &adv_delta,
        scale,
        &mut delta_a,
        &mut delta_b,
        &mut ws.junction_delta[..jdim],
    );

    // Trunk: the accumulated junction delta flows back through each
    // rectified layer.
    delta_a.clear();
    delta_a.extend_from_slice(&ws.junction_delta[..jdim]);
    for l in (0..params.trunk.len()).rev() {
        let layer = &params.trunk[l];
        let input: &[f64] = if l == 0 { obs } else { &ws.trunk_acts[l - 1] };
        // Mask by this layer's own rectifier before the affine backward.
        for (d, a) in delta_a.iter_mut().zip(&ws.trunk_acts[l]) {
            if *a <= 0.0 {
                *d = 0.0;
            }
        }
        let grad_layer = &mut grad.trunk[l];
        delta_b.resize(layer.in_dim, 0.0);
        delta_b.iter_mut().for_each(|d| *d = 0.0);
        for o in 0..layer.out_dim {
            let d = delta_a[o];
            if d == 0.0 {
                continue;
            }
            let ds = d * scale;
            let grow = &mut grad_layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
            let wrow = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
            grad_layer.biases[o] += ds;
            for ((g, w), (x, dp)) in
                grow.iter_mut().zip(wrow).zip(input.iter().zip(delta_b.iter_mut()))
            {
                *g += ds * x;
                *dp += d * w;
            }
        }
        std::mem::swap(&mut delta_a, &mut delta_b);
    }
    ws.delta_a = delta_a;
    ws.delta_b = delta_b;
    Ok(residual)
}

/// Gradient of `(Q(obs, action) - target)^2 / 2` with respect to every
/// parameter.
pub fn gradient(
    params: &QNetworkParams,
    obs: &[f64],
    action: usize,
    target: f64,
) -> Result<GradientBuffer, NetError> {
    let mut ws = Workspace::new(params);
    let mut grad = GradientBuffer::zeroed(params);
    accumulate_gradient(params, obs, action, target, 1.0, &mut ws, &mut grad)?;
    Ok(grad)
}

fn zip_layers<'a>(
    params: &'a mut QNetworkParams,
    other_trunk: &'a [AffineLayer],
    other_value: &'a [AffineLayer],
    other_adv: &'a [AffineLayer],
) -> impl Iterator<Item = (&'a mut AffineLayer, &'a AffineLayer)> {
    params
        .trunk
        .iter_mut()
        .zip(other_trunk)
        .chain(params.value_head.iter_mut().zip(other_value))
        .chain(params.advantage_head.iter_mut().zip(other_adv))
}

/// One plain gradient-descent step: `theta <- theta - eta * grad`.
pub fn sgd_step(
    params: &mut QNetworkParams,
    grad: &GradientBuffer,
    eta: f64,
) -> Result<(), NetError> {
    let shapes_ok = params.trunk.len() == grad.trunk.len()
        && params.value_head.len() == grad.value_head.len()
        && params.advantage_head.len() == grad.advantage_head.len();
    if !shapes_ok {
        return Err(NetError::ShapeMismatch("gradient layer count differs".into()));
    }
    for (layer, g) in zip_layers(params, &grad.trunk, &grad.value_head, &grad.advantage_head) {
        if layer.weights.len() != g.weights.len() || layer.biases.len() != g.biases.len() {
            return Err(NetError::ShapeMismatch("gradient layer size differs".into()));
        }
        for (w, gw) in layer.weights.iter_mut().zip(&g.weights) {
            *w -= eta * gw;
        }
        for (b, gb) in layer.biases.iter_mut().zip(&g.biases) {
            *b -= eta * gb;
        }
    }
    Ok(())
}

/// Blend online parameters into the target copy:
/// `theta_target <- tau * theta_online + (1 - tau) * theta_target`.
pub fn soft_update(
    target: &mut QNetworkParams,
    online: &QNetworkParams,
    tau: f64,
) -> Result<(), NetError> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(NetError::InvalidDims(format!("tau must be in [0, 1], got {tau}")));
    }
    if !target.shape_matches(online) {
        return Err(NetError::ShapeMismatch("target and online shapes differ".into()));
    }
    for (layer, src) in zip_layers(target, &online.trunk, &online.value_head, &online.advantage_head)
    {
        for (t, o) in layer.weights.iter_mut().zip(&src.weights) {
            *t = tau * o + (1.0 - tau) * *t;
        }
        for (t, o) in layer.biases.iter_mut().zip(&src.biases) {
            *t = tau * o + (1.0 - tau) * *t;
        }
    }
    Ok(())
}

const CHECKPOINT_MAGIC: &str = "tpaoi-qnet v1";

fn write_group(out: &mut String, name: &str, layers: &[AffineLayer]) {
    let _ = writeln!(out, "{name} {}", layers.len());
    for layer in layers {
        let _ = writeln!(out, "layer {} {}", layer.in_dim, layer.out_dim);
        for o in 0..layer.out_dim {
            let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
            let line: Vec<String> = row.iter().map(|w| format!("{w:?}")).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        let line: Vec<String> = layer.biases.iter().map(|b| format!("{b:?}")).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
}

/// Serialize parameters to the flat text checkpoint layout. Values are
/// printed with shortest round-trip formatting, so reloading is bit-exact.
pub fn checkpoint_to_string(params: &QNetworkParams) -> String {
    let mut out = String::new();
    out.push_str(CHECKPOINT_MAGIC);
    out.push('\n');
    write_group(&mut out, "trunk", &params.trunk);
    write_group(&mut out, "value", &params.value_head);
    write_group(&mut out, "advantage", &params.advantage_head);
    out
}

pub fn save_checkpoint(params: &QNetworkParams, path: &Path) -> Result<(), NetError> {
    std::fs::write(path, checkpoint_to_string(params))?;
    Ok(())
}

fn parse_floats(line: &str, expect: usize) -> Result<Vec<f64>, NetError> {
    let vals: Result<Vec<f64>, _> = line.split_whitespace().map(str::parse).collect();
    let vals = vals.map_err(|e| NetError::Parse(format!("bad float: {e}")))?;
    if vals.len() != expect {
        return Err(NetError::Parse(format!("expected {expect} values, got {}", vals.len())));
    }
    Ok(vals)
}

fn read_group<'a, I: Iterator<Item = &'a str>>(
    lines: &mut I,
    name: &str,
) -> Result<Vec<AffineLayer>, NetError> {
    let header = lines.next().ok_or_else(|| NetError::Parse(format!("missing {name} header")))?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some(name) {
        return Err(NetError::Parse(format!("expected `{name}` header, got `{header}`")));
    }
    let count: usize = parts
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| NetError::Parse(format!("bad {name} count")))?;
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let decl = lines.next().ok_or_else(|| NetError::Parse("missing layer decl".into()))?;
        let mut parts = decl.split_whitespace();
        if parts.next() != Some("layer") {
            return Err(NetError::Parse(format!("expected `layer`, got `{decl}`")));
        }
        let in_dim: usize = parts
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| NetError::Parse("bad in_dim".into()))?;
        let out_dim: usize = parts
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| NetError::Parse("bad out_dim".into()))?;
        let mut layer = AffineLayer::zeroed(in_dim, out_dim);
        for o in 0..out_dim {
            let line = lines.next().ok_or_else(|| NetError::Parse("missing weight row".into()))?;
            let row = parse_floats(line, in_dim)?;
            layer.weights[o * in_dim..(o + 1) * in_dim].copy_from_slice(&row);
        }
        let line = lines.next().ok_or_else(|| NetError::Parse("missing bias row".into()))?;
        layer.biases = parse_floats(line, out_dim)?;
        layers.push(layer);
    }
    Ok(layers)
}

pub fn checkpoint_from_string(text: &str) -> Result<QNetworkParams, NetError> {
    let mut lines = text.lines();
    let magic = lines.next().ok_or_else(|| NetError::Parse("empty checkpoint".into()))?;
    if magic.trim() != CHECKPOINT_MAGIC {
        return Err(NetError::Parse(format!("unsupported checkpoint header `{magic}`")));
    }
    let trunk = read_group(&mut lines, "trunk")?;
    let value_head = read_group(&mut lines, "value")?;
    let advantage_head = read_group(&mut lines, "advantage")?;
    let params = QNetworkParams { trunk, value_head, advantage_head };
    // Dimension chain sanity.
    let mut prev = params.input_dim();
    for l in &params.trunk {
        if l.in_dim != prev {
            return Err(NetError::Parse("trunk dimensions do not chain".into()));
        }
        prev = l.out_dim;
    }
    for head in [&params.value_head, &params.advantage_head] {
        let mut hprev = prev;
        for l in head {
            if l.in_dim != hprev {
                return Err(NetError::Parse("head dimensions do not chain".into()));
            }
            hprev = l.out_dim;
        }
    }
    if params.value_head.last().map(|l| l.out_dim) != Some(1) {
        return Err(NetError::Parse("value head must end in 1 output".into()));
    }
    if params.advantage_head.last().map(|l| l.out_dim) != Some(NUM_ACTIONS) {
        return Err(NetError::Parse("advantage head must end in 2 outputs".into()));
    }
    Ok(params)
}

pub fn load_checkpoint(path: &Path) -> Result<QNetworkParams, NetError> {
    checkpoint_from_string(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Hand-built net with no trunk and single-layer heads so the value and
    /// advantage outputs are just biases.
    fn contrived(value: f64, adv: [f64; 2]) -> QNetworkParams {
        QNetworkParams {
            trunk: vec![],
            value_head: vec![AffineLayer { in_dim: 1, out_dim: 1, weights: vec![0.0], biases: vec![value] }],
            advantage_head: vec![AffineLayer {
                in_dim: 1,
                out_dim: 2,
                weights: vec![0.0, 0.0],
                biases: adv.to_vec(),
            }],
        }
    }

    #[test]
    fn aggregation_subtracts_mean_advantage() {
        let q = forward(&contrived(2.0, [1.0, 3.0]), &[0.0]).unwrap();
        assert_eq!(q, [1.0, 3.0]);

        // Equal advantages collapse to the state value.
        let q = forward(&contrived(-4.0, [0.7, 0.7]), &[0.0]).unwrap();
        assert_eq!(q, [-4.0, -4.0]);

        // Shifting both advantages by a constant changes nothing.
        let base = forward(&contrived(1.5, [0.2, -0.9]), &[0.0]).unwrap();
        let shifted = forward(&contrived(1.5, [0.2 + 11.0, -0.9 + 11.0]), &[0.0]).unwrap();
        for (b, s) in base.iter().zip(shifted) {
            assert!((b - s).abs() < 1e-12);
        }
    }

    #[test]
    fn mean_q_equals_state_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let params = init_params(&[4, 8, 6], &mut rng).unwrap();
            let obs: Vec<f64> = (0..4).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
            let (v, q) = forward_parts(&params, &obs).unwrap();
            let mean_q = (q[0] + q[1]) / 2.0;
            assert!((mean_q - v).abs() < 1e-10, "mean q {mean_q} vs value {v}");
        }
    }

    #[test]
    fn forward_rejects_wrong_input_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = init_params(&[3, 4], &mut rng).unwrap();
        assert!(matches!(forward(&params, &[0.0; 5]), Err(NetError::ShapeMismatch(_))));
    }

    #[test]
    fn init_matches_closed_form_parameter_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dims = [6usize, 128, 512, 256, 128];
        let params = init_params(&dims, &mut rng).unwrap();
        let trunk: usize = (0..3).map(|i| dims[i] * dims[i + 1] + dims[i + 1]).sum();
        let value = 256 * 128 + 128 + 128 + 1;
        let advantage = 256 * 128 + 128 + 128 * 2 + 2;
        assert_eq!(params.parameter_count(), trunk + value + advantage);
        assert_eq!(params.input_dim(), 6);
    }

    #[test]
    fn init_is_seeded_and_biases_start_at_zero() {
        let a = init_params(&[6, 16, 8], &mut ChaCha8Rng::seed_from_u64(33)).unwrap();
        let b = init_params(&[6, 16, 8], &mut ChaCha8Rng::seed_from_u64(33)).unwrap();
        assert_eq!(a, b);
        for layer in a.trunk.iter().chain(&a.value_head).chain(&a.advantage_head) {
            assert!(layer.biases.iter().all(|&x| x == 0.0));
        }
        assert!(init_params(&[6], &mut ChaCha8Rng::seed_from_u64(1)).is_err());
        assert!(init_params(&[6, 0, 4], &mut ChaCha8Rng::seed_from_u64(1)).is_err());
    }

    #[test]
    fn zero_residual_gives_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let params = init_params(&[3, 5, 4], &mut rng).unwrap();
        let obs = [0.3, -0.8, 0.5];
        let q = forward(&params, &obs).unwrap();
        let grad = gradient(&params, &obs, 1, q[1]).unwrap();
        for layer in grad.trunk.iter().chain(&grad.value_head).chain(&grad.advantage_head) {
            assert!(layer.weights.iter().all(|&g| g == 0.0));
            assert!(layer.biases.iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn gradient_scales_linearly_with_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let params = init_params(&[4, 6, 5], &mut rng).unwrap();
        let obs = [0.2, 0.9, -0.4, 0.1];
        let q = forward(&params, &obs).unwrap();
        let g1 = gradient(&params, &obs, 0, q[0] - 1.0).unwrap();
        let g3 = gradient(&params, &obs, 0, q[0] - 3.0).unwrap();
        for (a, b) in g1.trunk.iter().zip(&g3.trunk) {
            for (x, y) in a.weights.iter().zip(&b.weights) {
                assert!((3.0 * x - y).abs() < 1e-9, "weight grad not linear: {x} vs {y}");
            }
        }
        let v1 = g1.value_head.last().unwrap().biases[0];
        let v3 = g3.value_head.last().unwrap().biases[0];
        assert!((3.0 * v1 - v3).abs() < 1e-9);
    }

    /// Every analytic gradient component must match a central finite
    /// difference of the loss.
    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for net in 0..5 {
            let params = init_params(&[2, 4], &mut rng).unwrap();
            let obs: Vec<f64> = (0..2).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            let action = net % 2;
            let target = rng.random::<f64>() * 4.0 - 2.0;
            check_fd(&params, &obs, action, target);
        }
        for _ in 0..3 {
            let params = init_params(&[5, 8, 6, 4], &mut rng).unwrap();
            let obs: Vec<f64> = (0..5).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            check_fd(&params, &obs, 1, -0.7);
        }
    }

    fn loss(params: &QNetworkParams, obs: &[f64], action: usize, target: f64) -> f64 {
        let q = forward(params, obs).unwrap()[action];
        0.5 * (q - target) * (q - target)
    }

    fn param_slot(params: &mut QNetworkParams, group: usize, li: usize, wi: usize) -> &mut f64 {
        let layers = match group {
            0 => &mut params.trunk,
            1 => &mut params.value_head,
            _ => &mut params.advantage_head,
        };
        let layer = &mut layers[li];
        let n_w = layer.weights.len();
        if wi < n_w {
            &mut layer.weights[wi]
        } else {
            &mut layer.biases[wi - n_w]
        }
    }

    fn check_fd(params: &QNetworkParams, obs: &[f64], action: usize, target: f64) {
        let analytic = gradient(params, obs, action, target).unwrap();
        let h = 1e-5;
        let mut probe = params.clone();
        let group_lens = [params.trunk.len(), params.value_head.len(), params.advantage_head.len()];
        for (group, &n_layers) in group_lens.iter().enumerate() {
            for li in 0..n_layers {
                let layers = match group {
                    0 => &params.trunk,
                    1 => &params.value_head,
                    _ => &params.advantage_head,
                };
                let n_params = layers[li].weights.len() + layers[li].biases.len();
                for wi in 0..n_params {
                    let orig = *param_slot(&mut probe, group, li, wi);
                    *param_slot(&mut probe, group, li, wi) = orig + h;
                    let up = loss(&probe, obs, action, target);
                    *param_slot(&mut probe, group, li, wi) = orig - h;
                    let down = loss(&probe, obs, action, target);
                    *param_slot(&mut probe, group, li, wi) = orig;
                    let numeric = (up - down) / (2.0 * h);
                    let a = {
                        let g = match group {
                            0 => &analytic.trunk,
                            1 => &analytic.value_head,
                            _ => &analytic.advantage_head,
                        };
                        let n_w = g[li].weights.len();
                        if wi < n_w { g[li].weights[wi] } else { g[li].biases[wi - n_w] }
                    };
                    let denom = a.abs().max(numeric.abs()).max(1e-6);
                    assert!(
                        ((a - numeric) / denom).abs() < 1e-4,
                        "fd mismatch: analytic {a}, numeric {numeric}"
                    );
                }
            }
        }
    }

    #[test]
    fn sgd_step_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut params = init_params(&[3, 4], &mut rng).unwrap();
        let before = params.clone();

        // Zero gradient is a fixed point.
        let zero = GradientBuffer::zeroed(&params);
        sgd_step(&mut params, &zero, 0.5).unwrap();
        assert_eq!(params, before);

        // All-ones gradient moves every parameter down by eta.
        let mut ones = GradientBuffer::zeroed(&params);
        for layer in ones.trunk.iter_mut().chain(&mut ones.value_head).chain(&mut ones.advantage_head) {
            layer.weights.iter_mut().for_each(|w| *w = 1.0);
            layer.biases.iter_mut().for_each(|b| *b = 1.0);
        }
        sgd_step(&mut params, &ones, 0.0002).unwrap();
        for (after, orig) in params.trunk.iter().zip(&before.trunk) {
            for (a, o) in after.weights.iter().zip(&orig.weights) {
                assert!((o - a - 0.0002).abs() < 1e-15);
            }
        }

        // Two half-steps equal one full step for a fixed gradient.
        let mut halves = before.clone();
        sgd_step(&mut halves, &ones, 0.0001).unwrap();
        sgd_step(&mut halves, &ones, 0.0001).unwrap();
        let mut full = before.clone();
        sgd_step(&mut full, &ones, 0.0002).unwrap();
        for (a, b) in halves.trunk.iter().zip(&full.trunk) {
            for (x, y) in a.weights.iter().zip(&b.weights) {
                assert!((x - y).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn soft_update_blends_toward_online() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let online = init_params(&[3, 4], &mut rng).unwrap();
        let init = init_params(&[3, 4], &mut rng).unwrap();

        let mut target = init.clone();
        soft_update(&mut target, &online, 1.0).unwrap();
        assert_eq!(target, online);

        let mut target = init.clone();
        soft_update(&mut target, &online, 0.0).unwrap();
        assert_eq!(target, init);

        // Scalar check of the blend itself.
        let mut target = contrived(0.0, [0.0, 0.0]);
        let online_c = contrived(1.0, [1.0, 1.0]);
        soft_update(&mut target, &online_c, 0.001).unwrap();
        assert!((target.value_head[0].biases[0] - 0.001).abs() < 1e-15);

        // Convex combination: every blended value lies between its endpoints.
        let mut target = init.clone();
        soft_update(&mut target, &online, 0.37).unwrap();
        for ((t, i), o) in target
            .trunk
            .iter()
            .flat_map(|l| &l.weights)
            .zip(init.trunk.iter().flat_map(|l| &l.weights))
            .zip(online.trunk.iter().flat_map(|l| &l.weights))
        {
            let (lo, hi) = if i < o { (i, o) } else { (o, i) };
            assert!(*t >= *lo - 1e-12 && *t <= *hi + 1e-12);
        }

        let mismatched = init_params(&[3, 5], &mut rng).unwrap();
        let mut target = init.clone();
        assert!(soft_update(&mut target, &mismatched, 0.5).is_err());
        assert!(soft_update(&mut target, &online, 1.5).is_err());
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut params = init_params(&[6, 32, 16], &mut rng).unwrap();
        // Push some awkward values through the text format.
        params.trunk[0].weights[0] = 1.0 / 3.0;
        params.trunk[0].biases[0] = -0.0;
        params.value_head[1].weights[3] = 1e-300;

        let text = checkpoint_to_string(&params);
        let reloaded = checkpoint_from_string(&text).unwrap();
        assert_eq!(params.parameter_count(), reloaded.parameter_count());
        for (a, b) in params
            .all_layers()
            .flat_map(|l| l.weights.iter().chain(&l.biases))
            .zip(reloaded.all_layers().flat_map(|l| l.weights.iter().chain(&l.biases)))
        {
            assert_eq!(a.to_bits(), b.to_bits());
        }

        assert!(checkpoint_from_string("garbage").is_err());
    }
}
