//! Actor-critic function approximators.
//!
//! Both model families share one trunk/heads layout: a stack of layers maps a
//! grayscale frame to a feature vector, then two linear heads produce action
//! logits and a state-value estimate. The hybrid model's trunk repeats
//! `Linear → π·tanh → VQC → ReLU → Linear → ReLU`; the classical baseline
//! swaps the circuit blocks for a small convolution stack.
//!
//! All gradients are exact. Circuit blocks are differentiated with the
//! parameter-shift rule, everything else with the chain rule.

use crate::env::Observation;
use crate::qsim::{self, AnsatzConfig, Entanglement, QsimError};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::{Read, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("invalid model spec: {0}")]
    Spec(String),
    #[error("{what}: expected {expected}, got {got}")]
    Shape {
        what: &'static str,
        expected: String,
        got: String,
    },
    #[error("observation contains non-finite values")]
    NonFiniteInput,
    #[error("forward cache does not belong to these parameters; run forward_cached first")]
    StaleCache,
    #[error(transparent)]
    Qsim(#[from] QsimError),
    #[error("checkpoint format version {0} is not supported")]
    CheckpointVersion(u32),
    #[error("checkpoint I/O: {0}")]
    CheckpointIo(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, PolicyError>;

fn shape_err(what: &'static str, expected: impl ToString, got: impl ToString) -> PolicyError {
    PolicyError::Shape {
        what,
        expected: expected.to_string(),
        got: got.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Hybrid quantum-classical network.
    Quantum,
    /// Convolutional baseline.
    Classical,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CnnConfig {
    pub channels: Vec<usize>,
    pub kernels: Vec<usize>,
    pub strides: Vec<usize>,
}

impl Default for CnnConfig {
    fn default() -> Self {
        Self {
            channels: vec![8, 16],
            kernels: vec![4, 3],
            strides: vec![2, 2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// `(height, width)` of the grayscale input.
    pub obs_shape: (usize, usize),
    pub n_actions: usize,
    pub n_hybrid_layers: usize,
    pub ansatz: AnsatzConfig,
    /// Hybrid: output width of each hybrid layer. Classical: dense layers
    /// after the convolution stack.
    pub hidden_dims: Vec<usize>,
    pub cnn: CnnConfig,
}

impl ModelSpec {
    pub fn hybrid(obs_shape: (usize, usize), n_actions: usize, ansatz: AnsatzConfig) -> Self {
        Self {
            kind: ModelKind::Quantum,
            obs_shape,
            n_actions,
            n_hybrid_layers: 3,
            ansatz,
            hidden_dims: vec![16; 3],
            cnn: CnnConfig::default(),
        }
    }

    pub fn classical(obs_shape: (usize, usize), n_actions: usize) -> Self {
        Self {
            kind: ModelKind::Classical,
            obs_shape,
            n_actions,
            n_hybrid_layers: 0,
            ansatz: AnsatzConfig {
                n_qubits: 2,
                n_layers: 1,
                entanglement: Entanglement::Strong,
            },
            hidden_dims: vec![32],
            cnn: CnnConfig::default(),
        }
    }

    /// Same network applied to a different frame or action count.
    pub fn with_io(&self, obs_shape: (usize, usize), n_actions: usize) -> Self {
        Self {
            obs_shape,
            n_actions,
            ..self.clone()
        }
    }

    pub fn input_len(&self) -> usize {
        self.obs_shape.0 * self.obs_shape.1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamKind {
    Classical,
    Quantum,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSlice {
    pub name: String,
    pub kind: ParamKind,
    pub offset: usize,
    pub len: usize,
}

/// Maps the flat parameter vector onto layers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub slices: Vec<LayerSlice>,
}

impl ParamLayout {
    pub fn total(&self) -> usize {
        self.slices.iter().map(|s| s.len).sum()
    }

    pub fn counts(&self) -> ParamCounts {
        let mut c = ParamCounts::default();
        for s in &self.slices {
            match s.kind {
                ParamKind::Classical => c.classical += s.len,
                ParamKind::Quantum => c.quantum += s.len,
            }
        }
        c
    }

    /// Splits a flat vector into `(θ_c, Θ_q)`, each in layout order.
    pub fn split(&self, flat: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut classical = Vec::new();
        let mut quantum = Vec::new();
        for s in &self.slices {
            let part = &flat[s.offset..s.offset + s.len];
            match s.kind {
                ParamKind::Classical => classical.extend_from_slice(part),
                ParamKind::Quantum => quantum.extend_from_slice(part),
            }
        }
        (classical, quantum)
    }

    /// Inverse of [`split`](Self::split).
    pub fn join(&self, classical: &[f64], quantum: &[f64]) -> Result<Vec<f64>> {
        let counts = self.counts();
        if classical.len() != counts.classical || quantum.len() != counts.quantum {
            return Err(shape_err(
                "classical/quantum parameter split",
                format!("{}/{}", counts.classical, counts.quantum),
                format!("{}/{}", classical.len(), quantum.len()),
            ));
        }
        let mut flat = vec![0.0; self.total()];
        let (mut ci, mut qi) = (0, 0);
        for s in &self.slices {
            let src = match s.kind {
                ParamKind::Classical => {
                    ci += s.len;
                    &classical[ci - s.len..ci]
                }
                ParamKind::Quantum => {
                    qi += s.len;
                    &quantum[qi - s.len..qi]
                }
            };
            flat[s.offset..s.offset + s.len].copy_from_slice(src);
        }
        Ok(flat)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCounts {
    pub classical: usize,
    pub quantum: usize,
}

impl ParamCounts {
    pub fn total(&self) -> usize {
        self.classical + self.quantum
    }
}

/// Θ = Θ_q ∪ θ_c for one network, stored flat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub values: Vec<f64>,
    pub layout: ParamLayout,
}

impl PolicyParams {
    pub fn classical(&self) -> Vec<f64> {
        self.layout.split(&self.values).0
    }

    pub fn quantum(&self) -> Vec<f64> {
        self.layout.split(&self.values).1
    }

    pub fn from_parts(layout: ParamLayout, classical: &[f64], quantum: &[f64]) -> Result<Self> {
        let values = layout.join(classical, quantum)?;
        Ok(Self { values, layout })
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    pub logits: Vec<f64>,
    pub value: f64,
}

impl PolicyOutput {
    pub fn log_probs(&self) -> Vec<f64> {
        log_softmax(&self.logits)
    }

    pub fn probs(&self) -> Vec<f64> {
        softmax(&self.logits)
    }
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

/// Draws an action from `softmax(logits)`; returns `(index, log π(a|s))`.
pub fn sample_action<R: Rng + ?Sized>(output: &PolicyOutput, rng: &mut R) -> (usize, f64) {
    let logp = output.log_probs();
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (a, lp) in logp.iter().enumerate() {
        acc += lp.exp();
        if u < acc {
            return (a, *lp);
        }
    }
    // u landed in the rounding gap above the cumulative sum
    let last = logp.len() - 1;
    (last, logp[last])
}

pub fn greedy_action(output: &PolicyOutput) -> (usize, f64) {
    let logp = output.log_probs();
    let mut best = 0;
    for (a, lp) in logp.iter().enumerate() {
        if *lp > logp[best] {
            best = a;
        }
    }
    (best, logp[best])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ConvGeom {
    in_c: usize,
    in_h: usize,
    in_w: usize,
    out_c: usize,
    k: usize,
    stride: usize,
    out_h: usize,
    out_w: usize,
}

impl ConvGeom {
    fn weight_len(&self) -> usize {
        self.out_c * self.in_c * self.k * self.k
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Layer {
    Dense {
        input: usize,
        output: usize,
        offset: usize,
    },
    /// `x ↦ π·tanh(x)`, mapping features onto encoding angles.
    AngleScale,
    Vqc {
        ansatz: AnsatzConfig,
        offset: usize,
    },
    Relu,
    Conv {
        geom: ConvGeom,
        offset: usize,
    },
}

/// Cached activations of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `activations[i]` is the input of trunk layer `i`; the last entry is the
    /// trunk output fed to both heads.
    activations: Vec<Vec<f64>>,
    fingerprint: u64,
}

fn fingerprint(params: &[f64]) -> u64 {
    params.iter().fold(params.len() as u64, |h, v| {
        (h ^ v.to_bits()).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// A model spec compiled into a concrete layer stack.
#[derive(Debug, Clone)]
pub struct Network {
    spec: ModelSpec,
    trunk: Vec<Layer>,
    policy_head: Layer,
    value_head: Layer,
    layout: ParamLayout,
}

struct LayoutBuilder {
    slices: Vec<LayerSlice>,
    next: usize,
}

impl LayoutBuilder {
    fn push(&mut self, name: String, kind: ParamKind, len: usize) -> usize {
        let offset = self.next;
        self.slices.push(LayerSlice {
            name,
            kind,
            offset,
            len,
        });
        self.next += len;
        offset
    }

    fn dense(&mut self, name: String, input: usize, output: usize) -> Layer {
        let offset = self.push(name, ParamKind::Classical, input * output + output);
        Layer::Dense {
            input,
            output,
            offset,
        }
    }
}

impl Network {
    pub fn new(spec: &ModelSpec) -> Result<Self> {
        let (h, w) = spec.obs_shape;
        if h == 0 || w == 0 {
            return Err(PolicyError::Spec(format!(
                "observation shape {h}x{w} is empty"
            )));
        }
        if spec.n_actions < 2 {
            return Err(PolicyError::Spec(format!(
                "need at least 2 actions, got {}",
                spec.n_actions
            )));
        }
        if spec.hidden_dims.contains(&0) {
            return Err(PolicyError::Spec("hidden widths must be positive".into()));
        }
        let mut lb = LayoutBuilder {
            slices: Vec::new(),
            next: 0,
        };
        let mut trunk = Vec::new();
        let mut width = h * w;
        match spec.kind {
            ModelKind::Quantum => {
                spec.ansatz.validate()?;
                if spec.n_hybrid_layers == 0 {
                    return Err(PolicyError::Spec("need at least one hybrid layer".into()));
                }
                if spec.hidden_dims.len() != spec.n_hybrid_layers {
                    return Err(PolicyError::Spec(format!(
                        "{} hybrid layers but {} hidden widths",
                        spec.n_hybrid_layers,
                        spec.hidden_dims.len()
                    )));
                }
                let n = spec.ansatz.n_qubits;
                for (i, &hidden) in spec.hidden_dims.iter().enumerate() {
                    trunk.push(lb.dense(format!("hybrid{i}.encode_linear"), width, n));
                    trunk.push(Layer::AngleScale);
                    let offset = lb.push(
                        format!("hybrid{i}.vqc"),
                        ParamKind::Quantum,
                        spec.ansatz.param_count(),
                    );
                    trunk.push(Layer::Vqc {
                        ansatz: spec.ansatz,
                        offset,
                    });
                    trunk.push(Layer::Relu);
                    trunk.push(lb.dense(format!("hybrid{i}.linear"), n, hidden));
                    trunk.push(Layer::Relu);
                    width = hidden;
                }
            }
            ModelKind::Classical => {
                let cnn = &spec.cnn;
                if cnn.channels.len() != cnn.kernels.len()
                    || cnn.channels.len() != cnn.strides.len()
                {
                    return Err(PolicyError::Spec(
                        "cnn channels, kernels and strides must have equal length".into(),
                    ));
                }
                let (mut c, mut ch, mut cw) = (1, h, w);
                for (i, ((&out_c, &k), &stride)) in cnn
                    .channels
                    .iter()
                    .zip(&cnn.kernels)
                    .zip(&cnn.strides)
                    .enumerate()
                {
                    if out_c == 0 || k == 0 || stride == 0 {
                        return Err(PolicyError::Spec(format!(
                            "conv{i} has a zero channel count, kernel or stride"
                        )));
                    }
                    if k > ch || k > cw {
                        return Err(PolicyError::Spec(format!(
                            "conv{i} kernel {k} does not fit a {ch}x{cw} input"
                        )));
                    }
                    let geom = ConvGeom {
                        in_c: c,
                        in_h: ch,
                        in_w: cw,
                        out_c,
                        k,
                        stride,
                        out_h: (ch - k) / stride + 1,
                        out_w: (cw - k) / stride + 1,
                    };
                    let offset = lb.push(
                        format!("conv{i}"),
                        ParamKind::Classical,
                        geom.weight_len() + out_c,
                    );
                    trunk.push(Layer::Conv { geom, offset });
                    trunk.push(Layer::Relu);
                    (c, ch, cw) = (out_c, geom.out_h, geom.out_w);
                }
                width = c * ch * cw;
                for (i, &hidden) in spec.hidden_dims.iter().enumerate() {
                    trunk.push(lb.dense(format!("dense{i}"), width, hidden));
                    trunk.push(Layer::Relu);
                    width = hidden;
                }
            }
        }
        let policy_head = lb.dense("policy_head".into(), width, spec.n_actions);
        let value_head = lb.dense("value_head".into(), width, 1);
        Ok(Self {
            spec: spec.clone(),
            trunk,
            policy_head,
            value_head,
            layout: ParamLayout { slices: lb.slices },
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn param_count(&self) -> usize {
        self.layout.total()
    }

    /// Fresh parameters: uniform fan-in scaling for classical layers (the
    /// policy head scaled down so the initial policy is near uniform) and
    /// uniform angles in `[0, 2π)` for circuits.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> PolicyParams {
        let mut values = vec![0.0; self.param_count()];
        let mut fill_dense = |layer: &Layer, gain: f64, values: &mut [f64]| {
            if let Layer::Dense {
                input,
                output,
                offset,
            } = *layer
            {
                let bound = gain / (input as f64).sqrt();
                for v in &mut values[offset..offset + input * output + output] {
                    *v = rng.gen_range(-bound..bound);
                }
            }
        };
        for layer in &self.trunk {
            fill_dense(layer, 1.0, &mut values);
        }
        fill_dense(&self.policy_head, 0.01, &mut values);
        fill_dense(&self.value_head, 1.0, &mut values);
        for layer in &self.trunk {
            match *layer {
                Layer::Vqc { ansatz, offset } => {
                    for v in &mut values[offset..offset + ansatz.param_count()] {
                        *v = rng.gen_range(0.0..2.0 * PI);
                    }
                }
                Layer::Conv { geom, offset } => {
                    let bound = 1.0 / ((geom.in_c * geom.k * geom.k) as f64).sqrt();
                    for v in &mut values[offset..offset + geom.weight_len() + geom.out_c] {
                        *v = rng.gen_range(-bound..bound);
                    }
                }
                _ => {}
            }
        }
        PolicyParams {
            values,
            layout: self.layout.clone(),
        }
    }

    pub fn zero_params(&self) -> PolicyParams {
        PolicyParams {
            values: vec![0.0; self.param_count()],
            layout: self.layout.clone(),
        }
    }

    fn check_params(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(shape_err(
                "parameter vector",
                self.param_count(),
                params.len(),
            ));
        }
        Ok(())
    }

    fn check_obs(&self, obs: &Observation) -> Result<()> {
        if obs.shape() != self.spec.obs_shape || obs.pixels.len() != self.spec.input_len() {
            return Err(shape_err(
                "observation",
                format!("{:?}", self.spec.obs_shape),
                format!("{:?}", obs.shape()),
            ));
        }
        if !obs.pixels.iter().all(|p| p.is_finite()) {
            return Err(PolicyError::NonFiniteInput);
        }
        Ok(())
    }

    pub fn forward(&self, params: &[f64], obs: &Observation) -> Result<PolicyOutput> {
        self.forward_cached(params, obs).map(|(out, _)| out)
    }

    pub fn forward_cached(
        &self,
        params: &[f64],
        obs: &Observation,
    ) -> Result<(PolicyOutput, ForwardCache)> {
        self.check_params(params)?;
        self.check_obs(obs)?;
        let mut activations = Vec::with_capacity(self.trunk.len() + 1);
        activations.push(obs.pixels.clone());
        for layer in &self.trunk {
            let next = layer_forward(layer, params, activations.last().unwrap())?;
            activations.push(next);
        }
        let features = activations.last().unwrap();
        let logits = layer_forward(&self.policy_head, params, features)?;
        let value = layer_forward(&self.value_head, params, features)?[0];
        Ok((
            PolicyOutput { logits, value },
            ForwardCache {
                activations,
                fingerprint: fingerprint(params),
            },
        ))
    }

    /// Gradient of `upstream_logits · logits + upstream_value · value` with
    /// respect to every parameter, laid out like `params`.
    pub fn backward(
        &self,
        params: &[f64],
        cache: &ForwardCache,
        upstream_logits: &[f64],
        upstream_value: f64,
    ) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; self.param_count()];
        self.backward_into(params, cache, upstream_logits, upstream_value, &mut grad)?;
        Ok(grad)
    }

    /// Like [`backward`](Self::backward) but accumulates into `grad`.
    pub fn backward_into(
        &self,
        params: &[f64],
        cache: &ForwardCache,
        upstream_logits: &[f64],
        upstream_value: f64,
        grad: &mut [f64],
    ) -> Result<()> {
        self.check_params(params)?;
        if grad.len() != params.len() {
            return Err(shape_err("gradient buffer", params.len(), grad.len()));
        }
        if cache.fingerprint != fingerprint(params)
            || cache.activations.len() != self.trunk.len() + 1
        {
            return Err(PolicyError::StaleCache);
        }
        if upstream_logits.len() != self.spec.n_actions {
            return Err(shape_err(
                "upstream logits",
                self.spec.n_actions,
                upstream_logits.len(),
            ));
        }
        let features = cache.activations.last().unwrap();
        let mut g = layer_backward(
            &self.policy_head,
            params,
            features,
            &[],
            upstream_logits,
            grad,
        )?;
        let gv = layer_backward(
            &self.value_head,
            params,
            features,
            &[],
            &[upstream_value],
            grad,
        )?;
        for (a, b) in g.iter_mut().zip(&gv) {
            *a += b;
        }
        for (i, layer) in self.trunk.iter().enumerate().rev() {
            g = layer_backward(
                layer,
                params,
                &cache.activations[i],
                &cache.activations[i + 1],
                &g,
                grad,
            )?;
        }
        Ok(())
    }
}

fn layer_forward(layer: &Layer, params: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    Ok(match *layer {
        Layer::Dense {
            input,
            output,
            offset,
        } => {
            let w = &params[offset..offset + input * output];
            let b = &params[offset + input * output..offset + input * output + output];
            (0..output)
                .map(|o| {
                    b[o] + w[o * input..(o + 1) * input]
                        .iter()
                        .zip(x)
                        .map(|(wi, xi)| wi * xi)
                        .sum::<f64>()
                })
                .collect()
        }
        Layer::AngleScale => x.iter().map(|v| PI * v.tanh()).collect(),
        Layer::Vqc { ansatz, offset } => {
            qsim::run_vqc(x, &params[offset..offset + ansatz.param_count()], &ansatz)?
        }
        Layer::Relu => x.iter().map(|v| v.max(0.0)).collect(),
        Layer::Conv { geom, offset } => conv_forward(&geom, &params[offset..], x),
    })
}

/// Accumulates parameter gradients into `grad` and returns the gradient with
/// respect to the layer input. `y` is the cached output (unused by layers
/// that do not need it).
fn layer_backward(
    layer: &Layer,
    params: &[f64],
    x: &[f64],
    y: &[f64],
    gy: &[f64],
    grad: &mut [f64],
) -> Result<Vec<f64>> {
    Ok(match *layer {
        Layer::Dense {
            input,
            output,
            offset,
        } => {
            let w = &params[offset..offset + input * output];
            let mut gx = vec![0.0; input];
            let (gw, gb) =
                grad[offset..offset + input * output + output].split_at_mut(input * output);
            for o in 0..output {
                let go = gy[o];
                if go == 0.0 {
                    continue;
                }
                gb[o] += go;
                let row = o * input;
                for i in 0..input {
                    gw[row + i] += go * x[i];
                    gx[i] += go * w[row + i];
                }
            }
            gx
        }
        Layer::AngleScale => y
            .iter()
            .zip(gy)
            .map(|(yi, g)| {
                let t = yi / PI;
                g * PI * (1.0 - t * t)
            })
            .collect(),
        Layer::Vqc { ansatz, offset } => {
            if gy.iter().all(|g| *g == 0.0) {
                return Ok(vec![0.0; x.len()]);
            }
            let n = ansatz.param_count();
            let jac = qsim::vqc_jacobian(x, &params[offset..offset + n], &ansatz)?;
            for (acc, d) in grad[offset..offset + n]
                .iter_mut()
                .zip(jac.contract_params(gy))
            {
                *acc += d;
            }
            jac.contract_inputs(gy)
        }
        Layer::Relu => x
            .iter()
            .zip(gy)
            .map(|(xi, g)| if *xi > 0.0 { *g } else { 0.0 })
            .collect(),
        Layer::Conv { geom, offset } => conv_backward(&geom, offset, params, x, gy, grad),
    })
}

fn conv_forward(g: &ConvGeom, p: &[f64], x: &[f64]) -> Vec<f64> {
    let (w, b) = p.split_at(g.weight_len());
    let mut y = vec![0.0; g.out_c * g.out_h * g.out_w];
    for oc in 0..g.out_c {
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let mut acc = b[oc];
                for ic in 0..g.in_c {
                    for ky in 0..g.k {
                        let xrow = (ic * g.in_h + oy * g.stride + ky) * g.in_w + ox * g.stride;
                        let wrow = ((oc * g.in_c + ic) * g.k + ky) * g.k;
                        for kx in 0..g.k {
                            acc += w[wrow + kx] * x[xrow + kx];
                        }
                    }
                }
                y[(oc * g.out_h + oy) * g.out_w + ox] = acc;
            }
        }
    }
    y
}

fn conv_backward(
    g: &ConvGeom,
    offset: usize,
    params: &[f64],
    x: &[f64],
    gy: &[f64],
    grad: &mut [f64],
) -> Vec<f64> {
    let wlen = g.weight_len();
    let w = &params[offset..offset + wlen];
    let (gw, gb) = grad[offset..offset + wlen + g.out_c].split_at_mut(wlen);
    let mut gx = vec![0.0; x.len()];
    for oc in 0..g.out_c {
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let go = gy[(oc * g.out_h + oy) * g.out_w + ox];
                if go == 0.0 {
                    continue;
                }
                gb[oc] += go;
                for ic in 0..g.in_c {
                    for ky in 0..g.k {
                        let xrow = (ic * g.in_h + oy * g.stride + ky) * g.in_w + ox * g.stride;
                        let wrow = ((oc * g.in_c + ic) * g.k + ky) * g.k;
                        for kx in 0..g.k {
                            gw[wrow + kx] += go * x[xrow + kx];
                            gx[xrow + kx] += go * w[wrow + kx];
                        }
                    }
                }
            }
        }
    }
    gx
}

/// Exact `(classical, quantum)` parameter counts for a spec.
pub fn count_parameters(spec: &ModelSpec) -> Result<ParamCounts> {
    Ok(Network::new(spec)?.layout().counts())
}

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Serialized `(ModelSpec, flat parameters)` pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub format_version: u32,
    pub spec: ModelSpec,
    pub params: Vec<f64>,
}

impl ModelCheckpoint {
    pub fn new(spec: ModelSpec, params: Vec<f64>) -> Self {
        Self {
            format_version: CHECKPOINT_FORMAT_VERSION,
            spec,
            params,
        }
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer(w, self)?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let ckpt: Self = serde_json::from_reader(r)?;
        if ckpt.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(PolicyError::CheckpointVersion(ckpt.format_version));
        }
        let net = Network::new(&ckpt.spec)?;
        net.check_params(&ckpt.params)?;
        Ok(ckpt)
    }
}
