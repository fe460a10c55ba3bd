//! The full Q-network: LSTM over the window, pre-net down to one angle per
//! qubit, quantum multihead self-attention, a linear projection back to the
//! qubit count, and the post-net circuit whose Z expectations are the
//! Q-values.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    prenet_apply, Dense, DenseVars, Gradients, LstmParams, LstmVars, PreNetParams, Tape, Tensor, Var,
};
use crate::error::{check_len, Error, Result};
use crate::market_data::{FeatureWindow, FEATURES};
use crate::qmsa::{head_on_tape, AttentionHeadParams, HeadVars};
use crate::quantum::{CircuitNode, CircuitSpec, EncodedCircuit, ParamVector, Readout};

/// Number of actions: sit, buy, sell.
pub const ACTIONS: usize = 3;

pub const MODEL_FORMAT: &str = "qadqn-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub window: usize,
    pub lstm_hidden: usize,
    /// Pre-net widths, from the LSTM hidden size down to the qubit count.
    pub prenet_dims: Vec<usize>,
    pub qubits: usize,
    pub heads: usize,
    pub attention_layers: usize,
    pub postnet_layers: usize,
    /// Adds a trainable per-action scale and bias after the post-net, lifting
    /// the [−1, 1] bound on Q-values.
    pub affine_output: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            window: 24,
            lstm_hidden: 64,
            prenet_dims: vec![64, 32, 8, 4],
            qubits: 4,
            heads: 2,
            attention_layers: 2,
            postnet_layers: 2,
            affine_output: false,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.window == 0 {
            return bad("window must be ≥ 1".into());
        }
        if self.qubits < ACTIONS {
            return bad(format!("need at least {ACTIONS} qubits to read {ACTIONS} Q-values"));
        }
        if self.qubits > 12 {
            return bad("more than 12 qubits is outside the simulator's intended range".into());
        }
        if self.prenet_dims.len() < 2 {
            return bad("prenet_dims needs at least an input and an output width".into());
        }
        if self.prenet_dims.first() != Some(&self.lstm_hidden) {
            return bad(format!(
                "prenet_dims must start at the LSTM hidden size {}",
                self.lstm_hidden
            ));
        }
        if self.prenet_dims.last() != Some(&self.qubits) {
            return bad(format!("prenet_dims must end at the qubit count {}", self.qubits));
        }
        if self.prenet_dims.contains(&0) {
            return bad("prenet widths must be positive".into());
        }
        if self.heads == 0 || self.attention_layers == 0 || self.postnet_layers == 0 {
            return bad("heads and circuit depths must be ≥ 1".into());
        }
        Ok(())
    }
}

/// Per-action affine map applied to the post-net expectations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputHead {
    pub scale: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub lstm: LstmParams,
    pub prenet: PreNetParams,
    pub heads: Vec<AttentionHeadParams>,
    pub projection: Dense,
    pub postnet: ParamVector,
    pub output: Option<OutputHead>,
    /// Number of optimizer updates applied since initialisation.
    pub version: u64,
}

/// Coarse parameter families, used when reporting gradient checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamGroup {
    Lstm,
    PreNet,
    Head(usize),
    Projection,
    PostNet,
    Output,
}

impl std::fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ParamGroup::Lstm => write!(f, "lstm"),
            ParamGroup::PreNet => write!(f, "prenet"),
            ParamGroup::Head(i) => write!(f, "head{i}"),
            ParamGroup::Projection => write!(f, "projection"),
            ParamGroup::PostNet => write!(f, "postnet"),
            ParamGroup::Output => write!(f, "output"),
        }
    }
}

impl NetworkParams {
    /// Every trainable array in a fixed order, with its name and group.
    pub fn arrays(&self) -> Vec<(String, ParamGroup, &[f64])> {
        let mut out: Vec<(String, ParamGroup, &[f64])> = vec![
            ("lstm.weight".into(), ParamGroup::Lstm, self.lstm.weight.data()),
            ("lstm.bias".into(), ParamGroup::Lstm, self.lstm.bias.data()),
        ];
        for (i, l) in self.prenet.layers.iter().enumerate() {
            out.push((format!("prenet.{i}.weight"), ParamGroup::PreNet, l.weight.data()));
            out.push((format!("prenet.{i}.bias"), ParamGroup::PreNet, l.bias.data()));
        }
        for (i, h) in self.heads.iter().enumerate() {
            out.push((format!("heads.{i}.key"), ParamGroup::Head(i), h.theta_k.as_slice()));
            out.push((format!("heads.{i}.query"), ParamGroup::Head(i), h.theta_q.as_slice()));
            out.push((format!("heads.{i}.value"), ParamGroup::Head(i), h.theta_v.as_slice()));
        }
        out.push(("projection.weight".into(), ParamGroup::Projection, self.projection.weight.data()));
        out.push(("projection.bias".into(), ParamGroup::Projection, self.projection.bias.data()));
        out.push(("postnet".into(), ParamGroup::PostNet, self.postnet.as_slice()));
        if let Some(o) = &self.output {
            out.push(("output.scale".into(), ParamGroup::Output, o.scale.data()));
            out.push(("output.bias".into(), ParamGroup::Output, o.bias.data()));
        }
        out
    }

    /// Mutable counterpart of [`arrays`](Self::arrays), same order.
    pub fn arrays_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![self.lstm.weight.data_mut(), self.lstm.bias.data_mut()];
        for l in &mut self.prenet.layers {
            out.push(l.weight.data_mut());
            out.push(l.bias.data_mut());
        }
        for h in &mut self.heads {
            out.push(&mut h.theta_k.0);
            out.push(&mut h.theta_q.0);
            out.push(&mut h.theta_v.0);
        }
        out.push(self.projection.weight.data_mut());
        out.push(self.projection.bias.data_mut());
        out.push(&mut self.postnet.0);
        if let Some(o) = &mut self.output {
            out.push(o.scale.data_mut());
            out.push(o.bias.data_mut());
        }
        out
    }

    pub fn len(&self) -> usize {
        self.arrays().iter().map(|(_, _, a)| a.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for a in z.arrays_mut() {
            a.fill(0.0);
        }
        z.version = 0;
        z
    }

    pub fn is_finite(&self) -> bool {
        self.arrays().iter().all(|(_, _, a)| a.iter().all(|v| v.is_finite()))
    }

    /// `self += other`, elementwise over every array.
    pub fn add_assign(&mut self, other: &NetworkParams) {
        for (dst, (_, _, src)) in self.arrays_mut().into_iter().zip(other.arrays()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        for a in self.arrays_mut() {
            for v in a.iter_mut() {
                *v *= k;
            }
        }
    }
}

/// Deep copy, used for the target network.
pub fn clone_params(params: &NetworkParams) -> NetworkParams {
    params.clone()
}

/// Q-values for sit, buy and sell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QValues(pub [f64; ACTIONS]);

impl QValues {
    /// Index of the largest value; the first one wins ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.0.iter().enumerate().skip(1) {
            if v > self.0[best] {
                best = i;
            }
        }
        best
    }

    pub fn max(&self) -> f64 {
        self.0[self.argmax()]
    }
}

/// Recorded forward pass, consumed by [`Network::backward`].
pub struct ForwardCache {
    tape: Tape,
    leaves: Vec<Var>,
    output: Var,
}

/// Network topology plus the compiled circuits. Parameters live separately
/// in [`NetworkParams`] so policy and target copies share one `Network`.
#[derive(Debug, Clone)]
pub struct Network {
    config: NetworkConfig,
    attention: Arc<EncodedCircuit>,
    postnet: Arc<EncodedCircuit>,
}

impl Network {
    pub fn new(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let attention = Arc::new(EncodedCircuit::new(CircuitSpec::layered(
            config.qubits,
            config.attention_layers,
        ))?);
        let postnet = Arc::new(EncodedCircuit::new(CircuitSpec::layered(
            config.qubits,
            config.postnet_layers,
        ))?);
        Ok(Self {
            config,
            attention,
            postnet,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn attention_circuit(&self) -> &EncodedCircuit {
        &self.attention
    }

    pub fn postnet_circuit(&self) -> &EncodedCircuit {
        &self.postnet
    }

    /// Every parameter zero. Forward then yields Q = (1, 1, 1).
    pub fn zero_params(&self) -> NetworkParams {
        let c = &self.config;
        NetworkParams {
            lstm: LstmParams::zeros(FEATURES, c.lstm_hidden),
            prenet: PreNetParams::zeros(&c.prenet_dims),
            heads: (0..c.heads)
                .map(|_| AttentionHeadParams::zeros(self.attention.params()))
                .collect(),
            projection: Dense::zeros(c.heads * c.qubits, c.qubits),
            postnet: ParamVector::zeros(self.postnet.params()),
            output: c.affine_output.then(|| OutputHead {
                scale: Tensor::zeros(vec![ACTIONS]),
                bias: Tensor::zeros(vec![ACTIONS]),
            }),
            version: 0,
        }
    }

    /// Classical weights uniform in ±1/√fan_in, circuit angles uniform in
    /// [−π, π], output head (if any) at scale 1 and bias 0. Draws come from
    /// `ChaCha8Rng::seed_from_u64(seed)`.
    pub fn init_params(&self, seed: u64) -> NetworkParams {
        let c = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lstm = LstmParams::init(FEATURES, c.lstm_hidden, &mut rng);
        let prenet = PreNetParams::init(&c.prenet_dims, &mut rng);
        let heads = (0..c.heads)
            .map(|_| AttentionHeadParams::init(self.attention.params(), &mut rng))
            .collect();
        let projection = Dense::init(c.heads * c.qubits, c.qubits, &mut rng);
        let postnet = AttentionHeadParams::init(self.postnet.params(), &mut rng).theta_k;
        NetworkParams {
            lstm,
            prenet,
            heads,
            projection,
            postnet,
            output: c.affine_output.then(|| OutputHead {
                scale: Tensor::vector(vec![1.0; ACTIONS]),
                bias: Tensor::zeros(vec![ACTIONS]),
            }),
            version: 0,
        }
    }

    pub fn validate_params(&self, params: &NetworkParams) -> Result<()> {
        let c = &self.config;
        params.lstm.validate()?;
        check_len("lstm input", FEATURES, params.lstm.input)?;
        check_len("lstm hidden", c.lstm_hidden, params.lstm.hidden)?;
        params.prenet.validate(c.lstm_hidden, c.qubits)?;
        check_len("prenet depth", c.prenet_dims.len() - 1, params.prenet.layers.len())?;
        check_len("attention heads", c.heads, params.heads.len())?;
        for h in &params.heads {
            check_len("head angles", self.attention.params(), h.theta_k.len())?;
            check_len("head angles", self.attention.params(), h.theta_q.len())?;
            check_len("head angles", self.attention.params(), h.theta_v.len())?;
        }
        check_len("projection input", c.heads * c.qubits, params.projection.input_dim())?;
        check_len("projection output", c.qubits, params.projection.output_dim())?;
        check_len("projection bias", c.qubits, params.projection.bias.len())?;
        check_len("postnet angles", self.postnet.params(), params.postnet.len())?;
        if params.output.is_some() != c.affine_output {
            return Err(Error::Config("output head presence disagrees with affine_output".into()));
        }
        if !params.is_finite() {
            return Err(Error::NonFinite("network parameters".into()));
        }
        Ok(())
    }

    fn record(&self, params: &NetworkParams, window: &FeatureWindow) -> Result<ForwardCache> {
        let c = &self.config;
        check_len("window rows", c.window, window.rows())?;
        check_len("window features", FEATURES, window.features())?;

        let mut tape = Tape::new();
        let lstm = params.lstm.leaves(&mut tape);
        let prenet = params.prenet.leaves(&mut tape);
        let heads: Vec<HeadVars> = params.heads.iter().map(|h| HeadVars::leaves(&mut tape, h)).collect();
        let proj = params.projection.leaves(&mut tape);
        let post = tape.leaf(Tensor::vector(params.postnet.0.clone()));
        let output = params.output.as_ref().map(|o| DenseVars {
            weight: tape.leaf(o.scale.clone()),
            bias: tape.leaf(o.bias.clone()),
        });

        let mut leaves = vec![lstm.weight, lstm.bias];
        for l in &prenet {
            leaves.extend([l.weight, l.bias]);
        }
        for h in &heads {
            leaves.extend([h.theta_k, h.theta_q, h.theta_v]);
        }
        leaves.extend([proj.weight, proj.bias, post]);
        if let Some(o) = &output {
            leaves.extend([o.weight, o.bias]);
        }

        let sequence = self.encode_sequence(&mut tape, lstm, &prenet, window)?;
        let last = sequence.len() - 1;
        let attended: Vec<Var> = heads
            .iter()
            .map(|&h| Ok(head_on_tape(&mut tape, &self.attention, &sequence, h, &[last])?[0]))
            .collect::<Result<_>>()?;
        let joined = tape.concat(&attended);
        let angles = proj.apply(&mut tape, joined)?;
        let mut q = CircuitNode::record(&mut tape, &self.postnet, Readout::First(ACTIONS), angles, post)?;
        if let Some(o) = output {
            let scaled = tape.mul(q, o.weight)?;
            q = tape.add(scaled, o.bias)?;
        }
        Ok(ForwardCache {
            tape,
            leaves,
            output: q,
        })
    }

    /// LSTM over the rows from oldest to newest, each hidden state mapped
    /// through the pre-net. Position 0 of the result is the oldest step.
    fn encode_sequence(
        &self,
        tape: &mut Tape,
        lstm: LstmVars,
        prenet: &[DenseVars],
        window: &FeatureWindow,
    ) -> Result<Vec<Var>> {
        let hs = self.config.lstm_hidden;
        // Oldest row first.
        let rows: Vec<f64> = (0..window.rows()).rev().flat_map(|i| window.row(i).iter().copied()).collect();
        let xs = tape.leaf(Tensor::matrix(window.rows(), window.features(), rows)?);
        let hidden = lstm.sequence(tape, xs)?;
        (0..window.rows())
            .map(|t| {
                let h = tape.slice(hidden, t * hs, hs)?;
                prenet_apply(prenet, tape, h)
            })
            .collect()
    }

    pub fn forward(&self, params: &NetworkParams, window: &FeatureWindow) -> Result<QValues> {
        let cache = self.record(params, window)?;
        Ok(Self::q_of(&cache))
    }

    pub fn forward_with_cache(
        &self,
        params: &NetworkParams,
        window: &FeatureWindow,
    ) -> Result<(QValues, ForwardCache)> {
        let cache = self.record(params, window)?;
        Ok((Self::q_of(&cache), cache))
    }

    fn q_of(cache: &ForwardCache) -> QValues {
        let v = cache.tape.value(cache.output).data();
        QValues([v[0], v[1], v[2]])
    }

    /// Gradient of a scalar loss with respect to every parameter, given
    /// `dloss_dq`. The result has the shape of `params`.
    pub fn backward(
        &self,
        params: &NetworkParams,
        cache: &mut ForwardCache,
        dloss_dq: [f64; ACTIONS],
    ) -> Result<NetworkParams> {
        let grads: Gradients = cache.tape.backward(cache.output, &Tensor::vector(dloss_dq.to_vec()))?;
        let mut out = params.zeros_like();
        let arrays = out.arrays_mut();
        check_len("gradient arrays", arrays.len(), cache.leaves.len())?;
        for (dst, &leaf) in arrays.into_iter().zip(&cache.leaves) {
            if let Some(g) = grads.wrt_slice(leaf) {
                dst.copy_from_slice(g);
            }
        }
        Ok(out)
    }

    /// Plain forward for each window, evaluated in parallel.
    pub fn forward_batch(&self, params: &NetworkParams, windows: &[&FeatureWindow]) -> Result<Vec<QValues>> {
        use rayon::prelude::*;
        windows.par_iter().map(|w| self.forward(params, w)).collect()
    }
}

/// On-disk model: configuration echo, parameters by name, seed provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    /// Effective run configuration that produced the model.
    pub config: serde_json::Value,
    pub network: NetworkConfig,
    pub seed: u64,
    pub updates: u64,
    /// Flat row-major arrays keyed by parameter name.
    pub params: BTreeMap<String, Vec<f64>>,
}

impl ModelFile {
    pub fn new(network: &Network, params: &NetworkParams, config: serde_json::Value, seed: u64) -> Self {
        Self {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            config,
            network: network.config().clone(),
            seed,
            updates: params.version,
            params: params
                .arrays()
                .into_iter()
                .map(|(name, _, a)| (name, a.to_vec()))
                .collect(),
        }
    }

    /// Rebuilds the network and its parameters.
    pub fn restore(&self) -> Result<(Network, NetworkParams)> {
        if self.format != MODEL_FORMAT || self.version != MODEL_VERSION {
            return Err(Error::Config(format!(
                "unsupported model format {} v{}",
                self.format, self.version
            )));
        }
        let network = Network::new(self.network.clone())?;
        let mut params = network.zero_params();
        let names: Vec<String> = params.arrays().into_iter().map(|(n, _, _)| n).collect();
        if names.len() != self.params.len() {
            return Err(Error::Config(format!(
                "model holds {} parameter arrays, network expects {}",
                self.params.len(),
                names.len()
            )));
        }
        for (name, dst) in names.iter().zip(params.arrays_mut()) {
            let src = self
                .params
                .get(name)
                .ok_or_else(|| Error::Config(format!("model is missing parameter array `{name}`")))?;
            if src.len() != dst.len() {
                return Err(Error::Config(format!(
                    "parameter array `{name}` has {} values, expected {}",
                    src.len(),
                    dst.len()
                )));
            }
            dst.copy_from_slice(src);
        }
        params.version = self.updates;
        network.validate_params(&params)?;
        Ok((network, params))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()? + "\n").map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(serde_json::from_str(&text)?)
    }
}
