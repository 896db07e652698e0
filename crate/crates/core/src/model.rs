//! MLP encoder `f` producing non-normalised embeddings, plus a linear
//! classifier head `F` on top of the embedding.
//!
//! Parameters live in a flat ordered list:
//! `encoder.{i}.weight`, `encoder.{i}.bias` for each encoder layer, then
//! `classifier.weight`, `classifier.bias`. Hidden layers use ReLU; the
//! embedding layer is linear.

use std::fs;
use std::path::Path;

use rand::Rng;

use crate::error::{FedQuadError, Result};
use crate::numerics::{linear_forward, relu_forward, Graph, NodeId, Parameter, Tensor};
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub embedding_dim: usize,
    pub num_classes: usize,
}

impl EncoderSpec {
    pub fn new(
        input_dim: usize,
        hidden_dims: Vec<usize>,
        embedding_dim: usize,
        num_classes: usize,
    ) -> Self {
        EncoderSpec {
            input_dim,
            hidden_dims,
            embedding_dim,
            num_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.embedding_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(FedQuadError::Config(format!(
                "layer widths must be positive: {self:?}"
            )));
        }
        if self.num_classes < 2 {
            return Err(FedQuadError::Config(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        Ok(())
    }

    /// Ordered names and shapes of every parameter tensor.
    pub fn manifest(&self) -> Vec<(String, Vec<usize>)> {
        let mut widths = vec![self.input_dim];
        widths.extend(&self.hidden_dims);
        widths.push(self.embedding_dim);
        let mut out = Vec::new();
        for (i, w) in widths.windows(2).enumerate() {
            out.push((format!("encoder.{i}.weight"), vec![w[0], w[1]]));
            out.push((format!("encoder.{i}.bias"), vec![w[1]]));
        }
        out.push((
            "classifier.weight".into(),
            vec![self.embedding_dim, self.num_classes],
        ));
        out.push(("classifier.bias".into(), vec![self.num_classes]));
        out
    }

    pub fn param_count(&self) -> usize {
        self.manifest()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }

    /// Recovers the architecture from a parameter list (e.g. a checkpoint).
    pub fn infer(params: &ModelParameters) -> Result<Self> {
        let n = params.len();
        if n < 4 || !n.is_multiple_of(2) {
            return Err(FedQuadError::Validation(format!(
                "parameter list of length {n} is not an encoder + classifier"
            )));
        }
        let layers = (n - 2) / 2;
        let weight = |i: usize| params.tensor(2 * i).shape().to_vec();
        let mut hidden = Vec::new();
        for i in 0..layers - 1 {
            hidden.push(*weight(i).last().unwrap_or(&0));
        }
        let first = weight(0);
        let cls = params.tensor(n - 2).shape().to_vec();
        if first.len() != 2 || cls.len() != 2 {
            return Err(FedQuadError::Validation("weights must be matrices".into()));
        }
        let spec = EncoderSpec::new(first[0], hidden, cls[0], cls[1]);
        if spec.manifest() != params.manifest() {
            return Err(FedQuadError::Validation(
                "parameter names or shapes do not describe an MLP encoder".into(),
            ));
        }
        Ok(spec)
    }
}

/// Ordered named parameter tensors; the unit that is broadcast and averaged.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    entries: Vec<(String, Tensor)>,
}

impl ModelParameters {
    pub fn from_entries(entries: Vec<(String, Tensor)>) -> Self {
        ModelParameters { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }

    pub fn tensor(&self, i: usize) -> &Tensor {
        &self.entries[i].1
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.entries.iter().map(|(_, t)| t)
    }

    pub fn manifest(&self) -> Vec<(String, Vec<usize>)> {
        self.entries
            .iter()
            .map(|(n, t)| (n.clone(), t.shape().to_vec()))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.entries
            .iter()
            .flat_map(|(_, t)| t.data().iter().copied())
            .collect()
    }

    pub fn unflatten(manifest: &[(String, Vec<usize>)], flat: &[f64]) -> Result<Self> {
        let total: usize = manifest
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum();
        if total != flat.len() {
            return Err(FedQuadError::Dimension {
                op: "unflatten",
                left: vec![total],
                right: vec![flat.len()],
            });
        }
        let mut offset = 0;
        let mut entries = Vec::with_capacity(manifest.len());
        for (name, shape) in manifest {
            let n: usize = shape.iter().product();
            entries.push((
                name.clone(),
                Tensor::new(shape.clone(), flat[offset..offset + n].to_vec())?,
            ));
            offset += n;
        }
        Ok(ModelParameters { entries })
    }

    /// Trainable copies with zeroed gradients, in manifest order.
    pub fn to_parameters(&self) -> Vec<Parameter> {
        self.entries
            .iter()
            .map(|(_, t)| Parameter::new(t.clone()))
            .collect()
    }

    pub fn with_values(&self, params: &[Parameter]) -> Self {
        ModelParameters {
            entries: self
                .entries
                .iter()
                .zip(params)
                .map(|((n, _), p)| (n.clone(), p.value.clone()))
                .collect(),
        }
    }

    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let mut out = String::from(CHECKPOINT_MAGIC);
        out.push_str(&format!("tensors {}\n", self.entries.len()));
        for (name, t) in &self.entries {
            let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            out.push_str(&format!("{name} {}\n", dims.join(",")));
        }
        out.push_str("data\n");
        let mut bytes = out.into_bytes();
        for v in self.tensors().flat_map(|t| t.data().iter()) {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = 0usize;
        let mut line_no = 0usize;
        let mut next_line = |cursor: &mut usize| -> Result<String> {
            line_no += 1;
            let rest = &bytes[*cursor..];
            let end = rest
                .iter()
                .position(|&b| b == b'\n')
                .ok_or(FedQuadError::Parse {
                    line: line_no,
                    message: "truncated checkpoint header".into(),
                })?;
            *cursor += end + 1;
            String::from_utf8(rest[..end].to_vec()).map_err(|_| FedQuadError::Parse {
                line: line_no,
                message: "header is not UTF-8".into(),
            })
        };
        let bad = |line: usize, message: String| FedQuadError::Parse { line, message };

        let magic = next_line(&mut cursor)?;
        if format!("{magic}\n") != CHECKPOINT_MAGIC {
            return Err(bad(1, format!("unexpected magic line {magic:?}")));
        }
        let count_line = next_line(&mut cursor)?;
        let count: usize = count_line
            .strip_prefix("tensors ")
            .and_then(|c| c.parse().ok())
            .ok_or_else(|| bad(2, format!("expected `tensors <n>`, got {count_line:?}")))?;
        let mut manifest = Vec::with_capacity(count);
        for i in 0..count {
            let line = next_line(&mut cursor)?;
            let (name, dims) = line
                .rsplit_once(' ')
                .ok_or_else(|| bad(i + 3, format!("expected `<name> <shape>`, got {line:?}")))?;
            let shape = dims
                .split(',')
                .map(|d| d.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| bad(i + 3, format!("bad shape {dims:?}: {e}")))?;
            manifest.push((name.to_string(), shape));
        }
        if next_line(&mut cursor)? != "data" {
            return Err(bad(count + 3, "expected `data` marker".into()));
        }
        let payload = &bytes[cursor..];
        if !payload.len().is_multiple_of(8) {
            return Err(bad(
                count + 4,
                "payload is not a whole number of f64 values".into(),
            ));
        }
        let flat: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        ModelParameters::unflatten(&manifest, &flat)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_checkpoint_bytes()).map_err(|e| FedQuadError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| FedQuadError::io(path, e))?;
        ModelParameters::from_checkpoint_bytes(&bytes)
    }
}

pub const CHECKPOINT_MAGIC: &str = "FEDQUAD-CHECKPOINT 1\n";

/// Deterministic init: every weight and bias uniform in
/// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub fn build_model(spec: &EncoderSpec, seed: u64) -> Result<ModelParameters> {
    spec.validate()?;
    let mut rng = rng_from_seed(seed);
    let manifest = spec.manifest();
    let mut entries = Vec::with_capacity(manifest.len());
    for pair in manifest.chunks(2) {
        let fan_in = pair[0].1[0];
        let bound = (1.0 / fan_in as f64).sqrt();
        for (name, shape) in pair {
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
            entries.push((name.clone(), Tensor::new(shape.clone(), data)?));
        }
    }
    Ok(ModelParameters { entries })
}

fn encoder_layers(params: &ModelParameters) -> Result<usize> {
    if params.len() < 4 || !params.len().is_multiple_of(2) {
        return Err(FedQuadError::Validation(format!(
            "malformed parameter list of length {}",
            params.len()
        )));
    }
    Ok((params.len() - 2) / 2)
}

/// Embeddings `f(x)` for a `B x input_dim` batch.
pub fn embed(params: &ModelParameters, inputs: &Tensor) -> Result<Tensor> {
    let layers = encoder_layers(params)?;
    let mut h = inputs.clone();
    for l in 0..layers {
        h = linear_forward(&h, params.tensor(2 * l), params.tensor(2 * l + 1))?;
        if l + 1 < layers {
            h = relu_forward(&h);
        }
    }
    Ok(h)
}

/// Classifier logits `F(f(x))`; softmax is applied only inside the loss.
pub fn classify(params: &ModelParameters, inputs: &Tensor) -> Result<Tensor> {
    let z = embed(params, inputs)?;
    let n = params.len();
    linear_forward(&z, params.tensor(n - 2), params.tensor(n - 1))
}

/// Parameter nodes of one model inside a `Graph`.
#[derive(Debug, Clone)]
pub struct GraphModel {
    nodes: Vec<NodeId>,
}

impl GraphModel {
    pub fn attach(graph: &mut Graph, params: &[Parameter]) -> Self {
        GraphModel {
            nodes: params
                .iter()
                .map(|p| graph.variable(p.value.clone()))
                .collect(),
        }
    }

    /// Same as [`GraphModel::attach`] but from raw tensors.
    pub fn attach_tensors(graph: &mut Graph, params: &[Tensor]) -> Self {
        GraphModel {
            nodes: params.iter().map(|t| graph.variable(t.clone())).collect(),
        }
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn embed(&self, graph: &mut Graph, input: NodeId) -> Result<NodeId> {
        let layers = (self.nodes.len() - 2) / 2;
        let mut h = input;
        for l in 0..layers {
            h = graph.linear(h, self.nodes[2 * l], self.nodes[2 * l + 1])?;
            if l + 1 < layers {
                h = graph.relu(h);
            }
        }
        Ok(h)
    }

    pub fn classify_embedding(&self, graph: &mut Graph, embedding: NodeId) -> Result<NodeId> {
        let n = self.nodes.len();
        graph.linear(embedding, self.nodes[n - 2], self.nodes[n - 1])
    }
}
