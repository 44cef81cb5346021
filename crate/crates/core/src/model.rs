//! Layer graph, parameter grouping and the forward pass.
//!
//! A model is a linear list of nodes. Node `i` consumes the output of node
//! `i - 1` (or the input batch for node 0); a residual add additionally
//! consumes the output of an earlier node. Parameters live on their node.
//!
//! For noise injection the parameters are partitioned into [`LayerGroup`]s:
//! a conv or dense node contributes one group holding its kernel and bias,
//! and a batch-norm node contributes one group holding all four of its
//! vectors, moving statistics included.

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::kernels;
use crate::tensor::{Tensor, TensorError};

pub const BN_PARAM_NAMES: [&str; 4] = ["gamma", "beta", "moving_mean", "moving_var"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerKind {
    Conv { stride: usize, padding: usize },
    Dense,
    BatchNorm { epsilon: f32 },
    Relu,
    MaxPool { kernel: usize, stride: usize },
    GlobalAvgPool,
    /// Adds the output of an earlier node to the running activation.
    ResidualAdd { source: usize },
    Softmax,
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Conv { .. } => "conv",
            LayerKind::Dense => "dense",
            LayerKind::BatchNorm { .. } => "batch_norm",
            LayerKind::Relu => "relu",
            LayerKind::MaxPool { .. } => "max_pool",
            LayerKind::GlobalAvgPool => "global_avg_pool",
            LayerKind::ResidualAdd { .. } => "residual_add",
            LayerKind::Softmax => "softmax",
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(
            self,
            LayerKind::Conv { .. } | LayerKind::Dense | LayerKind::BatchNorm { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
}

impl Param {
    pub fn new(name: impl Into<String>, tensor: Tensor) -> Self {
        Self {
            name: name.into(),
            tensor,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub kind: LayerKind,
    pub params: Vec<Param>,
}

impl Node {
    pub fn new(kind: LayerKind, params: Vec<Param>) -> Self {
        Self { kind, params }
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.tensor)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("node {node} ({kind}): {reason}")]
    InvalidNode {
        node: usize,
        kind: &'static str,
        reason: String,
    },
    #[error("node {node} ({kind}): missing parameter `{name}`")]
    MissingParam {
        node: usize,
        kind: &'static str,
        name: String,
    },
    #[error("node {node}: residual source {from} does not refer to an earlier node")]
    DanglingResidual { node: usize, from: usize },
    #[error("node {node} ({kind}): batch expects per-sample shape {expected:?}, got {actual:?}")]
    InputShape {
        node: usize,
        kind: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("node {node} ({kind}): {source}")]
    Kernel {
        node: usize,
        kind: &'static str,
        #[source]
        source: TensorError,
    },
    #[error("model output has shape {actual:?}, expected [{class_count}]")]
    OutputShape {
        class_count: usize,
        actual: Vec<usize>,
    },
    #[error("model must have at least one node and a positive class count")]
    Empty,
    #[error("layer group {index} does not exist (model has {count})")]
    UnknownGroup { index: usize, count: usize },
    #[error("layer group {index}: expected {expected} tensors, got {actual}")]
    GroupArity {
        index: usize,
        expected: usize,
        actual: usize,
    },
    #[error("layer group {index}: `{name}` has shape {expected:?}, got {actual:?}")]
    GroupShape {
        index: usize,
        name: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GroupKind {
    Weighted,
    BatchNormBundle,
}

/// One parameter tensor, addressed by node index and name.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ParamRef {
    pub node: usize,
    pub name: String,
}

/// The unit of noise injection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerGroup {
    /// 1-based position in graph order.
    pub index: usize,
    pub kind: GroupKind,
    pub node: usize,
    pub members: Vec<ParamRef>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    name: String,
    input_shape: Vec<usize>,
    class_count: usize,
    nodes: Vec<Node>,
}

impl ModelGraph {
    /// Build and validate a model. `input_shape` excludes the batch dimension.
    pub fn new(
        name: impl Into<String>,
        input_shape: Vec<usize>,
        class_count: usize,
        nodes: Vec<Node>,
    ) -> Result<Self, ModelError> {
        let model = Self {
            name: name.into(),
            input_shape,
            class_count,
            nodes,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn param_count(&self) -> usize {
        self.nodes
            .iter()
            .flat_map(|n| &n.params)
            .map(|p| p.tensor.len())
            .sum()
    }

    fn validate(&self) -> Result<(), ModelError> {
        if self.nodes.is_empty() || self.class_count == 0 {
            return Err(ModelError::Empty);
        }
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(ModelError::InvalidNode {
                node: 0,
                kind: self.nodes[0].kind.name(),
                reason: format!("invalid model input shape {:?}", self.input_shape),
            });
        }
        for (i, node) in self.nodes.iter().enumerate() {
            check_params(i, node)?;
        }
        let shapes = self.infer_shapes()?;
        let last = shapes.last().expect("non-empty");
        if last != &[self.class_count] {
            return Err(ModelError::OutputShape {
                class_count: self.class_count,
                actual: last.clone(),
            });
        }
        Ok(())
    }

    /// Per-sample output shape of every node.
    pub fn infer_shapes(&self) -> Result<Vec<Vec<usize>>, ModelError> {
        let mut shapes: Vec<Vec<usize>> = Vec::with_capacity(self.nodes.len());
        for (i, node) in self.nodes.iter().enumerate() {
            let input = shapes.last().unwrap_or(&self.input_shape);
            let kind = node.kind.name();
            let bad = |reason: String| ModelError::InvalidNode {
                node: i,
                kind,
                reason,
            };
            let out = match node.kind {
                LayerKind::Conv { stride, padding } => {
                    let w = node.param("weight").expect("checked").shape();
                    let &[c, h, wd] = input.as_slice() else {
                        return Err(bad(format!("conv needs a C×H×W input, got {input:?}")));
                    };
                    if w[1] != c {
                        return Err(bad(format!("kernel {w:?} does not accept {c} input channels")));
                    }
                    match (
                        kernels::window_output_len(h, w[2], stride, padding),
                        kernels::window_output_len(wd, w[3], stride, padding),
                    ) {
                        (Some(oh), Some(ow)) => vec![w[0], oh, ow],
                        _ => {
                            return Err(bad(format!(
                                "kernel {w:?} with stride {stride}, padding {padding} does not fit {input:?}"
                            )))
                        }
                    }
                }
                LayerKind::Dense => {
                    let w = node.param("weight").expect("checked").shape();
                    let features: usize = input.iter().product();
                    if w[0] != features {
                        return Err(bad(format!(
                            "weight {w:?} does not accept {features} input features"
                        )));
                    }
                    vec![w[1]]
                }
                LayerKind::BatchNorm { .. } => {
                    let c = node.param("gamma").expect("checked").shape()[0];
                    if input[0] != c {
                        return Err(bad(format!("{c} channels do not match input {input:?}")));
                    }
                    input.clone()
                }
                LayerKind::Relu => input.clone(),
                LayerKind::MaxPool { kernel, stride } => {
                    let &[c, h, w] = input.as_slice() else {
                        return Err(bad(format!("max_pool needs a C×H×W input, got {input:?}")));
                    };
                    match (
                        kernels::window_output_len(h, kernel, stride, 0),
                        kernels::window_output_len(w, kernel, stride, 0),
                    ) {
                        (Some(oh), Some(ow)) => vec![c, oh, ow],
                        _ => return Err(bad(format!("window {kernel}/{stride} does not fit {input:?}"))),
                    }
                }
                LayerKind::GlobalAvgPool => {
                    if input.len() != 3 {
                        return Err(bad(format!("global_avg_pool needs C×H×W, got {input:?}")));
                    }
                    vec![input[0]]
                }
                LayerKind::ResidualAdd { source } => {
                    if source >= i {
                        return Err(ModelError::DanglingResidual { node: i, from: source });
                    }
                    if shapes[source] != *input {
                        return Err(bad(format!(
                            "residual source {source} has shape {:?}, running activation {input:?}",
                            shapes[source]
                        )));
                    }
                    input.clone()
                }
                LayerKind::Softmax => {
                    if input.len() != 1 {
                        return Err(bad(format!("softmax needs a flat input, got {input:?}")));
                    }
                    input.clone()
                }
            };
            shapes.push(out);
        }
        Ok(shapes)
    }

    /// Run the batch (`N × input_shape`) through every node.
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor, ModelError> {
        self.forward_through(batch, self.nodes.len() - 1)
    }

    /// Output of node `last` (inclusive) for the batch.
    pub fn forward_through(&self, batch: &Tensor, last: usize) -> Result<Tensor, ModelError> {
        let last = last.min(self.nodes.len() - 1);
        if batch.rank() != self.input_shape.len() + 1 || batch.shape()[1..] != self.input_shape[..] {
            return Err(ModelError::InputShape {
                node: 0,
                kind: self.nodes[0].kind.name(),
                expected: self.input_shape.clone(),
                actual: batch.shape().get(1..).unwrap_or_default().to_vec(),
            });
        }
        let mut keep = vec![false; self.nodes.len()];
        for node in &self.nodes[..=last] {
            if let LayerKind::ResidualAdd { source } = node.kind {
                keep[source] = true;
            }
        }
        let mut saved: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        let mut x = batch.clone();
        for (i, node) in self.nodes[..=last].iter().enumerate() {
            let wrap = |source| ModelError::Kernel {
                node: i,
                kind: node.kind.name(),
                source,
            };
            let p = |name: &str| node.param(name).expect("validated");
            x = match node.kind {
                LayerKind::Conv { stride, padding } => {
                    kernels::conv2d(&x, p("weight"), node.param("bias"), stride, padding).map_err(wrap)?
                }
                LayerKind::Dense => kernels::dense(&x, p("weight"), node.param("bias")).map_err(wrap)?,
                LayerKind::BatchNorm { epsilon } => kernels::batch_norm_inference_unchecked(
                    &x,
                    p("gamma"),
                    p("beta"),
                    p("moving_mean"),
                    p("moving_var"),
                    epsilon,
                )
                .map_err(wrap)?,
                LayerKind::Relu => kernels::relu(&x),
                LayerKind::MaxPool { kernel, stride } => kernels::max_pool2d(&x, kernel, stride).map_err(wrap)?,
                LayerKind::GlobalAvgPool => kernels::global_avg_pool(&x).map_err(wrap)?,
                LayerKind::ResidualAdd { source } => {
                    let other = saved[source].as_ref().expect("kept for residual");
                    kernels::add(&x, other).map_err(wrap)?
                }
                LayerKind::Softmax => kernels::softmax(&x).map_err(wrap)?,
            };
            if keep[i] {
                saved[i] = Some(x.clone());
            }
        }
        Ok(x)
    }

    /// Partition of all parameters into injection groups, in graph order.
    pub fn layer_groups(&self) -> Vec<LayerGroup> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| !n.params.is_empty())
            .enumerate()
            .map(|(g, (i, node))| LayerGroup {
                index: g + 1,
                kind: match node.kind {
                    LayerKind::BatchNorm { .. } => GroupKind::BatchNormBundle,
                    _ => GroupKind::Weighted,
                },
                node: i,
                members: node
                    .params
                    .iter()
                    .map(|p| ParamRef {
                        node: i,
                        name: p.name.clone(),
                    })
                    .collect(),
            })
            .collect()
    }

    pub fn group_count(&self) -> usize {
        self.nodes.iter().filter(|n| !n.params.is_empty()).count()
    }

    /// The group with the given 1-based index.
    pub fn group(&self, index: usize) -> Result<LayerGroup, ModelError> {
        let count = self.group_count();
        if index == 0 || index > count {
            return Err(ModelError::UnknownGroup { index, count });
        }
        Ok(self.layer_groups().swap_remove(index - 1))
    }

    fn group_node(&self, group: &LayerGroup) -> Result<&Node, ModelError> {
        let count = self.group_count();
        let node = self
            .nodes
            .get(group.node)
            .filter(|n| n.params.len() == group.members.len() && !n.params.is_empty())
            .ok_or(ModelError::UnknownGroup {
                index: group.index,
                count,
            })?;
        Ok(node)
    }

    pub fn get_params(&self, group: &LayerGroup) -> Result<Vec<Tensor>, ModelError> {
        Ok(self.group_node(group)?.params.iter().map(|p| p.tensor.clone()).collect())
    }

    /// Replace every tensor of `group`. Nothing changes unless all shapes match.
    pub fn set_params(&mut self, group: &LayerGroup, values: Vec<Tensor>) -> Result<(), ModelError> {
        let node = self.group_node(group)?;
        if values.len() != node.params.len() {
            return Err(ModelError::GroupArity {
                index: group.index,
                expected: node.params.len(),
                actual: values.len(),
            });
        }
        for (p, v) in node.params.iter().zip(&values) {
            if p.tensor.shape() != v.shape() {
                return Err(ModelError::GroupShape {
                    index: group.index,
                    name: p.name.clone(),
                    expected: p.tensor.shape().to_vec(),
                    actual: v.shape().to_vec(),
                });
            }
        }
        let node = &mut self.nodes[group.node];
        for (p, v) in node.params.iter_mut().zip(values) {
            p.tensor = v;
        }
        Ok(())
    }

    /// Mutable view of a group's tensors, for in-place perturbation.
    pub(crate) fn group_tensors_mut(&mut self, group: &LayerGroup) -> Result<Vec<&mut Tensor>, ModelError> {
        self.group_node(group)?;
        Ok(self.nodes[group.node].params.iter_mut().map(|p| &mut p.tensor).collect())
    }

    /// SHA-256 over the raw bytes of one group's tensors.
    pub fn group_digest(&self, group: &LayerGroup) -> Result<[u8; 32], ModelError> {
        let node = self.group_node(group)?;
        let mut h = Sha256::new();
        for p in &node.params {
            h.update(p.tensor.to_le_bytes());
        }
        Ok(h.finalize().into())
    }

    /// SHA-256 over every parameter tensor in graph order.
    pub fn param_digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for p in self.nodes.iter().flat_map(|n| &n.params) {
            h.update(p.name.as_bytes());
            h.update(p.tensor.to_le_bytes());
        }
        h.finalize().into()
    }
}

fn check_params(i: usize, node: &Node) -> Result<(), ModelError> {
    let kind = node.kind.name();
    let bad = |reason: String| ModelError::InvalidNode {
        node: i,
        kind,
        reason,
    };
    let missing = |name: &str| ModelError::MissingParam {
        node: i,
        kind,
        name: name.to_string(),
    };
    for (a, p) in node.params.iter().enumerate() {
        if node.params[..a].iter().any(|q| q.name == p.name) {
            return Err(bad(format!("duplicate parameter `{}`", p.name)));
        }
    }
    let allowed: &[&str] = match node.kind {
        LayerKind::Conv { .. } | LayerKind::Dense => &["weight", "bias"],
        LayerKind::BatchNorm { .. } => &BN_PARAM_NAMES,
        _ => &[],
    };
    if let Some(p) = node.params.iter().find(|p| !allowed.contains(&p.name.as_str())) {
        return Err(bad(format!("unexpected parameter `{}`", p.name)));
    }
    match node.kind {
        LayerKind::Conv { stride, .. } => {
            let w = node.param("weight").ok_or_else(|| missing("weight"))?;
            if w.rank() != 4 {
                return Err(bad(format!("weight must be O×I×KH×KW, got {:?}", w.shape())));
            }
            if stride == 0 {
                return Err(bad("stride must be positive".into()));
            }
            if let Some(b) = node.param("bias") {
                if b.shape() != [w.shape()[0]] {
                    return Err(bad(format!("bias {:?} does not match weight {:?}", b.shape(), w.shape())));
                }
            }
        }
        LayerKind::Dense => {
            let w = node.param("weight").ok_or_else(|| missing("weight"))?;
            if w.rank() != 2 {
                return Err(bad(format!("weight must be F×G, got {:?}", w.shape())));
            }
            if let Some(b) = node.param("bias") {
                if b.shape() != [w.shape()[1]] {
                    return Err(bad(format!("bias {:?} does not match weight {:?}", b.shape(), w.shape())));
                }
            }
        }
        LayerKind::BatchNorm { epsilon } => {
            let mut channels = None;
            for name in BN_PARAM_NAMES {
                let t = node.param(name).ok_or_else(|| missing(name))?;
                if t.rank() != 1 || channels.is_some_and(|c| c != t.len()) {
                    return Err(bad(format!("`{name}` has inconsistent shape {:?}", t.shape())));
                }
                channels = Some(t.len());
            }
            if !(epsilon >= 0.0 && epsilon.is_finite()) {
                return Err(bad(format!("epsilon {epsilon} must be finite and non-negative")));
            }
            let var = node.param("moving_var").expect("checked");
            if let Some((c, v)) = var.data().iter().enumerate().find(|(_, v)| **v < 0.0 || v.is_nan()) {
                return Err(bad(format!("moving_var[{c}] = {v} is negative")));
            }
        }
        LayerKind::MaxPool { kernel, stride } => {
            if kernel == 0 || stride == 0 {
                return Err(bad("kernel and stride must be positive".into()));
            }
        }
        _ => {}
    }
    Ok(())
}
