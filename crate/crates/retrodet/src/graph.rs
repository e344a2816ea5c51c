//! Reverse-mode differentiation over a static operator graph.
//!
//! Nodes are appended in topological order (inputs must already exist), so
//! the graph is acyclic by construction. A forward pass produces an
//! [`Activations`] cache which the backward pass consumes; gradients are
//! accumulated in fixed node order, making single-threaded runs
//! bit-reproducible.

use crate::elem::Elem;
use crate::ops::{
    conv3d_backward, conv3d_forward, deconv2x2_backward, deconv2x2_forward, maxpool2,
    maxpool2_backward, relu, relu_backward, retro_conv_backward, retro_conv_forward, sigmoid,
    sigmoid_backward, temporal_avg_pool, temporal_avg_pool_backward, OpError,
};
use crate::tensor::{concat_channels, slice_channels, Tensor5, TensorError};

pub type NodeId = usize;
pub type ParamId = usize;

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("node {id} ({name}): {source}")]
    Node {
        id: NodeId,
        name: String,
        source: OpError,
    },
    #[error("graph construction: {0}")]
    Build(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Operator kinds the graph supports. Parameters are referenced by id into
/// the graph's parameter store; biases are rank-5 tensors of dims (D,1,1,1,1).
#[derive(Debug, Clone)]
pub enum OpKind {
    Input,
    Conv3d {
        w: ParamId,
        b: ParamId,
        stride: (usize, usize),
        pad: (usize, usize),
        pad_l: usize,
    },
    RetroConv {
        w: ParamId,
        b: ParamId,
        dilation: usize,
    },
    Deconv2x2 {
        w: ParamId,
        b: ParamId,
    },
    TemporalAvgPool,
    MaxPool2,
    Relu,
    Sigmoid,
    /// Two inputs, first occupies the low channel block.
    ConcatChannels,
}

#[derive(Debug, Clone)]
pub struct Node {
    pub name: String,
    pub op: OpKind,
    pub inputs: Vec<NodeId>,
}

#[derive(Debug, Clone)]
pub struct Param<T: Elem> {
    pub name: String,
    pub value: Tensor5<T>,
}

/// Static operator graph with a parameter store.
#[derive(Debug, Clone)]
pub struct OpGraph<T: Elem> {
    nodes: Vec<Node>,
    params: Vec<Param<T>>,
    /// When false, input gradients feeding the graph input are skipped
    /// during backward (training does not use them).
    pub compute_input_grad: bool,
}

/// Per-node output cache produced by [`OpGraph::forward`].
#[derive(Debug)]
pub struct Activations<T: Elem> {
    outs: Vec<Tensor5<T>>,
}

impl<T: Elem> Activations<T> {
    pub fn output(&self) -> &Tensor5<T> {
        self.outs.last().expect("graph has at least the input node")
    }

    pub fn node_output(&self, id: NodeId) -> &Tensor5<T> {
        &self.outs[id]
    }
}

/// Per-parameter gradients plus the gradient with respect to the input.
pub struct GradStore<T: Elem> {
    pub params: Vec<Tensor5<T>>,
    pub input: Option<Tensor5<T>>,
}

impl<T: Elem> Default for OpGraph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Elem> OpGraph<T> {
    pub fn new() -> Self {
        OpGraph { nodes: Vec::new(), params: Vec::new(), compute_input_grad: true }
    }

    /// Declare the graph input. Must be the first node.
    pub fn input(&mut self) -> NodeId {
        assert!(self.nodes.is_empty(), "input must be the first node");
        self.nodes.push(Node { name: "input".into(), op: OpKind::Input, inputs: vec![] });
        0
    }

    pub fn add_param(&mut self, name: impl Into<String>, value: Tensor5<T>) -> ParamId {
        self.params.push(Param { name: name.into(), value });
        self.params.len() - 1
    }

    pub fn add_node(
        &mut self,
        name: impl Into<String>,
        op: OpKind,
        inputs: Vec<NodeId>,
    ) -> Result<NodeId, GraphError> {
        let id = self.nodes.len();
        if inputs.iter().any(|&i| i >= id) {
            return Err(GraphError::Build(format!("node {id} references a later node")));
        }
        let check_param = |p: ParamId| -> Result<(), GraphError> {
            if p >= self.params.len() {
                Err(GraphError::Build(format!("node {id} references missing parameter {p}")))
            } else {
                Ok(())
            }
        };
        match &op {
            OpKind::Conv3d { w, b, .. } | OpKind::RetroConv { w, b, .. } | OpKind::Deconv2x2 { w, b } => {
                check_param(*w)?;
                check_param(*b)?;
            }
            _ => {}
        }
        self.nodes.push(Node { name: name.into(), op, inputs });
        Ok(id)
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn param_value(&self, id: ParamId) -> &Tensor5<T> {
        &self.params[id].value
    }

    /// Convert parameters and structure to another element width.
    pub fn convert<U: Elem>(&self) -> OpGraph<U> {
        OpGraph {
            nodes: self.nodes.clone(),
            params: self
                .params
                .iter()
                .map(|p| Param { name: p.name.clone(), value: p.value.convert() })
                .collect(),
            compute_input_grad: self.compute_input_grad,
        }
    }

    fn node_err(&self, id: NodeId, source: OpError) -> GraphError {
        GraphError::Node { id, name: self.nodes[id].name.clone(), source }
    }

    /// Run the graph, caching every node output for a later backward pass.
    pub fn forward(&self, input: &Tensor5<T>) -> Result<Activations<T>, GraphError> {
        let mut outs: Vec<Tensor5<T>> = Vec::with_capacity(self.nodes.len());
        for (id, node) in self.nodes.iter().enumerate() {
            let out = match &node.op {
                OpKind::Input => input.clone(),
                OpKind::Conv3d { w, b, stride, pad, pad_l } => conv3d_forward(
                    &outs[node.inputs[0]],
                    &self.params[*w].value,
                    self.params[*b].value.data(),
                    *stride,
                    *pad,
                    *pad_l,
                )
                .map_err(|e| self.node_err(id, e))?,
                OpKind::RetroConv { w, b, dilation } => retro_conv_forward(
                    &outs[node.inputs[0]],
                    &self.params[*w].value,
                    self.params[*b].value.data(),
                    *dilation,
                )
                .map_err(|e| self.node_err(id, e))?,
                OpKind::Deconv2x2 { w, b } => deconv2x2_forward(
                    &outs[node.inputs[0]],
                    &self.params[*w].value,
                    self.params[*b].value.data(),
                )
                .map_err(|e| self.node_err(id, e))?,
                OpKind::TemporalAvgPool => {
                    temporal_avg_pool(&outs[node.inputs[0]]).map_err(|e| self.node_err(id, e))?
                }
                OpKind::MaxPool2 => {
                    maxpool2(&outs[node.inputs[0]]).map_err(|e| self.node_err(id, e))?
                }
                OpKind::Relu => relu(&outs[node.inputs[0]]),
                OpKind::Sigmoid => sigmoid(&outs[node.inputs[0]]),
                OpKind::ConcatChannels => {
                    concat_channels(&outs[node.inputs[0]], &outs[node.inputs[1]])
                        .map_err(|e| self.node_err(id, OpError::Tensor(e)))?
                }
            };
            outs.push(out);
        }
        Ok(Activations { outs })
    }

    /// Exact reverse-mode gradients for every parameter (and the input when
    /// `compute_input_grad` is set). `loss_grad` must match the output dims.
    pub fn backward(
        &self,
        acts: &Activations<T>,
        loss_grad: &Tensor5<T>,
    ) -> Result<GradStore<T>, GraphError> {
        let last = self.nodes.len() - 1;
        if loss_grad.dims() != acts.outs[last].dims() {
            return Err(GraphError::Build("loss gradient dims do not match graph output".into()));
        }
        let mut node_grads: Vec<Option<Tensor5<T>>> = vec![None; self.nodes.len()];
        node_grads[last] = Some(loss_grad.clone());
        let mut param_grads: Vec<Tensor5<T>> = self
            .params
            .iter()
            .map(|p| Tensor5::zeros(p.value.dims()).expect("param dims valid"))
            .collect();
        let mut input_grad: Option<Tensor5<T>> = None;

        let accumulate = |slot: &mut Option<Tensor5<T>>, g: Tensor5<T>| -> Result<(), GraphError> {
            match slot {
                None => *slot = Some(g),
                Some(acc) => *acc = acc.add(&g)?,
            }
            Ok(())
        };

        for id in (0..=last).rev() {
            let Some(g) = node_grads[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                OpKind::Input => {
                    if self.compute_input_grad {
                        accumulate(&mut input_grad, g)?;
                    }
                }
                OpKind::Conv3d { w, b, stride, pad, pad_l } => {
                    let src = node.inputs[0];
                    let need_dx = self.compute_input_grad || !matches!(self.nodes[src].op, OpKind::Input);
                    let back = conv3d_backward(
                        &acts.outs[src],
                        &self.params[*w].value,
                        &g,
                        *stride,
                        *pad,
                        *pad_l,
                        need_dx,
                    )
                    .map_err(|e| self.node_err(id, e))?;
                    param_grads[*w] = param_grads[*w].add(&back.dw)?;
                    add_bias_grad(&mut param_grads[*b], &back.db);
                    if need_dx {
                        accumulate(&mut node_grads[src], back.dx)?;
                    }
                }
                OpKind::RetroConv { w, b, dilation } => {
                    let src = node.inputs[0];
                    let need_dx = self.compute_input_grad || !matches!(self.nodes[src].op, OpKind::Input);
                    let back = retro_conv_backward(
                        &acts.outs[src],
                        &self.params[*w].value,
                        &g,
                        *dilation,
                        need_dx,
                    )
                    .map_err(|e| self.node_err(id, e))?;
                    param_grads[*w] = param_grads[*w].add(&back.dw)?;
                    add_bias_grad(&mut param_grads[*b], &back.db);
                    if need_dx {
                        accumulate(&mut node_grads[src], back.dx)?;
                    }
                }
                OpKind::Deconv2x2 { w, b } => {
                    let src = node.inputs[0];
                    let (dx, dw, db) = deconv2x2_backward(&acts.outs[src], &self.params[*w].value, &g)
                        .map_err(|e| self.node_err(id, e))?;
                    param_grads[*w] = param_grads[*w].add(&dw)?;
                    add_bias_grad(&mut param_grads[*b], &db);
                    accumulate(&mut node_grads[src], dx)?;
                }
                OpKind::TemporalAvgPool => {
                    let src = node.inputs[0];
                    let dx = temporal_avg_pool_backward(&g, acts.outs[src].dims().l)
                        .map_err(|e| self.node_err(id, e))?;
                    accumulate(&mut node_grads[src], dx)?;
                }
                OpKind::MaxPool2 => {
                    let src = node.inputs[0];
                    let dx = maxpool2_backward(&acts.outs[src], &g).map_err(|e| self.node_err(id, e))?;
                    accumulate(&mut node_grads[src], dx)?;
                }
                OpKind::Relu => {
                    let src = node.inputs[0];
                    accumulate(&mut node_grads[src], relu_backward(&acts.outs[src], &g))?;
                }
                OpKind::Sigmoid => {
                    accumulate(&mut node_grads[node.inputs[0]], sigmoid_backward(&acts.outs[id], &g))?;
                }
                OpKind::ConcatChannels => {
                    let (a, b) = (node.inputs[0], node.inputs[1]);
                    let ca = acts.outs[a].dims().c;
                    let total = g.dims().c;
                    let ga = slice_channels(&g, 0, ca)?;
                    let gb = slice_channels(&g, ca, total)?;
                    accumulate(&mut node_grads[a], ga)?;
                    accumulate(&mut node_grads[b], gb)?;
                }
            }
        }
        Ok(GradStore { params: param_grads, input: input_grad })
    }
}

fn add_bias_grad<T: Elem>(acc: &mut Tensor5<T>, db: &[T]) {
    debug_assert_eq!(acc.len(), db.len());
    for (a, &v) in acc.data_mut().iter_mut().zip(db) {
        a.add_assign(v);
    }
}
