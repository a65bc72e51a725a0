//! The layer graph: node/edge storage, structural validity and model
//! construction.
//!
//! A model is a directed acyclic graph of layers. Hidden layers come in four
//! kinds (sequential/residual x dense/convolution); the input and output
//! terminals are fixed for the lifetime of the model. Every mutation goes
//! through [`LayerGraph::add_layer`] / [`LayerGraph::remove_layer`], which
//! keep the invariants checked by [`LayerGraph::validate`].

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{init_weights, Activation, InitScheme, Matrix};

/// Default number of feature maps produced by hidden convolution layers.
pub const DEFAULT_CONV_CHANNELS: usize = 4;

/// Opaque layer identifier; monotonically assigned, never reused.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LayerId(pub(crate) u64);

impl LayerId {
    pub fn raw(self) -> u64 {
        self.0
    }
}

impl std::fmt::Display for LayerId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "L{}", self.0)
    }
}

/// Layer kinds: two terminals plus the four hidden kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    InputDense { features: usize },
    InputConv { channels: usize },
    Output,
    DenseSeq,
    DenseRes { init: InitScheme },
    ConvSeq,
    ConvRes,
}

impl LayerKind {
    pub fn is_input(&self) -> bool {
        matches!(
            self,
            LayerKind::InputDense { .. } | LayerKind::InputConv { .. }
        )
    }

    /// Conv-typed layers are the only legal sources for conv receivers.
    pub fn is_conv(&self) -> bool {
        matches!(
            self,
            LayerKind::InputConv { .. } | LayerKind::ConvSeq | LayerKind::ConvRes
        )
    }

    pub fn is_hidden(&self) -> bool {
        matches!(
            self,
            LayerKind::DenseSeq | LayerKind::DenseRes { .. } | LayerKind::ConvSeq | LayerKind::ConvRes
        )
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::InputDense { .. } => "input_dense",
            LayerKind::InputConv { .. } => "input_conv",
            LayerKind::Output => "output",
            LayerKind::DenseSeq => "dense_seq",
            LayerKind::DenseRes { .. } => "dense_res",
            LayerKind::ConvSeq => "conv_seq",
            LayerKind::ConvRes => "conv_res",
        }
    }
}

/// The payload shape a layer emits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutShape {
    Flat(usize),
    Image { channels: usize },
}

/// One node of the graph. `weights` is stored fan_in x fan_out; for conv
/// layers it is the im2col kernel matrix `(in_channels*9) x out_channels`.
#[derive(Debug, Clone)]
pub struct Layer {
    pub id: LayerId,
    pub kind: LayerKind,
    pub activation: Activation,
    pub weights: Option<Matrix>,
    pub bias: Option<Matrix>,
    pub incoming: Vec<LayerId>,
    pub outgoing: Vec<LayerId>,
    /// Units emitted: dense out-dim, conv out-channels, input feature count.
    pub neurons: usize,
}

impl Layer {
    /// Expected feature rows (dense) or channels (conv) of the averaged input.
    pub fn fan_in(&self) -> Option<usize> {
        match self.kind {
            LayerKind::InputDense { .. } => None,
            LayerKind::InputConv { channels } => Some(channels),
            _ => {
                let w = self.weights.as_ref().expect("hidden layer has weights");
                if self.kind.is_conv() {
                    Some(w.rows() / 9)
                } else {
                    Some(w.rows())
                }
            }
        }
    }
}

/// Input terminal specification for model construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputSpec {
    Conv {
        channels: usize,
        height: usize,
        width: usize,
    },
    Dense {
        features: usize,
    },
}

/// Structural violations reported by [`LayerGraph::validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    Cycle,
    UnreachableFromInput(LayerId),
    DeadEnd(LayerId),
    ConvOrdering { from: LayerId, to: LayerId },
    EdgeMirror(String),
    Terminal(String),
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::Cycle => write!(f, "graph contains a cycle"),
            Violation::UnreachableFromInput(id) => {
                write!(f, "layer {id} is not reachable from any input")
            }
            Violation::DeadEnd(id) => write!(f, "layer {id} has no path to the output"),
            Violation::ConvOrdering { from, to } => {
                write!(f, "conv layer {to} receives from non-conv layer {from}")
            }
            Violation::EdgeMirror(msg) => write!(f, "edge lists inconsistent: {msg}"),
            Violation::Terminal(msg) => write!(f, "terminal rule: {msg}"),
        }
    }
}

/// The mutable model: a DAG of layers plus the construction defaults that
/// newly added layers adopt.
#[derive(Debug, Clone)]
pub struct LayerGraph {
    layers: BTreeMap<LayerId, Layer>,
    inputs: Vec<LayerId>,
    output: LayerId,
    def_neu: usize,
    conv_channels: usize,
    /// Height/width of the conv input planes; `None` for pure dense models.
    image_hw: Option<(usize, usize)>,
    next_id: u64,
}

impl LayerGraph {
    /// Builds the default starting structure: one input layer, one softmax
    /// output layer with fan-in `def_neu`, and a single connecting edge.
    pub fn new_base_model<R: Rng>(
        input: InputSpec,
        def_neu: usize,
        classes: usize,
        rng: &mut R,
    ) -> Result<LayerGraph> {
        Self::new_base_model_with_channels(input, def_neu, DEFAULT_CONV_CHANNELS, classes, rng)
    }

    pub fn new_base_model_with_channels<R: Rng>(
        input: InputSpec,
        def_neu: usize,
        conv_channels: usize,
        classes: usize,
        rng: &mut R,
    ) -> Result<LayerGraph> {
        if classes < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 classes, got {classes}"
            )));
        }
        if def_neu == 0 || conv_channels == 0 {
            return Err(Error::InvalidArgument(
                "def_neu and conv_channels must be >= 1".into(),
            ));
        }
        let mut g = LayerGraph {
            layers: BTreeMap::new(),
            inputs: Vec::new(),
            output: LayerId(0),
            def_neu,
            conv_channels,
            image_hw: None,
            next_id: 0,
        };
        let input_id = g.push_input(input, rng)?;
        let output_id = g.push_output(classes, rng)?;
        g.inputs = vec![input_id];
        g.output = output_id;
        g.link(input_id, output_id);
        Ok(g)
    }

    /// Builds a model with several input layers all feeding one hidden dense
    /// layer, which feeds the output. Used for multivariate series models
    /// where each input branch can grow independently.
    pub fn new_multi_input_model<R: Rng>(
        inputs: &[InputSpec],
        def_neu: usize,
        conv_channels: usize,
        classes: usize,
        rng: &mut R,
    ) -> Result<LayerGraph> {
        if inputs.is_empty() {
            return Err(Error::InvalidArgument("need at least one input".into()));
        }
        if classes < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 classes, got {classes}"
            )));
        }
        let mut g = LayerGraph {
            layers: BTreeMap::new(),
            inputs: Vec::new(),
            output: LayerId(0),
            def_neu,
            conv_channels,
            image_hw: None,
            next_id: 0,
        };
        let mut input_ids = Vec::new();
        for spec in inputs {
            input_ids.push(g.push_input(*spec, rng)?);
        }
        let output_id = g.push_output(classes, rng)?;
        g.inputs = input_ids.clone();
        g.output = output_id;

        // Shared hidden layer; its fan-in adapts to the first input's width.
        let fan_in = g.width_of(input_ids[0])?;
        let weights = init_weights(InitScheme::RandomScaled, fan_in, def_neu, rng)?;
        let hidden = g.push_layer(
            LayerKind::DenseSeq,
            Activation::ReLU,
            Some(weights),
            Some(Matrix::zeros(def_neu, 1)),
            def_neu,
        );
        for id in &input_ids {
            g.link(*id, hidden);
        }
        g.link(hidden, output_id);
        Ok(g)
    }

    fn push_input<R: Rng>(&mut self, input: InputSpec, rng: &mut R) -> Result<LayerId> {
        match input {
            InputSpec::Dense { features } => {
                if features == 0 {
                    return Err(Error::InvalidArgument("input features must be >= 1".into()));
                }
                Ok(self.push_layer(
                    LayerKind::InputDense { features },
                    Activation::Linear,
                    None,
                    None,
                    features,
                ))
            }
            InputSpec::Conv {
                channels,
                height,
                width,
            } => {
                if channels == 0 || height == 0 || width == 0 {
                    return Err(Error::InvalidArgument(
                        "conv input dimensions must be >= 1".into(),
                    ));
                }
                if let Some(hw) = self.image_hw {
                    if hw != (height, width) {
                        return Err(Error::InvalidArgument(
                            "all conv inputs must share the same plane size".into(),
                        ));
                    }
                } else {
                    self.image_hw = Some((height, width));
                }
                // 3x3 kernel, stride 1, same padding.
                let weights =
                    init_weights(InitScheme::RandomScaled, channels * 9, self.conv_channels, rng)?;
                Ok(self.push_layer(
                    LayerKind::InputConv { channels },
                    Activation::ReLU,
                    Some(weights),
                    Some(Matrix::zeros(self.conv_channels, 1)),
                    self.conv_channels,
                ))
            }
        }
    }

    fn push_output<R: Rng>(&mut self, classes: usize, rng: &mut R) -> Result<LayerId> {
        let weights = init_weights(InitScheme::RandomScaled, self.def_neu, classes, rng)?;
        Ok(self.push_layer(
            LayerKind::Output,
            Activation::Softmax,
            Some(weights),
            Some(Matrix::zeros(classes, 1)),
            classes,
        ))
    }

    fn push_layer(
        &mut self,
        kind: LayerKind,
        activation: Activation,
        weights: Option<Matrix>,
        bias: Option<Matrix>,
        neurons: usize,
    ) -> LayerId {
        let id = LayerId(self.next_id);
        self.next_id += 1;
        self.layers.insert(
            id,
            Layer {
                id,
                kind,
                activation,
                weights,
                bias,
                incoming: Vec::new(),
                outgoing: Vec::new(),
                neurons,
            },
        );
        id
    }

    fn link(&mut self, from: LayerId, to: LayerId) {
        self.layers.get_mut(&from).unwrap().outgoing.push(to);
        self.layers.get_mut(&to).unwrap().incoming.push(from);
    }

    fn unlink(&mut self, from: LayerId, to: LayerId) {
        self.layers
            .get_mut(&from)
            .unwrap()
            .outgoing
            .retain(|&x| x != to);
        self.layers
            .get_mut(&to)
            .unwrap()
            .incoming
            .retain(|&x| x != from);
    }

    pub fn layer(&self, id: LayerId) -> Result<&Layer> {
        self.layers.get(&id).ok_or(Error::NotFound(id))
    }

    /// Mutable access to a layer, e.g. for seeding specific weights.
    /// Changing parameter shapes breaks the model; only values are meant to
    /// be edited.
    pub fn layer_mut(&mut self, id: LayerId) -> Result<&mut Layer> {
        self.layers.get_mut(&id).ok_or(Error::NotFound(id))
    }

    pub fn contains(&self, id: LayerId) -> bool {
        self.layers.contains_key(&id)
    }

    /// Layer ids in ascending id order.
    pub fn layer_ids(&self) -> impl Iterator<Item = LayerId> + '_ {
        self.layers.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn inputs(&self) -> &[LayerId] {
        &self.inputs
    }

    pub fn output(&self) -> LayerId {
        self.output
    }

    pub fn def_neu(&self) -> usize {
        self.def_neu
    }

    pub fn conv_channels(&self) -> usize {
        self.conv_channels
    }

    pub fn image_hw(&self) -> Option<(usize, usize)> {
        self.image_hw
    }

    pub fn classes(&self) -> usize {
        self.layers[&self.output].neurons
    }

    /// Hidden layer ids in ascending order.
    pub fn hidden_ids(&self) -> Vec<LayerId> {
        self.layers
            .values()
            .filter(|l| l.kind.is_hidden())
            .map(|l| l.id)
            .collect()
    }

    /// All edges as (from, to), sorted.
    pub fn edges(&self) -> Vec<(LayerId, LayerId)> {
        let mut es = Vec::new();
        for layer in self.layers.values() {
            let mut outs = layer.outgoing.clone();
            outs.sort();
            for to in outs {
                es.push((layer.id, to));
            }
        }
        es
    }

    pub fn has_edge(&self, from: LayerId, to: LayerId) -> bool {
        self.layers
            .get(&from)
            .map(|l| l.outgoing.contains(&to))
            .unwrap_or(false)
    }

    /// True when a directed path of length >= 1 connects `from` to `to`.
    pub fn has_path(&self, from: LayerId, to: LayerId) -> bool {
        if !self.contains(from) || !self.contains(to) {
            return false;
        }
        let mut seen = BTreeSet::new();
        let mut queue: VecDeque<LayerId> = self.layers[&from].outgoing.iter().copied().collect();
        while let Some(id) = queue.pop_front() {
            if id == to {
                return true;
            }
            if seen.insert(id) {
                queue.extend(self.layers[&id].outgoing.iter().copied());
            }
        }
        false
    }

    /// The emitted width of a layer, flattened: dense out-dim, conv
    /// `out_channels * height * width`, input feature count.
    pub fn width_of(&self, id: LayerId) -> Result<usize> {
        let layer = self.layer(id)?;
        Ok(match layer.kind {
            LayerKind::InputDense { features } => features,
            k if k.is_conv() => {
                let (h, w) = self
                    .image_hw
                    .expect("conv layer present implies image dims are known");
                layer.neurons * h * w
            }
            _ => layer.neurons,
        })
    }

    pub fn out_shape(&self, id: LayerId) -> Result<OutShape> {
        let layer = self.layer(id)?;
        Ok(if layer.kind.is_conv() {
            OutShape::Image {
                channels: layer.neurons,
            }
        } else {
            OutShape::Flat(self.width_of(id)?)
        })
    }

    /// Inserts a new hidden layer between `from` and `to`.
    ///
    /// Sequential kinds require an existing edge `from -> to` and replace it
    /// with `from -> new -> to`. Residual kinds require a directed path from
    /// `from` to `to` and add the bridge `from -> new -> to` while leaving
    /// the path untouched.
    pub fn add_layer<R: Rng>(
        &mut self,
        kind: LayerKind,
        from: LayerId,
        to: LayerId,
        rng: &mut R,
    ) -> Result<LayerId> {
        self.layer(from)?;
        self.layer(to)?;
        let sequential = match kind {
            LayerKind::DenseSeq | LayerKind::ConvSeq => true,
            LayerKind::DenseRes { .. } | LayerKind::ConvRes => false,
            _ => {
                return Err(Error::Structure(format!(
                    "cannot add terminal layer kind {}",
                    kind.name()
                )))
            }
        };
        if sequential && !self.has_edge(from, to) {
            return Err(Error::Structure(format!(
                "sequential layer requires an existing edge {from}->{to}"
            )));
        }
        if !sequential && !self.has_path(from, to) {
            return Err(Error::Structure(format!(
                "residual layer requires a directed path {from}->{to}"
            )));
        }
        let conv = kind.is_conv();
        if conv && !self.layers[&from].kind.is_conv() {
            return Err(Error::Structure(format!(
                "convolution layer can only be added after a convolution layer, {from} is {}",
                self.layers[&from].kind.name()
            )));
        }
        if !conv && self.layers[&to].kind.is_conv() {
            return Err(Error::Structure(format!(
                "dense layer cannot feed convolution layer {to}"
            )));
        }

        let new_id = if conv {
            let in_channels = self.layers[&from].neurons;
            let weights = init_weights(InitScheme::RandomScaled, in_channels * 9, self.conv_channels, rng)?;
            self.push_layer(
                kind,
                Activation::ReLU,
                Some(weights),
                Some(Matrix::zeros(self.conv_channels, 1)),
                self.conv_channels,
            )
        } else {
            let fan_in = self.width_of(from)?;
            let init = match kind {
                LayerKind::DenseRes { init } => init,
                // Sequential layers cannot choose their initial state.
                _ => InitScheme::RandomScaled,
            };
            let weights = init_weights(init, fan_in, self.def_neu, rng)?;
            let out = weights.cols();
            self.push_layer(
                kind,
                Activation::ReLU,
                Some(weights),
                Some(Matrix::zeros(out, 1)),
                out,
            )
        };

        if sequential {
            self.unlink(from, to);
        }
        self.link(from, new_id);
        self.link(new_id, to);
        Ok(new_id)
    }

    /// Removes a hidden layer. For every (predecessor, successor) pair an
    /// edge is added if the removal left them without a directed path, so
    /// data keeps flowing through the network.
    pub fn remove_layer(&mut self, id: LayerId) -> Result<()> {
        let layer = self.layer(id)?;
        if !layer.kind.is_hidden() {
            return Err(Error::ForbiddenRemoval(id));
        }
        let mut preds = layer.incoming.clone();
        let mut succs = layer.outgoing.clone();
        preds.sort();
        succs.sort();
        for &p in &preds {
            self.unlink(p, id);
        }
        for &s in &succs {
            self.unlink(id, s);
        }
        self.layers.remove(&id);
        for &p in &preds {
            for &s in &succs {
                if !self.has_path(p, s) {
                    self.link(p, s);
                }
            }
        }
        Ok(())
    }

    /// Deterministic topological order (ready set ordered by id).
    pub fn topo_order(&self) -> Result<Vec<LayerId>> {
        let mut indegree: BTreeMap<LayerId, usize> = self
            .layers
            .values()
            .map(|l| (l.id, l.incoming.len()))
            .collect();
        let mut ready: BTreeSet<LayerId> = indegree
            .iter()
            .filter(|(_, &d)| d == 0)
            .map(|(&id, _)| id)
            .collect();
        let mut order = Vec::with_capacity(self.layers.len());
        while let Some(&id) = ready.iter().next() {
            ready.remove(&id);
            order.push(id);
            for &succ in &self.layers[&id].outgoing {
                let d = indegree.get_mut(&succ).unwrap();
                *d -= 1;
                if *d == 0 {
                    ready.insert(succ);
                }
            }
        }
        if order.len() != self.layers.len() {
            return Err(Error::Structure("graph contains a cycle".into()));
        }
        Ok(order)
    }

    /// All ordered pairs connected by a directed path of length >= 1.
    pub fn path_pairs(&self) -> BTreeSet<(LayerId, LayerId)> {
        let mut pairs = BTreeSet::new();
        let order = match self.topo_order() {
            Ok(o) => o,
            Err(_) => return pairs,
        };
        let mut reach: BTreeMap<LayerId, BTreeSet<LayerId>> = BTreeMap::new();
        for &id in order.iter().rev() {
            let mut set = BTreeSet::new();
            for &succ in &self.layers[&id].outgoing {
                set.insert(succ);
                if let Some(r) = reach.get(&succ) {
                    set.extend(r.iter().copied());
                }
            }
            for &v in &set {
                pairs.insert((id, v));
            }
            reach.insert(id, set);
        }
        pairs
    }

    /// Checks every structural invariant, returning all violations found.
    pub fn validate(&self) -> Vec<Violation> {
        let mut violations = Vec::new();

        // Terminals.
        for &id in &self.inputs {
            match self.layers.get(&id) {
                None => violations.push(Violation::Terminal(format!("input {id} missing"))),
                Some(l) => {
                    if !l.kind.is_input() {
                        violations
                            .push(Violation::Terminal(format!("{id} listed as input but is {}", l.kind.name())));
                    }
                    if !l.incoming.is_empty() {
                        violations
                            .push(Violation::Terminal(format!("input {id} has incoming edges")));
                    }
                }
            }
        }
        match self.layers.get(&self.output) {
            None => violations.push(Violation::Terminal("output missing".into())),
            Some(l) => {
                if l.kind != LayerKind::Output {
                    violations.push(Violation::Terminal(format!(
                        "{} registered as output but is {}",
                        self.output,
                        l.kind.name()
                    )));
                }
                if !l.outgoing.is_empty() {
                    violations.push(Violation::Terminal(format!(
                        "output {} has outgoing edges",
                        self.output
                    )));
                }
            }
        }
        for layer in self.layers.values() {
            if layer.kind.is_input() && !self.inputs.contains(&layer.id) {
                violations.push(Violation::Terminal(format!(
                    "{} has input kind but is not registered as input",
                    layer.id
                )));
            }
        }

        // Edge mirror consistency.
        for layer in self.layers.values() {
            for &to in &layer.outgoing {
                if to == layer.id {
                    violations.push(Violation::EdgeMirror(format!("self loop at {}", layer.id)));
                    continue;
                }
                match self.layers.get(&to) {
                    None => violations.push(Violation::EdgeMirror(format!(
                        "{}->{to} points at a missing layer",
                        layer.id
                    ))),
                    Some(t) => {
                        if !t.incoming.contains(&layer.id) {
                            violations.push(Violation::EdgeMirror(format!(
                                "{}->{to} not mirrored in incoming list",
                                layer.id
                            )));
                        }
                    }
                }
            }
            for &from in &layer.incoming {
                match self.layers.get(&from) {
                    None => violations.push(Violation::EdgeMirror(format!(
                        "{from}->{} originates at a missing layer",
                        layer.id
                    ))),
                    Some(f) => {
                        if !f.outgoing.contains(&layer.id) {
                            violations.push(Violation::EdgeMirror(format!(
                                "{from}->{} not mirrored in outgoing list",
                                layer.id
                            )));
                        }
                    }
                }
            }
            let mut outs = layer.outgoing.clone();
            outs.sort();
            outs.dedup();
            if outs.len() != layer.outgoing.len() {
                violations.push(Violation::EdgeMirror(format!(
                    "duplicate outgoing edges at {}",
                    layer.id
                )));
            }
        }

        // Acyclicity.
        let acyclic = self.topo_order().is_ok();
        if !acyclic {
            violations.push(Violation::Cycle);
        }

        // Reachability: every layer sits on a path input -> output.
        if acyclic {
            let mut from_input = BTreeSet::new();
            let mut queue: VecDeque<LayerId> = self.inputs.iter().copied().collect();
            for &i in &self.inputs {
                from_input.insert(i);
            }
            while let Some(id) = queue.pop_front() {
                if let Some(l) = self.layers.get(&id) {
                    for &succ in &l.outgoing {
                        if from_input.insert(succ) {
                            queue.push_back(succ);
                        }
                    }
                }
            }
            let mut to_output = BTreeSet::new();
            to_output.insert(self.output);
            let mut queue = VecDeque::from([self.output]);
            while let Some(id) = queue.pop_front() {
                if let Some(l) = self.layers.get(&id) {
                    for &pred in &l.incoming {
                        if to_output.insert(pred) {
                            queue.push_back(pred);
                        }
                    }
                }
            }
            for layer in self.layers.values() {
                if !from_input.contains(&layer.id) {
                    violations.push(Violation::UnreachableFromInput(layer.id));
                }
                if !to_output.contains(&layer.id) {
                    violations.push(Violation::DeadEnd(layer.id));
                }
            }
        }

        // Conv ordering: conv receivers accept only conv sources.
        for layer in self.layers.values() {
            if layer.kind.is_conv() && !layer.kind.is_input() {
                for &from in &layer.incoming {
                    if let Some(f) = self.layers.get(&from) {
                        if !f.kind.is_conv() {
                            violations.push(Violation::ConvOrdering {
                                from,
                                to: layer.id,
                            });
                        }
                    }
                }
            }
        }

        violations
    }

    pub fn is_valid(&self) -> bool {
        self.validate().is_empty()
    }

    pub(crate) fn next_id_raw(&self) -> u64 {
        self.next_id
    }

    /// Reassembles a graph from serialized parts. The caller is responsible
    /// for validating the result.
    pub(crate) fn from_parts(
        layers: BTreeMap<LayerId, Layer>,
        inputs: Vec<LayerId>,
        output: LayerId,
        def_neu: usize,
        conv_channels: usize,
        image_hw: Option<(usize, usize)>,
        next_id: u64,
    ) -> LayerGraph {
        LayerGraph {
            layers,
            inputs,
            output,
            def_neu,
            conv_channels,
            image_hw,
            next_id,
        }
    }

    #[cfg(test)]
    pub(crate) fn inject_edge_unchecked(&mut self, from: LayerId, to: LayerId) {
        self.link(from, to);
    }

    #[cfg(test)]
    pub(crate) fn remove_edge_unchecked(&mut self, from: LayerId, to: LayerId) {
        self.unlink(from, to);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    fn conv_base() -> LayerGraph {
        LayerGraph::new_base_model(
            InputSpec::Conv {
                channels: 1,
                height: 28,
                width: 28,
            },
            10,
            10,
            &mut rng(),
        )
        .unwrap()
    }

    fn dense_base(features: usize, def_neu: usize, classes: usize) -> LayerGraph {
        LayerGraph::new_base_model(InputSpec::Dense { features }, def_neu, classes, &mut rng())
            .unwrap()
    }

    #[test]
    fn base_model_has_two_layers_one_edge() {
        let g = conv_base();
        assert_eq!(g.len(), 2);
        assert_eq!(g.edges().len(), 1);
        assert_eq!(g.classes(), 10);
        assert!(g.is_valid());
    }

    #[test]
    fn dense_base_model_output_width() {
        let g = dense_base(4, 8, 2);
        assert_eq!(g.classes(), 2);
        assert!(g.is_valid());
        let out = g.layer(g.output()).unwrap();
        assert_eq!(out.weights.as_ref().unwrap().rows(), 8);
        assert_eq!(out.weights.as_ref().unwrap().cols(), 2);
    }

    #[test]
    fn base_model_rejects_one_class() {
        let r = LayerGraph::new_base_model(InputSpec::Dense { features: 3 }, 4, 1, &mut rng());
        assert!(r.is_err());
    }

    #[test]
    fn sequential_insert_rewires_edge() {
        let mut g = conv_base();
        let (input, output) = (g.inputs()[0], g.output());
        let mid = g
            .add_layer(LayerKind::DenseSeq, input, output, &mut rng())
            .unwrap();
        assert_eq!(g.len(), 3);
        assert_eq!(g.edges().len(), 2);
        assert!(!g.has_edge(input, output));
        assert!(g.has_edge(input, mid));
        assert!(g.has_edge(mid, output));
        assert!(g.is_valid());
    }

    #[test]
    fn residual_insert_preserves_chain() {
        let mut g = dense_base(4, 4, 3);
        let (input, output) = (g.inputs()[0], g.output());
        let mid = g
            .add_layer(LayerKind::DenseSeq, input, output, &mut rng())
            .unwrap();
        let before: Vec<_> = g.edges();
        let res = g
            .add_layer(
                LayerKind::DenseRes {
                    init: InitScheme::Zero,
                },
                input,
                output,
                &mut rng(),
            )
            .unwrap();
        let after = g.edges();
        assert_eq!(after.len(), before.len() + 2);
        for e in &before {
            assert!(after.contains(e), "original edge {e:?} must survive");
        }
        assert!(g.has_edge(input, res));
        assert!(g.has_edge(res, output));
        assert!(g.has_edge(input, mid));
        assert!(g.is_valid());
    }

    #[test]
    fn conv_after_dense_is_rejected() {
        let mut g = conv_base();
        let (input, output) = (g.inputs()[0], g.output());
        let mid = g
            .add_layer(LayerKind::DenseSeq, input, output, &mut rng())
            .unwrap();
        let err = g
            .add_layer(LayerKind::ConvSeq, mid, output, &mut rng())
            .unwrap_err();
        assert!(matches!(err, Error::Structure(_)), "{err}");
    }

    #[test]
    fn dense_cannot_feed_conv() {
        let mut g = conv_base();
        let (input, output) = (g.inputs()[0], g.output());
        let conv = g
            .add_layer(LayerKind::ConvSeq, input, output, &mut rng())
            .unwrap();
        let err = g
            .add_layer(LayerKind::DenseSeq, input, conv, &mut rng())
            .unwrap_err();
        assert!(matches!(err, Error::Structure(_)), "{err}");
    }

    #[test]
    fn sequential_requires_edge() {
        let mut g = dense_base(4, 4, 2);
        let (input, output) = (g.inputs()[0], g.output());
        g.add_layer(LayerKind::DenseSeq, input, output, &mut rng())
            .unwrap();
        // input->output edge no longer exists
        let err = g
            .add_layer(LayerKind::DenseSeq, input, output, &mut rng())
            .unwrap_err();
        assert!(matches!(err, Error::Structure(_)));
        // ...but a residual bridge is fine since the path survives.
        assert!(g
            .add_layer(
                LayerKind::DenseRes {
                    init: InitScheme::RandomScaled
                },
                input,
                output,
                &mut rng()
            )
            .is_ok());
    }

    #[test]
    fn remove_middle_layer_restores_edge() {
        let mut g = conv_base();
        let (input, output) = (g.inputs()[0], g.output());
        let mid = g
            .add_layer(LayerKind::DenseSeq, input, output, &mut rng())
            .unwrap();
        g.remove_layer(mid).unwrap();
        assert!(g.has_edge(input, output));
        assert_eq!(g.len(), 2);
        assert!(g.is_valid());
    }

    #[test]
    fn remove_terminals_is_forbidden() {
        let mut g = conv_base();
        let err = g.remove_layer(g.output()).unwrap_err();
        assert!(matches!(err, Error::ForbiddenRemoval(_)));
        let err = g.remove_layer(g.inputs()[0]).unwrap_err();
        assert!(matches!(err, Error::ForbiddenRemoval(_)));
        let err = g.remove_layer(LayerId(999)).unwrap_err();
        assert!(matches!(err, Error::NotFound(_)));
    }

    #[test]
    fn remove_residual_adds_no_edge_when_path_survives() {
        let mut g = dense_base(4, 4, 2);
        let (input, output) = (g.inputs()[0], g.output());
        let res = g
            .add_layer(
                LayerKind::DenseRes {
                    init: InitScheme::Zero,
                },
                input,
                output,
                &mut rng(),
            )
            .unwrap();
        let edges_before = g.edges().len();
        g.remove_layer(res).unwrap();
        // the two bridge edges disappear, nothing new is added
        assert_eq!(g.edges().len(), edges_before - 2);
        assert!(g.is_valid());
    }

    #[test]
    fn add_then_remove_sequential_restores_edge_set() {
        let mut g = conv_base();
        let before = g.edges();
        let (input, output) = (g.inputs()[0], g.output());
        let mid = g
            .add_layer(LayerKind::DenseSeq, input, output, &mut rng())
            .unwrap();
        g.remove_layer(mid).unwrap();
        assert_eq!(g.edges(), before);
    }

    #[test]
    fn validate_flags_injected_back_edge() {
        let mut g = conv_base();
        let (input, output) = (g.inputs()[0], g.output());
        let mid = g
            .add_layer(LayerKind::DenseSeq, input, output, &mut rng())
            .unwrap();
        g.inject_edge_unchecked(output, mid);
        let violations = g.validate();
        assert!(violations.iter().any(|v| matches!(v, Violation::Cycle)), "{violations:?}");
    }

    #[test]
    fn validate_flags_dead_end() {
        let mut g = conv_base();
        let (input, output) = (g.inputs()[0], g.output());
        let mid = g
            .add_layer(LayerKind::DenseSeq, input, output, &mut rng())
            .unwrap();
        g.remove_edge_unchecked(mid, output);
        g.inject_edge_unchecked(input, output); // keep input->output flowing
        let violations = g.validate();
        assert!(
            violations
                .iter()
                .any(|v| matches!(v, Violation::DeadEnd(id) if *id == mid)),
            "{violations:?}"
        );
    }

    #[test]
    fn path_pairs_on_base_and_chain() {
        let g = conv_base();
        let (input, output) = (g.inputs()[0], g.output());
        let pairs = g.path_pairs();
        assert_eq!(pairs.len(), 1);
        assert!(pairs.contains(&(input, output)));

        let mut g = g;
        let mid = g
            .add_layer(LayerKind::DenseSeq, input, output, &mut rng())
            .unwrap();
        let pairs = g.path_pairs();
        // chain of 3: (in,mid), (mid,out), (in,out)
        assert_eq!(pairs.len(), 3);
        assert!(pairs.contains(&(input, mid)));
        assert!(pairs.contains(&(mid, output)));
        assert!(pairs.contains(&(input, output)));
    }

    #[test]
    fn residual_edge_does_not_change_pair_set() {
        let mut g = dense_base(4, 4, 2);
        let (input, output) = (g.inputs()[0], g.output());
        g.add_layer(LayerKind::DenseSeq, input, output, &mut rng())
            .unwrap();
        let before = g.path_pairs();
        // bridging an already-connected pair adds a node but the pair set over
        // the original nodes is unchanged
        let res = g
            .add_layer(
                LayerKind::DenseRes {
                    init: InitScheme::RandomScaled,
                },
                input,
                output,
                &mut rng(),
            )
            .unwrap();
        let after: BTreeSet<_> = g
            .path_pairs()
            .into_iter()
            .filter(|(a, b)| *a != res && *b != res)
            .collect();
        assert_eq!(before, after);
    }

    #[test]
    fn chain_insertion_anchor_count_equals_edge_count() {
        for hidden in 0..5 {
            let mut g = dense_base(4, 4, 2);
            let (input, output) = (g.inputs()[0], g.output());
            let mut tail = input;
            for _ in 0..hidden {
                tail = g
                    .add_layer(LayerKind::DenseSeq, tail, output, &mut rng())
                    .unwrap();
            }
            let _ = tail;
            // all receivers are dense, so every edge is a sequential anchor
            assert_eq!(g.edges().len(), hidden + 1);
            let vertices = g.len();
            let pairs = g.path_pairs().len();
            assert_eq!(pairs, vertices * (vertices - 1) / 2);
        }
    }

    #[test]
    fn random_legal_operation_walks_stay_valid() {
        // 1,000 randomly chosen legal add/remove operations per seed, with
        // validation after every step. Removal probability 0.5 keeps the
        // walk bounded; a hard bias kicks in past 24 layers.
        use rand::Rng;
        for seed in 0..10u64 {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let mut g = conv_base();
            for step in 0..1000 {
                let hidden = g.hidden_ids();
                let remove = !hidden.is_empty() && (r.gen_bool(0.5) || g.len() > 24);
                if remove {
                    let id = hidden[r.gen_range(0..hidden.len())];
                    g.remove_layer(id).unwrap();
                } else {
                    // draw (kind, anchor pair) until a legal combination hits
                    loop {
                        let ids: Vec<LayerId> = g.layer_ids().collect();
                        let from = ids[r.gen_range(0..ids.len())];
                        let to = ids[r.gen_range(0..ids.len())];
                        let kind = match r.gen_range(0..5) {
                            0 => LayerKind::DenseSeq,
                            1 => LayerKind::DenseRes {
                                init: InitScheme::RandomScaled,
                            },
                            2 => LayerKind::DenseRes {
                                init: InitScheme::Zero,
                            },
                            3 => LayerKind::ConvSeq,
                            _ => LayerKind::ConvRes,
                        };
                        if g.add_layer(kind, from, to, &mut r).is_ok() {
                            break;
                        }
                    }
                }
                let violations = g.validate();
                assert!(
                    violations.is_empty(),
                    "seed {seed} step {step}: {violations:?}"
                );
            }
        }
    }

    #[test]
    fn ids_are_never_recycled() {
        let mut g = conv_base();
        let (input, output) = (g.inputs()[0], g.output());
        let a = g
            .add_layer(LayerKind::DenseSeq, input, output, &mut rng())
            .unwrap();
        g.remove_layer(a).unwrap();
        let b = g
            .add_layer(LayerKind::DenseSeq, input, output, &mut rng())
            .unwrap();
        assert!(b.raw() > a.raw());
    }
}
