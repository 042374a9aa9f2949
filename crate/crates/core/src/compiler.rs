//! Genome → layer graph decoding, parameter/MAC cost models and export.
//!
//! Residual units expand to bottleneck blocks (1×1 reduce to `out/4`, 3×3,
//! 1×1 expand, plus an identity or 1×1 projection skip joined by an add
//! node). Dense units expand to 3×3 convs producing `k` channels each, every
//! one followed by a concat of the unit input and all earlier conv outputs.
//! Pooling is 2×2 with stride 2. The head is global average pooling and one
//! biased linear layer.
//!
//! Normalization and activations are not graph nodes: a trainer attaches
//! them after every conv. Parameter counts cover conv weights (no bias) and
//! the linear layer's weights and bias.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::genome::{validate, DatasetDescriptor, Genome, GenomeConstraints, PoolKind, Unit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub c: u32,
    pub h: u32,
    pub w: u32,
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}×{}×{}", self.c, self.h, self.w)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum Layer {
    Input {
        c: u32,
        h: u32,
        w: u32,
    },
    Conv {
        in_channels: u32,
        out_channels: u32,
        kernel: [u32; 2],
        stride: u32,
        padding: u32,
    },
    Pool {
        #[serde(rename = "type")]
        kind: PoolKind,
        kernel: [u32; 2],
        stride: u32,
    },
    Add {},
    Concat {},
    GlobalAvgPool {},
    Linear {
        in_features: u32,
        out_features: u32,
        bias: bool,
    },
}

impl Layer {
    pub fn conv(in_channels: u32, out_channels: u32, size: u32) -> Self {
        Layer::Conv {
            in_channels,
            out_channels,
            kernel: [size, size],
            stride: 1,
            padding: size / 2,
        }
    }

    pub fn pool(kind: PoolKind) -> Self {
        Layer::Pool {
            kind,
            kernel: [2, 2],
            stride: 2,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Layer::Input { .. } => "input",
            Layer::Conv { .. } => "conv",
            Layer::Pool { .. } => "pool",
            Layer::Add {} => "add",
            Layer::Concat {} => "concat",
            Layer::GlobalAvgPool {} => "global_avg_pool",
            Layer::Linear { .. } => "linear",
        }
    }

    /// Output shape given the shapes of this layer's inputs.
    pub fn infer(&self, inputs: &[Shape]) -> Result<Shape, CompileError> {
        let err = |m: String| Err(CompileError::Shape(format!("{}: {m}", self.name())));
        let single = |inputs: &[Shape]| -> Result<Shape, CompileError> {
            match inputs {
                [s] => Ok(*s),
                _ => Err(CompileError::Shape(format!(
                    "{} expects one input, got {}",
                    self.name(),
                    inputs.len()
                ))),
            }
        };
        match *self {
            Layer::Input { c, h, w } => {
                if !inputs.is_empty() || c == 0 || h == 0 || w == 0 {
                    return err("takes no inputs and needs a positive shape".into());
                }
                Ok(Shape { c, h, w })
            }
            Layer::Conv {
                in_channels,
                out_channels,
                kernel: [kh, kw],
                stride,
                padding,
            } => {
                let s = single(inputs)?;
                if in_channels == 0 || out_channels == 0 || kh == 0 || kw == 0 || stride == 0 {
                    return err("fields must be positive".into());
                }
                if s.c != in_channels {
                    return err(format!("input has {} channels, layer expects {in_channels}", s.c));
                }
                let dim = |x: u32, k: u32| (x + 2 * padding).checked_sub(k).map(|v| v / stride + 1);
                match (dim(s.h, kh), dim(s.w, kw)) {
                    (Some(h), Some(w)) if h >= 1 && w >= 1 => Ok(Shape {
                        c: out_channels,
                        h,
                        w,
                    }),
                    _ => err("kernel larger than padded input".into()),
                }
            }
            Layer::Pool {
                kernel: [kh, kw],
                stride,
                ..
            } => {
                let s = single(inputs)?;
                if kh == 0 || kw == 0 || stride == 0 || s.h < kh || s.w < kw {
                    return err(format!("cannot pool {s}"));
                }
                Ok(Shape {
                    c: s.c,
                    h: (s.h - kh) / stride + 1,
                    w: (s.w - kw) / stride + 1,
                })
            }
            Layer::Add {} => match inputs {
                [a, rest @ ..] if !rest.is_empty() && rest.iter().all(|s| s == a) => Ok(*a),
                _ => err("needs two or more equal-shaped inputs".into()),
            },
            Layer::Concat {} => match inputs {
                [a, rest @ ..] if !rest.is_empty() && rest.iter().all(|s| s.h == a.h && s.w == a.w) => {
                    Ok(Shape {
                        c: inputs.iter().map(|s| s.c).sum(),
                        ..*a
                    })
                }
                _ => err("needs two or more inputs with equal spatial dims".into()),
            },
            Layer::GlobalAvgPool {} => {
                let s = single(inputs)?;
                Ok(Shape { c: s.c, h: 1, w: 1 })
            }
            Layer::Linear {
                in_features,
                out_features,
                ..
            } => {
                let s = single(inputs)?;
                if s.h != 1 || s.w != 1 || s.c != in_features || out_features == 0 {
                    return err(format!("input {s} does not match {in_features} features"));
                }
                Ok(Shape {
                    c: out_features,
                    h: 1,
                    w: 1,
                })
            }
        }
    }

    pub fn params(&self) -> u64 {
        match *self {
            Layer::Conv {
                in_channels,
                out_channels,
                kernel: [kh, kw],
                ..
            } => in_channels as u64 * out_channels as u64 * kh as u64 * kw as u64,
            Layer::Linear {
                in_features,
                out_features,
                bias,
            } => in_features as u64 * out_features as u64 + if bias { out_features as u64 } else { 0 },
            _ => 0,
        }
    }

    /// Multiply-accumulates for one forward pass producing `out`.
    pub fn macs(&self, out: Shape) -> u64 {
        match *self {
            Layer::Conv { .. } => self.params() * out.h as u64 * out.w as u64,
            Layer::Linear {
                in_features,
                out_features,
                ..
            } => in_features as u64 * out_features as u64,
            _ => 0,
        }
    }
}

/// A layer placed in the graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub id: usize,
    pub layer: Layer,
    pub inputs: Vec<usize>,
    pub shape: Shape,
}

/// Acyclic layer graph; node ids are topological and node 0 is the input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerGraph {
    pub input: Shape,
    pub classes: u32,
    pub nodes: Vec<Node>,
    pub output: usize,
}

impl LayerGraph {
    fn with_input(input: Shape, classes: u32) -> Self {
        let mut g = Self {
            input,
            classes,
            nodes: Vec::new(),
            output: 0,
        };
        g.nodes.push(Node {
            id: 0,
            layer: Layer::Input {
                c: input.c,
                h: input.h,
                w: input.w,
            },
            inputs: Vec::new(),
            shape: input,
        });
        g
    }

    fn push(&mut self, layer: Layer, inputs: &[usize]) -> Result<usize, CompileError> {
        if matches!(layer, Layer::Input { .. }) {
            return Err(CompileError::Shape("only node 0 may be an input".into()));
        }
        let shapes: Vec<Shape> = inputs.iter().map(|&id| self.nodes[id].shape).collect();
        let shape = layer.infer(&shapes)?;
        let id = self.nodes.len();
        self.nodes.push(Node {
            id,
            layer,
            inputs: inputs.to_vec(),
            shape,
        });
        Ok(id)
    }

    fn input_shapes(&self, node: &Node) -> Vec<Shape> {
        node.inputs.iter().map(|&i| self.nodes[i].shape).collect()
    }

    pub fn output_shape(&self) -> Shape {
        self.nodes[self.output].shape
    }

    pub fn conv_layers(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n.layer, Layer::Conv { .. }))
            .count()
    }

    /// Longest input→output path counted in conv and linear layers.
    pub fn weighted_depth(&self) -> usize {
        let mut depth = vec![0usize; self.nodes.len()];
        for n in &self.nodes {
            let here = usize::from(matches!(n.layer, Layer::Conv { .. } | Layer::Linear { .. }));
            let before = n.inputs.iter().map(|&i| depth[i]).max().unwrap_or(0);
            depth[n.id] = before + here;
        }
        depth.get(self.output).copied().unwrap_or(0)
    }

    /// Checks that ids are topological, node 0 is the sole input, the
    /// output is the last node, and every stored shape matches what its
    /// inputs imply.
    pub fn check(&self) -> Result<(), CompileError> {
        let input = Layer::Input {
            c: self.input.c,
            h: self.input.h,
            w: self.input.w,
        };
        if self.nodes.first().map(|n| &n.layer) != Some(&input) {
            return Err(CompileError::Shape("node 0 must be the network input".into()));
        }
        for (pos, n) in self.nodes.iter().enumerate() {
            if n.id != pos {
                return Err(CompileError::Shape(format!(
                    "node at index {pos} has id {}",
                    n.id
                )));
            }
            if let Some(&bad) = n.inputs.iter().find(|&&i| i >= pos) {
                return Err(CompileError::Shape(format!(
                    "node {pos} reads node {bad}, which is not earlier"
                )));
            }
            let inferred = n.layer.infer(&self.input_shapes(n))?;
            if inferred != n.shape {
                return Err(CompileError::Shape(format!(
                    "node {pos} stores {} but inputs imply {inferred}",
                    n.shape
                )));
            }
        }
        if self.output != self.nodes.len() - 1 {
            return Err(CompileError::Shape("output must be the last node".into()));
        }
        let out = self.output_shape();
        if out
            != (Shape {
                c: self.classes,
                h: 1,
                w: 1,
            })
        {
            return Err(CompileError::Shape(format!(
                "output shape {out} is not {} logits",
                self.classes
            )));
        }
        Ok(())
    }

    pub fn to_document(&self) -> ArchitectureDoc {
        ArchitectureDoc {
            input: self.input,
            classes: self.classes,
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeDoc {
                    id: n.id,
                    layer: n.layer.clone(),
                    inputs: n.inputs.clone(),
                })
                .collect(),
            output: self.output,
        }
    }

    /// Rebuilds a graph from its document, re-deriving every shape.
    pub fn from_document(doc: &ArchitectureDoc) -> Result<Self, CompileError> {
        let mut g = LayerGraph::with_input(doc.input, doc.classes);
        match doc.nodes.first() {
            Some(first) if first.id == 0 && first.layer == g.nodes[0].layer && first.inputs.is_empty() => {}
            _ => return Err(CompileError::Shape("node 0 must be the network input".into())),
        }
        for (pos, n) in doc.nodes.iter().enumerate().skip(1) {
            if n.id != pos {
                return Err(CompileError::Shape(format!(
                    "node at index {pos} has id {}",
                    n.id
                )));
            }
            if let Some(&bad) = n.inputs.iter().find(|&&i| i >= pos) {
                return Err(CompileError::Shape(format!(
                    "node {pos} reads node {bad}, which is not earlier"
                )));
            }
            g.push(n.layer.clone(), &n.inputs)?;
        }
        g.output = doc.output;
        g.check()?;
        Ok(g)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeDoc {
    pub id: usize,
    #[serde(flatten)]
    pub layer: Layer,
    pub inputs: Vec<usize>,
}

/// Serialized layer graph handed to trainers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchitectureDoc {
    pub input: Shape,
    pub classes: u32,
    pub nodes: Vec<NodeDoc>,
    pub output: usize,
}

impl ArchitectureDoc {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("architecture serialization is infallible")
    }

    pub fn from_json(text: &str) -> Result<Self, CompileError> {
        serde_json::from_str(text).map_err(|e| CompileError::Parse(e.to_string()))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CompileError {
    #[error("genome is invalid for this dataset: {0}")]
    InvalidGenome(String),
    #[error("inconsistent graph: {0}")]
    Shape(String),
    #[error("malformed architecture document: {0}")]
    Parse(String),
    #[error("unknown export format `{0}` (expected architecture-json or dot-graph)")]
    UnknownFormat(String),
}

/// Bottleneck width of a residual block producing `out` channels.
pub fn bottleneck_width(out: u32) -> u32 {
    (out / 4).max(1)
}

/// Expands a valid genome into its layer graph.
pub fn decode(g: &Genome, d: &DatasetDescriptor, c: &GenomeConstraints) -> Result<LayerGraph, CompileError> {
    let report = validate(g, d, c);
    if !report.is_valid() {
        return Err(CompileError::InvalidGenome(report.to_string()));
    }
    let input = Shape {
        c: d.channels,
        h: d.height,
        w: d.width,
    };
    let mut graph = LayerGraph::with_input(input, d.num_classes);
    let mut cursor = 0;
    let mut channels = d.channels;

    for unit in &g.units {
        match *unit {
            Unit::Rbu {
                amount, out_channels, ..
            } => {
                for _ in 0..amount {
                    let width = bottleneck_width(out_channels);
                    let c1 = graph.push(Layer::conv(channels, width, 1), &[cursor])?;
                    let c2 = graph.push(Layer::conv(width, width, 3), &[c1])?;
                    let c3 = graph.push(Layer::conv(width, out_channels, 1), &[c2])?;
                    let skip = if channels == out_channels {
                        cursor
                    } else {
                        graph.push(Layer::conv(channels, out_channels, 1), &[cursor])?
                    };
                    cursor = graph.push(Layer::Add {}, &[c3, skip])?;
                    channels = out_channels;
                }
            }
            Unit::Dbu { amount, k, .. } => {
                let mut features = vec![cursor];
                for _ in 0..amount {
                    let conv = graph.push(Layer::conv(channels, k.value(), 3), &[cursor])?;
                    features.push(conv);
                    cursor = graph.push(Layer::Concat {}, &features)?;
                    channels += k.value();
                }
            }
            Unit::Pu { kind } => {
                cursor = graph.push(Layer::pool(kind), &[cursor])?;
            }
        }
    }

    let pooled = graph.push(Layer::GlobalAvgPool {}, &[cursor])?;
    graph.output = graph.push(
        Layer::Linear {
            in_features: channels,
            out_features: d.num_classes,
            bias: true,
        },
        &[pooled],
    )?;
    Ok(graph)
}

pub fn count_params(graph: &LayerGraph) -> u64 {
    graph.nodes.iter().map(|n| n.layer.params()).sum()
}

pub fn count_flops(graph: &LayerGraph) -> u64 {
    graph.nodes.iter().map(|n| n.layer.macs(n.shape)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    ArchitectureJson,
    DotGraph,
}

impl FromStr for ExportFormat {
    type Err = CompileError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "architecture-json" => Ok(ExportFormat::ArchitectureJson),
            "dot-graph" => Ok(ExportFormat::DotGraph),
            other => Err(CompileError::UnknownFormat(other.to_string())),
        }
    }
}

pub fn export(graph: &LayerGraph, format: ExportFormat) -> String {
    match format {
        ExportFormat::ArchitectureJson => graph.to_document().to_json(),
        ExportFormat::DotGraph => to_dot(graph),
    }
}

fn to_dot(graph: &LayerGraph) -> String {
    let mut out = String::from("digraph architecture {\n  rankdir=TB;\n  node [shape=box];\n");
    for n in &graph.nodes {
        let detail = match &n.layer {
            Layer::Conv {
                in_channels,
                out_channels,
                kernel: [kh, kw],
                ..
            } => format!("conv {kh}x{kw} {in_channels}->{out_channels}"),
            Layer::Pool { kind, .. } => format!("{kind} pool 2x2/2"),
            Layer::Linear {
                in_features,
                out_features,
                ..
            } => format!("linear {in_features}->{out_features}"),
            other => other.name().to_string(),
        };
        let _ = writeln!(out, "  n{} [label=\"{detail}\\n{}\"];", n.id, n.shape);
    }
    for n in &graph.nodes {
        for i in &n.inputs {
            let _ = writeln!(out, "  n{i} -> n{};", n.id);
        }
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genome::GrowthRate;

    fn cifar() -> (DatasetDescriptor, GenomeConstraints) {
        (DatasetDescriptor::cifar10(), GenomeConstraints::default())
    }

    fn single_rbu() -> Genome {
        Genome::new(vec![Unit::Rbu {
            amount: 1,
            in_channels: 3,
            out_channels: 64,
        }])
    }

    #[test]
    fn single_rbu_structure() {
        let (d, c) = cifar();
        let g = decode(&single_rbu(), &d, &c).unwrap();
        let names: Vec<_> = g.nodes.iter().map(|n| n.layer.name()).collect();
        assert_eq!(
            names,
            [
                "input",
                "conv",
                "conv",
                "conv",
                "conv",
                "add",
                "global_avg_pool",
                "linear"
            ]
        );
        assert_eq!(g.nodes[5].shape, Shape { c: 64, h: 32, w: 32 });
        assert_eq!(g.nodes[6].shape, Shape { c: 64, h: 1, w: 1 });
        assert_eq!(g.output_shape(), Shape { c: 10, h: 1, w: 1 });
        assert_eq!(g.nodes[5].inputs, vec![3, 4]);
        assert_eq!(g.nodes[4].inputs, vec![0]);
        assert_eq!(count_params(&g), 4218);
        g.check().unwrap();
    }

    #[test]
    fn identity_skip_when_channels_match() {
        let (d, c) = cifar();
        let g = Genome::new(vec![Unit::Rbu {
            amount: 2,
            in_channels: 3,
            out_channels: 64,
        }]);
        let graph = decode(&g, &d, &c).unwrap();
        // Second block reads the first add directly as its skip.
        let adds: Vec<&Node> = graph
            .nodes
            .iter()
            .filter(|n| matches!(n.layer, Layer::Add {}))
            .collect();
        assert_eq!(adds.len(), 2);
        assert!(adds[1].inputs.contains(&adds[0].id));
        assert_eq!(graph.conv_layers(), 7);
    }

    #[test]
    fn dense_unit_growth() {
        let (d, c) = cifar();
        let g = Genome::new(vec![Unit::Dbu {
            amount: 4,
            in_channels: 3,
            out_channels: 3 + 4 * 20,
            k: GrowthRate::K20,
        }]);
        let graph = decode(&g, &d, &c).unwrap();
        let convs: Vec<u32> = graph
            .nodes
            .iter()
            .filter_map(|n| match n.layer {
                Layer::Conv { in_channels, .. } => Some(in_channels),
                _ => None,
            })
            .collect();
        assert_eq!(convs, vec![3, 23, 43, 63]);
        let last_concat = graph
            .nodes
            .iter()
            .rfind(|n| matches!(n.layer, Layer::Concat {}))
            .unwrap();
        assert_eq!(last_concat.shape.c, 83);
        assert_eq!(last_concat.inputs[0], 0);
        assert_eq!(last_concat.inputs.len(), 5);
    }

    #[test]
    fn pooling_halves_spatial_dims() {
        let (d, c) = cifar();
        let g = Genome::new(vec![
            Unit::Pu { kind: PoolKind::Max },
            Unit::Rbu {
                amount: 1,
                in_channels: 3,
                out_channels: 64,
            },
        ]);
        let graph = decode(&g, &d, &c).unwrap();
        assert_eq!(graph.nodes[1].shape, Shape { c: 3, h: 16, w: 16 });
        // Convs after the pool run at a quarter of the positions.
        let unpooled = decode(&single_rbu(), &d, &c).unwrap();
        assert_eq!(count_flops(&unpooled) - 640, 4 * (count_flops(&graph) - 640));
    }

    #[test]
    fn conv_macs() {
        let layer = Layer::conv(3, 16, 1);
        assert_eq!(layer.macs(Shape { c: 16, h: 32, w: 32 }), 49_152);
        assert_eq!(Layer::pool(PoolKind::Mean).macs(Shape { c: 3, h: 16, w: 16 }), 0);
    }

    #[test]
    fn decode_rejects_invalid_genome() {
        let (d, c) = cifar();
        let bad = Genome::new(vec![Unit::Rbu {
            amount: 1,
            in_channels: 5,
            out_channels: 64,
        }]);
        assert!(matches!(
            decode(&bad, &d, &c),
            Err(CompileError::InvalidGenome(_))
        ));
    }

    #[test]
    fn architecture_json_round_trip() {
        let (d, c) = cifar();
        let graph = decode(&single_rbu(), &d, &c).unwrap();
        let text = export(&graph, ExportFormat::ArchitectureJson);
        assert!(text.starts_with(concat!(
            r#"{"input":{"c":3,"h":32,"w":32},"classes":10,"nodes":["#,
            r#"{"id":0,"kind":"input","params":{"c":3,"h":32,"w":32},"inputs":[]},"#,
            r#"{"id":1,"kind":"conv","params":{"in_channels":3,"out_channels":16,"kernel":[1,1],"stride":1,"padding":0},"inputs":[0]}"#
        )), "{text}");
        assert!(text.ends_with(r#""output":7}"#), "{text}");
        let doc = ArchitectureDoc::from_json(&text).unwrap();
        let back = LayerGraph::from_document(&doc).unwrap();
        assert_eq!(back, graph);
        assert_eq!(export(&back, ExportFormat::ArchitectureJson), text);
    }

    #[test]
    fn document_with_bad_channels_rejected() {
        let (d, c) = cifar();
        let graph = decode(&single_rbu(), &d, &c).unwrap();
        let mut doc = graph.to_document();
        doc.nodes[2].layer = Layer::conv(17, 16, 3);
        assert!(LayerGraph::from_document(&doc).is_err());
        let unknown = graph
            .to_document()
            .to_json()
            .replacen("\"kind\":\"add\"", "\"kind\":\"gelu\"", 1);
        assert!(ArchitectureDoc::from_json(&unknown).is_err());
    }

    #[test]
    fn dot_has_one_line_per_node() {
        let (d, c) = cifar();
        let graph = decode(&single_rbu(), &d, &c).unwrap();
        let dot = export(&graph, ExportFormat::DotGraph);
        let nodes = dot.lines().filter(|l| l.contains("[label=")).count();
        assert_eq!(nodes, graph.nodes.len());
        let edges = dot
            .lines()
            .filter(|l| l.contains("->") && !l.contains("label"))
            .count();
        assert_eq!(edges, graph.nodes.iter().map(|n| n.inputs.len()).sum::<usize>());
    }

    #[test]
    fn unknown_export_format() {
        assert!(matches!(
            "onnx".parse::<ExportFormat>(),
            Err(CompileError::UnknownFormat(_))
        ));
    }
}
