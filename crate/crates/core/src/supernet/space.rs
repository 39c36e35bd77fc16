use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::SupernetError;

/// Candidate operation on a cell edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Skip,
    Zero,
    Noise,
    LinearRelu,
    LinearTanh,
    LinearSigmoid,
}

impl OpKind {
    pub const ALL: [OpKind; 6] = [
        OpKind::Skip,
        OpKind::Zero,
        OpKind::Noise,
        OpKind::LinearRelu,
        OpKind::LinearTanh,
        OpKind::LinearSigmoid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Skip => "skip",
            OpKind::Zero => "zero",
            OpKind::Noise => "noise",
            OpKind::LinearRelu => "linear_relu",
            OpKind::LinearTanh => "linear_tanh",
            OpKind::LinearSigmoid => "linear_sigmoid",
        }
    }

    /// True when the op owns no trainable tensors.
    pub fn is_parameter_free(self) -> bool {
        matches!(self, OpKind::Skip | OpKind::Zero | OpKind::Noise)
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OpKind {
    type Err = SupernetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        OpKind::ALL
            .into_iter()
            .find(|op| op.name() == s)
            .ok_or_else(|| SupernetError::UnknownOp(s.to_string()))
    }
}

fn default_inputs() -> usize {
    2
}

/// A single cell: two input nodes, `num_intermediate` hidden nodes and an
/// implicit output node averaging every intermediate node.
///
/// Node ids: `0, 1` are inputs, `2 .. 2 + num_intermediate` are intermediate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSpace {
    #[serde(default = "default_inputs")]
    pub num_input_nodes: usize,
    pub num_intermediate: usize,
    pub edges: Vec<(usize, usize)>,
    pub corpus: Vec<OpKind>,
    pub feature_width: usize,
}

impl CellSpace {
    pub fn new(
        num_intermediate: usize,
        edges: Vec<(usize, usize)>,
        corpus: Vec<OpKind>,
        feature_width: usize,
    ) -> Result<Self, SupernetError> {
        let space = Self {
            num_input_nodes: 2,
            num_intermediate,
            edges,
            corpus,
            feature_width,
        };
        space.validate()?;
        Ok(space)
    }

    /// Every intermediate node takes every earlier node, as in a DARTS cell.
    pub fn dense(
        num_intermediate: usize,
        corpus: Vec<OpKind>,
        feature_width: usize,
    ) -> Result<Self, SupernetError> {
        let mut edges = Vec::new();
        for to in 2..2 + num_intermediate {
            for from in 0..to {
                edges.push((from, to));
            }
        }
        Self::new(num_intermediate, edges, corpus, feature_width)
    }

    pub fn validate(&self) -> Result<(), SupernetError> {
        let invalid = |msg: String| Err(SupernetError::InvalidSpace(msg));
        if self.num_input_nodes != 2 {
            return invalid(format!(
                "num_input_nodes must be 2, got {}",
                self.num_input_nodes
            ));
        }
        if self.num_intermediate == 0 {
            return invalid("need at least one intermediate node".into());
        }
        if self.corpus.is_empty() {
            return invalid("operation corpus is empty".into());
        }
        let mut seen_ops = self.corpus.clone();
        seen_ops.sort();
        seen_ops.dedup();
        if seen_ops.len() != self.corpus.len() {
            return invalid("operation corpus contains duplicates".into());
        }
        if self.feature_width == 0 {
            return invalid("feature_width must be positive".into());
        }
        let end = self.num_input_nodes + self.num_intermediate;
        let mut incoming = vec![0usize; end];
        for (i, &(from, to)) in self.edges.iter().enumerate() {
            if from >= to || to < self.num_input_nodes || to >= end {
                return invalid(format!("edge {i} ({from}, {to}) breaks node ordering"));
            }
            if self.edges[..i].contains(&(from, to)) {
                return invalid(format!("duplicate edge ({from}, {to})"));
            }
            incoming[to] += 1;
        }
        for node in self.num_input_nodes..end {
            if incoming[node] == 0 {
                return invalid(format!("intermediate node {node} has no incoming edge"));
            }
        }
        Ok(())
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn num_ops(&self) -> usize {
        self.corpus.len()
    }

    /// Length of the flattened architecture vector.
    pub fn arch_dim(&self) -> usize {
        self.num_edges() * self.num_ops()
    }

    pub fn output_node(&self) -> usize {
        self.num_input_nodes + self.num_intermediate
    }

    pub fn intermediate_nodes(&self) -> std::ops::Range<usize> {
        self.num_input_nodes..self.num_input_nodes + self.num_intermediate
    }

    /// Corpus indices of the ops that own parameters.
    pub fn parametric_ops(&self) -> Vec<usize> {
        self.corpus
            .iter()
            .enumerate()
            .filter(|(_, op)| !op.is_parameter_free())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn op_index(&self, op: OpKind) -> Option<usize> {
        self.corpus.iter().position(|&o| o == op)
    }

    /// Number of discrete architectures, `None` on overflow.
    pub fn num_architectures(&self) -> Option<usize> {
        let mut total: usize = 1;
        for _ in 0..self.num_edges() {
            total = total.checked_mul(self.num_ops())?;
        }
        Some(total)
    }
}

/// Unconstrained per-edge logits, flattened edge-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchWeights {
    num_edges: usize,
    num_ops: usize,
    values: Vec<f64>,
}

impl ArchWeights {
    pub fn zeros(space: &CellSpace) -> Self {
        Self {
            num_edges: space.num_edges(),
            num_ops: space.num_ops(),
            values: vec![0.0; space.arch_dim()],
        }
    }

    /// `1e-3 * N(0, 1)` initialization.
    pub fn init<R: Rng + ?Sized>(space: &CellSpace, rng: &mut R) -> Self {
        let mut a = Self::zeros(space);
        for v in &mut a.values {
            let z: f64 = StandardNormal.sample(rng);
            *v = 1e-3 * z;
        }
        a
    }

    pub fn from_flat(space: &CellSpace, values: Vec<f64>) -> Result<Self, SupernetError> {
        if values.len() != space.arch_dim() {
            return Err(SupernetError::LengthMismatch {
                what: "architecture weights",
                expected: space.arch_dim(),
                got: values.len(),
            });
        }
        Ok(Self {
            num_edges: space.num_edges(),
            num_ops: space.num_ops(),
            values,
        })
    }

    pub fn from_edges(edges: Vec<Vec<f64>>) -> Result<Self, SupernetError> {
        let num_ops = edges.first().map_or(0, Vec::len);
        if let Some(bad) = edges.iter().find(|e| e.len() != num_ops) {
            return Err(SupernetError::LengthMismatch {
                what: "architecture edge",
                expected: num_ops,
                got: bad.len(),
            });
        }
        Ok(Self {
            num_edges: edges.len(),
            num_ops,
            values: edges.into_iter().flatten().collect(),
        })
    }

    pub fn num_edges(&self) -> usize {
        self.num_edges
    }

    pub fn num_ops(&self) -> usize {
        self.num_ops
    }

    pub fn edge(&self, e: usize) -> &[f64] {
        &self.values[e * self.num_ops..(e + 1) * self.num_ops]
    }

    pub fn edge_mut(&mut self, e: usize) -> &mut [f64] {
        &mut self.values[e * self.num_ops..(e + 1) * self.num_ops]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn matches(&self, space: &CellSpace) -> bool {
        self.num_edges == space.num_edges() && self.num_ops == space.num_ops()
    }
}

/// One chosen corpus index per edge.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DiscreteArch {
    ops: Vec<usize>,
}

impl DiscreteArch {
    pub fn new(space: &CellSpace, ops: Vec<usize>) -> Result<Self, SupernetError> {
        if ops.len() != space.num_edges() {
            return Err(SupernetError::LengthMismatch {
                what: "discrete architecture",
                expected: space.num_edges(),
                got: ops.len(),
            });
        }
        if let Some(&bad) = ops.iter().find(|&&o| o >= space.num_ops()) {
            return Err(SupernetError::OpIndex {
                index: bad,
                corpus: space.num_ops(),
            });
        }
        Ok(Self { ops })
    }

    pub(crate) fn from_ops_unchecked(ops: Vec<usize>) -> Self {
        Self { ops }
    }

    pub fn ops(&self) -> &[usize] {
        &self.ops
    }

    pub fn op(&self, edge: usize) -> usize {
        self.ops[edge]
    }

    /// Dash-separated op indices, e.g. `"3-0-5"`.
    pub fn encoding(&self) -> String {
        self.ops
            .iter()
            .map(|o| o.to_string())
            .collect::<Vec<_>>()
            .join("-")
    }

    pub fn parse_encoding(space: &CellSpace, s: &str) -> Result<Self, SupernetError> {
        let ops = s
            .split('-')
            .map(|t| {
                t.trim()
                    .parse::<usize>()
                    .map_err(|_| SupernetError::BadEncoding(s.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(space, ops)
    }

    /// The `(edge, op_name)` listing used in files.
    pub fn listing(&self, space: &CellSpace) -> Vec<((usize, usize), String)> {
        space
            .edges
            .iter()
            .zip(&self.ops)
            .map(|(&edge, &op)| (edge, space.corpus[op].name().to_string()))
            .collect()
    }

    pub fn from_listing(
        space: &CellSpace,
        listing: &[((usize, usize), String)],
    ) -> Result<Self, SupernetError> {
        let mut ops = vec![usize::MAX; space.num_edges()];
        for (edge, name) in listing {
            let e = space
                .edges
                .iter()
                .position(|x| x == edge)
                .ok_or(SupernetError::UnknownEdge(edge.0, edge.1))?;
            let op: OpKind = name.parse()?;
            ops[e] = space
                .op_index(op)
                .ok_or_else(|| SupernetError::UnknownOp(name.clone()))?;
        }
        Self::new(space, ops)
    }

    /// One-hot mixture weights, flattened edge-major.
    pub fn one_hot(&self, space: &CellSpace) -> Vec<f64> {
        let k = space.num_ops();
        let mut out = vec![0.0; self.ops.len() * k];
        for (e, &o) in self.ops.iter().enumerate() {
            out[e * k + o] = 1.0;
        }
        out
    }

    pub fn uses(&self, space: &CellSpace, op: OpKind) -> bool {
        self.ops.iter().any(|&o| space.corpus[o] == op)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space() -> CellSpace {
        CellSpace::new(
            3,
            vec![(0, 2), (1, 3), (2, 4)],
            OpKind::ALL.to_vec(),
            4,
        )
        .unwrap()
    }

    #[test]
    fn validation_rejects_bad_topologies() {
        let ops = vec![OpKind::Skip];
        assert!(CellSpace::new(2, vec![(0, 2)], ops.clone(), 4).is_err());
        assert!(CellSpace::new(1, vec![(2, 2)], ops.clone(), 4).is_err());
        assert!(CellSpace::new(1, vec![(0, 2), (0, 2)], ops.clone(), 4).is_err());
        assert!(CellSpace::new(1, vec![(0, 2)], vec![], 4).is_err());
        assert!(CellSpace::new(1, vec![(0, 2)], ops, 0).is_err());
    }

    #[test]
    fn dense_cell_edge_count() {
        let s = CellSpace::dense(4, vec![OpKind::Skip], 2).unwrap();
        assert_eq!(s.num_edges(), 2 + 3 + 4 + 5);
    }

    #[test]
    fn encoding_and_listing_round_trip() {
        let s = space();
        let arch = DiscreteArch::new(&s, vec![3, 0, 5]).unwrap();
        assert_eq!(arch.encoding(), "3-0-5");
        assert_eq!(DiscreteArch::parse_encoding(&s, "3-0-5").unwrap(), arch);
        let listing = arch.listing(&s);
        assert_eq!(listing[0], ((0, 2), "linear_relu".to_string()));
        assert_eq!(DiscreteArch::from_listing(&s, &listing).unwrap(), arch);
        assert!(DiscreteArch::new(&s, vec![6, 0, 0]).is_err());
        assert!(DiscreteArch::parse_encoding(&s, "1-x-0").is_err());
    }

    #[test]
    fn op_names_parse() {
        for op in OpKind::ALL {
            assert_eq!(op.name().parse::<OpKind>().unwrap(), op);
        }
        assert!("conv3x3".parse::<OpKind>().is_err());
    }
}
