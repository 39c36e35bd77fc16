use serde::{Deserialize, Serialize};

use super::space::{CellSpace, DiscreteArch, OpKind};
use super::SupernetError;

/// Share of edges whose chosen op is parameter-free.
pub fn param_free_proportion(space: &CellSpace, arch: &DiscreteArch) -> f64 {
    if arch.ops().is_empty() {
        return 0.0;
    }
    let free = arch
        .ops()
        .iter()
        .filter(|&&o| space.corpus[o].is_parameter_free())
        .count();
    free as f64 / arch.ops().len() as f64
}

/// Connection pattern of a cell with an explicit output node.
///
/// Node ids: inputs `0..num_inputs`, intermediate nodes next, output last.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellTopology {
    pub num_inputs: usize,
    pub num_intermediate: usize,
    pub edges: Vec<(usize, usize)>,
}

/// Width in multiples of the node width `c`, and depth in connections.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WidthDepth {
    pub width: f64,
    pub depth: usize,
}

impl CellTopology {
    pub fn new(
        num_inputs: usize,
        num_intermediate: usize,
        edges: Vec<(usize, usize)>,
    ) -> Result<Self, SupernetError> {
        let out = num_inputs + num_intermediate;
        for &(from, to) in &edges {
            if from >= to || to > out || to < num_inputs || from >= out {
                return Err(SupernetError::InvalidSpace(format!(
                    "topology edge ({from}, {to}) is not forward"
                )));
            }
        }
        Ok(Self {
            num_inputs,
            num_intermediate,
            edges,
        })
    }

    /// Edges surviving discretization (zero ops removed) plus one
    /// connection from every intermediate node to the output.
    pub fn from_arch(space: &CellSpace, arch: &DiscreteArch) -> Self {
        let out = space.output_node();
        let mut edges: Vec<(usize, usize)> = space
            .edges
            .iter()
            .zip(arch.ops())
            .filter(|(_, &op)| space.corpus[op] != OpKind::Zero)
            .map(|(&e, _)| e)
            .collect();
        edges.extend(space.intermediate_nodes().map(|j| (j, out)));
        Self {
            num_inputs: space.num_input_nodes,
            num_intermediate: space.num_intermediate,
            edges,
        }
    }

    pub fn output_node(&self) -> usize {
        self.num_inputs + self.num_intermediate
    }

    /// Longest input-to-output path length, 0 when the output is unreachable.
    pub fn depth(&self) -> usize {
        let n = self.output_node() + 1;
        let mut dist: Vec<Option<usize>> = vec![None; n];
        for d in dist.iter_mut().take(self.num_inputs) {
            *d = Some(0);
        }
        let mut edges = self.edges.clone();
        edges.sort_by_key(|&(from, to)| (to, from));
        for (from, to) in edges {
            if let Some(d) = dist[from] {
                dist[to] = Some(dist[to].map_or(d + 1, |cur| cur.max(d + 1)));
            }
        }
        dist[n - 1].unwrap_or(0)
    }

    /// Sum over intermediate nodes fed by an input of the fraction of their
    /// incoming connections that come from inputs.
    pub fn width(&self) -> f64 {
        (self.num_inputs..self.output_node())
            .map(|j| {
                let incoming: Vec<usize> = self
                    .edges
                    .iter()
                    .filter(|&&(_, to)| to == j)
                    .map(|&(from, _)| from)
                    .collect();
                let from_inputs = incoming.iter().filter(|&&f| f < self.num_inputs).count();
                if from_inputs == 0 {
                    0.0
                } else {
                    from_inputs as f64 / incoming.len() as f64
                }
            })
            .sum()
    }
}

pub fn cell_width_depth(topology: &CellTopology) -> WidthDepth {
    WidthDepth {
        width: topology.width(),
        depth: topology.depth(),
    }
}
