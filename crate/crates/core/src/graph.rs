//! Graph models and the graph-convolution primitive shared by both
//! rectification modules.

use crate::autodiff::{Tape, Var};
use crate::error::{contract, Result};
use crate::scalar::Scalar;

/// Semantic level of a graph model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GraphLevel {
    Low,
    High,
}

/// Node features `X [n×d]` and adjacency `A [n×n]` recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GraphModel {
    pub nodes: Var,
    pub adjacency: Var,
    pub level: GraphLevel,
}

impl GraphModel {
    pub fn new<T: Scalar>(tape: &Tape<T>, nodes: Var, adjacency: Var, level: GraphLevel) -> Result<Self> {
        let (n, _) = tape.value(nodes).dims2()?;
        let (r, c) = tape.value(adjacency).dims2()?;
        if r != c || r != n {
            return Err(contract!("adjacency [{r}x{c}] does not fit {n} graph nodes"));
        }
        Ok(Self { nodes, adjacency, level })
    }

    pub fn node_count<T: Scalar>(&self, tape: &Tape<T>) -> usize {
        tape.shape(self.nodes)[0]
    }

    pub fn node_dim<T: Scalar>(&self, tape: &Tape<T>) -> usize {
        tape.shape(self.nodes)[1]
    }
}

/// `A·X·W`, optionally followed by ReLU.
pub fn graph_convolve<T: Scalar>(tape: &mut Tape<T>, g: &GraphModel, weight: Var, relu: bool) -> Result<Var> {
    let ax = tape.matmul(g.adjacency, g.nodes)?;
    let z = tape.matmul(ax, weight)?;
    if relu {
        tape.relu(z)
    } else {
        Ok(z)
    }
}

/// `(A + Aᵀ) / 2`.
pub fn symmetrize<T: Scalar>(tape: &mut Tape<T>, a: Var) -> Result<Var> {
    let (r, c) = tape.value(a).dims2()?;
    if r != c {
        return Err(contract!("symmetrize needs a square matrix, got [{r}x{c}]"));
    }
    let at = tape.transpose(a)?;
    let s = tape.add(a, at)?;
    tape.scale(s, T::of(0.5))
}

/// Row-wise softmax of the feature similarity `X·Xᵀ`.
pub fn data_adjacency<T: Scalar>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    tape.value(x).ensure_finite("graph node features")?;
    let xt = tape.transpose(x)?;
    let sim = tape.matmul(x, xt)?;
    tape.row_softmax(sim)
}
