use crate::env2d::Config2D;

/// A rooted tree of configurations. Node 0 is the root.
#[derive(Clone, Debug, PartialEq)]
pub struct Tree {
    nodes: Vec<Config2D>,
    parents: Vec<Option<usize>>,
}

impl Tree {
    pub fn new(root: Config2D) -> Self {
        Self { nodes: vec![root], parents: vec![None] }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, i: usize) -> Config2D {
        self.nodes[i]
    }

    pub fn nodes(&self) -> &[Config2D] {
        &self.nodes
    }

    pub fn parent(&self, i: usize) -> Option<usize> {
        self.parents[i]
    }

    pub fn add(&mut self, q: Config2D, parent: usize) -> usize {
        assert!(parent < self.nodes.len(), "parent {parent} out of range");
        self.nodes.push(q);
        self.parents.push(Some(parent));
        self.nodes.len() - 1
    }

    /// Exact Euclidean nearest node by linear scan; ties go to the lowest index.
    pub fn nearest(&self, q: Config2D) -> usize {
        nearest_linear(&self.nodes, q).expect("nearest on an empty tree")
    }

    /// Root-to-`i` chain of configurations.
    pub fn path_to(&self, mut i: usize) -> Vec<Config2D> {
        let mut out = vec![self.nodes[i]];
        while let Some(p) = self.parents[i] {
            out.push(self.nodes[p]);
            i = p;
        }
        out.reverse();
        out
    }
}

pub(crate) fn nearest_linear(nodes: &[Config2D], q: Config2D) -> Option<usize> {
    let mut best: Option<(f64, usize)> = None;
    for (i, n) in nodes.iter().enumerate() {
        let d = n.distance_sq(q);
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, i));
        }
    }
    best.map(|(_, i)| i)
}
