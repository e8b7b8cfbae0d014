//! Summing structure of a hierarchical series collection.
//!
//! A hierarchy over `m` series with `n` bottom (childless) series is encoded
//! by the `m x n` summing matrix
//!
//! ```text
//! S = [ C ]      C: (m - n) x n   aggregation rows
//!     [ I ]      I: n x n         identity over bottom series
//! ```
//!
//! Rows follow the canonical node order: aggregates breadth-first from the
//! roots (top level first, ties by first appearance in the input), then
//! bottom nodes in input order. A vector `y` of observations in that order is
//! *coherent* when `y = S b` for some bottom vector `b`, equivalently when
//! `S_perp' y = 0` with
//!
//! ```text
//! S_perp = [ I    ]      basis of the orthogonal complement of col(S),
//!          [ -C'  ]      an m x (m - n) matrix with S_perp' S = 0
//! ```
//!
//! All entries of `S` and `S_perp` are small integers, so products with
//! integer-valued data are exact in `f64`.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Node identifiers, levels, and the summing algebra of one hierarchy.
#[derive(Debug, Clone)]
pub struct Hierarchy {
    nodes: Vec<String>,
    index: HashMap<String, usize>,
    parent: Vec<Option<usize>>,
    level: Vec<usize>,
    aggregate_count: usize,
    s: DMatrix<f64>,
    s_perp: DMatrix<f64>,
}

impl Hierarchy {
    /// Builds a hierarchy from `(child, parent)` declarations.
    ///
    /// A `None` parent declares a root. Nodes that appear only on the parent
    /// side are implicit roots. Each child may be declared once; the parent
    /// relation must be acyclic and reach every node from some root.
    pub fn from_edges(edges: &[(String, Option<String>)]) -> Result<Hierarchy> {
        if edges.is_empty() {
            return Err(Error::EmptyInput("hierarchy has no edges".into()));
        }

        let mut appearance: Vec<String> = Vec::new();
        let mut seen: HashMap<String, usize> = HashMap::new();
        let mut note = |name: &str, appearance: &mut Vec<String>| {
            if !seen.contains_key(name) {
                seen.insert(name.to_string(), appearance.len());
                appearance.push(name.to_string());
            }
        };

        let mut declared_parent: HashMap<&str, Option<&str>> = HashMap::new();
        let mut children: HashMap<&str, Vec<&str>> = HashMap::new();
        for (child, parent) in edges {
            if child.is_empty() {
                return Err(Error::InvalidParameter("empty node identifier".into()));
            }
            note(child, &mut appearance);
            if declared_parent
                .insert(child.as_str(), parent.as_deref())
                .is_some()
            {
                return Err(Error::DuplicateNode(child.clone()));
            }
            if let Some(p) = parent {
                if p == child {
                    return Err(Error::CycleDetected(child.clone()));
                }
                note(p, &mut appearance);
                children.entry(p.as_str()).or_default().push(child.as_str());
            }
        }

        let roots: Vec<&str> = appearance
            .iter()
            .map(String::as_str)
            .filter(|name| matches!(declared_parent.get(name), None | Some(None)))
            .collect();
        if roots.is_empty() {
            return Err(Error::CycleDetected(appearance[0].clone()));
        }

        // Breadth-first sweep assigns levels and orders the aggregates.
        let mut level_of: HashMap<&str, usize> = HashMap::new();
        let mut queue: std::collections::VecDeque<&str> = roots.iter().copied().collect();
        for root in &roots {
            level_of.insert(root, 0);
        }
        let mut bfs_order: Vec<&str> = Vec::new();
        while let Some(node) = queue.pop_front() {
            bfs_order.push(node);
            if let Some(kids) = children.get(node) {
                for kid in kids {
                    if level_of.contains_key(kid) {
                        return Err(Error::CycleDetected((*kid).to_string()));
                    }
                    level_of.insert(kid, level_of[node] + 1);
                    queue.push_back(kid);
                }
            }
        }
        if bfs_order.len() != appearance.len() {
            let stranded = appearance
                .iter()
                .find(|name| !level_of.contains_key(name.as_str()))
                .expect("some node is unreached");
            return Err(Error::CycleDetected(stranded.clone()));
        }

        let aggregates: Vec<&str> = bfs_order
            .iter()
            .copied()
            .filter(|n| children.contains_key(n))
            .collect();
        let bottoms: Vec<&str> = appearance
            .iter()
            .map(String::as_str)
            .filter(|n| !children.contains_key(n))
            .collect();

        let nodes: Vec<String> = aggregates
            .iter()
            .chain(bottoms.iter())
            .map(|s| s.to_string())
            .collect();
        let index: HashMap<String, usize> = nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();

        let m = nodes.len();
        let n = bottoms.len();
        let mut s = DMatrix::<f64>::zeros(m, n);
        for (j, bottom) in bottoms.iter().enumerate() {
            s[(index[*bottom], j)] = 1.0;
            let mut walk = *bottom;
            while let Some(Some(p)) = declared_parent.get(walk) {
                s[(index[*p], j)] = 1.0;
                walk = p;
            }
        }

        let parent = nodes
            .iter()
            .map(|node| {
                declared_parent
                    .get(node.as_str())
                    .copied()
                    .flatten()
                    .map(|p| index[p])
            })
            .collect();
        let level = nodes.iter().map(|node| level_of[node.as_str()]).collect();

        Ok(Hierarchy::assemble(
            nodes,
            index,
            parent,
            level,
            m - n,
            s,
        ))
    }

    /// Builds a hierarchy from an explicit aggregation matrix `c`.
    ///
    /// `names` lists the aggregate series (rows of `c`) followed by the
    /// bottom series (columns of `c`). This admits general linear
    /// constraints, not only 0/1 trees; levels degenerate to aggregate = 0,
    /// bottom = 1.
    pub fn from_constraints(names: Vec<String>, c: DMatrix<f64>) -> Result<Hierarchy> {
        let (rows, cols) = c.shape();
        if names.len() != rows + cols {
            return Err(Error::DimensionMismatch(format!(
                "{} names for a {}x{} aggregation matrix (need {})",
                names.len(),
                rows,
                cols,
                rows + cols
            )));
        }
        if cols == 0 {
            return Err(Error::EmptyInput("no bottom series".into()));
        }
        let mut index = HashMap::new();
        for (i, name) in names.iter().enumerate() {
            if index.insert(name.clone(), i).is_some() {
                return Err(Error::DuplicateNode(name.clone()));
            }
        }
        let m = rows + cols;
        let mut s = DMatrix::<f64>::zeros(m, cols);
        s.view_mut((0, 0), (rows, cols)).copy_from(&c);
        s.view_mut((rows, 0), (cols, cols))
            .copy_from(&DMatrix::identity(cols, cols));
        let level = (0..m).map(|i| usize::from(i >= rows)).collect();
        Ok(Hierarchy::assemble(
            names,
            index,
            vec![None; m],
            level,
            rows,
            s,
        ))
    }

    fn assemble(
        nodes: Vec<String>,
        index: HashMap<String, usize>,
        parent: Vec<Option<usize>>,
        level: Vec<usize>,
        aggregate_count: usize,
        s: DMatrix<f64>,
    ) -> Hierarchy {
        let m = s.nrows();
        let n = s.ncols();
        let mut s_perp = DMatrix::<f64>::zeros(m, aggregate_count);
        for i in 0..aggregate_count {
            s_perp[(i, i)] = 1.0;
        }
        for i in 0..aggregate_count {
            for j in 0..n {
                s_perp[(aggregate_count + j, i)] = -s[(i, j)];
            }
        }
        Hierarchy {
            nodes,
            index,
            parent,
            level,
            aggregate_count,
            s,
            s_perp,
        }
    }

    /// Total number of series, aggregates plus bottom.
    pub fn m(&self) -> usize {
        self.s.nrows()
    }

    /// Number of bottom series.
    pub fn n(&self) -> usize {
        self.s.ncols()
    }

    pub fn aggregate_count(&self) -> usize {
        self.aggregate_count
    }

    /// Node names in canonical order (aggregates, then bottom).
    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn bottom_nodes(&self) -> &[String] {
        &self.nodes[self.aggregate_count..]
    }

    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    /// Depth of each node, roots at level 0, in canonical node order.
    pub fn levels(&self) -> &[usize] {
        &self.level
    }

    pub fn parent_of(&self, node: usize) -> Option<usize> {
        self.parent[node]
    }

    /// The summing matrix `S = [C; I]`, `m x n`.
    pub fn summing_matrix(&self) -> &DMatrix<f64> {
        &self.s
    }

    /// The aggregation block `C`, `(m - n) x n`.
    pub fn aggregation_matrix(&self) -> DMatrix<f64> {
        self.s.rows(0, self.aggregate_count).into_owned()
    }

    /// Basis of the orthogonal complement of `col(S)`: `S_perp' S = 0`.
    pub fn null_space_basis(&self) -> &DMatrix<f64> {
        &self.s_perp
    }

    /// `P * S_perp` for a `T x m` panel of observations in canonical node
    /// order; row `t` holds the aggregation defects of observation `t`.
    pub fn coherency_residual(&self, panel: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if panel.ncols() != self.m() {
            return Err(Error::DimensionMismatch(format!(
                "panel has {} columns, hierarchy has {} series",
                panel.ncols(),
                self.m()
            )));
        }
        Ok(panel * &self.s_perp)
    }

    /// Largest aggregation defect relative to the scale of the data,
    /// `max|P S_perp| / max(1, max|P|)`.
    pub fn max_relative_residual(&self, panel: &DMatrix<f64>) -> Result<f64> {
        let residual = self.coherency_residual(panel)?;
        let scale = panel.iter().fold(1.0_f64, |acc, v| acc.max(v.abs()));
        Ok(residual.iter().fold(0.0_f64, |acc, v| acc.max(v.abs())) / scale)
    }

    /// Relative aggregation defect of a single observation vector.
    pub fn vector_residual(&self, y: &DVector<f64>) -> Result<f64> {
        if y.len() != self.m() {
            return Err(Error::DimensionMismatch(format!(
                "vector has {} entries, hierarchy has {} series",
                y.len(),
                self.m()
            )));
        }
        let residual = self.s_perp.transpose() * y;
        let scale = y.iter().fold(1.0_f64, |acc, v| acc.max(v.abs()));
        Ok(residual.amax() / scale)
    }

    pub fn is_coherent(&self, panel: &DMatrix<f64>, tol: f64) -> Result<bool> {
        Ok(self.max_relative_residual(panel)? <= tol)
    }

    /// Coherent panel from bottom observations: rows `b_t' S'`.
    pub fn aggregate_bottom(&self, bottom: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if bottom.ncols() != self.n() {
            return Err(Error::DimensionMismatch(format!(
                "bottom panel has {} columns, hierarchy has {} bottom series",
                bottom.ncols(),
                self.n()
            )));
        }
        Ok(bottom * self.s.transpose())
    }
}
