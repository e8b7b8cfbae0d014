//! Time-indexed observation panels.
//!
//! A [`PanelMatrix`] is a dense `T x k` block of observations with one column
//! per named series and one row per time label. Labels are opaque strings;
//! ordering uses numeric comparison when every label parses as an integer and
//! falls back to lexicographic order (which is chronological for ISO-8601
//! timestamps).

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::hierarchy::Hierarchy;

#[derive(Debug, Clone)]
pub struct PanelMatrix {
    values: DMatrix<f64>,
    columns: Vec<String>,
    times: Vec<String>,
}

/// Chronological comparison of time labels: numeric when both sides parse as
/// integers, lexicographic otherwise.
pub fn compare_time_labels(a: &str, b: &str) -> std::cmp::Ordering {
    match (a.parse::<i64>(), b.parse::<i64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y),
        _ => a.cmp(b),
    }
}

impl PanelMatrix {
    /// Validates shapes and content; rows must already be in chronological
    /// order (use [`PanelMatrix::sorted`] on unsorted input).
    pub fn new(values: DMatrix<f64>, columns: Vec<String>, times: Vec<String>) -> Result<Self> {
        if values.ncols() != columns.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} value columns, {} column names",
                values.ncols(),
                columns.len()
            )));
        }
        if values.nrows() != times.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} value rows, {} time labels",
                values.nrows(),
                times.len()
            )));
        }
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::EmptyInput("panel has no observations".into()));
        }
        let mut names = std::collections::HashSet::new();
        for c in &columns {
            if !names.insert(c.as_str()) {
                return Err(Error::DuplicateNode(c.clone()));
            }
        }
        for w in times.windows(2) {
            match compare_time_labels(&w[0], &w[1]) {
                std::cmp::Ordering::Less => {}
                std::cmp::Ordering::Equal => {
                    return Err(Error::InvalidParameter(format!(
                        "duplicate time label {:?}",
                        w[0]
                    )))
                }
                std::cmp::Ordering::Greater => {
                    return Err(Error::InvalidParameter(format!(
                        "time labels out of order: {:?} before {:?}",
                        w[0], w[1]
                    )))
                }
            }
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "non-finite observation {bad}"
            )));
        }
        Ok(PanelMatrix {
            values,
            columns,
            times,
        })
    }

    /// As [`PanelMatrix::new`], but sorts rows chronologically first.
    pub fn sorted(values: DMatrix<f64>, columns: Vec<String>, times: Vec<String>) -> Result<Self> {
        let mut order: Vec<usize> = (0..times.len()).collect();
        order.sort_by(|&a, &b| compare_time_labels(&times[a], &times[b]));
        let sorted_values = DMatrix::from_fn(values.nrows(), values.ncols(), |r, c| {
            values[(order[r], c)]
        });
        let sorted_times = order.iter().map(|&i| times[i].clone()).collect();
        PanelMatrix::new(sorted_values, columns, sorted_times)
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn times(&self) -> &[String] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn time_position(&self, label: &str) -> Option<usize> {
        self.times.iter().position(|t| t == label)
    }

    /// Reorders columns into the hierarchy's canonical node order. Every
    /// hierarchy node must be present; extra columns are rejected.
    pub fn align_to(&self, hierarchy: &Hierarchy) -> Result<PanelMatrix> {
        if self.columns.len() != hierarchy.m() {
            return Err(Error::DimensionMismatch(format!(
                "panel has {} series, hierarchy has {}",
                self.columns.len(),
                hierarchy.m()
            )));
        }
        for c in &self.columns {
            if hierarchy.node_index(c).is_none() {
                return Err(Error::UnknownNode(c.clone()));
            }
        }
        let positions: Vec<usize> = hierarchy
            .nodes()
            .iter()
            .map(|n| {
                self.columns
                    .iter()
                    .position(|c| c == n)
                    .ok_or_else(|| Error::UnknownNode(n.clone()))
            })
            .collect::<Result<_>>()?;
        let values = DMatrix::from_fn(self.values.nrows(), hierarchy.m(), |r, c| {
            self.values[(r, positions[c])]
        });
        Ok(PanelMatrix {
            values,
            columns: hierarchy.nodes().to_vec(),
            times: self.times.clone(),
        })
    }

    /// Contiguous row range `[start, end)` as a new panel.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<PanelMatrix> {
        if start >= end || end > self.len() {
            return Err(Error::InvalidParameter(format!(
                "row range {start}..{end} out of bounds for panel of length {}",
                self.len()
            )));
        }
        Ok(PanelMatrix {
            values: self.values.rows(start, end - start).into_owned(),
            columns: self.columns.clone(),
            times: self.times[start..end].to_vec(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn integer_labels_sort_numerically() {
        let values = DMatrix::from_row_slice(3, 1, &[2.0, 0.0, 1.0]);
        let p = PanelMatrix::sorted(values, names(&["x"]), names(&["10", "2", "9"])).unwrap();
        assert_eq!(p.times(), &["2", "9", "10"]);
        assert_eq!(p.values()[(0, 0)], 0.0);
        assert_eq!(p.values()[(2, 0)], 2.0);
    }

    #[test]
    fn iso_labels_sort_lexicographically() {
        let values = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        let p = PanelMatrix::sorted(
            values,
            names(&["x"]),
            names(&["2001-02-01", "2001-01-01"]),
        )
        .unwrap();
        assert_eq!(p.times(), &["2001-01-01", "2001-02-01"]);
    }

    #[test]
    fn rejects_duplicate_times_and_columns() {
        let values = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        let err =
            PanelMatrix::new(values.clone(), names(&["x"]), names(&["1", "1"])).unwrap_err();
        assert!(matches!(err, Error::InvalidParameter(_)));

        let values = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        let err = PanelMatrix::new(values, names(&["x", "x"]), names(&["1"])).unwrap_err();
        assert!(matches!(err, Error::DuplicateNode(_)));
    }

    #[test]
    fn rejects_non_finite_values() {
        let values = DMatrix::from_row_slice(1, 1, &[f64::NAN]);
        let err = PanelMatrix::new(values, names(&["x"]), names(&["1"])).unwrap_err();
        assert!(matches!(err, Error::InvalidParameter(_)));
    }

    #[test]
    fn aligns_columns_to_hierarchy_order() {
        let h = Hierarchy::from_edges(&[
            ("Total".into(), None),
            ("A".into(), Some("Total".into())),
            ("B".into(), Some("Total".into())),
        ])
        .unwrap();
        let values = DMatrix::from_row_slice(1, 3, &[1.0, 2.0, 3.0]);
        let p = PanelMatrix::new(values, names(&["B", "Total", "A"]), names(&["1"])).unwrap();
        let aligned = p.align_to(&h).unwrap();
        assert_eq!(aligned.columns(), h.nodes());
        assert_eq!(aligned.values().row(0).iter().copied().collect::<Vec<_>>(), vec![2.0, 3.0, 1.0]);

        let missing = PanelMatrix::new(
            DMatrix::from_row_slice(1, 3, &[1.0, 2.0, 3.0]),
            names(&["B", "Total", "Z"]),
            names(&["1"]),
        )
        .unwrap();
        assert!(matches!(
            missing.align_to(&h).unwrap_err(),
            Error::UnknownNode(_)
        ));
    }
}
