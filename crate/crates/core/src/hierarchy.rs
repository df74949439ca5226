//! Two-level label hierarchy and the partially observed fine-label matrix.

use std::ops::Range;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Coarse concepts and their fine-grained children.
///
/// Fine labels are indexed globally by concatenating the children lists in
/// coarse order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelHierarchy {
    coarse: Vec<String>,
    fine: Vec<String>,
    offsets: Vec<usize>,
    parent: Vec<usize>,
}

impl LabelHierarchy {
    pub fn new<C, F>(groups: impl IntoIterator<Item = (C, Vec<F>)>) -> Result<Self>
    where
        C: Into<String>,
        F: Into<String>,
    {
        let mut coarse = Vec::new();
        let mut fine: Vec<String> = Vec::new();
        let mut offsets = vec![0];
        let mut parent = Vec::new();
        for (c, children) in groups {
            let c = c.into();
            if children.is_empty() {
                return Err(Error::Config(format!("coarse label {c:?} has no children")));
            }
            if coarse.contains(&c) {
                return Err(Error::Config(format!("duplicate coarse label {c:?}")));
            }
            for f in children {
                let f = f.into();
                if fine.contains(&f) {
                    return Err(Error::Config(format!("duplicate fine label {f:?}")));
                }
                fine.push(f);
                parent.push(coarse.len());
            }
            coarse.push(c);
            offsets.push(fine.len());
        }
        if coarse.is_empty() {
            return Err(Error::Config("hierarchy has no coarse labels".into()));
        }
        Ok(LabelHierarchy {
            coarse,
            fine,
            offsets,
            parent,
        })
    }

    /// `coarse` groups of `children` each, named `c{i}` and `c{i}.f{j}`.
    pub fn uniform(coarse: usize, children: usize) -> Result<Self> {
        if coarse == 0 || children == 0 {
            return Err(Error::Config("hierarchy counts must be positive".into()));
        }
        Self::new((0..coarse).map(|c| {
            (
                format!("c{c}"),
                (0..children).map(|f| format!("c{c}.f{f}")).collect::<Vec<_>>(),
            )
        }))
    }

    pub fn coarse_count(&self) -> usize {
        self.coarse.len()
    }

    pub fn fine_count(&self) -> usize {
        self.fine.len()
    }

    pub fn coarse_names(&self) -> &[String] {
        &self.coarse
    }

    pub fn fine_names(&self) -> &[String] {
        &self.fine
    }

    pub fn parent_of(&self, fine: usize) -> usize {
        self.parent[fine]
    }

    pub fn children(&self, coarse: usize) -> Range<usize> {
        self.offsets[coarse]..self.offsets[coarse + 1]
    }

    /// Coarse labels implied by fine labels (OR over children).
    pub fn coarse_from_fine(&self, fine: ArrayView2<u8>) -> Result<Array2<u8>> {
        if fine.ncols() != self.fine_count() {
            return Err(Error::shape("fine label columns", self.fine_count(), fine.ncols()));
        }
        Ok(Array2::from_shape_fn((fine.nrows(), self.coarse_count()), |(n, c)| {
            u8::from(self.children(c).any(|f| fine[[n, f]] != 0))
        }))
    }

    /// Returns `(row, coarse index, coarse value, OR of children)` for the first
    /// row whose coarse labels disagree with its fine labels.
    pub fn first_violation(
        &self,
        coarse: ArrayView2<u8>,
        fine: ArrayView2<u8>,
    ) -> Result<Option<(usize, usize, u8, u8)>> {
        let implied = self.coarse_from_fine(fine)?;
        if coarse.dim() != implied.dim() {
            return Err(Error::shape("coarse label columns", self.coarse_count(), coarse.ncols()));
        }
        for n in 0..coarse.nrows() {
            for c in 0..self.coarse_count() {
                let stated = u8::from(coarse[[n, c]] != 0);
                if stated != implied[[n, c]] {
                    return Ok(Some((n, c, stated, implied[[n, c]])));
                }
            }
        }
        Ok(None)
    }
}

/// Fine-label values with an observation mask. Values off the mask carry no
/// meaning; observed values are always 0 or 1.
#[derive(Clone, Debug, PartialEq)]
pub struct PartialLabelMatrix {
    values: Array2<f64>,
    observed: Array2<bool>,
}

impl PartialLabelMatrix {
    pub fn unobserved(rows: usize, labels: usize) -> Self {
        PartialLabelMatrix {
            values: Array2::zeros((rows, labels)),
            observed: Array2::from_elem((rows, labels), false),
        }
    }

    /// Every entry observed with the given ground truth.
    pub fn fully_observed(fine: ArrayView2<u8>) -> Self {
        PartialLabelMatrix {
            values: fine.mapv(|v| f64::from(u8::from(v != 0))),
            observed: Array2::from_elem(fine.raw_dim(), true),
        }
    }

    /// Children of irrelevant coarse labels are observed irrelevant; children of
    /// relevant coarse labels stay unknown.
    pub fn deduce(coarse: ArrayView2<u8>, hierarchy: &LabelHierarchy) -> Result<Self> {
        if coarse.ncols() != hierarchy.coarse_count() {
            return Err(Error::shape("coarse label columns", hierarchy.coarse_count(), coarse.ncols()));
        }
        let (n, k) = (coarse.nrows(), hierarchy.fine_count());
        let observed =
            Array2::from_shape_fn((n, k), |(i, f)| coarse[[i, hierarchy.parent_of(f)]] == 0);
        Ok(PartialLabelMatrix {
            values: Array2::zeros((n, k)),
            observed,
        })
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn labels(&self) -> usize {
        self.values.ncols()
    }

    pub fn dim(&self) -> (usize, usize) {
        self.values.dim()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn mask(&self) -> &Array2<bool> {
        &self.observed
    }

    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.observed[[i, j]]
    }

    pub fn value(&self, i: usize, j: usize) -> Option<f64> {
        self.observed[[i, j]].then(|| self.values[[i, j]])
    }

    pub fn observed_count(&self) -> usize {
        self.observed.iter().filter(|&&o| o).count()
    }

    pub fn unknown_count(&self) -> usize {
        self.observed.len() - self.observed_count()
    }

    /// Unobserved entries in row-major order.
    pub fn unknown_entries(&self) -> Vec<(usize, usize)> {
        self.observed
            .indexed_iter()
            .filter(|(_, &o)| !o)
            .map(|(ij, _)| ij)
            .collect()
    }

    /// Records a newly revealed entry. The mask only grows.
    pub fn observe(&mut self, i: usize, j: usize, value: u8) -> Result<()> {
        if i >= self.rows() || j >= self.labels() {
            return Err(Error::Input(format!("entry ({i}, {j}) out of range")));
        }
        if value > 1 {
            return Err(Error::Input(format!("observed label value {value} is not 0 or 1")));
        }
        if self.observed[[i, j]] {
            return Err(Error::Input(format!("entry ({i}, {j}) is already observed")));
        }
        self.observed[[i, j]] = true;
        self.values[[i, j]] = f64::from(value);
        Ok(())
    }

    /// Observation weights: 1 on observed entries, 0 elsewhere.
    pub fn mask_weights(&self) -> Array2<f64> {
        self.observed.mapv(|o| if o { 1.0 } else { 0.0 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn toy() -> LabelHierarchy {
        LabelHierarchy::new([("A", vec!["a1", "a2"]), ("B", vec!["b1"])]).unwrap()
    }

    #[test]
    fn hierarchy_indexing() {
        let h = toy();
        assert_eq!(h.coarse_count(), 2);
        assert_eq!(h.fine_count(), 3);
        assert_eq!(h.children(0), 0..2);
        assert_eq!(h.children(1), 2..3);
        assert_eq!(h.parent_of(2), 1);
        assert_eq!(h.fine_names(), &["a1", "a2", "b1"]);
    }

    #[test]
    fn hierarchy_rejects_malformed_trees() {
        assert!(LabelHierarchy::new([("A", Vec::<String>::new())]).is_err());
        assert!(LabelHierarchy::new([("A", vec!["x"]), ("B", vec!["x"])]).is_err());
        assert!(LabelHierarchy::new(Vec::<(String, Vec<String>)>::new()).is_err());
    }

    #[test]
    fn deduction_rule() {
        let h = toy();
        let m = PartialLabelMatrix::deduce(array![[0u8, 1], [0, 0], [1, 1]].view(), &h).unwrap();
        assert_eq!(
            m.mask(),
            &array![[true, true, false], [true, true, true], [false, false, false]]
        );
        assert_eq!(m.value(0, 0), Some(0.0));
        assert_eq!(m.value(0, 2), None);
        assert_eq!(m.unknown_entries(), vec![(0, 2), (2, 0), (2, 1), (2, 2)]);
        assert!(PartialLabelMatrix::deduce(array![[0u8, 1, 1]].view(), &h).is_err());
    }

    #[test]
    fn observe_only_grows() {
        let mut m = PartialLabelMatrix::unobserved(2, 2);
        m.observe(1, 0, 1).unwrap();
        assert_eq!(m.value(1, 0), Some(1.0));
        assert!(m.observe(1, 0, 0).is_err());
        assert!(m.observe(0, 0, 2).is_err());
        assert_eq!(m.observed_count(), 1);
    }

    #[test]
    fn violation_detection() {
        let h = toy();
        let fine = array![[1u8, 0, 0], [0, 0, 1]];
        let coarse = h.coarse_from_fine(fine.view()).unwrap();
        assert_eq!(coarse, array![[1u8, 0], [0, 1]]);
        assert_eq!(h.first_violation(coarse.view(), fine.view()).unwrap(), None);
        let bad = array![[1u8, 0], [1, 1]];
        assert_eq!(h.first_violation(bad.view(), fine.view()).unwrap(), Some((1, 0, 1, 0)));
    }
}
