use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::numcore::Matrix;

/// Category-to-column maps for industry and region codes, fitted on the
/// training split. Categories are numbered in lexicographic order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryEncoder {
    pub industries: BTreeMap<String, usize>,
    pub regions: BTreeMap<String, usize>,
}

fn index_of<'a>(values: impl Iterator<Item = &'a str>) -> BTreeMap<String, usize> {
    let mut map: BTreeMap<String, usize> = values.map(|v| (v.to_string(), 0)).collect();
    for (i, slot) in map.values_mut().enumerate() {
        *slot = i;
    }
    map
}

impl CategoryEncoder {
    pub fn fit<'a, I>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let (ind, reg): (Vec<&str>, Vec<&str>) = pairs.into_iter().unzip();
        Self {
            industries: index_of(ind.into_iter()),
            regions: index_of(reg.into_iter()),
        }
    }

    pub fn n_industries(&self) -> usize {
        self.industries.len()
    }

    pub fn n_regions(&self) -> usize {
        self.regions.len()
    }

    /// Industry block only. Unseen industries give an all-zero row.
    pub fn industry_block<'a>(&self, industries: impl ExactSizeIterator<Item = &'a str>) -> Matrix {
        encode(&self.industries, industries)
    }

    pub fn region_block<'a>(&self, regions: impl ExactSizeIterator<Item = &'a str>) -> Matrix {
        encode(&self.regions, regions)
    }

    /// `[industry one-hot | region one-hot]` per row.
    pub fn onehot<'a, I>(&self, pairs: I) -> Matrix
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let (ind, reg): (Vec<&str>, Vec<&str>) = pairs.into_iter().unzip();
        let a = self.industry_block(ind.into_iter());
        let b = self.region_block(reg.into_iter());
        Matrix::hconcat(&[&a, &b]).expect("blocks share the row count")
    }
}

fn encode<'a>(map: &BTreeMap<String, usize>, values: impl ExactSizeIterator<Item = &'a str>) -> Matrix {
    let n = values.len();
    let k = map.len();
    let mut m = Matrix::zeros(n, k);
    for (i, v) in values.enumerate() {
        if let Some(&j) = map.get(v) {
            m.set(i, j, 1.0).expect("finite");
        }
    }
    m
}
