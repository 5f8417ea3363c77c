//! Bagged ensemble of regression trees.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{Dataset, Target, Tree, TreeParams};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestParams {
    pub trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features examined per split; `0` means all of them.
    pub max_features: usize,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            trees: 100,
            max_depth: 20,
            min_leaf: 3,
            max_features: 0,
        }
    }
}

impl ForestParams {
    pub fn validate(&self) -> Result<()> {
        if self.trees == 0 {
            return Err(Error::invalid("forest needs at least one tree"));
        }
        if self.max_depth == 0 || self.min_leaf == 0 {
            return Err(Error::invalid("max_depth and min_leaf must be >= 1"));
        }
        Ok(())
    }

    fn features_per_split(&self, n_features: usize) -> usize {
        if self.max_features == 0 {
            n_features
        } else {
            self.max_features.min(n_features)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub n_features: usize,
    pub trees: Vec<Tree>,
}

impl Forest {
    /// Each tree is trained on its own bootstrap resample drawn from a
    /// per-tree stream, so the result is independent of thread scheduling.
    pub fn fit(data: &Dataset, params: &ForestParams, seed: u64) -> Result<Forest> {
        params.validate()?;
        if data.is_empty() {
            return Err(Error::invalid("cannot fit a forest on an empty dataset"));
        }
        let weights = inverse_variances(&data.y);
        let tree_params = TreeParams {
            max_depth: params.max_depth,
            min_leaf: params.min_leaf,
            max_features: params.features_per_split(data.n_features),
        };
        let n = data.len();
        let trees = (0..params.trees)
            .into_par_iter()
            .map(|k| {
                let mut r = rng::seeded(rng::derive_seed(seed, k as u64));
                let rows: Vec<usize> = (0..n).map(|_| r.random_range(0..n)).collect();
                Tree::fit(data, rows, weights, &tree_params, &mut r)
            })
            .collect();
        Ok(Forest {
            n_features: data.n_features,
            trees,
        })
    }

    pub fn predict(&self, row: &[f64]) -> Target {
        let mut acc = [0.0; 2];
        for t in &self.trees {
            let p = t.predict(row);
            acc[0] += p[0];
            acc[1] += p[1];
        }
        let k = self.trees.len() as f64;
        [acc[0] / k, acc[1] / k]
    }

    /// Same values as calling `predict` on each row of the row-major `x`.
    pub fn predict_many(&self, x: &[f64]) -> Vec<Target> {
        let n = x.len() / self.n_features;
        let mut acc = vec![[0.0; 2]; n];
        let mut idx = vec![0u32; n];
        for t in &self.trees {
            t.accumulate(x, self.n_features, &mut idx, &mut acc);
        }
        let k = self.trees.len() as f64;
        for a in &mut acc {
            *a = [a[0] / k, a[1] / k];
        }
        acc
    }

    /// Predictions for every point of the Cartesian product of `axes`, in
    /// row-major order; same values as `predict` on each point.
    pub fn predict_product<const N: usize>(&self, axes: [&[f64]; N]) -> Vec<Target> {
        assert_eq!(N, self.n_features, "one axis per feature");
        let n = axes.iter().map(|a| a.len()).product();
        let mut acc = vec![[0.0; 2]; n];
        for t in &self.trees {
            t.accumulate_product(axes, &mut acc);
        }
        let k = self.trees.len() as f64;
        for a in &mut acc {
            *a = [a[0] / k, a[1] / k];
        }
        acc
    }
}

fn inverse_variances(y: &[Target]) -> Target {
    let n = y.len() as f64;
    let mut out = [1.0; 2];
    for (k, w) in out.iter_mut().enumerate() {
        let mean = y.iter().map(|t| t[k]).sum::<f64>() / n;
        let var = y.iter().map(|t| (t[k] - mean).powi(2)).sum::<f64>() / n;
        if var > 0.0 {
            *w = 1.0 / var;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn smooth(n: usize) -> Dataset {
        let mut d = Dataset::new(2);
        for i in 0..n {
            let a = (i % 20) as f64;
            let b = (i / 20) as f64;
            d.push(&[a, b], [a * 2.0 + b, (a - b).abs()]);
        }
        d
    }

    #[test]
    fn deterministic_given_seed() {
        let d = smooth(400);
        let p = ForestParams { trees: 8, ..Default::default() };
        let a = Forest::fit(&d, &p, 5).unwrap();
        let b = Forest::fit(&d, &p, 5).unwrap();
        assert_eq!(a, b);
        let c = Forest::fit(&d, &p, 6).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn predictions_within_target_range() {
        let d = smooth(400);
        let f = Forest::fit(&d, &ForestParams { trees: 10, ..Default::default() }, 1).unwrap();
        for row in [[-100.0, -100.0], [100.0, 100.0], [3.5, 7.2]] {
            let p = f.predict(&row);
            assert!((0.0..=57.0).contains(&p[0]));
            assert!((0.0..=19.0).contains(&p[1]));
        }
    }

    #[test]
    fn rejects_bad_params() {
        let d = smooth(10);
        assert!(Forest::fit(&d, &ForestParams { trees: 0, ..Default::default() }, 0).is_err());
        assert!(Forest::fit(&Dataset::new(2), &ForestParams::default(), 0).is_err());
    }
}
