//! Gradient-boosted regression trees under squared loss.

use serde::{Deserialize, Serialize};

use super::tree::{grow, BinnedMatrix, RegressionTree, TreeParams};
use crate::matrix::Matrix;
use crate::stats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostingModel {
    pub init: f64,
    pub learning_rate: f64,
    /// Trees with shrinkage already applied to their values.
    pub trees: Vec<RegressionTree>,
    /// Training MSE after 0, 1, ..., rounds trees.
    pub train_loss: Vec<f64>,
}

impl BoostingModel {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        self.init + self.trees.iter().map(|t| t.predict_row(x)).sum::<f64>()
    }

    /// The model after its first `rounds` trees.
    pub fn truncated(&self, rounds: usize) -> BoostingModel {
        let r = rounds.min(self.trees.len());
        BoostingModel {
            init: self.init,
            learning_rate: self.learning_rate,
            trees: self.trees[..r].to_vec(),
            train_loss: self.train_loss[..=r].to_vec(),
        }
    }
}

pub struct BoostingParams {
    pub rounds: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_leaf: usize,
}

pub fn fit_boosting(x: &Matrix, y: &[f64], params: &BoostingParams) -> BoostingModel {
    let data = BinnedMatrix::new(x);
    let n = y.len();
    let rows: Vec<usize> = (0..n).collect();
    let init = stats::mean(y);
    let mut fitted = vec![init; n];
    let mse = |f: &[f64]| f.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n.max(1) as f64;
    let mut train_loss = vec![mse(&fitted)];
    let mut trees = Vec::with_capacity(params.rounds);
    let tp = TreeParams {
        max_depth: params.max_depth,
        min_leaf: params.min_leaf,
        mtry: None,
    };
    for _ in 0..params.rounds {
        let resid: Vec<f64> = y.iter().zip(&fitted).map(|(a, b)| a - b).collect();
        let mut tree = grow(&data, &resid, &rows, tp, None);
        tree.scale(params.learning_rate);
        for (i, f) in fitted.iter_mut().enumerate() {
            *f += tree.predict_row(x.row(i));
        }
        train_loss.push(mse(&fitted));
        trees.push(tree);
    }
    BoostingModel {
        init,
        learning_rate: params.learning_rate,
        trees,
        train_loss,
    }
}
