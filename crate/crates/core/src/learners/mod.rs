//! Regression learners behind a common trait, registered by name.

pub mod boosting;
pub mod elastic_net;
pub mod forest;
pub mod knn;
pub mod linear;
pub mod tree;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::stats;

use boosting::{fit_boosting, BoostingModel, BoostingParams};
use elastic_net::{fit_elastic_net, lambda_max, ElasticNetModel};
use forest::{fit_forest, ForestModel, ForestParams};
use knn::KnnModel;
use linear::{fit_linear, LinearModel};
use tree::{fit_tree, RegressionTree, TreeParams};

/// One hyperparameter setting. Ordered so that labels and serialization are
/// stable.
pub type Params = BTreeMap<String, f64>;

pub fn params(pairs: &[(&str, f64)]) -> Params {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

/// Compact `k=v,k=v` rendering, or `default` for an empty map.
pub fn params_label(p: &Params) -> String {
    if p.is_empty() {
        return "default".into();
    }
    p.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(",")
}

fn get(p: &Params, key: &str, default: f64) -> f64 {
    p.get(key).copied().unwrap_or(default)
}

fn get_usize(p: &Params, key: &str, default: usize) -> Result<usize> {
    let v = get(p, key, default as f64);
    if !(v.is_finite() && v >= 0.0) {
        return Err(Error::invalid(format!("parameter `{key}` must be a non-negative number")));
    }
    Ok(v.round() as usize)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelState {
    Linear(LinearModel),
    ElasticNet(ElasticNetModel),
    Knn(KnnModel),
    Tree(RegressionTree),
    RandomForest(ForestModel),
    Boosting(BoostingModel),
}

/// A trained model. Immutable after training; `predict` is reentrant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub learner: String,
    pub params: Params,
    pub n_features: usize,
    pub state: ModelState,
}

impl FittedModel {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        match &self.state {
            ModelState::Linear(m) => m.predict_row(x),
            ModelState::ElasticNet(m) => m.predict_row(x),
            ModelState::Knn(m) => m.predict_row(x),
            ModelState::Tree(m) => m.predict_row(x),
            ModelState::RandomForest(m) => m.predict_row(x),
            ModelState::Boosting(m) => m.predict_row(x),
        }
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.nrows() > 0 && x.ncols() != self.n_features {
            return Err(Error::ColumnMismatch {
                expected: self.n_features,
                got: x.ncols(),
            });
        }
        Ok(match &self.state {
            ModelState::Knn(m) => m.predict(x),
            _ => x.rows().map(|r| self.predict_row(r)).collect(),
        })
    }

    /// Trees recorded by tree-based models, for importance and inspection.
    pub fn trees(&self) -> &[RegressionTree] {
        match &self.state {
            ModelState::Tree(t) => std::slice::from_ref(t),
            ModelState::RandomForest(f) => &f.trees,
            ModelState::Boosting(b) => &b.trees,
            _ => &[],
        }
    }

    pub fn notes(&self) -> Vec<String> {
        match &self.state {
            ModelState::Linear(m) if m.rank_deficient => vec![format!(
                "design rank {} < {} columns; minimum-norm solution used",
                m.rank, self.n_features
            )],
            _ => Vec::new(),
        }
    }
}

fn check_training(x: &Matrix, y: &[f64]) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::invalid(format!("{} rows but {} outcomes", x.nrows(), y.len())));
    }
    if y.len() < 2 {
        return Err(Error::invalid("training needs at least 2 rows"));
    }
    if y.iter().any(|v| !v.is_finite()) || x.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("training data contains non-finite values"));
    }
    if stats::population_sd(y) == 0.0 {
        return Err(Error::Degenerate("outcome has zero variance".into()));
    }
    Ok(())
}

pub trait Learner: Send + Sync {
    fn name(&self) -> &'static str;

    /// Hyperparameter grid for a design with `n_features` columns.
    fn default_grid(&self, n_features: usize) -> Vec<Params>;

    fn fit(&self, params: &Params, x: &Matrix, y: &[f64], seed: u64) -> Result<ModelState>;

    fn train(&self, params: &Params, x: &Matrix, y: &[f64], seed: u64) -> Result<FittedModel> {
        check_training(x, y)?;
        Ok(FittedModel {
            learner: self.name().to_string(),
            params: params.clone(),
            n_features: x.ncols(),
            state: self.fit(params, x, y, seed)?,
        })
    }

    /// Train every grid point. Learners whose grid points share work may
    /// override this.
    fn train_grid(&self, grid: &[Params], x: &Matrix, y: &[f64], seed: u64) -> Result<Vec<FittedModel>> {
        grid.iter().map(|p| self.train(p, x, y, seed)).collect()
    }
}

pub struct LinearLearner;

impl Learner for LinearLearner {
    fn name(&self) -> &'static str {
        "linear"
    }
    fn default_grid(&self, _: usize) -> Vec<Params> {
        vec![Params::new()]
    }
    fn fit(&self, _: &Params, x: &Matrix, y: &[f64], _: u64) -> Result<ModelState> {
        Ok(ModelState::Linear(fit_linear(x, y)?))
    }
}

/// `alpha` mixes L1/L2; `lambda_frac` scales the penalty relative to λ_max.
pub struct ElasticNetLearner;

impl Learner for ElasticNetLearner {
    fn name(&self) -> &'static str {
        "elastic-net"
    }
    fn default_grid(&self, _: usize) -> Vec<Params> {
        [0.001, 0.01, 0.1]
            .iter()
            .map(|&f| params(&[("alpha", 0.5), ("lambda_frac", f)]))
            .collect()
    }
    fn fit(&self, p: &Params, x: &Matrix, y: &[f64], _: u64) -> Result<ModelState> {
        let alpha = get(p, "alpha", 0.5);
        let lambda = match p.get("lambda") {
            Some(&l) => l,
            None => get(p, "lambda_frac", 0.01) * lambda_max(x, y, alpha),
        };
        Ok(ModelState::ElasticNet(fit_elastic_net(x, y, alpha, lambda)?))
    }
}

pub struct KnnLearner;

impl Learner for KnnLearner {
    fn name(&self) -> &'static str {
        "knn"
    }
    fn default_grid(&self, _: usize) -> Vec<Params> {
        [5.0, 7.0, 9.0].iter().map(|&k| params(&[("k", k)])).collect()
    }
    fn fit(&self, p: &Params, x: &Matrix, y: &[f64], _: u64) -> Result<ModelState> {
        let k = get_usize(p, "k", 7)?;
        if k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        Ok(ModelState::Knn(KnnModel::new(k, x.clone(), y.to_vec())))
    }
}

pub struct TreeLearner;

impl Learner for TreeLearner {
    fn name(&self) -> &'static str {
        "tree"
    }
    fn default_grid(&self, _: usize) -> Vec<Params> {
        [4.0, 6.0, 8.0]
            .iter()
            .map(|&d| params(&[("max_depth", d), ("min_leaf", 5.0)]))
            .collect()
    }
    fn fit(&self, p: &Params, x: &Matrix, y: &[f64], _: u64) -> Result<ModelState> {
        let tp = TreeParams {
            max_depth: get_usize(p, "max_depth", 6)?,
            min_leaf: get_usize(p, "min_leaf", 5)?.max(1),
            mtry: None,
        };
        Ok(ModelState::Tree(fit_tree(x, y, tp)))
    }
}

pub struct RandomForestLearner;

impl Learner for RandomForestLearner {
    fn name(&self) -> &'static str {
        "random-forest"
    }
    fn default_grid(&self, n_features: usize) -> Vec<Params> {
        let p = n_features.max(1) as i64;
        let centre = (p as f64).sqrt().round() as i64;
        let mut m: Vec<i64> = [-2, 0, 2].iter().map(|o| (centre + o).clamp(1, p)).collect();
        m.dedup();
        m.into_iter()
            .map(|v| params(&[("mtry", v as f64), ("n_trees", 100.0), ("min_leaf", 5.0)]))
            .collect()
    }
    fn fit(&self, p: &Params, x: &Matrix, y: &[f64], seed: u64) -> Result<ModelState> {
        let fp = ForestParams {
            n_trees: get_usize(p, "n_trees", 100)?.max(1),
            mtry: get_usize(p, "mtry", (x.ncols() as f64).sqrt().round() as usize)?.max(1),
            min_leaf: get_usize(p, "min_leaf", 5)?.max(1),
            max_depth: get_usize(p, "max_depth", 64)?,
        };
        Ok(ModelState::RandomForest(fit_forest(x, y, &fp, seed)))
    }
}

pub struct BoostingLearner;

impl BoostingLearner {
    fn parse(p: &Params) -> Result<BoostingParams> {
        let eta = get(p, "eta", 0.1);
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(Error::invalid("eta must lie in (0, 1]"));
        }
        Ok(BoostingParams {
            rounds: get_usize(p, "rounds", 200)?,
            max_depth: get_usize(p, "max_depth", 4)?,
            learning_rate: eta,
            min_leaf: get_usize(p, "min_leaf", 5)?.max(1),
        })
    }
}

impl Learner for BoostingLearner {
    fn name(&self) -> &'static str {
        "boosting"
    }
    fn default_grid(&self, _: usize) -> Vec<Params> {
        let mut g = Vec::new();
        for rounds in [100.0, 200.0, 300.0] {
            for depth in [2.0, 4.0, 6.0] {
                for eta in [0.05, 0.1, 0.3] {
                    g.push(params(&[("rounds", rounds), ("max_depth", depth), ("eta", eta)]));
                }
            }
        }
        g
    }
    fn fit(&self, p: &Params, x: &Matrix, y: &[f64], _: u64) -> Result<ModelState> {
        Ok(ModelState::Boosting(fit_boosting(x, y, &Self::parse(p)?)))
    }

    /// Grid points that differ only in round count share one staged fit,
    /// truncated to each requested length.
    fn train_grid(&self, grid: &[Params], x: &Matrix, y: &[f64], _seed: u64) -> Result<Vec<FittedModel>> {
        check_training(x, y)?;
        let parsed: Vec<BoostingParams> = grid.iter().map(Self::parse).collect::<Result<_>>()?;
        let mut longest: BTreeMap<(usize, usize, u64), usize> = BTreeMap::new();
        for b in &parsed {
            let key = (b.max_depth, b.min_leaf, b.learning_rate.to_bits());
            let e = longest.entry(key).or_default();
            *e = (*e).max(b.rounds);
        }
        let mut full: BTreeMap<(usize, usize, u64), BoostingModel> = BTreeMap::new();
        for (&(max_depth, min_leaf, eta), &rounds) in &longest {
            let bp = BoostingParams {
                rounds,
                max_depth,
                learning_rate: f64::from_bits(eta),
                min_leaf,
            };
            full.insert((max_depth, min_leaf, eta), fit_boosting(x, y, &bp));
        }
        Ok(grid
            .iter()
            .zip(&parsed)
            .map(|(p, b)| FittedModel {
                learner: self.name().to_string(),
                params: p.clone(),
                n_features: x.ncols(),
                state: ModelState::Boosting(full[&(b.max_depth, b.min_leaf, b.learning_rate.to_bits())].truncated(b.rounds)),
            })
            .collect())
    }
}

/// Learners by name, with common aliases.
#[derive(Clone)]
pub struct LearnerRegistry {
    learners: BTreeMap<String, Arc<dyn Learner>>,
    aliases: BTreeMap<String, String>,
}

impl LearnerRegistry {
    pub fn empty() -> Self {
        LearnerRegistry {
            learners: BTreeMap::new(),
            aliases: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, learner: Arc<dyn Learner>) {
        self.learners.insert(learner.name().to_string(), learner);
    }

    pub fn alias(&mut self, alias: &str, target: &str) {
        self.aliases.insert(alias.to_string(), target.to_string());
    }

    pub fn resolve<'a>(&'a self, name: &'a str) -> &'a str {
        let key = name.trim();
        self.aliases.get(key).map(String::as_str).unwrap_or(key)
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn Learner>> {
        self.learners
            .get(self.resolve(name))
            .cloned()
            .ok_or_else(|| Error::UnknownLearner(name.to_string()))
    }

    pub fn names(&self) -> Vec<&str> {
        self.learners.keys().map(String::as_str).collect()
    }
}

impl Default for LearnerRegistry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register(Arc::new(LinearLearner));
        r.register(Arc::new(ElasticNetLearner));
        r.register(Arc::new(KnnLearner));
        r.register(Arc::new(TreeLearner));
        r.register(Arc::new(RandomForestLearner));
        r.register(Arc::new(BoostingLearner));
        for (a, t) in [
            ("lm", "linear"),
            ("glmnet", "elastic-net"),
            ("enet", "elastic-net"),
            ("rpart", "tree"),
            ("rf", "random-forest"),
            ("ranger", "random-forest"),
            ("gbm", "boosting"),
            ("xgbtree", "boosting"),
        ] {
            r.alias(a, t);
        }
        r
    }
}
