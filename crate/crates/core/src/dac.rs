//! Divide-and-conquer fitting: one KRR fit per node, predictions averaged
//! with equal weight `1/k`.

use ndarray::{Array1, Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::kernel::KernelSpec;
use crate::krr::{fit_with_ridge, predict, Dataset, KrrModel};
use crate::partition::{PartitionPlan, SlicingRule};

/// How the shared `lambda` turns into the ridge added on each node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeRidge {
    /// `ridge = post_dedup_total * lambda` on every node.
    #[default]
    SharedTotal,
    /// `ridge = |S_i| * lambda`, the node's own penalized objective with the
    /// globally chosen `lambda`.
    NodeSize,
}

impl NodeRidge {
    pub fn ridge(self, lambda: f64, node_size: usize, total: usize) -> f64 {
        match self {
            NodeRidge::SharedTotal => total as f64 * lambda,
            NodeRidge::NodeSize => node_size as f64 * lambda,
        }
    }
}

impl std::str::FromStr for NodeRidge {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "node" | "node_size" => Ok(NodeRidge::NodeSize),
            "total" | "shared_total" => Ok(NodeRidge::SharedTotal),
            other => invalid(format!("unknown ridge scaling '{other}' (expected node or total)")),
        }
    }
}

/// How a plan was produced; enough to regenerate it from the training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlanRecipe {
    Full { n: usize },
    Classical { n: usize, k: usize, seed: u64 },
    Oversampled { n: usize, k: usize, seed: u64, rule: SlicingRule, slices: usize, tau: f64 },
}

#[derive(Debug, Clone, Copy, Default)]
pub struct FitOptions {
    /// Worker threads for node fits; `0` uses the ambient rayon pool.
    pub workers: usize,
    pub node_ridge: NodeRidge,
}

/// The averaged estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DacModel {
    pub kernel: KernelSpec,
    pub lambda_global: f64,
    pub node_ridge: NodeRidge,
    pub recipe: PlanRecipe,
    pub pre_dedup_total: usize,
    pub post_dedup_total: usize,
    pub locals: Vec<LocalModel>,
    /// Materialized plan; present after fitting, not persisted.
    #[serde(skip)]
    pub plan: Option<PartitionPlan>,
    /// Predictor column names, when fit from a CSV.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub feature_columns: Vec<String>,
}

/// One node's fit in persisted form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalModel {
    pub ridge: f64,
    #[serde(with = "rows")]
    pub centers: Array2<f64>,
    #[serde(with = "vector")]
    pub coefficients: Array1<f64>,
}

/// `Array2` as a list of rows.
mod rows {
    use ndarray::Array2;
    use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &Array2<f64>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(m.rows().into_iter().map(|r| r.to_vec()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Array2<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(D::Error::custom("ragged center rows"));
        }
        Array2::from_shape_vec((rows.len(), ncols), rows.concat()).map_err(D::Error::custom)
    }
}

mod vector {
    use ndarray::Array1;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Array1<f64>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Array1<f64>, D::Error> {
        Ok(Array1::from(Vec::<f64>::deserialize(d)?))
    }
}

impl LocalModel {
    fn as_krr(&self, kernel: KernelSpec, lambda: f64) -> KrrModel {
        KrrModel { centers: self.centers.clone(), coefficients: self.coefficients.clone(), kernel, lambda }
    }
}

impl DacModel {
    pub fn k(&self) -> usize {
        self.locals.len()
    }

    pub fn dim(&self) -> usize {
        self.locals.first().map_or(0, |l| l.centers.ncols())
    }

    pub fn local(&self, i: usize) -> KrrModel {
        self.locals[i].as_krr(self.kernel, self.lambda_global)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let model: DacModel = serde_json::from_str(s)?;
        if model.locals.is_empty() {
            return invalid("model has no local fits");
        }
        model.kernel.check_dim(model.dim())?;
        for (i, l) in model.locals.iter().enumerate() {
            if l.centers.nrows() != l.coefficients.len() || l.centers.ncols() != model.dim() {
                return invalid(format!("local model {i} has inconsistent shapes"));
            }
        }
        Ok(model)
    }
}

/// Fits one KRR per node of `plan` with a shared `lambda_global`.
///
/// Any node failure aborts the whole fit. Nodes are fit independently and
/// collected in node order, so the result does not depend on the worker
/// count.
pub fn fit_dac(
    data: &Dataset,
    plan: &PartitionPlan,
    spec: &KernelSpec,
    lambda_global: f64,
    recipe: PlanRecipe,
    options: FitOptions,
) -> Result<DacModel> {
    if !(lambda_global > 0.0 && lambda_global.is_finite()) {
        return invalid(format!("lambda must be positive and finite, got {lambda_global}"));
    }
    plan.validate(data.n())?;
    spec.check_dim(data.dim())?;
    let total = plan.post_dedup_total;

    let fit_node = |(i, rows): (usize, &Vec<usize>)| -> Result<LocalModel> {
        let wrap = |e: Error| Error::NodeFit { node: i, source: Box::new(e) };
        let local = data.subset(rows).map_err(wrap)?;
        let ridge = options.node_ridge.ridge(lambda_global, rows.len(), total);
        let m = fit_with_ridge(&local, spec, lambda_global, ridge).map_err(wrap)?;
        Ok(LocalModel { ridge, centers: m.centers, coefficients: m.coefficients })
    };
    // collected before short-circuiting so the reported failure is the
    // lowest failing node regardless of scheduling
    let run = || -> Result<Vec<LocalModel>> {
        let fits: Vec<Result<LocalModel>> = plan.node_assignments.par_iter().enumerate().map(fit_node).collect();
        fits.into_iter().collect()
    };
    let locals = if options.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(options.workers)
            .build()
            .map_err(|e| Error::InvalidInput(format!("cannot start {} workers: {e}", options.workers)))?
            .install(run)?
    } else {
        run()?
    };

    Ok(DacModel {
        kernel: *spec,
        lambda_global,
        node_ridge: options.node_ridge,
        recipe,
        pre_dedup_total: plan.pre_dedup_total,
        post_dedup_total: plan.post_dedup_total,
        locals,
        plan: Some(plan.clone()),
        feature_columns: Vec::new(),
    })
}

/// `(1/k) * sum_i f_i(x)`, summed in node order.
pub fn predict_dac(model: &DacModel, x_new: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
    if model.locals.is_empty() {
        return invalid("model has no local fits");
    }
    if x_new.ncols() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), got: x_new.ncols() });
    }
    let per_node: Vec<Array1<f64>> = (0..model.k())
        .into_par_iter()
        .map(|i| predict(&model.local(i), x_new))
        .collect::<Result<_>>()?;
    let mut acc = Array1::<f64>::zeros(x_new.nrows());
    for p in &per_node {
        acc += p;
    }
    Ok(acc / model.k() as f64)
}
