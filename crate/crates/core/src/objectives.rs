//! Loss terms and their gradients with respect to class embeddings.
//!
//! * cross-entropy on high-end images against the high-end class embeddings,
//! * anchoring of both modalities to fixed prototypes,
//! * fused Gromov-Wasserstein alignment of the low-end embeddings to the
//!   (detached) high-end ones.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::log_sum_exp;
use crate::prompt_space::{
    AnchorPrototypes, ClassEmbeddings, EmbeddingGrads, Modality, PerModality,
};
use crate::transport::{
    build_costs, fgw_solve, fgw_value, SolverConfig, TransportPlan, TransportProblem,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_anc: f64,
    pub lambda_fgw: f64,
    /// Softmax temperature for the cosine logits.
    pub tau: f64,
    /// Fused GW trade-off between feature and structure terms.
    pub alpha: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_anc: 1.0,
            lambda_fgw: 1.0,
            tau: 0.07,
            alpha: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all_finite = [self.lambda_anc, self.lambda_fgw, self.tau, self.alpha]
            .iter()
            .all(|x| x.is_finite());
        if !all_finite {
            return Err(Error::Config("loss weights must be finite".into()));
        }
        if self.lambda_anc < 0.0 || self.lambda_fgw < 0.0 {
            return Err(Error::Config("loss weights must be nonnegative".into()));
        }
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ce: f64,
    pub anc: f64,
    pub fgw: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn combine(ce: f64, anc: f64, fgw: f64, weights: &LossWeights) -> Self {
        Self {
            ce,
            anc,
            fgw,
            total: ce + weights.lambda_anc * anc + weights.lambda_fgw * fgw,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.ce.is_finite()
            && self.anc.is_finite()
            && self.fgw.is_finite()
            && self.total.is_finite()
    }
}

/// Row-wise softmax of `x w^T / tau`.
///
/// Inputs are unit norm, so the dot product is the cosine similarity.
pub fn class_probabilities(
    images: ArrayView2<'_, f64>,
    w: ArrayView2<'_, f64>,
    tau: f64,
) -> Array2<f64> {
    let mut logits = images.dot(&w.t()) / tau;
    for mut row in logits.rows_mut() {
        let lse = log_sum_exp(row.iter().copied());
        row.mapv_inplace(|z| (z - lse).exp());
    }
    logits
}

/// Mean negative log-likelihood of the true class and its gradient on `w_high`.
pub fn ce_loss(
    images: ArrayView2<'_, f64>,
    labels: &[usize],
    w_high: ArrayView2<'_, f64>,
    tau: f64,
) -> Result<(f64, Array2<f64>)> {
    let batch = images.nrows();
    if batch == 0 {
        return Err(Error::Data("cross-entropy on an empty batch".into()));
    }
    if labels.len() != batch {
        return Err(Error::Shape(format!(
            "{batch} images but {} labels",
            labels.len()
        )));
    }
    if images.ncols() != w_high.ncols() {
        return Err(Error::Shape(format!(
            "image dim {} vs class embedding dim {}",
            images.ncols(),
            w_high.ncols()
        )));
    }
    let n_classes = w_high.nrows();
    if let Some(&bad) = labels.iter().find(|&&y| y >= n_classes) {
        return Err(Error::Data(format!(
            "label {bad} out of range for {n_classes} classes"
        )));
    }
    if !(tau > 0.0) {
        return Err(Error::Domain(format!("tau must be positive, got {tau}")));
    }

    let logits = images.dot(&w_high.t()) / tau;
    let mut loss = 0.0;
    // dL/dlogits, later mapped onto the class rows.
    let mut dlogits = Array2::zeros((batch, n_classes));
    for (b, row) in logits.rows().into_iter().enumerate() {
        let lse = log_sum_exp(row.iter().copied());
        loss += lse - row[labels[b]];
        for (c, &z) in row.iter().enumerate() {
            dlogits[[b, c]] = (z - lse).exp();
        }
        dlogits[[b, labels[b]]] -= 1.0;
    }
    let scale = 1.0 / (batch as f64 * tau);
    let grad = dlogits.t().dot(&images) * scale;
    Ok((loss / batch as f64, grad))
}

/// `1/(2N) sum_i sum_m |w_im - p_im|^2` and its gradient for both modalities.
pub fn anchoring_loss(
    w: &ClassEmbeddings,
    anchors: &AnchorPrototypes,
) -> Result<(f64, EmbeddingGrads)> {
    let n = w.high.nrows();
    for m in Modality::ALL {
        if w.get(m).dim() != anchors.get(m).dim() {
            return Err(Error::Shape(format!(
                "modality {m}: embeddings {:?} vs anchors {:?}",
                w.get(m).dim(),
                anchors.get(m).dim()
            )));
        }
    }
    if n == 0 {
        return Err(Error::Data("no classes".into()));
    }
    let n = n as f64;
    let high = &w.high - anchors.get(Modality::High);
    let low = &w.low - anchors.get(Modality::Low);
    let value = (high.mapv(|x| x * x).sum() + low.mapv(|x| x * x).sum()) / (2.0 * n);
    Ok((value, PerModality::new(high / n, low / n)))
}

#[derive(Clone, Debug)]
pub struct FgwLoss {
    pub value: f64,
    /// Gradient on the low-end rows with the plan held fixed.
    pub grad_low: Array2<f64>,
    /// Always zero: the high-end side is detached.
    pub grad_high: Array2<f64>,
    pub plan: TransportPlan,
}

/// Solves for the coupling at the current embeddings and differentiates the
/// fused objective with that coupling frozen.
pub fn fgw_loss(
    w_high: ArrayView2<'_, f64>,
    w_low: ArrayView2<'_, f64>,
    alpha: f64,
    solver: &SolverConfig,
) -> Result<FgwLoss> {
    let costs = build_costs(w_high, w_low)?;
    let problem = TransportProblem::uniform(costs, alpha)?;
    let plan = fgw_solve(&problem, solver)?;
    let (value, grad_low) = fgw_loss_with_plan(w_high, w_low, alpha, plan.gamma.view())?;
    Ok(FgwLoss {
        value,
        grad_low,
        grad_high: Array2::zeros(w_high.raw_dim()),
        plan,
    })
}

/// Fused objective at a fixed plan and its gradient on the low-end rows.
///
/// The structure distance is not differentiable where two low-end rows
/// coincide; those pairs contribute a zero subgradient.
pub fn fgw_loss_with_plan(
    w_high: ArrayView2<'_, f64>,
    w_low: ArrayView2<'_, f64>,
    alpha: f64,
    gamma: ArrayView2<'_, f64>,
) -> Result<(f64, Array2<f64>)> {
    let costs = build_costs(w_high, w_low)?;
    if gamma.dim() != costs.feature.dim() {
        return Err(Error::Shape(format!(
            "plan is {:?}, costs are {:?}",
            gamma.dim(),
            costs.feature.dim()
        )));
    }
    let value = fgw_value(
        costs.feature.view(),
        costs.structure_high.view(),
        costs.structure_low.view(),
        alpha,
        gamma,
    )?;

    let nl = gamma.ncols();
    let mut grad = Array2::<f64>::zeros(w_low.raw_dim());

    // Feature term: d/dl_j sum_i G_ij |h_i - l_j|^2 = 2 sum_i G_ij (l_j - h_i).
    let col_mass: Array1<f64> = gamma.sum_axis(Axis(0));
    let pulled = gamma.t().dot(&w_high);
    for j in 0..nl {
        let mut row = grad.row_mut(j);
        let g = (&w_low.row(j) * col_mass[j] - pulled.row(j)) * (2.0 * (1.0 - alpha));
        row += &g;
    }

    if alpha != 0.0 {
        // d/dDL_jl = -2 [ (G^T DH G)_jl - DL_jl c_j c_l ].
        let transported = gamma.t().dot(&costs.structure_high).dot(&gamma);
        let dl = &costs.structure_low;
        for j in 0..nl {
            for l in 0..nl {
                if j == l || dl[[j, l]] == 0.0 {
                    continue;
                }
                let a = -2.0 * (transported[[j, l]] - dl[[j, l]] * col_mass[j] * col_mass[l]);
                let dir = (&w_low.row(j) - &w_low.row(l)) / dl[[j, l]];
                let step = dir * (alpha * a);
                {
                    let mut rj = grad.row_mut(j);
                    rj += &step;
                }
                let mut rl = grad.row_mut(l);
                rl -= &step;
            }
        }
    }
    Ok((value, grad))
}

#[derive(Clone, Debug)]
pub struct LossEvaluation {
    pub breakdown: LossBreakdown,
    pub grads: EmbeddingGrads,
    /// Present when the alignment term was evaluated.
    pub plan: Option<TransportPlan>,
}

/// Weighted sum of the three terms for one mini-batch.
///
/// Cross-entropy reaches only the high-end rows, alignment only the
/// low-end rows, anchoring both. A term whose weight is zero is skipped
/// and reported as 0.
pub fn total_loss(
    images: ArrayView2<'_, f64>,
    labels: &[usize],
    w: &ClassEmbeddings,
    anchors: &AnchorPrototypes,
    weights: &LossWeights,
    solver: &SolverConfig,
) -> Result<LossEvaluation> {
    weights.validate()?;
    let (ce, ce_grad) = ce_loss(images, labels, w.high.view(), weights.tau)?;
    let mut grads = PerModality::new(ce_grad, Array2::zeros(w.low.raw_dim()));

    let mut anc = 0.0;
    if weights.lambda_anc != 0.0 {
        let (value, g) = anchoring_loss(w, anchors)?;
        anc = value;
        grads.high.scaled_add(weights.lambda_anc, &g.high);
        grads.low.scaled_add(weights.lambda_anc, &g.low);
    }

    let mut fgw = 0.0;
    let mut plan = None;
    if weights.lambda_fgw != 0.0 {
        let out = fgw_loss(w.high.view(), w.low.view(), weights.alpha, solver)?;
        fgw = out.value;
        grads.low.scaled_add(weights.lambda_fgw, &out.grad_low);
        plan = Some(out.plan);
    }

    Ok(LossEvaluation {
        breakdown: LossBreakdown::combine(ce, anc, fgw, weights),
        grads,
        plan,
    })
}
