//! Multimodal calibration: closed-form multiple-output ridge regression
//! from regular features to privileged features.

use crate::error::{Error, Result};
use nalgebra::{Cholesky, DMatrix};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Fitted regression weights mapping a `d`-dimensional regular frame to a
/// `p`-dimensional privileged frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionModel {
    /// Row-major `d x p`.
    pub gamma: Vec<f64>,
    pub d: usize,
    pub p: usize,
    /// Ridge coefficient the weights were fitted with.
    pub eta: f64,
}

impl FusionModel {
    pub fn validate(&self) -> Result<()> {
        if self.gamma.len() != self.d * self.p {
            return Err(Error::invalid("fusion weight matrix size mismatch"));
        }
        if self.gamma.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("non-finite fusion weights"));
        }
        Ok(())
    }
}

fn to_matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    if rows.is_empty() {
        return Err(Error::invalid(format!("{what}: no rows")));
    }
    let w = rows[0].len();
    if w == 0 || rows.iter().any(|r| r.len() != w) {
        return Err(Error::invalid(format!("{what}: ragged or empty rows")));
    }
    if rows.iter().any(|r| r.iter().any(|v| !v.is_finite())) {
        return Err(Error::invalid(format!("{what}: non-finite entries")));
    }
    Ok(DMatrix::from_fn(rows.len(), w, |i, j| rows[i][j]))
}

/// Solve `(X^T X + eta I) gamma = X^T X*` through a Cholesky factorization.
pub fn fit_fusion(x: &[Vec<f64>], xstar: &[Vec<f64>], eta: f64) -> Result<FusionModel> {
    if eta < 0.0 || !eta.is_finite() {
        return Err(Error::invalid("eta must be finite and >= 0"));
    }
    let xm = to_matrix(x, "regular frames")?;
    let xs = to_matrix(xstar, "privileged frames")?;
    if xm.nrows() != xs.nrows() {
        return Err(Error::invalid(format!(
            "row count mismatch: {} regular vs {} privileged",
            xm.nrows(),
            xs.nrows()
        )));
    }
    let d = xm.ncols();
    let p = xs.ncols();
    let mut gram = xm.transpose() * &xm;
    for i in 0..d {
        gram[(i, i)] += eta;
    }
    let rhs = xm.transpose() * &xs;
    let chol = Cholesky::new(gram).ok_or_else(|| {
        Error::numerical("normal-equation system is singular; retry with eta > 0")
    })?;
    let gamma = chol.solve(&rhs);
    let model = FusionModel {
        gamma: gamma.transpose().as_slice().to_vec(), // row-major d x p
        d,
        p,
        eta,
    };
    model.validate()?;
    Ok(model)
}

/// Predict the privileged features of one regular frame: `x^T gamma`.
pub fn predict_privileged(model: &FusionModel, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != model.d {
        return Err(Error::invalid(format!(
            "frame has {} features, fusion model expects {}",
            x.len(),
            model.d
        )));
    }
    let mut out = vec![0.0; model.p];
    for (i, &xi) in x.iter().enumerate() {
        for j in 0..model.p {
            out[j] += xi * model.gamma[i * model.p + j];
        }
    }
    Ok(out)
}

/// Pick the ridge coefficient by k-fold cross validation on held-out
/// squared reconstruction error. Ties break toward the smallest eta;
/// fold assignment is a seeded shuffle.
pub fn select_eta_cv(
    x: &[Vec<f64>],
    xstar: &[Vec<f64>],
    folds: usize,
    grid: &[f64],
    seed: u64,
) -> Result<f64> {
    if folds < 2 {
        return Err(Error::invalid("need at least 2 folds"));
    }
    if grid.is_empty() {
        return Err(Error::invalid("eta grid is empty"));
    }
    let n = x.len();
    if n != xstar.len() {
        return Err(Error::invalid("row count mismatch"));
    }
    if n < folds {
        return Err(Error::invalid(format!("{n} rows cannot fill {folds} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let fold_of: Vec<usize> = {
        let mut f = vec![0usize; n];
        for (pos, &idx) in order.iter().enumerate() {
            f[idx] = pos % folds;
        }
        f
    };

    let mut sorted = grid.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut best_eta = sorted[0];
    let mut best_err = f64::INFINITY;
    for &eta in &sorted {
        let mut total = 0.0;
        let mut count = 0usize;
        for fold in 0..folds {
            let (mut tr_x, mut tr_s, mut te_x, mut te_s) =
                (Vec::new(), Vec::new(), Vec::new(), Vec::new());
            for i in 0..n {
                if fold_of[i] == fold {
                    te_x.push(x[i].clone());
                    te_s.push(xstar[i].clone());
                } else {
                    tr_x.push(x[i].clone());
                    tr_s.push(xstar[i].clone());
                }
            }
            let model = fit_fusion(&tr_x, &tr_s, eta)?;
            for (xi, si) in te_x.iter().zip(&te_s) {
                let pred = predict_privileged(&model, xi)?;
                total += pred.iter().zip(si).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
                count += 1;
            }
        }
        let err = total / count as f64;
        if err < best_err {
            best_err = err;
            best_eta = eta;
        }
    }
    Ok(best_eta)
}
