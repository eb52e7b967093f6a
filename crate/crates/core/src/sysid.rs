//! Linear discrete-time state-space model: ARX least squares followed by an
//! observer-canonical realization.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{LdtError, Result};

/// Columns whose scaled singular value falls below this fraction of the
/// largest are treated as linearly dependent.
const RANK_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub dt: f64,
}

/// ARX polynomial coefficients of
/// `y[k] + a1 y[k-1] + .. + an y[k-n] = b1 u[k-1] + .. + bn u[k-n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArxCoefficients {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl LinearModel {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>, dt: f64) -> Result<Self> {
        let n = a.nrows();
        let ok = a.is_square() && b.nrows() == n && c.ncols() == n && d.nrows() == c.nrows() && d.ncols() == b.ncols();
        if !ok {
            return Err(LdtError::Identification(format!(
                "inconsistent dimensions A {}x{}, B {}x{}, C {}x{}, D {}x{}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols(),
                c.nrows(),
                c.ncols(),
                d.nrows(),
                d.ncols()
            )));
        }
        if [&a, &b, &c, &d].iter().any(|m| m.iter().any(|v| !v.is_finite())) {
            return Err(LdtError::NonFinite("linear model matrices"));
        }
        Ok(Self { a, b, c, d, dt })
    }

    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    /// Observer-canonical realization of an ARX polynomial pair.
    pub fn from_arx(arx: &ArxCoefficients, dt: f64) -> Result<Self> {
        let n = arx.a.len();
        if n == 0 || arx.b.len() != n {
            return Err(LdtError::Identification("ARX polynomials must share a positive order".into()));
        }
        let mut a = DMatrix::zeros(n, n);
        for i in 0..n {
            a[(i, 0)] = -arx.a[i];
            if i + 1 < n {
                a[(i, i + 1)] = 1.0;
            }
        }
        let b = DMatrix::from_column_slice(n, 1, &arx.b);
        let mut c = DMatrix::zeros(1, n);
        c[(0, 0)] = 1.0;
        Self::new(a, b, c, DMatrix::zeros(1, 1), dt)
    }

    /// Largest eigenvalue magnitude of `A`; above 1 the free response grows.
    pub fn spectral_radius(&self) -> f64 {
        self.a.clone().complex_eigenvalues().iter().map(|l| l.norm()).fold(0.0, f64::max)
    }

    pub fn is_stable(&self) -> bool {
        self.spectral_radius() < 1.0
    }

    /// Free-run simulation from the least-norm state with `C x0 = y0`. The
    /// direct feedthrough is not applied at the first sample.
    pub fn rollout(&self, u: &[f64], y0: f64) -> Result<Vec<f64>> {
        if self.b.ncols() != 1 || self.c.nrows() != 1 {
            return Err(LdtError::Identification("rollout supports single-input single-output models".into()));
        }
        let n = self.order();
        let c_row = self.c.row(0).transpose();
        let norm2 = c_row.norm_squared();
        let mut x = if norm2 > 0.0 { &c_row * (y0 / norm2) } else { DVector::zeros(n) };
        let b = self.b.column(0);
        let dd = self.d[(0, 0)];

        let mut out = Vec::with_capacity(u.len());
        for (k, &uk) in u.iter().enumerate() {
            let y = if k == 0 { c_row.dot(&x) } else { c_row.dot(&x) + dd * uk };
            if !y.is_finite() {
                return Err(LdtError::RolloutDiverged { step: k });
            }
            out.push(y);
            x = &self.a * &x + b * uk;
        }
        Ok(out)
    }
}

/// Least-squares ARX(n, n) fit over all records jointly.
pub fn fit_arx(records: &[(&[f64], &[f64])], order: usize) -> Result<ArxCoefficients> {
    if order < 1 {
        return Err(LdtError::Config("model order must be at least 1".into()));
    }
    if records.is_empty() {
        return Err(LdtError::Identification("empty dataset".into()));
    }
    for (u, y) in records {
        if u.len() != y.len() {
            return Err(LdtError::LengthMismatch { expected: u.len(), actual: y.len() });
        }
        if u.len() < 10 * order {
            return Err(LdtError::Identification(format!(
                "record of length {} is shorter than 10 x order {order}",
                u.len()
            )));
        }
        if u.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(LdtError::NonFinite("identification data"));
        }
    }

    let rows: usize = records.iter().map(|(u, _)| u.len() - order).sum();
    let params = 2 * order;
    let mut phi = DMatrix::zeros(rows, params);
    let mut target = DVector::zeros(rows);
    let mut r = 0;
    for (u, y) in records {
        for k in order..u.len() {
            for i in 0..order {
                phi[(r, i)] = -y[k - 1 - i];
                phi[(r, order + i)] = u[k - 1 - i];
            }
            target[r] = y[k];
            r += 1;
        }
    }

    // Identically zero columns carry no information; their coefficient is
    // pinned to zero and the remaining columns must be independent.
    let norms: Vec<f64> = (0..params).map(|j| phi.column(j).norm()).collect();
    let active: Vec<usize> = (0..params).filter(|&j| norms[j] > 0.0).collect();
    if active.iter().all(|&j| j < order) {
        return Err(LdtError::Identification("input is identically zero".into()));
    }
    let mut scaled = DMatrix::zeros(rows, active.len());
    for (col, &j) in active.iter().enumerate() {
        scaled.set_column(col, &(phi.column(j) / norms[j]));
    }
    let svd = scaled.svd(true, true);
    let s_max = svd.singular_values.max();
    let s_min = svd.singular_values.min();
    if s_min <= RANK_TOLERANCE * s_max {
        return Err(LdtError::Identification(format!(
            "rank-deficient regression (singular value ratio {:.3e}); excitation is degenerate for order {order}",
            s_min / s_max
        )));
    }
    let theta_scaled = svd.solve(&target, 0.0).map_err(|e| LdtError::Identification(e.to_string()))?;

    let mut theta = vec![0.0; params];
    for (col, &j) in active.iter().enumerate() {
        theta[j] = theta_scaled[col] / norms[j];
    }
    Ok(ArxCoefficients { a: theta[..order].to_vec(), b: theta[order..].to_vec() })
}

/// Identifies the order-`order` model minimizing one-step prediction error.
pub fn identify_linear(records: &[(&[f64], &[f64])], order: usize, dt: f64) -> Result<LinearModel> {
    let arx = fit_arx(records, order)?;
    LinearModel::from_arx(&arx, dt)
}

/// Tries `max_order` first and steps down while the regression is
/// rank-deficient; exactly low-order data cannot support a higher order.
pub fn identify_linear_up_to(records: &[(&[f64], &[f64])], max_order: usize, dt: f64) -> Result<LinearModel> {
    let mut last = None;
    for order in (1..=max_order).rev() {
        match identify_linear(records, order, dt) {
            Ok(model) => return Ok(model),
            Err(err @ LdtError::Identification(_)) => last = Some(err),
            Err(err) => return Err(err),
        }
    }
    Err(last.unwrap_or_else(|| LdtError::Config("model order must be at least 1".into())))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinearModelJson {
    order: usize,
    dt: f64,
    #[serde(rename = "A")]
    a: Vec<f64>,
    #[serde(rename = "B")]
    b: Vec<f64>,
    #[serde(rename = "C")]
    c: Vec<f64>,
    #[serde(rename = "D")]
    d: Vec<f64>,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

impl Serialize for LinearModel {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        LinearModelJson {
            order: self.order(),
            dt: self.dt,
            a: row_major(&self.a),
            b: row_major(&self.b),
            c: row_major(&self.c),
            d: row_major(&self.d),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for LinearModel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error;
        let j = LinearModelJson::deserialize(deserializer)?;
        let n = j.order;
        if n == 0 || j.a.len() != n * n || j.b.len() % n != 0 || j.c.len() % n != 0 {
            return Err(D::Error::custom("matrix sizes do not match order"));
        }
        let (p, q) = (j.b.len() / n, j.c.len() / n);
        if j.d.len() != p * q {
            return Err(D::Error::custom("D must be q x p"));
        }
        LinearModel::new(
            DMatrix::from_row_slice(n, n, &j.a),
            DMatrix::from_row_slice(n, p, &j.b),
            DMatrix::from_row_slice(q, n, &j.c),
            DMatrix::from_row_slice(q, p, &j.d),
            j.dt,
        )
        .map_err(D::Error::custom)
    }
}
