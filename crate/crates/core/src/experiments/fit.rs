use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Map applied to the sweep axis before regression.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Transform {
    Identity,
    /// x -> x^(-p)
    InversePower { p: f64 },
    /// x -> c - x
    Offset { c: f64 },
}

impl Transform {
    pub fn apply(&self, x: f64) -> f64 {
        match *self {
            Transform::Identity => x,
            Transform::InversePower { p } => x.powf(-p),
            Transform::Offset { c } => c - x,
        }
    }
}

/// Map applied to the boundary N* before regression.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Response {
    #[default]
    N,
    InvSqrtN,
}

impl Response {
    pub fn apply(&self, n: f64) -> f64 {
        match self {
            Response::N => n,
            Response::InvSqrtN => 1.0 / n.sqrt(),
        }
    }
}

/// Which regression a sweep reports.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSpec {
    pub transform: Transform,
    #[serde(default)]
    pub response: Response,
}

/// Fits `response(N*)` against `transform(axis value)`.
pub fn fit_boundary(boundary: &[(f64, usize)], spec: FitSpec) -> Result<ScalingFit> {
    let pts: Vec<(f64, f64)> = boundary
        .iter()
        .map(|&(x, n)| (x, spec.response.apply(n as f64)))
        .collect();
    fit_scaling(&pts, spec.transform)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScalingFit {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    /// 0 when the ys have zero total variance.
    pub r_squared: f64,
}

/// Ordinary least squares of `y` on `transform(x)`.
pub fn fit_scaling(points: &[(f64, f64)], transform: Transform) -> Result<ScalingFit> {
    if points.len() < 3 {
        return Err(Error::DegenerateFit(format!("need at least 3 points, got {}", points.len())));
    }
    let xs: Vec<f64> = points.iter().map(|&(x, _)| transform.apply(x)).collect();
    let ys: Vec<f64> = points.iter().map(|&(_, y)| y).collect();
    if xs.iter().chain(&ys).any(|v| !v.is_finite()) {
        return Err(Error::DegenerateFit("non-finite coordinate".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx <= f64::EPSILON * xs.iter().map(|x| x * x).sum::<f64>() {
        return Err(Error::DegenerateFit("all transformed x values coincide".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 {
        0.0
    } else {
        let sse: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
        (1.0 - sse / syy).clamp(0.0, 1.0)
    };
    Ok(ScalingFit {
        xs,
        ys,
        slope,
        intercept,
        r_squared,
    })
}
