use ndarray::{Array1, Array2, ArrayView2};

use super::mlp;
use super::{FieldGrads, FieldParams};
use crate::error::{Error, Result};
use crate::Vec3;

/// Spatial gradients shorter than this make the projection undefined.
pub const GRAD_EPS: f64 = 1e-12;

/// Rows per pass; bounds the memory of a recorded tape.
const CHUNK: usize = 4096;

/// Field value, spatial gradient and projected point at a query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryEval {
    pub value: f64,
    pub grad: Vec3,
    /// `q - f * grad / |grad|`; `None` when the gradient is degenerate.
    pub projection: Option<Vec3>,
}

impl QueryEval {
    pub fn is_degenerate(&self) -> bool {
        self.projection.is_none()
    }
}

fn to_rows(qs: &[Vec3]) -> Array2<f64> {
    let mut a = Array2::zeros((qs.len(), 3));
    for (mut row, q) in a.rows_mut().into_iter().zip(qs) {
        row[0] = q.x;
        row[1] = q.y;
        row[2] = q.z;
    }
    a
}

fn row_vec(a: &ArrayView2<f64>, i: usize) -> Vec3 {
    Vec3::new(a[[i, 0]], a[[i, 1]], a[[i, 2]])
}

pub fn eval(params: &FieldParams, q: &Vec3) -> Result<f64> {
    Ok(eval_batch(params, std::slice::from_ref(q))?[0])
}

pub fn eval_batch(params: &FieldParams, qs: &[Vec3]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(qs.len());
    for chunk in qs.chunks(CHUNK) {
        let f = mlp::forward(params, to_rows(chunk).view())?;
        out.extend(f.iter().copied());
    }
    Ok(out)
}

pub fn eval_grad(params: &FieldParams, q: &Vec3) -> Result<QueryEval> {
    Ok(eval_grad_batch(params, std::slice::from_ref(q))?[0])
}

pub fn eval_grad_batch(params: &FieldParams, qs: &[Vec3]) -> Result<Vec<QueryEval>> {
    let mut out = Vec::with_capacity(qs.len());
    for chunk in qs.chunks(CHUNK) {
        let x = to_rows(chunk);
        let tape = mlp::forward_tape(params, x.view(), None)?;
        let ones = Array1::ones(chunk.len());
        let adj = mlp::backward(params, &tape, ones.view(), None, None);
        let g = adj.input.view();
        for (i, q) in chunk.iter().enumerate() {
            let value = tape.value[i];
            let grad = row_vec(&g, i);
            let norm = grad.norm();
            let projection = (norm >= GRAD_EPS).then(|| q - grad * (value / norm));
            out.push(QueryEval {
                value,
                grad,
                projection,
            });
        }
    }
    Ok(out)
}

/// Intermediate quantities of the projection loss
/// `L(q) = |q - f grad/|grad| - p|^2` at one query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionTerms {
    pub value: f64,
    pub grad: Vec3,
    pub grad_norm: f64,
    /// `grad / |grad|`
    pub normal: Vec3,
    /// `projection - p`
    pub residual: Vec3,
    pub loss: f64,
    /// `(f / |grad|) (I - n n^T) r`; the direction along which the loss
    /// depends on the spatial gradient.
    pub tangent: Vec3,
}

pub fn projection_terms(eval: &QueryEval, q: &Vec3, p: &Vec3) -> Option<ProjectionTerms> {
    let grad_norm = eval.grad.norm();
    if !(grad_norm >= GRAD_EPS) {
        return None;
    }
    let normal = eval.grad / grad_norm;
    let residual = q - normal * eval.value - p;
    let n_dot_r = normal.dot(&residual);
    let tangent = (residual - normal * n_dot_r) * (eval.value / grad_norm);
    Some(ProjectionTerms {
        value: eval.value,
        grad: eval.grad,
        grad_norm,
        normal,
        residual,
        loss: residual.norm_squared(),
        tangent,
    })
}

pub fn loss_query(params: &FieldParams, q: &Vec3, p: &Vec3) -> Result<f64> {
    let e = eval_grad(params, q)?;
    projection_terms(&e, q, p)
        .map(|t| t.loss)
        .ok_or(Error::DegenerateGradient)
}

/// Gradient of the projection loss with respect to the query point, holding
/// the parameters and `p` fixed.
pub fn grad_loss_wrt_query(params: &FieldParams, q: &Vec3, p: &Vec3) -> Result<Vec3> {
    let e = eval_grad(params, q)?;
    let terms = projection_terms(&e, q, p).ok_or(Error::DegenerateGradient)?;
    Ok(query_loss_gradients(params, std::slice::from_ref(q), &[terms])?[0])
}

/// Batched `grad_q L` for queries whose terms are already known:
/// `2 (r - (n . r) grad f - H u)` with `u = terms.tangent`.
pub fn query_loss_gradients(
    params: &FieldParams,
    qs: &[Vec3],
    terms: &[ProjectionTerms],
) -> Result<Vec<Vec3>> {
    assert_eq!(qs.len(), terms.len());
    let mut out = Vec::with_capacity(qs.len());
    let piecewise_linear = params.config.activation.is_piecewise_linear();
    for (qc, tc) in qs.chunks(CHUNK).zip(terms.chunks(CHUNK)) {
        // H u vanishes almost everywhere for piecewise-linear fields
        let hu = if piecewise_linear {
            None
        } else {
            let x = to_rows(qc);
            let u: Vec<Vec3> = tc.iter().map(|t| t.tangent).collect();
            let t = to_rows(&u);
            let tape = mlp::forward_tape(params, x.view(), Some(t.view()))?;
            let zeros = Array1::zeros(qc.len());
            let ones = Array1::ones(qc.len());
            Some(mlp::backward(params, &tape, zeros.view(), Some(ones.view()), None).input)
        };
        for (i, t) in tc.iter().enumerate() {
            let mut g = t.residual - t.grad * t.normal.dot(&t.residual);
            if let Some(hu) = &hu {
                g -= row_vec(&hu.view(), i);
            }
            out.push(g * 2.0);
        }
    }
    Ok(out)
}

/// Adds the parameter gradient of `sum_i weights[i] * L(q_i)` into `grads`.
pub fn accumulate_param_grads(
    params: &FieldParams,
    qs: &[Vec3],
    terms: &[ProjectionTerms],
    weights: &[f64],
    grads: &mut FieldGrads,
) -> Result<()> {
    assert!(qs.len() == terms.len() && qs.len() == weights.len());
    for ((qc, tc), wc) in qs
        .chunks(CHUNK)
        .zip(terms.chunks(CHUNK))
        .zip(weights.chunks(CHUNK))
    {
        let x = to_rows(qc);
        let u: Vec<Vec3> = tc.iter().map(|t| t.tangent).collect();
        let t = to_rows(&u);
        let tape = mlp::forward_tape(params, x.view(), Some(t.view()))?;
        // dL/dtheta = -2 (n . r) df/dtheta - 2 d(u . grad f)/dtheta
        let seed_value: Array1<f64> = tc
            .iter()
            .zip(wc)
            .map(|(t, w)| -2.0 * t.normal.dot(&t.residual) * w)
            .collect();
        let seed_tangent: Array1<f64> = wc.iter().map(|w| -2.0 * w).collect();
        mlp::backward(
            params,
            &tape,
            seed_value.view(),
            Some(seed_tangent.view()),
            Some(grads),
        );
    }
    Ok(())
}

/// Losses and the exact parameter gradient of `sum_i weights[i] * L(q_i, p_i)`.
/// Queries with a degenerate spatial gradient are skipped and reported as
/// `None`.
pub fn backward_params(
    params: &FieldParams,
    qs: &[Vec3],
    ps: &[Vec3],
    weights: &[f64],
) -> Result<(Vec<Option<f64>>, FieldGrads)> {
    assert!(qs.len() == ps.len() && qs.len() == weights.len());
    let evals = eval_grad_batch(params, qs)?;
    let mut losses = Vec::with_capacity(qs.len());
    let (mut vq, mut vt, mut vw) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..qs.len() {
        match projection_terms(&evals[i], &qs[i], &ps[i]) {
            Some(t) => {
                losses.push(Some(t.loss));
                vq.push(qs[i]);
                vt.push(t);
                vw.push(weights[i]);
            }
            None => losses.push(None),
        }
    }
    let mut grads = FieldGrads::zeros_like(params);
    accumulate_param_grads(params, &vq, &vt, &vw, &mut grads)?;
    Ok((losses, grads))
}
