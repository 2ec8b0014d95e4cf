//! Batched forward / reverse passes through the MLP.
//!
//! Rows are independent samples. A pass may carry a tangent `t` alongside
//! the input `x`, producing `f(x)` and the directional derivative
//! `f'(x; t) = t . grad f(x)`. The reverse pass then takes seeds `(a, c)` per
//! row and returns the derivatives of `sum_i a_i f(x_i) + c_i f'(x_i; t_i)`
//! with respect to the inputs, the tangents and (optionally) every parameter.

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};

use super::kernel::matmul;
use super::{Activation, FieldGrads, FieldParams};
use crate::error::{Error, Result};

const INV_SQRT2: f64 = std::f64::consts::FRAC_1_SQRT_2;

pub(crate) struct Tape {
    activation: Activation,
    skip: Option<usize>,
    /// Input of each hidden layer (after skip concatenation).
    inputs: Vec<Array2<f64>>,
    tangent_inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    tangent_pre: Vec<Array2<f64>>,
    last_hidden: Array2<f64>,
    tangent_last_hidden: Option<Array2<f64>>,
    pub value: Array1<f64>,
    pub tangent_value: Option<Array1<f64>>,
}

pub(crate) struct Adjoints {
    pub input: Array2<f64>,
    #[cfg_attr(not(test), allow(dead_code))]
    pub tangent: Option<Array2<f64>>,
}

fn check_finite(a: &Array2<f64>, layer: usize) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteLayer { layer })
    }
}

fn skip_concat(h: &Array2<f64>, x: ArrayView2<f64>) -> Array2<f64> {
    let mut out = concatenate![Axis(1), h.view(), x];
    out *= INV_SQRT2;
    out
}

fn affine(input: &Array2<f64>, layer: &super::Dense) -> Array2<f64> {
    let mut z = matmul(input.view(), layer.weight.t());
    z += &layer.bias;
    z
}

/// Value-only forward pass.
pub(crate) fn forward(params: &FieldParams, x: ArrayView2<f64>) -> Result<Array1<f64>> {
    let act = params.config.activation;
    let skip = params.config.skip_layer;
    let mut h = x.to_owned();
    for (l, layer) in params.hidden().iter().enumerate() {
        let input = if skip == Some(l) { skip_concat(&h, x) } else { h };
        let mut z = affine(&input, layer);
        check_finite(&z, l)?;
        z.mapv_inplace(|v| act.value(v));
        h = z;
    }
    let out = params.output();
    let mut f = h.dot(&out.weight.row(0));
    f += out.bias[0];
    if f.iter().all(|v| v.is_finite()) {
        Ok(f)
    } else {
        Err(Error::NonFiniteLayer {
            layer: params.hidden().len(),
        })
    }
}

/// Forward pass recording everything the reverse pass needs.
pub(crate) fn forward_tape(
    params: &FieldParams,
    x: ArrayView2<f64>,
    tangent: Option<ArrayView2<f64>>,
) -> Result<Tape> {
    let act = params.config.activation;
    let skip = params.config.skip_layer;
    let n_hidden = params.hidden().len();
    let mut tape = Tape {
        activation: act,
        skip,
        inputs: Vec::with_capacity(n_hidden),
        tangent_inputs: Vec::with_capacity(n_hidden),
        pre: Vec::with_capacity(n_hidden),
        tangent_pre: Vec::with_capacity(n_hidden),
        last_hidden: Array2::zeros((0, 0)),
        tangent_last_hidden: None,
        value: Array1::zeros(0),
        tangent_value: None,
    };

    let mut h = x.to_owned();
    let mut ht = tangent.map(|t| t.to_owned());
    for (l, layer) in params.hidden().iter().enumerate() {
        let input = if skip == Some(l) { skip_concat(&h, x) } else { h };
        let z = affine(&input, layer);
        check_finite(&z, l)?;
        h = z.mapv(|v| act.value(v));
        if let (Some(t_prev), Some(t0)) = (ht.take(), tangent) {
            let t_input = if skip == Some(l) {
                skip_concat(&t_prev, t0)
            } else {
                t_prev
            };
            let zt = matmul(t_input.view(), layer.weight.t());
            let mut next = zt.clone();
            Zip::from(&mut next).and(&z).for_each(|t, &zv| *t *= act.first(zv));
            ht = Some(next);
            tape.tangent_inputs.push(t_input);
            tape.tangent_pre.push(zt);
        }
        tape.inputs.push(input);
        tape.pre.push(z);
    }

    let out = params.output();
    let w_out = out.weight.row(0);
    let mut f = h.dot(&w_out);
    f += out.bias[0];
    if !f.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFiniteLayer { layer: n_hidden });
    }
    tape.value = f;
    tape.tangent_value = ht.as_ref().map(|t| t.dot(&w_out));
    tape.last_hidden = h;
    tape.tangent_last_hidden = ht;
    Ok(tape)
}

/// Reverse pass. `seed_tangent` is ignored when the tape has no tangent.
/// Parameter gradients are accumulated into `grads` when given.
pub(crate) fn backward(
    params: &FieldParams,
    tape: &Tape,
    seed_value: ArrayView1<f64>,
    seed_tangent: Option<ArrayView1<f64>>,
    mut grads: Option<&mut FieldGrads>,
) -> Adjoints {
    let act = tape.activation;
    let rows = tape.value.len();
    let has_tangent = tape.tangent_last_hidden.is_some() && seed_tangent.is_some();
    let out = params.output();
    let w_out = out.weight.row(0);
    let n_hidden = params.hidden().len();

    // d/d(last hidden)
    let mut h_adj = outer(seed_value, w_out);
    let mut ht_adj = if has_tangent {
        Some(outer(seed_tangent.expect("checked"), w_out))
    } else {
        None
    };

    if let Some(g) = grads.as_deref_mut() {
        let go = &mut g.layers[n_hidden];
        let mut gw = tape.last_hidden.t().dot(&seed_value);
        if let (true, Some(ht)) = (has_tangent, &tape.tangent_last_hidden) {
            gw += &ht.t().dot(&seed_tangent.expect("checked"));
        }
        let mut row = go.weight.row_mut(0);
        row += &gw;
        go.bias[0] += seed_value.sum();
    }

    let mut x_adj = Array2::<f64>::zeros((rows, 3));
    let mut t_adj = if has_tangent {
        Some(Array2::<f64>::zeros((rows, 3)))
    } else {
        None
    };

    for l in (0..n_hidden).rev() {
        let layer = &params.hidden()[l];
        let z = &tape.pre[l];
        // z_adj = h_adj * s'(z) + ht_adj * s''(z) * zt ; zt_adj = ht_adj * s'(z)
        let mut z_adj = h_adj;
        Zip::from(&mut z_adj).and(z).for_each(|a, &zv| *a *= act.first(zv));
        let zt_adj = if let Some(ht_adj) = ht_adj.take() {
            let zt = &tape.tangent_pre[l];
            if !act.is_piecewise_linear() {
                Zip::from(&mut z_adj)
                    .and(&ht_adj)
                    .and(z)
                    .and(zt)
                    .for_each(|a, &b, &zv, &ztv| *a += b * act.second(zv) * ztv);
            }
            let mut zt_adj = ht_adj;
            Zip::from(&mut zt_adj).and(z).for_each(|a, &zv| *a *= act.first(zv));
            Some(zt_adj)
        } else {
            None
        };

        if let Some(g) = grads.as_deref_mut() {
            let gl = &mut g.layers[l];
            gl.weight += &matmul(z_adj.t(), tape.inputs[l].view());
            if let Some(zt_adj) = &zt_adj {
                gl.weight += &matmul(zt_adj.t(), tape.tangent_inputs[l].view());
            }
            gl.bias += &z_adj.sum_axis(Axis(0));
        }

        let mut in_adj = matmul(z_adj.view(), layer.weight.view());
        let mut tin_adj = zt_adj.map(|a| matmul(a.view(), layer.weight.view()));
        if tape.skip == Some(l) {
            in_adj *= INV_SQRT2;
            let d = in_adj.ncols() - 3;
            x_adj += &in_adj.slice(s![.., d..]);
            in_adj = in_adj.slice(s![.., ..d]).to_owned();
            if let (Some(ta), Some(tin)) = (t_adj.as_mut(), tin_adj.as_mut()) {
                *tin *= INV_SQRT2;
                *ta += &tin.slice(s![.., d..]);
                *tin = tin.slice(s![.., ..d]).to_owned();
            }
        }
        h_adj = in_adj;
        ht_adj = tin_adj;
    }
    x_adj += &h_adj;
    if let (Some(ta), Some(ht)) = (t_adj.as_mut(), ht_adj) {
        *ta += &ht;
    }
    Adjoints {
        input: x_adj,
        tangent: t_adj,
    }
}

fn outer(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((a.len(), b.len()));
    Zip::from(out.rows_mut()).and(&a).for_each(|mut row, &av| {
        row.assign(&b);
        row *= av;
    });
    out
}
