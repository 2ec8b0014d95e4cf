//! Adversarial offsets, the hybrid loss and the per-batch gradient.

use rayon::prelude::*;

use crate::error::Result;
use crate::field::{
    accumulate_param_grads, eval_grad_batch, grad_loss_wrt_query, projection_terms,
    query_loss_gradients, FieldGrads, FieldParams, ProjectionTerms,
};
use crate::Vec3;

/// Query-loss gradients shorter than this give no usable direction.
pub const OFFSET_EPS: f64 = 1e-12;

/// Rows handled per work item. Fixed so the reduction order never depends on
/// the thread count.
pub const CHUNK: usize = 256;

/// `rho * g / |g|`, or `None` when `|g|` is below [`OFFSET_EPS`].
pub fn offset_from_gradient(g: &Vec3, rho: f64) -> Option<Vec3> {
    let norm = g.norm();
    (norm >= OFFSET_EPS).then(|| g * (rho / norm))
}

/// The worst-case offset of the linearized loss on the `rho`-ball around `q`.
/// Falls back to zero when the loss gradient vanishes.
pub fn adversarial_offset(params: &FieldParams, q: &Vec3, p: &Vec3, rho: f64) -> Result<Vec3> {
    let g = grad_loss_wrt_query(params, q, p)?;
    Ok(offset_from_gradient(&g, rho).unwrap_or_else(Vec3::zeros))
}

/// `L/(2 l1) + L_adv/(2 l2) + ln(1 + l1) + ln(1 + l2)` for one query.
pub fn combined_loss(loss: f64, adv_loss: f64, lambda1: f64, lambda2: f64) -> f64 {
    loss / (2.0 * lambda1) + adv_loss / (2.0 * lambda2) + lambda1.ln_1p() + lambda2.ln_1p()
}

/// `d/d lambda` of `L/(2 lambda) + ln(1 + lambda)`.
pub fn lambda_gradient(loss: f64, lambda: f64) -> f64 {
    -loss / (2.0 * lambda * lambda) + 1.0 / (1.0 + lambda)
}

/// Per-batch reduction.
#[derive(Debug, Clone)]
pub struct BatchOutcome {
    /// Gradient of the batch objective, already divided by `valid`.
    pub grads: FieldGrads,
    pub mean_loss: f64,
    pub mean_adv_loss: Option<f64>,
    /// Batch objective: the hybrid loss, or the mean loss without an adversary.
    pub objective: f64,
    pub valid: usize,
    pub skipped: usize,
    pub zero_offsets: usize,
    /// Adversarial samples that ended up in use, for diagnostics.
    pub adversarial: Vec<(Vec3, usize)>,
}

struct Partial {
    grads: FieldGrads,
    loss_sum: f64,
    adv_sum: f64,
    valid: usize,
    skipped: usize,
    zero_offsets: usize,
    adversarial: Vec<(Vec3, usize)>,
}

/// Gradient of one batch. `labels[i]` indexes `points`; `rho` is `None` for
/// the plain loss. Per-query losses that are undefined (degenerate spatial
/// gradient at the query or at its adversarial sample) drop the query.
pub fn batch_gradients(
    params: &FieldParams,
    queries: &[Vec3],
    labels: &[usize],
    points: &[Vec3],
    rho: Option<&[f64]>,
) -> Result<BatchOutcome> {
    let n = queries.len();
    let (w1, w2) = match rho {
        Some(_) => (0.5 / params.lambda1, 0.5 / params.lambda2),
        None => (1.0, 0.0),
    };
    let partials: Vec<Result<Partial>> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let range = c * CHUNK..((c + 1) * CHUNK).min(n);
            chunk_gradients(
                params,
                &queries[range.clone()],
                &labels[range.clone()],
                points,
                rho.map(|r| &r[range]),
                (w1, w2),
            )
        })
        .collect();

    let mut grads = FieldGrads::zeros_like(params);
    let (mut loss_sum, mut adv_sum) = (0.0, 0.0);
    let (mut valid, mut skipped, mut zero_offsets) = (0, 0, 0);
    let mut adversarial = Vec::new();
    for p in partials {
        let p = p?;
        grads.add_assign(&p.grads);
        loss_sum += p.loss_sum;
        adv_sum += p.adv_sum;
        valid += p.valid;
        skipped += p.skipped;
        zero_offsets += p.zero_offsets;
        adversarial.extend(p.adversarial);
    }
    if valid == 0 {
        return Ok(BatchOutcome {
            grads,
            mean_loss: f64::NAN,
            mean_adv_loss: rho.map(|_| f64::NAN),
            objective: f64::NAN,
            valid,
            skipped,
            zero_offsets,
            adversarial,
        });
    }
    grads.scale(1.0 / valid as f64);
    let mean_loss = loss_sum / valid as f64;
    let (mean_adv_loss, objective) = match rho {
        Some(_) => {
            let mean_adv = adv_sum / valid as f64;
            grads.lambda1 = lambda_gradient(mean_loss, params.lambda1);
            grads.lambda2 = lambda_gradient(mean_adv, params.lambda2);
            let obj = combined_loss(mean_loss, mean_adv, params.lambda1, params.lambda2);
            (Some(mean_adv), obj)
        }
        None => (None, mean_loss),
    };
    Ok(BatchOutcome {
        grads,
        mean_loss,
        mean_adv_loss,
        objective,
        valid,
        skipped,
        zero_offsets,
        adversarial,
    })
}

fn chunk_gradients(
    params: &FieldParams,
    queries: &[Vec3],
    labels: &[usize],
    points: &[Vec3],
    rho: Option<&[f64]>,
    (w1, w2): (f64, f64),
) -> Result<Partial> {
    let mut grads = FieldGrads::zeros_like(params);
    let evals = eval_grad_batch(params, queries)?;
    let mut qs = Vec::with_capacity(queries.len());
    let mut ps = Vec::with_capacity(queries.len());
    let mut terms: Vec<ProjectionTerms> = Vec::with_capacity(queries.len());
    let mut rhos = Vec::with_capacity(queries.len());
    let mut ids = Vec::with_capacity(queries.len());
    let mut skipped = 0;
    for (i, e) in evals.iter().enumerate() {
        let p = points[labels[i]];
        match projection_terms(e, &queries[i], &p) {
            Some(t) => {
                qs.push(queries[i]);
                ps.push(p);
                terms.push(t);
                rhos.push(rho.map_or(0.0, |r| r[i]));
                ids.push(labels[i]);
            }
            None => skipped += 1,
        }
    }

    let Some(_) = rho else {
        let loss_sum = terms.iter().map(|t| t.loss).sum();
        let weights = vec![w1; qs.len()];
        accumulate_param_grads(params, &qs, &terms, &weights, &mut grads)?;
        return Ok(Partial {
            grads,
            loss_sum,
            adv_sum: 0.0,
            valid: qs.len(),
            skipped,
            zero_offsets: 0,
            adversarial: Vec::new(),
        });
    };

    // offsets are constants with respect to the parameters
    let gq = query_loss_gradients(params, &qs, &terms)?;
    let mut zero_offsets = 0;
    let adv_q: Vec<Vec3> = qs
        .iter()
        .zip(&gq)
        .zip(&rhos)
        .map(|((q, g), &r)| match offset_from_gradient(g, r) {
            Some(d) => q + d,
            None => {
                zero_offsets += 1;
                *q
            }
        })
        .collect();
    let adv_evals = eval_grad_batch(params, &adv_q)?;

    let (mut keep_q, mut keep_t, mut keep_aq, mut keep_at) = (vec![], vec![], vec![], vec![]);
    let mut adversarial = Vec::new();
    for i in 0..qs.len() {
        match projection_terms(&adv_evals[i], &adv_q[i], &ps[i]) {
            Some(at) => {
                keep_q.push(qs[i]);
                keep_t.push(terms[i]);
                keep_aq.push(adv_q[i]);
                keep_at.push(at);
                adversarial.push((adv_q[i], ids[i]));
            }
            None => skipped += 1,
        }
    }
    let loss_sum = keep_t.iter().map(|t| t.loss).sum();
    let adv_sum = keep_at.iter().map(|t| t.loss).sum();
    accumulate_param_grads(params, &keep_q, &keep_t, &vec![w1; keep_q.len()], &mut grads)?;
    accumulate_param_grads(params, &keep_aq, &keep_at, &vec![w2; keep_aq.len()], &mut grads)?;
    Ok(Partial {
        grads,
        loss_sum,
        adv_sum,
        valid: keep_q.len(),
        skipped,
        zero_offsets,
        adversarial,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{init_field, loss_query, Activation, FieldConfig, InitScheme};
    use rand::Rng;

    fn random_unit(rng: &mut crate::rng::Rng) -> Vec3 {
        loop {
            let v = Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let n = v.norm();
            if n > 1e-3 && n <= 1.0 {
                return v / n;
            }
        }
    }

    #[test]
    fn offset_normalizes_gradient() {
        assert_eq!(
            offset_from_gradient(&Vec3::new(2.0, 0.0, 0.0), 0.01),
            Some(Vec3::new(0.01, 0.0, 0.0))
        );
        assert_eq!(offset_from_gradient(&Vec3::zeros(), 0.01), None);
        let f = FieldParams::linear([0.0, 0.0, 0.0], 1.0);
        // degenerate field: loss undefined, so the offset errors out
        assert!(adversarial_offset(&f, &Vec3::zeros(), &Vec3::zeros(), 0.1).is_err());
        // zero query-loss gradient: q already projects onto p
        let f = FieldParams::linear([1.0, 0.0, 0.0], 0.0);
        let q = Vec3::new(0.3, 0.1, 0.0);
        let p = Vec3::new(0.0, 0.1, 0.0);
        assert_eq!(adversarial_offset(&f, &q, &p, 0.1).unwrap(), Vec3::zeros());
    }

    #[test]
    fn offset_maximizes_linearized_loss() {
        let f = init_field(&FieldConfig {
            hidden_layers: 3,
            hidden_width: 16,
            skip_layer: Some(1),
            activation: Activation::Softplus { beta: 5.0 },
            init: InitScheme::Geometric { radius: 0.3 },
            seed: 1,
        })
        .unwrap();
        let mut rng = crate::rng::rng(2);
        for _ in 0..5 {
            let q = random_unit(&mut rng) * 0.4;
            let p = random_unit(&mut rng) * 0.3;
            let rho = rng.random_range(1e-3..1e-1);
            let g = grad_loss_wrt_query(&f, &q, &p).unwrap();
            let d = adversarial_offset(&f, &q, &p, rho).unwrap();
            assert!((d.norm() - rho).abs() <= 1e-12 * rho);
            let best = d.dot(&g);
            for _ in 0..2000 {
                let cand = random_unit(&mut rng) * rho;
                assert!(best - cand.dot(&g) >= -1e-9);
            }
        }
    }

    #[test]
    fn hybrid_loss_closed_forms() {
        let expected = 0.5 * 0.7 + 0.5 * 1.3 + 2.0 * 2f64.ln();
        assert!((combined_loss(0.7, 1.3, 1.0, 1.0) - expected).abs() < 1e-15);
        assert_eq!(lambda_gradient(2.0, 1.0), -0.5);
    }

    #[test]
    fn lambda_gradient_matches_finite_differences() {
        let mut rng = crate::rng::rng(3);
        for _ in 0..100 {
            let (a, b) = (rng.random_range(0.0..2.0), rng.random_range(0.0..2.0));
            let (l1, l2) = (rng.random_range(0.1..3.0), rng.random_range(0.1..3.0));
            let h = 1e-6;
            let fd1 = (combined_loss(a, b, l1 + h, l2) - combined_loss(a, b, l1 - h, l2)) / (2.0 * h);
            let fd2 = (combined_loss(a, b, l1, l2 + h) - combined_loss(a, b, l1, l2 - h)) / (2.0 * h);
            assert!((fd1 - lambda_gradient(a, l1)).abs() < 1e-8);
            assert!((fd2 - lambda_gradient(b, l2)).abs() < 1e-8);
        }
    }

    fn small_problem(seed: u64) -> (FieldParams, Vec<Vec3>, Vec<usize>, Vec<Vec3>) {
        let f = init_field(&FieldConfig {
            hidden_layers: 2,
            hidden_width: 8,
            skip_layer: Some(1),
            activation: Activation::Softplus { beta: 4.0 },
            init: InitScheme::Geometric { radius: 0.3 },
            seed,
        })
        .unwrap();
        let mut rng = crate::rng::rng(seed + 1);
        let points: Vec<Vec3> = (0..20).map(|_| random_unit(&mut rng) * 0.3).collect();
        let labels: Vec<usize> = (0..600).map(|_| rng.random_range(0..20)).collect();
        let queries: Vec<Vec3> = labels
            .iter()
            .map(|&l| points[l] + random_unit(&mut rng) * 0.02)
            .collect();
        (f, queries, labels, points)
    }

    #[test]
    fn batch_gradient_matches_finite_differences_of_objective() {
        let (mut f, queries, labels, points) = small_problem(4);
        f.lambda1 = 0.8;
        f.lambda2 = 1.3;
        let rho = vec![0.01; queries.len()];
        let out = batch_gradients(&f, &queries, &labels, &points, Some(&rho)).unwrap();
        assert_eq!(out.valid, queries.len());
        // objective with offsets frozen at their current values
        let adv: Vec<Vec3> = out.adversarial.iter().map(|a| a.0).collect();
        let objective = |f: &FieldParams| -> f64 {
            let n = queries.len() as f64;
            let l: f64 = (0..queries.len())
                .map(|i| loss_query(f, &queries[i], &points[labels[i]]).unwrap())
                .sum::<f64>()
                / n;
            let la: f64 = (0..queries.len())
                .map(|i| loss_query(f, &adv[i], &points[labels[i]]).unwrap())
                .sum::<f64>()
                / n;
            combined_loss(l, la, f.lambda1, f.lambda2)
        };
        assert!((objective(&f) - out.objective).abs() < 1e-12);
        let analytic: Vec<f64> = out.grads.values().copied().collect();
        let h = 1e-6;
        for i in (0..f.parameter_count()).step_by(7).chain([f.parameter_count() - 2, f.parameter_count() - 1]) {
            let orig = *f.values().nth(i).unwrap();
            *f.values_mut().nth(i).unwrap() = orig + h;
            let up = objective(&f);
            *f.values_mut().nth(i).unwrap() = orig - h;
            let down = objective(&f);
            *f.values_mut().nth(i).unwrap() = orig;
            let fd = (up - down) / (2.0 * h);
            let err = (fd - analytic[i]).abs() / fd.abs().max(analytic[i].abs()).max(1e-6);
            assert!(err < 1e-4, "param {i}: fd {fd} vs {}", analytic[i]);
        }
    }

    #[test]
    fn zero_radius_reproduces_plain_loss() {
        let (f, queries, labels, points) = small_problem(5);
        let rho = vec![0.0; queries.len()];
        let adv = batch_gradients(&f, &queries, &labels, &points, Some(&rho)).unwrap();
        let erm = batch_gradients(&f, &queries, &labels, &points, None).unwrap();
        assert_eq!(adv.mean_adv_loss.unwrap().to_bits(), adv.mean_loss.to_bits());
        assert_eq!(adv.mean_loss.to_bits(), erm.mean_loss.to_bits());
        for (a, e) in adv.grads.values().zip(erm.grads.values()).take(f.parameter_count() - 2) {
            // L/2 + L/2 at unit loss weights
            assert!((a - e).abs() <= 1e-15 * e.abs().max(1.0));
        }
    }
}
