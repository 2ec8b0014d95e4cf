//! The training loop: query mining around the input cloud, adversarial
//! offsets, the hybrid loss with learnable weights and Adam updates.

mod adam;
mod curves;
mod loss;
mod queries;
mod select;

pub use adam::{Adam, LAMBDA_MIN};
pub use curves::{write_curves, CurveRow, CURVES_HEADER};
pub use loss::{
    adversarial_offset, batch_gradients, combined_loss, lambda_gradient, offset_from_gradient,
    BatchOutcome, CHUNK, OFFSET_EPS,
};
pub use queries::{generate_queries, QuerySet, RadiusRule};
pub use select::{
    select_best_by, select_best_snapshot, snapshot_score, SelectionConfig, SelectionResult,
};

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::field::{init_field, FieldConfig, FieldParams};
use crate::pointcloud::PointCloud;
use crate::rng::{self, Stage};
use crate::spatial::{compute_local_sigmas_with, LocalScales, SpatialIndex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Plain projection loss over the fixed query set.
    Erm,
    /// Hybrid loss with per-query radii from local scales.
    AdversarialLocal,
    /// Hybrid loss with one radius from the mean local scale.
    AdversarialGlobal,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Erm, Mode::AdversarialLocal, Mode::AdversarialGlobal];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Erm => "erm",
            Mode::AdversarialLocal => "adversarial-local",
            Mode::AdversarialGlobal => "adversarial-global",
        }
    }

    pub fn is_adversarial(self) -> bool {
        self != Mode::Erm
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown mode `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub n_iterations: usize,
    pub batch_size: usize,
    /// Neighbour count for local scales.
    pub k: usize,
    pub learning_rate: f64,
    pub rho_scale: f64,
    pub queries_per_point: usize,
    pub snapshot_every: usize,
    pub mode: Mode,
    pub seed: u64,
    /// Architecture. Its `seed` is ignored; initialization draws from the
    /// run seed.
    pub field: FieldConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_iterations: 40_000,
            batch_size: 5000,
            k: 51,
            learning_rate: 1e-3,
            rho_scale: 1e-2,
            queries_per_point: 25,
            snapshot_every: 1000,
            mode: Mode::AdversarialLocal,
            seed: 0,
            field: FieldConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("batch_size", self.batch_size),
            ("k", self.k),
            ("queries_per_point", self.queries_per_point),
            ("snapshot_every", self.snapshot_every),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be at least 1")));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        if !(self.rho_scale >= 0.0 && self.rho_scale.is_finite()) {
            return Err(Error::InvalidArgument("rho_scale must be non-negative".into()));
        }
        self.field.validate()
    }

    pub fn radius_rule(&self) -> RadiusRule {
        match self.mode {
            Mode::AdversarialGlobal => RadiusRule::Global(self.rho_scale),
            _ => RadiusRule::Local(self.rho_scale),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRow {
    pub iteration: usize,
    /// Mean projection loss of the batch.
    pub train_loss: f64,
    /// Mean loss at the adversarial samples; absent without an adversary.
    pub adv_loss: Option<f64>,
    pub lambda1: f64,
    pub lambda2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub iteration: usize,
    pub params: FieldParams,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Diagnostics {
    /// Queries dropped because a spatial gradient was degenerate.
    pub skipped_queries: usize,
    /// Adversarial queries whose loss gradient vanished (offset set to zero).
    pub zero_offsets: usize,
    pub adversarial_samples: usize,
    /// Adversarial samples whose exact nearest input point differs from the
    /// cached label of their base query.
    pub nearest_mismatches: usize,
    pub duplicate_points: usize,
}

impl Diagnostics {
    pub fn nearest_mismatch_fraction(&self) -> Option<f64> {
        (self.adversarial_samples > 0)
            .then(|| self.nearest_mismatches as f64 / self.adversarial_samples as f64)
    }
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: FieldParams,
    pub optimizer: Adam,
    pub iteration: usize,
    pub history: Vec<HistoryRow>,
    pub snapshots: Vec<Snapshot>,
    pub diagnostics: Diagnostics,
    pub sigmas: LocalScales,
    pub queries: QuerySet,
}

/// Called after every iteration with the state so far; returning `false`
/// stops training early.
pub type Observer<'a> = dyn FnMut(&TrainState) -> bool + 'a;

pub fn train(cloud: &PointCloud, config: &TrainConfig) -> Result<TrainState> {
    train_with(cloud, config, &mut |_| true)
}

/// Fits a field to `cloud` (already normalized). Snapshots are taken every
/// `snapshot_every` iterations and at the final iteration.
pub fn train_with(
    cloud: &PointCloud,
    config: &TrainConfig,
    observer: &mut Observer<'_>,
) -> Result<TrainState> {
    config.validate()?;
    if cloud.len() < 2 {
        return Err(Error::DegenerateInput(format!(
            "training needs at least 2 points, got {}",
            cloud.len()
        )));
    }
    let index = SpatialIndex::build(cloud);
    let sigmas = compute_local_sigmas_with(&index, config.k)?;
    let queries = generate_queries(
        cloud,
        &index,
        &sigmas,
        config.queries_per_point,
        config.radius_rule(),
        rng::stage_seed(config.seed, Stage::Queries),
    )?;
    let field_config = FieldConfig {
        seed: rng::stage_seed(config.seed, Stage::FieldInit),
        ..config.field.clone()
    };
    let params = init_field(&field_config)?;
    let optimizer = Adam::new(config.learning_rate, params.parameter_count());
    let mut state = TrainState {
        params,
        optimizer,
        iteration: 0,
        history: Vec::with_capacity(config.n_iterations),
        snapshots: Vec::new(),
        diagnostics: Diagnostics {
            duplicate_points: cloud.duplicate_count(),
            ..Diagnostics::default()
        },
        sigmas,
        queries,
    };

    let mut batch_rng = rng::rng(rng::stage_seed(config.seed, Stage::Batches));
    let points = cloud.points();
    let mut batch_q = Vec::with_capacity(config.batch_size);
    let mut batch_l = Vec::with_capacity(config.batch_size);
    let mut batch_r = Vec::with_capacity(config.batch_size);
    let nq = state.queries.len();
    for it in 1..=config.n_iterations {
        batch_q.clear();
        batch_l.clear();
        batch_r.clear();
        for _ in 0..config.batch_size {
            let j = batch_rng.random_range(0..nq);
            batch_q.push(state.queries.queries[j]);
            batch_l.push(state.queries.nearest_idx[j]);
            batch_r.push(state.queries.rho[j]);
        }
        let rho = config.mode.is_adversarial().then_some(&batch_r[..]);
        let out = batch_gradients(&state.params, &batch_q, &batch_l, points, rho)
            .map_err(|e| numeric_at(e, it))?;
        if out.valid == 0 {
            return Err(Error::NumericAbort {
                iteration: it,
                message: "every query in the batch had a degenerate gradient".into(),
            });
        }
        let d = &mut state.diagnostics;
        d.skipped_queries += out.skipped;
        d.zero_offsets += out.zero_offsets;
        d.adversarial_samples += out.adversarial.len();
        d.nearest_mismatches += out
            .adversarial
            .iter()
            .filter(|(q, label)| index.nearest(q).index != *label)
            .count();

        state.history.push(HistoryRow {
            iteration: it,
            train_loss: out.mean_loss,
            adv_loss: out.mean_adv_loss,
            lambda1: state.params.lambda1,
            lambda2: state.params.lambda2,
        });
        state.optimizer.step_field(&mut state.params, &out.grads, it)?;
        state.iteration = it;
        if it % config.snapshot_every == 0 || it == config.n_iterations {
            state.snapshots.push(Snapshot {
                iteration: it,
                params: state.params.clone(),
            });
        }
        if it % 100 == 0 {
            log::debug!(
                "iter {it}: loss {:.3e} adv {:?} lambda ({:.4}, {:.4})",
                out.mean_loss,
                out.mean_adv_loss,
                state.params.lambda1,
                state.params.lambda2
            );
        }
        if !observer(&state) {
            break;
        }
    }
    if state.snapshots.last().map(|s| s.iteration) != Some(state.iteration) {
        state.snapshots.push(Snapshot {
            iteration: state.iteration,
            params: state.params.clone(),
        });
    }
    Ok(state)
}

fn numeric_at(e: Error, iteration: usize) -> Error {
    match e {
        Error::NonFiniteLayer { layer } => Error::NumericAbort {
            iteration,
            message: format!("non-finite activation at layer {layer}"),
        },
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Activation;
    use crate::pointcloud::shapes::sample_sphere;
    use crate::Vec3;

    fn tiny_config(mode: Mode) -> TrainConfig {
        TrainConfig {
            n_iterations: 30,
            batch_size: 64,
            k: 8,
            learning_rate: 1e-3,
            queries_per_point: 4,
            snapshot_every: 10,
            mode,
            seed: 3,
            field: FieldConfig {
                hidden_layers: 2,
                hidden_width: 16,
                skip_layer: Some(1),
                ..FieldConfig::default()
            },
            ..TrainConfig::default()
        }
    }

    fn cloud() -> PointCloud {
        sample_sphere(Vec3::zeros(), 0.35, 200, 1).unwrap()
    }

    #[test]
    fn mode_names_roundtrip() {
        for m in Mode::ALL {
            assert_eq!(m.as_str().parse::<Mode>().unwrap(), m);
        }
        assert!("sgd".parse::<Mode>().is_err());
    }

    #[test]
    fn zero_iterations_returns_initial_field() {
        let cfg = TrainConfig {
            n_iterations: 0,
            ..tiny_config(Mode::Erm)
        };
        let s = train(&cloud(), &cfg).unwrap();
        assert!(s.history.is_empty());
        let init = init_field(&FieldConfig {
            seed: rng::stage_seed(3, Stage::FieldInit),
            ..cfg.field.clone()
        })
        .unwrap();
        assert_eq!(s.params, init);
        assert_eq!(s.snapshots.len(), 1);
    }

    #[test]
    fn history_and_snapshots() {
        let s = train(&cloud(), &tiny_config(Mode::AdversarialLocal)).unwrap();
        assert_eq!(s.history.len(), 30);
        assert!(s.history.windows(2).all(|w| w[0].iteration < w[1].iteration));
        let its: Vec<usize> = s.snapshots.iter().map(|s| s.iteration).collect();
        assert_eq!(its, vec![10, 20, 30]);
        assert!(s.history.iter().all(|h| h.adv_loss.is_some()));
        assert!(s.params.lambda1 > 0.0 && s.params.lambda2 > 0.0);
        assert!(s.diagnostics.nearest_mismatch_fraction().is_some());
    }

    #[test]
    fn erm_keeps_loss_weights() {
        let s = train(&cloud(), &tiny_config(Mode::Erm)).unwrap();
        assert!(s.history.iter().all(|h| h.adv_loss.is_none()));
        assert_eq!((s.params.lambda1, s.params.lambda2), (1.0, 1.0));
    }

    #[test]
    fn deterministic_given_seed() {
        for mode in Mode::ALL {
            let a = train(&cloud(), &tiny_config(mode)).unwrap();
            let b = train(&cloud(), &tiny_config(mode)).unwrap();
            assert_eq!(a.history, b.history);
            assert_eq!(a.snapshots, b.snapshots);
        }
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let cfg = TrainConfig {
            batch_size: 3 * CHUNK + 17,
            n_iterations: 3,
            ..tiny_config(Mode::AdversarialLocal)
        };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| train(&cloud(), &cfg).unwrap())
        };
        let (a, b) = (run(1), run(3));
        assert_eq!(a.history, b.history);
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn zero_radius_matches_plain_loss_per_iteration() {
        let cfg = TrainConfig {
            rho_scale: 0.0,
            n_iterations: 10,
            ..tiny_config(Mode::AdversarialLocal)
        };
        let s = train(&cloud(), &cfg).unwrap();
        for h in &s.history {
            assert_eq!(h.adv_loss.unwrap().to_bits(), h.train_loss.to_bits());
        }
    }

    #[test]
    fn observer_can_stop_early() {
        let mut seen = 0;
        let s = train_with(&cloud(), &tiny_config(Mode::Erm), &mut |st| {
            seen = st.iteration;
            st.iteration < 5
        })
        .unwrap();
        assert_eq!(seen, 5);
        assert_eq!(s.iteration, 5);
        assert_eq!(s.snapshots.last().unwrap().iteration, 5);
    }

    #[test]
    fn rejects_bad_inputs() {
        let one = PointCloud::new(vec![Vec3::zeros()]).unwrap();
        assert!(train(&one, &tiny_config(Mode::Erm)).unwrap_err().is_degenerate());
        let cfg = TrainConfig {
            batch_size: 0,
            ..tiny_config(Mode::Erm)
        };
        assert!(train(&cloud(), &cfg).is_err());
        let cfg = TrainConfig {
            field: FieldConfig {
                activation: Activation::Softplus { beta: -1.0 },
                ..tiny_config(Mode::Erm).field
            },
            ..tiny_config(Mode::Erm)
        };
        assert!(train(&cloud(), &cfg).is_err());
    }
}
