use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::pointcloud::PointCloud;
use crate::rng;
use crate::spatial::{LocalScales, SpatialIndex};
use crate::Vec3;

/// How the adversarial radius of a query is derived from the local scales.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RadiusRule {
    /// `rho = scale * sigma_p` of the query's nearest input point.
    Local(f64),
    /// `rho = scale * mean(sigma)` for every query.
    Global(f64),
}

/// Training queries with their cached pseudo-labels and radii.
#[derive(Debug, Clone, PartialEq)]
pub struct QuerySet {
    pub queries: Vec<Vec3>,
    pub nearest_idx: Vec<usize>,
    pub rho: Vec<f64>,
}

impl QuerySet {
    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }
}

/// Draws `queries_per_point` samples from `N(p, sigma_p^2 I)` around every
/// input point, in point order, then labels each with its exact nearest
/// input point (which need not be the point it was drawn around).
pub fn generate_queries(
    cloud: &PointCloud,
    index: &SpatialIndex,
    sigmas: &LocalScales,
    queries_per_point: usize,
    radius: RadiusRule,
    seed: u64,
) -> Result<QuerySet> {
    if sigmas.sigma.len() != cloud.len() {
        return Err(Error::InvalidArgument(format!(
            "{} scales for {} points",
            sigmas.sigma.len(),
            cloud.len()
        )));
    }
    if queries_per_point == 0 {
        return Err(Error::InvalidArgument("queries_per_point must be positive".into()));
    }
    if let Some(i) = sigmas.sigma.iter().position(|&s| !(s > 0.0)) {
        return Err(Error::DegenerateInput(format!(
            "point {i} has zero local scale (coincident neighbourhood)"
        )));
    }

    let mut rng = rng::rng(seed);
    let mut queries = Vec::with_capacity(cloud.len() * queries_per_point);
    for (p, &sigma) in cloud.points().iter().zip(&sigmas.sigma) {
        for _ in 0..queries_per_point {
            let e = Vec3::new(
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
            );
            queries.push(p + e * sigma);
        }
    }
    let nearest_idx: Vec<usize> = queries.par_iter().map(|q| index.nearest(q).index).collect();
    let rho = match radius {
        RadiusRule::Local(scale) => nearest_idx.iter().map(|&i| scale * sigmas.sigma[i]).collect(),
        RadiusRule::Global(scale) => vec![scale * sigmas.mean(); queries.len()],
    };
    Ok(QuerySet {
        queries,
        nearest_idx,
        rho,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spatial::compute_local_sigmas_with;

    fn setup(points: Vec<Vec3>, k: usize) -> (PointCloud, SpatialIndex, LocalScales) {
        let cloud = PointCloud::new(points).unwrap();
        let index = SpatialIndex::build(&cloud);
        let sigmas = compute_local_sigmas_with(&index, k).unwrap();
        (cloud, index, sigmas)
    }

    #[test]
    fn one_query_per_point() {
        let cloud = crate::pointcloud::shapes::sample_sphere(Vec3::zeros(), 0.4, 1024, 1).unwrap();
        let index = SpatialIndex::build(&cloud);
        let sigmas = compute_local_sigmas_with(&index, 51).unwrap();
        let qs = generate_queries(&cloud, &index, &sigmas, 1, RadiusRule::Local(0.01), 2).unwrap();
        assert_eq!(qs.len(), 1024);
        for (i, q) in qs.queries.iter().enumerate() {
            let brute = (0..cloud.len())
                .min_by(|&a, &b| {
                    crate::spatial::dist_sq(q, &cloud.points()[a])
                        .total_cmp(&crate::spatial::dist_sq(q, &cloud.points()[b]))
                        .then(a.cmp(&b))
                })
                .unwrap();
            assert_eq!(qs.nearest_idx[i], brute);
            assert_eq!(qs.rho[i], 0.01 * sigmas.sigma[brute]);
        }
    }

    #[test]
    fn moments_match_generating_gaussian() {
        // Two points, so sigma = their distance; all queries around point 0.
        let (cloud, index, sigmas) = setup(vec![Vec3::zeros(), Vec3::new(0.2, 0.0, 0.0)], 1);
        let n = 100_000;
        let qs = generate_queries(&cloud, &index, &sigmas, n, RadiusRule::Local(0.01), 3).unwrap();
        let around0 = &qs.queries[..n];
        let sigma = 0.2;
        for axis in 0..3 {
            let mean = around0.iter().map(|q| q[axis]).sum::<f64>() / n as f64;
            let var = around0.iter().map(|q| (q[axis] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            // mean ~ N(0, sigma^2/n); variance ~ N(sigma^2, 2 sigma^4/(n-1))
            assert!(mean.abs() < 3.0 * sigma / (n as f64).sqrt(), "mean {mean}");
            let sd_var = (2.0 / (n - 1) as f64).sqrt() * sigma * sigma;
            assert!((var - sigma * sigma).abs() < 3.0 * sd_var, "var {var}");
        }
    }

    #[test]
    fn separated_clusters_keep_labels() {
        let mut points = Vec::new();
        for i in 0..20 {
            let t = i as f64 * 0.001;
            points.push(Vec3::new(t, 0.0, 0.0));
            points.push(Vec3::new(1.0 + t, 0.0, 0.0));
        }
        let (cloud, index, sigmas) = setup(points, 3);
        let qs = generate_queries(&cloud, &index, &sigmas, 10, RadiusRule::Local(0.01), 4).unwrap();
        for (i, &nn) in qs.nearest_idx.iter().enumerate() {
            let source = i / 10;
            assert_eq!(source % 2, nn % 2, "query {i} crossed clusters");
        }
    }

    #[test]
    fn global_rule_uses_mean_scale() {
        let (cloud, index, sigmas) = setup(
            vec![Vec3::zeros(), Vec3::new(0.1, 0.0, 0.0), Vec3::new(0.4, 0.0, 0.0)],
            1,
        );
        let qs = generate_queries(&cloud, &index, &sigmas, 2, RadiusRule::Global(0.5), 5).unwrap();
        assert!(qs.rho.iter().all(|&r| r == 0.5 * sigmas.mean()));
    }

    #[test]
    fn zero_scale_is_degenerate() {
        let cloud = PointCloud::new(vec![Vec3::zeros(), Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0)]).unwrap();
        let index = SpatialIndex::build(&cloud);
        let sigmas = compute_local_sigmas_with(&index, 1).unwrap();
        let err = generate_queries(&cloud, &index, &sigmas, 1, RadiusRule::Local(0.01), 0).unwrap_err();
        assert!(err.is_degenerate());
    }

    #[test]
    fn deterministic() {
        let cloud = crate::pointcloud::shapes::sample_sphere(Vec3::zeros(), 0.4, 200, 1).unwrap();
        let index = SpatialIndex::build(&cloud);
        let sigmas = compute_local_sigmas_with(&index, 10).unwrap();
        let a = generate_queries(&cloud, &index, &sigmas, 3, RadiusRule::Local(0.01), 9).unwrap();
        let b = generate_queries(&cloud, &index, &sigmas, 3, RadiusRule::Local(0.01), 9).unwrap();
        assert_eq!(a, b);
    }
}
