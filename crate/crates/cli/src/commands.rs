use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use adv_sdf::experiment::{
    ablation_rows, ablation_run, overfitting_ratio, snapshot_distances, synthetic_input, AblationResult,
};
use adv_sdf::field::save_checkpoint;
use adv_sdf::metrics::{evaluate_reconstruction, MetricsReport};
use adv_sdf::pointcloud::{
    load_mesh, load_point_cloud, normalize, sample_mesh_surface, save_mesh_obj, NormalizationTransform,
    PointCloud, PointFormat, TriangleMesh,
};
use adv_sdf::rng::{stage_seed, Stage};
use adv_sdf::trainer::{
    select_best_snapshot, train_with, write_curves, CurveRow, Mode, TrainConfig, TrainState,
};
use adv_sdf::Error;
use anyhow::{Context, Result};
use log::info;

use crate::args::{AblateArgs, CurvesArgs, EvaluateArgs, InputArgs, ReconstructArgs, Record};
use crate::manifest::Manifest;

/// Normalized training cloud plus an optional reference in the same frame.
struct Prepared {
    cloud: PointCloud,
    transform: NormalizationTransform,
    reference: Option<TriangleMesh>,
    raw_points: usize,
}

fn prepare(input: &InputArgs, seed: u64) -> Result<Prepared> {
    let (cloud, transform, builtin, raw_points) = match (&input.input, input.shape) {
        (Some(path), _) => {
            let format = PointFormat::from_path(path).ok_or_else(|| Error::Parse {
                path: path.display().to_string(),
                line: 0,
                message: "unknown point cloud extension (expected .xyz, .txt or .ply)".into(),
            })?;
            let raw = load_point_cloud(path, format)?;
            let (cloud, transform) = normalize(&raw)?;
            (cloud, transform, None, raw.len())
        }
        (None, Some(shape)) => {
            let s = synthetic_input(shape, input.points, input.noise, seed)?;
            let n = s.cloud.len();
            (s.cloud, s.transform, Some(s.reference), n)
        }
        (None, None) => unreachable!("clap requires --input or --shape"),
    };
    let reference = match &input.gt {
        Some(path) => Some(load_mesh(path)?.map_vertices(|v| transform.apply(v))),
        None => builtin,
    };
    Ok(Prepared {
        cloud,
        transform,
        reference,
        raw_points,
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn train_logged(cloud: &PointCloud, config: &TrainConfig) -> Result<TrainState> {
    let total = config.n_iterations;
    let step = (total / 10).max(1);
    let state = train_with(cloud, config, &mut |s| {
        if s.iteration % step == 0 {
            let h = s.history.last().expect("at least one iteration");
            info!(
                "{} seed {}: iteration {}/{} loss {:.4e}",
                config.mode, config.seed, s.iteration, total, h.train_loss
            );
        }
        true
    })?;
    Ok(state)
}

fn record_metrics(m: &mut Manifest, prefix: &str, r: &MetricsReport) {
    m.set(&format!("{prefix}.cd1"), r.cd1);
    m.set(&format!("{prefix}.cd2"), r.cd2);
    m.set(&format!("{prefix}.fscore"), r.fscore);
    m.set(&format!("{prefix}.precision"), r.precision);
    m.set(&format!("{prefix}.recall"), r.recall);
    m.set(&format!("{prefix}.nc"), r.nc);
}

fn write_metrics(path: &Path, r: &MetricsReport) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "{}", MetricsReport::CSV_HEADER)?;
    writeln!(w, "{}", r.csv_row())?;
    w.flush()?;
    Ok(())
}

pub fn reconstruct(args: &ReconstructArgs) -> Result<()> {
    let mut m = Manifest::new("reconstruct");
    args.record(&mut m);
    create_dir(&args.out)?;
    let config = args.train.config();
    let prep = prepare(&args.input, config.seed)?;
    m.set("input_points", prep.raw_points);
    m.set("normalization.scale", prep.transform.scale);
    let t = prep.transform.translation;
    m.set("normalization.translation", format!("{} {} {}", t.x, t.y, t.z));

    let state = train_logged(&prep.cloud, &config)?;
    let select_seed = stage_seed(config.seed, Stage::MetricSampling);
    let selection = select_best_snapshot(&state.snapshots, &prep.cloud, &args.grid.selection(select_seed))?;
    let best = &state.snapshots[selection.index];
    info!("selected snapshot at iteration {}", best.iteration);
    let mesh = args.grid.output(select_seed).extract(&best.params)?.mesh;
    if mesh.is_empty() {
        return Err(Error::NoValidModel.into());
    }

    save_mesh_obj(args.out.join("mesh.obj"), &prep.transform.invert_mesh(&mesh))?;
    save_checkpoint(&best.params, args.out.join("model.ckpt"))?;
    let snapshot_cd: Vec<(usize, f64)> = state
        .snapshots
        .iter()
        .map(|s| s.iteration)
        .zip(selection.scores.iter().copied())
        .collect();
    let rows = CurveRow::from_history(&state.history, &snapshot_cd);
    write_curves(create(&args.out.join("curves.csv"))?, &rows)?;

    let d = &state.diagnostics;
    m.set("selected_iteration", best.iteration);
    m.set("mesh_vertices", mesh.vertices().len());
    m.set("mesh_faces", mesh.faces().len());
    m.set("diag.duplicate_points", d.duplicate_points);
    m.set("diag.skipped_queries", d.skipped_queries);
    m.set("diag.zero_offsets", d.zero_offsets);
    if let Some(f) = d.nearest_mismatch_fraction() {
        m.set("diag.nearest_mismatch_fraction", f);
    }
    if let Some(reference) = &prep.reference {
        let report = evaluate_reconstruction(&mesh, reference, &args.metrics.config(select_seed))?;
        println!("{report}");
        write_metrics(&args.out.join("metrics.csv"), &report)?;
        record_metrics(&mut m, "metric", &report);
    }
    m.write(&args.out)?;
    println!(
        "wrote {} (snapshot {}, {} faces)",
        args.out.join("mesh.obj").display(),
        best.iteration,
        mesh.faces().len()
    );
    Ok(())
}

pub fn evaluate(args: &EvaluateArgs) -> Result<()> {
    let mut m = Manifest::new("evaluate");
    args.record(&mut m);
    let pred = load_mesh(&args.pred)?;
    let gt = load_mesh(&args.gt)?;
    let report = evaluate_reconstruction(&pred, &gt, &args.metrics.config(args.seed))?;
    println!("{report}");
    create_dir(&args.out)?;
    write_metrics(&args.out.join("metrics.csv"), &report)?;
    record_metrics(&mut m, "metric", &report);
    m.write(&args.out)
}

fn require_reference(prep: &Prepared) -> Result<&TriangleMesh> {
    prep.reference
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("a reference mesh is required (--gt)".into()).into())
}

pub fn ablate_radius(args: &AblateArgs) -> Result<()> {
    let mut m = Manifest::new("ablate-radius");
    args.record(&mut m);
    create_dir(&args.out)?;
    let mut results: Vec<(u64, AblationResult)> = Vec::new();
    for seed in args.train.seed..args.train.seed + args.seeds {
        let prep = prepare(&args.input, seed)?;
        let reference = require_reference(&prep)?;
        let input = adv_sdf::experiment::SyntheticInput {
            cloud: prep.cloud.clone(),
            reference: reference.clone(),
            transform: prep.transform,
        };
        let base = args.train.config_for(args.train.mode, args.train.rho_scale, seed);
        let select_seed = stage_seed(seed, Stage::MetricSampling);
        for row in ablation_rows() {
            info!("seed {seed}: training {} ({})", row.label, row.mode);
            let r = ablation_run(
                &input,
                &base,
                row,
                &args.grid.selection(select_seed),
                &args.grid.output(select_seed),
                &args.metrics.config(select_seed),
            )?;
            results.push((seed, r));
        }
    }

    let mut w = create(&args.out.join("ablation.csv"))?;
    writeln!(w, "seed,label,mode,rho_scale,selected_iter,cd1,cd1_x100,nc")?;
    for (seed, r) in &results {
        writeln!(
            w,
            "{seed},{},{},{},{},{},{},{}",
            r.row.label,
            r.row.mode,
            r.row.rho_scale,
            r.selection.iteration,
            r.metrics.cd1,
            r.metrics.cd1 * 100.0,
            r.metrics.nc
        )?;
    }
    w.flush()?;

    println!("{:<16} {:>10} {:>10}", "radius", "CD1 x100", "NC");
    for row in ablation_rows() {
        let rs: Vec<&AblationResult> = results.iter().map(|(_, r)| r).filter(|r| r.row == row).collect();
        let n = rs.len() as f64;
        let cd = rs.iter().map(|r| r.metrics.cd1).sum::<f64>() / n;
        let nc = rs.iter().map(|r| r.metrics.nc).sum::<f64>() / n;
        println!("{:<16} {:>10.4} {:>10.4}", row.label, cd * 100.0, nc);
        m.set(&format!("mean_cd1.{}", row.label.replace(' ', "_")), cd);
    }
    m.write(&args.out)
}

pub fn curves(args: &CurvesArgs) -> Result<()> {
    let mut m = Manifest::new("curves");
    args.record(&mut m);
    create_dir(&args.out)?;
    let with_gt = !args.no_gt;

    let mut w = create(&args.out.join("curves.csv"))?;
    write!(w, "seed,mode,iter,train_loss,adv_loss,lambda1,lambda2,cd_to_input")?;
    writeln!(w, "{}", if with_gt { ",cd_to_gt" } else { "" })?;
    let mut summary: Vec<(u64, Mode, f64, f64, Option<f64>)> = Vec::new();

    for seed in args.train.seed..args.train.seed + args.seeds {
        let prep = prepare(&args.input, seed)?;
        let select_seed = stage_seed(seed, Stage::MetricSampling);
        let scoring = args.grid.selection(select_seed);
        let target = if with_gt {
            let reference = require_reference(&prep)?;
            Some(sample_mesh_surface(reference, args.samples, select_seed ^ 1)?)
        } else {
            None
        };
        for mode in [Mode::Erm, Mode::AdversarialLocal] {
            let config = args.train.config_for(mode, args.train.rho_scale, seed);
            let state = train_logged(&prep.cloud, &config)?;
            let to_input = snapshot_distances(&state.snapshots, &prep.cloud, &scoring)?;
            let to_gt = match &target {
                Some(t) => {
                    let s = adv_sdf::trainer::SelectionConfig {
                        n_samples: args.samples,
                        ..scoring.clone()
                    };
                    Some(snapshot_distances(&state.snapshots, t, &s)?)
                }
                None => None,
            };
            for (i, &(iter, cd_in)) in to_input.iter().enumerate() {
                let h = state.history.iter().find(|h| h.iteration == iter);
                let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
                write!(
                    w,
                    "{seed},{mode},{iter},{},{},{},{},{cd_in}",
                    opt(h.map(|h| h.train_loss)),
                    opt(h.and_then(|h| h.adv_loss)),
                    opt(h.map(|h| h.lambda1)),
                    opt(h.map(|h| h.lambda2)),
                )?;
                match &to_gt {
                    Some(g) => writeln!(w, ",{}", g[i].1)?,
                    None => writeln!(w)?,
                }
            }
            if let Some(g) = &to_gt {
                let min = g.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
                let last = g.last().map_or(f64::INFINITY, |c| c.1);
                summary.push((seed, mode, min, last, overfitting_ratio(g)));
            }
        }
    }
    w.flush()?;

    if with_gt {
        let mut s = create(&args.out.join("summary.csv"))?;
        writeln!(s, "seed,mode,min_cd_to_gt,final_cd_to_gt,overfitting_ratio")?;
        for (seed, mode, min, last, ratio) in &summary {
            let r = ratio.map(|r| r.to_string()).unwrap_or_default();
            writeln!(s, "{seed},{mode},{min},{last},{r}")?;
            println!("seed {seed} {mode:<18} min {min:.6} final {last:.6} ratio {r}");
        }
        s.flush()?;
        let wins = summary
            .chunks(2)
            .filter(|c| match (c[0].4, c[1].4) {
                (Some(erm), Some(adv)) => adv < erm,
                _ => false,
            })
            .count();
        println!("adversarial ratio below plain ratio in {wins}/{} seeds", args.seeds);
        m.set("adversarial_wins", wins);
    }
    m.write(&args.out)
}
