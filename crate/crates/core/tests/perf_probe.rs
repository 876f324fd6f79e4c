use std::time::Instant;

use splatsim::lidar::{extract_point_cloud, trace};
use splatsim::metrics;
use splatsim::optim::{fit, DensifyParams, FitConfig};
use splatsim::raster::rasterize;
use splatsim::synth;

#[test]
#[ignore]
fn probe_plane_benchmark() {
    let params = synth::SynthParams::default();
    let ds = synth::build("textured-plane", 7, &params).unwrap();
    let train = synth::render_batches(&ds.scene, &ds.train, 16).unwrap();

    let mut scene = synth::jittered_init(&ds.scene, 0.05, 7);
    let cfg = FitConfig {
        iterations: 2000,
        densify: DensifyParams { start: 2500, ..Default::default() },
        ..Default::default()
    };
    let t0 = Instant::now();
    let log = fit(&mut scene, &train, &cfg, |_, _| Ok(())).unwrap();
    let elapsed = t0.elapsed();
    for it in [0, 99, 499, 999, 1499, 1999] {
        let r = &log.records[it];
        println!("iter {:4}: loss {:.5}, prims {}", r.iter, r.loss.total, r.primitives);
    }
    println!("densify events: {:?}", log.densify_events);
    println!("fit took {elapsed:.2?}");

    let mut worst_rmse: f64 = 0.0;
    let mut worst_cd: f64 = 0.0;
    let mut worst_psnr = f64::INFINITY;
    for rig in &ds.heldout {
        let gt_flat = ds.scene.flatten(rig.timestamp).unwrap();
        let fit_flat = scene.flatten(rig.timestamp).unwrap();
        for cam in &rig.cameras {
            let gt = rasterize(&gt_flat, cam).unwrap();
            let pred = rasterize(&fit_flat, cam).unwrap();
            let gt_ch: Vec<f64> = gt.color.iter().flat_map(|c| [c.x, c.y, c.z]).collect();
            let pr_ch: Vec<f64> = pred.color.iter().flat_map(|c| [c.x, c.y, c.z]).collect();
            let psnr = metrics::psnr_from_mse(metrics::mse(&gt_ch, &pr_ch).unwrap(), 1.0);
            worst_psnr = worst_psnr.min(psnr);
        }
        let model = rig.lidar.as_ref().unwrap();
        let gt_sweep = trace(&gt_flat, model, 16).unwrap();
        let pred_sweep = trace(&fit_flat, model, 16).unwrap();
        let n = gt_sweep.range.len();
        let mask: Vec<bool> = (0..n).map(|i| gt_sweep.ray_valid(i)).collect();
        let rmse = metrics::rmse(&pred_sweep.range, &gt_sweep.range, &mask).unwrap();
        worst_rmse = worst_rmse.max(rmse);
        let (gt_pts, _) = extract_point_cloud(&gt_sweep, model);
        let (pred_pts, _) = extract_point_cloud(&pred_sweep, model);
        let cd = metrics::chamfer_distance(&pred_pts, &gt_pts).unwrap();
        worst_cd = worst_cd.max(cd);

        // diagnostics: where do the two valid sets disagree, and how do the
        // alpha distributions compare on the shared rays?
        let gt_only = (0..n).filter(|&i| mask[i] && !pred_sweep.ray_valid(i)).count();
        let pred_only = (0..n).filter(|&i| !mask[i] && pred_sweep.ray_valid(i)).count();
        let shared: Vec<usize> =
            (0..n).filter(|&i| mask[i] && pred_sweep.ray_valid(i)).collect();
        let mean =
            |f: &dyn Fn(usize) -> f64| shared.iter().map(|&i| f(i)).sum::<f64>() / shared.len() as f64;
        let mean_gt_a = mean(&|i| gt_sweep.alpha[i]);
        let mean_pr_a = mean(&|i| pred_sweep.alpha[i]);
        let min_pr_a =
            shared.iter().map(|&i| pred_sweep.alpha[i]).fold(f64::INFINITY, f64::min);
        let mut abs_err: Vec<f64> =
            shared.iter().map(|&i| (pred_sweep.range[i] - gt_sweep.range[i]).abs()).collect();
        abs_err.sort_by(f64::total_cmp);
        println!(
            "sweep t={}: gt_valid {}, pred_valid {}, gt_only {}, pred_only {}",
            rig.timestamp,
            mask.iter().filter(|&&m| m).count(),
            (0..n).filter(|&i| pred_sweep.ray_valid(i)).count(),
            gt_only,
            pred_only,
        );
        println!(
            "  alpha gt mean {mean_gt_a:.4}, pred mean {mean_pr_a:.4}, pred min {min_pr_a:.4}"
        );
        println!(
            "  |range err| p50 {:.5}, p90 {:.5}, p99 {:.5}, max {:.5}",
            abs_err[abs_err.len() / 2],
            abs_err[abs_err.len() * 9 / 10],
            abs_err[abs_err.len() * 99 / 100],
            abs_err[abs_err.len() - 1],
        );
        let directed = |xs: &[glam::DVec3], ys: &[glam::DVec3]| {
            xs.iter().map(|&p| metrics::nearest_brute(ys, p).1).sum::<f64>() / xs.len() as f64
        };
        println!(
            "  cd {cd:.5} = pred->gt {:.5} + gt->pred {:.5}",
            directed(&pred_pts, &gt_pts),
            directed(&gt_pts, &pred_pts)
        );
    }
    println!("held-out: depth RMSE {worst_rmse:.5}, PSNR {worst_psnr:.2}, CD {worst_cd:.5}");
}

#[test]
#[ignore]
fn probe_moving_box() {
    use glam::DVec3;
    use splatsim::scene::NodeId;

    let params = synth::SynthParams::default();
    let ds = synth::build("moving-box", 13, &params).unwrap();
    let train = synth::render_batches(&ds.scene, &ds.train, 16).unwrap();
    let mut scene = synth::jittered_init(&ds.scene, 0.05, 13);
    let cfg = FitConfig {
        iterations: 600,
        densify: DensifyParams { start: 2500, ..Default::default() },
        ..Default::default()
    };
    let t0 = Instant::now();
    let log = fit(&mut scene, &train, &cfg, |_, _| Ok(())).unwrap();
    println!(
        "fit took {:.2?}, loss {:.5} -> {:.5}",
        t0.elapsed(),
        log.records[0].loss.total,
        log.records.last().unwrap().loss.total
    );

    for rig in &ds.heldout {
        let gt_flat = ds.scene.flatten(rig.timestamp).unwrap();
        let fit_flat = scene.flatten(rig.timestamp).unwrap();
        let mut lo = DVec3::splat(f64::INFINITY);
        let mut hi = DVec3::splat(f64::NEG_INFINITY);
        for i in 0..gt_flat.splats.len() {
            if let (NodeId::Node(_), _) = gt_flat.invert_provenance(i).unwrap() {
                lo = lo.min(gt_flat.splats[i].center);
                hi = hi.max(gt_flat.splats[i].center);
            }
        }
        let (lo, hi) = (lo - DVec3::splat(0.1), hi + DVec3::splat(0.1));
        let in_box = |p: &DVec3| p.cmpge(lo).all() && p.cmple(hi).all();
        let model = rig.lidar.as_ref().unwrap();
        let gt_pts: Vec<DVec3> = {
            let (pts, _) = extract_point_cloud(&trace(&gt_flat, model, 16).unwrap(), model);
            pts.into_iter().filter(in_box).collect()
        };
        let pred_pts: Vec<DVec3> = {
            let (pts, _) = extract_point_cloud(&trace(&fit_flat, model, 16).unwrap(), model);
            pts.into_iter().filter(in_box).collect()
        };
        let f = metrics::f_score(&pred_pts, &gt_pts, 0.05).unwrap();
        println!(
            "t={}: gt box pts {}, pred box pts {}, F@5cm {f:.4}",
            rig.timestamp,
            gt_pts.len(),
            pred_pts.len()
        );
    }
}

#[test]
#[ignore]
fn probe_fit_speed() {
    for (label, params) in [
        ("default 480x320 / 32x512", synth::SynthParams::default()),
        (
            "reduced 240x160 / 16x256",
            synth::SynthParams { cam_width: 240, cam_height: 160, lidar_rows: 16, lidar_cols: 256 },
        ),
        (
            "small 160x107 / 16x128",
            synth::SynthParams { cam_width: 160, cam_height: 107, lidar_rows: 16, lidar_cols: 128 },
        ),
    ] {
        let t0 = Instant::now();
        let ds = synth::build("textured-plane", 7, &params).unwrap();
        let batches = synth::render_batches(&ds.scene, &ds.train, 16).unwrap();
        let t_render = t0.elapsed();

        let mut scene = synth::jittered_init(&ds.scene, 0.05, 7);
        let cfg = FitConfig { iterations: 10, ..Default::default() };
        let t1 = Instant::now();
        let log = fit(&mut scene, &batches, &cfg, |_, _| Ok(())).unwrap();
        let t_fit = t1.elapsed();
        println!(
            "{label}: GT render {:.2?}, 10 iters {:.2?} ({:.0} ms/iter), first loss {:.4}",
            t_render,
            t_fit,
            t_fit.as_secs_f64() * 100.0,
            log.records[0].loss.total
        );
    }
}
