//! `splatsim` — synthesize datasets, fit scenes to them, render the two
//! sensor modalities, and score fits against ground truth.
//!
//! Every command exits 0 on success; failures print a single
//! `error: <reason>` line to stderr and exit nonzero.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use splatsim::error::{Error, Result};
use splatsim::io;
use splatsim::lidar::{extract_point_cloud, trace, RangeImage};
use splatsim::metrics::{self, MetricReport};
use splatsim::optim::fit;
use splatsim::raster::{rasterize, trace_cylindrical};
use splatsim::scene::SceneGraph;
use splatsim::synth;

#[derive(Parser)]
#[command(name = "splatsim", version, about = "Gaussian-surfel scene renderer and optimizer")]
struct Cli {
    /// Worker threads (default: all cores). Results are identical for any
    /// thread count.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic ground-truth dataset.
    Synth {
        /// One of: textured-plane, box-room, moving-box, walker.
        #[arg(long)]
        recipe: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory (scene.scn, train/, heldout/).
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 480)]
        cam_width: usize,
        #[arg(long, default_value_t = 320)]
        cam_height: usize,
        #[arg(long, default_value_t = 32)]
        lidar_rows: usize,
        #[arg(long, default_value_t = 512)]
        lidar_cols: usize,
        /// Hit-buffer size for ground-truth lidar tracing.
        #[arg(long, default_value_t = 16)]
        k: usize,
    },
    /// Optimize a scene against a dataset.
    Fit {
        /// Training manifest (from `synth` or hand-written).
        #[arg(long)]
        data: PathBuf,
        /// Initial scene file.
        #[arg(long)]
        init: PathBuf,
        /// Output directory (fitted.scn, loss.csv, checkpoints/).
        #[arg(long)]
        out: PathBuf,
        /// key=value run configuration.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override the configured iteration count.
        #[arg(long)]
        iterations: Option<usize>,
        /// Jitter the initial centers by this std (meters) before fitting.
        #[arg(long)]
        jitter: Option<f64>,
    },
    /// Render one camera view of a scene.
    RenderCamera {
        #[arg(long)]
        scene: PathBuf,
        /// Manifest supplying the camera and timestamp.
        #[arg(long)]
        manifest: PathBuf,
        /// Frame index into the manifest.
        #[arg(long)]
        frame: usize,
        /// Camera index within the frame.
        #[arg(long, default_value_t = 0)]
        camera: usize,
        /// Output prefix; writes <prefix>.png and <prefix>_depth.fpl.
        #[arg(long)]
        out: PathBuf,
    },
    /// Render one lidar sweep of a scene.
    RenderLidar {
        #[arg(long)]
        scene: PathBuf,
        /// Manifest supplying the lidar and timestamp.
        #[arg(long)]
        manifest: PathBuf,
        /// Frame index into the manifest.
        #[arg(long)]
        frame: usize,
        /// Output prefix; writes <prefix>.fpl and <prefix>.ply.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        k: usize,
        /// Use the cylindrical rasterization approximation instead of ray
        /// tracing.
        #[arg(long)]
        cylindrical: bool,
        /// Write the point cloud as ASCII PLY instead of binary.
        #[arg(long)]
        ascii_ply: bool,
    },
    /// Score a scene against a dataset's stored ground truth.
    Eval {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Report file; the report is always printed to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 16)]
        k: usize,
        /// F-score distance threshold (meters).
        #[arg(long, default_value_t = 0.05)]
        tau: f64,
    },
    /// Print a scene (and optionally dataset) summary.
    Inspect {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            std::process::exit(1);
        }
    }
    if let Err(e) = run(cli.cmd) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Synth { recipe, seed, out, cam_width, cam_height, lidar_rows, lidar_cols, k } => {
            let params = synth::SynthParams { cam_width, cam_height, lidar_rows, lidar_cols };
            let dataset = synth::build(&recipe, seed, &params)?;
            synth::emit_dataset(&out, &dataset, k)?;
            println!(
                "synth: wrote '{recipe}' (seed {seed}, {} primitives, {} train / {} held-out frames) to {}",
                dataset.scene.total_primitives(),
                dataset.train.len(),
                dataset.heldout.len(),
                out.display()
            );
            Ok(())
        }
        Cmd::Fit { data, init, out, config, iterations, jitter } => {
            cmd_fit(&data, &init, &out, config.as_deref(), iterations, jitter)
        }
        Cmd::RenderCamera { scene, manifest, frame, camera, out } => {
            let graph = io::read_scene_file(&scene)?;
            let m = io::load_manifest(&manifest)?;
            let entry = m
                .frames
                .get(frame)
                .ok_or_else(|| Error::IndexOutOfBounds { index: frame, len: m.frames.len() })?;
            let cam = entry
                .cameras
                .get(camera)
                .map(|e| &e.camera)
                .ok_or_else(|| Error::IndexOutOfBounds { index: camera, len: entry.cameras.len() })?;
            let flat = graph.flatten(entry.timestamp)?;
            let fb = rasterize(&flat, cam)?;
            let png = out.with_extension("png");
            io::save_rgb(&png, fb.width, fb.height, &fb.color)?;
            let depth = sibling(&out, "_depth.fpl");
            io::planes::write_camera_depth(&depth, &fb)?;
            println!("render-camera: wrote {} and {}", png.display(), depth.display());
            Ok(())
        }
        Cmd::RenderLidar { scene, manifest, frame, out, k, cylindrical, ascii_ply } => {
            let graph = io::read_scene_file(&scene)?;
            let m = io::load_manifest(&manifest)?;
            let entry = m
                .frames
                .get(frame)
                .ok_or_else(|| Error::IndexOutOfBounds { index: frame, len: m.frames.len() })?;
            let model = entry
                .lidars
                .first()
                .map(|e| &e.lidar)
                .ok_or_else(|| Error::Contract(format!("frame {frame} carries no lidar")))?;
            let flat = graph.flatten(entry.timestamp)?;
            let img = if cylindrical {
                trace_cylindrical(&flat, model)?
            } else {
                trace(&flat, model, k)?
            };
            let fpl = out.with_extension("fpl");
            io::planes::write_range_image(&fpl, &img)?;
            let (points, intensity) = extract_point_cloud(&img, model);
            let ply = out.with_extension("ply");
            let format = if ascii_ply { io::PlyFormat::Ascii } else { io::PlyFormat::BinaryLittleEndian };
            io::write_ply(&ply, &points, Some(&intensity), format)?;
            println!(
                "render-lidar: wrote {} and {} ({} returns)",
                fpl.display(),
                ply.display(),
                points.len()
            );
            Ok(())
        }
        Cmd::Eval { scene, manifest, out, k, tau } => {
            let graph = io::read_scene_file(&scene)?;
            let report = evaluate(&graph, &manifest, k, tau)?;
            let text = io::format_report(&report);
            print!("{text}");
            if let Some(path) = out {
                io::write_report(&path, &report)?;
            }
            Ok(())
        }
        Cmd::Inspect { scene, manifest } => {
            let graph = io::read_scene_file(&scene)?;
            print!("{}", describe(&graph)?);
            if let Some(path) = manifest {
                let m = io::load_manifest(&path)?;
                let cams: usize = m.frames.iter().map(|f| f.cameras.len()).sum();
                let lidars: usize = m.frames.iter().map(|f| f.lidars.len()).sum();
                println!("frames={}", m.frames.len());
                println!("frame_cameras={cams}");
                println!("frame_lidars={lidars}");
                let ts = m.timestamps();
                println!("t_first={}", ts.first().unwrap());
                println!("t_last={}", ts.last().unwrap());
            }
            Ok(())
        }
    }
}

/// `prefix` + suffix in the same directory (out=renders/v1, "_depth.fpl"
/// → renders/v1_depth.fpl).
fn sibling(prefix: &Path, suffix: &str) -> PathBuf {
    let mut name = prefix.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    name.push_str(suffix);
    prefix.with_file_name(name)
}

fn cmd_fit(
    data: &Path,
    init: &Path,
    out: &Path,
    config: Option<&Path>,
    iterations: Option<usize>,
    jitter: Option<f64>,
) -> Result<()> {
    let _lock = io::DirLock::acquire(out)?;
    let run_cfg = match config {
        Some(path) => io::load_run_config(path)?,
        None => io::RunConfig::default(),
    };
    let mut cfg = run_cfg.fit.clone();
    if let Some(n) = iterations {
        cfg.iterations = n;
    }
    let batches = io::load_batches(data)?;
    let mut scene = io::read_scene_file(init)?;
    if let Some(sigma) = jitter {
        scene = synth::jittered_init(&scene, sigma, cfg.seed);
    }
    let extent = scene.flatten(batches[0].timestamp)?.extent();
    cfg.lrs = run_cfg.resolve_lrs(extent).or(cfg.lrs);

    let ck_dir = out.join("checkpoints");
    if cfg.checkpoint_interval > 0 {
        std::fs::create_dir_all(&ck_dir)?;
    }
    let log = fit(&mut scene, &batches, &cfg, |iter, snapshot| {
        io::write_scene_file(&ck_dir.join(format!("ck_{iter:06}.scn")), snapshot)
    })?;

    io::write_scene_file(&out.join("fitted.scn"), &scene)?;
    let mut csv = String::from("iter,loss,primitives\n");
    for r in &log.records {
        let _ = writeln!(csv, "{},{},{}", r.iter, r.loss.total, r.primitives);
    }
    for (iter, report) in &log.densify_events {
        let _ = writeln!(
            csv,
            "# densify iter={iter} splits={} clones={} pruned={}",
            report.splits, report.clones, report.pruned
        );
    }
    io::atomic_write(&out.join("loss.csv"), csv.as_bytes())?;
    let last = log.records.last();
    println!(
        "fit: {} iterations, final loss {}, {} primitives, wrote {}",
        log.records.len(),
        last.map_or(f64::NAN, |r| r.loss.total),
        scene.total_primitives(),
        out.join("fitted.scn").display()
    );
    Ok(())
}

fn describe(graph: &SceneGraph) -> Result<String> {
    let mut s = String::new();
    let _ = writeln!(s, "background={}", graph.background.len());
    let _ = writeln!(s, "nodes={}", graph.nodes.len());
    for (i, node) in graph.nodes.iter().enumerate() {
        let kind = match node.kind {
            splatsim::scene::NodeKind::Rigid => "rigid",
            splatsim::scene::NodeKind::Deformable => "deformable",
        };
        let _ = writeln!(s, "node{i}.kind={kind}");
        let _ = writeln!(s, "node{i}.primitives={}", node.primitives.len());
    }
    let _ = writeln!(s, "total_primitives={}", graph.total_primitives());
    let _ = writeln!(s, "keyframes={}", graph.keyframes.len());
    let _ = writeln!(s, "sh_color={}", graph.sh.color);
    let _ = writeln!(s, "sh_intensity={}", graph.sh.intensity);
    let _ = writeln!(s, "sh_raydrop={}", graph.sh.raydrop);
    let t0 = graph.keyframes.first().copied().unwrap_or(0.0);
    let _ = writeln!(s, "extent={}", graph.flatten(t0)?.extent());
    Ok(s)
}

/// Quantize a rendered channel to the dataset's storage precision (8-bit
/// images, f32 planes), so a scene scored against the dataset it generated
/// reports exact zeros.
fn quantize_u8(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

fn quantize_f32(v: f64) -> f64 {
    v as f32 as f64
}

fn evaluate(graph: &SceneGraph, manifest_path: &Path, k: usize, tau: f64) -> Result<MetricReport> {
    let m = io::load_manifest(manifest_path)?;
    let base = io::manifest::base_dir(manifest_path);

    let mut sq_color_sum = 0.0;
    let mut color_n = 0usize;
    let mut ssim_sum = 0.0;
    let mut ssim_n = 0usize;
    let mut range_pred = Vec::new();
    let mut range_gt = Vec::new();
    let mut range_mask = Vec::new();
    let mut cd_sum = 0.0;
    let mut f_sum = 0.0;
    let mut sweep_n = 0usize;

    for frame in &m.frames {
        let flat = graph.flatten(frame.timestamp)?;
        for entry in &frame.cameras {
            let (w, h, gt) = io::load_rgb(&base.join(&entry.image))?;
            if w != entry.camera.width || h != entry.camera.height {
                return Err(Error::Manifest(format!(
                    "image '{}' is {w}x{h}, camera expects {}x{}",
                    entry.image, entry.camera.width, entry.camera.height
                )));
            }
            let fb = rasterize(&flat, &entry.camera)?;
            for ch in 0..3 {
                let pick = |v: &glam::DVec3| match ch {
                    0 => v.x,
                    1 => v.y,
                    _ => v.z,
                };
                let pred: Vec<f64> = fb.color.iter().map(|c| quantize_u8(pick(c))).collect();
                let gtc: Vec<f64> = gt.iter().map(pick).collect();
                for (a, b) in pred.iter().zip(&gtc) {
                    sq_color_sum += (a - b) * (a - b);
                }
                color_n += pred.len();
                ssim_sum += metrics::ssim(&pred, &gtc, w, h)?;
                ssim_n += 1;
            }
        }
        for entry in &frame.lidars {
            let gt = io::planes::read_range_image(&base.join(&entry.scan))?;
            if gt.rows != entry.lidar.rows() || gt.cols != entry.lidar.cols {
                return Err(Error::Manifest(format!(
                    "scan '{}' is {}x{}, lidar expects {}x{}",
                    entry.scan,
                    gt.rows,
                    gt.cols,
                    entry.lidar.rows(),
                    entry.lidar.cols
                )));
            }
            let raw = trace(&flat, &entry.lidar, k)?;
            let mut pred = RangeImage::new(raw.rows, raw.cols);
            for i in 0..raw.range.len() {
                pred.range[i] = quantize_f32(raw.range[i]);
                pred.intensity[i] = quantize_f32(raw.intensity[i]);
                pred.raydrop[i] = quantize_f32(raw.raydrop[i]);
                pred.alpha[i] = quantize_f32(raw.alpha[i]);
            }
            for i in 0..gt.range.len() {
                if gt.ray_valid(i) {
                    range_pred.push(pred.range[i]);
                    range_gt.push(gt.range[i]);
                    range_mask.push(true);
                }
            }
            let (gt_pts, _) = extract_point_cloud(&gt, &entry.lidar);
            let (pred_pts, _) = extract_point_cloud(&pred, &entry.lidar);
            cd_sum += metrics::chamfer_distance(&pred_pts, &gt_pts)?;
            f_sum += metrics::f_score(&pred_pts, &gt_pts, tau)?;
            sweep_n += 1;
        }
    }

    let mut report = MetricReport::default();
    if color_n > 0 {
        report.psnr = Some(metrics::psnr_from_mse(sq_color_sum / color_n as f64, 1.0));
        report.ssim = Some(ssim_sum / ssim_n as f64);
    }
    if sweep_n > 0 {
        report.cd = Some(cd_sum / sweep_n as f64);
        report.f_score = Some(f_sum / sweep_n as f64);
        if !range_gt.is_empty() {
            report.rmse = Some(metrics::rmse(&range_pred, &range_gt, &range_mask)?);
            report.medae = Some(metrics::medae(&range_pred, &range_gt, &range_mask)?);
        }
    }
    Ok(report)
}
