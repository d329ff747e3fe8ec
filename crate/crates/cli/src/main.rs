use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use isosplat::dist::{
    evaluate_model, metrics_csv, run_job, run_worker, scaling_report, JobReport, JobSpec, Launcher, RigSpec, RunTiming,
    Split, WorkerSpec,
};
use isosplat::gauss::{OrbitalRig, DEFAULT_FOV_Y, DEFAULT_MAX_ELEVATION, DEFAULT_RADIUS_FACTOR};
use isosplat::io::{
    atomic_write, read_cloud, read_json, read_model, read_rig, read_volume, write_cloud, write_image, write_json,
    write_model, write_rig, write_volume, RigFile, StageManifest,
};
use isosplat::iso::{extract_isosurface, make_volume, ColorMap, PointCloud, VolumeKind};
use isosplat::partition::{default_ghost_margin, merge_models, partition_cloud, PartitionManifest};
use isosplat::raster::render;
use isosplat::train::{make_train_views, GroundTruthConfig, TrainConfig};
use isosplat::{Camera, Error, Result};

#[derive(Parser)]
#[command(name = "isosplat", version, about = "Distributed Gaussian splatting of isosurfaces")]
struct Cli {
    /// Seed for every random choice the stage makes [default: 0, or the
    /// job spec's seed for `run`].
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample an analytic scalar volume.
    GenVolume {
        #[arg(long, default_value = "sphere")]
        kind: String,
        /// Grid points per axis.
        #[arg(long, default_value_t = 32)]
        dims: usize,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Extract an isosurface point cloud.
    ExtractIso {
        #[arg(long)]
        volume: PathBuf,
        /// Defaults to the volume kind's natural level.
        #[arg(long)]
        isovalue: Option<f64>,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Build an orbital camera rig around a cloud.
    GenCameras {
        #[arg(long, default_value_t = 8)]
        azimuth: usize,
        #[arg(long, default_value_t = 3)]
        elevation: usize,
        #[arg(long, default_value_t = 64)]
        resolution: usize,
        /// Center and size the orbit on this cloud; otherwise the unit sphere.
        #[arg(long)]
        cloud: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_RADIUS_FACTOR)]
        radius_factor: f64,
        #[arg(long, default_value_t = DEFAULT_FOV_Y)]
        fov_y: f64,
        #[arg(long, default_value_t = DEFAULT_MAX_ELEVATION)]
        max_elevation: f64,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Cut a cloud into slabs with ghost margins.
    Partition {
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long, default_value_t = 2)]
        partitions: usize,
        /// Defaults to three times the median nearest-neighbor spacing.
        #[arg(long)]
        ghost_margin: Option<f64>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Render ground-truth images and masks.
    RenderGt {
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long)]
        rig: PathBuf,
        /// Restrict to one partition's owned and ghost points.
        #[arg(long)]
        partition: Option<PathBuf>,
        #[command(flatten)]
        gt: GtArgs,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train a single partition.
    Train {
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long)]
        partition: PathBuf,
        #[arg(long)]
        rig: PathBuf,
        /// Comma-separated view indices; defaults to every view.
        #[arg(long, value_delimiter = ',')]
        views: Vec<usize>,
        /// JSON training configuration.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        iterations: Option<u64>,
        #[arg(long, default_value_t = 1)]
        shards: usize,
        #[arg(long)]
        checkpoint_interval: Option<u64>,
        #[command(flatten)]
        gt: GtArgs,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Full distributed job.
    Run(RunArgs),
    /// Merge per-partition models.
    Merge {
        /// Partition manifests, in any order.
        #[arg(long, num_args = 1.., required = true)]
        partitions: Vec<PathBuf>,
        /// Trained models, one per partition.
        #[arg(long, num_args = 1.., required = true)]
        models: Vec<PathBuf>,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Render a model from rig views.
    Render {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        rig: PathBuf,
        #[arg(long, value_delimiter = ',')]
        views: Vec<usize>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// PSNR and SSIM against ground truth from the cloud.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long)]
        rig: PathBuf,
        /// Evaluate the test views of this split file.
        #[arg(long)]
        split: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        views: Vec<usize>,
        #[command(flatten)]
        gt: GtArgs,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Scaling table across runs.
    Report {
        /// Job directories; the directory name is the label.
        #[arg(long, num_args = 0..)]
        runs: Vec<PathBuf>,
        /// Literal timings as `label=seconds`.
        #[arg(long = "timing", num_args = 0..)]
        timings: Vec<String>,
        /// Defaults to the first run.
        #[arg(long)]
        baseline: Option<String>,
        #[arg(long, short)]
        out: PathBuf,
    },
    #[command(hide = true)]
    Worker { spec: PathBuf },
}

#[derive(Args, Clone)]
struct GtArgs {
    /// Ground-truth splat scale; defaults to half the median point spacing.
    #[arg(long)]
    gt_scale: Option<f64>,
    /// Train and evaluate against every pixel instead of the coverage mask.
    #[arg(long)]
    no_masks: bool,
}

impl GtArgs {
    fn config(&self, scene: &PointCloud) -> GroundTruthConfig {
        GroundTruthConfig { scale: self.gt_scale, masks: !self.no_masks, ..Default::default() }.resolved(scene)
    }
}

#[derive(Args)]
struct RunArgs {
    /// JSON job spec; flags below override it.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    cloud: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    partitions: Option<usize>,
    #[arg(long)]
    shards: Option<usize>,
    #[arg(long)]
    iterations: Option<u64>,
    #[arg(long)]
    resolution: Option<usize>,
    #[arg(long)]
    azimuth: Option<usize>,
    #[arg(long)]
    elevation: Option<usize>,
    #[arg(long)]
    test_views: Option<usize>,
    #[arg(long)]
    ghost_margin: Option<f64>,
    #[arg(long)]
    max_workers: Option<usize>,
    #[arg(long)]
    no_masks: bool,
    /// Run workers as threads instead of processes.
    #[arg(long)]
    in_process: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: kind={} msg={msg}", e.kind());
            ExitCode::FAILURE
        }
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidConfig(msg.into())
}

fn select_views(rig: &RigFile, views: &[usize]) -> Result<Vec<(usize, Camera)>> {
    if views.is_empty() {
        return Ok(rig.cameras.iter().copied().enumerate().collect());
    }
    views
        .iter()
        .map(|&i| rig.cameras.get(i).map(|c| (i, *c)).ok_or_else(|| invalid(format!("view {i} not in a {}-camera rig", rig.cameras.len()))))
        .collect()
}

fn mkdir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })
}

fn dispatch(cli: Cli) -> Result<()> {
    let seed = cli.seed.unwrap_or(0);
    match cli.cmd {
        Cmd::GenVolume { kind, dims, noise, out } => {
            let kind: VolumeKind = kind.parse()?;
            let vol = make_volume(kind, [dims; 3], noise, seed)?;
            write_volume(&out, &vol, Some(kind.name()))?;
            let mut m = StageManifest::new("gen-volume", seed, &serde_json::json!({"kind": kind.name(), "dims": dims, "noise": noise}));
            m.output(&out)?;
            m.write(&out.with_extension("manifest.json"))?;
            println!("volume {} {dims}^3 -> {}", kind.name(), out.display());
        }
        Cmd::ExtractIso { volume, isovalue, out } => {
            let (vol, header) = read_volume(&volume)?;
            let kind = header.kind.as_deref().map(str::parse::<VolumeKind>).transpose()?;
            let iso = isovalue.or(kind.map(VolumeKind::default_isovalue)).unwrap_or(0.0);
            let pc = extract_isosurface(&vol, iso, &ColorMap::default())?;
            write_cloud(&out, &pc)?;
            let mut m = StageManifest::new("extract-iso", seed, &serde_json::json!({"isovalue": iso}));
            m.input(&volume)?.output(&out)?;
            m.write(&out.with_extension("manifest.json"))?;
            println!("points: {}", pc.len());
        }
        Cmd::GenCameras { azimuth, elevation, resolution, cloud, radius_factor, fov_y, max_elevation, out } => {
            let spec = RigSpec { n_azimuth: azimuth, n_elevation: elevation, resolution, radius_factor, fov_y, max_elevation };
            let orbital = match &cloud {
                Some(p) => spec.orbital_for(&read_cloud(p)?)?,
                None => OrbitalRig { radius: radius_factor, fov_y, max_elevation, ..OrbitalRig::new([0.0; 3], 1.0, azimuth, elevation, resolution) },
            };
            let rig = RigFile::new(orbital.cameras()?, Some(orbital));
            write_rig(&out, &rig)?;
            let mut m = StageManifest::new("gen-cameras", seed, &spec);
            if let Some(p) = &cloud {
                m.input(p)?;
            }
            m.output(&out)?;
            m.write(&out.with_extension("manifest.json"))?;
            println!("cameras: {}", rig.cameras.len());
            println!("rig_hash: {}", rig.rig_hash);
        }
        Cmd::Partition { cloud, partitions, ghost_margin, out_dir } => {
            let pc = read_cloud(&cloud)?;
            let margin = ghost_margin.unwrap_or_else(|| default_ghost_margin(&pc));
            let parts = partition_cloud(&pc, partitions, margin)?;
            let mut m = StageManifest::new("partition", seed, &serde_json::json!({"partitions": partitions, "ghost_margin": margin}));
            m.input(&cloud)?;
            for p in &parts {
                let path = out_dir.join(format!("part_{}.json", p.id));
                write_json(&path, &PartitionManifest::from_partition(p))?;
                m.output(&path)?;
                println!("partition {}: owned {} ghost {}", p.id, p.owned_points.len(), p.ghost_points.len());
            }
            m.write(&out_dir.join("manifest.json"))?;
        }
        Cmd::RenderGt { cloud, rig, partition, gt, out_dir } => {
            let pc = read_cloud(&cloud)?;
            let gt = gt.config(&pc);
            let local = match &partition {
                Some(p) => read_json::<PartitionManifest>(p)?.to_partition(&pc)?.training_cloud(),
                None => pc,
            };
            let rig_file = read_rig(&rig)?;
            let cfg = TrainConfig::default();
            let views = make_train_views(&local, &rig_file.cameras, &gt, &cfg.render)?;
            mkdir(&out_dir)?;
            let mut m = StageManifest::new("render-gt", seed, &gt);
            m.input(&cloud)?.input(&rig)?;
            if let Some(p) = &partition {
                m.input(p)?;
            }
            for (i, v) in views.iter().enumerate() {
                let (img, mask) = (out_dir.join(format!("gt_{i:04}.png")), out_dir.join(format!("mask_{i:04}.png")));
                write_image(&img, &v.ground_truth)?;
                write_image(&mask, &v.mask)?;
                m.output(&img)?.output(&mask)?;
            }
            m.write(&out_dir.join("manifest.json"))?;
            println!("views: {}", views.len());
        }
        Cmd::Train { cloud, partition, rig, views, config, iterations, shards, checkpoint_interval, gt, out_dir } => {
            let mut cfg: TrainConfig = match &config {
                Some(p) => read_json(p)?,
                None => TrainConfig::default(),
            };
            cfg.seed = seed;
            if let Some(n) = iterations {
                cfg.iterations = n;
            }
            let pc = read_cloud(&cloud)?;
            let part = read_json::<PartitionManifest>(&partition)?.to_partition(&pc)?;
            let rig_file = read_rig(&rig)?;
            let view_ids: Vec<usize> = select_views(&rig_file, &views)?.into_iter().map(|(i, _)| i).collect();
            let dir = out_dir.clone();
            mkdir(&dir)?;
            let spec = WorkerSpec {
                partition_id: part.id,
                cloud: cloud.clone(),
                partition_manifest: partition.clone(),
                rig: rig.clone(),
                rig_hash: rig_file.rig_hash.clone(),
                train_views: view_ids,
                ground_truth: gt.config(&pc),
                train: cfg,
                shards,
                out_dir: dir,
                checkpoint_interval,
                fail_after: None,
            };
            let report = run_worker(&spec)?;
            println!(
                "partition {}: {} -> {} gaussians, final loss {:.6}, {:.2}s",
                report.partition, report.initial_size, report.final_size, report.final_loss, report.train_seconds
            );
        }
        Cmd::Run(args) => {
            let mut spec: JobSpec = match &args.spec {
                Some(p) => read_json(p)?,
                None => JobSpec::default(),
            };
            if let Some(v) = cli.seed {
                spec.seed = v;
            }
            if let Some(v) = args.cloud {
                spec.cloud = v;
            }
            if let Some(v) = args.out_dir {
                spec.out_dir = v;
            }
            if let Some(v) = args.partitions {
                spec.n_partitions = v;
            }
            if let Some(v) = args.shards {
                spec.shards_per_partition = v;
            }
            if let Some(v) = args.iterations {
                spec.train.iterations = v;
            }
            if let Some(v) = args.resolution {
                spec.rig.resolution = v;
            }
            if let Some(v) = args.azimuth {
                spec.rig.n_azimuth = v;
            }
            if let Some(v) = args.elevation {
                spec.rig.n_elevation = v;
            }
            if args.test_views.is_some() {
                spec.test_views = args.test_views;
            }
            if args.ghost_margin.is_some() {
                spec.ghost_margin = args.ghost_margin;
            }
            if args.max_workers.is_some() {
                spec.max_workers = args.max_workers;
            }
            if args.no_masks {
                spec.ground_truth.masks = false;
            }
            let launcher = if args.in_process {
                Launcher::InProcess
            } else {
                let program = std::env::current_exe().map_err(|e| Error::Io { path: "current_exe".into(), source: e })?;
                Launcher::Process { program, args: vec!["worker".into()] }
            };
            let result = run_job(&spec, &launcher)?;
            write_json(&spec.out_dir.join("job.json"), &spec)?;
            let r = &result.report;
            println!(
                "partitions {} workers {} merged {} gaussians in {:.2}s; test psnr {:.2} ssim {:.4}",
                r.n_partitions, r.workers, r.merged_size, r.wall_seconds, r.eval.psnr, r.eval.ssim
            );
        }
        Cmd::Merge { partitions, models, out } => {
            let parts = partitions
                .iter()
                .map(|p| Ok(read_json::<PartitionManifest>(p)?.to_region()))
                .collect::<Result<Vec<_>>>()?;
            let loaded = models.iter().map(|p| read_model(p)).collect::<Result<Vec<_>>>()?;
            let merged = merge_models(&loaded, &parts)?;
            write_model(&out, &merged)?;
            let mut m = StageManifest::new("merge", seed, &serde_json::json!({}));
            for p in partitions.iter().chain(&models) {
                m.input(p)?;
            }
            m.output(&out)?;
            m.write(&out.with_extension("manifest.json"))?;
            println!("merged: {}", merged.len());
        }
        Cmd::Render { model, rig, views, out_dir } => {
            let splats = read_model(&model)?;
            let rig_file = read_rig(&rig)?;
            let cfg = TrainConfig::default().render;
            mkdir(&out_dir)?;
            let mut m = StageManifest::new("render", seed, &cfg);
            m.input(&model)?.input(&rig)?;
            for (i, cam) in select_views(&rig_file, &views)? {
                let path = out_dir.join(format!("view_{i:04}.png"));
                write_image(&path, &render(&splats, &cam, &cfg).color)?;
                m.output(&path)?;
            }
            m.write(&out_dir.join("manifest.json"))?;
        }
        Cmd::Eval { model, cloud, rig, split, views, gt, out } => {
            let splats = read_model(&model)?;
            let pc = read_cloud(&cloud)?;
            let rig_file = read_rig(&rig)?;
            let ids = match &split {
                Some(p) => read_json::<Split>(p)?.test,
                None => views,
            };
            let cams: Vec<Camera> = select_views(&rig_file, &ids)?.into_iter().map(|(_, c)| c).collect();
            let eval = evaluate_model(&splats, &pc, &cams, &gt.config(&pc), &TrainConfig::default())?;
            atomic_write(&out, metrics_csv(&eval).as_bytes())?;
            let mut m = StageManifest::new("eval", seed, &gt.config(&pc));
            m.input(&model)?.input(&cloud)?.input(&rig)?.output(&out)?;
            m.write(&out.with_extension("manifest.json"))?;
            println!("psnr {:.2} ssim {:.4} lpips n/a", eval.psnr, eval.ssim);
        }
        Cmd::Report { runs, timings, baseline, out } => {
            let mut rows = Vec::new();
            for dir in &runs {
                let label = dir.file_name().map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned());
                let r: JobReport = read_json(&dir.join("job_report.json"))?;
                rows.push(RunTiming::from_report(&label, &r));
            }
            for t in &timings {
                let (label, secs) = t.rsplit_once('=').ok_or_else(|| invalid(format!("timing {t:?} is not label=seconds")))?;
                let secs: f64 = secs.trim().parse().map_err(|_| invalid(format!("bad seconds in {t:?}")))?;
                rows.push(RunTiming { label: label.to_string(), n_partitions: 0, workers: 0, shards: 0, wall_seconds: secs, psnr: None, ssim: None });
            }
            let base = baseline.or_else(|| rows.first().map(|r| r.label.clone())).unwrap_or_default();
            let table = scaling_report(&rows, &base)?;
            atomic_write(&out, table.to_csv().as_bytes())?;
            atomic_write(&out.with_extension("txt"), table.to_text().as_bytes())?;
            let mut m = StageManifest::new("report", seed, &serde_json::json!({"baseline": base, "timings": timings}));
            for d in &runs {
                m.input(&d.join("job_report.json"))?;
            }
            m.output(&out)?;
            m.write(&out.with_extension("manifest.json"))?;
            print!("{}", table.to_text());
        }
        Cmd::Worker { spec } => {
            let ws: WorkerSpec = read_json(&spec)?;
            let r = run_worker(&ws)?;
            println!("partition {} done in {:.2}s", r.partition, r.train_seconds);
        }
    }
    Ok(())
}
