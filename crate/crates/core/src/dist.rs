//! Distributed runs: one worker per partition, communicating with the
//! coordinator only through files in the job directory.
//!
//! ```text
//! <out>/rig.json                    cameras shared by every worker
//! <out>/split.json                  train / test view indices
//! <out>/partitions/part_<k>.json    partition manifests
//! <out>/workers/p<k>/worker.json    worker spec
//! <out>/workers/p<k>/model.ply      trained model
//! <out>/workers/p<k>/report.json    worker report
//! <out>/merged.ply, metrics.csv, timing.csv, job_report.json
//! ```

use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss::{Camera, OrbitalRig, SplatModel, DEFAULT_FOV_Y, DEFAULT_MAX_ELEVATION, DEFAULT_RADIUS_FACTOR};
use crate::io::{
    config_hash, hash_file, read_cloud, read_json, read_model, read_rig, write_checkpoint, write_json, write_model,
    write_rig, RigFile, StageManifest,
};
use crate::iso::{seed_gaussians, PointCloud, ScaleRule};
use crate::metrics::{evaluate, EvalResult};
use crate::partition::{default_ghost_margin, merge_models, partition_cloud, Partition, PartitionManifest};
use crate::raster::render;
use crate::train::{make_train_views, train_partition_with, GroundTruthConfig, TrainConfig, TrainView};

/// Overrides the number of concurrently running workers.
pub const MAX_WORKERS_ENV: &str = "ISOSPLAT_MAX_WORKERS";
/// Allowance before a worker has reported its first-iterations timing.
pub const STARTUP_TIMEOUT_SECS: f64 = 600.0;
/// Iterations timed before extrapolating a worker's deadline.
pub const PROGRESS_ITERATIONS: u64 = 100;
pub const TIMEOUT_FACTOR: f64 = 10.0;
/// Neighbors used to size seed Gaussians.
pub const SEED_NEIGHBORS: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RigSpec {
    pub n_azimuth: usize,
    pub n_elevation: usize,
    pub resolution: usize,
    /// Orbit radius as a multiple of the cloud's bounding radius.
    pub radius_factor: f64,
    pub fov_y: f64,
    pub max_elevation: f64,
}

impl Default for RigSpec {
    fn default() -> Self {
        Self {
            n_azimuth: 8,
            n_elevation: 3,
            resolution: 64,
            radius_factor: DEFAULT_RADIUS_FACTOR,
            fov_y: DEFAULT_FOV_Y,
            max_elevation: DEFAULT_MAX_ELEVATION,
        }
    }
}

impl RigSpec {
    pub fn orbital_for(&self, cloud: &PointCloud) -> Result<OrbitalRig> {
        let (center, r) = cloud.bounding_sphere().ok_or(Error::EmptyCloud)?;
        let r = if r > 0.0 { r } else { 1.0 };
        Ok(OrbitalRig {
            center,
            radius: self.radius_factor * r,
            n_azimuth: self.n_azimuth,
            n_elevation: self.n_elevation,
            resolution: self.resolution,
            fov_y: self.fov_y,
            max_elevation: self.max_elevation,
        })
    }
}

/// Stop a worker with an error once it has completed `after_iteration`
/// steps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaultInjection {
    pub partition: usize,
    pub after_iteration: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JobSpec {
    pub cloud: PathBuf,
    pub out_dir: PathBuf,
    pub n_partitions: usize,
    pub shards_per_partition: usize,
    pub rig: RigSpec,
    /// Held-out views; `None` holds out a tenth of the rig.
    pub test_views: Option<usize>,
    /// `None` uses three times the median nearest-neighbor spacing.
    pub ghost_margin: Option<f64>,
    pub ground_truth: GroundTruthConfig,
    pub train: TrainConfig,
    pub seed: u64,
    pub max_workers: Option<usize>,
    pub timeout_seconds: Option<f64>,
    pub checkpoint_interval: Option<u64>,
    pub inject_failure: Option<FaultInjection>,
}

impl Default for JobSpec {
    fn default() -> Self {
        Self {
            cloud: PathBuf::from("cloud.ply"),
            out_dir: PathBuf::from("run"),
            n_partitions: 1,
            shards_per_partition: 1,
            rig: RigSpec::default(),
            test_views: None,
            ghost_margin: None,
            ground_truth: GroundTruthConfig::default(),
            train: TrainConfig::default(),
            seed: 0,
            max_workers: None,
            timeout_seconds: None,
            checkpoint_interval: None,
            inject_failure: None,
        }
    }
}

impl JobSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_partitions == 0 {
            return Err(Error::InvalidConfig("n_partitions must be at least 1".into()));
        }
        if self.shards_per_partition == 0 {
            return Err(Error::InvalidConfig("shards_per_partition must be at least 1".into()));
        }
        if self.ghost_margin.is_some_and(|m| !(m >= 0.0)) {
            return Err(Error::InvalidConfig("ghost_margin must be non-negative".into()));
        }
        if !self.cloud.is_file() {
            return Err(Error::io(&self.cloud, std::io::Error::new(std::io::ErrorKind::NotFound, "input cloud not found")));
        }
        self.train.validate()
    }

    /// Worker count after the environment override, never above the
    /// partition count.
    pub fn effective_workers(&self) -> usize {
        let from_env = std::env::var(MAX_WORKERS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok());
        let default = std::thread::available_parallelism().map_or(1, |n| n.get());
        from_env.or(self.max_workers).unwrap_or(default).clamp(1, self.n_partitions)
    }
}

/// Seeded split of `n` views into sorted train and test index lists.
pub fn split_views(n: usize, test: Option<usize>, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let test = test.unwrap_or(((n as f64) * 0.1).round() as usize).max(1);
    if test >= n {
        return Err(Error::InvalidConfig(format!("{test} test views leave no training views out of {n}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut test_idx = idx[..test].to_vec();
    let mut train_idx = idx[test..].to_vec();
    test_idx.sort_unstable();
    train_idx.sort_unstable();
    Ok((train_idx, test_idx))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Everything a worker needs, written by the coordinator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkerSpec {
    pub partition_id: usize,
    pub cloud: PathBuf,
    pub partition_manifest: PathBuf,
    pub rig: PathBuf,
    pub rig_hash: String,
    pub train_views: Vec<usize>,
    pub ground_truth: GroundTruthConfig,
    pub train: TrainConfig,
    pub shards: usize,
    pub out_dir: PathBuf,
    pub checkpoint_interval: Option<u64>,
    pub fail_after: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkerReport {
    pub partition: usize,
    pub setup_seconds: f64,
    pub train_seconds: f64,
    pub final_loss: f64,
    pub iterations: u64,
    pub initial_size: usize,
    pub peak_size: usize,
    pub final_size: usize,
    /// Peak resident set of the worker process where the OS reports it,
    /// otherwise an estimate from the peak model size.
    pub peak_memory_bytes: u64,
    pub rig_hash: String,
    pub model_sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Progress {
    iterations: u64,
    setup_seconds: f64,
    train_seconds: f64,
}

/// Seed model and training views for one partition: ground truth and masks
/// come from the partition's owned and ghost points.
pub fn prepare_partition(
    partition: &Partition,
    cams: &[Camera],
    gt: &GroundTruthConfig,
    train: &TrainConfig,
) -> Result<(SplatModel, Vec<TrainView>)> {
    let local = partition.training_cloud();
    let mut model = if local.is_empty() { SplatModel::default() } else { seed_gaussians(&local, ScaleRule::Knn, SEED_NEIGHBORS)? };
    model.origin_partition = Some(partition.id);
    let views = make_train_views(&local, cams, gt, &train.render)?;
    Ok((model, views))
}

fn peak_rss_bytes() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

pub fn run_worker(spec: &WorkerSpec) -> Result<WorkerReport> {
    let t0 = Instant::now();
    let cloud = read_cloud(&spec.cloud)?;
    let manifest: PartitionManifest = read_json(&spec.partition_manifest)?;
    if manifest.id != spec.partition_id {
        return Err(Error::ManifestMismatch(format!(
            "worker for partition {} was given the manifest of partition {}",
            spec.partition_id, manifest.id
        )));
    }
    let partition = manifest.to_partition(&cloud)?;
    let rig = read_rig(&spec.rig)?;
    if rig.rig_hash != spec.rig_hash {
        return Err(Error::ManifestMismatch(format!(
            "rig hash {} differs from the coordinator's {}",
            rig.rig_hash, spec.rig_hash
        )));
    }
    let cams = spec
        .train_views
        .iter()
        .map(|&i| rig.cameras.get(i).copied().ok_or_else(|| Error::ManifestMismatch(format!("view {i} not in rig"))))
        .collect::<Result<Vec<_>>>()?;
    let (model, views) = prepare_partition(&partition, &cams, &spec.ground_truth, &spec.train)?;
    let setup_seconds = t0.elapsed().as_secs_f64();
    let cfg_hash = config_hash(&spec.train);
    let ckpt_dir = spec.out_dir.join("checkpoints");
    let progress_at = PROGRESS_ITERATIONS.min(spec.train.iterations);
    let t_train = Instant::now();
    let outcome = train_partition_with(model, &views, &spec.train, spec.shards, |c| {
        if c.iteration == progress_at {
            let p = Progress { iterations: c.iteration, setup_seconds, train_seconds: t_train.elapsed().as_secs_f64() };
            write_json(&spec.out_dir.join("progress.json"), &p)?;
        }
        if spec.checkpoint_interval.is_some_and(|k| k > 0 && c.iteration % k == 0) {
            write_checkpoint(&ckpt_dir, c.iteration, c.model, c.adam, &cfg_hash)?;
        }
        if spec.fail_after == Some(c.iteration) {
            return Err(Error::WorkerFailure {
                id: spec.partition_id,
                reason: format!("injected failure after iteration {}", c.iteration),
            });
        }
        Ok(())
    })?;
    let train_seconds = t_train.elapsed().as_secs_f64();

    let model_path = spec.out_dir.join("model.ply");
    write_model(&model_path, &outcome.model)?;
    let per_gaussian = (std::mem::size_of::<crate::gauss::Gaussian3D>() + 3 * 14 * 8) as u64;
    let report = WorkerReport {
        partition: spec.partition_id,
        setup_seconds,
        train_seconds,
        final_loss: outcome.final_loss(views.len()),
        iterations: spec.train.iterations,
        initial_size: outcome.initial_size,
        peak_size: outcome.peak_size,
        final_size: outcome.model.len(),
        peak_memory_bytes: peak_rss_bytes().unwrap_or(outcome.peak_size as u64 * per_gaussian),
        rig_hash: rig.rig_hash.clone(),
        model_sha256: hash_file(&model_path)?,
    };
    let mut m = StageManifest::new("train", spec.train.seed, spec);
    m.input(&spec.cloud)?.input(&spec.partition_manifest)?.input(&spec.rig)?.output(&model_path)?;
    m.write(&spec.out_dir.join("manifest.json"))?;
    write_json(&spec.out_dir.join("report.json"), &report)?;
    Ok(report)
}

/// How workers are started.
#[derive(Clone, Debug)]
pub enum Launcher {
    /// Threads in the coordinator process.
    InProcess,
    /// Child processes: `program args… <worker.json>`.
    Process { program: PathBuf, args: Vec<String> },
}

enum Running {
    Thread(Option<std::thread::JoinHandle<Result<WorkerReport>>>),
    Child(Child),
}

struct Slot {
    id: usize,
    started: Instant,
    dir: PathBuf,
    handle: Running,
}

impl Slot {
    /// `Some(Ok)` on success, `Some(Err)` on failure, `None` while running.
    fn poll(&mut self) -> Option<std::result::Result<(), String>> {
        match &mut self.handle {
            Running::Thread(slot) => {
                if !slot.as_ref().is_some_and(|h| h.is_finished()) {
                    return None;
                }
                Some(match slot.take().expect("finished handle").join() {
                    Ok(Ok(_)) => Ok(()),
                    Ok(Err(e)) => Err(e.to_string()),
                    Err(_) => Err("worker thread panicked".into()),
                })
            }
            Running::Child(c) => match c.try_wait() {
                Ok(None) => None,
                Ok(Some(status)) if status.success() => Some(Ok(())),
                Ok(Some(status)) => {
                    let log = std::fs::read_to_string(self.dir.join("stderr.log")).unwrap_or_default();
                    let last = log.lines().rev().find(|l| !l.trim().is_empty()).unwrap_or("no diagnostic");
                    Some(Err(format!("{status}: {last}")))
                }
                Err(e) => Some(Err(e.to_string())),
            },
        }
    }

    fn deadline(&self, iterations: u64, fixed: Option<f64>) -> f64 {
        if let Some(t) = fixed {
            return t;
        }
        match read_json::<Progress>(&self.dir.join("progress.json")) {
            Ok(p) if p.iterations > 0 => {
                let total = p.train_seconds * iterations as f64 / p.iterations as f64;
                p.setup_seconds + TIMEOUT_FACTOR * total.max(1.0)
            }
            _ => STARTUP_TIMEOUT_SECS,
        }
    }

    fn kill(&mut self) {
        if let Running::Child(c) = &mut self.handle {
            let _ = c.kill();
            let _ = c.wait();
        }
    }
}

fn launch(launcher: &Launcher, spec: WorkerSpec, spec_path: &Path) -> Result<Running> {
    match launcher {
        Launcher::InProcess => Ok(Running::Thread(Some(std::thread::spawn(move || run_worker(&spec))))),
        Launcher::Process { program, args } => {
            let open = |name: &str| -> Result<std::fs::File> {
                let p = spec.out_dir.join(name);
                std::fs::File::create(&p).map_err(|e| Error::io(&p, e))
            };
            let child = Command::new(program)
                .args(args)
                .arg(spec_path)
                .stdin(Stdio::null())
                .stdout(open("stdout.log")?)
                .stderr(open("stderr.log")?)
                .spawn()
                .map_err(|e| Error::WorkerFailure { id: spec.partition_id, reason: format!("spawn failed: {e}") })?;
            Ok(Running::Child(child))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobReport {
    pub n_partitions: usize,
    pub shards_per_partition: usize,
    pub workers: usize,
    pub wall_seconds: f64,
    pub train_views: usize,
    pub test_views: usize,
    pub merged_size: usize,
    pub eval: EvalResult,
    pub reports: Vec<WorkerReport>,
}

#[derive(Clone, Debug)]
pub struct JobResult {
    pub merged: SplatModel,
    pub partitions: Vec<Partition>,
    pub report: JobReport,
    pub rig: RigFile,
    pub split: Split,
}

impl JobResult {
    pub fn test_cameras(&self) -> Vec<Camera> {
        self.split.test.iter().map(|&i| self.rig.cameras[i]).collect()
    }
}

/// Partition, train each partition in its own worker, gather, merge and
/// evaluate on the held-out views.
pub fn run_job(spec: &JobSpec, launcher: &Launcher) -> Result<JobResult> {
    spec.validate()?;
    let t0 = Instant::now();
    let out = &spec.out_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let cloud = read_cloud(&spec.cloud)?;
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }

    let orbital = spec.rig.orbital_for(&cloud)?;
    let rig = RigFile::new(orbital.cameras()?, Some(orbital));
    let rig_path = out.join("rig.json");
    write_rig(&rig_path, &rig)?;
    let (train_idx, test_idx) = split_views(rig.cameras.len(), spec.test_views, spec.seed)?;
    let split = Split { train: train_idx, test: test_idx };
    write_json(&out.join("split.json"), &split)?;

    let margin = spec.ghost_margin.unwrap_or_else(|| default_ghost_margin(&cloud));
    let partitions = partition_cloud(&cloud, spec.n_partitions, margin)?;
    let gt = spec.ground_truth.resolved(&cloud);
    let mut specs = Vec::with_capacity(partitions.len());
    for p in &partitions {
        let manifest_path = out.join("partitions").join(format!("part_{}.json", p.id));
        write_json(&manifest_path, &PartitionManifest::from_partition(p))?;
        let dir = out.join("workers").join(format!("p{}", p.id));
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let _ = std::fs::remove_file(dir.join("progress.json"));
        let mut train = spec.train.clone();
        train.seed = spec.seed.wrapping_add(p.id as u64);
        let ws = WorkerSpec {
            partition_id: p.id,
            cloud: spec.cloud.clone(),
            partition_manifest: manifest_path,
            rig: rig_path.clone(),
            rig_hash: rig.rig_hash.clone(),
            train_views: split.train.clone(),
            ground_truth: gt,
            train,
            shards: spec.shards_per_partition,
            out_dir: dir.clone(),
            checkpoint_interval: spec.checkpoint_interval,
            fail_after: spec.inject_failure.filter(|f| f.partition == p.id).map(|f| f.after_iteration),
        };
        let spec_path = dir.join("worker.json");
        write_json(&spec_path, &ws)?;
        specs.push((ws, spec_path));
    }

    let workers = spec.effective_workers();
    let mut queue = specs.into_iter();
    let mut running: Vec<Slot> = Vec::new();
    let abort = |running: &mut Vec<Slot>, err: Error| -> Error {
        for s in running.iter_mut() {
            s.kill();
        }
        err
    };
    loop {
        while running.len() < workers {
            let Some((ws, path)) = queue.next() else { break };
            let id = ws.partition_id;
            let dir = ws.out_dir.clone();
            match launch(launcher, ws, &path) {
                Ok(handle) => running.push(Slot { id, started: Instant::now(), dir, handle }),
                Err(e) => return Err(abort(&mut running, e)),
            }
        }
        if running.is_empty() {
            break;
        }
        let mut i = 0;
        while i < running.len() {
            match running[i].poll() {
                None => {
                    let elapsed = running[i].started.elapsed().as_secs_f64();
                    if elapsed > running[i].deadline(spec.train.iterations, spec.timeout_seconds) {
                        let id = running[i].id;
                        return Err(abort(&mut running, Error::Timeout { id, seconds: elapsed }));
                    }
                    i += 1;
                }
                Some(Ok(())) => {
                    running.swap_remove(i);
                }
                Some(Err(reason)) => {
                    let id = running[i].id;
                    running.swap_remove(i);
                    return Err(abort(&mut running, Error::WorkerFailure { id, reason }));
                }
            }
        }
        std::thread::sleep(Duration::from_millis(5));
    }

    let mut reports = Vec::with_capacity(partitions.len());
    let mut models = Vec::with_capacity(partitions.len());
    for p in &partitions {
        let dir = out.join("workers").join(format!("p{}", p.id));
        let report: WorkerReport = read_json(&dir.join("report.json"))
            .map_err(|e| Error::WorkerFailure { id: p.id, reason: format!("no report: {e}") })?;
        if report.rig_hash != rig.rig_hash {
            return Err(Error::ManifestMismatch(format!("partition {} trained on rig {}", p.id, report.rig_hash)));
        }
        let model_path = dir.join("model.ply");
        if hash_file(&model_path)? != report.model_sha256 {
            return Err(Error::ManifestMismatch(format!("model of partition {} does not match its report", p.id)));
        }
        models.push(read_model(&model_path)?);
        reports.push(report);
    }
    let merged = merge_models(&models, &partitions)?;
    let merged_path = out.join("merged.ply");
    write_model(&merged_path, &merged)?;

    let test_cams: Vec<Camera> = split.test.iter().map(|&i| rig.cameras[i]).collect();
    let eval = evaluate_model(&merged, &cloud, &test_cams, &gt, &spec.train)?;
    crate::io::atomic_write(&out.join("metrics.csv"), metrics_csv(&eval).as_bytes())?;

    let wall_seconds = t0.elapsed().as_secs_f64();
    let report = JobReport {
        n_partitions: partitions.len(),
        shards_per_partition: spec.shards_per_partition,
        workers,
        wall_seconds,
        train_views: split.train.len(),
        test_views: split.test.len(),
        merged_size: merged.len(),
        eval,
        reports,
    };
    crate::io::atomic_write(&out.join("timing.csv"), timing_csv(&report).as_bytes())?;
    write_json(&out.join("job_report.json"), &report)?;
    let mut m = StageManifest::new("run", spec.seed, spec);
    m.input(&spec.cloud)?.output(&merged_path)?.output(&out.join("metrics.csv"))?;
    m.write(&out.join("manifest.json"))?;
    Ok(JobResult { merged, partitions, report, rig, split })
}

/// PSNR and SSIM of `model` against ground truth rendered from the whole
/// cloud.
pub fn evaluate_model(
    model: &SplatModel,
    cloud: &PointCloud,
    cams: &[Camera],
    gt: &GroundTruthConfig,
    train: &TrainConfig,
) -> Result<EvalResult> {
    let truth = make_train_views(cloud, cams, gt, &train.render)?;
    let pairs: Vec<_> = truth
        .into_iter()
        .map(|v| (render(model, &v.cam, &train.render).color, v.ground_truth))
        .collect();
    evaluate(&pairs)
}

/// Per-view metrics; contains no timings so identical runs give identical
/// bytes.
pub fn metrics_csv(eval: &EvalResult) -> String {
    let mut s = String::from("view,psnr,ssim\n");
    for v in &eval.per_view {
        s.push_str(&format!("{},{:.6},{:.6}\n", v.view, v.psnr, v.ssim));
    }
    s.push_str(&format!("mean,{:.6},{:.6}\n", eval.psnr, eval.ssim));
    s
}

pub fn timing_csv(report: &JobReport) -> String {
    let mut s = String::from("partition,setup_seconds,train_seconds,final_loss,initial_size,peak_size,final_size,peak_memory_bytes\n");
    for r in &report.reports {
        s.push_str(&format!(
            "{},{:.3},{:.3},{:.6},{},{},{},{}\n",
            r.partition, r.setup_seconds, r.train_seconds, r.final_loss, r.initial_size, r.peak_size, r.final_size, r.peak_memory_bytes
        ));
    }
    s.push_str(&format!("job,,{:.3},,,,,\n", report.wall_seconds));
    s
}

/// One run in a scaling comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunTiming {
    pub label: String,
    pub n_partitions: usize,
    pub workers: usize,
    pub shards: usize,
    pub wall_seconds: f64,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
}

impl RunTiming {
    pub fn from_report(label: &str, r: &JobReport) -> Self {
        Self {
            label: label.to_string(),
            n_partitions: r.n_partitions,
            workers: r.workers,
            shards: r.shards_per_partition,
            wall_seconds: r.wall_seconds,
            psnr: Some(r.eval.psnr),
            ssim: Some(r.eval.ssim),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub run: RunTiming,
    pub speedup: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingTable {
    pub baseline: String,
    pub rows: Vec<ScalingRow>,
}

/// Speedup of every run relative to the run labelled `baseline`.
pub fn scaling_report(runs: &[RunTiming], baseline: &str) -> Result<ScalingTable> {
    if runs.len() < 2 {
        return Err(Error::MissingBaseline(format!("need at least two runs, got {}", runs.len())));
    }
    let base = runs
        .iter()
        .find(|r| r.label == baseline)
        .ok_or_else(|| Error::MissingBaseline(format!("no run labelled {baseline:?}")))?;
    if !(base.wall_seconds > 0.0) {
        return Err(Error::MissingBaseline(format!("baseline {baseline:?} has no positive wall time")));
    }
    let rows = runs.iter().map(|r| ScalingRow { run: r.clone(), speedup: base.wall_seconds / r.wall_seconds }).collect();
    Ok(ScalingTable { baseline: baseline.to_string(), rows })
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or("n/a".to_string(), |v| format!("{v:.digits$}"))
}

impl ScalingTable {
    const HEADER: [&'static str; 9] = ["config", "partitions", "workers", "shards", "wall_s", "speedup", "psnr", "ssim", "lpips"];

    fn cells(&self) -> Vec<[String; 9]> {
        self.rows
            .iter()
            .map(|r| {
                [
                    r.run.label.clone(),
                    r.run.n_partitions.to_string(),
                    r.run.workers.to_string(),
                    r.run.shards.to_string(),
                    format!("{:.2}", r.run.wall_seconds),
                    format!("{:.2}", r.speedup),
                    opt(r.run.psnr, 2),
                    opt(r.run.ssim, 4),
                    "n/a".to_string(),
                ]
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = Self::HEADER.join(",");
        s.push('\n');
        for row in self.cells() {
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }

    pub fn to_text(&self) -> String {
        let cells = self.cells();
        let widths: Vec<usize> = (0..9)
            .map(|c| cells.iter().map(|r| r[c].len()).chain([Self::HEADER[c].len()]).max().unwrap_or(0))
            .collect();
        let line = |row: Vec<&str>| -> String {
            let parts: Vec<String> = row
                .iter()
                .enumerate()
                .map(|(c, v)| if c == 0 { format!("{v:<w$}", w = widths[c]) } else { format!("{v:>w$}", w = widths[c]) })
                .collect();
            parts.join("  ").trim_end().to_string() + "\n"
        };
        let mut s = line(Self::HEADER.to_vec());
        s.push_str(&line(widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().iter().map(String::as_str).collect()));
        for row in &cells {
            s.push_str(&line(row.iter().map(String::as_str).collect()));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::write_cloud;
    use crate::iso::{extract_isosurface, make_volume, ColorMap, VolumeKind};
    use crate::train::train_partition;

    fn run(label: &str, secs: f64) -> RunTiming {
        RunTiming { label: label.into(), n_partitions: 4, workers: 4, shards: 1, wall_seconds: secs, psnr: None, ssim: None }
    }

    #[test]
    fn identical_runs_have_unit_speedup() {
        let t = scaling_report(&[run("a", 12.5), run("b", 12.5)], "a").unwrap();
        assert!(t.rows.iter().all(|r| r.speedup == 1.0));
    }

    #[test]
    fn published_timings_speedup() {
        let t = scaling_report(&[run("4 nodes", 32.03), run("8 nodes", 10.18)], "4 nodes").unwrap();
        let s = t.rows[1].speedup;
        assert_eq!(format!("{s:.2}"), "3.15");
        assert_eq!(format!("{s:.1}"), "3.1");
        assert!(t.to_text().contains("3.15"));
        assert!(t.to_csv().lines().nth(2).unwrap().contains(",3.15,"));
    }

    #[test]
    fn missing_baseline() {
        assert!(matches!(scaling_report(&[run("a", 1.0)], "a"), Err(Error::MissingBaseline(_))));
        assert!(matches!(scaling_report(&[run("a", 1.0), run("b", 2.0)], "c"), Err(Error::MissingBaseline(_))));
    }

    #[test]
    fn split_is_seeded_and_disjoint() {
        let (tr, te) = split_views(28, Some(4), 9).unwrap();
        assert_eq!((tr.len(), te.len()), (24, 4));
        assert!(te.iter().all(|i| !tr.contains(i)));
        assert_eq!(split_views(28, Some(4), 9).unwrap(), (tr, te));
        assert_eq!(split_views(30, None, 1).unwrap().1.len(), 3);
    }

    fn tiny_job(dir: &Path, partitions: usize) -> JobSpec {
        let vol = make_volume(VolumeKind::TwoBlob, [12, 12, 12], 0.0, 0).unwrap();
        let pc = extract_isosurface(&vol, 0.0, &ColorMap::default()).unwrap();
        let cloud = dir.join("cloud.ply");
        write_cloud(&cloud, &pc).unwrap();
        JobSpec {
            cloud,
            out_dir: dir.join("run"),
            n_partitions: partitions,
            rig: RigSpec { n_azimuth: 4, n_elevation: 1, resolution: 24, ..Default::default() },
            test_views: Some(1),
            train: TrainConfig { iterations: 12, densify_interval: 5, ..Default::default() },
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn single_partition_job_equals_direct_training() {
        let dir = tempfile::tempdir().unwrap();
        let spec = tiny_job(dir.path(), 1);
        let result = run_job(&spec, &Launcher::InProcess).unwrap();

        let cloud = read_cloud(&spec.cloud).unwrap();
        let parts = partition_cloud(&cloud, 1, default_ghost_margin(&cloud)).unwrap();
        let cams: Vec<Camera> = result.split.train.iter().map(|&i| result.rig.cameras[i]).collect();
        let cfg = TrainConfig { seed: spec.seed, ..spec.train.clone() };
        let (model, views) = prepare_partition(&parts[0], &cams, &spec.ground_truth.resolved(&cloud), &cfg).unwrap();
        let direct = train_partition(model, &views, &cfg, 1).unwrap().model;
        assert_eq!(result.merged.gaussians, direct.gaussians);
    }

    #[test]
    fn injected_failure_names_partition_and_spares_others() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = tiny_job(dir.path(), 2);
        spec.checkpoint_interval = Some(4);
        spec.max_workers = Some(1);
        spec.inject_failure = Some(FaultInjection { partition: 1, after_iteration: 6 });
        let err = run_job(&spec, &Launcher::InProcess).unwrap_err();
        assert!(matches!(err, Error::WorkerFailure { id: 1, .. }), "{err}");
        let ok: crate::io::CheckpointMeta = read_json(&spec.out_dir.join("workers/p0/checkpoints/ckpt_000012.json")).unwrap();
        let p0 = spec.out_dir.join("workers/p0/checkpoints");
        assert_eq!(hash_file(&p0.join(&ok.model_file)).unwrap(), ok.model_sha256);
    }

    #[test]
    fn workers_share_the_scene_ground_truth_scale() {
        let dir = tempfile::tempdir().unwrap();
        let spec = tiny_job(dir.path(), 2);
        run_job(&spec, &Launcher::InProcess).unwrap();
        let cloud = read_cloud(&spec.cloud).unwrap();
        let scene = spec.ground_truth.resolve_scale(&cloud);
        for k in 0..2 {
            let ws: WorkerSpec = read_json(&spec.out_dir.join(format!("workers/p{k}/worker.json"))).unwrap();
            assert_eq!(ws.ground_truth.scale, Some(scene));
        }
    }

    #[test]
    fn job_report_serializes() {
        let dir = tempfile::tempdir().unwrap();
        let spec = tiny_job(dir.path(), 2);
        let r = run_job(&spec, &Launcher::InProcess).unwrap();
        let back: JobReport = read_json(&spec.out_dir.join("job_report.json")).unwrap();
        assert_eq!(back, r.report);
        assert_eq!(r.report.reports.len(), 2);
        assert!(r.merged.len() <= r.report.reports.iter().map(|w| w.final_size).sum());
    }
}
