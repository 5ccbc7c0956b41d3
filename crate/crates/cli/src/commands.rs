use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use mpm_adapt::constitutive::pretrain::{pretrain_base, PretrainConfig};
use mpm_adapt::constitutive::{ElasticModel, MaterialAdapter, MaterialModel, PlasticModel};
use mpm_adapt::fit::{
    self, chamfer_curve, fit_adapter, fit_initial_velocity, interpolate_dynamics, psnr, transfer, FitConfig,
    Supervision, SupervisionKind, VelocityFitConfig, REPORT_SCALE,
};
use mpm_adapt::io::{
    load_material, read_adapter, read_json, read_ppm, read_trajectory, save_material, write_adapter, write_json,
    write_ppm, write_trajectory,
};
use mpm_adapt::mpm::{simulate, Trajectory};
use mpm_adapt::particle_gs::{splat, BindingMatrix, BoundKernels, Camera, Image, PixelLoss};
use mpm_adapt::scene::{lame, synth_kernels, GaussianKernelSet};
use mpm_adapt::{Real, Vec3};
use serde::{Deserialize, Serialize};

use crate::config::GlobalArgs;
use crate::scene_file::{load_scene, SceneFile};
use crate::Failure;

fn required<T: Clone>(v: &Option<T>, flag: &str) -> Result<T, Failure> {
    v.clone().ok_or_else(|| Failure::Input(format!("missing required option --{flag}")))
}

fn parse_list(text: &str, what: &str) -> Result<Vec<f64>, Failure> {
    text.split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|_| Failure::Input(format!("bad {what} entry `{s}`"))))
        .collect()
}

fn parse_vec3(text: &str) -> Result<[f64; 3], Failure> {
    let v = parse_list(text, "vector")?;
    v.try_into().map_err(|_| Failure::Input(format!("`{text}` is not a 3-vector")))
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn frame_name(i: usize) -> String {
    format!("frame_{i:04}.ppm")
}

/// Renders every saved frame into `dir`.
fn render_frames<T: Real>(
    kernels: &BoundKernels<T>,
    traj: &Trajectory<T>,
    camera: &Camera,
    background: [f64; 3],
    dir: &Path,
    sixteen_bit: bool,
) -> Result<usize, Failure> {
    camera.validate()?;
    std::fs::create_dir_all(dir).map_err(mpm_adapt::Error::from)?;
    for (i, img) in render_images(kernels, traj, camera, background)?.iter().enumerate() {
        write_ppm(&dir.join(frame_name(i)), img, sixteen_bit)?;
    }
    Ok(traj.frames.len())
}

fn render_images<T: Real>(
    kernels: &BoundKernels<T>,
    traj: &Trajectory<T>,
    camera: &Camera,
    background: [f64; 3],
) -> Result<Vec<Image<T>>, Failure> {
    if traj.particle_count() != kernels.rest_positions.len() {
        return Err(Failure::Input(format!(
            "trajectory has {} particles but the kernels are bound to {}",
            traj.particle_count(),
            kernels.rest_positions.len()
        )));
    }
    Ok(traj
        .frames
        .iter()
        .map(|f| splat(&kernels.at(&f.positions, &f.deformation), camera, background.map(T::lit)))
        .collect())
}

fn read_frames(dir: &Path, count: usize) -> Result<Vec<Image<f64>>, Failure> {
    (0..count).map(|i| Ok(read_ppm(&dir.join(frame_name(i)))?)).collect()
}

// gen

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
pub struct GenArgs {
    /// Built-in benchmark name.
    #[arg(long)]
    pub preset: Option<String>,
    /// Scene file with a `material` entry.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Particle count for presets (default 4000).
    #[arg(long)]
    pub particles: Option<usize>,
    /// Grid resolution for presets (default 32).
    #[arg(long)]
    pub grid: Option<usize>,
    /// Rollout length; defaults to the scene's.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Render PPM frames.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub frames: Option<bool>,
    #[arg(long)]
    pub image_size: Option<usize>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub sixteen_bit: Option<bool>,
}

impl GenArgs {
    pub fn resolve_defaults(&mut self) {
        self.frames.get_or_insert(true);
        self.image_size.get_or_insert(64);
        self.sixteen_bit.get_or_insert(false);
    }

    pub fn output_dir(&self) -> Result<PathBuf, Failure> {
        required(&self.out, "out")
    }
}

pub fn gen<T: Real>(g: &GlobalArgs, a: &GenArgs) -> Result<(), Failure> {
    let out = a.output_dir()?;
    let (mut file, material) = match (&a.preset, &a.scene) {
        (Some(name), None) => {
            SceneFile::from_preset(name, a.particles.unwrap_or(4000), g.stream("scene"), a.grid.unwrap_or(32))?
        }
        (None, Some(path)) => {
            let mut file = SceneFile::read(path)?;
            let m_path = file
                .material_path(&parent_dir(path))
                .ok_or_else(|| Failure::Input("the scene file names no ground-truth material".into()))?;
            if let Some(n) = a.particles {
                file.particles = n;
            }
            (file, load_material::<f64>(&m_path)?)
        }
        _ => return Err(Failure::Input("give exactly one of --preset or --scene".into())),
    };
    if let Some(steps) = a.steps {
        file.steps = steps;
    }
    file.material = Some(PathBuf::from("gt_material.json"));
    save_material(&out, "gt_material", &material)?;
    write_json(&out.join("scene.json"), &file)?;

    let scene = file.build::<T>(&out)?;
    let cfg = &scene.file.config;
    let traj = simulate(&scene.particles, &[material.cast::<T>()], cfg, scene.file.steps, cfg.substeps)?;
    write_trajectory(&out.join("gt.nmtraj"), &traj)?;
    log::info!("{}: {} particles, {} frames", scene.file.name, scene.particles.len(), traj.frames.len());
    if a.frames == Some(true) {
        let size = a.image_size.unwrap_or(64);
        render_frames(&scene.kernels, &traj, &scene.file.camera(size), scene.file.background, &out.join("frames"), a.sixteen_bit == Some(true))?;
    }
    Ok(())
}

// pretrain

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
pub struct PretrainArgs {
    /// Target material; defaults to Neo-Hookean elasticity without plasticity.
    #[arg(long)]
    pub target: Option<PathBuf>,
    #[arg(long)]
    pub youngs: Option<f64>,
    #[arg(long)]
    pub poisson: Option<f64>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub max_log_stretch: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl PretrainArgs {
    pub fn resolve_defaults(&mut self) {
        let d = PretrainConfig::default();
        if self.target.is_none() {
            self.youngs.get_or_insert(1e5);
            self.poisson.get_or_insert(0.3);
        }
        self.samples.get_or_insert(d.samples);
        self.epochs.get_or_insert(d.epochs);
        self.batch.get_or_insert(d.batch);
        self.lr.get_or_insert(d.learning_rate);
        self.max_log_stretch.get_or_insert(d.max_log_stretch);
    }
}

pub fn pretrain<T: Real>(g: &GlobalArgs, a: &PretrainArgs) -> Result<(), Failure> {
    let out = required(&a.out, "out")?;
    let target: MaterialModel<T> = match &a.target {
        Some(p) => load_material(p)?,
        None => {
            let (mu, lambda) = lame(a.youngs.unwrap_or(1e5), a.poisson.unwrap_or(0.3));
            MaterialModel::new(ElasticModel::NeoHookean { mu, lambda }, PlasticModel::Identity).cast()
        }
    };
    let d = PretrainConfig::default();
    let cfg = PretrainConfig {
        samples: a.samples.unwrap_or(d.samples),
        epochs: a.epochs.unwrap_or(d.epochs),
        batch: a.batch.unwrap_or(d.batch),
        learning_rate: a.lr.unwrap_or(d.learning_rate),
        max_log_stretch: a.max_log_stretch.unwrap_or(d.max_log_stretch),
        seed: g.stream("pretrain"),
        ..d
    };
    let (prior, report) = pretrain_base(&target, &cfg, None)?;
    save_material(&out, "prior", &prior)?;
    let summary = serde_json::json!({
        "elastic_relative_rmse": report.elastic_relative_rmse,
        "plastic_rmse": report.plastic_rmse,
        "elastic_loss_history": report.elastic_loss_history,
        "plastic_loss_history": report.plastic_loss_history,
    });
    write_json(&out.join("pretrain_report.json"), &summary)?;
    println!("elastic relative rmse {:.4e}", report.elastic_relative_rmse);
    println!("plastic rmse {:.4e}", report.plastic_rmse);
    Ok(())
}

// fit

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SupervisionArg {
    Particles,
    Pixels,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum AblationArg {
    None,
    NoAdapter,
}

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
pub struct FitArgs {
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Pretrained base material.
    #[arg(long)]
    pub prior: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub supervision: Option<SupervisionArg>,
    /// Ground-truth trajectory.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Directory of reference frames for pixel supervision; rendered from
    /// `--gt` when absent.
    #[arg(long)]
    pub frames: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lr_floor: Option<f64>,
    /// Saved frames entering the loss.
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, value_enum)]
    pub ablation: Option<AblationArg>,
    #[arg(long)]
    pub image_size: Option<usize>,
    /// Fit the initial velocity under the prior before the adapter.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub fit_velocity: Option<bool>,
    #[arg(long)]
    pub velocity_iterations: Option<usize>,
    #[arg(long)]
    pub velocity_frames: Option<usize>,
}

impl FitArgs {
    pub fn resolve_defaults(&mut self) {
        let d = FitConfig::default();
        let v = VelocityFitConfig::default();
        self.supervision.get_or_insert(SupervisionArg::Particles);
        self.iterations.get_or_insert(d.iterations);
        self.lr.get_or_insert(d.learning_rate);
        self.lr_floor.get_or_insert(d.lr_floor);
        self.checkpoint_every.get_or_insert(d.checkpoint_every);
        self.rank.get_or_insert(d.rank);
        self.alpha.get_or_insert(d.alpha);
        self.ablation.get_or_insert(AblationArg::None);
        self.image_size.get_or_insert(d.image_size);
        self.fit_velocity.get_or_insert(false);
        self.velocity_iterations.get_or_insert(v.iterations);
        self.velocity_frames.get_or_insert(v.frames_used);
    }
}

pub fn fit<T: Real>(g: &GlobalArgs, a: &FitArgs) -> Result<(), Failure> {
    let out = required(&a.out, "out")?;
    let scene = load_scene::<T>(&required(&a.scene, "scene")?)?;
    let prior = load_material::<T>(&required(&a.prior, "prior")?)?;
    let gt = read_trajectory::<T>(&required(&a.gt, "gt")?)?;
    let d = FitConfig::default();
    let cfg = FitConfig {
        iterations: a.iterations.unwrap_or(d.iterations),
        learning_rate: a.lr.unwrap_or(d.learning_rate),
        lr_floor: a.lr_floor.unwrap_or(d.lr_floor),
        supervision: match a.supervision {
            Some(SupervisionArg::Pixels) => SupervisionKind::Pixels,
            _ => SupervisionKind::Particles,
        },
        horizon: a.horizon,
        checkpoint_every: a.checkpoint_every.unwrap_or(d.checkpoint_every),
        seed: g.stream("adapter"),
        rank: a.rank.unwrap_or(d.rank),
        alpha: a.alpha.unwrap_or(d.alpha),
        ablation: match a.ablation {
            Some(AblationArg::NoAdapter) => fit::Ablation::NoAdapter,
            _ => fit::Ablation::None,
        },
        image_size: a.image_size.unwrap_or(d.image_size),
        binding: scene.file.binding,
        tau_bind: scene.file.tau_bind,
    };
    if gt.frames.len() < 2 {
        return Err(Failure::Input("the ground truth needs at least two frames".into()));
    }

    let pixel_loss = match cfg.supervision {
        SupervisionKind::Particles => {
            if gt.particle_count() != scene.particles.len() {
                return Err(Failure::Input(format!(
                    "ground truth has {} particles, the scene {}",
                    gt.particle_count(),
                    scene.particles.len()
                )));
            }
            None
        }
        SupervisionKind::Pixels => {
            let camera = scene.file.camera(cfg.image_size);
            camera.validate()?;
            let reference: Vec<Image<T>> = match &a.frames {
                Some(dir) => read_frames(dir, gt.frames.len())?.iter().map(|i| i.cast()).collect(),
                None => render_images(&scene.kernels, &gt, &camera, scene.file.background)?,
            };
            Some(PixelLoss {
                kernels: scene.kernels.clone(),
                camera,
                background: scene.file.background.map(T::lit),
                horizon: reference.len() - 1,
                reference,
                through_covariance: true,
            })
        }
    };
    let supervision = match &pixel_loss {
        None => Supervision::Particles(&gt),
        Some(loss) => Supervision::Pixels { loss, gt: Some(&gt) },
    };

    let config = &scene.file.config;
    let mut initial = scene.particles.clone();
    if a.fit_velocity == Some(true) {
        let vcfg = VelocityFitConfig {
            iterations: a.velocity_iterations.unwrap_or(100),
            frames_used: a.velocity_frames.unwrap_or(5).min(gt.frames.len() - 1),
            ..Default::default()
        };
        let (v, loss) = fit_initial_velocity(&initial, config, &prior, &supervision, &vcfg)?;
        log::info!("initial velocity {:?} (loss {loss:.4e})", v.to_f64());
        initial.set_velocity(v);
        write_json(&out_dir(&out)?.join("initial_velocity.json"), &v.to_f64())?;
    }

    let result = fit_adapter(&initial, config, &prior, &supervision, &cfg)?;
    let out = out_dir(&out)?;
    write_adapter(&out.join("adapter.nmlora"), &result.adapter)?;
    save_material(&out, "fitted", &result.material)?;
    result.log.write(&out.join("iterations.jsonl"), &out.join("frames.tsv"))?;
    let steps = (gt.frames.len() - 1) * config.substeps;
    let fitted = simulate(&initial, std::slice::from_ref(&result.material), config, steps, config.substeps)?;
    write_trajectory(&out.join("fitted.nmtraj"), &fitted)?;
    if let Some(c) = result.log.mean_chamfer() {
        println!("mean chamfer {c:.6}");
    }
    Ok(())
}

fn out_dir(out: &Path) -> Result<PathBuf, Failure> {
    std::fs::create_dir_all(out).map_err(mpm_adapt::Error::from)?;
    Ok(out.to_path_buf())
}

// sim

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
pub struct SimArgs {
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Material file; defaults to the scene's ground-truth material.
    #[arg(long)]
    pub material: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Initial velocity override, `x,y,z`.
    #[arg(long)]
    pub velocity: Option<String>,
    /// Output trajectory file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn sim<T: Real>(_g: &GlobalArgs, a: &SimArgs) -> Result<(), Failure> {
    let out = required(&a.out, "out")?;
    let scene = load_scene::<T>(&required(&a.scene, "scene")?)?;
    let m_path = match &a.material {
        Some(p) => p.clone(),
        None => scene
            .file
            .material_path(&scene.dir)
            .ok_or_else(|| Failure::Input("no --material and the scene names none".into()))?,
    };
    let material = load_material::<T>(&m_path)?;
    let mut initial = scene.particles.clone();
    if let Some(v) = &a.velocity {
        initial.set_velocity(Vec3::from_f64(parse_vec3(v)?));
    }
    let steps = a.steps.unwrap_or(scene.file.steps);
    let report = transfer(&material, &initial, &scene.file.config, steps)?;
    out_dir(&parent_dir(&out))?;
    write_trajectory(&out, &report.trajectory)?;
    println!("frames {}", report.trajectory.frames.len());
    println!("min det(F) {:.6}", report.min_det);
    println!("max cfl {:.4}", report.max_cfl);
    Ok(())
}

// render

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
pub struct RenderArgs {
    #[arg(long)]
    pub traj: Option<PathBuf>,
    /// Scene whose kernels to render; without it every particle gets a kernel.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Camera JSON file.
    #[arg(long)]
    pub camera: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub image_size: Option<usize>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub sixteen_bit: Option<bool>,
}

impl RenderArgs {
    pub fn resolve_defaults(&mut self) {
        self.image_size.get_or_insert(64);
        self.sixteen_bit.get_or_insert(false);
    }
}

/// One kernel per particle, sized from the bounding-box volume per particle.
fn particle_kernels<T: Real>(traj: &Trajectory<T>) -> Result<BoundKernels<T>, Failure> {
    let first = traj.frames.first().ok_or_else(|| Failure::Input("empty trajectory".into()))?;
    let n = first.positions.len();
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in &first.positions {
        let p = p.to_f64();
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let volume: f64 = (0..3).map(|a| (hi[a] - lo[a]).max(1e-3)).product();
    let spacing = (volume / n.max(1) as f64).cbrt();
    let kernels: GaussianKernelSet<T> = synth_kernels(&first.positions, T::lit(0.6 * spacing), [T::lit(0.5); 3], T::lit(0.9))?;
    Ok(BoundKernels::new(kernels, BindingMatrix::identity(n), first.positions.clone())?)
}

pub fn render<T: Real>(_g: &GlobalArgs, a: &RenderArgs) -> Result<(), Failure> {
    let out = required(&a.out, "out")?;
    let traj = read_trajectory::<T>(&required(&a.traj, "traj")?)?;
    let size = a.image_size.unwrap_or(64);
    let (kernels, mut camera, background) = match &a.scene {
        Some(p) => {
            let s = load_scene::<T>(p)?;
            let camera = s.file.camera(size);
            (s.kernels, camera, s.file.background)
        }
        None => (particle_kernels(&traj)?, Camera::front(size, size), [1.0; 3]),
    };
    if let Some(p) = &a.camera {
        camera = read_json(p)?;
    }
    let n = render_frames(&kernels, &traj, &camera, background, &out, a.sixteen_bit == Some(true))?;
    println!("wrote {n} frames");
    Ok(())
}

// eval

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: Option<PathBuf>,
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Frame directories for PSNR.
    #[arg(long)]
    pub pred_frames: Option<PathBuf>,
    #[arg(long)]
    pub gt_frames: Option<PathBuf>,
    /// Per-frame table output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl EvalArgs {
    pub fn snapshot_dir(&self) -> Result<PathBuf, Failure> {
        match (&self.out, &self.pred) {
            (Some(o), _) => Ok(parent_dir(o)),
            (None, Some(p)) => Ok(parent_dir(p)),
            _ => Err(Failure::Input("missing required option --pred".into())),
        }
    }
}

pub fn eval(_g: &GlobalArgs, a: &EvalArgs) -> Result<(), Failure> {
    let pred = read_trajectory::<f64>(&required(&a.pred, "pred")?)?;
    let gt = read_trajectory::<f64>(&required(&a.gt, "gt")?)?;
    if pred.frames.len() != gt.frames.len() {
        log::warn!("frame counts differ ({} vs {}); comparing the common prefix", pred.frames.len(), gt.frames.len());
    }
    let curve = chamfer_curve(&pred, &gt, REPORT_SCALE)?;
    let psnrs = match (&a.pred_frames, &a.gt_frames) {
        (Some(p), Some(q)) => {
            let (x, y) = (read_frames(p, curve.len())?, read_frames(q, curve.len())?);
            Some(x.iter().zip(&y).map(|(a, b)| psnr(a, b)).collect::<Result<Vec<f64>, _>>()?)
        }
        (None, None) => None,
        _ => return Err(Failure::Input("--pred-frames and --gt-frames go together".into())),
    };
    let mut table = String::from(if psnrs.is_some() { "frame\tchamfer\tpsnr\n" } else { "frame\tchamfer\n" });
    for (i, c) in curve.iter().enumerate() {
        match &psnrs {
            Some(p) => table.push_str(&format!("{i}\t{c:.6}\t{:.4}\n", p[i])),
            None => table.push_str(&format!("{i}\t{c:.6}\n")),
        }
    }
    let mean = curve.iter().sum::<f64>() / curve.len().max(1) as f64;
    table.push_str(&format!("mean\t{mean:.6}"));
    if let Some(p) = &psnrs {
        table.push_str(&format!("\t{:.4}", p.iter().sum::<f64>() / p.len().max(1) as f64));
    }
    table.push('\n');
    print!("{table}");
    if let Some(o) = &a.out {
        std::fs::write(o, &table).map_err(mpm_adapt::Error::from)?;
    }
    Ok(())
}

// interp

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
pub struct InterpArgs {
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Base material.
    #[arg(long)]
    pub prior: Option<PathBuf>,
    /// Adapter file; defaults to the one attached to `--prior`.
    #[arg(long)]
    pub adapter: Option<PathBuf>,
    /// Comma-separated composition weights (default: five points from 0 to α/r).
    #[arg(long)]
    pub weights: Option<String>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn interp<T: Real>(_g: &GlobalArgs, a: &InterpArgs) -> Result<(), Failure> {
    let out = required(&a.out, "out")?;
    let scene = load_scene::<T>(&required(&a.scene, "scene")?)?;
    let prior = load_material::<T>(&required(&a.prior, "prior")?)?;
    let adapter: MaterialAdapter<T> = match &a.adapter {
        Some(p) => read_adapter(p)?,
        None => prior.adapter(),
    };
    let weights = match &a.weights {
        Some(w) => parse_list(w, "weight")?,
        None => {
            let top = adapter.default_weight().map_or(1.0, |w| w.to_f64_lossy());
            (0..5).map(|i| top * i as f64 / 4.0).collect()
        }
    };
    if weights.is_empty() {
        return Err(Failure::Input("no weights given".into()));
    }
    let steps = a.steps.unwrap_or(scene.file.steps);
    let trajs = interpolate_dynamics(&prior, &adapter, &weights, &scene.particles, &scene.file.config, steps)?;
    let out = out_dir(&out)?;
    for (i, t) in trajs.iter().enumerate() {
        write_trajectory(&out.join(format!("w_{i}.nmtraj")), t)?;
    }
    write_json(&out.join("weights.json"), &weights)?;
    println!("wrote {} trajectories", trajs.len());
    Ok(())
}
