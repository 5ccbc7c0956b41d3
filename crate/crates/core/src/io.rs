//! Binary and JSON artifact formats.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::constitutive::lora::LoraLayer;
use crate::constitutive::nn::DenseLayer;
use crate::constitutive::{
    compose_material, ElasticModel, LowRankAdapter, MaterialAdapter, MaterialModel, Mlp, NeuralElastic, NeuralPlastic,
    PlasticModel,
};
use crate::error::{Error, Result};
use crate::linalg::{Mat3, Vec3};
use crate::mpm::{Frame, Trajectory};
use crate::particle_gs::Image;
use crate::scalar::Real;

pub const POINTS_MAGIC: &[u8; 7] = b"NMPTS01";

fn read_magic(r: &mut impl Read, magic: &[u8; 7]) -> Result<()> {
    let mut m = [0u8; 7];
    r.read_exact(&mut m)?;
    if &m != magic {
        return Err(Error::Format(format!(
            "expected magic {:?}, found {:?}",
            String::from_utf8_lossy(magic),
            String::from_utf8_lossy(&m)
        )));
    }
    Ok(())
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f32(r: &mut impl Read) -> Result<f32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(f32::from_le_bytes(b))
}

/// Reads an `NMPTS01` point list.
pub fn read_points(path: &Path) -> Result<Vec<Vec3<f64>>> {
    let mut r = BufReader::new(File::open(path)?);
    read_magic(&mut r, POINTS_MAGIC)?;
    let n = read_u64(&mut r)? as usize;
    (0..n)
        .map(|_| Ok(Vec3([read_f32(&mut r)? as f64, read_f32(&mut r)? as f64, read_f32(&mut r)? as f64])))
        .collect()
}

pub fn write_points(path: &Path, points: &[Vec3<f64>]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(POINTS_MAGIC)?;
    w.write_all(&(points.len() as u64).to_le_bytes())?;
    for p in points {
        for c in p.0 {
            w.write_all(&(c as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn read_f64s<T: Real>(r: &mut impl Read, n: usize) -> Result<Vec<T>> {
    (0..n).map(|_| read_f64(r).map(T::lit)).collect()
}

fn write_f64s<T: Real>(w: &mut impl Write, v: &[T]) -> Result<()> {
    for x in v {
        w.write_all(&x.to_f64_lossy().to_le_bytes())?;
    }
    Ok(())
}

/// Guards allocations driven by header fields against truncated files.
fn check_len(r: &File, need: u64, what: &str) -> Result<()> {
    let have = r.metadata()?.len();
    if need > have {
        return Err(Error::Format(format!("{what}: header promises {need} bytes, file has {have}")));
    }
    Ok(())
}

fn ensure_eof(r: &mut impl Read) -> Result<()> {
    let mut b = [0u8; 1];
    if r.read(&mut b)? != 0 {
        return Err(Error::Format("trailing bytes after payload".into()));
    }
    Ok(())
}

pub const TRAJECTORY_MAGIC: &[u8; 7] = b"NMTRAJ1";

/// Writes an `NMTRAJ1` trajectory (payload in single precision).
pub fn write_trajectory<T: Real>(path: &Path, traj: &Trajectory<T>) -> Result<()> {
    let n = traj.particle_count();
    if traj.frames.iter().any(|f| f.positions.len() != n || f.velocities.len() != n || f.deformation.len() != n) {
        return Err(Error::Argument("trajectory frames have inconsistent particle counts".into()));
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(TRAJECTORY_MAGIC)?;
    w.write_all(&(traj.frames.len() as u64).to_le_bytes())?;
    w.write_all(&(n as u64).to_le_bytes())?;
    w.write_all(&traj.dt.to_le_bytes())?;
    w.write_all(&(traj.save_every as u64).to_le_bytes())?;
    let mut put = |v: T| w.write_all(&(v.to_f64_lossy() as f32).to_le_bytes());
    for f in &traj.frames {
        for p in f.positions.iter().chain(&f.velocities) {
            for c in p.0 {
                put(c)?;
            }
        }
        for m in &f.deformation {
            for c in m.to_array() {
                put(c)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectory<T: Real>(path: &Path) -> Result<Trajectory<T>> {
    let file = File::open(path)?;
    let mut r = BufReader::new(file.try_clone()?);
    read_magic(&mut r, TRAJECTORY_MAGIC)?;
    let frames = read_u64(&mut r)?;
    let n = read_u64(&mut r)?;
    let dt = read_f64(&mut r)?;
    let save_every = read_u64(&mut r)? as usize;
    check_len(&file, 7 + 32 + frames.saturating_mul(n).saturating_mul(15 * 4), "trajectory")?;
    let n = n as usize;
    let mut get = || read_f32(&mut r).map(|v| T::lit(v as f64));
    let mut out = Vec::with_capacity(frames as usize);
    for _ in 0..frames {
        let mut vecs = |count: usize| -> Result<Vec<Vec3<T>>> { (0..count).map(|_| Ok(Vec3([get()?, get()?, get()?]))).collect() };
        let positions = vecs(n)?;
        let velocities = vecs(n)?;
        let deformation = (0..n)
            .map(|_| {
                let a: Vec<T> = (0..9).map(|_| get()).collect::<Result<_>>()?;
                Ok(Mat3::from_array(&a))
            })
            .collect::<Result<_>>()?;
        out.push(Frame { positions, velocities, deformation });
    }
    ensure_eof(&mut r)?;
    Ok(Trajectory { dt, save_every, frames: out })
}

pub const NETWORK_MAGIC: &[u8; 7] = b"NMMAT01";

/// Writes an `NMMAT01` network weight file.
pub fn write_network<T: Real>(path: &Path, net: &Mlp<T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(NETWORK_MAGIC)?;
    w.write_all(&(net.layers.len() as u32).to_le_bytes())?;
    for l in &net.layers {
        w.write_all(&(l.rows as u32).to_le_bytes())?;
        w.write_all(&(l.cols as u32).to_le_bytes())?;
        write_f64s(&mut w, &l.weight)?;
        write_f64s(&mut w, &l.bias)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_network<T: Real>(path: &Path) -> Result<Mlp<T>> {
    let file = File::open(path)?;
    let mut r = BufReader::new(file.try_clone()?);
    read_magic(&mut r, NETWORK_MAGIC)?;
    let count = read_u32(&mut r)?;
    let mut layers = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let rows = read_u32(&mut r)? as usize;
        let cols = read_u32(&mut r)? as usize;
        check_len(&file, (rows as u64) * (cols as u64 + 1) * 8, "network")?;
        let weight = read_f64s(&mut r, rows * cols)?;
        let bias = read_f64s(&mut r, rows)?;
        layers.push(DenseLayer { rows, cols, weight, bias });
    }
    ensure_eof(&mut r)?;
    Mlp::from_layers(layers).map_err(|e| Error::Format(e.to_string()))
}

pub const ADAPTER_MAGIC: &[u8; 7] = b"NMLORA1";

/// Writes an `NMLORA1` adapter file: rank and alpha as `f64`, then one
/// section per network (tag 0 elastic, 1 plastic) with per-layer shapes and
/// the `A` and `B` factors.
pub fn write_adapter<T: Real>(path: &Path, adapter: &MaterialAdapter<T>) -> Result<()> {
    let nets: Vec<(u8, &LowRankAdapter<T>)> =
        [(0u8, adapter.elastic.as_ref()), (1, adapter.plastic.as_ref())].into_iter().filter_map(|(t, a)| a.map(|a| (t, a))).collect();
    let (rank, alpha) = nets.first().map_or((0.0, 0.0), |(_, a)| (a.rank as f64, a.alpha.to_f64_lossy()));
    if nets.iter().any(|(_, a)| a.rank as f64 != rank || a.alpha.to_f64_lossy() != alpha) {
        return Err(Error::Argument("adapter networks must share rank and alpha".into()));
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(ADAPTER_MAGIC)?;
    w.write_all(&rank.to_le_bytes())?;
    w.write_all(&alpha.to_le_bytes())?;
    w.write_all(&(nets.len() as u32).to_le_bytes())?;
    for (tag, a) in nets {
        w.write_all(&[tag])?;
        w.write_all(&(a.layers.len() as u32).to_le_bytes())?;
        for l in &a.layers {
            w.write_all(&(l.rows as u32).to_le_bytes())?;
            w.write_all(&(l.cols as u32).to_le_bytes())?;
            write_f64s(&mut w, &l.a)?;
            write_f64s(&mut w, &l.b)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_adapter<T: Real>(path: &Path) -> Result<MaterialAdapter<T>> {
    let file = File::open(path)?;
    let mut r = BufReader::new(file.try_clone()?);
    read_magic(&mut r, ADAPTER_MAGIC)?;
    let rank = read_f64(&mut r)?;
    let alpha = read_f64(&mut r)?;
    if rank.fract() != 0.0 || rank < 0.0 || rank > 1e6 {
        return Err(Error::Format(format!("invalid adapter rank {rank}")));
    }
    let rank = rank as usize;
    let mut out = MaterialAdapter::default();
    for _ in 0..read_u32(&mut r)? {
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag)?;
        let count = read_u32(&mut r)?;
        let mut layers = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let rows = read_u32(&mut r)? as usize;
            let cols = read_u32(&mut r)? as usize;
            check_len(&file, (rank as u64) * (rows + cols) as u64 * 8, "adapter")?;
            let a = read_f64s(&mut r, rank * cols)?;
            let b = read_f64s(&mut r, rows * rank)?;
            layers.push(LoraLayer { a, b, rows, cols });
        }
        let ad = Some(LowRankAdapter { rank, alpha: T::lit(alpha), layers });
        match tag[0] {
            0 => out.elastic = ad,
            1 => out.plastic = ad,
            t => return Err(Error::Format(format!("unknown adapter network tag {t}"))),
        }
    }
    ensure_eof(&mut r)?;
    Ok(out)
}

/// JSON description of an elastic law; neural weights live in a sibling
/// `NMMAT01` file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ElasticDesc {
    NeoHookean { mu: f64, lambda: f64 },
    Stvk { mu: f64, lambda: f64 },
    FixedCorotated { mu: f64, lambda: f64 },
    Neural { weights: PathBuf, stress_scale: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PlasticDesc {
    Identity,
    VonMises { yield_stress: f64, mu: f64 },
    DruckerPrager { friction_angle: f64, mu: f64, lambda: f64 },
    Neural { weights: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaterialDesc {
    pub elastic: ElasticDesc,
    pub plastic: PlasticDesc,
    /// `NMLORA1` file attached to the neural networks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adapter: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
}

fn sibling(json: &Path, file: &Path) -> PathBuf {
    if file.is_absolute() {
        file.to_path_buf()
    } else {
        json.parent().unwrap_or(Path::new(".")).join(file)
    }
}

/// Writes `<stem>.json` plus weight and adapter files into `dir`.
pub fn save_material<T: Real>(dir: &Path, stem: &str, m: &MaterialModel<T>) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let f = |v: T| v.to_f64_lossy();
    let elastic = match &m.elastic {
        ElasticModel::NeoHookean { mu, lambda } => ElasticDesc::NeoHookean { mu: f(*mu), lambda: f(*lambda) },
        ElasticModel::StVK { mu, lambda } => ElasticDesc::Stvk { mu: f(*mu), lambda: f(*lambda) },
        ElasticModel::FixedCorotated { mu, lambda } => ElasticDesc::FixedCorotated { mu: f(*mu), lambda: f(*lambda) },
        ElasticModel::Neural(n) => {
            let name = PathBuf::from(format!("{stem}_elastic.nmmat"));
            write_network(&dir.join(&name), &n.net)?;
            ElasticDesc::Neural { weights: name, stress_scale: f(n.stress_scale) }
        }
    };
    let plastic = match &m.plastic {
        PlasticModel::Identity => PlasticDesc::Identity,
        PlasticModel::VonMises { yield_stress, mu } => PlasticDesc::VonMises { yield_stress: f(*yield_stress), mu: f(*mu) },
        PlasticModel::DruckerPrager { friction_angle, mu, lambda } => {
            PlasticDesc::DruckerPrager { friction_angle: f(*friction_angle), mu: f(*mu), lambda: f(*lambda) }
        }
        PlasticModel::Neural(n) => {
            let name = PathBuf::from(format!("{stem}_plastic.nmmat"));
            write_network(&dir.join(&name), &n.net)?;
            PlasticDesc::Neural { weights: name }
        }
    };
    let adapter = m.adapter();
    let (adapter, weight) = if adapter.elastic.is_some() || adapter.plastic.is_some() {
        let name = PathBuf::from(format!("{stem}.nmlora"));
        write_adapter(&dir.join(&name), &adapter)?;
        let w = match (&m.elastic, &m.plastic) {
            (ElasticModel::Neural(n), _) => n.weight,
            (_, PlasticModel::Neural(n)) => n.weight,
            _ => T::one(),
        };
        (Some(name), Some(f(w)))
    } else {
        (None, None)
    };
    let path = dir.join(format!("{stem}.json"));
    write_json(&path, &MaterialDesc { elastic, plastic, adapter, weight })?;
    Ok(path)
}

pub fn load_material<T: Real>(path: &Path) -> Result<MaterialModel<T>> {
    let desc: MaterialDesc = read_json(path)?;
    let elastic = match desc.elastic {
        ElasticDesc::NeoHookean { mu, lambda } => ElasticModel::NeoHookean { mu: T::lit(mu), lambda: T::lit(lambda) },
        ElasticDesc::Stvk { mu, lambda } => ElasticModel::StVK { mu: T::lit(mu), lambda: T::lit(lambda) },
        ElasticDesc::FixedCorotated { mu, lambda } => ElasticModel::FixedCorotated { mu: T::lit(mu), lambda: T::lit(lambda) },
        ElasticDesc::Neural { weights, stress_scale } => ElasticModel::Neural(NeuralElastic {
            net: read_network(&sibling(path, &weights))?,
            adapter: None,
            weight: T::one(),
            stress_scale: T::lit(stress_scale),
        }),
    };
    let plastic = match desc.plastic {
        PlasticDesc::Identity => PlasticModel::Identity,
        PlasticDesc::VonMises { yield_stress, mu } => PlasticModel::VonMises { yield_stress: T::lit(yield_stress), mu: T::lit(mu) },
        PlasticDesc::DruckerPrager { friction_angle, mu, lambda } => PlasticModel::DruckerPrager {
            friction_angle: T::lit(friction_angle),
            mu: T::lit(mu),
            lambda: T::lit(lambda),
        },
        PlasticDesc::Neural { weights } => {
            PlasticModel::Neural(NeuralPlastic { net: read_network(&sibling(path, &weights))?, adapter: None, weight: T::one() })
        }
    };
    let base = MaterialModel::new(elastic, plastic);
    let m = match desc.adapter {
        Some(a) => {
            let adapter = read_adapter(&sibling(path, &a))?;
            let w = desc.weight.map(T::lit).or(adapter.default_weight()).unwrap_or(T::one());
            compose_material(&base, &adapter, w)?
        }
        None => base,
    };
    m.validate()?;
    Ok(m)
}

/// Writes a binary PPM (`P6`), 8 or 16 bits per channel; values are clamped
/// to `[0, 1]`.
pub fn write_ppm<T: Real>(path: &Path, img: &Image<T>, sixteen_bit: bool) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let max = if sixteen_bit { 65535u32 } else { 255 };
    write!(w, "P6\n{} {}\n{}\n", img.width, img.height, max)?;
    for p in &img.pixels {
        for c in p {
            let v = (c.to_f64_lossy().clamp(0.0, 1.0) * max as f64).round() as u32;
            if sixteen_bit {
                w.write_all(&(v as u16).to_be_bytes())?;
            } else {
                w.write_all(&[v as u8])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_ppm(path: &Path) -> Result<Image<f64>> {
    let bytes = std::fs::read(path)?;
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated PPM header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P6" {
        return Err(Error::Format("not a binary PPM".into()));
    }
    let num = |s: String| s.parse::<usize>().map_err(|_| Error::Format(format!("bad PPM header field {s:?}")));
    let width = num(token()?)?;
    let height = num(token()?)?;
    let max = num(token()?)?;
    if max == 0 || max > 65535 {
        return Err(Error::Format(format!("unsupported PPM maxval {max}")));
    }
    let data = &bytes[pos + 1..];
    let bpc = if max > 255 { 2 } else { 1 };
    if data.len() != width * height * 3 * bpc {
        return Err(Error::Format(format!("PPM payload is {} bytes, expected {}", data.len(), width * height * 3 * bpc)));
    }
    let sample = |i: usize| -> f64 {
        let v = if bpc == 2 { u16::from_be_bytes([data[2 * i], data[2 * i + 1]]) as f64 } else { data[i] as f64 };
        v / max as f64
    };
    let pixels = (0..width * height).map(|p| std::array::from_fn(|c| sample(3 * p + c))).collect();
    Ok(Image { width, height, pixels, background: [0.0; 3] })
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_json<S: DeserializeOwned>(path: &Path) -> Result<S> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}
