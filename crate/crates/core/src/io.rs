//! File formats: the EMOK1 tensor container, Middlebury `.flo`, and 8-bit
//! PGM/PPM previews.

use std::io::Write;

use ndarray::{Array2, Array4, ArrayD, IxDyn};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::motion::{FlowField, MiDField};
use crate::nurbs::{KnotVector, Trajectory};

pub const CONTAINER_MAGIC: &str = "EMOK1";
pub const FLO_MAGIC: &[u8; 4] = b"PIEH";
/// Value marking unknown flow in `.flo` files.
pub const FLO_UNKNOWN: f32 = 1e10;
const FLO_UNKNOWN_THRESHOLD: f32 = 1e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

/// An n-dimensional tensor with a JSON metadata object. The payload is
/// little-endian float32 unless the metadata sets `"dtype": "f64"`.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub data: ArrayD<f64>,
    pub meta: Value,
}

impl Container {
    pub fn new(data: ArrayD<f64>, meta: Value) -> Self {
        Self { data, meta }
    }

    pub fn dtype(&self) -> DType {
        match self.meta.get("dtype").and_then(Value::as_str) {
            Some("f64") => DType::F64,
            _ => DType::F32,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = serde_json::to_string(&self.meta).expect("json value serializes");
        let dims: Vec<String> = self.data.shape().iter().map(|d| d.to_string()).collect();
        let mut out = format!(
            "{CONTAINER_MAGIC} {} {} {}\n",
            self.data.ndim(),
            dims.join(" "),
            meta.len()
        )
        .replace("  ", " ")
        .into_bytes();
        out.extend_from_slice(meta.as_bytes());
        match self.dtype() {
            DType::F32 => self.data.iter().for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
            DType::F64 => self.data.iter().for_each(|&v| out.extend_from_slice(&v.to_le_bytes())),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Format("container header has no newline".into()))?;
        let header = std::str::from_utf8(&bytes[..nl])
            .map_err(|_| Error::Format("container header is not UTF-8".into()))?;
        let mut fields = header.split_ascii_whitespace();
        if fields.next() != Some(CONTAINER_MAGIC) {
            return Err(Error::Format("missing EMOK1 magic".into()));
        }
        let mut next_num = |what: &str| -> Result<usize> {
            fields
                .next()
                .and_then(|f| f.parse().ok())
                .ok_or_else(|| Error::Format(format!("bad container header field: {what}")))
        };
        let ndim = next_num("ndim")?;
        let dims = (0..ndim).map(|_| next_num("dim")).collect::<Result<Vec<_>>>()?;
        let meta_len = next_num("meta length")?;
        let meta_start = nl + 1;
        let payload = meta_start + meta_len;
        if bytes.len() < payload {
            return Err(Error::Format("truncated container metadata".into()));
        }
        let meta: Value = serde_json::from_slice(&bytes[meta_start..payload])
            .map_err(|e| Error::Format(format!("container metadata: {e}")))?;
        let count: usize = dims.iter().product();
        let probe = Container::new(ArrayD::zeros(IxDyn(&[0])), meta.clone());
        let width = match probe.dtype() {
            DType::F32 => 4,
            DType::F64 => 8,
        };
        let body = &bytes[payload..];
        if body.len() != count * width {
            return Err(Error::Format(format!(
                "payload has {} bytes, expected {}",
                body.len(),
                count * width
            )));
        }
        let values: Vec<f64> = match probe.dtype() {
            DType::F32 => body
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")) as f64)
                .collect(),
            DType::F64 => body
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect(),
        };
        let data = ArrayD::from_shape_vec(IxDyn(&dims), values).map_err(|e| Error::Format(e.to_string()))?;
        Ok(Self { data, meta })
    }
}

/// Motion-in-depth map; invalid pixels are stored as NaN.
pub fn mid_to_container(mid: &MiDField) -> Container {
    let data = ndarray::Zip::from(&mid.m)
        .and(&mid.valid)
        .map_collect(|&m, &ok| if ok { m } else { f64::NAN });
    Container::new(data.into_dyn(), json!({ "kind": "mid" }))
}

pub fn mid_from_container(c: &Container) -> Result<MiDField> {
    let m = c
        .data
        .clone()
        .into_dimensionality::<ndarray::Ix2>()
        .map_err(|_| Error::Format(format!("motion-in-depth must be 2D, got {:?}", c.data.shape())))?;
    let valid = m.mapv(|v| v.is_finite());
    Ok(MiDField {
        m: m.mapv(|v| if v.is_finite() { v } else { 1.0 }),
        valid,
    })
}

/// Full-precision trajectory container, control points `(n, H, W, 2)`.
pub fn trajectory_to_container(traj: &Trajectory) -> Container {
    let (h, w) = traj.grid();
    Container::new(
        traj.control().clone().into_dyn(),
        json!({
            "kind": "trajectory",
            "dtype": "f64",
            "n": traj.control_count(),
            "p": traj.degree(),
            "height": h,
            "width": w,
            "knots": traj.knots().knots(),
            "weights": traj.weights(),
        }),
    )
}

pub fn trajectory_from_container(c: &Container) -> Result<Trajectory> {
    #[derive(Deserialize)]
    struct Meta {
        p: usize,
        knots: Vec<f64>,
        weights: Vec<f64>,
    }
    let meta: Meta = serde_json::from_value(c.meta.clone())
        .map_err(|e| Error::Format(format!("trajectory metadata: {e}")))?;
    let knots = KnotVector::from_knots(meta.knots, meta.p)?;
    let control: Array4<f64> = c
        .data
        .clone()
        .into_dimensionality()
        .map_err(|_| Error::Format("trajectory controls must be 4D".into()))?;
    Trajectory::new(control, meta.weights, knots)
}

pub fn write_flo(flow: &FlowField) -> Vec<u8> {
    let (h, w) = flow.dim();
    let mut out = Vec::with_capacity(12 + h * w * 8);
    out.extend_from_slice(FLO_MAGIC);
    out.extend_from_slice(&(w as i32).to_le_bytes());
    out.extend_from_slice(&(h as i32).to_le_bytes());
    for y in 0..h {
        for x in 0..w {
            let (u, v) = if flow.valid[[y, x]] {
                (flow.u[[y, x]] as f32, flow.v[[y, x]] as f32)
            } else {
                (FLO_UNKNOWN, FLO_UNKNOWN)
            };
            out.extend_from_slice(&u.to_le_bytes());
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn read_flo(bytes: &[u8]) -> Result<FlowField> {
    if bytes.len() < 12 || &bytes[..4] != FLO_MAGIC {
        return Err(Error::Format("missing PIEH magic".into()));
    }
    let w = i32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    let h = i32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if w < 0 || h < 0 {
        return Err(Error::Format(format!("negative flow size {w}x{h}")));
    }
    let (w, h) = (w as usize, h as usize);
    if bytes.len() != 12 + w * h * 8 {
        return Err(Error::Format("flow payload size does not match header".into()));
    }
    let mut flow = FlowField::zeros(h, w);
    for (i, c) in bytes[12..].chunks_exact(8).enumerate() {
        let u = f32::from_le_bytes(c[..4].try_into().expect("4 bytes"));
        let v = f32::from_le_bytes(c[4..].try_into().expect("4 bytes"));
        let (y, x) = (i / w, i % w);
        if u.abs() >= FLO_UNKNOWN_THRESHOLD || v.abs() >= FLO_UNKNOWN_THRESHOLD || !u.is_finite() || !v.is_finite() {
            flow.valid[[y, x]] = false;
        } else {
            flow.u[[y, x]] = u as f64;
            flow.v[[y, x]] = v as f64;
        }
    }
    Ok(flow)
}

/// Normalization recorded next to a PGM preview.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PgmScale {
    pub min: f64,
    pub max: f64,
}

/// 8-bit P5 image, min-max normalized over the finite values.
pub fn write_pgm(image: &Array2<f64>) -> (Vec<u8>, PgmScale) {
    let (h, w) = image.dim();
    let finite = image.iter().copied().filter(|v| v.is_finite());
    let min = finite.clone().fold(f64::INFINITY, f64::min);
    let max = finite.fold(f64::NEG_INFINITY, f64::max);
    let (min, max) = if min.is_finite() { (min, max) } else { (0.0, 0.0) };
    let range = max - min;
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(image.iter().map(|&v| {
        if !v.is_finite() || range <= 0.0 {
            0u8
        } else {
            (255.0 * (v - min) / range).round() as u8
        }
    }));
    (out, PgmScale { min, max })
}

fn color_wheel() -> Vec<[f64; 3]> {
    const SEGMENTS: [usize; 6] = [15, 6, 4, 11, 13, 6];
    let mut wheel = Vec::with_capacity(55);
    for (seg, &len) in SEGMENTS.iter().enumerate() {
        for i in 0..len {
            let f = 255.0 * i as f64 / len as f64;
            wheel.push(match seg {
                0 => [255.0, f, 0.0],
                1 => [255.0 - f, 255.0, 0.0],
                2 => [0.0, 255.0, f],
                3 => [0.0, 255.0 - f, 255.0],
                4 => [f, 0.0, 255.0],
                _ => [255.0, 0.0, 255.0 - f],
            });
        }
    }
    wheel
}

/// 98th percentile of valid flow magnitudes.
pub fn default_max_flow(flow: &FlowField) -> f64 {
    let mut mags: Vec<f64> = ndarray::Zip::from(&flow.u)
        .and(&flow.v)
        .and(&flow.valid)
        .fold(Vec::new(), |mut acc, &u, &v, &ok| {
            if ok {
                acc.push(u.hypot(v));
            }
            acc
        });
    if mags.is_empty() {
        return 0.0;
    }
    mags.sort_by(f64::total_cmp);
    let idx = ((mags.len() - 1) as f64 * 0.98).round() as usize;
    mags[idx]
}

/// Binary PPM rendering with the Middlebury color wheel; magnitudes at or
/// above `max_flow` are fully saturated. Invalid pixels are black.
pub fn write_flow_ppm(flow: &FlowField, max_flow: f64) -> Vec<u8> {
    let (h, w) = flow.dim();
    let wheel = color_wheel();
    let ncols = wheel.len() as f64;
    let norm = if max_flow > 0.0 { max_flow } else { 1.0 };
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    for y in 0..h {
        for x in 0..w {
            if !flow.valid[[y, x]] {
                out.extend_from_slice(&[0, 0, 0]);
                continue;
            }
            let (u, v) = (flow.u[[y, x]] / norm, flow.v[[y, x]] / norm);
            let rad = u.hypot(v);
            let a = (-v).atan2(-u) / std::f64::consts::PI;
            let fk = (a + 1.0) / 2.0 * (ncols - 1.0);
            let k0 = fk.floor() as usize % wheel.len();
            let k1 = (k0 + 1) % wheel.len();
            let f = fk - fk.floor();
            for c in 0..3 {
                let col = ((1.0 - f) * wheel[k0][c] + f * wheel[k1][c]) / 255.0;
                let col = if rad <= 1.0 { 1.0 - rad * (1.0 - col) } else { col * 0.75 };
                out.push((255.0 * col).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    out
}

/// Writes `bytes` to `path`, mapping failures to an IO error naming the path.
pub fn write_file(path: &std::path::Path, bytes: &[u8]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    f.write_all(bytes).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

pub fn read_file(path: &std::path::Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    #[test]
    fn container_header_and_round_trip() {
        let data = Array3::from_shape_fn((2, 3, 4), |(a, b, c)| (a * 12 + b * 4 + c) as f64).into_dyn();
        let c = Container::new(data.clone(), json!({ "kind": "test" }));
        let bytes = c.to_bytes();
        let header_end = bytes.iter().position(|&b| b == b'\n').unwrap();
        assert_eq!(&bytes[..header_end], b"EMOK1 3 2 3 4 15");
        let back = Container::from_bytes(&bytes).unwrap();
        assert_eq!(back.data, data);
        assert_eq!(back.meta["kind"], "test");
        assert!(Container::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(Container::from_bytes(b"nope\n").is_err());
    }

    #[test]
    fn f64_container_is_lossless() {
        let data = ndarray::arr1(&[0.1, 1.0 / 3.0]).into_dyn();
        let c = Container::new(data.clone(), json!({ "dtype": "f64" }));
        assert_eq!(Container::from_bytes(&c.to_bytes()).unwrap().data, data);
    }

    #[test]
    fn mid_nan_marks_invalid() {
        let mut mid = MiDField::constant(2, 2, 0.8);
        mid.valid[[1, 0]] = false;
        let back = mid_from_container(&Container::from_bytes(&mid_to_container(&mid).to_bytes()).unwrap()).unwrap();
        assert_eq!(back.valid, mid.valid);
        assert_eq!(back.m[[0, 0]], 0.8f32 as f64);
    }

    #[test]
    fn flo_layout() {
        let mut flow = FlowField::zeros(2, 3);
        flow.u[[0, 1]] = 1.5;
        flow.v[[1, 2]] = -2.0;
        flow.valid[[1, 0]] = false;
        let bytes = write_flo(&flow);
        assert_eq!(&bytes[..4], b"PIEH");
        assert_eq!(i32::from_le_bytes(bytes[4..8].try_into().unwrap()), 3);
        assert_eq!(i32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        assert_eq!(f32::from_le_bytes(bytes[20..24].try_into().unwrap()), 1.5);
        assert_eq!(bytes.len(), 12 + 6 * 8);
        let back = read_flo(&bytes).unwrap();
        assert_eq!(back.valid, flow.valid);
        assert_eq!(back.u[[0, 1]], 1.5);
        assert_eq!(back.v[[1, 2]], -2.0);
    }

    #[test]
    fn pgm_min_max() {
        let img = ndarray::arr2(&[[1.0, 2.0], [3.0, 5.0]]);
        let (bytes, scale) = write_pgm(&img);
        assert_eq!(scale, PgmScale { min: 1.0, max: 5.0 });
        assert!(bytes.starts_with(b"P5\n2 2\n255\n"));
        assert_eq!(&bytes[bytes.len() - 4..], &[0, 64, 128, 255]);
    }

    #[test]
    fn wheel_colors() {
        assert_eq!(color_wheel().len(), 55);
        let mut flow = FlowField::zeros(1, 2);
        flow.u[[0, 1]] = 1.0;
        let ppm = write_flow_ppm(&flow, 1.0);
        let px = &ppm[ppm.len() - 6..];
        assert_eq!(&px[..3], &[255, 255, 255]);
        // Rightward unit flow sits at the red end of the wheel.
        assert_eq!(&px[3..], &[255, 0, 0]);
    }
}
