//! Dataset file formats.
//!
//! # Scan container (binary, little-endian)
//!
//! ```text
//! header:  magic   8 bytes  b"VXSCANS\0"
//!          version u32      currently 1
//!          flags   u32      bit0 = per-point labels, bit1 = ground-truth poses
//!          count   u32      number of scans
//!          noise   2 x f32  sigma_range (m), sigma_bearing (rad)
//! scan:    t       f64      seconds
//!          gt_pose 7 x f64  tx ty tz qx qy qz qw        (flags bit1)
//!          n       u32      point count
//!          points  n x 3 x f32
//!          labels  n x u32                              (flags bit0)
//! ```
//!
//! A plain text file with one `x y z` (or `x,y,z`) triple per line is
//! accepted as a single-scan fallback.
//!
//! # IMU file (text)
//!
//! One sample per line: `t gx gy gz ax ay az` (rad/s, m/s^2), `#` comments.
//!
//! # Trajectory file (text)
//!
//! One pose per line: `t tx ty tz qx qy qz qw`; quaternions must be unit
//! norm to 1e-6.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion};
use thiserror::Error;

use crate::filter::ImuSample;
use crate::geom::{quaternion_from_rotation, rotation_from_quaternion, RigidTransform, Vec3};
use crate::noise::LidarNoiseSpec;
use crate::sim::ScanFrame;

pub const SCAN_MAGIC: [u8; 8] = *b"VXSCANS\0";
pub const SCAN_VERSION: u32 = 1;
const FLAG_LABELS: u32 = 1;
const FLAG_GT_POSE: u32 = 2;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic: not a scan container")]
    BadMagic,
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated record at byte offset {offset}")]
    Truncated { offset: u64 },
    #[error("malformed {what} at line {line}")]
    MalformedText { what: &'static str, line: usize },
    #[error("quaternion at line {line} is not unit norm (|q| = {norm})")]
    NonUnitQuaternion { line: usize, norm: f64 },
    #[error("{0}")]
    Other(String),
}

struct CountingReader<R: Read> {
    inner: R,
    offset: u64,
}

impl<R: Read> CountingReader<R> {
    fn new(inner: R) -> Self {
        Self { inner, offset: 0 }
    }

    fn read_exact_at(&mut self, buf: &mut [u8]) -> Result<(), DataError> {
        match self.inner.read_exact(buf) {
            Ok(()) => {
                self.offset += buf.len() as u64;
                Ok(())
            }
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => {
                Err(DataError::Truncated { offset: self.offset })
            }
            Err(e) => Err(e.into()),
        }
    }

    fn u32(&mut self) -> Result<u32, DataError> {
        let mut b = [0u8; 4];
        self.read_exact_at(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    fn f32(&mut self) -> Result<f32, DataError> {
        let mut b = [0u8; 4];
        self.read_exact_at(&mut b)?;
        Ok(f32::from_le_bytes(b))
    }

    fn f64(&mut self) -> Result<f64, DataError> {
        let mut b = [0u8; 8];
        self.read_exact_at(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }

    /// Probe for EOF; returns true when no more bytes are available.
    fn at_eof(&mut self) -> Result<bool, DataError> {
        let mut b = [0u8; 1];
        match self.inner.read(&mut b)? {
            0 => Ok(true),
            _ => Err(DataError::Other(format!(
                "trailing bytes after the last scan at offset {}",
                self.offset
            ))),
        }
    }
}

/// Streaming reader over a binary scan container; one frame is held in
/// memory at a time.
pub struct ScanReader<R: Read> {
    reader: CountingReader<R>,
    noise: LidarNoiseSpec,
    flags: u32,
    remaining: u32,
}

impl ScanReader<BufReader<File>> {
    pub fn open(path: &Path) -> Result<Self, DataError> {
        Self::new(BufReader::new(File::open(path)?))
    }
}

impl<R: Read> ScanReader<R> {
    pub fn new(inner: R) -> Result<Self, DataError> {
        let mut reader = CountingReader::new(inner);
        let mut magic = [0u8; 8];
        reader.read_exact_at(&mut magic)?;
        if magic != SCAN_MAGIC {
            return Err(DataError::BadMagic);
        }
        let version = reader.u32()?;
        if version != SCAN_VERSION {
            return Err(DataError::UnsupportedVersion(version));
        }
        let flags = reader.u32()?;
        let remaining = reader.u32()?;
        let noise = LidarNoiseSpec::new(reader.f32()? as f64, reader.f32()? as f64);
        Ok(Self { reader, noise, flags, remaining })
    }

    pub fn noise(&self) -> LidarNoiseSpec {
        self.noise
    }

    pub fn scan_count(&self) -> u32 {
        self.remaining
    }

    fn read_frame(&mut self) -> Result<ScanFrame, DataError> {
        let t = self.reader.f64()?;
        let gt_pose = if self.flags & FLAG_GT_POSE != 0 {
            let trans = Vec3::new(self.reader.f64()?, self.reader.f64()?, self.reader.f64()?);
            let (qx, qy, qz, qw) =
                (self.reader.f64()?, self.reader.f64()?, self.reader.f64()?, self.reader.f64()?);
            let quat = UnitQuaternion::new_normalize(Quaternion::new(qw, qx, qy, qz));
            Some(RigidTransform::new(rotation_from_quaternion(&quat), trans))
        } else {
            None
        };
        let n = self.reader.u32()? as usize;
        let mut points = Vec::with_capacity(n);
        for _ in 0..n {
            let x = self.reader.f32()? as f64;
            let y = self.reader.f32()? as f64;
            let z = self.reader.f32()? as f64;
            points.push(Vec3::new(x, y, z));
        }
        let labels = if self.flags & FLAG_LABELS != 0 {
            let mut labels = Vec::with_capacity(n);
            for _ in 0..n {
                labels.push(self.reader.u32()?);
            }
            labels
        } else {
            Vec::new()
        };
        Ok(ScanFrame { t, points, labels, noise: self.noise, gt_pose })
    }
}

impl<R: Read> Iterator for ScanReader<R> {
    type Item = Result<ScanFrame, DataError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.remaining == 0 {
            if let Err(e) = self.reader.at_eof() {
                return Some(Err(e));
            }
            return None;
        }
        self.remaining -= 1;
        Some(self.read_frame())
    }
}

pub fn write_scans(path: &Path, frames: &[ScanFrame]) -> Result<(), DataError> {
    let mut w = BufWriter::new(File::create(path)?);
    let has_labels = frames.iter().all(|f| f.labels.len() == f.points.len());
    let has_gt = frames.iter().all(|f| f.gt_pose.is_some());
    let noise = frames.first().map(|f| f.noise).unwrap_or(LidarNoiseSpec::noiseless());
    let mut flags = 0u32;
    if has_labels {
        flags |= FLAG_LABELS;
    }
    if has_gt {
        flags |= FLAG_GT_POSE;
    }
    w.write_all(&SCAN_MAGIC)?;
    w.write_all(&SCAN_VERSION.to_le_bytes())?;
    w.write_all(&flags.to_le_bytes())?;
    w.write_all(&(frames.len() as u32).to_le_bytes())?;
    w.write_all(&(noise.sigma_range as f32).to_le_bytes())?;
    w.write_all(&(noise.sigma_bearing as f32).to_le_bytes())?;
    for f in frames {
        w.write_all(&f.t.to_le_bytes())?;
        if has_gt {
            let pose = f.gt_pose.as_ref().unwrap();
            let q = quaternion_from_rotation(&pose.rot);
            for v in [pose.trans.x, pose.trans.y, pose.trans.z, q.i, q.j, q.k, q.w] {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.write_all(&(f.points.len() as u32).to_le_bytes())?;
        for p in &f.points {
            for v in [p.x as f32, p.y as f32, p.z as f32] {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        if has_labels {
            for l in &f.labels {
                w.write_all(&l.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Open a scan dataset: the binary container when the magic matches, else
/// a plain `x y z`-per-line text file parsed as one untimed frame with the
/// supplied noise spec.
pub fn load_scans(
    path: &Path,
    text_noise: LidarNoiseSpec,
) -> Result<Box<dyn Iterator<Item = Result<ScanFrame, DataError>> + Send>, DataError> {
    let mut probe = [0u8; 8];
    let n = File::open(path)?.read(&mut probe)?;
    if n == 8 && probe == SCAN_MAGIC {
        let reader = ScanReader::open(path)?;
        Ok(Box::new(reader))
    } else {
        let frame = read_xyz_text(path, text_noise)?;
        Ok(Box::new(std::iter::once(Ok(frame))))
    }
}

fn read_xyz_text(path: &Path, noise: LidarNoiseSpec) -> Result<ScanFrame, DataError> {
    let reader = BufReader::new(File::open(path)?);
    let mut points = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> =
            trimmed.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty()).collect();
        if fields.len() != 3 {
            return Err(DataError::MalformedText { what: "x y z point", line: idx + 1 });
        }
        let mut v = [0.0; 3];
        for (slot, f) in v.iter_mut().zip(&fields) {
            *slot = f
                .parse::<f64>()
                .map_err(|_| DataError::MalformedText { what: "coordinate", line: idx + 1 })?;
        }
        points.push(Vec3::new(v[0], v[1], v[2]));
    }
    Ok(ScanFrame { t: 0.0, points, labels: Vec::new(), noise, gt_pose: None })
}

pub fn write_imu(path: &Path, samples: &[ImuSample]) -> Result<(), DataError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# t gx gy gz ax ay az")?;
    for s in samples {
        writeln!(
            w,
            "{} {} {} {} {} {} {}",
            s.t, s.gyro.x, s.gyro.y, s.gyro.z, s.acc.x, s.acc.y, s.acc.z
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_imu(path: &Path) -> Result<Vec<ImuSample>, DataError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 7 {
            return Err(DataError::MalformedText { what: "imu sample", line: idx + 1 });
        }
        let mut v = [0.0; 7];
        for (slot, f) in v.iter_mut().zip(&fields) {
            *slot = f
                .parse::<f64>()
                .map_err(|_| DataError::MalformedText { what: "imu value", line: idx + 1 })?;
        }
        out.push(ImuSample {
            t: v[0],
            gyro: Vec3::new(v[1], v[2], v[3]),
            acc: Vec3::new(v[4], v[5], v[6]),
        });
    }
    Ok(out)
}

/// Timestamped pose list in `t tx ty tz qx qy qz qw` rows.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectoryFile {
    pub rows: Vec<TrajRow>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajRow {
    pub t: f64,
    pub trans: Vec3,
    pub quat: UnitQuaternion<f64>,
}

impl TrajectoryFile {
    pub fn from_poses(poses: &[(f64, RigidTransform)]) -> Self {
        Self {
            rows: poses
                .iter()
                .map(|(t, p)| TrajRow {
                    t: *t,
                    trans: p.trans,
                    quat: quaternion_from_rotation(&p.rot),
                })
                .collect(),
        }
    }

    pub fn push_pose(&mut self, t: f64, pose: &RigidTransform) {
        self.rows.push(TrajRow { t, trans: pose.trans, quat: quaternion_from_rotation(&pose.rot) });
    }

    pub fn write(&self, path: &Path) -> Result<(), DataError> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "# t tx ty tz qx qy qz qw")?;
        for r in &self.rows {
            writeln!(
                w,
                "{} {} {} {} {} {} {} {}",
                r.t, r.trans.x, r.trans.y, r.trans.z, r.quat.i, r.quat.j, r.quat.k, r.quat.w
            )?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, DataError> {
        let reader = BufReader::new(File::open(path)?);
        let mut rows = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = trimmed.split_whitespace().collect();
            if fields.len() != 8 {
                return Err(DataError::MalformedText { what: "trajectory row", line: idx + 1 });
            }
            let mut v = [0.0; 8];
            for (slot, f) in v.iter_mut().zip(&fields) {
                *slot = f
                    .parse::<f64>()
                    .map_err(|_| DataError::MalformedText { what: "pose value", line: idx + 1 })?;
            }
            let q = Quaternion::new(v[7], v[4], v[5], v[6]);
            let norm = q.norm();
            if (norm - 1.0).abs() > 1e-6 {
                return Err(DataError::NonUnitQuaternion { line: idx + 1, norm });
            }
            rows.push(TrajRow {
                t: v[0],
                trans: Vec3::new(v[1], v[2], v[3]),
                quat: UnitQuaternion::new_normalize(q),
            });
        }
        Ok(Self { rows })
    }

    pub fn pose(&self, idx: usize) -> RigidTransform {
        let r = &self.rows[idx];
        RigidTransform::new(rotation_from_quaternion(&r.quat), r.trans)
    }
}
