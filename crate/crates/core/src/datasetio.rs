//! On-disk formats: binary PPM/PGM images, Middlebury `.flo` flow, JSONL
//! manifests, network checkpoints and training logs. Every writer goes through
//! a temp-file-and-rename so readers never observe partial files.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::Tensor;
use crate::raster::{FlowField, Image};
use crate::segnet::{Checkpoint, Discriminator, DiscriminatorSpec, Generator, GeneratorSpec, LayerSpec, TrainLogEntry};

/// Writes `bytes` to `path` atomically (sibling temp file, then rename).
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::io(path, std::io::ErrorKind::InvalidInput.into()))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------- images

fn quantize(v: f32) -> Result<u8> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Domain(format!("pixel value {v} outside [0, 1]")));
    }
    Ok((v * 255.0).round() as u8)
}

/// Encodes a 3-channel image as P6 or a 1-channel image as P5 (maxval 255).
pub fn encode_image(img: &Image<f32>) -> Result<Vec<u8>> {
    let magic = match img.channels() {
        3 => "P6",
        1 => "P5",
        c => return Err(Error::Shape(format!("cannot store a {c}-channel image"))),
    };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.reserve(img.data().len());
    for &v in img.data() {
        out.push(quantize(v)?);
    }
    Ok(out)
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::parse(start, format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| Error::parse(start, format!("{what} out of range")))
    }
}

/// Decodes a P6 or P5 file with maxval 255 into values `v / 255`.
pub fn decode_image(bytes: &[u8]) -> Result<Image<f32>> {
    let channels = match bytes.get(..2) {
        Some(b"P6") => 3,
        Some(b"P5") => 1,
        _ => return Err(Error::parse(0, "expected magic P6 or P5")),
    };
    let mut cur = HeaderCursor { bytes, pos: 2 };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval_at = cur.pos;
    let maxval = cur.number("maxval")?;
    if maxval != 255 {
        return Err(Error::parse(maxval_at, format!("unsupported maxval {maxval}")));
    }
    if width == 0 || height == 0 {
        return Err(Error::parse(2, "zero image dimension"));
    }
    if !bytes.get(cur.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::parse(cur.pos, "expected whitespace after maxval"));
    }
    let start = cur.pos + 1;
    let len = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| Error::parse(2, "image dimensions overflow"))?;
    let payload = &bytes[start.min(bytes.len())..];
    if payload.len() < len {
        return Err(Error::parse(
            bytes.len(),
            format!("truncated payload: need {len} bytes, have {}", payload.len()),
        ));
    }
    if payload.len() > len {
        return Err(Error::parse(start + len, "trailing bytes after payload"));
    }
    let data = payload.iter().map(|&b| f32::from(b) / 255.0).collect();
    Image::from_vec(width, height, channels, data)
}

pub fn write_image(path: &Path, img: &Image<f32>) -> Result<()> {
    write_atomic(path, &encode_image(img)?)
}

pub fn read_image(path: &Path) -> Result<Image<f32>> {
    decode_image(&read_file(path)?).map_err(|e| with_path(path, e))
}

fn with_path(path: &Path, e: Error) -> Error {
    match e {
        Error::Parse { offset, reason } => Error::Parse {
            offset,
            reason: format!("{}: {reason}", path.display()),
        },
        other => other,
    }
}

// ---------------------------------------------------------------- flow

pub const FLO_MAGIC: f32 = 202_021.25;
/// Values above this magnitude mark unknown flow.
pub const FLO_UNKNOWN_THRESHOLD: f32 = 1e9;
const FLO_UNKNOWN: f32 = 1e10;

/// Middlebury `.flo`: magic, `i32` width, `i32` height, interleaved `(u, v)`
/// `f32`s, all little-endian. Invalid pixels are stored as unknown (1e10).
pub fn encode_flo(flow: &FlowField<f32>) -> Result<Vec<u8>> {
    let (w, h) = flow.dims();
    let mut out = Vec::with_capacity(12 + 8 * w * h);
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    for d in [w, h] {
        let d = i32::try_from(d).map_err(|_| Error::Shape(format!("flow dimension {d} too large")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for i in 0..w * h {
        let (u, v) = if flow.valid()[i] {
            (flow.u()[i], flow.v()[i])
        } else {
            (FLO_UNKNOWN, FLO_UNKNOWN)
        };
        if !(u.is_finite() && v.is_finite()) {
            return Err(Error::Domain(format!("non-finite flow at pixel {i}")));
        }
        out.extend_from_slice(&u.to_le_bytes());
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_flo(bytes: &[u8]) -> Result<FlowField<f32>> {
    let word = |at: usize| -> Result<[u8; 4]> {
        bytes
            .get(at..at + 4)
            .map(|s| s.try_into().expect("4 bytes"))
            .ok_or_else(|| Error::parse(bytes.len(), "truncated .flo header"))
    };
    if f32::from_le_bytes(word(0)?) != FLO_MAGIC {
        return Err(Error::parse(0, "bad .flo magic"));
    }
    let dim = |at: usize| -> Result<usize> {
        let d = i32::from_le_bytes(word(at)?);
        usize::try_from(d)
            .ok()
            .filter(|&d| d > 0)
            .ok_or_else(|| Error::parse(at, format!("invalid dimension {d}")))
    };
    let (w, h) = (dim(4)?, dim(8)?);
    let expected = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(12))
        .ok_or_else(|| Error::parse(4, "dimensions overflow"))?;
    if bytes.len() != expected {
        return Err(Error::parse(
            bytes.len().min(expected),
            format!(
                "size mismatch: {w}x{h} needs {expected} bytes, file has {}",
                bytes.len()
            ),
        ));
    }
    let n = w * h;
    let (mut u, mut v, mut valid) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for px in bytes[12..].chunks_exact(8) {
        let a = f32::from_le_bytes(px[..4].try_into().expect("4 bytes"));
        let b = f32::from_le_bytes(px[4..].try_into().expect("4 bytes"));
        let ok = a.abs() <= FLO_UNKNOWN_THRESHOLD && b.abs() <= FLO_UNKNOWN_THRESHOLD;
        u.push(if ok { a } else { 0.0 });
        v.push(if ok { b } else { 0.0 });
        valid.push(ok);
    }
    FlowField::from_parts(w, h, u, v, valid)
}

pub fn write_flo(path: &Path, flow: &FlowField<f32>) -> Result<()> {
    write_atomic(path, &encode_flo(flow)?)
}

pub fn read_flo(path: &Path) -> Result<FlowField<f32>> {
    decode_flo(&read_file(path)?).map_err(|e| with_path(path, e))
}

// ---------------------------------------------------------------- manifest

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::config("split", format!("unknown split `{other}`"))),
        }
    }
}

/// Files belonging to one frame of a pair. Flows point from this frame to the other.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewFiles {
    pub rgb: PathBuf,
    pub mask: PathBuf,
    /// Estimated flow.
    pub flow: PathBuf,
    pub flow_color: PathBuf,
    /// Exact rendered flow.
    pub gt_flow: PathBuf,
    pub gt_flow_color: PathBuf,
}

impl ViewFiles {
    pub fn paths(&self) -> [&Path; 6] {
        [
            &self.rgb,
            &self.mask,
            &self.flow,
            &self.flow_color,
            &self.gt_flow,
            &self.gt_flow_color,
        ]
    }
}

/// One rendered frame pair; paths are relative to the dataset root.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub id: String,
    pub split: Split,
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    /// Number of tree rows in the scene.
    pub rows: usize,
    pub scene_digest: String,
    pub config_digest: String,
    pub a: ViewFiles,
    pub b: ViewFiles,
}

impl SampleRecord {
    fn check_paths(&self) -> std::result::Result<(), String> {
        for p in self.a.paths().into_iter().chain(self.b.paths()) {
            if p.as_os_str().is_empty() || p.components().any(|c| !matches!(c, Component::Normal(_))) {
                return Err(format!(
                    "path `{}` must be relative and stay inside the dataset root",
                    p.display()
                ));
            }
        }
        Ok(())
    }
}

/// One JSON object per line.
pub fn encode_manifest(records: &[SampleRecord]) -> Result<String> {
    let mut seen = HashSet::new();
    let mut out = String::new();
    for (i, r) in records.iter().enumerate() {
        if !seen.insert(r.id.as_str()) {
            return Err(Error::Manifest {
                line: i + 1,
                reason: format!("duplicate sample id `{}`", r.id),
            });
        }
        r.check_paths()
            .map_err(|reason| Error::Manifest { line: i + 1, reason })?;
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    Ok(out)
}

pub fn decode_manifest(text: &str) -> Result<Vec<SampleRecord>> {
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let r: SampleRecord = serde_json::from_str(line).map_err(|e| Error::Manifest {
            line: line_no,
            reason: e.to_string(),
        })?;
        r.check_paths()
            .map_err(|reason| Error::Manifest { line: line_no, reason })?;
        if !seen.insert(r.id.clone()) {
            return Err(Error::Manifest {
                line: line_no,
                reason: format!("duplicate sample id `{}`", r.id),
            });
        }
        records.push(r);
    }
    Ok(records)
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";

pub fn write_manifest(path: &Path, records: &[SampleRecord]) -> Result<()> {
    write_atomic(path, encode_manifest(records)?.as_bytes())
}

pub fn read_manifest(path: &Path) -> Result<Vec<SampleRecord>> {
    let bytes = read_file(path)?;
    let text = String::from_utf8(bytes).map_err(|e| Error::Manifest {
        line: 0,
        reason: format!("{}: not UTF-8: {e}", path.display()),
    })?;
    decode_manifest(&text)
}

// ---------------------------------------------------------------- checkpoints

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ORSEGCK\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointHeader {
    generator: GeneratorSpec,
    discriminator: DiscriminatorSpec,
    images_seen: u64,
    /// Bit pattern of the best validation loss, so it round-trips exactly.
    best_val_loss_bits: Option<u32>,
    generator_floats: usize,
    discriminator_floats: usize,
}

fn float_count(params: &[Tensor]) -> usize {
    params.iter().map(Tensor::len).sum()
}

/// Magic, `u32` version, `u32` header length, JSON header, then the generator
/// and discriminator parameters as little-endian `f32`s.
pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    let header = CheckpointHeader {
        generator: ck.generator.spec.clone(),
        discriminator: ck.discriminator.spec.clone(),
        images_seen: ck.images_seen,
        best_val_loss_bits: ck.best_val_loss.map(f32::to_bits),
        generator_floats: float_count(&ck.generator.params),
        discriminator_floats: float_count(&ck.discriminator.params),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let floats = header.generator_floats + header.discriminator_floats;
    let mut out = Vec::with_capacity(16 + json.len() + 4 * floats);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&u32::try_from(json.len()).expect("small header").to_le_bytes());
    out.extend_from_slice(&json);
    for t in ck.generator.params.iter().chain(&ck.discriminator.params) {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn unpack(layers: &[LayerSpec], blob: &[u8]) -> Result<Vec<Tensor>> {
    let mut floats = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")));
    let mut params = Vec::with_capacity(2 * layers.len());
    for l in layers {
        for shape in [l.weight_shape(), l.bias_shape()] {
            let data: Vec<f32> = floats.by_ref().take(shape.iter().product()).collect();
            params.push(Tensor::new(shape, data)?);
        }
    }
    Ok(params)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let err = |m: String| Error::Checkpoint(m);
    if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(err("not a checkpoint file (bad magic or truncated header)".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(err(format!(
            "unsupported checkpoint version {version}; this build reads version {CHECKPOINT_VERSION}"
        )));
    }
    let hlen = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let json = bytes.get(16..16 + hlen).ok_or_else(|| err("truncated header".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(json).map_err(|e| err(format!("bad header: {e}")))?;
    header.generator.validate()?;
    header.discriminator.validate()?;
    let g_layers = header.generator.layers();
    let d_layers = header.discriminator.layers();
    let g_count = crate::segnet::param_count(&g_layers);
    let d_count = crate::segnet::param_count(&d_layers);
    if header.generator_floats != g_count || header.discriminator_floats != d_count {
        return Err(err(format!(
            "blob lengths {}/{} do not match the specs ({g_count}/{d_count})",
            header.generator_floats, header.discriminator_floats
        )));
    }
    let body = &bytes[16 + hlen..];
    if body.len() != 4 * (g_count + d_count) {
        return Err(err(format!(
            "parameter payload is {} bytes, expected {}",
            body.len(),
            4 * (g_count + d_count)
        )));
    }
    let (g_blob, d_blob) = body.split_at(4 * g_count);
    Ok(Checkpoint {
        generator: Generator::from_params(header.generator, unpack(&g_layers, g_blob)?)?,
        discriminator: Discriminator::from_params(header.discriminator, unpack(&d_layers, d_blob)?)?,
        images_seen: header.images_seen,
        best_val_loss: header.best_val_loss_bits.map(f32::from_bits),
    })
}

pub fn write_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    write_atomic(path, &encode_checkpoint(ck)?)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&read_file(path)?).map_err(|e| match e {
        Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
        other => other,
    })
}

// ---------------------------------------------------------------- training log

pub fn encode_train_log(log: &[TrainLogEntry]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for e in log {
        w.serialize(e).map_err(|e| Error::Csv(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::Csv(e.to_string()))
}

pub fn decode_train_log(bytes: &[u8]) -> Result<Vec<TrainLogEntry>> {
    csv::Reader::from_reader(bytes)
        .deserialize()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::Csv(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_extremes_quantize() {
        let img = Image::<f32>::from_vec(2, 1, 1, vec![0.0, 1.0]).unwrap();
        let bytes = encode_image(&img).unwrap();
        assert_eq!(&bytes[bytes.len() - 2..], &[0, 255]);
        assert_eq!(decode_image(&bytes).unwrap(), img);
        assert!(encode_image(&Image::<f32>::filled(1, 1, 1, 1.5)).is_err());
    }

    #[test]
    fn image_header_comments_and_errors() {
        let bytes = b"P5\n# made by hand\n2 1\n255\n\x00\x80";
        let img = decode_image(bytes).unwrap();
        assert_eq!(img.dims(), (2, 1));
        match decode_image(b"P5\n2 2\n255\n\x00") {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 12),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            decode_image(b"P3\n1 1\n255\n"),
            Err(Error::Parse { offset: 0, .. })
        ));
        assert!(matches!(decode_image(b"P5\n1 x"), Err(Error::Parse { offset: 5, .. })));
        assert!(decode_image(b"P5\n1 1\n65535\n\0\0").is_err());
    }

    #[test]
    fn flo_size_and_magic() {
        let flow = FlowField::<f32>::uniform(3, 2, 1.5, -0.25);
        let bytes = encode_flo(&flow).unwrap();
        assert_eq!(bytes.len(), 12 + 3 * 2 * 8);
        assert_eq!(decode_flo(&bytes).unwrap(), flow);
        let mut bad = bytes.clone();
        bad[0] ^= 1;
        assert!(matches!(decode_flo(&bad), Err(Error::Parse { offset: 0, .. })));
        assert!(decode_flo(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn flo_marks_invalid_pixels_unknown() {
        let flow = FlowField::from_parts(2, 1, vec![1.0, 0.0], vec![2.0, 0.0], vec![true, false]).unwrap();
        let back = decode_flo(&encode_flo(&flow).unwrap()).unwrap();
        assert_eq!(back, flow);
        assert!(!back.is_valid(1, 0));
    }

    #[test]
    fn empty_manifest_round_trips() {
        assert_eq!(encode_manifest(&[]).unwrap(), "");
        assert!(decode_manifest("").unwrap().is_empty());
    }

    #[test]
    fn manifest_errors_carry_line_numbers() {
        match decode_manifest("\n{not json}\n") {
            Err(Error::Manifest { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }
}
