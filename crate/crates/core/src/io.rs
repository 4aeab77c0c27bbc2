//! Field serialization: a flat little-endian binary format, CSV export and
//! grayscale images.
//!
//! Binary layout: the 8-byte magic `LTFIELD1`, a `u32` kind (0 layer stack,
//! 1 data vector), a `u32` entry count, then per entry `nx: u64`, `ny: u64`,
//! `origin: [f64; 2]`, `spacing: f64`, `weight: f64`, `nx·ny` mask bytes and
//! `nx·ny` `f64` values in row-major order.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use crate::field::{DataVector, Grid2D, LayerLayout, LayerStack, MaskedGrid, PupilField};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"LTFIELD1";
const KIND_LAYERS: u32 = 0;
const KIND_DATA: u32 = 1;

/// Write `bytes` to a sibling temporary file and rename it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::Format(format!("{} is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

fn put_entry(out: &mut Vec<u8>, domain: &MaskedGrid, weight: f64, values: &[f64]) {
    let g = domain.grid();
    out.extend_from_slice(&(g.nx() as u64).to_le_bytes());
    out.extend_from_slice(&(g.ny() as u64).to_le_bytes());
    for v in [g.origin()[0], g.origin()[1], g.spacing(), weight] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend(domain.mask().iter().map(|&m| m as u8));
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn header(kind: u32, count: usize) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    out.extend_from_slice(&kind.to_le_bytes());
    out.extend_from_slice(&(count as u32).to_le_bytes());
    out
}

pub fn encode_layer_stack(stack: &LayerStack) -> Vec<u8> {
    let layout = stack.layout();
    let mut out = header(KIND_LAYERS, layout.n_layers());
    for l in 0..layout.n_layers() {
        put_entry(&mut out, layout.layer(l), layout.weights()[l], stack.layer(l));
    }
    out
}

pub fn encode_data_vector(data: &DataVector) -> Vec<u8> {
    let mut out = header(KIND_DATA, data.len());
    for f in data.fields() {
        put_entry(&mut out, f.domain(), 1.0, f.values());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Format(format!("truncated field file: need {n} bytes at offset {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn entry(&mut self) -> Result<(MaskedGrid, f64, Vec<f64>)> {
        let nx = self.u64()? as usize;
        let ny = self.u64()? as usize;
        let origin = [self.f64()?, self.f64()?];
        let spacing = self.f64()?;
        let weight = self.f64()?;
        let n = nx.checked_mul(ny).ok_or_else(|| Error::Format("grid size overflows".into()))?;
        let grid = Grid2D::new(origin, spacing, nx, ny)?;
        let mask = self
            .take(n)?
            .iter()
            .map(|&b| match b {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(Error::Format(format!("invalid mask byte {other}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        let values = (0..n).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        Ok((MaskedGrid::new(grid, mask)?, weight, values))
    }
}

fn open(bytes: &[u8], kind: u32) -> Result<(Reader<'_>, usize)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Format("not a field file (bad magic)".into()));
    }
    let found = r.u32()?;
    if found != kind {
        return Err(Error::Format(format!("field file holds kind {found}, expected {kind}")));
    }
    let count = r.u32()? as usize;
    Ok((r, count))
}

fn finish(r: &Reader<'_>) -> Result<()> {
    if r.pos != r.bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes in field file", r.bytes.len() - r.pos)));
    }
    Ok(())
}

pub fn decode_layer_stack(bytes: &[u8]) -> Result<LayerStack> {
    let (mut r, count) = open(bytes, KIND_LAYERS)?;
    let mut layers = Vec::with_capacity(count);
    let mut weights = Vec::with_capacity(count);
    let mut values = Vec::with_capacity(count);
    for _ in 0..count {
        let (m, w, v) = r.entry()?;
        layers.push(m);
        weights.push(w);
        values.push(v);
    }
    finish(&r)?;
    LayerStack::from_values(Arc::new(LayerLayout::new(layers, weights)?), values)
}

pub fn decode_data_vector(bytes: &[u8]) -> Result<DataVector> {
    let (mut r, count) = open(bytes, KIND_DATA)?;
    let mut domain: Option<Arc<MaskedGrid>> = None;
    let mut fields = Vec::with_capacity(count);
    for _ in 0..count {
        let (m, _, v) = r.entry()?;
        let d = match &domain {
            Some(d) if **d == m => d.clone(),
            Some(_) => return Err(Error::Format("data fields on different pupil grids".into())),
            None => domain.insert(Arc::new(m)).clone(),
        };
        fields.push(PupilField::from_values(d, v)?);
    }
    finish(&r)?;
    DataVector::new(fields)
}

pub fn write_layer_stack(path: &Path, stack: &LayerStack) -> Result<()> {
    write_atomic(path, &encode_layer_stack(stack))
}

pub fn read_layer_stack(path: &Path) -> Result<LayerStack> {
    decode_layer_stack(&fs::read(path)?)
}

pub fn write_data_vector(path: &Path, data: &DataVector) -> Result<()> {
    write_atomic(path, &encode_data_vector(data))
}

pub fn read_data_vector(path: &Path) -> Result<DataVector> {
    decode_data_vector(&fs::read(path)?)
}

fn csv_error(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}

fn field_csv<'a>(
    label: &str,
    entries: impl Iterator<Item = (&'a MaskedGrid, &'a [f64])>,
) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([label, "ix", "iy", "x", "y", "value"]).map_err(csv_error)?;
    for (k, (m, values)) in entries.enumerate() {
        let g = m.grid();
        for (i, (&inside, v)) in m.mask().iter().zip(values).enumerate() {
            if !inside {
                continue;
            }
            let p = g.node_at(i);
            w.serialize((k, i % g.nx(), i / g.nx(), p[0], p[1], v)).map_err(csv_error)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

/// One row per masked node: `layer, ix, iy, x, y, value`.
pub fn layer_stack_csv(stack: &LayerStack) -> Result<String> {
    let layout = stack.layout();
    field_csv("layer", layout.layers().iter().zip(stack.layers().iter().map(|v| v.as_slice())))
}

/// One row per in-aperture sample: `direction, ix, iy, x, y, value`.
pub fn data_vector_csv(data: &DataVector) -> Result<String> {
    field_csv("direction", data.fields().iter().map(|f| (&**f.domain(), f.values())))
}

/// 8-bit binary PGM of a grid-shaped array. Values are scaled linearly from
/// `range` (default: min/max over the shown nodes) to 1..=255; nodes outside
/// `mask` are black. The first image row is the largest `y`.
pub fn pgm(nx: usize, ny: usize, values: &[f64], mask: Option<&[bool]>, range: Option<(f64, f64)>) -> Vec<u8> {
    assert_eq!(values.len(), nx * ny, "value count does not match image size");
    let shown = |i: usize| mask.is_none_or(|m| m[i]) && values[i].is_finite();
    let (lo, hi) = range.unwrap_or_else(|| {
        (0..values.len())
            .filter(|&i| shown(i))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), i| (a.min(values[i]), b.max(values[i])))
    });
    let mut out = format!("P5\n{nx} {ny}\n255\n").into_bytes();
    for iy in (0..ny).rev() {
        for ix in 0..nx {
            let i = iy * nx + ix;
            let px = if !shown(i) {
                0
            } else if hi > lo {
                (1.0 + 254.0 * ((values[i] - lo) / (hi - lo)).clamp(0.0, 1.0)).round() as u8
            } else {
                128
            };
            out.push(px);
        }
    }
    out
}

/// Image of one layer of a stack.
pub fn layer_pgm(stack: &LayerStack, l: usize) -> Vec<u8> {
    let m = stack.layout().layer(l);
    pgm(m.grid().nx(), m.grid().ny(), stack.layer(l), Some(m.mask()), None)
}
