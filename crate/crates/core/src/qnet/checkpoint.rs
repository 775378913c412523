//! Binary checkpoints.
//!
//! ```text
//! "UAVQ" | version: u16 | layer count: u32
//! per layer: kind: u8 | ndims: u8 | dims: u32 * ndims
//!            | narrays: u8 | per array: len: u32 | f32 * len
//! ```
//! All integers and floats are little-endian. Layer kinds: 0 network
//! header, 1 conv stage, 2 hidden layer, 3 value head, 4 advantage head.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{ArchSpec, ConvSpec, ConvStage, Dense, QNetworkParams, Scalar, INPUT_CHANNELS};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"UAVQ";
const VERSION: u16 = 1;

const KIND_HEADER: u8 = 0;
const KIND_CONV: u8 = 1;
const KIND_HIDDEN: u8 = 2;
const KIND_VALUE: u8 = 3;
const KIND_ADVANTAGE: u8 = 4;

const PPM: f64 = 1e6;

struct Layer {
    kind: u8,
    dims: Vec<u32>,
    arrays: Vec<Vec<f32>>,
}

fn to_f32_vec<T: Scalar>(v: &[T]) -> Vec<f32> {
    v.iter().map(|x| x.as_f32()).collect()
}

fn dim(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Checkpoint(format!("dimension {v} too large")))
}

pub fn write_checkpoint<T: Scalar>(params: &QNetworkParams<T>, mut w: impl Write) -> Result<()> {
    let arch = &params.arch;
    let mut layers = vec![Layer {
        kind: KIND_HEADER,
        dims: vec![
            dim(INPUT_CHANNELS)?,
            dim(arch.input_cells)?,
            dim(arch.actions)?,
            dim(arch.fc_units)?,
            (arch.dropout * PPM).round() as u32,
        ],
        arrays: Vec::new(),
    }];
    for c in &params.convs {
        layers.push(Layer {
            kind: KIND_CONV,
            dims: vec![
                dim(c.spec.filters)?,
                dim(c.in_channels)?,
                dim(c.spec.kernel)?,
                dim(c.spec.stride)?,
            ],
            arrays: [
                &c.weight,
                &c.bias,
                &c.bn_scale,
                &c.bn_shift,
                &c.running_mean,
                &c.running_var,
            ]
            .iter()
            .map(|a| to_f32_vec(a))
            .collect(),
        });
    }
    for (kind, d) in [
        (KIND_HIDDEN, &params.hidden),
        (KIND_VALUE, &params.value),
        (KIND_ADVANTAGE, &params.advantage),
    ] {
        layers.push(Layer {
            kind,
            dims: vec![dim(d.outputs)?, dim(d.inputs)?],
            arrays: vec![to_f32_vec(&d.weight), to_f32_vec(&d.bias)],
        });
    }

    w.write_all(MAGIC)?;
    w.write_u16::<LittleEndian>(VERSION)?;
    w.write_u32::<LittleEndian>(layers.len() as u32)?;
    for layer in &layers {
        w.write_u8(layer.kind)?;
        w.write_u8(layer.dims.len() as u8)?;
        for &d in &layer.dims {
            w.write_u32::<LittleEndian>(d)?;
        }
        w.write_u8(layer.arrays.len() as u8)?;
        for a in &layer.arrays {
            w.write_u32::<LittleEndian>(dim(a.len())?)?;
            for &v in a {
                w.write_f32::<LittleEndian>(v)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn read_layer(r: &mut impl Read) -> Result<Layer> {
    let kind = r.read_u8()?;
    let ndims = r.read_u8()? as usize;
    let dims = (0..ndims)
        .map(|_| r.read_u32::<LittleEndian>())
        .collect::<std::io::Result<Vec<_>>>()?;
    let narrays = r.read_u8()? as usize;
    let mut arrays = Vec::with_capacity(narrays);
    for _ in 0..narrays {
        let len = r.read_u32::<LittleEndian>()? as usize;
        // Guard the allocation against corrupt lengths.
        if len > 1 << 28 {
            return Err(Error::Checkpoint(format!("array length {len} is implausible")));
        }
        let mut a = vec![0f32; len];
        r.read_f32_into::<LittleEndian>(&mut a)?;
        arrays.push(a);
    }
    Ok(Layer { kind, dims, arrays })
}

fn expect_layer(layer: &Layer, kind: u8, ndims: usize, lens: &[usize]) -> Result<()> {
    if layer.kind != kind || layer.dims.len() != ndims {
        return Err(Error::Checkpoint(format!(
            "expected layer kind {kind} with {ndims} dims, found kind {} with {}",
            layer.kind,
            layer.dims.len()
        )));
    }
    let got: Vec<usize> = layer.arrays.iter().map(|a| a.len()).collect();
    if got != lens {
        return Err(Error::Checkpoint(format!(
            "layer kind {kind}: array lengths {got:?}, expected {lens:?}"
        )));
    }
    Ok(())
}

fn map_io(e: Error) -> Error {
    match e {
        Error::Io(io) if io.kind() == std::io::ErrorKind::UnexpectedEof => {
            Error::Checkpoint("truncated checkpoint".into())
        }
        other => other,
    }
}

pub fn read_checkpoint(mut r: impl Read) -> Result<QNetworkParams<f32>> {
    read_inner(&mut r).map_err(map_io)
}

fn read_inner(r: &mut impl Read) -> Result<QNetworkParams<f32>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.read_u16::<LittleEndian>()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = r.read_u32::<LittleEndian>()? as usize;
    if count < 5 {
        return Err(Error::Checkpoint(format!("{count} layers is too few")));
    }
    let layers = (0..count).map(|_| read_layer(r)).collect::<Result<Vec<_>>>()?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after last layer".into()));
    }

    let header = &layers[0];
    expect_layer(header, KIND_HEADER, 5, &[])?;
    if header.dims[0] as usize != INPUT_CHANNELS {
        return Err(Error::Checkpoint(format!("{} input channels", header.dims[0])));
    }
    let conv_layers = &layers[1..count - 3];
    let mut arch = ArchSpec {
        input_cells: header.dims[1] as usize,
        convs: Vec::with_capacity(conv_layers.len()),
        fc_units: header.dims[3] as usize,
        actions: header.dims[2] as usize,
        dropout: header.dims[4] as f64 / PPM,
    };
    let mut convs = Vec::with_capacity(conv_layers.len());
    for layer in conv_layers {
        if layer.kind != KIND_CONV || layer.dims.len() != 4 {
            return Err(Error::Checkpoint("malformed conv layer".into()));
        }
        let d: Vec<usize> = layer.dims.iter().map(|&v| v as usize).collect();
        let (f, c, k) = (d[0], d[1], d[2]);
        expect_layer(layer, KIND_CONV, 4, &[f * c * k * k, f, f, f, f, f])?;
        let spec = ConvSpec {
            filters: f,
            kernel: k,
            stride: d[3],
        };
        arch.convs.push(spec);
        let mut a = layer.arrays.clone().into_iter();
        let mut next = || a.next().expect("length checked");
        convs.push(ConvStage {
            spec,
            in_channels: c,
            weight: next(),
            bias: next(),
            bn_scale: next(),
            bn_shift: next(),
            running_mean: next(),
            running_var: next(),
        });
    }
    arch.validate()
        .map_err(|e| Error::Checkpoint(format!("inconsistent architecture: {e}")))?;
    let mut channels = INPUT_CHANNELS;
    for c in &convs {
        if c.in_channels != channels {
            return Err(Error::Checkpoint("conv channels do not chain".into()));
        }
        if c.running_var.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::Checkpoint("running variance must be positive".into()));
        }
        channels = c.spec.filters;
    }
    let flat = arch.flat_features()?;
    let dense = |layer: &Layer, kind: u8, outputs: usize, inputs: usize| -> Result<Dense<f32>> {
        expect_layer(layer, kind, 2, &[outputs * inputs, outputs])?;
        if layer.dims != [outputs as u32, inputs as u32] {
            return Err(Error::Checkpoint(format!("layer kind {kind} has wrong dims")));
        }
        Ok(Dense {
            inputs,
            outputs,
            weight: layer.arrays[0].clone(),
            bias: layer.arrays[1].clone(),
        })
    };
    let hidden = dense(&layers[count - 3], KIND_HIDDEN, arch.fc_units, flat)?;
    let value = dense(&layers[count - 2], KIND_VALUE, 1, arch.fc_units)?;
    let advantage = dense(&layers[count - 1], KIND_ADVANTAGE, arch.actions, arch.fc_units)?;
    Ok(QNetworkParams {
        arch,
        convs,
        hidden,
        value,
        advantage,
    })
}

pub fn save_checkpoint<T: Scalar>(params: &QNetworkParams<T>, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(params, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<QNetworkParams<f32>> {
    let bytes = fs::read(path)?;
    read_checkpoint(&bytes[..])
}

impl<T: Scalar> QNetworkParams<T> {
    /// Fails with a shape error unless these parameters implement `arch`.
    pub fn ensure_arch(&self, arch: &ArchSpec) -> Result<()> {
        let same_layers = self.arch.input_cells == arch.input_cells
            && self.arch.convs == arch.convs
            && self.arch.fc_units == arch.fc_units
            && self.arch.actions == arch.actions;
        if same_layers {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "checkpoint architecture {:?} does not match {:?}",
                self.arch, arch
            )))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qnet::{forward, init_params, InputBatch, Mode};

    fn trained_like(arch: &ArchSpec) -> QNetworkParams<f32> {
        let mut p: QNetworkParams<f32> = init_params(4, arch).unwrap();
        for (i, c) in p.convs.iter_mut().enumerate() {
            c.running_mean.iter_mut().for_each(|v| *v = 0.25 * i as f32);
            c.running_var.iter_mut().for_each(|v| *v = 1.5 + i as f32);
            c.bn_shift.iter_mut().for_each(|v| *v = -0.1);
        }
        p
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let arch = ArchSpec::default();
        let p = trained_like(&arch);
        let mut buf = Vec::new();
        write_checkpoint(&p, &mut buf).unwrap();
        let back = read_checkpoint(&buf[..]).unwrap();
        assert_eq!(back, p);

        let cells = arch.input_cells;
        let data: Vec<f32> = (0..2 * 2 * cells * cells).map(|i| ((i % 17) as f32) / 17.0).collect();
        let batch = InputBatch::new(2, cells, data).unwrap();
        assert_eq!(
            forward(&p, &batch, Mode::Infer).unwrap(),
            forward(&back, &batch, Mode::Infer).unwrap()
        );
    }

    #[test]
    fn truncated_and_corrupt_files_fail() {
        let p = trained_like(&ArchSpec::tiny());
        let mut buf = Vec::new();
        write_checkpoint(&p, &mut buf).unwrap();
        for cut in [0, 3, 6, 10, buf.len() / 2, buf.len() - 1] {
            assert!(
                matches!(read_checkpoint(&buf[..cut]), Err(Error::Checkpoint(_))),
                "cut at {cut}"
            );
        }
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_checkpoint(&bad[..]), Err(Error::Checkpoint(_))));
        let mut bad = buf.clone();
        bad[4] = 9;
        assert!(matches!(read_checkpoint(&bad[..]), Err(Error::Checkpoint(_))));
        let mut long = buf.clone();
        long.push(0);
        assert!(read_checkpoint(&long[..]).is_err());
    }

    #[test]
    fn tiny_checkpoint_rejected_for_default_arch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tiny.uavq");
        save_checkpoint(&trained_like(&ArchSpec::tiny()), &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert!(loaded.ensure_arch(&ArchSpec::tiny()).is_ok());
        assert!(matches!(loaded.ensure_arch(&ArchSpec::default()), Err(Error::Shape(_))));
    }
}
