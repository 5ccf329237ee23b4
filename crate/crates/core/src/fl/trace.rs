//! The eavesdropper's record: frozen model snapshots at observed
//! epochs, with a little-endian binary file format.
//!
//! File layout (all integers little-endian):
//!   magic "FLTR", version u16,
//!   target_client u32,
//!   network spec descriptor(input, class_count, layers),
//!   epoch_count u32, epochs u32 each (strictly ascending),
//!   per epoch: every stored array in canonical order as f32 values.
//! Values are stored at 32-bit precision; in-memory models stay 64-bit.

use std::fs;
use std::path::Path;

use crate::engine::network::Mode;
use crate::engine::spec::{LayerSpec, NetworkSpec, ValueShape};
use crate::engine::Network;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"FLTR";
const VERSION: u16 = 1;

/// Snapshots of the target client's uploaded models at the observed
/// epochs. Snapshots are frozen: only shared access is offered.
#[derive(Debug)]
pub struct CheckpointTrace {
    target_client: usize,
    spec: NetworkSpec,
    snapshots: Vec<(usize, Network)>,
}

impl CheckpointTrace {
    pub fn new(target_client: usize, spec: NetworkSpec) -> Self {
        CheckpointTrace { target_client, spec, snapshots: Vec::new() }
    }

    /// Append a snapshot. Epochs must arrive in ascending order and the
    /// model must match the trace spec. The network is frozen in eval
    /// mode.
    pub fn record(&mut self, epoch: usize, mut model: Network) -> Result<()> {
        if model.spec() != &self.spec {
            return Err(Error::Config("snapshot spec differs from trace spec".into()));
        }
        if let Some(&(last, _)) = self.snapshots.last() {
            if epoch <= last {
                return Err(Error::Config(format!(
                    "snapshot epochs must ascend: {epoch} after {last}"
                )));
            }
        }
        model.set_mode(Mode::Eval);
        self.snapshots.push((epoch, model));
        Ok(())
    }

    pub fn target_client(&self) -> usize {
        self.target_client
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    /// Observed epochs, ascending.
    pub fn epochs(&self) -> Vec<usize> {
        self.snapshots.iter().map(|(e, _)| *e).collect()
    }

    pub fn get(&self, epoch: usize) -> Option<&Network> {
        self.snapshots.iter().find(|(e, _)| *e == epoch).map(|(_, n)| n)
    }

    /// Snapshots in ascending epoch order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, &Network)> {
        self.snapshots.iter().map(|(e, n)| (*e, n))
    }

    /// A trace containing only the requested epochs, which must all be
    /// present. Observation is passive, so any subset of a valid trace
    /// is itself a valid trace.
    pub fn restrict(&self, epochs: &[usize]) -> Result<CheckpointTrace> {
        let mut out = CheckpointTrace::new(self.target_client, self.spec.clone());
        for &epoch in epochs {
            let model = self.get(epoch).ok_or_else(|| {
                Error::Config(format!("epoch {epoch} not present in trace {:?}", self.epochs()))
            })?;
            out.record(epoch, model.clone())?;
        }
        Ok(out)
    }
}

// ------------------------------------------------------------- file io

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Writer { buf: Vec::new() }
    }
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f32_from(&mut self, v: f64) {
        self.buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn fail<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::TraceFormat { offset: self.pos as u64, message: message.into() })
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return self.fail(format!("file truncated reading {what}"));
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn f32_as_f64(&mut self, what: &str) -> Result<f64> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as f64)
    }
}

fn write_spec(w: &mut Writer, spec: &NetworkSpec) {
    match spec.input {
        ValueShape::Features(n) => {
            w.u8(0);
            w.u32(n as u32);
        }
        ValueShape::Series { channels, len } => {
            w.u8(1);
            w.u32(channels as u32);
            w.u32(len as u32);
        }
    }
    w.u32(spec.class_count as u32);
    w.u32(spec.layers.len() as u32);
    for layer in &spec.layers {
        match *layer {
            LayerSpec::Dense { inputs, outputs } => {
                w.u8(0);
                w.u32(inputs as u32);
                w.u32(outputs as u32);
            }
            LayerSpec::Conv1d { in_channels, out_channels, kernel } => {
                w.u8(1);
                w.u32(in_channels as u32);
                w.u32(out_channels as u32);
                w.u32(kernel as u32);
            }
            LayerSpec::BatchNorm1d { channels, eps, momentum } => {
                w.u8(2);
                w.u32(channels as u32);
                w.f64(eps);
                w.f64(momentum);
            }
            LayerSpec::Relu => w.u8(3),
            LayerSpec::GlobalAvgPool1d => w.u8(4),
            LayerSpec::Softmax => w.u8(5),
        }
    }
}

fn read_spec(r: &mut Reader) -> Result<NetworkSpec> {
    let input = match r.u8("input shape tag")? {
        0 => ValueShape::Features(r.u32("input width")? as usize),
        1 => ValueShape::Series {
            channels: r.u32("input channels")? as usize,
            len: r.u32("input length")? as usize,
        },
        tag => return r.fail(format!("unknown input shape tag {tag}")),
    };
    let class_count = r.u32("class count")? as usize;
    let layer_count = r.u32("layer count")? as usize;
    let mut layers = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        let layer = match r.u8("layer tag")? {
            0 => LayerSpec::Dense {
                inputs: r.u32("dense inputs")? as usize,
                outputs: r.u32("dense outputs")? as usize,
            },
            1 => LayerSpec::Conv1d {
                in_channels: r.u32("conv in channels")? as usize,
                out_channels: r.u32("conv out channels")? as usize,
                kernel: r.u32("conv kernel")? as usize,
            },
            2 => LayerSpec::BatchNorm1d {
                channels: r.u32("norm channels")? as usize,
                eps: r.f64("norm eps")?,
                momentum: r.f64("norm momentum")?,
            },
            3 => LayerSpec::Relu,
            4 => LayerSpec::GlobalAvgPool1d,
            5 => LayerSpec::Softmax,
            tag => return r.fail(format!("unknown layer tag {tag}")),
        };
        layers.push(layer);
    }
    let start = r.pos;
    NetworkSpec::new(input, layers, class_count).map_err(|e| Error::TraceFormat {
        offset: start as u64,
        message: format!("stored spec is invalid: {e}"),
    })
}

pub fn save_trace(trace: &CheckpointTrace, path: impl AsRef<Path>) -> Result<()> {
    let mut w = Writer::new();
    w.buf.extend_from_slice(MAGIC);
    w.u16(VERSION);
    w.u32(trace.target_client as u32);
    write_spec(&mut w, &trace.spec);
    w.u32(trace.snapshots.len() as u32);
    for (epoch, _) in &trace.snapshots {
        w.u32(*epoch as u32);
    }
    for (_, model) in &trace.snapshots {
        for array in model.export_stored() {
            for v in array {
                w.f32_from(v);
            }
        }
    }
    fs::write(path, w.buf)?;
    Ok(())
}

pub fn load_trace(path: impl AsRef<Path>) -> Result<CheckpointTrace> {
    let buf = fs::read(path)?;
    let mut r = Reader::new(&buf);
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::TraceFormat { offset: 0, message: format!("bad magic {magic:?}") });
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(Error::TraceFormat {
            offset: 4,
            message: format!("unsupported version {version}, expected {VERSION}"),
        });
    }
    let target_client = r.u32("target client")? as usize;
    let spec = read_spec(&mut r)?;
    let epoch_count = r.u32("epoch count")? as usize;
    let mut epochs = Vec::with_capacity(epoch_count);
    for _ in 0..epoch_count {
        epochs.push(r.u32("epoch")? as usize);
    }
    if !epochs.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::TraceFormat {
            offset: r.pos as u64,
            message: format!("epochs not strictly ascending: {epochs:?}"),
        });
    }

    let sizes = spec.stored_array_sizes();
    let mut trace = CheckpointTrace::new(target_client, spec.clone());
    for &epoch in &epochs {
        let mut arrays = Vec::with_capacity(sizes.len());
        for &size in &sizes {
            let mut array = Vec::with_capacity(size);
            for _ in 0..size {
                array.push(r.f32_as_f64("parameter value")?);
            }
            arrays.push(array);
        }
        let mut model = Network::initialize(spec.clone(), 0);
        let import_at = r.pos;
        model.import_stored(&arrays).map_err(|e| Error::TraceFormat {
            offset: import_at as u64,
            message: format!("epoch {epoch} snapshot rejected: {e}"),
        })?;
        trace.record(epoch, model)?;
    }
    if r.pos != buf.len() {
        return Err(Error::TraceFormat {
            offset: r.pos as u64,
            message: format!("{} trailing bytes", buf.len() - r.pos),
        });
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::spec::mlp_spec;

    fn sample_trace() -> CheckpointTrace {
        let spec = mlp_spec(4, &[5], 3).unwrap();
        let mut trace = CheckpointTrace::new(2, spec.clone());
        for (i, epoch) in [100, 150, 200, 250, 300].into_iter().enumerate() {
            trace.record(epoch, Network::initialize(spec.clone(), i as u64)).unwrap();
        }
        trace
    }

    #[test]
    fn epochs_must_ascend_and_specs_must_match() {
        let spec = mlp_spec(4, &[5], 3).unwrap();
        let mut trace = CheckpointTrace::new(0, spec.clone());
        trace.record(5, Network::initialize(spec.clone(), 0)).unwrap();
        assert!(trace.record(5, Network::initialize(spec.clone(), 1)).is_err());
        assert!(trace.record(3, Network::initialize(spec.clone(), 1)).is_err());
        let other = mlp_spec(4, &[6], 3).unwrap();
        assert!(trace.record(9, Network::initialize(other, 1)).is_err());
    }

    #[test]
    fn roundtrip_preserves_epochs_and_values_at_32_bit_precision() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.fltr");
        let trace = sample_trace();
        save_trace(&trace, &path).unwrap();
        let loaded = load_trace(&path).unwrap();

        assert_eq!(loaded.target_client(), 2);
        assert_eq!(loaded.epochs(), vec![100, 150, 200, 250, 300]);
        assert_eq!(loaded.spec(), trace.spec());
        for (epoch, model) in trace.iter() {
            let restored = loaded.get(epoch).unwrap();
            for (a, b) in model.export_stored().iter().zip(restored.export_stored().iter()) {
                for (x, y) in a.iter().zip(b) {
                    let rounded = *x as f32 as f64;
                    assert_eq!(*y, rounded, "value {x} should load as its f32 rounding");
                }
            }
        }
    }

    #[test]
    fn truncated_file_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.fltr");
        save_trace(&sample_trace(), &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        match load_trace(&path) {
            Err(Error::TraceFormat { offset, .. }) => assert!(offset > 0),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_and_version_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.fltr");
        save_trace(&sample_trace(), &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[0] = b'X';
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_trace(&path), Err(Error::TraceFormat { offset: 0, .. })));

        let mut bytes = fs::read(&path).unwrap();
        bytes[0] = b'F';
        bytes[4] = 9;
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_trace(&path), Err(Error::TraceFormat { offset: 4, .. })));
    }

    #[test]
    fn trailing_garbage_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.fltr");
        save_trace(&sample_trace(), &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.push(0);
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_trace(&path), Err(Error::TraceFormat { .. })));
    }

    #[test]
    fn restrict_selects_a_subset_and_validates_membership() {
        let trace = sample_trace();
        let sub = trace.restrict(&[150, 250]).unwrap();
        assert_eq!(sub.epochs(), vec![150, 250]);
        assert_eq!(
            sub.get(150).unwrap().export_stored(),
            trace.get(150).unwrap().export_stored()
        );
        assert!(trace.restrict(&[99]).is_err());
    }

    #[test]
    fn snapshots_are_eval_mode_and_reusable() {
        let trace = sample_trace();
        let model = trace.get(100).unwrap();
        assert_eq!(model.mode(), Mode::Eval);
        let x = crate::engine::Tensor::new(vec![1, 4], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let a = model.infer(&x).unwrap();
        let b = model.infer(&x).unwrap();
        assert_eq!(a, b);
    }
}
