//! Binary checkpoint format, all little-endian:
//!
//! ```text
//! "NAVG"  version:u32  config_hash:u64  episodes:u64  updates:u64
//! learning_rate:f64  shape:[u32; 11]
//! parameters:[f32]     conv1_w conv1_b conv2_w conv2_b dense_w dense_b policy_w policy_b value_w value_b
//! accumulators:[f32]   same order
//! ```

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::{ConvShape, NetParams, NetShape, OptConfig, OptState};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"NAVG";
const VERSION: u32 = 1;
/// Refuse to allocate for absurd shapes read from a corrupt header.
const MAX_PARAMS: usize = 1 << 28;
const MAX_DIM: u32 = 1 << 20;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic bytes)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint is truncated")]
    Truncated,
    #[error("checkpoint has {0} unexpected trailing bytes")]
    TrailingBytes(usize),
    #[error("invalid network shape in checkpoint: {0}")]
    Shape(String),
    #[error("checkpoint network shape {found:?} does not match expected {expected:?}")]
    ShapeMismatch {
        expected: Box<NetShape>,
        found: Box<NetShape>,
    },
    #[error(transparent)]
    Io(io::Error),
}

impl From<io::Error> for CheckpointError {
    fn from(e: io::Error) -> Self {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            Self::Truncated
        } else {
            Self::Io(e)
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CheckpointMeta {
    pub config_hash: u64,
    /// Completed training episodes.
    pub episodes: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: NetParams<f32>,
    pub opt: OptState,
}

impl Checkpoint {
    /// Fresh optimizer state around the given parameters.
    pub fn new(params: NetParams<f32>, opt: OptConfig, meta: CheckpointMeta) -> Self {
        let opt = OptState::new(params.shape, opt);
        Self { meta, params, opt }
    }

    pub fn save(&self, path: &Path) -> io::Result<()> {
        // write then rename so an interrupted save never leaves a torn file
        let tmp = path.with_extension("tmp");
        {
            let mut out = BufWriter::new(File::create(&tmp)?);
            save_checkpoint(self, &mut out)?;
            out.flush()?;
        }
        std::fs::rename(tmp, path)
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let file = File::open(path).map_err(CheckpointError::Io)?;
        load_checkpoint(BufReader::new(file))
    }

    /// Warning text when the checkpoint was produced under another config.
    pub fn config_warning(&self, expected_hash: u64) -> Option<String> {
        (self.meta.config_hash != expected_hash).then(|| {
            format!(
                "checkpoint config hash {:016x} differs from current config {:016x}",
                self.meta.config_hash, expected_hash
            )
        })
    }

    pub fn ensure_shape(&self, expected: &NetShape) -> Result<(), CheckpointError> {
        if self.params.shape != *expected {
            return Err(CheckpointError::ShapeMismatch {
                expected: Box::new(*expected),
                found: Box::new(self.params.shape),
            });
        }
        Ok(())
    }
}

fn shape_fields(s: &NetShape) -> [u32; 11] {
    [
        s.scan_len,
        s.history,
        s.conv1.filters,
        s.conv1.kernel,
        s.conv1.stride,
        s.conv2.filters,
        s.conv2.kernel,
        s.conv2.stride,
        s.dense,
        s.bearing_bins,
        s.actions,
    ]
    .map(|v| u32::try_from(v).expect("dimension fits in u32"))
}

fn shape_from_fields(f: [u32; 11]) -> NetShape {
    let f = f.map(|v| v as usize);
    NetShape {
        scan_len: f[0],
        history: f[1],
        conv1: ConvShape {
            filters: f[2],
            kernel: f[3],
            stride: f[4],
        },
        conv2: ConvShape {
            filters: f[5],
            kernel: f[6],
            stride: f[7],
        },
        dense: f[8],
        bearing_bins: f[9],
        actions: f[10],
    }
}

pub fn save_checkpoint<W: Write>(ckpt: &Checkpoint, mut out: W) -> io::Result<()> {
    assert_eq!(ckpt.params.shape, ckpt.opt.accumulators.shape);
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&ckpt.meta.config_hash.to_le_bytes())?;
    out.write_all(&ckpt.meta.episodes.to_le_bytes())?;
    out.write_all(&ckpt.opt.updates.to_le_bytes())?;
    out.write_all(&ckpt.opt.config.learning_rate.to_le_bytes())?;
    for v in shape_fields(&ckpt.params.shape) {
        out.write_all(&v.to_le_bytes())?;
    }
    for tensor in ckpt.params.tensors().into_iter().chain(ckpt.opt.accumulators.tensors()) {
        let mut buf = Vec::with_capacity(tensor.len() * 4);
        for v in tensor {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    Ok(())
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> io::Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

fn read_tensors<R: Read>(r: &mut R, into: &mut NetParams<f32>) -> Result<(), CheckpointError> {
    for tensor in into.tensors_mut() {
        let mut bytes = vec![0u8; tensor.len() * 4];
        r.read_exact(&mut bytes)?;
        for (v, chunk) in tensor.iter_mut().zip(bytes.chunks_exact(4)) {
            *v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        }
    }
    Ok(())
}

pub fn load_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint, CheckpointError> {
    let magic: [u8; 4] = read_array(&mut r)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = u32::from_le_bytes(read_array(&mut r)?);
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let config_hash = u64::from_le_bytes(read_array(&mut r)?);
    let episodes = u64::from_le_bytes(read_array(&mut r)?);
    let updates = u64::from_le_bytes(read_array(&mut r)?);
    let lr = f64::from_le_bytes(read_array(&mut r)?);
    let mut fields = [0u32; 11];
    for f in &mut fields {
        *f = u32::from_le_bytes(read_array(&mut r)?);
    }
    if fields.iter().any(|&f| f > MAX_DIM) {
        return Err(CheckpointError::Shape("dimension too large".into()));
    }
    let shape = shape_from_fields(fields);
    shape.validate().map_err(CheckpointError::Shape)?;
    let count = shape
        .tensor_lens()
        .iter()
        .try_fold(0usize, |acc, &n| acc.checked_add(n))
        .filter(|&n| n <= MAX_PARAMS)
        .ok_or_else(|| CheckpointError::Shape("parameter count too large".into()))?;
    debug_assert_eq!(count, shape.param_count());

    let mut params = NetParams::zeros(shape);
    read_tensors(&mut r, &mut params)?;
    let opt_config = OptConfig {
        learning_rate: lr,
        ..OptConfig::default()
    };
    let mut opt = OptState::new(shape, opt_config);
    opt.updates = updates;
    read_tensors(&mut r, &mut opt.accumulators)?;

    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(CheckpointError::TrailingBytes(rest.len()));
    }
    Ok(Checkpoint {
        meta: CheckpointMeta { config_hash, episodes },
        params,
        opt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Checkpoint {
        let shape = NetShape::default();
        let params = NetParams::init(shape, &mut ChaCha8Rng::seed_from_u64(7));
        let mut ckpt = Checkpoint::new(
            params,
            OptConfig::default(),
            CheckpointMeta {
                config_hash: 0xdead_beef,
                episodes: 1500,
            },
        );
        let grads = NetParams::init(shape, &mut ChaCha8Rng::seed_from_u64(8));
        super::super::apply_update(&mut ckpt.params, &mut ckpt.opt, &grads);
        ckpt
    }

    #[test]
    fn round_trip_is_lossless() {
        let ckpt = sample();
        let mut buf = Vec::new();
        save_checkpoint(&ckpt, &mut buf).unwrap();
        let header = 4 + 4 + 8 + 8 + 8 + 8 + 11 * 4;
        assert_eq!(buf.len(), header + 2 * 4 * NetShape::default().param_count());
        let back = load_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back.meta, ckpt.meta);
        assert_eq!(back.opt.updates, 1);
        for (a, b) in back.params.tensors().iter().zip(ckpt.params.tensors()) {
            assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert_eq!(back.opt.accumulators, ckpt.opt.accumulators);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let ckpt = sample();
        let mut buf = Vec::new();
        save_checkpoint(&ckpt, &mut buf).unwrap();
        for cut in [0, 3, 20, 80, buf.len() / 2, buf.len() - 1] {
            assert!(
                matches!(load_checkpoint(&buf[..cut]), Err(CheckpointError::Truncated)),
                "cut at {cut}"
            );
        }
        let mut longer = buf.clone();
        longer.extend_from_slice(&[0; 3]);
        assert!(matches!(
            load_checkpoint(longer.as_slice()),
            Err(CheckpointError::TrailingBytes(3))
        ));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(
            load_checkpoint(bad.as_slice()),
            Err(CheckpointError::BadMagic)
        ));
        let mut huge = buf;
        huge[40 + 8 * 4..40 + 9 * 4].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(
            load_checkpoint(huge.as_slice()),
            Err(CheckpointError::Shape(_))
        ));
    }

    #[test]
    fn hash_mismatch_warns() {
        let ckpt = sample();
        assert_eq!(ckpt.config_warning(0xdead_beef), None);
        let w = ckpt.config_warning(1).unwrap();
        assert!(w.contains("00000000deadbeef"), "{w}");
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let ckpt = sample();
        ckpt.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ckpt);
        assert!(Checkpoint::load(&dir.path().join("missing")).is_err());
    }
}
