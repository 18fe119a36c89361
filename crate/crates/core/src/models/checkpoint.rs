use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{gan, gmm, ConditionalGenerator};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::seed::Fingerprint;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GAFI";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Gmm,
    TinyGan,
}

impl ModelKind {
    fn tag(self) -> u8 {
        match self {
            ModelKind::Gmm => 0,
            ModelKind::TinyGan => 1,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(ModelKind::Gmm),
            1 => Ok(ModelKind::TinyGan),
            other => Err(Error::Format(format!("unknown model kind tag {other}"))),
        }
    }
}

/// Frozen generator parameters at one training step.
///
/// `blocks` is an opaque list of parameter arrays whose layout is owned by the
/// model kind; `arch` carries the kind's size parameter (mixture components
/// per class, or the generator hidden width).
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorCheckpoint<T> {
    pub epoch: usize,
    pub kind: ModelKind,
    pub num_classes: usize,
    pub feature_dim: usize,
    pub latent_dim: usize,
    pub arch: usize,
    pub blocks: Vec<Vec<T>>,
}

impl<T: Real> GeneratorCheckpoint<T> {
    /// Binary layout, all integers little-endian:
    ///
    /// ```text
    /// "GAFI" | version u16 | kind u8 | epoch u64 | classes u32 | features u32
    ///        | latent u32 | arch u32 | block count u32
    ///        | per block: length u64, then length × f64
    /// ```
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&[self.kind.tag()])?;
        w.write_all(&(self.epoch as u64).to_le_bytes())?;
        for dim in [self.num_classes, self.feature_dim, self.latent_dim, self.arch, self.blocks.len()] {
            let dim = u32::try_from(dim).map_err(|_| Error::Format("dimension exceeds u32".into()))?;
            w.write_all(&dim.to_le_bytes())?;
        }
        for block in &self.blocks {
            w.write_all(&(block.len() as u64).to_le_bytes())?;
            for &x in block {
                w.write_all(&x.as_f64().to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(truncated)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format("bad magic bytes".into()));
        }
        let version = u16::from_le_bytes(read_array(&mut r)?);
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let [tag] = read_array::<1>(&mut r)?;
        let kind = ModelKind::from_tag(tag)?;
        let epoch = u64::from_le_bytes(read_array(&mut r)?) as usize;
        let mut dims = [0usize; 5];
        for d in &mut dims {
            *d = u32::from_le_bytes(read_array(&mut r)?) as usize;
        }
        let [num_classes, feature_dim, latent_dim, arch, block_count] = dims;
        let mut blocks = Vec::with_capacity(block_count);
        for _ in 0..block_count {
            let len = u64::from_le_bytes(read_array(&mut r)?) as usize;
            let mut block = Vec::with_capacity(len.min(1 << 20));
            for _ in 0..len {
                block.push(T::lit(f64::from_le_bytes(read_array(&mut r)?)));
            }
            blocks.push(block);
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Format("trailing bytes after last block".into()));
        }
        let ckpt = Self {
            epoch,
            kind,
            num_classes,
            feature_dim,
            latent_dim,
            arch,
            blocks,
        };
        ckpt.validate_layout()?;
        Ok(ckpt)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    /// Hash of the serialized form; identifies the snapshot in reports.
    pub fn fingerprint(&self) -> u64 {
        Fingerprint::new("checkpoint").bytes(&self.to_bytes()).finish()
    }

    fn validate_layout(&self) -> Result<()> {
        let expected = match self.kind {
            ModelKind::Gmm => gmm::block_lengths(self.num_classes, self.feature_dim, self.arch),
            ModelKind::TinyGan => gan::block_lengths(self.num_classes, self.feature_dim, self.latent_dim, self.arch),
        };
        let actual: Vec<usize> = self.blocks.iter().map(Vec::len).collect();
        if actual != expected {
            return Err(Error::Format(format!(
                "parameter blocks {actual:?} do not match {:?} layout {expected:?}",
                self.kind
            )));
        }
        Ok(())
    }
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("truncated checkpoint".into())
    } else {
        e.into()
    }
}

fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(truncated)?;
    Ok(buf)
}

impl<T: Real> ConditionalGenerator<T> for GeneratorCheckpoint<T> {
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    fn sample(&self, class: usize, count: usize, stddev: T, seed: u64) -> Result<Vec<Vec<T>>> {
        match self.kind {
            ModelKind::Gmm => gmm::gmm_sample(self, class, count, stddev, seed),
            ModelKind::TinyGan => gan::gan_sample(self, class, count, stddev, seed),
        }
    }

    fn id(&self) -> u64 {
        self.fingerprint()
    }
}
