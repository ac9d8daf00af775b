//! Checkpoint directories: `manifest.json` plus `tensors.bin`.
//!
//! `tensors.bin` is little-endian: the magic `XDRT`, a `u32` tensor count,
//! then per tensor a `u32` name length, the UTF-8 name, a dtype byte
//! (0 = f32, 1 = f64), a `u32` rank, one `u64` per dimension and the
//! row-major payload.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::HyperParams;
use crate::error::{Error, Result};
use crate::params::ParameterSet;
use crate::tape::Mat;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TENSORS_FILE: &str = "tensors.bin";
/// Replacement for the mixed-view item table, written by the spectrum probe.
pub const GLOBAL_OVERRIDE: &str = "global_override";

const MAGIC: &[u8; 4] = b"XDRT";
const MOMENT_M: &str = "adam.m/";
const MOMENT_V: &str = "adam.v/";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngRecord {
    pub seed: Vec<u8>,
    pub stream: u64,
    /// Word position as a decimal string (it is a `u128`).
    pub word_pos: String,
}

impl RngRecord {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed().to_vec(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        use rand::SeedableRng;
        let seed: [u8; 32] = self
            .seed
            .as_slice()
            .try_into()
            .map_err(|_| Error::Checkpoint("rng seed must be 32 bytes".into()))?;
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| Error::Checkpoint("bad rng word position".into()))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub hyperparams: HyperParams,
    pub n_x: usize,
    pub n_y: usize,
    /// Epochs completed.
    pub epoch: usize,
    pub best_epoch: Option<usize>,
    pub best_val_mrr: Option<f64>,
    pub adam_step: u64,
    pub rng: Option<RngRecord>,
    pub metrics: Option<serde_json::Value>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub params: ParameterSet,
    /// First and second moment estimates, when saved from training.
    pub moments: Option<(ParameterSet, ParameterSet)>,
    pub global_override: Option<Mat>,
}

impl Checkpoint {
    pub fn adam(&self) -> Adam {
        let mut adam = Adam::new(&self.params, self.manifest.hyperparams.lr);
        adam.t = self.manifest.adam_step;
        if let Some((m, v)) = &self.moments {
            adam.m = m.clone();
            adam.v = v.clone();
        }
        adam
    }
}

fn write_tensor(out: &mut impl Write, name: &str, m: &Mat, wide: bool) -> std::io::Result<()> {
    out.write_all(&(name.len() as u32).to_le_bytes())?;
    out.write_all(name.as_bytes())?;
    out.write_all(&[wide as u8])?;
    out.write_all(&2u32.to_le_bytes())?;
    out.write_all(&(m.nrows() as u64).to_le_bytes())?;
    out.write_all(&(m.ncols() as u64).to_le_bytes())?;
    for &x in m.iter() {
        if wide {
            out.write_all(&x.to_le_bytes())?;
        } else {
            out.write_all(&(x as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn save_checkpoint(dir: &Path, ckpt: &Checkpoint) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = serde_json::to_string_pretty(&ckpt.manifest)?;
    let mpath = dir.join(MANIFEST_FILE);
    fs::write(&mpath, manifest + "\n").map_err(|e| Error::io(&mpath, e))?;

    let mut entries: Vec<(String, &Mat, bool)> = ckpt
        .params
        .iter()
        .map(|(n, t)| (n.to_string(), t, false))
        .collect();
    if let Some((m, v)) = &ckpt.moments {
        entries.extend(m.iter().map(|(n, t)| (format!("{MOMENT_M}{n}"), t, false)));
        entries.extend(v.iter().map(|(n, t)| (format!("{MOMENT_V}{n}"), t, false)));
    }
    if let Some(g) = &ckpt.global_override {
        entries.push((GLOBAL_OVERRIDE.to_string(), g, true));
    }
    let tpath = dir.join(TENSORS_FILE);
    let file = fs::File::create(&tpath).map_err(|e| Error::io(&tpath, e))?;
    let mut out = BufWriter::new(file);
    let result = (|| {
        out.write_all(MAGIC)?;
        out.write_all(&(entries.len() as u32).to_le_bytes())?;
        for (name, m, wide) in &entries {
            write_tensor(&mut out, name, m, *wide)?;
        }
        out.flush()
    })();
    result.map_err(|e| Error::io(&tpath, e))
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| Error::Checkpoint(format!("truncated tensor file: {e}")))?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    fn tensor(&mut self) -> Result<(String, Mat)> {
        let len = self.u32()? as usize;
        if len > 1 << 16 {
            return Err(Error::Checkpoint("tensor name too long".into()));
        }
        let mut name = vec![0u8; len];
        self.inner
            .read_exact(&mut name)
            .map_err(|e| Error::Checkpoint(format!("truncated tensor name: {e}")))?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let [dtype] = self.bytes::<1>()?;
        let rank = self.u32()?;
        if rank != 2 {
            return Err(Error::Checkpoint(format!(
                "{name}: rank {rank}, expected 2"
            )));
        }
        let rows = self.u64()? as usize;
        let cols = self.u64()? as usize;
        let count = rows
            .checked_mul(cols)
            .filter(|&c| c <= 1 << 32)
            .ok_or_else(|| Error::Checkpoint(format!("{name}: implausible shape")))?;
        let mut data = Vec::with_capacity(count);
        for _ in 0..count {
            data.push(match dtype {
                0 => f32::from_le_bytes(self.bytes()?) as f64,
                1 => f64::from_le_bytes(self.bytes()?),
                other => return Err(Error::Checkpoint(format!("{name}: unknown dtype {other}"))),
            });
        }
        let m = Mat::from_shape_vec((rows, cols), data).expect("length checked");
        Ok((name, m))
    }
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let mpath = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", mpath.display())))?;

    let tpath = dir.join(TENSORS_FILE);
    let file = fs::File::open(&tpath).map_err(|e| Error::io(&tpath, e))?;
    let mut r = Reader {
        inner: BufReader::new(file),
    };
    if &r.bytes::<4>()? != MAGIC {
        return Err(Error::Checkpoint(format!("{}: bad magic", tpath.display())));
    }
    let count = r.u32()?;
    let mut params = ParameterSet::new();
    let mut m = ParameterSet::new();
    let mut v = ParameterSet::new();
    let mut global_override = None;
    for _ in 0..count {
        let (name, t) = r.tensor()?;
        if let Some(n) = name.strip_prefix(MOMENT_M) {
            m.insert(n, t);
        } else if let Some(n) = name.strip_prefix(MOMENT_V) {
            v.insert(n, t);
        } else if name == GLOBAL_OVERRIDE {
            global_override = Some(t);
        } else {
            params.insert(name, t);
        }
    }
    let mut extra = [0u8; 1];
    if r.inner.read(&mut extra).map_err(|e| Error::io(&tpath, e))? != 0 {
        return Err(Error::Checkpoint("trailing bytes after tensors".into()));
    }
    let emb = params
        .get("emb")
        .ok_or_else(|| Error::Checkpoint("missing item table".into()))?;
    if emb.nrows() != manifest.n_x + manifest.n_y || emb.ncols() != manifest.hyperparams.dim {
        return Err(Error::Checkpoint(format!(
            "item table {:?} does not match manifest",
            emb.dim()
        )));
    }
    let moments = if m.is_empty() {
        None
    } else {
        if m.names() != params.names() || v.names() != params.names() {
            return Err(Error::Checkpoint(
                "moment tensors do not match parameters".into(),
            ));
        }
        Some((m, v))
    };
    Ok(Checkpoint {
        manifest,
        params,
        moments,
        global_override,
    })
}
