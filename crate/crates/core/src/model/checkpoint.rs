//! Binary checkpoint: `FCAN`, version, tensor count, named f32 tensors, then
//! the model configuration as `key = value` text. All integers are u32 LE.

use std::fs;
use std::path::Path;

use super::config::ModelConfig;
use super::net::FcaNet;
use super::params::BnId;
use crate::config::{apply, render};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

const MAGIC: &[u8; 4] = b"FCAN";
pub const CHECKPOINT_VERSION: u32 = 1;

const RUNNING_MEAN: &str = ".running_mean";
const RUNNING_VAR: &str = ".running_var";

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_tensor(out: &mut Vec<u8>, name: &str, dims: &[usize], values: &[f64]) -> Result<()> {
    put_u32(out, name.len())?;
    out.extend_from_slice(name.as_bytes());
    put_u32(out, dims.len())?;
    for &d in dims {
        put_u32(out, d)?;
    }
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(())
}

struct Reader<'a>(&'a [u8]);

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.0.len() < n {
            return Err(Error::Format("checkpoint truncated".into()));
        }
        let (head, tail) = self.0.split_at(n);
        self.0 = tail;
        Ok(head)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("checkpoint text is not UTF-8".into()))
    }

    fn tensor(&mut self) -> Result<(String, Tensor)> {
        let name = self.string()?;
        let rank = self.u32()?;
        let dims = (0..rank).map(|_| self.u32()).collect::<Result<Vec<_>>>()?;
        let n: usize = dims.iter().product();
        let data = self
            .take(n.checked_mul(4).ok_or_else(|| Error::Format(format!("{name}: size overflow")))?)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
            .collect();
        Ok((name, Tensor::new(dims, data)?))
    }
}

impl FcaNet {
    pub fn to_checkpoint(&self) -> Result<Vec<u8>> {
        let store = self.store();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        put_u32(&mut out, store.len() + 2 * store.bn_states().len())?;
        for (name, t) in store.names().iter().zip(store.values()) {
            put_tensor(&mut out, name, t.dims(), t.data())?;
        }
        for (name, st) in store.bn_names().iter().zip(store.bn_states()) {
            put_tensor(&mut out, &format!("{name}{RUNNING_MEAN}"), &[st.channels()], &st.running_mean)?;
            put_tensor(&mut out, &format!("{name}{RUNNING_VAR}"), &[st.channels()], &st.running_var)?;
        }
        let text = render(self.config());
        put_u32(&mut out, text.len())?;
        out.extend_from_slice(text.as_bytes());
        Ok(out)
    }

    /// Rebuilds the network described by the embedded configuration and
    /// loads every tensor into it.
    pub fn from_checkpoint(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader(bytes);
        if r.take(4)? != MAGIC {
            return Err(Error::Format("not a checkpoint file".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION as usize {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let count = r.u32()?;
        let tensors = (0..count).map(|_| r.tensor()).collect::<Result<Vec<_>>>()?;
        let mut cfg = ModelConfig::default();
        apply(&mut cfg, &r.string()?)?;
        if !r.0.is_empty() {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }

        let mut net = FcaNet::build(&cfg, 0)?;
        let store = net.store_mut();
        let expected = store.len() + 2 * store.bn_states().len();
        if tensors.len() != expected {
            return Err(Error::Format(format!("checkpoint holds {} tensors, network needs {expected}", tensors.len())));
        }
        let mut bn_stats: Vec<[Option<Vec<f64>>; 2]> = vec![[None, None]; store.bn_states().len()];
        let mut loaded = vec![false; store.len()];
        for (name, t) in tensors {
            if let Some(id) = store.id(&name) {
                store.set(id, t)?;
                loaded[id.0] = true;
                continue;
            }
            let (base, slot) = if let Some(b) = name.strip_suffix(RUNNING_MEAN) {
                (b, 0)
            } else if let Some(b) = name.strip_suffix(RUNNING_VAR) {
                (b, 1)
            } else {
                return Err(Error::Format(format!("unexpected tensor {name}")));
            };
            let idx = store
                .bn_names()
                .iter()
                .position(|n| n == base)
                .ok_or_else(|| Error::Format(format!("unexpected tensor {name}")))?;
            bn_stats[idx][slot] = Some(t.into_data());
        }
        if let Some(i) = loaded.iter().position(|l| !l) {
            return Err(Error::Format(format!("checkpoint lacks {}", store.names()[i])));
        }
        for (i, [mean, var]) in bn_stats.into_iter().enumerate() {
            let (Some(mean), Some(var)) = (mean, var) else {
                return Err(Error::Format(format!("checkpoint lacks statistics for {}", store.bn_names()[i])));
            };
            store.set_bn_state(BnId(i), mean, var)?;
        }
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, self.to_checkpoint()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes =
            fs::read(path).map_err(|e| Error::config(format!("cannot read checkpoint {}: {e}", path.display())))?;
        FcaNet::from_checkpoint(&bytes)
    }
}
