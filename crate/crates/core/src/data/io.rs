//! Dataset file layout, all integers and reals little-endian:
//!
//! | field | encoding |
//! |---|---|
//! | magic | `SPOTDATA` |
//! | version | `u8` |
//! | env name, regime name | `u16` length + UTF-8 |
//! | state_dim, action_dim | `u16` each |
//! | count | `u64` |
//! | flags | `u8`: bit 0 reward shifted, bit 1 normalized |
//! | mean, std | `state_dim` `f64` each, only when normalized |
//! | episode count + lengths | `u64` + `u64` each |
//! | records | `u16` state dim, `u16` action dim, state, action, reward, next state (`f64`), terminal (`u8`) |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{NormalizationStats, OfflineDataset, Regime, Transition};
use crate::envs::EnvKind;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"SPOTDATA";
pub const DATASET_VERSION: u8 = 1;
const FLAG_SHIFTED: u8 = 1;
const FLAG_NORMALIZED: u8 = 2;

pub fn save(dataset: &OfflineDataset, path: &Path) -> Result<()> {
    write_dataset(dataset, BufWriter::new(File::create(path)?))
}

pub fn load(path: &Path) -> Result<OfflineDataset> {
    read_dataset(BufReader::new(File::open(path)?))
}

pub fn write_dataset(dataset: &OfflineDataset, mut out: impl Write) -> Result<()> {
    let spec = dataset.env.spec();
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.push(DATASET_VERSION);
    for name in [dataset.env.name(), dataset.regime.name()] {
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
    }
    buf.extend_from_slice(&(spec.state_dim as u16).to_le_bytes());
    buf.extend_from_slice(&(spec.action_dim as u16).to_le_bytes());
    buf.extend_from_slice(&(dataset.len() as u64).to_le_bytes());
    let mut flags = 0;
    if dataset.reward_shifted {
        flags |= FLAG_SHIFTED;
    }
    if dataset.normalization.is_some() {
        flags |= FLAG_NORMALIZED;
    }
    buf.push(flags);
    if let Some(stats) = &dataset.normalization {
        for v in stats.mean.iter().chain(&stats.std) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf.extend_from_slice(&(dataset.episode_lengths.len() as u64).to_le_bytes());
    for &len in &dataset.episode_lengths {
        buf.extend_from_slice(&(len as u64).to_le_bytes());
    }
    for t in &dataset.transitions {
        buf.extend_from_slice(&(t.state.len() as u16).to_le_bytes());
        buf.extend_from_slice(&(t.action.len() as u16).to_le_bytes());
        let reals = t
            .state
            .iter()
            .chain(&t.action)
            .chain(std::iter::once(&t.reward))
            .chain(&t.next_state);
        for v in reals {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.push(u8::from(t.terminal));
    }
    out.write_all(&buf)?;
    out.flush()?;
    Ok(())
}

pub fn read_dataset(mut input: impl Read) -> Result<OfflineDataset> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let mut r = Reader { bytes: &bytes, pos: 0 };

    if r.take(MAGIC.len(), "dataset magic")? != MAGIC {
        return Err(Error::Format("not a dataset file (bad magic)".into()));
    }
    let version = r.u8("dataset version")?;
    if version != DATASET_VERSION {
        return Err(Error::Version {
            found: version,
            expected: DATASET_VERSION,
        });
    }
    let env = EnvKind::from_name(&r.string("environment name")?)
        .map_err(|e| Error::Format(e.to_string()))?;
    let regime = Regime::from_name(&r.string("regime name")?)
        .map_err(|e| Error::Format(e.to_string()))?;
    let spec = env.spec();
    let state_dim = r.u16("state dim")? as usize;
    let action_dim = r.u16("action dim")? as usize;
    if state_dim != spec.state_dim || action_dim != spec.action_dim {
        return Err(Error::Dimension(format!(
            "header dims ({state_dim}, {action_dim}) do not match {env} ({}, {})",
            spec.state_dim, spec.action_dim
        )));
    }
    let count = r.u64("record count")? as usize;
    let flags = r.u8("flags")?;
    let normalization = if flags & FLAG_NORMALIZED != 0 {
        let mean = r.reals(state_dim, "normalization mean")?;
        let std = r.reals(state_dim, "normalization std")?;
        Some(NormalizationStats { mean, std })
    } else {
        None
    };
    let episodes = r.u64("episode count")? as usize;
    let episode_lengths = (0..episodes)
        .map(|_| r.u64("episode length").map(|l| l as usize))
        .collect::<Result<Vec<_>>>()?;
    if episode_lengths.iter().sum::<usize>() != count {
        return Err(Error::Format(format!(
            "episode lengths cover {} records, header says {count}",
            episode_lengths.iter().sum::<usize>()
        )));
    }

    let mut transitions = Vec::with_capacity(count.min(bytes.len()));
    for i in 0..count {
        let s_dim = r.u16("record state dim")? as usize;
        let a_dim = r.u16("record action dim")? as usize;
        if s_dim != state_dim || a_dim != action_dim {
            return Err(Error::Dimension(format!(
                "record {i} has dims ({s_dim}, {a_dim}), header says ({state_dim}, {action_dim})"
            )));
        }
        let state = r.reals(state_dim, "record")?;
        let action = r.reals(action_dim, "record")?;
        let reward = r.reals(1, "record")?[0];
        let next_state = r.reals(state_dim, "record")?;
        let terminal = match r.u8("record")? {
            0 => false,
            1 => true,
            other => return Err(Error::Format(format!("record {i} terminal flag {other}"))),
        };
        transitions.push(Transition {
            state,
            action,
            reward,
            next_state,
            terminal,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after last record".into()));
    }
    Ok(OfflineDataset {
        env,
        regime,
        transitions,
        episode_lengths,
        reward_shifted: flags & FLAG_SHIFTED != 0,
        normalization,
    })
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(Error::Truncated(what))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &'static str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn reals(&mut self, n: usize, what: &'static str) -> Result<Vec<f64>> {
        Ok(self
            .take(n * 8, what)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn string(&mut self, what: &'static str) -> Result<String> {
        let len = self.u16(what)? as usize;
        String::from_utf8(self.take(len, what)?.to_vec())
            .map_err(|_| Error::Format(format!("{what} is not UTF-8")))
    }
}
