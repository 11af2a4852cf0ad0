//! Named parameter storage and the `AFCK` checkpoint container.
//!
//! A checkpoint is the magic `AFCK` followed by records until end of file. Each
//! record is a u32 LE name length, the UTF-8 name, then one `AFT1` tensor.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{read_aft1, write_aft1, Element, Tensor};

pub const AFCK_MAGIC: &[u8; 4] = b"AFCK";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamKind {
    ConvWeight,
    Bias,
    BnGamma,
    BnBeta,
    RunningMean,
    RunningVar,
}

impl ParamKind {
    pub fn is_learnable(self) -> bool {
        !matches!(self, ParamKind::RunningMean | ParamKind::RunningVar)
    }

    /// Only convolution weights receive weight decay.
    pub fn takes_weight_decay(self) -> bool {
        self == ParamKind::ConvWeight
    }
}

#[derive(Clone, Debug)]
struct Entry<T> {
    name: String,
    kind: ParamKind,
    value: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct ParamStore<T: Element = f32> {
    entries: Vec<Entry<T>>,
    index: HashMap<String, usize>,
}

impl<T: Element> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn register(&mut self, name: impl Into<String>, kind: ParamKind, value: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::validation(format!("parameter {name} registered twice")));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(Entry { name, kind, value });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.entries[i].value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index.get(name).map(|&i| &mut self.entries[i].value)
    }

    pub fn kind(&self, name: &str) -> Option<ParamKind> {
        self.index.get(name).map(|&i| self.entries[i].kind)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor<T>> {
        self.get(name)
            .ok_or_else(|| Error::Contract(format!("parameter {name} is not registered")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, ParamKind, &Tensor<T>)> {
        self.entries.iter().map(|e| (e.name.as_str(), e.kind, &e.value))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, ParamKind, &mut Tensor<T>)> {
        self.entries.iter_mut().map(|e| (e.name.as_str(), e.kind, &mut e.value))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    /// Total element count of learnable tensors.
    pub fn learnable_elements(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.kind.is_learnable())
            .map(|e| e.value.numel())
            .sum()
    }

    pub fn set(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let slot = self
            .get_mut(name)
            .ok_or_else(|| Error::Contract(format!("parameter {name} is not registered")))?;
        if slot.shape() != value.shape() {
            return Err(Error::Contract(format!(
                "parameter {name}: shape {:?} cannot replace {:?}",
                value.shape(),
                slot.shape()
            )));
        }
        *slot = value;
        Ok(())
    }

    pub fn cast<U: Element>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| Entry {
                    name: e.name.clone(),
                    kind: e.kind,
                    value: e.value.cast(),
                })
                .collect(),
            index: self.index.clone(),
        }
    }

    /// Copy values for every name present in both stores.
    pub fn copy_shared_from(&mut self, other: &ParamStore<T>) -> usize {
        let mut copied = 0;
        for e in &mut self.entries {
            if let Some(v) = other.get(&e.name) {
                if v.shape() == e.value.shape() {
                    e.value = v.clone();
                    copied += 1;
                }
            }
        }
        copied
    }

    /// Overwrite every registered tensor from checkpoint records. Records must
    /// cover the store exactly; names starting with `@` are metadata and skipped.
    pub fn load_records(&mut self, records: &[(String, Tensor<f32>)]) -> Result<()> {
        let mut problems = Vec::new();
        let mut seen = vec![false; self.entries.len()];
        for (name, t) in records.iter().filter(|(n, _)| !n.starts_with('@')) {
            match self.index.get(name) {
                None => problems.push(format!("checkpoint holds unknown parameter {name}")),
                Some(&i) if self.entries[i].value.shape() != t.shape() => {
                    seen[i] = true;
                    problems.push(format!(
                        "parameter {name}: checkpoint shape {:?}, model shape {:?}",
                        t.shape(),
                        self.entries[i].value.shape()
                    ))
                }
                Some(&i) => {
                    self.entries[i].value = t.cast();
                    seen[i] = true;
                }
            }
        }
        for (e, s) in self.entries.iter().zip(&seen) {
            if !s {
                problems.push(format!("checkpoint lacks parameter {}", e.name));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }

    pub fn to_records(&self) -> Vec<(String, Tensor<f32>)> {
        self.entries.iter().map(|e| (e.name.clone(), e.value.cast())).collect()
    }
}

pub fn write_checkpoint<W: Write>(out: &mut W, records: &[(String, Tensor<f32>)]) -> Result<()> {
    let io = |source| Error::Stream {
        context: "writing AFCK checkpoint",
        source,
    };
    out.write_all(AFCK_MAGIC).map_err(io)?;
    for (name, t) in records {
        out.write_all(&(name.len() as u32).to_le_bytes()).map_err(io)?;
        out.write_all(name.as_bytes()).map_err(io)?;
        write_aft1(out, t)?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(input: &mut R) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes).map_err(|source| Error::Stream {
        context: "reading AFCK checkpoint",
        source,
    })?;
    if bytes.len() < 4 || &bytes[..4] != AFCK_MAGIC {
        return Err(Error::Parse {
            offset: 0,
            message: "missing AFCK magic".into(),
        });
    }
    let mut pos = 4;
    let mut records = Vec::new();
    while pos < bytes.len() {
        if bytes.len() - pos < 4 {
            return Err(Error::Parse {
                offset: pos,
                message: "truncated record name length".into(),
            });
        }
        let len = u32::from_le_bytes(bytes[pos..pos + 4].try_into().expect("4 bytes")) as usize;
        pos += 4;
        if bytes.len() - pos < len {
            return Err(Error::Parse {
                offset: pos,
                message: format!("record name of {len} bytes runs past end of file"),
            });
        }
        let name = std::str::from_utf8(&bytes[pos..pos + len])
            .map_err(|e| Error::Parse {
                offset: pos,
                message: format!("record name is not UTF-8: {e}"),
            })?
            .to_owned();
        pos += len;
        let mut rest = &bytes[pos..];
        let before = rest.len();
        let t = read_aft1(&mut rest, pos)?;
        pos += before - rest.len();
        records.push((name, t));
    }
    Ok(records)
}

pub fn save_checkpoint(path: &Path, records: &[(String, Tensor<f32>)]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_checkpoint(&mut w, records)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<(String, Tensor<f32>)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&mut BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore<f32> {
        let mut s = ParamStore::new();
        s.register("a.w", ParamKind::ConvWeight, Tensor::from_fn([2, 1, 1, 1], |i| i as f32)).unwrap();
        s.register("a.bn.mean", ParamKind::RunningMean, Tensor::zeros([2])).unwrap();
        s
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = store();
        assert!(s.register("a.w", ParamKind::Bias, Tensor::zeros([1])).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let s = store();
        let mut recs = s.to_records();
        recs.push(("@meta".into(), Tensor::zeros([0])));
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &recs).unwrap();
        assert_eq!(&buf[..4], b"AFCK");
        let back = read_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(back, recs);
        let mut fresh = store();
        fresh.get_mut("a.w").unwrap().data_mut()[0] = 9.0;
        fresh.load_records(&back).unwrap();
        assert_eq!(fresh.get("a.w"), s.get("a.w"));
    }

    #[test]
    fn load_reports_every_problem() {
        let mut s = store();
        let recs = vec![("b".to_string(), Tensor::zeros([1])), ("a.w".to_string(), Tensor::zeros([3]))];
        match s.load_records(&recs) {
            Err(Error::Validation(v)) => assert_eq!(v.len(), 3, "{v:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn truncated_checkpoint_is_parse_error() {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &store().to_records()).unwrap();
        for cut in [2, 6, 10, buf.len() - 3] {
            assert!(matches!(read_checkpoint(&mut &buf[..cut]), Err(Error::Parse { .. })), "cut {cut}");
        }
    }
}
