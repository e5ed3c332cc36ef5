//! Performance Index and Predictive Performance tables over B+ tree indices.

mod bptree;

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;

use ordered_float::OrderedFloat;
use sha2::{Digest, Sha256};

pub use bptree::BPlusTree;

use crate::elastic::{ElasticNetwork, VariantConfig};
use crate::profiler::{profile_variant, DeviceProfile, LatencyCalibration};
use crate::{Error, Result};

pub const TREE_ORDER: usize = 16;
pub const MAGIC: &[u8; 5] = b"ADPT1";
pub const FORMAT_VERSION: u8 = 1;
pub const ID_BYTES: usize = 160;
const RECORD_BYTES: usize = ID_BYTES + 5 * 8;

/// Metric value with the record id as a tie-break, so equal metrics stay
/// distinct keys.
pub type MetricKey = (OrderedFloat<f64>, u32);

#[derive(Clone, Debug, PartialEq)]
pub struct PerfRecord {
    pub variant_id: String,
    pub params: u64,
    pub storage: u64,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictiveRecord {
    pub variant_id: String,
    pub latency_s: f64,
    pub energy_j: f64,
}

/// Immutable tables plus latency- and energy-keyed trees over shared
/// record ids. Record ids are positions in variant_id order.
#[derive(Clone, Debug)]
pub struct PerfTables {
    perf: Vec<PerfRecord>,
    predictive: Vec<PredictiveRecord>,
    exits: Vec<usize>,
    latency: BPlusTree<MetricKey, u32>,
    energy: BPlusTree<MetricKey, u32>,
}

fn check_metric(name: &str, id: &str, v: f64) -> Result<()> {
    if !v.is_finite() || v < 0.0 {
        return Err(Error::invalid(format!("{id}: {name} {v} must be finite and >= 0")));
    }
    Ok(())
}

impl PerfTables {
    pub fn from_records(mut rows: Vec<(PerfRecord, PredictiveRecord)>) -> Result<Self> {
        for (p, q) in &rows {
            if p.variant_id != q.variant_id {
                return Err(Error::invalid(format!(
                    "record pair mismatch: {} vs {}",
                    p.variant_id, q.variant_id
                )));
            }
            if p.variant_id.len() > ID_BYTES || p.variant_id.contains('\0') {
                return Err(Error::invalid(format!("variant id {:?} does not fit the table format", p.variant_id)));
            }
            if !(0.0..=1.0).contains(&p.accuracy) {
                return Err(Error::invalid(format!("{}: accuracy {} outside [0,1]", p.variant_id, p.accuracy)));
            }
            check_metric("latency", &q.variant_id, q.latency_s)?;
            check_metric("energy", &q.variant_id, q.energy_j)?;
        }
        rows.sort_by(|a, b| a.0.variant_id.cmp(&b.0.variant_id));
        if let Some(w) = rows.windows(2).find(|w| w[0].0.variant_id == w[1].0.variant_id) {
            return Err(Error::invalid(format!("duplicate variant id {}", w[0].0.variant_id)));
        }
        if rows.len() > u32::MAX as usize {
            return Err(Error::invalid("too many records"));
        }
        let mut latency = BPlusTree::new(TREE_ORDER);
        let mut energy = BPlusTree::new(TREE_ORDER);
        let (perf, predictive): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
        for (i, q) in predictive.iter().enumerate() {
            let id = i as u32;
            latency.insert((OrderedFloat(q.latency_s), id), id);
            energy.insert((OrderedFloat(q.energy_j), id), id);
        }
        let exits = perf.iter().map(|p| exit_suffix(&p.variant_id)).collect();
        Ok(Self {
            perf,
            predictive,
            exits,
            latency,
            energy,
        })
    }

    pub fn len(&self) -> usize {
        self.perf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perf.is_empty()
    }

    pub fn perf_records(&self) -> &[PerfRecord] {
        &self.perf
    }

    pub fn predictive_records(&self) -> &[PredictiveRecord] {
        &self.predictive
    }

    pub fn record(&self, id: u32) -> (&PerfRecord, &PredictiveRecord) {
        (&self.perf[id as usize], &self.predictive[id as usize])
    }

    /// Exit encoded in the variant id's `exit=N` suffix, 0 when absent.
    pub fn exit_of(&self, id: u32) -> usize {
        self.exits[id as usize]
    }

    pub fn id_of(&self, variant_id: &str) -> Option<u32> {
        self.perf
            .binary_search_by(|p| p.variant_id.as_str().cmp(variant_id))
            .ok()
            .map(|i| i as u32)
    }

    pub fn latency_tree(&self) -> &BPlusTree<MetricKey, u32> {
        &self.latency
    }

    pub fn energy_tree(&self) -> &BPlusTree<MetricKey, u32> {
        &self.energy
    }

    /// Record ids with `lo <= latency <= hi`, in ascending latency order.
    pub fn latency_range(&self, lo: f64, hi: f64) -> Result<Vec<u32>> {
        metric_range(&self.latency, lo, hi)
    }

    /// Record ids with `lo <= energy <= hi`, in ascending energy order.
    pub fn energy_range(&self, lo: f64, hi: f64) -> Result<Vec<u32>> {
        metric_range(&self.energy, lo, hi)
    }

    /// Ids of variants with latency in [0, t] and energy in [0, e_b], sorted.
    /// Negative or NaN budgets admit nothing.
    pub fn candidates_within(&self, t: f64, e_b: f64) -> Vec<u32> {
        if !(t >= 0.0 && e_b >= 0.0) {
            return Vec::new();
        }
        let by_latency: BTreeSet<u32> = metric_range(&self.latency, 0.0, t)
            .expect("bounds checked")
            .into_iter()
            .collect();
        let mut out: Vec<u32> = metric_range(&self.energy, 0.0, e_b)
            .expect("bounds checked")
            .into_iter()
            .filter(|id| by_latency.contains(id))
            .collect();
        out.sort_unstable();
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(10 + self.len() * RECORD_BYTES + 4);
        out.extend_from_slice(MAGIC);
        out.push(FORMAT_VERSION);
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        for (p, q) in self.perf.iter().zip(&self.predictive) {
            let mut id = [0u8; ID_BYTES];
            id[..p.variant_id.len()].copy_from_slice(p.variant_id.as_bytes());
            out.extend_from_slice(&id);
            out.extend_from_slice(&p.params.to_le_bytes());
            out.extend_from_slice(&p.storage.to_le_bytes());
            out.extend_from_slice(&p.accuracy.to_le_bytes());
            out.extend_from_slice(&q.latency_s.to_le_bytes());
            out.extend_from_slice(&q.energy_j.to_le_bytes());
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 14 {
            return Err(Error::Corrupt("table file shorter than its header".into()));
        }
        if &bytes[..5] != MAGIC {
            return Err(Error::Corrupt("bad table magic".into()));
        }
        if bytes[5] != FORMAT_VERSION {
            return Err(Error::Corrupt(format!("unsupported table version {}", bytes[5])));
        }
        let count = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes")) as usize;
        let expected = count
            .checked_mul(RECORD_BYTES)
            .and_then(|n| n.checked_add(14))
            .ok_or_else(|| Error::Corrupt("record count overflows".into()))?;
        if bytes.len() != expected {
            return Err(Error::Corrupt(format!(
                "table file is {} bytes, expected {expected} for {count} records",
                bytes.len()
            )));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(trailer.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err(Error::Corrupt("table checksum mismatch".into()));
        }
        let u64_at = |b: &[u8], o: usize| u64::from_le_bytes(b[o..o + 8].try_into().expect("8 bytes"));
        let mut rows = Vec::with_capacity(count);
        for rec in body[10..].chunks_exact(RECORD_BYTES) {
            let id_len = rec[..ID_BYTES].iter().position(|b| *b == 0).unwrap_or(ID_BYTES);
            let variant_id = std::str::from_utf8(&rec[..id_len])
                .map_err(|_| Error::Corrupt("variant id is not UTF-8".into()))?
                .to_string();
            let o = ID_BYTES;
            rows.push((
                PerfRecord {
                    variant_id: variant_id.clone(),
                    params: u64_at(rec, o),
                    storage: u64_at(rec, o + 8),
                    accuracy: f64::from_bits(u64_at(rec, o + 16)),
                },
                PredictiveRecord {
                    variant_id,
                    latency_s: f64::from_bits(u64_at(rec, o + 24)),
                    energy_j: f64::from_bits(u64_at(rec, o + 32)),
                },
            ));
        }
        Self::from_records(rows).map_err(|e| Error::Corrupt(format!("invalid table contents: {e}")))
    }

    /// Write via a temporary file and rename, so readers never see a
    /// partial table.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(self.to_bytes()).into()
    }
}

fn exit_suffix(variant_id: &str) -> usize {
    variant_id
        .rsplit('|')
        .next()
        .and_then(|last| last.strip_prefix("exit="))
        .and_then(|n| n.parse().ok())
        .unwrap_or(0)
}

fn metric_range(tree: &BPlusTree<MetricKey, u32>, lo: f64, hi: f64) -> Result<Vec<u32>> {
    if lo.is_nan() || hi.is_nan() {
        return Err(Error::invalid("NaN range bound"));
    }
    let lo = (OrderedFloat(lo), 0);
    let hi = (OrderedFloat(hi), u32::MAX);
    Ok(tree.range(&lo, &hi)?.into_iter().map(|(_, v)| *v).collect())
}

/// Profile every variant on `device` and build the tables. Variants without
/// an entry in `accuracy` are skipped with a warning.
pub fn build_tables(
    net: &mut ElasticNetwork,
    variants: &[VariantConfig],
    device: &DeviceProfile,
    calib: &LatencyCalibration,
    accuracy: &HashMap<String, f64>,
) -> Result<PerfTables> {
    let restore = net.active_variant();
    let mut rows = Vec::with_capacity(variants.len());
    for v in variants {
        let Some(&acc) = accuracy.get(&v.variant_id) else {
            log::warn!("no accuracy for variant {}; excluded from tables", v.variant_id);
            continue;
        };
        let prof = profile_variant(net, v, device, calib)?;
        rows.push((
            PerfRecord {
                variant_id: v.variant_id.clone(),
                params: prof.intrinsics.params,
                storage: prof.intrinsics.storage,
                accuracy: acc,
            },
            PredictiveRecord {
                variant_id: v.variant_id.clone(),
                latency_s: prof.latency_s,
                energy_j: prof.energy_j,
            },
        ));
    }
    net.apply_variant(&restore)?;
    PerfTables::from_records(rows)
}
