use std::fmt;

use super::operators::OperatorKind;
use crate::error::{Error, Result};

/// One deployable (operator assignment, exit) combination.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct VariantConfig {
    pub variant_id: String,
    pub operators: Vec<OperatorKind>,
    pub exit_id: usize,
}

impl VariantConfig {
    pub fn new(operators: Vec<OperatorKind>, exit_id: usize) -> Self {
        let variant_id = variant_id(&operators, exit_id);
        Self {
            variant_id,
            operators,
            exit_id,
        }
    }

    /// Inverse of the id format `slot1=<op>|slot2=<op>|...|exit=<E>`.
    pub fn parse(id: &str) -> Result<Self> {
        let bad = || Error::invalid(format!("malformed variant id `{id}`"));
        let mut parts: Vec<&str> = id.split('|').collect();
        let exit_part = parts.pop().ok_or_else(bad)?;
        let exit_id: usize = exit_part
            .strip_prefix("exit=")
            .and_then(|e| e.parse().ok())
            .ok_or_else(bad)?;
        let mut operators = Vec::with_capacity(parts.len());
        for (i, p) in parts.iter().enumerate() {
            let (slot, op) = p.split_once('=').ok_or_else(bad)?;
            if slot != format!("slot{}", i + 1) {
                return Err(bad());
            }
            operators.push(op.parse()?);
        }
        let v = Self::new(operators, exit_id);
        if v.variant_id != id {
            return Err(bad());
        }
        Ok(v)
    }

    /// `;`-joined operator names, as written to variant CSV exports.
    pub fn slot_ops(&self) -> String {
        self.operators.iter().map(|o| o.name()).collect::<Vec<_>>().join(";")
    }

    /// The same operator assignment at another exit.
    pub fn with_exit(&self, exit_id: usize) -> Self {
        Self::new(self.operators.clone(), exit_id)
    }
}

impl fmt::Display for VariantConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.variant_id)
    }
}

pub fn variant_id(operators: &[OperatorKind], exit_id: usize) -> String {
    let mut s = String::new();
    for (i, op) in operators.iter().enumerate() {
        s.push_str(&format!("slot{}={}|", i + 1, op.name()));
    }
    s.push_str(&format!("exit={exit_id}"));
    s
}

/// Mixed-radix enumeration of operator assignments (slot 1 most
/// significant, operators in pool order) with the exit as the innermost
/// digit, truncated to `budget`.
pub fn enumerate(pool: &[OperatorKind], slots: usize, exits: usize, budget: usize) -> Vec<VariantConfig> {
    let mut out = Vec::new();
    if pool.is_empty() || exits == 0 {
        return out;
    }
    let mut digits = vec![0usize; slots];
    'outer: loop {
        let ops: Vec<OperatorKind> = digits.iter().map(|d| pool[*d]).collect();
        for exit in 1..=exits {
            if out.len() >= budget {
                break 'outer;
            }
            out.push(VariantConfig::new(ops.clone(), exit));
        }
        // increment, least significant digit last
        let mut i = slots;
        loop {
            if i == 0 {
                break 'outer;
            }
            i -= 1;
            digits[i] += 1;
            if digits[i] < pool.len() {
                break;
            }
            digits[i] = 0;
        }
    }
    out
}

/// Variant list export with header `variant_id,slot_ops,exit_id`.
pub fn write_variant_csv<W: std::io::Write>(out: W, variants: &[VariantConfig]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["variant_id", "slot_ops", "exit_id"])?;
    for v in variants {
        w.write_record([v.variant_id.as_str(), &v.slot_ops(), &v.exit_id.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Full enumeration size `|pool|^slots × exits`, saturating.
pub fn enumeration_size(pool: usize, slots: usize, exits: usize) -> usize {
    (0..slots)
        .try_fold(exits, |acc, _| acc.checked_mul(pool))
        .unwrap_or(usize::MAX)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn id_format_and_parse() {
        let v = VariantConfig::new(vec![OperatorKind::BaselineConv, OperatorKind::GroupedShuffle], 2);
        assert_eq!(v.variant_id, "slot1=baseline_conv|slot2=grouped_shuffle|exit=2");
        assert_eq!(VariantConfig::parse(&v.variant_id).unwrap(), v);
        assert!(VariantConfig::parse("slot2=baseline_conv|exit=1").is_err());
        assert!(VariantConfig::parse("exit=x").is_err());
    }

    #[test]
    fn counts() {
        let all = OperatorKind::ALL;
        assert_eq!(enumerate(&all, 3, 4, usize::MAX).len(), 256);
        assert_eq!(enumerate(&all, 4, 4, usize::MAX).len(), 1024);
        assert_eq!(enumeration_size(4, 4, 4), 1024);
        assert_eq!(enumerate(&all[..1], 1, 1, usize::MAX).len(), 1);
        assert!(enumerate(&all, 2, 2, 0).is_empty());
    }

    #[test]
    fn truncation_is_a_prefix() {
        let all = OperatorKind::ALL;
        let full = enumerate(&all, 4, 4, usize::MAX);
        let ten = enumerate(&all, 4, 4, 10);
        assert_eq!(&full[..10], &ten[..]);
        let ids: HashSet<_> = full.iter().map(|v| v.variant_id.clone()).collect();
        assert_eq!(ids.len(), full.len());
        // exit is the innermost digit
        assert_eq!(ten[0].exit_id, 1);
        assert_eq!(ten[3].exit_id, 4);
        assert_eq!(ten[4].operators[3], OperatorKind::DepthwiseSeparable);
    }
}
