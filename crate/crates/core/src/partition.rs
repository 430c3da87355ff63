//! Forget/remain class partitions.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A disjoint split of all class ids into a forgetting set and a remaining
/// set whose union covers every class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassPartition {
    forget: BTreeSet<usize>,
    remain: BTreeSet<usize>,
    num_classes: usize,
}

impl ClassPartition {
    /// Partition with the given forgetting set; every other class remains.
    pub fn new(forget: BTreeSet<usize>, num_classes: usize) -> Result<Self> {
        if forget.is_empty() {
            return Err(Error::invalid("forgetting set must be nonempty"));
        }
        if let Some(&bad) = forget.iter().find(|&&c| c >= num_classes) {
            return Err(Error::invalid(format!(
                "forget class {bad} out of range for {num_classes} classes"
            )));
        }
        let remain: BTreeSet<usize> = (0..num_classes).filter(|c| !forget.contains(c)).collect();
        Ok(ClassPartition {
            forget,
            remain,
            num_classes,
        })
    }

    /// Convenience single-class partition.
    pub fn single(forget_class: usize, num_classes: usize) -> Result<Self> {
        Self::new(BTreeSet::from([forget_class]), num_classes)
    }

    pub fn forget(&self) -> &BTreeSet<usize> {
        &self.forget
    }

    pub fn remain(&self) -> &BTreeSet<usize> {
        &self.remain
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }
}
