use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::alignment::VisualFeatureMap;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BankEntry {
    pub features: Arc<VisualFeatureMap>,
    /// Frozen at insertion time.
    pub pseudo_label: i64,
    pub confidence: f64,
    pub insertion_index: u64,
    /// Index of the candidate set the pseudo-label was drawn from.
    pub domain: usize,
}

/// Bounded per-class store of confident pseudo-labelled samples.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank {
    capacity: usize,
    threshold: f64,
    min_total: usize,
    classes: BTreeMap<i64, Vec<BankEntry>>,
    inserted: u64,
}

impl MemoryBank {
    pub fn new(capacity: usize, threshold: f64, min_total: usize) -> Self {
        assert!(capacity >= 1, "bank capacity must be positive");
        Self { capacity, threshold, min_total, classes: BTreeMap::new(), inserted: 0 }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn min_total(&self) -> usize {
        self.min_total
    }

    /// Whether a prediction with this confidence may enter the bank.
    pub fn admits(&self, confidence: f64) -> bool {
        confidence > self.threshold
    }

    pub fn len(&self) -> usize {
        self.classes.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Enough entries for a balanced adaptation batch.
    pub fn is_ready(&self) -> bool {
        !self.is_empty() && self.len() >= self.min_total
    }

    pub fn class_entries(&self, class_id: i64) -> &[BankEntry] {
        self.classes.get(&class_id).map_or(&[], Vec::as_slice)
    }

    pub fn class_sizes(&self) -> BTreeMap<i64, usize> {
        self.classes.iter().filter(|(_, v)| !v.is_empty()).map(|(&c, v)| (c, v.len())).collect()
    }

    pub fn total_inserted(&self) -> u64 {
        self.inserted
    }

    /// Appends an entry to its pseudo-label's bank and evicts the lowest
    /// confidence entry (oldest first on ties) if the class overflows.
    /// Returns the evicted entry.
    pub fn insert(
        &mut self,
        features: Arc<VisualFeatureMap>,
        pseudo_label: i64,
        confidence: f64,
        domain: usize,
    ) -> Option<BankEntry> {
        assert!(self.admits(confidence), "bank insertion below threshold: {confidence} <= {}", self.threshold);
        let entry = BankEntry { features, pseudo_label, confidence, insertion_index: self.inserted, domain };
        self.inserted += 1;
        let bank = self.classes.entry(pseudo_label).or_default();
        bank.push(entry);
        if bank.len() <= self.capacity {
            return None;
        }
        let victim = bank
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| {
                a.confidence.total_cmp(&b.confidence).then(a.insertion_index.cmp(&b.insertion_index))
            })
            .map(|(i, _)| i)
            .unwrap();
        Some(bank.remove(victim))
    }

    /// Class-balanced batch: round-robin over non-empty classes in ascending
    /// id, one entry per class per pass, drawn without replacement.
    pub fn sample_balanced<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<&BankEntry>> {
        if self.is_empty() {
            return Err(Error::EmptyBank);
        }
        let mut queues: Vec<Vec<&BankEntry>> = self
            .classes
            .values()
            .filter(|v| !v.is_empty())
            .map(|v| {
                let mut q: Vec<&BankEntry> = v.iter().collect();
                q.shuffle(rng);
                q.reverse();
                q
            })
            .collect();
        let target = batch_size.min(self.len());
        let mut out = Vec::with_capacity(target);
        while out.len() < target {
            for q in queues.iter_mut() {
                if out.len() == target {
                    break;
                }
                if let Some(e) = q.pop() {
                    out.push(e);
                }
            }
        }
        Ok(out)
    }
}

pub fn bank_insert(bank: &mut MemoryBank, features: Arc<VisualFeatureMap>, pseudo_label: i64, confidence: f64) {
    bank.insert(features, pseudo_label, confidence, 0);
}

pub fn bank_sample_balanced<'a, R: Rng + ?Sized>(
    bank: &'a MemoryBank,
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<&'a BankEntry>> {
    bank.sample_balanced(batch_size, rng)
}
