use std::collections::BTreeMap;

use rand::Rng;

/// Per-class exemplar store holding indices into the training set.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MemoryBuffer {
    capacity: usize,
    per_class: BTreeMap<usize, Vec<usize>>,
}

impl MemoryBuffer {
    pub fn new(capacity: usize) -> Self {
        MemoryBuffer {
            capacity,
            per_class: BTreeMap::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn exemplars(&self, class_id: usize) -> &[usize] {
        self.per_class.get(&class_id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn classes(&self) -> impl Iterator<Item = usize> + '_ {
        self.per_class.keys().copied()
    }

    /// All stored indices, class by class in ascending class order.
    pub fn all(&self) -> Vec<usize> {
        self.per_class.values().flatten().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.per_class.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Stores up to `capacity` exemplars for each class in `task_samples`
/// (`(train index, label)` pairs), chosen uniformly without replacement.
/// Classes already in the buffer are left untouched.
pub fn update_memory(
    buffer: &mut MemoryBuffer,
    task_samples: &[(usize, usize)],
    rng: &mut impl Rng,
) {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &(idx, label) in task_samples {
        by_class.entry(label).or_default().push(idx);
    }
    for (class, indices) in by_class {
        if buffer.per_class.contains_key(&class) {
            continue;
        }
        let keep = buffer.capacity.min(indices.len());
        let mut picked: Vec<usize> = rand::seq::index::sample(rng, indices.len(), keep)
            .into_iter()
            .map(|i| indices[i])
            .collect();
        picked.sort_unstable();
        buffer.per_class.insert(class, picked);
    }
}
