use std::collections::BTreeMap;

use crate::data::Mask;

/// The pixels of one instance in one sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceRegion {
    pub sample: usize,
    pub instance: u8,
    pub class: usize,
    pub pixels: Vec<usize>,
}

/// Splits an instance mask into regions (id 0 is skipped); `class_of` labels each region
/// from its first pixel.
pub fn instance_regions(
    sample: usize,
    instances: &Mask,
    class_of: impl Fn(u8, usize) -> usize,
) -> Vec<InstanceRegion> {
    let mut by_id: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
    for (i, &id) in instances.data.iter().enumerate() {
        if id != 0 {
            by_id.entry(id).or_default().push(i);
        }
    }
    by_id
        .into_iter()
        .map(|(id, pixels)| InstanceRegion {
            sample,
            instance: id,
            class: class_of(id, pixels[0]),
            pixels,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceAggregate {
    /// Unweighted mean over the instances of each class; `None` when the class has none.
    pub per_class: Vec<Option<f64>>,
    pub counts: Vec<usize>,
    /// Classes omitted because no instance of them was seen.
    pub missing: Vec<usize>,
}

/// Evaluates `metric` on every region and averages per class with equal weight per instance.
pub fn instance_aggregate(
    regions: &[InstanceRegion],
    classes: usize,
    mut metric: impl FnMut(&InstanceRegion) -> f64,
) -> InstanceAggregate {
    let mut sums = vec![0.0; classes];
    let mut counts = vec![0usize; classes];
    for r in regions.iter().filter(|r| r.class < classes) {
        sums[r.class] += metric(r);
        counts[r.class] += 1;
    }
    let per_class: Vec<Option<f64>> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &n)| (n > 0).then(|| s / n as f64))
        .collect();
    let missing = (0..classes).filter(|&c| counts[c] == 0).collect();
    InstanceAggregate {
        per_class,
        counts,
        missing,
    }
}
