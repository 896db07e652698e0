//! Class-aware stochastic quadruplet sampling.
//!
//! Only labels and row indices are consulted; feature values are gathered
//! after the indices are fixed.

use std::collections::BTreeMap;

use rand::Rng;

use crate::data::Dataset;
use crate::error::{FedQuadError, Result};
use crate::numerics::Tensor;

/// Class label -> member row indices. Classes without members are absent.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ClassIndex {
    map: BTreeMap<usize, Vec<usize>>,
}

impl ClassIndex {
    pub fn get(&self, class: usize) -> Option<&[usize]> {
        self.map.get(&class).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &[usize])> {
        self.map.iter().map(|(&c, m)| (c, m.as_slice()))
    }

    pub fn classes(&self) -> impl Iterator<Item = usize> + '_ {
        self.map.keys().copied()
    }

    pub fn num_classes(&self) -> usize {
        self.map.len()
    }

    pub fn total(&self) -> usize {
        self.map.values().map(Vec::len).sum()
    }

    pub fn into_inner(self) -> BTreeMap<usize, Vec<usize>> {
        self.map
    }
}

/// Groups `indices` by `labels[index]`, keeping the order of `indices`
/// within each class.
pub fn build_class_index(indices: &[usize], labels: &[usize]) -> ClassIndex {
    let mut map: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &i in indices {
        map.entry(labels[i]).or_default().push(i);
    }
    ClassIndex { map }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Quadruplet {
    pub anchor_idx: usize,
    pub positive_idx: usize,
    pub neg1_idx: usize,
    pub neg2_idx: usize,
    pub anchor_label: usize,
}

impl Quadruplet {
    /// Checks every structural constraint against the dataset labels.
    pub fn check(&self, labels: &[usize]) -> Result<()> {
        let la = labels[self.anchor_idx];
        let (lp, l1, l2) = (
            labels[self.positive_idx],
            labels[self.neg1_idx],
            labels[self.neg2_idx],
        );
        let ok = la == self.anchor_label
            && lp == la
            && self.anchor_idx != self.positive_idx
            && l1 != la
            && l2 != la
            && l2 != l1;
        if ok {
            Ok(())
        } else {
            Err(FedQuadError::Validation(format!(
                "invalid quadruplet {self:?} with labels a={la} p={lp} n1={l1} n2={l2}"
            )))
        }
    }
}

/// Sampler over one client's class index, validated once up front.
#[derive(Debug, Clone)]
pub struct QuadrupletSampler {
    index: ClassIndex,
    classes: Vec<usize>,
    anchor_classes: Vec<usize>,
}

impl QuadrupletSampler {
    pub fn new(index: ClassIndex) -> Result<Self> {
        let classes: Vec<usize> = index.classes().collect();
        if classes.len() < 3 {
            return Err(FedQuadError::UnsatisfiableQuadruplet(format!(
                "need samples from at least 3 classes, found {}",
                classes.len()
            )));
        }
        let anchor_classes: Vec<usize> = index
            .iter()
            .filter(|(_, m)| m.len() >= 2)
            .map(|(c, _)| c)
            .collect();
        if anchor_classes.is_empty() {
            return Err(FedQuadError::UnsatisfiableQuadruplet(
                "no class has two members to form an anchor-positive pair".into(),
            ));
        }
        Ok(QuadrupletSampler {
            index,
            classes,
            anchor_classes,
        })
    }

    pub fn class_index(&self) -> &ClassIndex {
        &self.index
    }

    /// Anchor class uniform over classes with >= 2 members, members uniform
    /// within class; the two negative classes are drawn without replacement
    /// from the remaining classes.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Quadruplet {
        let k = self.anchor_classes[rng.random_range(0..self.anchor_classes.len())];
        let members = self.index.get(k).expect("anchor class present");
        let a = rng.random_range(0..members.len());
        let mut p = rng.random_range(0..members.len() - 1);
        if p >= a {
            p += 1;
        }

        let others: Vec<usize> = self.classes.iter().copied().filter(|&c| c != k).collect();
        let i1 = rng.random_range(0..others.len());
        let mut i2 = rng.random_range(0..others.len() - 1);
        if i2 >= i1 {
            i2 += 1;
        }
        let pick = |class: usize, rng: &mut R| {
            let m = self.index.get(class).expect("negative class present");
            m[rng.random_range(0..m.len())]
        };
        let neg1_idx = pick(others[i1], rng);
        let neg2_idx = pick(others[i2], rng);
        Quadruplet {
            anchor_idx: members[a],
            positive_idx: members[p],
            neg1_idx,
            neg2_idx,
            anchor_label: k,
        }
    }

    pub fn sample_many<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<Quadruplet> {
        (0..count).map(|_| self.sample(rng)).collect()
    }
}

pub fn sample_quadruplet<R: Rng + ?Sized>(index: &ClassIndex, rng: &mut R) -> Result<Quadruplet> {
    Ok(QuadrupletSampler::new(index.clone())?.sample(rng))
}

/// `B` quadruplets with the features for each role gathered into matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadrupletBatch {
    pub quadruplets: Vec<Quadruplet>,
    pub anchors: Tensor,
    pub positives: Tensor,
    pub negatives1: Tensor,
    pub negatives2: Tensor,
    pub labels: Vec<usize>,
}

impl QuadrupletBatch {
    pub fn gather(quadruplets: Vec<Quadruplet>, dataset: &Dataset) -> Self {
        let rows =
            |f: fn(&Quadruplet) -> usize| -> Vec<usize> { quadruplets.iter().map(f).collect() };
        let x = dataset.features();
        QuadrupletBatch {
            anchors: x.select_rows(&rows(|q| q.anchor_idx)),
            positives: x.select_rows(&rows(|q| q.positive_idx)),
            negatives1: x.select_rows(&rows(|q| q.neg1_idx)),
            negatives2: x.select_rows(&rows(|q| q.neg2_idx)),
            labels: rows(|q| q.anchor_label),
            quadruplets,
        }
    }

    pub fn len(&self) -> usize {
        self.quadruplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.quadruplets.is_empty()
    }
}

pub fn sample_batch<R: Rng + ?Sized>(
    sampler: &QuadrupletSampler,
    dataset: &Dataset,
    batch_size: usize,
    rng: &mut R,
) -> Result<QuadrupletBatch> {
    if batch_size == 0 {
        return Err(FedQuadError::Config("batch size must be positive".into()));
    }
    Ok(QuadrupletBatch::gather(
        sampler.sample_many(batch_size, rng),
        dataset,
    ))
}
