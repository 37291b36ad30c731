use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::GroupedDataset;

use super::config::Sampler;

/// Draws example positions from a dataset according to a [`Sampler`].
#[derive(Debug, Clone)]
pub struct BatchSampler<'a> {
    kind: Sampler,
    dataset: &'a GroupedDataset,
    perm: Vec<usize>,
    cursor: usize,
}

impl<'a> BatchSampler<'a> {
    pub fn new(kind: Sampler, dataset: &'a GroupedDataset) -> Self {
        Self {
            kind,
            dataset,
            perm: (0..dataset.len()).collect(),
            cursor: dataset.len(),
        }
    }

    /// One example position.
    pub fn draw_one<R: Rng + ?Sized>(&mut self, rng: &mut R) -> usize {
        match self.kind {
            Sampler::Uniform => rng.random_range(0..self.dataset.len()),
            Sampler::GroupBalanced => {
                let m = self.dataset.num_groups();
                // a single group needs no draw, so m = 1 consumes the rng
                // exactly like the uniform sampler
                let g = if m > 1 { rng.random_range(0..m) } else { 0 };
                let members = self.dataset.group_members(g);
                members[rng.random_range(0..members.len())]
            }
            Sampler::Shuffle => {
                if self.cursor >= self.perm.len() {
                    self.perm.shuffle(rng);
                    self.cursor = 0;
                }
                self.cursor += 1;
                self.perm[self.cursor - 1]
            }
        }
    }

    /// Replaces `out` with the next batch. Shuffle batches never straddle an
    /// epoch boundary, so the last batch of an epoch may be short.
    pub fn draw_batch<R: Rng + ?Sized>(&mut self, rng: &mut R, size: usize, out: &mut Vec<usize>) {
        out.clear();
        let take = match self.kind {
            Sampler::Shuffle => {
                if self.cursor >= self.perm.len() {
                    self.perm.shuffle(rng);
                    self.cursor = 0;
                }
                size.min(self.perm.len() - self.cursor)
            }
            _ => size,
        };
        for _ in 0..take {
            out.push(self.draw_one(rng));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Example;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn skewed() -> GroupedDataset {
        let mut ex = Vec::new();
        for (g, n) in [90usize, 5, 3, 2].into_iter().enumerate() {
            for _ in 0..n {
                ex.push(Example::new(vec![0.0], g % 2, g));
            }
        }
        GroupedDataset::new(ex, 4, 1, 2).unwrap()
    }

    #[test]
    fn group_balanced_frequencies_are_uniform() {
        let ds = skewed();
        let mut s = BatchSampler::new(Sampler::GroupBalanced, &ds);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut counts = [0usize; 4];
        let draws = 200_000;
        for _ in 0..draws {
            counts[ds.examples()[s.draw_one(&mut rng)].group] += 1;
        }
        for c in counts {
            assert!((c as f64 / draws as f64 - 0.25).abs() < 0.01);
        }
    }

    #[test]
    fn shuffle_covers_each_epoch_once() {
        let ds = skewed();
        let mut s = BatchSampler::new(Sampler::Shuffle, &ds);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut batch = Vec::new();
        let mut seen = Vec::new();
        for _ in 0..(100usize).div_ceil(30) {
            s.draw_batch(&mut rng, 30, &mut batch);
            seen.extend_from_slice(&batch);
        }
        assert_eq!(batch.len(), 10);
        seen.sort_unstable();
        assert_eq!(seen, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn single_group_balanced_matches_uniform() {
        let ds = GroupedDataset::new(
            (0..17)
                .map(|i| Example::new(vec![i as f64], 0, 0))
                .collect(),
            1,
            1,
            2,
        )
        .unwrap();
        let mut a = BatchSampler::new(Sampler::Uniform, &ds);
        let mut b = BatchSampler::new(Sampler::GroupBalanced, &ds);
        let mut ra = ChaCha8Rng::seed_from_u64(8);
        let mut rb = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..1000 {
            assert_eq!(a.draw_one(&mut ra), b.draw_one(&mut rb));
        }
    }
}
