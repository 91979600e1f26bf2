//! Per-style latent queues and the contrastive objectives built on them.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};

/// Default capacity of each style queue.
pub const DEFAULT_QUEUE_CAPACITY: usize = 64;
/// Default contrastive temperature.
pub const DEFAULT_TAU: f64 = 0.07;

/// `M + 1` FIFO queues of unit-norm latents plus a pool of clean-scene
/// latents. Entries are plain vectors and never carry gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentQueueBank {
    capacity: usize,
    dim: usize,
    queues: Vec<VecDeque<Vec<f64>>>,
    clean: VecDeque<Vec<f64>>,
    clean_capacity: usize,
}

fn unit(v: &[f64]) -> Result<Vec<f64>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::NumericDomain("cannot normalize a zero or non-finite latent".into()));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

impl LatentQueueBank {
    pub fn new(styles: usize, capacity: usize, clean_capacity: usize, dim: usize) -> Result<Self> {
        if styles == 0 || capacity == 0 || clean_capacity == 0 || dim == 0 {
            return Err(Error::Validation("queue bank sizes must be positive".into()));
        }
        Ok(Self { capacity, dim, queues: vec![VecDeque::new(); styles], clean: VecDeque::new(), clean_capacity })
    }

    pub fn styles(&self) -> usize {
        self.queues.len()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn clean_capacity(&self) -> usize {
        self.clean_capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Entries of style `m`, newest first.
    pub fn queue(&self, style: usize) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.queues[style].iter().map(|v| v.as_slice())
    }

    pub fn clean_pool(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.clean.iter().map(|v| v.as_slice())
    }

    pub fn total_entries(&self) -> usize {
        self.queues.iter().map(|q| q.len()).sum()
    }

    fn check(&self, latent: &[f64]) -> Result<Vec<f64>> {
        if latent.len() != self.dim {
            return Err(Error::Shape(format!("latent has {} values, bank expects {}", latent.len(), self.dim)));
        }
        unit(latent)
    }

    /// Pushes the normalized `latent` to the front of style `style`'s queue,
    /// evicting the oldest entry when full.
    pub fn push(&mut self, style: usize, latent: &[f64]) -> Result<()> {
        if style >= self.queues.len() {
            return Err(Error::Contract(format!("unknown style {style}; bank holds {}", self.queues.len())));
        }
        let v = self.check(latent)?;
        let q = &mut self.queues[style];
        q.push_front(v);
        q.truncate(self.capacity);
        Ok(())
    }

    pub fn push_clean(&mut self, latent: &[f64]) -> Result<()> {
        let v = self.check(latent)?;
        self.clean.push_front(v);
        self.clean.truncate(self.clean_capacity);
        Ok(())
    }

    /// Unit-norm mean of style `style`'s entries.
    pub fn style_mean(&self, style: usize) -> Result<Vec<f64>> {
        let q = self.queues.get(style).ok_or_else(|| Error::Contract(format!("unknown style {style}")))?;
        if q.is_empty() {
            return Err(Error::Contract(format!("style {style} queue is empty")));
        }
        let mut mean = vec![0.0; self.dim];
        for v in q {
            for (m, x) in mean.iter_mut().zip(v) {
                *m += x;
            }
        }
        unit(&mean)
    }

    /// Key matrix of every queued entry (styles in order, newest first)
    /// followed by clean latent `clean_index`, and the style of each row
    /// (`None` for the clean row).
    fn keys(&self, clean_index: usize) -> Result<(Tensor, Vec<Option<usize>>)> {
        let clean = self
            .clean
            .get(clean_index)
            .ok_or_else(|| Error::Contract(format!("clean pool has no entry {clean_index}")))?;
        let mut data = Vec::with_capacity((self.total_entries() + 1) * self.dim);
        let mut tags = Vec::new();
        for (m, q) in self.queues.iter().enumerate() {
            for v in q {
                data.extend_from_slice(v);
                tags.push(Some(m));
            }
        }
        data.extend_from_slice(clean);
        tags.push(None);
        Ok((Tensor::new([tags.len(), self.dim], data)?, tags))
    }

    /// Contrastive loss of `query` against style `style`: positives are the
    /// style's queue, negatives every other queued entry plus clean latent
    /// `clean_index`.
    pub fn contrastive_loss(
        &self,
        tape: &mut Tape,
        query: Var,
        style: usize,
        clean_index: usize,
        tau: f64,
    ) -> Result<Var> {
        if style >= self.queues.len() {
            return Err(Error::Contract(format!("unknown style {style}")));
        }
        if self.queues[style].is_empty() {
            return Err(Error::Contract(format!("style {style} queue is empty; warm up the bank first")));
        }
        let (keys, tags) = self.keys(clean_index)?;
        self.check_query(tape, query)?;
        let mask = tags.iter().map(|t| *t == Some(style)).collect();
        let keys = tape.constant(keys);
        Ok(tape.info_nce(query, keys, mask, tau))
    }

    /// Alignment loss for a generated latent: every queued entry is a
    /// positive and clean latent `clean_index` the only negative.
    pub fn generator_alignment_loss(&self, tape: &mut Tape, query: Var, clean_index: usize, tau: f64) -> Result<Var> {
        if self.total_entries() == 0 {
            return Err(Error::Contract("all style queues are empty; warm up the bank first".into()));
        }
        let (keys, tags) = self.keys(clean_index)?;
        self.check_query(tape, query)?;
        let mask = tags.iter().map(|t| t.is_some()).collect();
        let keys = tape.constant(keys);
        Ok(tape.info_nce(query, keys, mask, tau))
    }

    fn check_query(&self, tape: &Tape, query: Var) -> Result<()> {
        if tape.value(query).len() != self.dim {
            return Err(Error::Shape(format!(
                "query has {} values, bank expects {}",
                tape.value(query).len(),
                self.dim
            )));
        }
        Ok(())
    }

    /// Flat serialization: per style the entry count then entries (newest
    /// first), then the clean pool the same way.
    pub(crate) fn to_parts(&self) -> (Vec<u64>, Vec<f64>) {
        let mut counts =
            vec![self.capacity as u64, self.clean_capacity as u64, self.dim as u64, self.queues.len() as u64];
        let mut data = Vec::new();
        for q in self.queues.iter().chain(std::iter::once(&self.clean)) {
            counts.push(q.len() as u64);
            for v in q {
                data.extend_from_slice(v);
            }
        }
        (counts, data)
    }

    pub(crate) fn from_parts(counts: &[u64], data: &[f64]) -> Result<Self> {
        let bad = || Error::Validation("corrupt queue bank record".into());
        if counts.len() < 4 {
            return Err(bad());
        }
        let (capacity, clean_capacity, dim, styles) =
            (counts[0] as usize, counts[1] as usize, counts[2] as usize, counts[3] as usize);
        if counts.len() != 4 + styles + 1 {
            return Err(bad());
        }
        let mut bank = Self::new(styles, capacity, clean_capacity, dim)?;
        let mut offset = 0;
        for (slot, &len) in counts[4..].iter().enumerate() {
            let mut q = VecDeque::new();
            for _ in 0..len {
                let v = data.get(offset..offset + dim).ok_or_else(bad)?;
                q.push_back(v.to_vec());
                offset += dim;
            }
            if slot < styles {
                bank.queues[slot] = q;
            } else {
                bank.clean = q;
            }
        }
        if offset != data.len() {
            return Err(bad());
        }
        Ok(bank)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(dim: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        v
    }

    fn loss_of(bank: &LatentQueueBank, q: &[f64], style: usize) -> f64 {
        let mut tape = Tape::new();
        let qv = tape.leaf(Tensor::param([q.len()], q.to_vec()).unwrap());
        let l = bank.contrastive_loss(&mut tape, qv, style, 0, DEFAULT_TAU).unwrap();
        tape.value(l).item()
    }

    #[test]
    fn fifo_semantics() {
        let mut bank = LatentQueueBank::new(3, 2, 4, 3).unwrap();
        bank.push(1, &e(3, 0)).unwrap();
        assert_eq!(bank.queue(1).len(), 1);
        bank.push(1, &e(3, 1)).unwrap();
        bank.push(1, &e(3, 2)).unwrap();
        let q: Vec<_> = bank.queue(1).collect();
        assert_eq!(q, vec![e(3, 2).as_slice(), e(3, 1).as_slice()]);
        assert_eq!(bank.queue(0).len(), 0);
        assert_eq!(bank.queue(2).len(), 0);
        assert!(matches!(bank.push(3, &e(3, 0)), Err(Error::Contract(_))));
    }

    #[test]
    fn entries_are_normalized() {
        let mut bank = LatentQueueBank::new(1, 2, 2, 2).unwrap();
        bank.push(0, &[3.0, 4.0]).unwrap();
        assert_eq!(bank.queue(0).next().unwrap(), &[0.6, 0.8]);
        assert!(bank.push(0, &[0.0, 0.0]).is_err());
        assert!(bank.push(0, &[1.0]).is_err());
    }

    #[test]
    fn single_entry_closed_form() {
        // -ln(e^{1/tau} / (e^{1/tau} + 1)) = ln(1 + e^{-1/tau})
        let mut bank = LatentQueueBank::new(2, 4, 4, 4).unwrap();
        bank.push(1, &e(4, 0)).unwrap();
        bank.push_clean(&e(4, 1)).unwrap();
        let l = loss_of(&bank, &e(4, 0), 1);
        let expect = (-1.0f64 / DEFAULT_TAU).exp().ln_1p();
        assert!((l - expect).abs() < 1e-13);
        assert!((l - 6.248_747_557_12e-7).abs() < 1e-13);
    }

    #[test]
    fn extra_negatives_increase_loss_and_permutation_does_not_matter() {
        let mut bank = LatentQueueBank::new(2, 8, 4, 4).unwrap();
        bank.push(0, &[1.0, 0.2, 0.0, 0.1]).unwrap();
        bank.push(0, &[0.8, -0.3, 0.1, 0.0]).unwrap();
        bank.push_clean(&[0.0, 0.0, 1.0, 0.0]).unwrap();
        let q = [0.9, 0.1, 0.05, 0.0];
        let base = loss_of(&bank, &q, 0);
        let mut swapped = LatentQueueBank::new(2, 8, 4, 4).unwrap();
        swapped.push(0, &[0.8, -0.3, 0.1, 0.0]).unwrap();
        swapped.push(0, &[1.0, 0.2, 0.0, 0.1]).unwrap();
        swapped.push_clean(&[0.0, 0.0, 1.0, 0.0]).unwrap();
        assert!((loss_of(&swapped, &q, 0) - base).abs() < 1e-15);
        bank.push(1, &[0.0, 0.0, 0.0, 1.0]).unwrap();
        assert!(loss_of(&bank, &q, 0) > base);
        assert!(base > 0.0);
    }

    #[test]
    fn generator_alignment_matches_closed_form_and_is_monotone() {
        let mut bank = LatentQueueBank::new(3, 4, 4, 4).unwrap();
        bank.push(2, &e(4, 0)).unwrap();
        bank.push_clean(&e(4, 1)).unwrap();
        let eval = |q: &[f64]| {
            let mut tape = Tape::new();
            let qv = tape.leaf(Tensor::param([4], q.to_vec()).unwrap());
            let l = bank.generator_alignment_loss(&mut tape, qv, 0, DEFAULT_TAU).unwrap();
            tape.value(l).item()
        };
        assert!((eval(&e(4, 0)) - (-1.0f64 / DEFAULT_TAU).exp().ln_1p()).abs() < 1e-13);
        let mut prev = f64::INFINITY;
        for t in [0.0, 0.3, 0.6, 0.9, 1.2] {
            let l = eval(&[t, 0.0, 1.0, 0.0]);
            assert!(l < prev);
            prev = l;
        }
    }

    #[test]
    fn empty_queue_is_a_contract_error_and_entries_get_no_gradient() {
        let mut bank = LatentQueueBank::new(2, 4, 4, 2).unwrap();
        bank.push_clean(&[1.0, 0.0]).unwrap();
        let mut tape = Tape::new();
        let q = tape.leaf(Tensor::param([2], vec![1.0, 1.0]).unwrap());
        assert!(matches!(bank.contrastive_loss(&mut tape, q, 0, 0, 0.07), Err(Error::Contract(_))));
        bank.push(0, &[0.0, 1.0]).unwrap();
        let before = tape.len();
        let l = bank.contrastive_loss(&mut tape, q, 0, 0, 0.07).unwrap();
        let grads = tape.backward(l).unwrap();
        assert!(grads.get(q).is_some());
        for idx in before..l.index() {
            assert!(!tape.requires_grad(crate::numerics::tape::var_at(idx)));
        }
    }

    #[test]
    fn serialization_round_trip() {
        let mut bank = LatentQueueBank::new(2, 3, 2, 2).unwrap();
        bank.push(0, &[1.0, 2.0]).unwrap();
        bank.push(1, &[2.0, 1.0]).unwrap();
        bank.push(1, &[0.0, 1.0]).unwrap();
        bank.push_clean(&[1.0, 1.0]).unwrap();
        let (c, d) = bank.to_parts();
        assert_eq!(LatentQueueBank::from_parts(&c, &d).unwrap(), bank);
    }
}
