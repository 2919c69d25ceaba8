use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ploss::PlossInput;
use crate::rom::Series;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
}

/// Where a sample came from: trajectory id, start step, the epoch whose
/// parameter snapshot generated it, and its split.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleTag {
    pub trajectory: usize,
    pub step: usize,
    pub epoch: usize,
    pub split: Split,
}

pub trait Tagged {
    fn tag(&self) -> &SampleTag;
}

/// One closed-loop transition in normalized units: corrector input,
/// nominal loss, hybrid state at `k`, measured output at `k + 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepSample {
    pub features: Vec<f64>,
    pub u_nom: Vec<f64>,
    pub x: Vec<f64>,
    pub y_next: Vec<f64>,
    pub tag: SampleTag,
}

/// A window of consecutive steps starting from hybrid state `x0`.
/// Row `t` of `y_next` is the measured output after step `t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceSample {
    pub x0: Vec<f64>,
    pub z: Vec<PlossInput>,
    pub u_nom: Series,
    pub y_next: Series,
    pub tag: SampleTag,
}

impl SequenceSample {
    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }
}

impl Tagged for StepSample {
    fn tag(&self) -> &SampleTag {
        &self.tag
    }
}

impl Tagged for SequenceSample {
    fn tag(&self) -> &SampleTag {
        &self.tag
    }
}

/// Fixed-capacity FIFO store with separate training and validation queues.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer<S> {
    train_capacity: usize,
    val_capacity: usize,
    train: VecDeque<S>,
    val: VecDeque<S>,
}

impl<S: Tagged> ReplayBuffer<S> {
    pub fn new(train_capacity: usize, val_capacity: usize) -> Result<Self> {
        if train_capacity == 0 || val_capacity == 0 {
            return Err(Error::Config("buffer capacity must be positive".into()));
        }
        Ok(Self {
            train_capacity,
            val_capacity,
            train: VecDeque::new(),
            val: VecDeque::new(),
        })
    }

    pub fn train_capacity(&self) -> usize {
        self.train_capacity
    }

    pub fn val_capacity(&self) -> usize {
        self.val_capacity
    }

    fn push_into(queue: &mut VecDeque<S>, cap: usize, split: Split, samples: impl IntoIterator<Item = S>) -> Result<()> {
        for s in samples {
            if s.tag().split != split {
                return Err(Error::Config(format!("{:?} sample pushed into {split:?} buffer", s.tag().split)));
            }
            if queue.len() == cap {
                queue.pop_front();
            }
            queue.push_back(s);
        }
        Ok(())
    }

    /// Appends training samples, evicting the oldest once full.
    pub fn push_train(&mut self, samples: impl IntoIterator<Item = S>) -> Result<()> {
        Self::push_into(&mut self.train, self.train_capacity, Split::Train, samples)
    }

    pub fn push_val(&mut self, samples: impl IntoIterator<Item = S>) -> Result<()> {
        Self::push_into(&mut self.val, self.val_capacity, Split::Val, samples)
    }

    pub fn train(&self) -> &VecDeque<S> {
        &self.train
    }

    pub fn val(&self) -> &VecDeque<S> {
        &self.val
    }

    /// True when no sample sits in the wrong queue.
    pub fn audit(&self) -> bool {
        self.train.iter().all(|s| s.tag().split == Split::Train) && self.val.iter().all(|s| s.tag().split == Split::Val)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(id: usize, split: Split) -> StepSample {
        StepSample {
            features: vec![],
            u_nom: vec![],
            x: vec![],
            y_next: vec![],
            tag: SampleTag {
                trajectory: id,
                step: 0,
                epoch: 0,
                split,
            },
        }
    }

    #[test]
    fn fifo_eviction() {
        let mut b = ReplayBuffer::new(3, 2).unwrap();
        b.push_train((0..3).map(|i| sample(i, Split::Train))).unwrap();
        assert_eq!(b.train().len(), 3);
        b.push_train((3..5).map(|i| sample(i, Split::Train))).unwrap();
        assert_eq!(b.train().len(), 3);
        let ids: Vec<usize> = b.train().iter().map(|s| s.tag.trajectory).collect();
        assert_eq!(ids, vec![2, 3, 4]);
    }

    #[test]
    fn validation_survives_training_pushes() {
        let mut b = ReplayBuffer::new(2, 2).unwrap();
        b.push_val([sample(9, Split::Val)]).unwrap();
        b.push_train((0..10).map(|i| sample(i, Split::Train))).unwrap();
        assert_eq!(b.val().len(), 1);
        assert_eq!(b.val()[0].tag.trajectory, 9);
        assert!(b.audit());
    }

    #[test]
    fn split_mixing_rejected() {
        let mut b = ReplayBuffer::new(2, 2).unwrap();
        assert!(b.push_train([sample(0, Split::Val)]).is_err());
        assert!(b.push_val([sample(0, Split::Train)]).is_err());
        assert!(ReplayBuffer::<StepSample>::new(0, 1).is_err());
    }
}
