//! Random access over recorded frames, in memory or across episode logs.

use std::path::Path;

use super::recorder::{DrivingLog, Frame, LogMeta};
use crate::error::{Error, Result};

pub trait FrameSource {
    fn len(&self) -> usize;
    fn frame(&self, i: usize) -> Result<Frame>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl FrameSource for [Frame] {
    fn len(&self) -> usize {
        <[Frame]>::len(self)
    }

    fn frame(&self, i: usize) -> Result<Frame> {
        self.get(i).cloned().ok_or_else(|| Error::InvalidArgument(format!("frame {i} out of range")))
    }
}

impl FrameSource for Vec<Frame> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn frame(&self, i: usize) -> Result<Frame> {
        self.as_slice().frame(i)
    }
}

/// All frames of every episode under a root directory, in sorted episode order.
pub struct Dataset {
    pub logs: Vec<DrivingLog>,
    index: Vec<(usize, usize)>,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self> {
        let logs = DrivingLog::discover(root)?.iter().map(|d| DrivingLog::open(d)).collect::<Result<Vec<_>>>()?;
        Ok(Self::from_logs(logs))
    }

    pub fn from_logs(logs: Vec<DrivingLog>) -> Self {
        let index = logs.iter().enumerate().flat_map(|(l, log)| (0..log.len()).map(move |i| (l, i))).collect();
        Self { logs, index }
    }

    pub fn meta_of(&self, i: usize) -> &LogMeta {
        &self.logs[self.index[i].0].meta
    }
}

impl FrameSource for Dataset {
    fn len(&self) -> usize {
        self.index.len()
    }

    fn frame(&self, i: usize) -> Result<Frame> {
        let (l, k) = *self.index.get(i).ok_or_else(|| Error::InvalidArgument(format!("frame {i} out of range")))?;
        self.logs[l].frame(k)
    }
}
