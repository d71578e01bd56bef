//! Exact multiply counters for the complexity benchmarks.
//!
//! A fused multiply-add counts as one multiply. Counters are owned by the
//! caller and threaded through kernels explicitly.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    So3Tp,
    So2Linear,
    So2Tp,
    FrameRotation,
}

impl Kernel {
    pub const ALL: [Kernel; 4] = [
        Kernel::So3Tp,
        Kernel::So2Linear,
        Kernel::So2Tp,
        Kernel::FrameRotation,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Kernel::So3Tp => "so3_tp",
            Kernel::So2Linear => "so2_linear",
            Kernel::So2Tp => "so2_tp",
            Kernel::FrameRotation => "frame_rotation",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounter {
    pub multiply_count: u64,
    pub so3_tp: u64,
    pub so2_linear: u64,
    pub so2_tp: u64,
    pub frame_rotation: u64,
}

impl OpCounter {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, kernel: Kernel, n: u64) {
        self.multiply_count += n;
        *self.slot(kernel) += n;
    }

    pub fn get(&self, kernel: Kernel) -> u64 {
        match kernel {
            Kernel::So3Tp => self.so3_tp,
            Kernel::So2Linear => self.so2_linear,
            Kernel::So2Tp => self.so2_tp,
            Kernel::FrameRotation => self.frame_rotation,
        }
    }

    fn slot(&mut self, kernel: Kernel) -> &mut u64 {
        match kernel {
            Kernel::So3Tp => &mut self.so3_tp,
            Kernel::So2Linear => &mut self.so2_linear,
            Kernel::So2Tp => &mut self.so2_tp,
            Kernel::FrameRotation => &mut self.frame_rotation,
        }
    }
}
