//! Per-action grids: one scalar for every `(orientation, y, x)` push.

use serde::{Deserialize, Serialize};

use crate::pushsim::PushAction;

/// `n_orientations × R × R` values laid out orientation-major, then row-major,
/// so the flat index of `(x, y, o)` is `o·R² + y·R + x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionMap {
    pub n_orientations: usize,
    pub resolution: usize,
    pub data: Vec<f32>,
}

/// State-action values.
pub type QMaps = ActionMap;
/// Push validity: binary labels or predicted probabilities.
pub type MaskTensor = ActionMap;

impl ActionMap {
    pub fn zeros(n_orientations: usize, resolution: usize) -> Self {
        Self { n_orientations, resolution, data: vec![0.0; n_orientations * resolution * resolution] }
    }

    pub fn from_vec(n_orientations: usize, resolution: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), n_orientations * resolution * resolution);
        Self { n_orientations, resolution, data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn index(&self, o: usize, y: usize, x: usize) -> usize {
        (o * self.resolution + y) * self.resolution + x
    }

    pub fn get(&self, o: usize, y: usize, x: usize) -> f32 {
        self.data[self.index(o, y, x)]
    }

    pub fn set(&mut self, o: usize, y: usize, x: usize, v: f32) {
        let i = self.index(o, y, x);
        self.data[i] = v;
    }

    pub fn at(&self, a: PushAction) -> f32 {
        self.get(a.o as usize, a.y as usize, a.x as usize)
    }

    pub fn action(&self, flat: usize) -> PushAction {
        PushAction::from_flat(flat, self.resolution)
    }

    /// One orientation plane, row-major.
    pub fn plane(&self, o: usize) -> &[f32] {
        let n = self.resolution * self.resolution;
        &self.data[o * n..(o + 1) * n]
    }

    /// Flat index of the largest value; ties go to the smallest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        best
    }

    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0.0).count()
    }
}
