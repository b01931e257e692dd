use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "left" => Some(Self::Left),
            "right" => Some(Self::Right),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Left => "left",
            Self::Right => "right",
        }
    }
}

/// Which of the two models sits on each side for a prompt.
///
/// Derived from a hash of the experiment and prompt ids, so it is the same
/// for every annotator and survives restarts without stored state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Blinding {
    models: [String; 2],
}

impl Blinding {
    pub fn new(model_a: &str, model_b: &str) -> Self {
        Self {
            models: [model_a.into(), model_b.into()],
        }
    }

    fn swapped(experiment_id: &str, prompt_id: &str) -> bool {
        let mut h = Sha256::new();
        h.update(experiment_id.as_bytes());
        h.update([0]);
        h.update(prompt_id.as_bytes());
        h.finalize()[0] & 1 == 1
    }

    pub fn model_for(&self, experiment_id: &str, prompt_id: &str, side: Side) -> &str {
        let left = usize::from(Self::swapped(experiment_id, prompt_id));
        match side {
            Side::Left => &self.models[left],
            Side::Right => &self.models[1 - left],
        }
    }

    pub fn side_of(&self, experiment_id: &str, prompt_id: &str, model_id: &str) -> Option<Side> {
        [Side::Left, Side::Right]
            .into_iter()
            .find(|&s| self.model_for(experiment_id, prompt_id, s) == model_id)
    }
}
