use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Loaded,
    Segmenting,
    Segmented,
    Inpainting,
    Ready,
    Error,
}

impl Phase {
    pub const ALL: [Phase; 6] = [Phase::Loaded, Phase::Segmenting, Phase::Segmented, Phase::Inpainting, Phase::Ready, Phase::Error];

    /// Forward steps of the pipeline, plus `error` from anywhere else.
    pub fn can_transition(self, to: Phase) -> bool {
        use Phase::*;
        matches!((self, to), (Loaded, Segmenting) | (Segmenting, Segmented) | (Segmented, Inpainting) | (Inpainting, Ready)) || (to == Error && self != Error)
    }

    /// True when `to` is reachable from `self` through allowed transitions.
    pub fn reaches(self, to: Phase) -> bool {
        if self == to {
            return true;
        }
        let mut cur = self;
        while let Some(next) = Phase::ALL.iter().copied().find(|&n| n != Phase::Error && cur.can_transition(n)) {
            if next == to {
                return true;
            }
            cur = next;
        }
        to == Phase::Error && self != Phase::Error
    }

    pub fn is_busy(self) -> bool {
        matches!(self, Phase::Segmenting | Phase::Inpainting)
    }

    pub fn has_segmentation(self) -> bool {
        matches!(self, Phase::Segmented | Phase::Inpainting | Phase::Ready)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Loaded => "loaded",
            Phase::Segmenting => "segmenting",
            Phase::Segmented => "segmented",
            Phase::Inpainting => "inpainting",
            Phase::Ready => "ready",
            Phase::Error => "error",
        }
    }
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transitions() {
        use Phase::*;
        assert!(Loaded.can_transition(Segmenting));
        assert!(!Loaded.can_transition(Segmented));
        assert!(!Ready.can_transition(Loaded));
        assert!(!Segmented.can_transition(Segmenting));
        for p in Phase::ALL {
            assert_eq!(p.can_transition(Error), p != Error);
            assert!(!Error.can_transition(p));
        }
        assert!(Loaded.reaches(Ready));
        assert!(!Ready.reaches(Segmented));
        assert!(Inpainting.reaches(Error));
        assert_eq!(serde_json::to_string(&Inpainting).unwrap(), "\"inpainting\"");
    }
}
