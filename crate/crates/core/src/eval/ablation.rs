use serde::{Deserialize, Serialize};

use crate::denoisers::HybridPattern;
use crate::diffusion::{EgoMode, Modalities, ModelConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sweep {
    Ego,
    Pattern,
    Modality,
}

impl Sweep {
    pub const ALL: [Sweep; 3] = [Sweep::Ego, Sweep::Pattern, Sweep::Modality];

    pub fn tag(self) -> &'static str {
        match self {
            Sweep::Ego => "ego",
            Sweep::Pattern => "pattern",
            Sweep::Modality => "modality",
        }
    }
}

/// One configuration of a sweep; `name` is file-name safe.
#[derive(Clone, Debug, PartialEq)]
pub struct Variant {
    pub name: String,
    pub config: ModelConfig,
}

/// `base` with one axis varied: the four egomotion modes, the five hybrid
/// patterns (in ablation-table order) or the four cumulative modality sets.
pub fn sweep_variants(sweep: Sweep, base: &ModelConfig) -> Vec<Variant> {
    let with = |name: String, edit: &dyn Fn(&mut ModelConfig)| {
        let mut config = base.clone();
        edit(&mut config);
        Variant { name, config }
    };
    match sweep {
        Sweep::Ego => EgoMode::ALL
            .iter()
            .map(|&m| with(format!("ego-{}", m.tag()), &|c| c.ego_mode = m))
            .collect(),
        Sweep::Pattern => HybridPattern::ABLATION
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let pattern: HybridPattern = p.parse().expect("ablation patterns parse");
                with(format!("pattern-v{}-{}", i + 1, p), &|c| c.pattern = pattern.clone())
            })
            .collect(),
        Sweep::Modality => Modalities::ABLATION
            .iter()
            .map(|(tag, m)| {
                let m: Modalities = *m;
                with(format!("modality-{}", tag.replace('+', "")), &|c| c.modalities = m)
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_sizes_and_contents() {
        let base = crate::diffusion::tiny_config(EgoMode::Homography, true);
        assert_eq!(sweep_variants(Sweep::Pattern, &base).len(), 5);
        assert_eq!(sweep_variants(Sweep::Modality, &base).len(), 4);
        let ego = sweep_variants(Sweep::Ego, &base);
        assert!(ego.iter().any(|v| v.config.ego_mode == EgoMode::ConstantLast));
        for v in sweep_variants(Sweep::Pattern, &base).iter().chain(&ego) {
            v.config.validate().unwrap();
        }
        assert_eq!(sweep_variants(Sweep::Pattern, &base)[4].config.pattern, HybridPattern::default());
    }
}
