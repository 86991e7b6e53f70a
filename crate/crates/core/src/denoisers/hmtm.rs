use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::embed::{time_encoding, StepEmbedding};
use super::mamba::{MambaBlock, MambaConfig};
use super::sat::{SatBlock, SatConfig, VoxelTokens};
use super::DenoiserError;
use crate::numerics::{Ctx, Linear, ParamStore, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BlockKind {
    Eam,
    Sat,
}

impl BlockKind {
    pub fn tag(self) -> &'static str {
        match self {
            BlockKind::Eam => "EAM",
            BlockKind::Sat => "SAT",
        }
    }
}

/// Dash-separated block order such as `EAM-EAM-SAT`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct HybridPattern(Vec<BlockKind>);

impl HybridPattern {
    /// The five orderings compared in the pattern ablation, default last.
    pub const ABLATION: [&'static str; 5] = ["SAT-EAM", "EAM-SAT", "SAT-EAM-EAM", "EAM-SAT-EAM", "EAM-EAM-SAT"];

    pub fn new(blocks: Vec<BlockKind>) -> Result<Self, DenoiserError> {
        if blocks.is_empty() {
            return Err(DenoiserError::InvalidPattern(String::new()));
        }
        Ok(HybridPattern(blocks))
    }

    pub fn blocks(&self) -> &[BlockKind] {
        &self.0
    }
}

impl Default for HybridPattern {
    fn default() -> Self {
        HybridPattern(vec![BlockKind::Eam, BlockKind::Eam, BlockKind::Sat])
    }
}

impl FromStr for HybridPattern {
    type Err = DenoiserError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || DenoiserError::InvalidPattern(s.to_string());
        if s.trim().is_empty() {
            return Err(bad());
        }
        let blocks = s
            .split('-')
            .map(|tag| match tag.trim() {
                "EAM" => Ok(BlockKind::Eam),
                "SAT" => Ok(BlockKind::Sat),
                _ => Err(bad()),
            })
            .collect::<Result<Vec<_>, _>>()?;
        HybridPattern::new(blocks)
    }
}

impl fmt::Display for HybridPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tags: Vec<&str> = self.0.iter().map(|b| b.tag()).collect();
        f.write_str(&tags.join("-"))
    }
}

impl Serialize for HybridPattern {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for HybridPattern {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug)]
enum Block {
    Eam(MambaBlock),
    Sat(SatBlock),
}

/// Stacked sequences handed to a denoiser: `batch` sequences of
/// `n_past + n_future` rows each.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeqLayout {
    pub n_past: usize,
    pub n_future: usize,
}

impl SeqLayout {
    pub fn len(&self) -> usize {
        self.n_past + self.n_future
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn check_rows(z: Var<'_>, layout: SeqLayout, steps: &[usize], f: usize) -> Result<(), DenoiserError> {
    let expected = (steps.len() * layout.len(), f);
    if steps.is_empty() || layout.is_empty() || z.shape() != expected {
        return Err(DenoiserError::ShapeMismatch {
            what: "denoiser input",
            expected,
            got: z.shape(),
        });
    }
    Ok(())
}

/// HTP denoiser: EAM and SAT blocks in pattern order, then a linear head.
#[derive(Clone, Debug)]
pub struct Hmtm {
    pub pattern: HybridPattern,
    blocks: Vec<Block>,
    pub step: StepEmbedding,
    pub head: Linear,
    pub f: usize,
}

impl Hmtm {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        f: usize,
        pattern: &HybridPattern,
        mamba: &MambaConfig,
        sat: &SatConfig,
        rng: &mut impl Rng,
    ) -> Result<Self, DenoiserError> {
        if sat.n_head == 0 || !f.is_multiple_of(sat.n_head) {
            return Err(DenoiserError::InvalidConfig(format!(
                "width {f} is not divisible by {} heads",
                sat.n_head
            )));
        }
        let step = StepEmbedding::new(store, &format!("{prefix}.step"), f, rng);
        let blocks = pattern
            .blocks()
            .iter()
            .enumerate()
            .map(|(i, kind)| {
                let p = format!("{prefix}.block.{i}");
                match kind {
                    BlockKind::Eam => Block::Eam(MambaBlock::new(store, &p, f, mamba, true, rng)),
                    BlockKind::Sat => Block::Sat(SatBlock::new(store, &p, f, sat, rng)),
                }
            })
            .collect();
        Ok(Hmtm {
            pattern: pattern.clone(),
            blocks,
            step,
            head: Linear::new(store, &format!("{prefix}.head"), f, f, true, rng),
            f,
        })
    }

    /// x0-prediction for `steps.len()` stacked sequences. `ego` has the
    /// shape of `z`; `None` leaves EAM blocks unconditioned. `voxels`
    /// `None` turns SAT cross-attention into self-attention.
    pub fn forward<'t>(
        &self,
        ctx: &Ctx<'t, '_>,
        z: Var<'t>,
        steps: &[usize],
        layout: SeqLayout,
        ego: Option<Var<'t>>,
        voxels: Option<VoxelTokens<'t>>,
    ) -> Result<Var<'t>, DenoiserError> {
        check_rows(z, layout, steps, self.f)?;
        let n = layout.len();
        let temb = self.step.forward(ctx, steps, n)?;
        let pe = ctx
            .tape
            .constant(time_encoding(layout.n_past, layout.n_future, self.f, steps.len()));
        let mut h = z;
        for block in &self.blocks {
            h = match block {
                Block::Eam(b) => b.forward(ctx, h, temb, ego, n)?,
                Block::Sat(b) => b.forward(ctx, h, temb, pe, voxels, n)?,
            };
        }
        Ok(self.head.forward(ctx, h)?)
    }
}

/// Egomotion denoiser: one unconditioned Mamba block and a linear head.
#[derive(Clone, Debug)]
pub struct Vm {
    pub block: MambaBlock,
    pub step: StepEmbedding,
    pub head: Linear,
    pub f: usize,
}

impl Vm {
    pub fn new(store: &mut ParamStore, prefix: &str, f: usize, cfg: &MambaConfig, rng: &mut impl Rng) -> Self {
        Vm {
            step: StepEmbedding::new(store, &format!("{prefix}.step"), f, rng),
            block: MambaBlock::new(store, &format!("{prefix}.block"), f, cfg, false, rng),
            head: Linear::new(store, &format!("{prefix}.head"), f, f, true, rng),
            f,
        }
    }

    pub fn forward<'t>(
        &self,
        ctx: &Ctx<'t, '_>,
        z: Var<'t>,
        steps: &[usize],
        layout: SeqLayout,
    ) -> Result<Var<'t>, DenoiserError> {
        check_rows(z, layout, steps, self.f)?;
        let n = layout.len();
        let temb = self.step.forward(ctx, steps, n)?;
        let h = self.block.forward(ctx, z, temb, None, n)?;
        Ok(self.head.forward(ctx, h)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{grad_check_params, uniform_init, Tape};
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const LAYOUT: SeqLayout = SeqLayout { n_past: 4, n_future: 2 };

    fn tiny(pattern: &str) -> (ParamStore, Hmtm, ChaCha8Rng) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let sat = SatConfig { n_head: 2, d_ffn: 16 };
        let m = Hmtm::new(&mut store, "hmtm", 8, &pattern.parse().unwrap(), &MambaConfig::default(), &sat, &mut rng)
            .unwrap();
        (store, m, rng)
    }

    #[test]
    fn pattern_round_trip() {
        for s in HybridPattern::ABLATION {
            let p: HybridPattern = s.parse().unwrap();
            assert_eq!(p.to_string(), s);
        }
        assert_eq!(HybridPattern::default().to_string(), "EAM-EAM-SAT");
        let json = serde_json::to_string(&HybridPattern::default()).unwrap();
        assert_eq!(json, "\"EAM-EAM-SAT\"");
        assert_eq!(serde_json::from_str::<HybridPattern>(&json).unwrap(), HybridPattern::default());
    }

    #[test]
    fn bad_patterns_are_rejected() {
        for s in ["XYZ", "", "EAM--SAT", "EAM-sat", "-"] {
            assert!(matches!(s.parse::<HybridPattern>(), Err(DenoiserError::InvalidPattern(_))), "{s:?}");
        }
        assert!(HybridPattern::new(vec![]).is_err());
    }

    #[test]
    fn default_pattern_block_order() {
        let (_, m, _) = tiny("EAM-EAM-SAT");
        let kinds: Vec<&str> = m
            .blocks
            .iter()
            .map(|b| match b {
                Block::Eam(_) => "EAM",
                Block::Sat(_) => "SAT",
            })
            .collect();
        assert_eq!(kinds, ["EAM", "EAM", "SAT"]);
    }

    #[test]
    fn all_ablation_patterns_run() {
        for s in HybridPattern::ABLATION {
            let (store, m, mut rng) = tiny(s);
            let tape = Tape::inference();
            let ctx = Ctx::new(&tape, &store);
            let z = tape.constant(uniform_init(12, 8, 1, &mut rng));
            let ego = tape.constant(uniform_init(12, 8, 1, &mut rng));
            let vox = VoxelTokens {
                tokens: tape.constant(uniform_init(8, 8, 1, &mut rng)),
                per_sample: 4,
            };
            let out = m.forward(&ctx, z, &[3, 7], LAYOUT, Some(ego), Some(vox)).unwrap();
            assert_eq!(out.shape(), (12, 8), "{s}");
            assert!(out.to_array().iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn wrong_rows_are_rejected() {
        let (store, m, _) = tiny("EAM-SAT");
        let tape = Tape::inference();
        let ctx = Ctx::new(&tape, &store);
        let z = tape.constant(Array2::zeros((7, 8)));
        assert!(matches!(
            m.forward(&ctx, z, &[1], LAYOUT, None, None),
            Err(DenoiserError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn head_count_must_divide_width() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let sat = SatConfig { n_head: 3, d_ffn: 8 };
        let r = Hmtm::new(&mut store, "h", 8, &HybridPattern::default(), &MambaConfig::default(), &sat, &mut rng);
        assert!(matches!(r, Err(DenoiserError::InvalidConfig(_))));
    }

    #[test]
    fn vm_is_causal() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let vm = Vm::new(&mut store, "vm", 8, &MambaConfig::default(), &mut rng);
        let z = uniform_init(6, 8, 1, &mut rng);
        let run = |z: &Array2<f64>| {
            let tape = Tape::inference();
            let ctx = Ctx::new(&tape, &store);
            vm.forward(&ctx, tape.constant(z.clone()), &[2], LAYOUT).unwrap().to_array()
        };
        let base = run(&z);
        assert_eq!(base, run(&z));
        let mut moved = z.clone();
        moved[[3, 2]] -= 0.3;
        let out = run(&moved);
        for r in 0..6 {
            assert_eq!(out.row(r) == base.row(r), r < 3);
        }
    }

    /// All parameters of a full hybrid stack, f=8, N=6, four voxel tokens.
    #[test]
    fn hmtm_gradients_match_finite_differences() {
        let (store, m, mut rng) = tiny("EAM-EAM-SAT");
        let z = uniform_init(6, 8, 1, &mut rng);
        let ego = uniform_init(6, 8, 1, &mut rng);
        let vox = uniform_init(4, 8, 1, &mut rng);
        let target = uniform_init(6, 8, 1, &mut rng);
        let names: Vec<String> = store.names().map(String::from).collect();
        let names: Vec<&str> = names.iter().map(String::as_str).collect();
        let report = grad_check_params(
            &store,
            &names,
            |ctx| {
                let t = ctx.tape;
                let v = VoxelTokens {
                    tokens: t.constant(vox.clone()),
                    per_sample: 4,
                };
                let out = m
                    .forward(ctx, t.constant(z.clone()), &[5], LAYOUT, Some(t.constant(ego.clone())), Some(v))
                    .unwrap();
                out.sub(t.constant(target.clone())).unwrap().square().mean()
            },
            1e-5,
        );
        assert!(report.max_rel_err < 1e-4, "{report:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn pattern_strings_round_trip(blocks in proptest::collection::vec(any::<bool>(), 1..6)) {
            let kinds: Vec<BlockKind> = blocks.iter().map(|&b| if b { BlockKind::Eam } else { BlockKind::Sat }).collect();
            let p = HybridPattern::new(kinds).unwrap();
            prop_assert_eq!(p.to_string().parse::<HybridPattern>().unwrap(), p);
        }
    }
}
