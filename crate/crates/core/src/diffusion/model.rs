//! The twin model: egomotion diffusion feeding the HTP diffusion.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::losses::{angle_loss, displacement_loss, mse, LossBundle, LossTerms, LossWeights};
use super::sampler::{sample_egomotion, sample_htp, ConditionedHmtm};
use super::{future_rows, make_schedule, partial_noise, past_rows, DiffusionError, Schedule, ScheduleKind};
use crate::denoisers::{Hmtm, HybridPattern, MambaConfig, SatConfig, SeqLayout, VoxelTokens, Vm};
use crate::encoders::{
    EgoRepr, EgomotionEncoder, FusionModule, TrajectoryDecoder, VoxelEncoder, VOXEL_DIMS, VOXEL_PATCHES,
};
use crate::geometry::OccupancyGrid;
use crate::numerics::{concat_rows, AdamW, Ctx, ParamStore, Tape, Var};

/// How egomotion conditions the HTP denoiser.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EgoMode {
    /// Homography features, future rows from the egomotion diffusion.
    Homography,
    /// Flattened camera poses, future rows from the egomotion diffusion.
    Se3,
    /// Homography features; future rows repeat the last past row and no
    /// egomotion diffusion runs.
    ConstantLast,
    /// No egomotion conditioning.
    None,
}

impl EgoMode {
    pub const ALL: [EgoMode; 4] = [EgoMode::Homography, EgoMode::Se3, EgoMode::ConstantLast, EgoMode::None];

    pub fn repr(self) -> Option<EgoRepr> {
        match self {
            EgoMode::Homography | EgoMode::ConstantLast => Some(EgoRepr::Homography),
            EgoMode::Se3 => Some(EgoRepr::Se3),
            EgoMode::None => None,
        }
    }

    pub fn diffused(self) -> bool {
        matches!(self, EgoMode::Homography | EgoMode::Se3)
    }

    pub fn tag(self) -> &'static str {
        match self {
            EgoMode::Homography => "homography",
            EgoMode::Se3 => "se3",
            EgoMode::ConstantLast => "constant-last",
            EgoMode::None => "none",
        }
    }
}

/// Input modalities besides the past waypoints, which are always used.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Modalities {
    pub images: bool,
    pub text: bool,
    pub point_clouds: bool,
}

impl Default for Modalities {
    fn default() -> Self {
        Modalities {
            images: true,
            text: true,
            point_clouds: true,
        }
    }
}

impl Modalities {
    /// The four rows of the modality ablation, in order.
    pub const ABLATION: [(&'static str, Modalities); 4] = [
        ("W", Modalities { images: false, text: false, point_clouds: false }),
        ("W+I", Modalities { images: true, text: false, point_clouds: false }),
        ("W+I+T", Modalities { images: true, text: true, point_clouds: false }),
        ("W+I+T+P", Modalities { images: true, text: true, point_clouds: true }),
    ];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub f: usize,
    pub x: usize,
    pub voxel_hidden: usize,
    pub n_past: usize,
    pub n_future: usize,
    pub pattern: HybridPattern,
    pub mamba: MambaConfig,
    pub sat: SatConfig,
    pub schedule: ScheduleKind,
    pub t_total: usize,
    pub k_ego: usize,
    pub k_htp: usize,
    pub ego_mode: EgoMode,
    pub modalities: Modalities,
    pub weights: LossWeights,
}

impl ModelConfig {
    pub fn layout(&self) -> SeqLayout {
        SeqLayout {
            n_past: self.n_past,
            n_future: self.n_future,
        }
    }

    pub fn validate(&self) -> Result<(), DiffusionError> {
        let bad = |m: String| Err(DiffusionError::InvalidConfig(m));
        if self.f == 0 || self.x == 0 || self.voxel_hidden == 0 {
            return bad(format!("widths must be positive (f={}, x={}, voxel_hidden={})", self.f, self.x, self.voxel_hidden));
        }
        if self.n_past < 2 || self.n_future < 1 {
            return bad(format!("need n_past >= 2 and n_future >= 1, got {} and {}", self.n_past, self.n_future));
        }
        if self.sat.n_head == 0 || !self.f.is_multiple_of(self.sat.n_head) {
            return bad(format!("f={} is not divisible by n_head={}", self.f, self.sat.n_head));
        }
        if self.mamba.d_state == 0 || self.mamba.d_conv == 0 || self.mamba.expand == 0 || self.sat.d_ffn == 0 {
            return bad("mamba/sat sizes must be positive".into());
        }
        if self.t_total == 0 {
            return Err(DiffusionError::InvalidT(self.t_total));
        }
        for k in [self.k_ego, self.k_htp] {
            if k == 0 || k > self.t_total {
                return Err(DiffusionError::InvalidK { k, t_total: self.t_total });
            }
        }
        self.weights.validate()
    }
}

/// `B` stacked training sequences of `N_p + N_f` rows each.
///
/// Waypoints are in model units, future rows included. Prediction reads
/// only the past rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub layout: SeqLayout,
    pub size: usize,
    /// `B·N × 3`.
    pub waypoints: Array2<f64>,
    /// `B·N × x`.
    pub x_sem: Array2<f64>,
    /// `B·N × 9` (homography) or `× 12` (pose); `None` without egomotion.
    pub ego: Option<Array2<f64>>,
    /// One grid per sequence; empty without point clouds.
    pub grids: Vec<OccupancyGrid>,
}

impl Batch {
    /// The batch repeated `copies` times along the sequence axis.
    pub fn tiled(&self, copies: usize) -> Batch {
        let tile = |a: &Array2<f64>| {
            let views: Vec<_> = std::iter::repeat_n(a.view(), copies).collect();
            ndarray::concatenate(ndarray::Axis(0), &views).expect("equal widths")
        };
        Batch {
            layout: self.layout,
            size: self.size * copies,
            waypoints: tile(&self.waypoints),
            x_sem: tile(&self.x_sem),
            ego: self.ego.as_ref().map(tile),
            grids: (0..copies).flat_map(|_| self.grids.iter().cloned()).collect(),
        }
    }

    pub fn validate(&self, cfg: &ModelConfig) -> Result<(), DiffusionError> {
        let rows = self.size * self.layout.len();
        let check = |what: &'static str, got: (usize, usize), cols: usize| {
            if got != (rows, cols) {
                Err(DiffusionError::ShapeMismatch { what, expected: (rows, cols), got })
            } else {
                Ok(())
            }
        };
        if self.layout != cfg.layout() || self.size == 0 {
            return Err(DiffusionError::ShapeMismatch {
                what: "batch layout",
                expected: (cfg.n_past, cfg.n_future),
                got: (self.layout.n_past, self.layout.n_future),
            });
        }
        check("waypoints", self.waypoints.dim(), 3)?;
        check("x_sem", self.x_sem.dim(), cfg.x)?;
        match (cfg.ego_mode.repr(), &self.ego) {
            (Some(r), Some(e)) => check("egomotion rows", e.dim(), r.width())?,
            (Some(r), None) => return check("egomotion rows", (0, 0), r.width()),
            _ => {}
        }
        if cfg.modalities.point_clouds && self.grids.len() != self.size {
            return Err(DiffusionError::ShapeMismatch {
                what: "voxel grids",
                expected: (self.size, 1),
                got: (self.grids.len(), 1),
            });
        }
        Ok(())
    }
}

/// Parameters and structure of both diffusion streams.
#[derive(Clone, Debug)]
pub struct TwinModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub schedule: Schedule,
    pub fusion: FusionModule,
    pub decoder: TrajectoryDecoder,
    pub ego_encoder: Option<EgomotionEncoder>,
    pub vm: Option<Vm>,
    pub hmtm: Hmtm,
    pub voxel: Option<VoxelEncoder>,
}

fn randn(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(rng))
}

/// Egomotion condition rows: past rows of `f_ego` (`B·N` rows), then
/// either the `B·N_f` rows of `pred_future` or the last past row repeated.
fn ego_condition<'t>(
    f_ego: Var<'t>,
    pred_future: Option<Var<'t>>,
    layout: SeqLayout,
    batch: usize,
) -> Result<Var<'t>, DiffusionError> {
    let n = layout.len();
    let stacked = match pred_future {
        Some(p) => concat_rows(&[f_ego, p])?,
        None => f_ego,
    };
    let offset = f_ego.rows();
    let idx: Vec<usize> = (0..batch)
        .flat_map(|b| {
            (0..n).map(move |k| {
                if k < layout.n_past {
                    b * n + k
                } else if pred_future.is_some() {
                    offset + b * layout.n_future + k - layout.n_past
                } else {
                    b * n + layout.n_past - 1
                }
            })
        })
        .collect();
    Ok(stacked.gather_rows(&idx))
}

impl TwinModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, DiffusionError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let f = config.f;
        let fusion = FusionModule::new(&mut store, "fusion", config.x, f, &mut rng);
        let decoder = TrajectoryDecoder::new(&mut store, "decoder", f, &mut rng);
        let ego_encoder = config
            .ego_mode
            .repr()
            .map(|r| EgomotionEncoder::new(&mut store, "ego_encoder", r, f, &mut rng));
        let vm = config
            .ego_mode
            .diffused()
            .then(|| Vm::new(&mut store, "vm", f, &config.mamba, &mut rng));
        let hmtm = Hmtm::new(&mut store, "hmtm", f, &config.pattern, &config.mamba, &config.sat, &mut rng)?;
        let voxel = config
            .modalities
            .point_clouds
            .then(|| VoxelEncoder::new(&mut store, "voxel", config.voxel_hidden, f, &mut rng));
        store.round_to_f32();
        let schedule = make_schedule(config.t_total, config.schedule)?;
        Ok(TwinModel {
            config,
            store,
            schedule,
            fusion,
            decoder,
            ego_encoder,
            vm,
            hmtm,
            voxel,
        })
    }

    fn voxel_tokens<'t>(&self, ctx: &Ctx<'t, '_>, batch: &Batch) -> Result<Option<VoxelTokens<'t>>, DiffusionError> {
        let Some(enc) = &self.voxel else { return Ok(None) };
        let grids: Vec<&OccupancyGrid> = batch.grids.iter().collect();
        if grids.iter().any(|g| g.dims != VOXEL_DIMS) {
            return Err(DiffusionError::InvalidConfig(format!("voxel grids must be {VOXEL_DIMS:?}")));
        }
        Ok(Some(VoxelTokens {
            tokens: enc.forward(ctx, &grids)?,
            per_sample: VOXEL_PATCHES,
        }))
    }

    /// Records one training step on `tape` and returns the differentiable
    /// total with its evaluated parts.
    pub fn losses<'t>(
        &self,
        ctx: &Ctx<'t, '_>,
        batch: &Batch,
        rng: &mut impl Rng,
    ) -> Result<(Option<Var<'t>>, LossBundle), DiffusionError> {
        let steps: Vec<usize> = (0..batch.size).map(|_| rng.random_range(0..self.config.t_total)).collect();
        self.losses_at(ctx, batch, &steps, rng)
    }

    /// [`losses`](Self::losses) with the diffusion step of every sequence
    /// given.
    pub fn losses_at<'t>(
        &self,
        ctx: &Ctx<'t, '_>,
        batch: &Batch,
        steps: &[usize],
        rng: &mut impl Rng,
    ) -> Result<(Option<Var<'t>>, LossBundle), DiffusionError> {
        batch.validate(&self.config)?;
        let cfg = &self.config;
        let layout = cfg.layout();
        let bsz = batch.size;
        let tape = ctx.tape;
        if steps.len() != bsz {
            return Err(DiffusionError::ShapeMismatch { what: "diffusion steps", expected: (bsz, 1), got: (steps.len(), 1) });
        }
        if let Some(&t) = steps.iter().find(|&&t| t >= cfg.t_total) {
            return Err(DiffusionError::StepOutOfRange { t, t_total: cfg.t_total });
        }
        let fut = future_rows(layout, bsz);
        let mut terms = LossTerms::default();

        let ego_cond = match (&self.ego_encoder, &batch.ego) {
            (Some(enc), Some(raw)) => {
                let f_ego = enc.forward(ctx, tape.constant(raw.clone()))?;
                let pred = match &self.vm {
                    Some(vm) => {
                        let noise = randn(fut.len(), cfg.f, rng);
                        let z = partial_noise(f_ego, layout, steps, &noise, &self.schedule)?;
                        let pred_f = vm.forward(ctx, z, steps, layout)?.gather_rows(&fut);
                        terms.vlb_ego = Some(mse(pred_f, f_ego.gather_rows(&fut))?);
                        Some(pred_f)
                    }
                    None => None,
                };
                Some(ego_condition(f_ego, pred, layout, bsz)?)
            }
            _ => None,
        };

        let f_htp = self
            .fusion
            .forward(ctx, tape.constant(batch.waypoints.clone()), tape.constant(batch.x_sem.clone()))?;
        let target_f = f_htp.gather_rows(&fut);
        let noise = randn(fut.len(), cfg.f, rng);
        let z = partial_noise(f_htp, layout, steps, &noise, &self.schedule)?;
        let voxels = self.voxel_tokens(ctx, batch)?;
        let pred_f = self.hmtm.forward(ctx, z, steps, layout, ego_cond, voxels)?.gather_rows(&fut);
        terms.vlb_htp = Some(mse(pred_f, target_f)?);
        let decoded = self.decoder.forward(ctx, pred_f)?;
        let gt = batch.waypoints.select(ndarray::Axis(0), &fut);
        terms.dis = Some(displacement_loss(decoded, &gt)?);
        terms.angle = Some(angle_loss(decoded, &gt, layout.n_future)?);
        if cfg.weights.reg > 0.0 {
            let zero_steps = vec![0; bsz];
            let z0 = partial_noise(f_htp, layout, &zero_steps, &noise, &self.schedule)?;
            let reg_f = self
                .hmtm
                .forward(ctx, z0, &zero_steps, layout, ego_cond, voxels)?
                .gather_rows(&fut);
            terms.reg = Some(mse(reg_f, target_f)?);
        }
        let (total, bundle) = terms.combine(&cfg.weights);
        if !bundle.total.is_finite() {
            return Err(DiffusionError::NonFiniteLoss(bundle));
        }
        Ok((total, bundle))
    }

    /// Samples a step per sequence, noises both streams, runs both
    /// denoisers and applies one optimizer update.
    pub fn train_step(&mut self, batch: &Batch, opt: &mut AdamW, rng: &mut impl Rng) -> Result<LossBundle, DiffusionError> {
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &self.store);
        let (total, bundle) = self.losses(&ctx, batch, rng)?;
        if let Some(total) = total {
            let grads = ctx.param_grads(&tape.backward(total));
            drop(ctx);
            opt.step(&mut self.store, &grads);
        }
        Ok(bundle)
    }

    /// Losses on a batch without updating parameters.
    pub fn eval_losses(&self, batch: &Batch, rng: &mut impl Rng) -> Result<LossBundle, DiffusionError> {
        let tape = Tape::inference();
        let ctx = Ctx::new(&tape, &self.store);
        Ok(self.losses(&ctx, batch, rng)?.1)
    }

    /// Future waypoints `B·N_f × 3` in model units, from past rows only.
    pub fn predict(&self, batch: &Batch, seed: u64) -> Result<Array2<f64>, DiffusionError> {
        Ok(self.predict_traced(batch, seed, false)?.0)
    }

    /// Like [`predict`](Self::predict), also returning the HTP working
    /// latents of every reverse step when `trace` is set, and the past HTP
    /// latents they are anchored to.
    #[allow(clippy::type_complexity)]
    pub fn predict_traced(
        &self,
        batch: &Batch,
        seed: u64,
        trace: bool,
    ) -> Result<(Array2<f64>, Vec<Array2<f64>>, Array2<f64>), DiffusionError> {
        batch.validate(&self.config)?;
        let cfg = &self.config;
        let layout = cfg.layout();
        let bsz = batch.size;
        let past = past_rows(layout, bsz);
        let tape = Tape::inference();
        let ctx = Ctx::new(&tape, &self.store);
        let mut ego_seed = ChaCha8Rng::seed_from_u64(seed);
        let (ego_seed, htp_seed) = (ego_seed.random::<u64>(), ego_seed.random::<u64>());

        let ego_cond = match (&self.ego_encoder, &batch.ego) {
            (Some(enc), Some(raw)) => {
                let f_ego_p = enc.forward(&ctx, tape.constant(raw.select(ndarray::Axis(0), &past)))?.to_array();
                let future = match &self.vm {
                    Some(vm) => sample_egomotion(vm, &self.store, &self.schedule, &f_ego_p, layout, cfg.k_ego, ego_seed)?,
                    None => {
                        let last: Vec<usize> = (0..bsz)
                            .flat_map(|b| std::iter::repeat_n(b * layout.n_past + layout.n_past - 1, layout.n_future))
                            .collect();
                        f_ego_p.select(ndarray::Axis(0), &last)
                    }
                };
                Some(super::sampler::assemble(&f_ego_p, &future, layout))
            }
            _ => None,
        };
        let f_htp_p = self
            .fusion
            .forward(
                &ctx,
                tape.constant(batch.waypoints.select(ndarray::Axis(0), &past)),
                tape.constant(batch.x_sem.select(ndarray::Axis(0), &past)),
            )?
            .to_array();
        let vox = self.voxel_tokens(&ctx, batch)?.map(|v| (v.tokens.to_array(), v.per_sample));
        let cond = ConditionedHmtm {
            hmtm: &self.hmtm,
            ego: ego_cond.as_ref(),
            voxels: vox.as_ref().map(|(t, p)| (t, *p)),
        };
        let out = sample_htp(&cond, &self.store, &self.schedule, &f_htp_p, layout, cfg.k_htp, htp_seed, trace)?;
        let decoded = self.decoder.forward(&ctx, tape.constant(out.future))?.to_array();
        Ok((decoded, out.trace, f_htp_p))
    }
}
