//! Analytic-vs-finite-difference checks over every differentiable stage,
//! at width 8 in float64.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::denoisers::{Hmtm, MambaBlock, MambaConfig, SatBlock, SatConfig, SeqLayout, VoxelTokens};
use crate::numerics::{
    affine_map, grad_check, grad_check_params, layer_norm, multi_head_attention, selective_scan_var, uniform_init,
    Ctx, GradCheckReport, ParamStore, Tape, Var,
};

pub const GRAD_TOLERANCE: f64 = 1e-4;
const EPS: f64 = 1e-5;
const F: usize = 8;

#[derive(Clone, Debug)]
pub struct GradCase {
    pub name: &'static str,
    pub report: GradCheckReport,
}

fn probe_sum<'t>(y: Var<'t>, probe: &Array2<f64>) -> Var<'t> {
    y.mul(y.tape().constant(probe.clone())).expect("probe shape").sum()
}

fn all_names(store: &ParamStore) -> Vec<String> {
    store.names().map(String::from).collect()
}

fn check_params<F>(store: &ParamStore, f: F) -> GradCheckReport
where
    F: for<'t, 'p> Fn(&Ctx<'t, 'p>) -> Var<'t>,
{
    let names = all_names(store);
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    grad_check_params(store, &refs, f, EPS)
}

/// Each input of `f` checked in turn with the others held constant.
fn check_inputs<F>(inputs: &[Array2<f64>], f: F) -> GradCheckReport
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    let mut report: Option<GradCheckReport> = None;
    for target in 0..inputs.len() {
        let r = grad_check(
            |tape, v| {
                let mut vars: Vec<Var> = inputs.iter().map(|a| tape.constant(a.clone())).collect();
                vars[target] = v;
                f(tape, &vars)
            },
            &inputs[target],
            EPS,
        );
        report = Some(match report {
            Some(acc) => acc.merge(&r),
            None => r,
        });
    }
    report.expect("at least one input")
}

fn affine(rng: &mut ChaCha8Rng) -> GradCheckReport {
    let inputs = [uniform_init(5, F, 1, rng), uniform_init(F, 6, 1, rng), uniform_init(1, 6, 1, rng)];
    let probe = uniform_init(5, 6, 1, rng);
    check_inputs(&inputs, |_, v| probe_sum(affine_map(v[0], v[1], Some(v[2])).unwrap(), &probe))
}

fn norm(rng: &mut ChaCha8Rng) -> GradCheckReport {
    let inputs = [uniform_init(4, F, 1, rng), uniform_init(1, F, 1, rng), uniform_init(1, F, 1, rng)];
    let probe = uniform_init(4, F, 1, rng);
    check_inputs(&inputs, |_, v| probe_sum(layer_norm(v[0], v[1], v[2], 1e-5).unwrap(), &probe))
}

fn attention(rng: &mut ChaCha8Rng) -> GradCheckReport {
    let inputs = [uniform_init(4, F, 1, rng), uniform_init(6, F, 1, rng), uniform_init(6, F, 1, rng)];
    let probe = uniform_init(4, F, 1, rng);
    check_inputs(&inputs, |_, v| {
        probe_sum(multi_head_attention(v[0], v[1], v[2], Ok, 2, None).unwrap().out, &probe)
    })
}

fn scan(rng: &mut ChaCha8Rng) -> GradCheckReport {
    let (t, d, n) = (7, 4, 16);
    let inputs = [
        uniform_init(t, d, 1, rng),
        Array2::from_shape_fn((t, d), |_| rng.random_range(0.01..0.5)),
        Array2::from_shape_fn((d, n), |_| -rng.random_range(0.1..2.0)),
        uniform_init(t, n, 1, rng),
        uniform_init(t, n, 1, rng),
    ];
    let probe = uniform_init(t, d, 1, rng);
    check_inputs(&inputs, |_, v| probe_sum(selective_scan_var(v[0], v[1], v[2], v[3], v[4], t).unwrap(), &probe))
}

fn eam(rng: &mut ChaCha8Rng) -> GradCheckReport {
    let mut store = ParamStore::new();
    let block = MambaBlock::new(&mut store, "eam", F, &MambaConfig::default(), true, rng);
    let (z, temb, ego) = (uniform_init(6, F, 1, rng), uniform_init(6, F, 1, rng), uniform_init(6, F, 1, rng));
    let probe = uniform_init(6, F, 1, rng);
    let inputs = [z.clone(), temb.clone(), ego.clone()];
    let wrt_inputs = check_inputs(&inputs, |tape, v| {
        let ctx = Ctx::new(tape, &store);
        probe_sum(block.forward(&ctx, v[0], v[1], Some(v[2]), 6).unwrap(), &probe)
    });
    let wrt_params = check_params(&store, |ctx| {
        let c = |a: &Array2<f64>| ctx.tape.constant(a.clone());
        probe_sum(block.forward(ctx, c(&z), c(&temb), Some(c(&ego)), 6).unwrap(), &probe)
    });
    wrt_inputs.merge(&wrt_params)
}

fn sat(rng: &mut ChaCha8Rng) -> GradCheckReport {
    let mut store = ParamStore::new();
    let block = SatBlock::new(&mut store, "sat", F, &SatConfig { n_head: 2, d_ffn: 16 }, rng);
    let inputs = [uniform_init(6, F, 1, rng), uniform_init(6, F, 1, rng), uniform_init(6, F, 1, rng), uniform_init(4, F, 1, rng)];
    let probe = uniform_init(6, F, 1, rng);
    fn run<'t>(block: &SatBlock, ctx: &Ctx<'t, '_>, v: &[Var<'t>]) -> Var<'t> {
        let vox = VoxelTokens { tokens: v[3], per_sample: 4 };
        block.forward(ctx, v[0], v[1], v[2], Some(vox), 6).unwrap()
    }
    let wrt_inputs = check_inputs(&inputs, |tape, v| {
        let ctx = Ctx::new(tape, &store);
        probe_sum(run(&block, &ctx, v), &probe)
    });
    let wrt_params = check_params(&store, |ctx| {
        let vars: Vec<Var> = inputs.iter().map(|a| ctx.tape.constant(a.clone())).collect();
        probe_sum(run(&block, ctx, &vars), &probe)
    });
    wrt_inputs.merge(&wrt_params)
}

fn hmtm(rng: &mut ChaCha8Rng) -> GradCheckReport {
    let mut store = ParamStore::new();
    let layout = SeqLayout { n_past: 4, n_future: 2 };
    let sat = SatConfig { n_head: 2, d_ffn: 16 };
    let m = Hmtm::new(&mut store, "hmtm", F, &Default::default(), &MambaConfig::default(), &sat, rng).expect("valid");
    let inputs = [uniform_init(6, F, 1, rng), uniform_init(6, F, 1, rng), uniform_init(4, F, 1, rng)];
    let target = uniform_init(6, F, 1, rng);
    fn run<'t>(m: &Hmtm, layout: SeqLayout, target: &Array2<f64>, ctx: &Ctx<'t, '_>, v: &[Var<'t>]) -> Var<'t> {
        let vox = VoxelTokens { tokens: v[2], per_sample: 4 };
        let out = m.forward(ctx, v[0], &[5], layout, Some(v[1]), Some(vox)).unwrap();
        out.sub(ctx.tape.constant(target.clone())).unwrap().square().mean()
    }
    let wrt_inputs = check_inputs(&inputs, |tape, v| {
        let ctx = Ctx::new(tape, &store);
        run(&m, layout, &target, &ctx, v)
    });
    let wrt_params = check_params(&store, |ctx| {
        let vars: Vec<Var> = inputs.iter().map(|a| ctx.tape.constant(a.clone())).collect();
        run(&m, layout, &target, ctx, &vars)
    });
    wrt_inputs.merge(&wrt_params)
}

/// Runs all seven checks with a fixed seed.
pub fn gradient_suite(seed: u64) -> Vec<GradCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cases: [(&'static str, fn(&mut ChaCha8Rng) -> GradCheckReport); 7] = [
        ("affine_map", affine),
        ("layer_norm", norm),
        ("multi_head_attention", attention),
        ("selective_scan", scan),
        ("eam_forward", eam),
        ("sat_forward", sat),
        ("hmtm_forward", hmtm),
    ];
    cases
        .iter()
        .map(|(name, f)| GradCase {
            name,
            report: f(&mut rng),
        })
        .collect()
}
