//! `fuse-selfcheck`: shape, bound, and gradient verification of the fusion
//! kernels. Prints one line per check and exits nonzero on any failure.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use longtile::fusion::{
    align, build_prompts, concat_fuse, cosine_fuse, forward_backward, FeatureMap, FusionWeights,
    LossReduction, TextBank, TERM_GROUPS,
};
use longtile::seed::rng_for;
use rand::Rng;

#[derive(clap::Args, Debug)]
pub struct Args {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Random gradient-check trials.
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    /// Optional text bank file to validate and use for dimension checks.
    #[arg(long)]
    pub bank: Option<PathBuf>,
}

fn check(name: &str, ok: bool, detail: &str) -> Result<()> {
    if ok {
        println!("ok {name}");
        Ok(())
    } else {
        bail!("check {name} failed: {detail}")
    }
}

pub fn run(args: &Args) -> Result<()> {
    // Prompt bank contract.
    let prompts = build_prompts();
    check(
        "prompt-count",
        prompts.len() == 54,
        &format!("{}", prompts.len()),
    )?;
    check(
        "prompt-first",
        prompts[0] == "A satellite image of roof",
        &prompts[0],
    )?;
    let group_sizes: Vec<usize> = TERM_GROUPS.iter().map(|(_, t)| t.len()).collect();
    check(
        "prompt-groups",
        group_sizes == [10, 3, 8, 6, 3, 6, 6, 3, 9],
        &format!("{group_sizes:?}"),
    )?;

    if let Some(path) = &args.bank {
        let bank =
            TextBank::read(path).with_context(|| format!("reading bank {}", path.display()))?;
        println!(
            "ok bank-file ({} terms, dimension {})",
            bank.len(),
            bank.dim
        );
    }

    let mut rng = rng_for(args.seed, 0);

    // Shape identities.
    let fmap = FeatureMap::new(2, 3, 4, (0..24).map(|v| v as f64 * 0.25 - 3.0).collect())?;
    let mut eye = vec![0.0; 16];
    for i in 0..4 {
        eye[i * 4 + i] = 1.0;
    }
    check(
        "align-identity",
        align(&fmap, &eye, 4)? == fmap,
        "identity weights must not change the map",
    )?;
    let empty = FeatureMap::new(2, 3, 0, vec![])?;
    check(
        "concat-identity",
        concat_fuse(&empty, &fmap)?.data == fmap.data,
        "empty fused side must be an identity",
    )?;

    // Cosine bounds on random maps.
    let bank = TextBank::pseudo(
        (0..6).map(|i| format!("selfcheck term {i}")).collect(),
        5,
        args.seed ^ 0x5EED,
    )?;
    let mut bound_ok = true;
    for _ in 0..10 {
        let data: Vec<f64> = (0..4 * 4 * 5).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let map = FeatureMap::new(4, 4, 5, data)?;
        let fused = cosine_fuse(&map, &bank)?;
        bound_ok &= fused.features.data.iter().all(|v| (-1.0..=1.0).contains(v));
    }
    check("cosine-bounds", bound_ok, "similarity outside [-1, 1]")?;

    // End-to-end gradient checks on random small shapes.
    let mut worst_overall: f64 = 0.0;
    for trial in 0..args.trials {
        let h = rng.gen_range(1..=4);
        let w = rng.gen_range(1..=4);
        let c = rng.gen_range(2..=6);
        let d = rng.gen_range(2..=6);
        let k = rng.gen_range(1..=5);
        let n = rng.gen_range(2..=4);
        let bank = TextBank::pseudo(
            (0..k).map(|i| format!("t{i}")).collect(),
            d,
            args.seed ^ (trial as u64) << 8,
        )?;
        let fmap = FeatureMap::new(
            h,
            w,
            c,
            (0..h * w * c).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        )?;
        let weights = FusionWeights::new(
            (0..c * d).map(|_| rng.gen_range(-1.5..1.5)).collect(),
            c,
            d,
            (0..(k + c) * n).map(|_| rng.gen_range(-1.5..1.5)).collect(),
            k + c,
            n,
        )?;
        let mut y = vec![0.0; h * w * n];
        for p in 0..h * w {
            if rng.gen_bool(0.9) {
                y[p * n + rng.gen_range(0..n)] = 1.0;
            }
        }
        let onehot = FeatureMap::new(h, w, n, y)?;
        let (out, grads) = forward_backward(&fmap, &bank, &weights, &onehot, LossReduction::Sum)?;
        // Probability rows must sum to 1.
        for p in 0..h * w {
            let s: f64 = out.probs.pixel(p).iter().sum();
            if (s - 1.0).abs() > 1e-12 {
                bail!("check prob-rows failed: pixel row sums to {s}");
            }
        }
        let eps = 1e-6;
        let loss_at = |ws: &FusionWeights| -> Result<f64> {
            Ok(
                forward_backward(&fmap, &bank, ws, &onehot, LossReduction::Sum)?
                    .0
                    .loss,
            )
        };
        let mut worst: f64 = 0.0;
        for i in 0..weights.align.len() {
            let mut plus = weights.clone();
            plus.align[i] += eps;
            let mut minus = weights.clone();
            minus.align[i] -= eps;
            let fd = (loss_at(&plus)? - loss_at(&minus)?) / (2.0 * eps);
            let a = grads.d_align[i];
            worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1.0));
        }
        for i in 0..weights.logit.len() {
            let mut plus = weights.clone();
            plus.logit[i] += eps;
            let mut minus = weights.clone();
            minus.logit[i] -= eps;
            let fd = (loss_at(&plus)? - loss_at(&minus)?) / (2.0 * eps);
            let a = grads.d_logit[i];
            worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1.0));
        }
        worst_overall = worst_overall.max(worst);
        if worst > 1e-5 {
            bail!("check gradients failed: trial {trial} rel err {worst:.3e} > 1e-5");
        }
    }
    println!(
        "ok gradients ({} trials, worst rel err {worst_overall:.3e})",
        args.trials
    );
    println!("ok prob-rows");
    Ok(())
}
