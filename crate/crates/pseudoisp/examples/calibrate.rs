use pseudoisp::camera::{add_raw_noise, develop, render_clean_raw, CameraProfile};
use pseudoisp::isp::SQRT_HALF_PI;
use pseudoisp::tensor::{adam_step, AdamState, Tape, Tensor};
use std::collections::BTreeMap;
use pseudoisp::isp::{train_single, PseudoPair, SharingScope, TrainConfig};
use pseudoisp::metrics;
use pseudoisp::synthesis::{fit_elementwise_map, pack_quadrant, verify_taylor_noise_model};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let patch: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(16);
    let iters1: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(300);
    let iters2: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(150);
    let lr1: f64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(1e-3);
    let batch: usize = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(2);

    let profile = CameraProfile::calibration_profile(7);
    let scenes = vec![pseudoisp::scenes::calibration_ramp(64, 64); 3];
    let mut pairs = Vec::new();
    let mut first = None;
    for (i, scene) in scenes.iter().enumerate() {
        let clean_raw = render_clean_raw(&profile, scene).unwrap();
        let noisy_raw = add_raw_noise(&profile, &clean_raw, 100 + i as u64);
        let clean_srgb = develop(&profile, &clean_raw);
        let noisy_srgb = develop(&profile, &noisy_raw);
        if first.is_none() {
            first = Some((noisy_srgb.clone(), noisy_raw, clean_srgb.clone()));
        }
        pairs.push(PseudoPair::new(format!("img{i}"), noisy_srgb, clean_srgb).unwrap());
    }
    let config = TrainConfig {
        patch_size: patch,
        batch,
        iters_stage1: iters1,
        iters_stage2: iters2,
        lr1,
        lr2: lr1 / 5.0,
        sharing_scope: SharingScope::Set,
        seed: 7,
        camera_anchor: args.get(6).map(|s| s.parse().unwrap()).unwrap_or(0.0),
        ..TrainConfig::default()
    };
    let t0 = std::time::Instant::now();
    let (model, history) = train_single(&pairs, &config, 0).unwrap();
    println!("trained in {:.1}s", t0.elapsed().as_secs_f64());
    for (i, l) in history.iter().enumerate() {
        if i % 25 == 0 || i + 1 == history.len() {
            println!("iter {i:4}: loss {l:.6}");
        }
    }
    let (noisy_srgb, noisy_raw, clean_srgb) = first.unwrap();
    let rt = model
        .pack_to_srgb(&model.srgb_to_pack(&clean_srgb).unwrap())
        .unwrap()
        .clip();
    println!(
        "clean round-trip psnr {:.2} dB",
        metrics::psnr(&rt, &clean_srgb).unwrap()
    );
    let pseudo_pack = model.srgb_to_pack(&noisy_srgb).unwrap();
    let gt_pack = noisy_raw.pack();

    // Pack-space scale diagnostics.
    let clean_pack = model.srgb_to_pack(&clean_srgb).unwrap();
    let sig_on_clean = model.estimate_sigma(&clean_pack).unwrap();
    let n = clean_pack.numel() / 4;
    for c in 0..4 {
        let cp = &clean_pack.data()[c * n..(c + 1) * n];
        let pp = &pseudo_pack.data()[c * n..(c + 1) * n];
        let sg = &sig_on_clean.data()[c * n..(c + 1) * n];
        let mean = cp.iter().sum::<f64>() / n as f64;
        let min = cp.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = cp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let resid = cp
            .iter()
            .zip(pp)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / n as f64;
        let smean = sg.iter().sum::<f64>() / n as f64;
        println!(
            "pack ch{c}: clean mean {mean:.4} range [{min:.4},{max:.4}] mean|noisy-clean| {:.5} sigma_hat mean {smean:.5}",
            resid
        );
    }
    // Oracle scatter ceiling: binned conditional mean of pseudo given gt on
    // quadrant 0, evaluated on quadrant 1 (channel 0).
    {
        let gq0 = pack_quadrant(&gt_pack, 0).unwrap();
        let pq0 = pack_quadrant(&pseudo_pack, 0).unwrap();
        let gq1 = pack_quadrant(&gt_pack, 1).unwrap();
        let pq1 = pack_quadrant(&pseudo_pack, 1).unwrap();
        let n0 = gq0.numel() / 4;
        let gx = &gq0.data()[..n0];
        let py = &pq0.data()[..n0];
        let lo = gx.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = gx.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let nb = 24;
        let mut sum = vec![0.0; nb];
        let mut cnt = vec![0usize; nb];
        for (&g, &p) in gx.iter().zip(py) {
            let b = (((g - lo) / (hi - lo) * nb as f64) as usize).min(nb - 1);
            sum[b] += p;
            cnt[b] += 1;
        }
        let means: Vec<f64> = (0..nb)
            .map(|b| if cnt[b] > 0 { sum[b] / cnt[b] as f64 } else { f64::NAN })
            .collect();
        let eval = |g: f64| -> f64 {
            let t = ((g - lo) / (hi - lo) * nb as f64 - 0.5).clamp(0.0, nb as f64 - 1.0);
            let b0 = t.floor() as usize;
            let b1 = (b0 + 1).min(nb - 1);
            let fr = t - b0 as f64;
            let (m0, m1) = (means[b0], means[b1]);
            if m0.is_nan() { m1 } else if m1.is_nan() { m0 } else { m0 * (1.0 - fr) + m1 * fr }
        };
        let n1 = gq1.numel() / 4;
        let mse: f64 = gq1.data()[..n1]
            .iter()
            .zip(&pq1.data()[..n1])
            .map(|(&g, &p)| (eval(g) - p).powi(2))
            .sum::<f64>()
            / n1 as f64;
        println!("oracle binned-mean psnr (ch0, q0->q1): {:.2} dB", 10.0 * (1.0 / mse).log10());
    }

    let tfit = std::time::Instant::now();
    let map = fit_elementwise_map(
        &pack_quadrant(&gt_pack, 0).unwrap(),
        &pack_quadrant(&pseudo_pack, 0).unwrap(),
        5000,
        7,
    )
    .unwrap();
    println!("map fit in {:.1}s", tfit.elapsed().as_secs_f64());
    for bi in 0..5 {
        let u = 0.1 + 0.8 * bi as f64 / 4.0;
        let x = map.eval_channel(0, u).unwrap();
        println!("  f(ch0, u={u:.1}) = {x:.4}");
    }

    // Empirical conditional target vs sigma_hat, binned by clean pack value
    // (channel 0 only).
    {
        let xp = model.srgb_to_pack(&clean_srgb).unwrap();
        let yp = model.srgb_to_pack(&noisy_srgb).unwrap();
        let sg = model.estimate_sigma(&xp).unwrap();
        let n = xp.numel() / 4;
        let xs = &xp.data()[..n];
        let ys = &yp.data()[..n];
        let ss = &sg.data()[..n];
        let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let nb = 8;
        let mut tsum = vec![0.0; nb];
        let mut ssum = vec![0.0; nb];
        let mut cnt = vec![0usize; nb];
        for i in 0..n {
            let b = (((xs[i] - lo) / (hi - lo) * nb as f64) as usize).min(nb - 1);
            tsum[b] += SQRT_HALF_PI * (ys[i] - xs[i]).abs();
            ssum[b] += ss[i];
            cnt[b] += 1;
        }
        for b in 0..nb {
            if cnt[b] > 0 {
                println!(
                    "  bin x~{:.3}: target {:.4} sigma_hat {:.4} (n={})",
                    lo + (hi - lo) * (b as f64 + 0.5) / nb as f64,
                    tsum[b] / cnt[b] as f64,
                    ssum[b] / cnt[b] as f64,
                    cnt[b]
                );
            }
        }
    }

    // Isolated noise-net regression with the ISP frozen: does sigma_hat
    // reach the folded-normal target at all?
    {
        let xp = model.srgb_to_pack(&clean_srgb).unwrap();
        let yp = model.srgb_to_pack(&noisy_srgb).unwrap();
        let tgt: Vec<f64> = yp
            .data()
            .iter()
            .zip(xp.data())
            .map(|(a, b)| SQRT_HALF_PI * (a - b).abs())
            .collect();
        let tgt_t = Tensor::new(xp.shape().to_vec(), tgt).unwrap();
        let mut noise = model.noise_net.clone();
        let mut st = AdamState::new(1e-3);
        for it in 0..400 {
            let mut tape = Tape::new();
            let vals: BTreeMap<String, pseudoisp::tensor::Val> = noise
                .iter()
                .map(|(k, t)| (k.clone(), tape.leaf(t)))
                .collect();
            let xin = tape.leaf(&xp.clone().set_requires_grad(false));
            let tin = tape.leaf(&tgt_t.clone().set_requires_grad(false));
            let sig = model.sigma_val(&mut tape, &vals, xin).unwrap();
            let loss = tape.mse(sig, tin).unwrap();
            let grads = tape.backward(loss).unwrap();
            for (name, t) in noise.iter_mut() {
                t.zero_grad();
                if let Some(g) = grads.get(vals[name]) {
                    t.accumulate_grad(g).unwrap();
                }
            }
            adam_step(&mut noise, &mut st).unwrap();
            if it % 100 == 0 || it == 399 {
                let mut t2 = Tape::new();
                let v2: BTreeMap<String, pseudoisp::tensor::Val> = noise
                    .iter()
                    .map(|(k, t)| (k.clone(), t2.leaf(t)))
                    .collect();
                let x2 = t2.leaf(&xp.clone().set_requires_grad(false));
                let s2 = model.sigma_val(&mut t2, &v2, x2).unwrap();
                let tin2 = t2.leaf(&tgt_t.clone().set_requires_grad(false));
                let l2 = t2.mse(s2, tin2).unwrap();
                let sd = t2.value(s2);
                let mean = sd.iter().sum::<f64>() / sd.len() as f64;
                println!(
                    "  iso iter {it:3}: loss {:.6} sigma_hat mean {mean:.5}",
                    t2.value(l2)[0]
                );
            }
        }
    }
    let rep = verify_taylor_noise_model(&profile, &map, &model, &noisy_srgb, &noisy_raw).unwrap();
    println!(
        "f fit {:.2} dB, roundtrip {:.2} dB, srgb {:.2} dB, median rel {:.4}",
        rep.psnr_f_fit_db, rep.psnr_f_roundtrip_db, rep.psnr_srgb_db, rep.median_rel_err
    );
    let worst = rep.bins.iter().map(|b| b.rel_err).fold(0.0f64, f64::max);
    println!("worst bin rel err {worst:.4}");
    for b in rep.bins.iter().take(9) {
        println!(
            "  ch{} u={:.2}: taylor {:.5} model {:.5} rel {:.3}",
            b.channel, b.intensity, b.sigma_taylor, b.sigma_model, b.rel_err
        );
    }
}
