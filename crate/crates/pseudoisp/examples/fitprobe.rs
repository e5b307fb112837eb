//! Fast test bed for the element-wise map fit: builds a pseudo pack directly
//! from developed sRGB at Bayer sites (no ISP training), where the true map
//! is the camera tone curve, then checks fit PSNR and slope fidelity.

use pseudoisp::camera::{add_raw_noise, develop, render_clean_raw, CameraProfile};
use pseudoisp::synthesis::PACK_COLORS;
use pseudoisp::synthesis::{fit_elementwise_map, pack_quadrant, psnr_tensor};
use pseudoisp::tensor::Tensor;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let iters: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(5000);

    let profile = CameraProfile::calibration_profile(7);
    let scene = pseudoisp::scenes::calibration_ramp(64, 64);
    let clean_raw = render_clean_raw(&profile, &scene).unwrap();
    let noisy_raw = add_raw_noise(&profile, &clean_raw, 100);
    let noisy_srgb = develop(&profile, &noisy_raw);

    // Identity-skeleton pack: sRGB channel PACK_COLORS[q] sampled at the
    // Bayer site of pack channel q.
    let (h, w) = (noisy_srgb.height() / 2, noisy_srgb.width() / 2);
    let mut data = vec![0.0; 4 * h * w];
    for q in 0..4 {
        let (dy, dx) = (q / 2, q % 2);
        let c = PACK_COLORS[q];
        for y in 0..h {
            for x in 0..w {
                data[q * h * w + y * w + x] = noisy_srgb.get(2 * y + dy, 2 * x + dx, c);
            }
        }
    }
    let pseudo_pack = Tensor::new(vec![1, 4, h, w], data).unwrap();
    let gt_pack = noisy_raw.pack();

    let t0 = std::time::Instant::now();
    let map = fit_elementwise_map(
        &pack_quadrant(&gt_pack, 0).unwrap(),
        &pack_quadrant(&pseudo_pack, 0).unwrap(),
        iters,
        7,
    )
    .unwrap();
    println!("fit in {:.1}s", t0.elapsed().as_secs_f64());

    let mut psnr_fit = f64::INFINITY;
    let mut psnr_rt = f64::INFINITY;
    for q in [1usize, 2] {
        let gq = pack_quadrant(&gt_pack, q).unwrap();
        let pq = pack_quadrant(&pseudo_pack, q).unwrap();
        let mapped = map.map(&gq).unwrap();
        psnr_fit = psnr_fit.min(psnr_tensor(&mapped, &pq).unwrap());
        let back = map.unmap(&mapped).unwrap();
        psnr_rt = psnr_rt.min(psnr_tensor(&back, &gq).unwrap());
    }
    println!("fit {psnr_fit:.2} dB  roundtrip {psnr_rt:.2} dB");

    // Residual RMSE by ground-truth-value decile (channel 0, quadrant 1).
    {
        let gq = pack_quadrant(&gt_pack, 1).unwrap();
        let pq = pack_quadrant(&pseudo_pack, 1).unwrap();
        let mapped = map.map(&gq).unwrap();
        let n = gq.numel() / 4;
        let xs = &gq.data()[..n];
        let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut se = [0.0; 10];
        let mut cnt = [0usize; 10];
        for i in 0..n {
            let b = (((xs[i] - lo) / (hi - lo) * 10.0) as usize).min(9);
            let d = mapped.data()[i] - pq.data()[i];
            se[b] += d * d;
            cnt[b] += 1;
        }
        for b in 0..10 {
            if cnt[b] > 0 {
                println!(
                    "  decile {b} (x~{:.2}): rmse {:.5} (n={})",
                    lo + (hi - lo) * (b as f64 + 0.5) / 10.0,
                    (se[b] / cnt[b] as f64).sqrt(),
                    cnt[b]
                );
            }
        }
    }

    // Slope fidelity: true map is tone(u), so taylor = tone'(u) * sigma(u).
    let mut worst: f64 = 0.0;
    for bi in 0..9 {
        let u = 0.1 + 0.8 * bi as f64 / 8.0;
        let fp = map.smoothed_derivative_channel(0, u, 0.04).unwrap();
        let g = profile.noise_sigma(0, u);
        let taylor = fp.abs() * g;
        let eps = 1e-4;
        let tp = (profile.tone(0, u + eps) - profile.tone(0, u - eps)) / (2.0 * eps);
        let truth = tp * g;
        let rel = (taylor - truth).abs() / truth;
        worst = worst.max(rel);
        println!(
            "u={u:.1}: f'={fp:.4} tone'={tp:.4} taylor={taylor:.5} true={truth:.5} rel {rel:.3}"
        );
    }
    println!("worst slope rel err {worst:.3}");
}
