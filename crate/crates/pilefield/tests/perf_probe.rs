//! Quick throughput probe (ignored by default).
use pilefield::net::{PadMode, TapeMode, Tensor, UNet};

#[test]
#[ignore]
fn probe_unet_throughput() {
    let net = UNet::<f32>::new(PadMode::Zero, 0);
    for batch in [1usize, 8, 16] {
        let mut x = Tensor::zeros(batch, 3, 64, 64);
        for (i, v) in x.data.iter_mut().enumerate() {
            *v = (i % 17) as f32 * 0.05;
        }
        let start = std::time::Instant::now();
        let iters = 40;
        let mut sink = 0usize;
        for _ in 0..iters {
            let (out, tape) = net.forward_batch(&x, TapeMode::InputGradOnly);
            let up = out.clone();
            let (gin, _) = net.vjp_batch(&tape, &up, false);
            sink += gin.data.len();
        }
        let dt = start.elapsed().as_secs_f64();
        let per = dt / (iters * batch) as f64;
        println!(
            "batch {batch}: {:.2} ms/sample fwd+ivjp, ~{:.1} GF/s  ({sink})",
            per * 1e3,
            57.5e-3 / per
        );
    }
}
