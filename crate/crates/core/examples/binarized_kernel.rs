//! Trains a single binarized 3x3 convolution to imitate a random
//! full-precision one, using the amplitude/direction gradients directly.
//!
//! cargo run --example binarized_kernel

use bnas::binarized::{BinarizeMode, BinarizedKernel};
use bnas::tensor::{conv2d, conv2d_backward, ConvSpec, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn main() -> bnas::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let spec = ConvSpec::new(1, 1);
    let teacher = random([4, 3, 3, 3], &mut rng).map(|w| 0.5 * w.signum());
    let input = random([8, 3, 6, 6], &mut rng);
    let target = conv2d(&input, &teacher, spec)?;

    for mode in [BinarizeMode::Xnor, BinarizeMode::Pcnn] {
        let mut kernel = BinarizedKernel::new(random([4, 3, 3, 3], &mut rng).map(|w| 0.3 * w), mode, 1e-4)?;
        kernel.eta1 = 2.0;
        kernel.eta2 = 0.2;
        println!("{mode:?}: A_hat starts at {:.4}", kernel.a_hat());
        for step in 0..=200 {
            let xhat = kernel.binarize()?;
            let out = conv2d(&input, &xhat, spec)?;
            let diff = Tensor::from_vec(
                out.shape(),
                out.data().iter().zip(target.data()).map(|(a, b)| a - b).collect(),
            )?;
            let n = diff.len() as f32;
            let loss = diff.data().iter().map(|d| d * d).sum::<f32>() / n + kernel.amplitude_loss();
            let grad_out = diff.map(|d| 2.0 * d / n);
            let (_, grad_xhat) = conv2d_backward(&input, &xhat, &grad_out, spec)?;
            let dx = kernel.grad_kernel(&grad_xhat)?;
            let da = kernel.grad_amplitude(&grad_xhat)?;
            kernel.update_params(&dx, &da)?;
            if step % 50 == 0 {
                let agree = kernel
                    .direction()
                    .data()
                    .iter()
                    .zip(teacher.data())
                    .filter(|(a, b)| a.signum() == b.signum())
                    .count();
                println!(
                    "  step {step:2}  loss {loss:.4}  A_hat {:.4}  signs matching teacher {agree}/108",
                    kernel.a_hat()
                );
            }
        }
    }
    Ok(())
}
