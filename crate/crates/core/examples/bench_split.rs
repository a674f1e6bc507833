// temporary micro-profile: scatter vs correlation cost at the hot shape
use voxshape::rng::SeededRng;
use voxshape::tensor::{conv3d_backward, deconv3d_forward, ConvSpec, Tensor};

fn main() {
    let mut rng = SeededRng::new(99);
    let spec = ConvSpec::new(8, 8, [3, 3, 3], 1, 1).unwrap();
    let x = Tensor::uniform(&[8, 32, 32, 32], 1.0, &mut rng);
    let w = Tensor::uniform(&spec.conv_weight_dims(), 0.1, &mut rng);
    let wt = w.clone().reshape(spec.deconv_weight_dims()).unwrap();
    let go = Tensor::uniform(&[8, 32, 32, 32], 1.0, &mut rng);
    let bias = vec![0.0; 8];
    let reps = 20;
    let mut sink = 0.0;
    let t = std::time::Instant::now();
    for _ in 0..reps { sink += deconv3d_forward(&go, &wt, &bias, &spec).unwrap().data()[0]; }
    let scatter_ms = t.elapsed().as_secs_f64() / reps as f64 * 1e3;
    let t = std::time::Instant::now();
    for _ in 0..reps { let (di, _, _) = conv3d_backward(&x, &w, &go, &spec).unwrap(); sink += di.data()[0]; }
    let bwd_ms = t.elapsed().as_secs_f64() / reps as f64 * 1e3;
    println!("scatter-only {scatter_ms:.1} ms, full bwd {bwd_ms:.1} ms, correlation+sums {:.1} ms [{sink}]", bwd_ms - scatter_ms);
}
