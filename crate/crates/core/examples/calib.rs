// Temporary calibration helper: mean reconstruction DSC of a checkpoint.
use std::path::Path;

use voxshape::eval::autoencoder_dsc;
use voxshape::model::ModelBundle;
use voxshape::shapegen::Dataset;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let bundle = ModelBundle::load(Path::new(&args[1])).unwrap();
    let ds = Dataset::load(Path::new(&args[2])).unwrap();
    let dscs = autoencoder_dsc(
        &bundle.encoder,
        bundle.decoder.as_ref().unwrap(),
        ds.cases(),
        0.5,
    )
    .unwrap();
    let mean = dscs.iter().sum::<f64>() / dscs.len() as f64;
    let min = dscs.iter().cloned().fold(f64::INFINITY, f64::min);
    println!("recon dsc mean {mean:.4} min {min:.4} n {}", dscs.len());
}
