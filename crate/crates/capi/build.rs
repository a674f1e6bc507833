use std::path::PathBuf;

fn main() {
    let crate_dir = PathBuf::from(std::env::var("CARGO_MANIFEST_DIR").unwrap());
    let header = crate_dir.join("include").join("voxshape.h");

    let config = cbindgen::Config {
        language: cbindgen::Language::C,
        include_guard: Some("VOXSHAPE_H".into()),
        cpp_compat: true,
        documentation: true,
        header: Some("/* C interface to the voxshape volumetric shape classifier. */".into()),
        enumeration: cbindgen::EnumConfig {
            // C has one namespace for enum constants; VsStatus_Ok, not Ok.
            prefix_with_name: true,
            ..Default::default()
        },
        ..Default::default()
    };

    match cbindgen::Builder::new()
        .with_crate(&crate_dir)
        .with_config(config)
        .generate()
    {
        Ok(bindings) => {
            bindings.write_to_file(header);
        }
        // Parse errors must not mask the underlying rustc diagnostics.
        Err(e) => println!("cargo:warning=header generation skipped: {e}"),
    }

    println!("cargo:rerun-if-changed=src/lib.rs");
}
