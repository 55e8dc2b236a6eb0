fn main() {
    #[cfg(feature = "capi-header")]
    {
        let crate_dir = std::env::var("CARGO_MANIFEST_DIR").unwrap();
        let config = cbindgen::Config::from_file(
            std::path::Path::new(&crate_dir).join("cbindgen.toml"),
        )
        .expect("cbindgen.toml");
        cbindgen::Builder::new()
            .with_config(config)
            .with_crate(&crate_dir)
            .generate()
            .expect("Unable to generate bindings")
            .write_to_file(std::path::Path::new(&crate_dir).join("include/epitrace.h"));
    }
}
