fn main() {
    // OpenBLAS ships the full LAPACK symbol set on this platform.
    println!("cargo:rustc-link-lib=dylib=openblas");
}
