//! Shared fixtures for the benchmarks in `benches/`.

use hggdp::phantom::{generate_phantom, PhantomSpec};
use hggdp::ComplexImage;

/// A deterministic `size`-square phantom.
pub fn phantom(size: usize) -> ComplexImage {
    generate_phantom(&PhantomSpec { size, seed: 5, ..Default::default() }).expect("valid phantom spec")
}
