//! Fourier-domain operators for single-coil Cartesian MRI.
//!
//! Spectra are stored with DC at index `(0, 0)` ("corner" layout). Masks are
//! generated and exported in the DC-centered view; [`fftshift`] and
//! [`ifftshift`] convert between the two.

mod consistency;
mod fft;
mod grid;
mod mask;

pub use consistency::{data_consistency, data_consistency_spectrum, undersample, zero_filled};
pub use fft::{dft2, idft2, Dft2Plan};
pub use grid::{fftshift, ifftshift, ComplexImage, KSpaceData};
pub use mask::{make_mask, MaskKind, MaskParams, SamplingMask};
