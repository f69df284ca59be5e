//! Missing-part point cloud completion.
//!
//! The pipeline predicts only the missing region of a partial scan, merges
//! the prediction with the untouched input, resamples the union and then
//! refines it with a learned displacement field.
//!
//! * [`geometry`]: meshes, surface sampling, sphere splits, IFPS / MDS.
//! * [`metrics`]: Chamfer errors, exact and auction-based EMD.
//! * [`nn`]: dense layers with hand-written backward passes and ADAM.
//! * [`models`]: encoder, MLP / morphing decoders, point refiner.
//! * [`training`]: datasets, the epoch loop and checkpoints.

pub mod geometry;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod seed;
pub mod training;

pub use geometry::{LabeledCloud, Point3, PointCloud, ShapeSample, TriangleMesh};
pub use metrics::{DirectionalErrors, Matching};

/// Keeps freed tensor buffers on the heap instead of returning them to the
/// kernel. Large activations are reallocated on every step, and with the
/// default glibc thresholds each one is a fresh `mmap` that page-faults in.
/// Process-wide; a no-op on other allocators.
pub fn tune_allocator() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    // SAFETY: mallopt only adjusts allocator thresholds.
    unsafe {
        libc::mallopt(libc::M_MMAP_THRESHOLD, 1 << 30);
        libc::mallopt(libc::M_TRIM_THRESHOLD, 1 << 30);
    }
}
