//! Scalar trait bound for metric computations, generic over f32/f64.

/// Floating-point scalar used by the energy and statistics kernels.
pub trait Real: num_traits::Float + num_traits::FromPrimitive + std::fmt::Debug {}

impl<T: num_traits::Float + num_traits::FromPrimitive + std::fmt::Debug> Real for T {}
