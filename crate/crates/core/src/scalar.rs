use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst};

/// Scalar used by the formula layer.
pub trait Real: Float + FloatConst + Debug + Display + Default + Send + Sync + 'static {
    fn lit(x: f64) -> Self {
        Self::from(x).expect("literal representable in scalar type")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl<T> Real for T where T: Float + FloatConst + Debug + Display + Default + Send + Sync + 'static {}
