use rand::Rng;
use rand_distr::StandardNormal;

/// Floating scalar the numerics are generic over: f32 or f64.
///
/// `nalgebra::RealField` supplies the elementary functions and linear-algebra
/// support, `rustfft::FftNum` admits the type into FFT plans. `of` converts
/// f64 literals (tolerances, closed-form constants) into `T`.
pub trait Scalar: nalgebra::RealField + rustfft::FftNum + Default {
    fn of(value: f64) -> Self;
    fn to_f64(self) -> f64;
    /// One standard normal draw from `rng`.
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;
}

impl Scalar for f64 {
    #[inline]
    fn of(value: f64) -> Self {
        value
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline]
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.sample(StandardNormal)
    }
}

impl Scalar for f32 {
    #[inline]
    fn of(value: f64) -> Self {
        value as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.sample(StandardNormal)
    }
}
