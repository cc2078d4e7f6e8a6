use nalgebra::{Complex, ComplexField};

/// Field of the discretized one-photon space.
///
/// Real arithmetic is the default everywhere; `Complex<f64>` is supported so
/// that the anti-linear involution `J` can be exercised on genuinely complex
/// inputs.
pub trait Scalar: ComplexField<RealField = f64> + Copy {
    /// Tag written into serialized operators.
    const KIND: &'static str;

    fn to_json(self) -> serde_json::Value;
    fn from_json(value: &serde_json::Value) -> Option<Self>;

    fn write_le(self, out: &mut Vec<u8>);
    /// Number of bytes consumed by [`Scalar::read_le`].
    const WIDTH: usize;
    fn read_le(bytes: &[u8]) -> Self;
}

impl Scalar for f64 {
    const KIND: &'static str = "real";
    const WIDTH: usize = 8;

    fn to_json(self) -> serde_json::Value {
        serde_json::Value::from(self)
    }

    fn from_json(value: &serde_json::Value) -> Option<Self> {
        value.as_f64()
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"))
    }
}

impl Scalar for Complex<f64> {
    const KIND: &'static str = "complex";
    const WIDTH: usize = 16;

    fn to_json(self) -> serde_json::Value {
        serde_json::json!([self.re, self.im])
    }

    fn from_json(value: &serde_json::Value) -> Option<Self> {
        let pair = value.as_array()?;
        match pair.as_slice() {
            [re, im] => Some(Complex::new(re.as_f64()?, im.as_f64()?)),
            _ => None,
        }
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.re.to_le_bytes());
        out.extend_from_slice(&self.im.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        Complex::new(f64::read_le(&bytes[..8]), f64::read_le(&bytes[8..16]))
    }
}
