//! Dense row-major f64 tensors and their binary encoding.
//!
//! Binary layout (all little-endian):
//!
//! ```text
//! b"SLCT" | rank: u32 | extents: rank x u64 | payload: numel x f64
//! ```
//!
//! Records can be concatenated; [`decode`] reports how many bytes it consumed.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SLCT";

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::ShapeMismatch {
                op: "tensor",
                axis: "numel",
                expected: numel,
                found: data.len(),
            });
        }
        Ok(Self {
            shape,
            data,
            grad: None,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f64) -> Self {
        let shape = shape.into();
        let numel = shape.iter().product();
        Self {
            shape,
            data: vec![value; numel],
            grad: None,
            requires_grad: false,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self::full(Vec::new(), value)
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> f64) -> Self {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        Self {
            shape,
            data: (0..numel).map(&mut f).collect(),
            grad: None,
            requires_grad: false,
        }
    }

    pub fn with_requires_grad(mut self, flag: bool) -> Self {
        self.requires_grad = flag;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, flag: bool) {
        self.requires_grad = flag;
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut [f64]> {
        self.grad.as_deref_mut()
    }

    /// Adds `g` into the gradient buffer, allocating it on first use.
    pub fn accumulate_grad(&mut self, g: &[f64]) -> Result<()> {
        if g.len() != self.data.len() {
            return Err(Error::ShapeMismatch {
                op: "accumulate_grad",
                axis: "numel",
                expected: self.data.len(),
                found: g.len(),
            });
        }
        match &mut self.grad {
            Some(buf) => buf.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => self.grad = Some(g.to_vec()),
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// The value alone: same shape and data, no gradient.
    pub fn detached(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.clone(),
            grad: None,
            requires_grad: false,
        }
    }

    pub fn reshape(mut self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                axis: "numel",
                expected: self.data.len(),
                found: numel,
            });
        }
        self.shape = shape;
        if let Some(g) = &self.grad {
            debug_assert_eq!(g.len(), numel);
        }
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Interprets the tensor as `[N, C, H, W]`.
    pub fn dims4(&self, op: &'static str) -> Result<[usize; 4]> {
        match self.shape[..] {
            [n, c, h, w] => Ok([n, c, h, w]),
            _ => Err(Error::ShapeMismatch {
                op,
                axis: "rank",
                expected: 4,
                found: self.shape.len(),
            }),
        }
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::ShapeMismatch {
                op: "item",
                axis: "numel",
                expected: 1,
                found: self.data.len(),
            });
        }
        Ok(self.data[0])
    }
}

/// Appends the binary encoding of `t` to `out`.
pub fn encode_into(t: &Tensor, out: &mut Vec<u8>) {
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
    for &e in &t.shape {
        out.extend_from_slice(&(e as u64).to_le_bytes());
    }
    out.reserve(t.data.len() * 8);
    for v in &t.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::new();
    encode_into(t, &mut out);
    out
}

/// Decodes one record from the front of `bytes`; returns the tensor and the
/// number of bytes consumed. `base` is added to reported error offsets.
pub fn decode(bytes: &[u8], base: usize) -> Result<(Tensor, usize)> {
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize, what: &str| -> Result<&[u8]> {
        if bytes.len() < *pos + n {
            return Err(Error::Decode {
                offset: base + *pos,
                msg: format!("truncated {what}: need {n} bytes, have {}", bytes.len() - *pos),
            });
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    let magic = take(&mut pos, 4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Decode {
            offset: base,
            msg: format!("bad magic {magic:?}"),
        });
    }
    let rank = u32::from_le_bytes(take(&mut pos, 4, "rank")?.try_into().unwrap()) as usize;
    if rank > 16 {
        return Err(Error::Decode {
            offset: base + 4,
            msg: format!("implausible rank {rank}"),
        });
    }
    let mut shape = Vec::with_capacity(rank);
    let mut numel: usize = 1;
    for _ in 0..rank {
        let at = pos;
        let e = u64::from_le_bytes(take(&mut pos, 8, "extent")?.try_into().unwrap());
        let e = usize::try_from(e).map_err(|_| Error::Decode {
            offset: base + at,
            msg: format!("extent {e} overflows usize"),
        })?;
        numel = numel.checked_mul(e).ok_or(Error::Decode {
            offset: base + at,
            msg: "element count overflows".into(),
        })?;
        shape.push(e);
    }
    let payload_len = numel.checked_mul(8).ok_or(Error::Decode {
        offset: base + pos,
        msg: "payload size overflows".into(),
    })?;
    let payload = take(&mut pos, payload_len, "payload")?;
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((Tensor::new(shape, data)?, pos))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_wrong_length() {
        assert!(Tensor::new([2, 3], vec![0.0; 5]).is_err());
        assert_eq!(Tensor::new([2, 3], vec![0.0; 6]).unwrap().numel(), 6);
    }

    #[test]
    fn scalar_has_rank_zero() {
        let s = Tensor::scalar(2.5);
        assert_eq!(s.rank(), 0);
        assert_eq!(s.item().unwrap(), 2.5);
    }

    #[test]
    fn accumulate_grad_adds() {
        let mut t = Tensor::zeros([3]);
        t.accumulate_grad(&[1.0, 2.0, 3.0]).unwrap();
        t.accumulate_grad(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(t.grad().unwrap(), &[2.0, 4.0, 6.0]);
        assert!(t.accumulate_grad(&[1.0]).is_err());
    }

    #[test]
    fn encoding_layout_is_fixed() {
        let t = Tensor::new([2], vec![1.0, -2.0]).unwrap();
        let b = encode(&t);
        assert_eq!(&b[..4], b"SLCT");
        assert_eq!(&b[4..8], &1u32.to_le_bytes());
        assert_eq!(&b[8..16], &2u64.to_le_bytes());
        assert_eq!(&b[16..24], &1.0f64.to_le_bytes());
        assert_eq!(b.len(), 32);
    }

    #[test]
    fn decode_reports_offsets() {
        let mut bytes = encode(&Tensor::zeros([2, 2]));
        let first_len = bytes.len();
        bytes.extend(encode(&Tensor::scalar(1.0)));
        let (a, used) = decode(&bytes, 0).unwrap();
        assert_eq!(a.shape(), &[2, 2]);
        assert_eq!(used, first_len);
        let (b, _) = decode(&bytes[used..], used).unwrap();
        assert_eq!(b.item().unwrap(), 1.0);

        let err = decode(&bytes[..first_len - 3], 100).unwrap_err();
        match err {
            Error::Decode { offset, .. } => assert_eq!(offset, 100 + 24),
            e => panic!("unexpected {e:?}"),
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad, 7), Err(Error::Decode { offset: 7, .. })));
    }

    proptest::proptest! {
        #[test]
        fn encode_decode_roundtrip(shape in proptest::collection::vec(0usize..4, 0..4), seed in 0u64..1000) {
            let numel: usize = shape.iter().product();
            let data: Vec<f64> = (0..numel).map(|i| (i as f64 + seed as f64) * 0.37 - 1.0).collect();
            let t = Tensor::new(shape, data).unwrap();
            let (back, used) = decode(&encode(&t), 0).unwrap();
            proptest::prop_assert_eq!(used, encode(&t).len());
            proptest::prop_assert_eq!(back, t);
        }
    }
}
